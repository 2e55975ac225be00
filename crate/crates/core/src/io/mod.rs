//! On-disk formats: tensors, annotations, banks, models, proposals, tubes,
//! configuration and the feature-map directory layout.

mod annotations;
mod config;
pub mod dataset;
mod model_file;
mod proposals_csv;
pub mod tensor;
mod tubes_json;

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use annotations::{AnnotationFile, ImageAnnotation, VideoAnnotation};
pub use config::PipelineConfig;
pub use dataset::{DatasetManifest, ManifestEntry};
pub use model_file::{read_model, read_model_dir, write_model, ModelFile};
pub use proposals_csv::{read_proposals_csv, write_proposals_csv, ProposalRow};
pub use tensor::{read_tensor, write_tensor};
pub use tubes_json::{TubeRecord, TubesFile, VideoTubes};

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)
        .map_err(|e| Error::format(path, e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Rows of `(axis, value)` with an `axis,value` header.
pub fn write_curve_csv(path: &Path, points: &[(f64, f64)]) -> Result<()> {
    let mut out = String::from("axis,value\n");
    for (a, v) in points {
        out.push_str(&format!("{a},{v}\n"));
    }
    write_atomic(path, out.as_bytes())
}
