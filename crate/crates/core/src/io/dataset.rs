//! Feature-map directory layout.
//!
//! `DIR/manifest.json` lists images and scales. The maps of image `id` at
//! scale `k` live in `DIR/<id>/<tag>_s<k>.fmap`, with edge fields (if any) in
//! `DIR/<id>/edge_s<k>.fmap`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cascade::{ImageMaps, ScaleMaps, StageLayers};
use crate::error::{Error, Result};
use crate::featmap::FeatureMap;
use crate::io::{read_json, read_tensor, write_json, write_tensor};
use crate::refine::EdgeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Short-side length of each scale.
    pub scales: Vec<u32>,
    #[serde(default)]
    pub layers: StageLayers,
    pub images: Vec<ManifestEntry>,
}

pub const MANIFEST: &str = "manifest.json";

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let m: DatasetManifest = read_json(&path)?;
        if m.scales.is_empty() {
            return Err(Error::format(&path, "no scales"));
        }
        Ok(m)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join(MANIFEST), self)
    }

    pub fn map_path(dir: &Path, id: &str, tag: &str, scale: usize) -> PathBuf {
        dir.join(id).join(format!("{tag}_s{scale}.fmap"))
    }

    pub fn edge_path(dir: &Path, id: &str, scale: usize) -> PathBuf {
        Self::map_path(dir, id, "edge", scale)
    }

    /// Loads every scale of one image. Missing fine or edge files are left
    /// as `None`; missing coarse or mid files are errors.
    pub fn load_image(&self, dir: &Path, entry: &ManifestEntry) -> Result<ImageMaps> {
        let mut scales = Vec::with_capacity(self.scales.len());
        for k in 0..self.scales.len() {
            let coarse = read_tensor(&Self::map_path(dir, &entry.id, &self.layers.coarse, k))?;
            let mid = read_tensor(&Self::map_path(dir, &entry.id, &self.layers.mid, k))?;
            let fine_path = Self::map_path(dir, &entry.id, &self.layers.fine, k);
            let fine = if fine_path.exists() { Some(read_tensor(&fine_path)?) } else { None };
            let edge_path = Self::edge_path(dir, &entry.id, k);
            let edges = if edge_path.exists() {
                let fm = read_tensor(&edge_path)?;
                Some(EdgeMap::from_feature_map(&fm).map_err(|e| Error::format(&edge_path, e.to_string()))?)
            } else {
                None
            };
            scales.push(ScaleMaps { coarse, mid, fine, edges });
        }
        Ok(ImageMaps {
            width: entry.width,
            height: entry.height,
            scales,
        })
    }

    /// Writes the maps of one image in the layout above.
    pub fn store_image(&self, dir: &Path, id: &str, image: &ImageMaps) -> Result<()> {
        for (k, s) in image.scales.iter().enumerate() {
            write_tensor(&s.coarse, &Self::map_path(dir, id, &self.layers.coarse, k))?;
            write_tensor(&s.mid, &Self::map_path(dir, id, &self.layers.mid, k))?;
            if let Some(f) = &s.fine {
                write_tensor(f, &Self::map_path(dir, id, &self.layers.fine, k))?;
            }
            if let Some(e) = &s.edges {
                let fm: FeatureMap = e.to_feature_map("edge")?;
                write_tensor(&fm, &Self::edge_path(dir, id, k))?;
            }
        }
        Ok(())
    }

    pub fn entry(&self, id: &str) -> Option<&ManifestEntry> {
        self.images.iter().find(|e| e.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn store_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = DatasetManifest {
            scales: vec![100],
            layers: StageLayers::default(),
            images: vec![ManifestEntry { id: "v/0001".into(), width: 40, height: 30 }],
        };
        let mut data = vec![0.0; 24];
        data[5] = 2.5;
        let coarse = FeatureMap::new(2, 3, 4, data, 0.1, "L5").unwrap();
        let image = ImageMaps {
            width: 40,
            height: 30,
            scales: vec![ScaleMaps {
                coarse,
                mid: FeatureMap::zeros(2, 6, 8, 0.2, "L3").unwrap(),
                fine: None,
                edges: None,
            }],
        };
        manifest.write(dir.path()).unwrap();
        manifest.store_image(dir.path(), "v/0001", &image).unwrap();
        let m = DatasetManifest::read(dir.path()).unwrap();
        let back = m.load_image(dir.path(), &m.images[0]).unwrap();
        assert_eq!(back.scales[0].coarse, image.scales[0].coarse);
        assert!(back.scales[0].fine.is_none());
        assert!(dir.path().join("v/0001/L3_s0.fmap").exists());
    }
}
