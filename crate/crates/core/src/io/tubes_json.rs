use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::io::{read_json, write_json};
use crate::tubes::Tube;

/// A tube as stored on disk: `[t, x0, y0, x1, y1]` per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeRecord {
    pub path_score: f64,
    pub boxes: Vec<[f64; 5]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoTubes {
    pub video_id: String,
    pub tubes: Vec<TubeRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TubesFile {
    pub videos: Vec<VideoTubes>,
}

impl TubeRecord {
    /// `frames[i]` is the frame index of the tube's i-th box.
    pub fn from_tube(tube: &Tube, frames: &[usize]) -> Self {
        TubeRecord {
            path_score: tube.path_score,
            boxes: tube
                .boxes
                .iter()
                .zip(frames)
                .map(|(b, &t)| [t as f64, b.x0(), b.y0(), b.x1(), b.y1()])
                .collect(),
        }
    }

    /// Rebuilds a full-length tube over `n_frames` frames. Frames must be
    /// contiguous from 0.
    pub fn to_tube(&self, n_frames: usize) -> std::result::Result<Tube, String> {
        if self.boxes.len() != n_frames {
            return Err(format!("tube has {} boxes for {n_frames} frames", self.boxes.len()));
        }
        let mut boxes = Vec::with_capacity(n_frames);
        for (i, r) in self.boxes.iter().enumerate() {
            if r[0] != i as f64 {
                return Err(format!("frame {} out of order (expected {i})", r[0]));
            }
            boxes.push(BBox::new(r[1], r[2], r[3], r[4]).map_err(|e| e.to_string())?);
        }
        Ok(Tube {
            boxes,
            indices: vec![0; n_frames],
            path_score: self.path_score,
        })
    }
}

impl TubesFile {
    pub fn read(path: &Path) -> Result<Self> {
        let file: TubesFile = read_json(path)?;
        for v in &file.videos {
            for t in &v.tubes {
                if !t.path_score.is_finite() {
                    return Err(Error::format(path, format!("{}: non-finite path score", v.video_id)));
                }
            }
        }
        Ok(file)
    }

    /// Videos sorted by id for stable output.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut sorted = self.clone();
        sorted.videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
        write_json(path, &sorted)
    }
}
