use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::io::{read_json, write_json};
use crate::tubes::GroundTruthTube;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoAnnotation {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub frames: usize,
    /// One entry per actor, each with a box or `null` per frame.
    pub tubes: Vec<GroundTruthTube>,
}

/// Ground truth for a set of images and videos.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationFile {
    #[serde(default)]
    pub images: Vec<ImageAnnotation>,
    #[serde(default)]
    pub videos: Vec<VideoAnnotation>,
}

fn check_inside(b: &BBox, w: u32, h: u32, what: &str) -> std::result::Result<(), String> {
    const SLACK: f64 = 1e-6;
    if b.x0() < -SLACK || b.y0() < -SLACK || b.x1() > w as f64 + SLACK || b.y1() > h as f64 + SLACK {
        return Err(format!("{what}: box {:?} outside {w}x{h}", b.corners()));
    }
    Ok(())
}

impl AnnotationFile {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for img in &self.images {
            for b in &img.boxes {
                check_inside(b, img.width, img.height, &img.id)?;
            }
        }
        for v in &self.videos {
            for tube in &v.tubes {
                if tube.boxes().len() != v.frames {
                    return Err(format!(
                        "{}: tube has {} frames, video has {}",
                        v.id,
                        tube.boxes().len(),
                        v.frames
                    ));
                }
                for b in tube.boxes().iter().flatten() {
                    check_inside(b, v.width, v.height, &v.id)?;
                }
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file: AnnotationFile = read_json(path)?;
        file.validate().map_err(|d| Error::format(path, d))?;
        Ok(file)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn image(&self, id: &str) -> Option<&ImageAnnotation> {
        self.images.iter().find(|i| i.id == id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates() {
        let text = r#"{
            "images": [{"id": "a", "width": 100, "height": 80, "boxes": [[1, 2, 30, 40]]}],
            "videos": [{"id": "v", "width": 64, "height": 48, "frames": 3,
                        "tubes": [[[0, 0, 10, 10], null, [2, 2, 12, 12]]]}]
        }"#;
        let file: AnnotationFile = serde_json::from_str(text).unwrap();
        assert!(file.validate().is_ok());
        assert_eq!(file.image("a").unwrap().boxes[0].x1(), 30.0);
        assert!(file.videos[0].tubes[0].boxes()[1].is_none());

        let outside = r#"{"images": [{"id": "a", "width": 10, "height": 10, "boxes": [[1, 2, 30, 4]]}]}"#;
        let file: AnnotationFile = serde_json::from_str(outside).unwrap();
        assert!(file.validate().is_err());

        let degenerate = r#"{"images": [{"id": "a", "width": 10, "height": 10, "boxes": [[5, 2, 3, 4]]}]}"#;
        assert!(serde_json::from_str::<AnnotationFile>(degenerate).is_err());
    }
}
