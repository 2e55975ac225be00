//! Axis-aligned boxes, overlap and greedy non-maximum suppression.
//!
//! Boxes are half-open `[x0, x1) x [y0, y1)` in real coordinates. The unit is
//! feature-map cells when a box lives on a map and pixels once mapped back to
//! the original image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x0: f64,
    y0: f64,
    x1: f64,
    y1: f64,
}

impl BBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let finite = x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite();
        if !finite || x1 <= x0 || y1 <= y0 {
            return Err(Error::InvalidBox { x0, y0, x1, y1 });
        }
        Ok(BBox { x0, y0, x1, y1 })
    }

    /// Box from a top-left corner and a size, for callers that already hold
    /// positive extents.
    pub fn from_origin(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        BBox::new(x, y, x + w, y + h)
    }

    #[inline]
    pub fn x0(&self) -> f64 {
        self.x0
    }
    #[inline]
    pub fn y0(&self) -> f64 {
        self.y0
    }
    #[inline]
    pub fn x1(&self) -> f64 {
        self.x1
    }
    #[inline]
    pub fn y1(&self) -> f64 {
        self.y1
    }
    #[inline]
    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
    #[inline]
    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
    #[inline]
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1))
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x0, self.y0, self.x1, self.y1]
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        if w <= 0.0 || h <= 0.0 {
            0.0
        } else {
            w * h
        }
    }

    /// Scales x and y coordinates independently.
    pub fn scale_xy(&self, sx: f64, sy: f64) -> Result<BBox> {
        BBox::new(self.x0 * sx, self.y0 * sy, self.x1 * sx, self.y1 * sy)
    }

    /// Clips to `[0, width) x [0, height)`; fails if nothing is left.
    pub fn clip(&self, width: f64, height: f64) -> Result<BBox> {
        BBox::new(
            self.x0.max(0.0),
            self.y0.max(0.0),
            self.x1.min(width),
            self.y1.min(height),
        )
    }

    /// Integer cell corners if every coordinate is (numerically) integral.
    pub fn cell_corners(&self) -> Option<[usize; 4]> {
        let mut out = [0usize; 4];
        for (slot, v) in out.iter_mut().zip(self.corners()) {
            let r = v.round();
            if (v - r).abs() > 1e-9 || r < 0.0 {
                return None;
            }
            *slot = r as usize;
        }
        Some(out)
    }

    /// Rounds every corner to the nearest integer, keeping at least one cell
    /// of extent in each direction.
    pub fn round_to_cells(&self) -> BBox {
        let x0 = self.x0.round();
        let y0 = self.y0.round();
        let x1 = self.x1.round().max(x0 + 1.0);
        let y1 = self.y1.round().max(y0 + 1.0);
        BBox { x0, y0, x1, y1 }
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        BBox::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.corners()
    }
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Suppression thresholds for one evaluation target `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsConfig {
    pub alpha: f64,
    pub beta: f64,
}

impl NmsConfig {
    /// Threshold used inside a single scale: `alpha = beta + 0.05`.
    pub fn within_scale(beta: f64) -> Self {
        NmsConfig {
            alpha: (beta + 0.05).min(1.0),
            beta,
        }
    }

    /// Threshold used when merging scales: `alpha = beta`.
    pub fn across_scales(beta: f64) -> Self {
        NmsConfig { alpha: beta, beta }
    }
}

/// Indices ordered by descending score, ties resolved by lower index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Greedy non-maximum suppression.
///
/// Walks boxes by descending score and keeps a box unless its IoU with an
/// already kept box exceeds `alpha`. Returns kept indices in descending score
/// order.
pub fn nms(boxes: &[BBox], scores: &[f64], alpha: f64) -> Vec<usize> {
    nms_limited(boxes, scores, alpha, usize::MAX)
}

/// [`nms`] that stops once `limit` boxes have been kept. The result is the
/// first `limit` entries of the unlimited run.
pub fn nms_limited(boxes: &[BBox], scores: &[f64], alpha: f64, limit: usize) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len(), "one score per box");
    let mut kept: Vec<usize> = Vec::new();
    if limit == 0 {
        return kept;
    }
    for i in rank_by_score(scores) {
        let b = &boxes[i];
        if kept.iter().all(|&k| iou(&boxes[k], b) <= alpha) {
            kept.push(i);
            if kept.len() >= limit {
                break;
            }
        }
    }
    kept
}

/// Divides all coordinates by `scale_factor`, taking a box on a resized
/// image back to original image coordinates.
pub fn map_to_image(b: &BBox, scale_factor: f64) -> Result<BBox> {
    check_factor(scale_factor)?;
    b.scale_xy(1.0 / scale_factor, 1.0 / scale_factor)
}

/// Inverse of [`map_to_image`].
pub fn map_from_image(b: &BBox, scale_factor: f64) -> Result<BBox> {
    check_factor(scale_factor)?;
    b.scale_xy(scale_factor, scale_factor)
}

fn check_factor(f: f64) -> Result<()> {
    if f.is_finite() && f > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "scale factor must be positive, got {f}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    /// Counts unit pixels covered by integer boxes.
    fn raster_iou(a: [i32; 4], b: [i32; 4]) -> f64 {
        let mut inter = 0;
        let mut union = 0;
        for y in -5..50 {
            for x in -5..50 {
                let ina = x >= a[0] && x < a[2] && y >= a[1] && y < a[3];
                let inb = x >= b[0] && x < b[2] && y >= b[1] && y < b[3];
                inter += (ina && inb) as i32;
                union += (ina || inb) as i32;
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn rejects_degenerate_boxes() {
        assert!(BBox::new(0.0, 0.0, 0.0, 1.0).is_err());
        assert!(BBox::new(0.0, 2.0, 1.0, 1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn iou_examples() {
        let b = bx(1.0, 2.0, 7.0, 9.0);
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(iou(&bx(0.0, 0.0, 10.0, 10.0), &bx(20.0, 20.0, 30.0, 30.0)), 0.0);
        let oracle = raster_iou([0, 0, 10, 10], [5, 5, 15, 15]);
        assert!((oracle - 25.0 / 175.0).abs() < 1e-12);
        let got = iou(&bx(0.0, 0.0, 10.0, 10.0), &bx(5.0, 5.0, 15.0, 15.0));
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn nms_basic_cases() {
        let b = bx(0.0, 0.0, 4.0, 4.0);
        assert_eq!(nms(&[b], &[0.3], 0.5), vec![0]);
        assert_eq!(nms(&[b, b], &[0.8, 0.9], 0.5), vec![1]);
        assert!(nms(&[], &[], 0.5).is_empty());
        // Equal scores: lower index first.
        assert_eq!(nms(&[b, b], &[0.5, 0.5], 0.5), vec![0]);
        assert_eq!(nms(&[b, b, b], &[0.1, 0.2, 0.3], 1.0), vec![2, 1, 0]);
    }

    #[test]
    fn nms_limited_is_prefix() {
        let boxes: Vec<BBox> = (0..20).map(|i| bx(i as f64, 0.0, i as f64 + 3.0, 3.0)).collect();
        let scores: Vec<f64> = (0..20).map(|i| ((i * 7) % 11) as f64).collect();
        let full = nms(&boxes, &scores, 0.3);
        for limit in 0..full.len() + 2 {
            let part = nms_limited(&boxes, &scores, 0.3, limit);
            assert_eq!(part, full[..limit.min(full.len())]);
        }
    }

    #[test]
    fn scaling_examples() {
        let b = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(map_to_image(&b, 1.0).unwrap(), b);
        assert_eq!(map_to_image(&b, 2.0).unwrap(), bx(0.0, 0.0, 5.0, 5.0));
        assert!(map_to_image(&b, 0.0).is_err());
    }

    #[test]
    fn cell_corners_requires_integers() {
        assert_eq!(bx(1.0, 2.0, 3.0, 4.0).cell_corners(), Some([1, 2, 3, 4]));
        assert_eq!(bx(1.5, 2.0, 3.0, 4.0).cell_corners(), None);
        assert_eq!(bx(1.4, 2.6, 1.45, 2.7).round_to_cells(), bx(1.0, 3.0, 2.0, 4.0));
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-50.0..50.0f64, -50.0..50.0f64, 0.1..40.0f64, 0.1..40.0f64)
            .prop_map(|(x, y, w, h)| BBox::from_origin(x, y, w, h).unwrap())
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((0.0..=1.0).contains(&ab));
            if a != b {
                prop_assert!(ab < 1.0);
            }
        }

        #[test]
        fn scaling_round_trip(b in arb_box(), f in 0.05..20.0f64) {
            let back = map_to_image(&map_from_image(&b, f).unwrap(), f).unwrap();
            for (u, v) in back.corners().iter().zip(b.corners()) {
                prop_assert!((u - v).abs() <= 1e-9 * (1.0 + v.abs()));
            }
        }

        #[test]
        fn nms_alpha_one_keeps_everything(boxes in prop::collection::vec(arb_box(), 0..40)) {
            let scores: Vec<f64> = (0..boxes.len()).map(|i| (i % 5) as f64).collect();
            prop_assert_eq!(nms(&boxes, &scores, 1.0).len(), boxes.len());
        }
    }
}
