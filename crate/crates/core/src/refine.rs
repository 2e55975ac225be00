//! Stage-3 localization refinement on an edge-strength field.
//!
//! The edge field is either derived from the fine feature layer (channel
//! gradient magnitude) or ingested from a single-channel tensor. Boxes are
//! scored by the edge mass in a thin band along their inner perimeter,
//! divided by `(2 (w + h))^gamma`, and improved by greedy local search. This
//! perimeter-band score is a surrogate for a trained contour detector plus
//! its box score; it only needs a contour-strength field.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{Proposal, Stage};
use crate::error::{Error, Result};
use crate::featmap::{FeatureMap, IntegralImage};
use crate::geometry::BBox;

/// Non-negative edge magnitude per cell with its summed-area table.
#[derive(Debug, Clone)]
pub struct EdgeMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    sat: IntegralImage,
    scale_factor: f64,
}

impl EdgeMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, scale_factor: f64) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch("edge map needs positive size".into()));
        }
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("edge map"));
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParameter("edge magnitudes must be >= 0".into()));
        }
        let sat = IntegralImage::from_plane(height, width, &values);
        Ok(EdgeMap {
            height,
            width,
            values,
            sat,
            scale_factor,
        })
    }

    /// Wraps an ingested single-channel tensor.
    pub fn from_feature_map(fm: &FeatureMap) -> Result<Self> {
        if fm.channels() != 1 {
            return Err(Error::ShapeMismatch(format!(
                "edge tensors have one channel, got {}",
                fm.channels()
            )));
        }
        EdgeMap::new(
            fm.height(),
            fm.width(),
            fm.data().iter().map(|&v| v as f64).collect(),
            fm.scale_factor(),
        )
    }

    /// Single-channel tensor view, for writing to disk.
    pub fn to_feature_map(&self, layer_tag: &str) -> Result<FeatureMap> {
        FeatureMap::new(
            1,
            self.height,
            self.width,
            self.values.iter().map(|&v| v as f32).collect(),
            self.scale_factor,
            layer_tag,
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        self.sat.rect_sum(0, x0, y0, x1, y1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefineConfig {
    /// Width of the perimeter band in cells.
    pub band_width: usize,
    /// Exponent of the perimeter normalization.
    pub gamma: f64,
    /// Initial move size as a fraction of the box side.
    pub step_fraction: f64,
    /// Factor applied to the move size after a round without improvement.
    pub shrink: f64,
    /// Search stops once the move size falls below this many cells.
    pub min_step: f64,
    pub max_moves: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            band_width: 1,
            gamma: 1.5,
            step_fraction: 0.125,
            shrink: 0.5,
            min_step: 2.0,
            max_moves: 1000,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !(self.shrink > 0.0 && self.shrink < 1.0) {
            return Err(Error::InvalidParameter(
                "refinement needs gamma > 0 and shrink in (0, 1)".into(),
            ));
        }
        if self.band_width == 0 || !(self.step_fraction > 0.0) {
            return Err(Error::InvalidParameter(
                "band width and step fraction must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-cell l2 norm over channels of the central-difference gradient
/// (borders replicate the edge cell), scaled so the maximum is 1.
pub fn edge_from_features(fm: &FeatureMap) -> Result<EdgeMap> {
    let (h, w) = (fm.height(), fm.width());
    if h < 3 || w < 3 {
        return Err(Error::ShapeMismatch(format!(
            "edge extraction needs at least 3x3 cells, got {h}x{w}"
        )));
    }
    let mut mag = vec![0.0f64; h * w];
    for c in 0..fm.channels() {
        let ch = fm.channel(c);
        let at = |y: usize, x: usize| ch[y * w + x] as f64;
        for y in 0..h {
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for x in 0..w {
                let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
                let gx = 0.5 * (at(y, xr) - at(y, xl));
                let gy = 0.5 * (at(yd, x) - at(yu, x));
                mag[y * w + x] += gx * gx + gy * gy;
            }
        }
    }
    mag.iter_mut().for_each(|v| *v = v.sqrt());
    let max = mag.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        mag.iter_mut().for_each(|v| *v /= max);
    }
    EdgeMap::new(h, w, mag, fm.scale_factor())
}

fn band_score(em: &EdgeMap, [x0, y0, x1, y1]: [usize; 4], band: usize, gamma: f64) -> Option<f64> {
    if x1 > em.width || y1 > em.height || x1 <= x0 || y1 <= y0 {
        return None;
    }
    let (w, h) = (x1 - x0, y1 - y0);
    if w <= 2 * band || h <= 2 * band {
        return None;
    }
    let outer = em.rect_sum(x0, y0, x1, y1);
    let inner = em.rect_sum(x0 + band, y0 + band, x1 - band, y1 - band);
    let perimeter = 2.0 * (w + h) as f64;
    Some((outer - inner).max(0.0) / perimeter.powf(gamma))
}

/// Edge mass in the inner perimeter band of `b` over `(2 (w + h))^gamma`.
pub fn edge_score(em: &EdgeMap, b: &BBox, cfg: &RefineConfig) -> Result<f64> {
    let cells = b
        .cell_corners()
        .ok_or_else(|| Error::OutOfBounds(format!("{:?}", b.corners())))?;
    if cells[2] > em.width || cells[3] > em.height {
        return Err(Error::OutOfBounds(format!("{:?}", b.corners())));
    }
    band_score(em, cells, cfg.band_width, cfg.gamma).ok_or_else(|| {
        Error::InvalidParameter(format!(
            "box {:?} is too thin for a {}-cell band",
            b.corners(),
            cfg.band_width
        ))
    })
}

fn to_box([x0, y0, x1, y1]: [i64; 4]) -> BBox {
    BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64).expect("positive extent")
}

/// Candidate moves around `cur` for a given step fraction, clipped to the map.
fn neighbours(cur: [i64; 4], frac: f64, w_max: i64, h_max: i64) -> Vec<[i64; 4]> {
    let [x0, y0, x1, y1] = cur;
    let (w, h) = ((x1 - x0) as f64, (y1 - y0) as f64);
    let dx = (frac * w).round() as i64;
    let dy = (frac * h).round() as i64;
    let (cx, cy) = ((x0 + x1) as f64 / 2.0, (y0 + y1) as f64 / 2.0);
    let resized = |nw: f64, nh: f64| {
        let nx0 = (cx - nw / 2.0).round() as i64;
        let ny0 = (cy - nh / 2.0).round() as i64;
        [nx0, ny0, nx0 + nw.round() as i64, ny0 + nh.round() as i64]
    };

    let mut out = Vec::with_capacity(10);
    if dx > 0 {
        out.push([x0 + dx, y0, x1 + dx, y1]);
        out.push([x0 - dx, y0, x1 - dx, y1]);
    }
    if dy > 0 {
        out.push([x0, y0 + dy, x1, y1 + dy]);
        out.push([x0, y0 - dy, x1, y1 - dy]);
    }
    out.push(resized(w * (1.0 + frac), h * (1.0 + frac)));
    out.push(resized(w * (1.0 - frac), h * (1.0 - frac)));
    out.push(resized(w * (1.0 + frac), h * (1.0 - frac)));
    out.push(resized(w * (1.0 - frac), h * (1.0 + frac)));

    out.into_iter()
        .map(|[a, b, c, d]| [a.max(0), b.max(0), c.min(w_max), d.min(h_max)])
        .filter(|&m| m != cur && m[2] > m[0] && m[3] > m[1])
        .collect()
}

/// Greedy hill climbing over translations, scalings and aspect changes.
///
/// The best strictly improving move is taken; when none improves, the move
/// size shrinks. Search ends once the move size drops below `min_step` cells
/// or after `max_moves` accepted moves. The input is rounded to cells and
/// clipped to the map first. If that box cannot be scored (too thin for the
/// band) it is returned as is with score 0.
pub fn refine_box(em: &EdgeMap, b: &BBox, cfg: &RefineConfig) -> (BBox, f64) {
    let Ok(clipped) = b.round_to_cells().clip(em.width as f64, em.height as f64) else {
        return (*b, 0.0);
    };
    let Some(start) = clipped.cell_corners() else {
        return (*b, 0.0);
    };
    let Some(mut best) = band_score(em, start, cfg.band_width, cfg.gamma) else {
        return (*b, 0.0);
    };
    let mut cur = start.map(|v| v as i64);
    let (w_max, h_max) = (em.width as i64, em.height as i64);
    let mut frac = cfg.step_fraction;
    let mut moves = 0;

    while moves < cfg.max_moves {
        let side = ((cur[2] - cur[0]).max(cur[3] - cur[1])) as f64;
        if frac * side < cfg.min_step {
            break;
        }
        let mut improved: Option<([i64; 4], f64)> = None;
        for cand in neighbours(cur, frac, w_max, h_max) {
            let cells = cand.map(|v| v as usize);
            if let Some(s) = band_score(em, cells, cfg.band_width, cfg.gamma) {
                let bar = improved.map_or(best, |(_, v)| v);
                if s > bar {
                    improved = Some((cand, s));
                }
            }
        }
        match improved {
            Some((cand, s)) => {
                cur = cand;
                best = s;
                moves += 1;
            }
            None => frac *= cfg.shrink,
        }
    }
    (to_box(cur), best)
}

/// Refines every proposal on the edge map of its scale. Scores and order are
/// kept; only boxes move. `edges[s]` is the edge map of scale `s`, and
/// `image_dims` is the original `(width, height)`.
pub fn refine_all(
    proposals: &[Proposal],
    edges: &[EdgeMap],
    image_dims: (u32, u32),
    cfg: &RefineConfig,
) -> Result<Vec<Proposal>> {
    cfg.validate()?;
    proposals
        .par_iter()
        .map(|p| {
            let em = edges.get(p.scale_id).ok_or_else(|| {
                Error::InvalidParameter(format!("no edge map for scale {}", p.scale_id))
            })?;
            let sx = em.width as f64 / image_dims.0 as f64;
            let sy = em.height as f64 / image_dims.1 as f64;
            let on_map = p.bbox.scale_xy(sx, sy)?;
            let start = on_map
                .round_to_cells()
                .clip(em.width as f64, em.height as f64)
                .ok();
            let (refined, _) = refine_box(em, &on_map, cfg);
            // Boxes the search did not move keep their exact coordinates.
            let bbox = if Some(refined) == start || refined == on_map {
                p.bbox
            } else {
                refined.scale_xy(1.0 / sx, 1.0 / sy)?
            };
            Ok(Proposal {
                bbox,
                stage: Stage::S3,
                ..*p
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cells(x0: usize, y0: usize, x1: usize, y1: usize) -> BBox {
        BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64).unwrap()
    }

    fn edge_map(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> f64) -> EdgeMap {
        let v = (0..h * w).map(|i| f(i / w, i % w)).collect();
        EdgeMap::new(h, w, v, 1.0).unwrap()
    }

    fn brute_band(em: &EdgeMap, [x0, y0, x1, y1]: [usize; 4], band: usize) -> f64 {
        let mut s = 0.0;
        for y in y0..y1 {
            for x in x0..x1 {
                let inside = x >= x0 + band && x < x1 - band && y >= y0 + band && y < y1 - band;
                if !inside {
                    s += em.get(y, x);
                }
            }
        }
        s
    }

    #[test]
    fn constant_map_has_no_edges() {
        let fm = FeatureMap::new(2, 5, 6, vec![3.0; 60], 1.0, "L2").unwrap();
        let em = edge_from_features(&fm).unwrap();
        assert!(em.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn step_edge_peaks_on_step_columns() {
        let (h, w) = (6usize, 10usize);
        let data = (0..h * w).map(|i| if i % w >= 5 { 1.0 } else { 0.0 }).collect();
        let fm = FeatureMap::new(1, h, w, data, 1.0, "L2").unwrap();
        let em = edge_from_features(&fm).unwrap();
        for y in 0..h {
            for x in 0..w {
                let want = if x == 4 || x == 5 { 1.0 } else { 0.0 };
                assert_eq!(em.get(y, x), want);
            }
        }
    }

    #[test]
    fn gradient_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (c, h, w) = (3usize, 9usize, 7usize);
        let data: Vec<f32> = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0f32)).collect();
        let fm = FeatureMap::new(c, h, w, data, 1.0, "L2").unwrap();
        let em = edge_from_features(&fm).unwrap();
        let mut direct = vec![0.0f64; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for ch in 0..c {
                    let f = |yy: isize, xx: isize| {
                        let yy = yy.clamp(0, h as isize - 1) as usize;
                        let xx = xx.clamp(0, w as isize - 1) as usize;
                        fm.get(ch, yy, xx) as f64
                    };
                    let (yi, xi) = (y as isize, x as isize);
                    let gx = (f(yi, xi + 1) - f(yi, xi - 1)) / 2.0;
                    let gy = (f(yi + 1, xi) - f(yi - 1, xi)) / 2.0;
                    acc += gx * gx + gy * gy;
                }
                direct[y * w + x] = acc.sqrt();
            }
        }
        let max = direct.iter().copied().fold(0.0, f64::max);
        for (got, want) in em.values().iter().zip(&direct) {
            assert!((got - want / max).abs() < 1e-6);
        }
    }

    #[test]
    fn tiny_maps_rejected() {
        let fm = FeatureMap::zeros(1, 2, 5, 1.0, "L2").unwrap();
        assert!(edge_from_features(&fm).is_err());
        assert!(EdgeMap::new(1, 2, vec![0.0, -1.0], 1.0).is_err());
    }

    #[test]
    fn edge_score_closed_forms() {
        let cfg = RefineConfig::default();
        let zero = edge_map(10, 10, |_, _| 0.0);
        assert_eq!(edge_score(&zero, &cells(1, 1, 6, 7), &cfg).unwrap(), 0.0);

        let ones = edge_map(20, 20, |_, _| 1.0);
        let lin = RefineConfig { gamma: 1.0, ..cfg.clone() };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let x0 = rng.random_range(0..15);
            let y0 = rng.random_range(0..15);
            let x1 = rng.random_range(x0 + 3..=20);
            let y1 = rng.random_range(y0 + 3..=20);
            let (w, h) = ((x1 - x0) as f64, (y1 - y0) as f64);
            let band_area = w * h - (w - 2.0) * (h - 2.0);
            let got = edge_score(&ones, &cells(x0, y0, x1, y1), &lin).unwrap();
            assert!((got - band_area / (2.0 * (w + h))).abs() < 1e-12);
        }
    }

    #[test]
    fn edge_score_matches_brute_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let em = edge_map(24, 30, |_, _| rng.random_range(0.0..1.0));
        for band in [1usize, 2] {
            let cfg = RefineConfig { band_width: band, ..RefineConfig::default() };
            for _ in 0..50 {
                let x0 = rng.random_range(0..24);
                let y0 = rng.random_range(0..18);
                let x1 = rng.random_range(x0 + 2 * band + 1..=30);
                let y1 = rng.random_range(y0 + 2 * band + 1..=24);
                let c = [x0, y0, x1, y1];
                let perim = 2.0 * ((x1 - x0) + (y1 - y0)) as f64;
                let want = brute_band(&em, c, band) / perim.powf(1.5);
                let got = edge_score(&em, &cells(x0, y0, x1, y1), &cfg).unwrap();
                assert!((got - want).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn thin_boxes_rejected() {
        let em = edge_map(10, 10, |_, _| 1.0);
        let cfg = RefineConfig::default();
        assert!(edge_score(&em, &cells(0, 0, 2, 8), &cfg).is_err());
        assert!(edge_score(&em, &cells(0, 0, 3, 8), &cfg).is_ok());
        assert!(edge_score(&em, &cells(0, 0, 11, 8), &cfg).is_err());
    }

    /// Edge field of a rectangle outline drawn on its inner perimeter.
    fn outline(h: usize, w: usize, r: [usize; 4]) -> EdgeMap {
        edge_map(h, w, |y, x| {
            let inside = x >= r[0] && x < r[2] && y >= r[1] && y < r[3];
            let on_border = x == r[0] || x + 1 == r[2] || y == r[1] || y + 1 == r[3];
            if inside && on_border {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn local_maximum_is_fixed_point() {
        let em = outline(40, 40, [10, 10, 26, 26]);
        let b = cells(10, 10, 26, 26);
        let (out, s) = refine_box(&em, &b, &RefineConfig::default());
        assert_eq!(out, b);
        assert_eq!(s, edge_score(&em, &b, &RefineConfig::default()).unwrap());
    }

    #[test]
    fn offset_box_moves_toward_outline() {
        let target = cells(10, 10, 26, 26);
        let em = outline(40, 40, [10, 10, 26, 26]);
        let start = cells(13, 10, 29, 26);
        let cfg = RefineConfig::default();
        let (out, s) = refine_box(&em, &start, &cfg);
        assert!(s >= edge_score(&em, &start, &cfg).unwrap());
        assert!(crate::geometry::iou(&out, &target) >= crate::geometry::iou(&start, &target));
    }

    #[test]
    fn refinement_never_lowers_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = RefineConfig::default();
        for _ in 0..200 {
            let em = edge_map(32, 32, |_, _| rng.random_range(0.0..1.0f64).powi(3));
            let x0 = rng.random_range(0..26);
            let y0 = rng.random_range(0..26);
            let b = cells(x0, y0, rng.random_range(x0 + 3..=32), rng.random_range(y0 + 3..=32));
            let before = edge_score(&em, &b, &cfg).unwrap();
            let (out, after) = refine_box(&em, &b, &cfg);
            assert!(after >= before);
            assert_eq!(after, edge_score(&em, &out, &cfg).unwrap());
            assert!(out.x1() <= 32.0 && out.y1() <= 32.0 && out.x0() >= 0.0 && out.y0() >= 0.0);
        }
    }
}
