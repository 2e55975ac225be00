//! The inverse coarse-to-fine cascade.
//!
//! Stage 1 slides the shape bank densely over the coarse layer of every scale
//! and scores windows with a flat pooled descriptor. Survivors are re-scored
//! on the mid layer with a `1x1 + 2x2` pyramid and the two normalized scores
//! are multiplied. Scales are then merged and the best boxes are handed to
//! edge-based refinement on the fine layer.

use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featmap::{build_integral, FeatureMap};
use crate::geometry::{nms_limited, rank_by_score, BBox, NmsConfig};
use crate::refine::{edge_from_features, refine_all, EdgeMap, RefineConfig};
use crate::scoring::{normalize_scores, LinearModel};
use crate::windowing::{descriptor_into, grid_positions, ShapeBank};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    S1,
    S2,
    S3,
}

/// A scored box in original-image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proposal {
    pub bbox: BBox,
    pub score: f64,
    pub scale_id: usize,
    pub stage: Stage,
}

/// Layer tags for the coarse, mid and fine stages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageLayers {
    pub coarse: String,
    pub mid: String,
    pub fine: String,
}

impl Default for StageLayers {
    fn default() -> Self {
        StageLayers {
            coarse: "L5".into(),
            mid: "L3".into(),
            fine: "L2".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CascadeConfig {
    /// Stage-1 survivors across all scales.
    pub stage1_keep: usize,
    /// Stage-2 survivors across all scales, before scale merging.
    pub stage2_keep: usize,
    /// Boxes kept after scale merging and passed to refinement.
    pub n_desired: usize,
    /// Evaluation IoU the output is tuned for (0.5 or 0.7).
    pub beta: f64,
    /// Sliding-window stride in coarse cells.
    pub stride: usize,
    pub layers: StageLayers,
    /// Last stage to run; earlier values switch later stages off.
    pub last_stage: Stage,
}

impl Default for CascadeConfig {
    fn default() -> Self {
        CascadeConfig {
            stage1_keep: 4000,
            stage2_keep: 3000,
            n_desired: 1000,
            beta: 0.5,
            stride: 1,
            layers: StageLayers::default(),
            last_stage: Stage::S3,
        }
    }
}

impl CascadeConfig {
    /// The `beta = 0.7` variant, for a stricter localization target.
    pub fn tuned_for_07() -> Self {
        CascadeConfig {
            beta: 0.7,
            ..CascadeConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.stage1_keep >= self.stage2_keep
            && self.stage2_keep >= self.n_desired
            && self.n_desired >= 1)
        {
            return Err(Error::InvalidParameter(format!(
                "budgets must satisfy stage1_keep >= stage2_keep >= n_desired >= 1, got {} / {} / {}",
                self.stage1_keep, self.stage2_keep, self.n_desired
            )));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "beta must lie in (0, 1], got {}",
                self.beta
            )));
        }
        if self.stride == 0 {
            return Err(Error::InvalidParameter("stride must be >= 1".into()));
        }
        Ok(())
    }

    pub fn within_scale(&self) -> NmsConfig {
        NmsConfig::within_scale(self.beta)
    }

    pub fn across_scales(&self) -> NmsConfig {
        NmsConfig::across_scales(self.beta)
    }
}

/// Per-scale models for the first two stages, looked up by `scale_id`.
#[derive(Debug, Clone, Default)]
pub struct ModelSet {
    pub stage1: Vec<LinearModel>,
    pub stage2: Vec<LinearModel>,
}

impl ModelSet {
    pub fn get(&self, stage: u8, scale: usize) -> Result<&LinearModel> {
        let list = if stage == 1 { &self.stage1 } else { &self.stage2 };
        list.iter()
            .find(|m| m.scale_id == scale)
            .ok_or(Error::MissingModel { stage, scale })
    }
}

/// All layers of one image at one scale.
#[derive(Debug, Clone)]
pub struct ScaleMaps {
    pub coarse: FeatureMap,
    pub mid: FeatureMap,
    /// Appearance-only fine layer, used to derive edges.
    pub fine: Option<FeatureMap>,
    /// Externally computed edge field at the fine resolution.
    pub edges: Option<EdgeMap>,
}

/// Feature maps of one image across scales, with its original size.
#[derive(Debug, Clone)]
pub struct ImageMaps {
    pub width: u32,
    pub height: u32,
    pub scales: Vec<ScaleMaps>,
}

impl ImageMaps {
    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum EdgeSource {
    /// Gradient magnitude of the fine feature layer.
    #[default]
    FineFeatures,
    /// Edge maps supplied with the image.
    Ingested,
}

/// Splits `budget` over scales in proportion to `counts` (largest remainder),
/// giving every non-empty scale at least one slot.
pub fn split_budget(budget: usize, counts: &[usize]) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return vec![0; counts.len()];
    }
    let exact: Vec<f64> = counts
        .iter()
        .map(|&c| budget as f64 * c as f64 / total as f64)
        .collect();
    let mut quota: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut left = budget.saturating_sub(quota.iter().sum());
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in &order {
        if left == 0 {
            break;
        }
        if counts[i] > 0 {
            quota[i] += 1;
            left -= 1;
        }
    }
    for (q, &c) in quota.iter_mut().zip(counts) {
        *q = (*q).max(usize::from(c > 0)).min(c);
    }
    quota
}

/// Scored windows of one scale, in cell coordinates of the coarse map.
struct ScaleWindows {
    boxes: Vec<BBox>,
    scores: Vec<f64>,
}

fn score_windows(
    map: &FeatureMap,
    image_dims: (u32, u32),
    bank: &ShapeBank,
    model: &LinearModel,
    stride: usize,
) -> Result<ScaleWindows> {
    model.check_channels(map.channels())?;
    let ii = build_integral(map);
    let per_shape: Vec<(Vec<BBox>, Vec<f64>)> = bank
        .shapes
        .par_iter()
        .map(|&shape| {
            let boxes = grid_positions(map.height(), map.width(), shape, stride);
            let mut buf = Vec::with_capacity(model.dim());
            let mut scores = Vec::with_capacity(boxes.len());
            for b in &boxes {
                buf.clear();
                let cells = b.cell_corners().expect("grid boxes are cell aligned");
                descriptor_into(&ii, cells, &model.descriptor, image_dims, &mut buf)?;
                scores.push(model.score_unchecked(&buf));
            }
            Ok((boxes, scores))
        })
        .collect::<Result<_>>()?;
    let mut out = ScaleWindows {
        boxes: Vec::new(),
        scores: Vec::new(),
    };
    for (b, s) in per_shape {
        out.boxes.extend(b);
        out.scores.extend(s);
    }
    Ok(out)
}

fn cells_to_image(b: &BBox, map: &FeatureMap, image_dims: (u32, u32)) -> Result<BBox> {
    b.scale_xy(
        image_dims.0 as f64 / map.width() as f64,
        image_dims.1 as f64 / map.height() as f64,
    )
}

/// Dense stage: every bank shape at every stride position of every scale,
/// scored, normalized to `[0, 1]` per scale, suppressed at `beta + 0.05` and
/// cut to the scale's share of `stage1_keep`. Returns one ranked list per
/// scale with boxes in image pixels.
pub fn run_stage1(
    maps: &[&FeatureMap],
    image_dims: (u32, u32),
    bank: &ShapeBank,
    models: &[LinearModel],
    cfg: &CascadeConfig,
) -> Result<Vec<Vec<Proposal>>> {
    cfg.validate()?;
    let windows: Vec<ScaleWindows> = maps
        .par_iter()
        .enumerate()
        .map(|(s, map)| {
            let model = models
                .iter()
                .find(|m| m.scale_id == s)
                .ok_or(Error::MissingModel { stage: 1, scale: s })?;
            let mut w = score_windows(map, image_dims, bank, model, cfg.stride)?;
            w.scores = normalize_scores(&w.scores);
            Ok(w)
        })
        .collect::<Result<_>>()?;

    let counts: Vec<usize> = windows.iter().map(|w| w.boxes.len()).collect();
    let quotas = split_budget(cfg.stage1_keep, &counts);
    let alpha = cfg.within_scale().alpha;

    windows
        .par_iter()
        .zip(quotas)
        .enumerate()
        .map(|(s, (w, quota))| {
            nms_limited(&w.boxes, &w.scores, alpha, quota)
                .into_iter()
                .map(|i| {
                    Ok(Proposal {
                        bbox: cells_to_image(&w.boxes[i], maps[s], image_dims)?,
                        score: w.scores[i],
                        scale_id: s,
                        stage: Stage::S1,
                    })
                })
                .collect()
        })
        .collect()
}

/// Output of the re-scoring stage.
#[derive(Debug, Clone)]
pub struct Stage2Output {
    /// Per-scale survivors after within-scale suppression.
    pub per_scale: Vec<Vec<Proposal>>,
    /// Scales merged by suppression at `beta`, at most `n_desired` boxes.
    pub merged: Vec<Proposal>,
}

/// Cell rectangle of an image box on `map`, grown if needed so that a
/// `min_side` pyramid fits. Fails when the transferred box leaves the map,
/// which means the caller mixed up scales.
pub(crate) fn transfer_to_map(
    b: &BBox,
    map: &FeatureMap,
    image_dims: (u32, u32),
    min_side: usize,
) -> Result<[usize; 4]> {
    let sx = map.width() as f64 / image_dims.0 as f64;
    let sy = map.height() as f64 / image_dims.1 as f64;
    let on_map = b.scale_xy(sx, sy)?;
    let (w, h) = (map.width() as f64, map.height() as f64);
    const SLACK: f64 = 1e-6;
    if on_map.x0() < -SLACK || on_map.y0() < -SLACK || on_map.x1() > w + SLACK || on_map.y1() > h + SLACK
    {
        return Err(Error::OutOfBounds(format!(
            "{:?} on a {}x{} map",
            on_map.corners(),
            map.height(),
            map.width()
        )));
    }
    let r = on_map.round_to_cells();
    let grow = |lo: f64, hi: f64, limit: usize| -> (usize, usize) {
        let (mut lo, mut hi) = (lo.max(0.0) as usize, (hi as usize).min(limit));
        if hi <= lo {
            hi = (lo + 1).min(limit);
            lo = hi - 1;
        }
        let need = min_side.min(limit);
        while hi - lo < need {
            if hi < limit {
                hi += 1;
            }
            if hi - lo < need && lo > 0 {
                lo -= 1;
            }
        }
        (lo, hi)
    };
    let (x0, x1) = grow(r.x0(), r.x1(), map.width());
    let (y0, y1) = grow(r.y0(), r.y1(), map.height());
    Ok([x0, y0, x1, y1])
}

/// Re-scores stage-1 survivors on the mid layer with the pyramid descriptor,
/// fuses `s1 * s2`, suppresses within each scale at `beta + 0.05` keeping the
/// scale's share of `stage2_keep`, then merges scales at `beta` and keeps
/// `n_desired`.
pub fn run_stage2(
    survivors: &[Vec<Proposal>],
    mid_maps: &[&FeatureMap],
    image_dims: (u32, u32),
    models: &[LinearModel],
    cfg: &CascadeConfig,
) -> Result<Stage2Output> {
    cfg.validate()?;
    if survivors.len() != mid_maps.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} survivor lists for {} mid maps",
            survivors.len(),
            mid_maps.len()
        )));
    }
    let fused: Vec<Vec<f64>> = survivors
        .par_iter()
        .enumerate()
        .map(|(s, props)| {
            if props.is_empty() {
                return Ok(Vec::new());
            }
            let model = models
                .iter()
                .find(|m| m.scale_id == s)
                .ok_or(Error::MissingModel { stage: 2, scale: s })?;
            let map = mid_maps[s];
            model.check_channels(map.channels())?;
            let ii = build_integral(map);
            let min_side = model.descriptor.pyramid.finest();
            let mut buf = Vec::with_capacity(model.dim());
            let mut raw = Vec::with_capacity(props.len());
            for p in props {
                let cells = transfer_to_map(&p.bbox, map, image_dims, min_side)?;
                buf.clear();
                descriptor_into(&ii, cells, &model.descriptor, image_dims, &mut buf)?;
                raw.push(model.score_unchecked(&buf));
            }
            let s2 = normalize_scores(&raw);
            Ok(props.iter().zip(s2).map(|(p, v)| p.score * v).collect())
        })
        .collect::<Result<_>>()?;

    let counts: Vec<usize> = survivors.iter().map(Vec::len).collect();
    let quotas = split_budget(cfg.stage2_keep, &counts);
    let alpha = cfg.within_scale().alpha;

    let per_scale: Vec<Vec<Proposal>> = survivors
        .iter()
        .zip(&fused)
        .zip(quotas)
        .map(|((props, scores), quota)| {
            let boxes: Vec<BBox> = props.iter().map(|p| p.bbox).collect();
            nms_limited(&boxes, scores, alpha, quota)
                .into_iter()
                .map(|i| Proposal {
                    score: scores[i],
                    stage: Stage::S2,
                    ..props[i]
                })
                .collect()
        })
        .collect();

    let merged = merge_scales(&per_scale, cfg.across_scales().alpha, cfg.n_desired);
    Ok(Stage2Output { per_scale, merged })
}

/// Concatenates per-scale lists (scale order, then rank) and suppresses at
/// `alpha`, keeping at most `limit`.
fn merge_scales(per_scale: &[Vec<Proposal>], alpha: f64, limit: usize) -> Vec<Proposal> {
    let all: Vec<Proposal> = per_scale.iter().flatten().copied().collect();
    let boxes: Vec<BBox> = all.iter().map(|p| p.bbox).collect();
    let scores: Vec<f64> = all.iter().map(|p| p.score).collect();
    nms_limited(&boxes, &scores, alpha, limit)
        .into_iter()
        .map(|i| all[i])
        .collect()
}

/// Candidate counts after each stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub stage1: usize,
    pub stage2: usize,
    pub merged: usize,
    pub refined: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct StageTimings {
    pub stage1: Duration,
    pub stage2: Duration,
    pub stage3: Duration,
}

#[derive(Debug, Clone)]
pub struct CascadeOutput {
    pub stage1: Vec<Vec<Proposal>>,
    pub stage2: Option<Stage2Output>,
    /// Final ranked proposals in image pixels.
    pub proposals: Vec<Proposal>,
    pub counts: StageCounts,
    pub timings: StageTimings,
}

/// Stage-1 lists of all scales as one ranking: descending score, ties by
/// scale then rank.
pub fn flatten_stage1(per_scale: &[Vec<Proposal>]) -> Vec<Proposal> {
    let all: Vec<Proposal> = per_scale.iter().flatten().copied().collect();
    let scores: Vec<f64> = all.iter().map(|p| p.score).collect();
    rank_by_score(&scores).into_iter().map(|i| all[i]).collect()
}

/// Full cascade for one image. Stages after `cfg.last_stage` are skipped.
pub fn run_cascade(
    image: &ImageMaps,
    bank: &ShapeBank,
    models: &ModelSet,
    edge_source: EdgeSource,
    cfg: &CascadeConfig,
    refine_cfg: &RefineConfig,
) -> Result<CascadeOutput> {
    cfg.validate()?;
    if image.scales.is_empty() {
        return Err(Error::EmptyInput("image has no scales"));
    }
    let dims = image.dims();
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let coarse: Vec<&FeatureMap> = image.scales.iter().map(|s| &s.coarse).collect();
    let stage1 = run_stage1(&coarse, dims, bank, &models.stage1, cfg)?;
    timings.stage1 = t.elapsed();

    let mut counts = StageCounts {
        stage1: stage1.iter().map(Vec::len).sum(),
        ..StageCounts::default()
    };

    if cfg.last_stage == Stage::S1 {
        let proposals = flatten_stage1(&stage1);
        return Ok(CascadeOutput {
            stage1,
            stage2: None,
            proposals,
            counts,
            timings,
        });
    }

    let t = Instant::now();
    let mid: Vec<&FeatureMap> = image.scales.iter().map(|s| &s.mid).collect();
    let stage2 = run_stage2(&stage1, &mid, dims, &models.stage2, cfg)?;
    timings.stage2 = t.elapsed();
    counts.stage2 = stage2.per_scale.iter().map(Vec::len).sum();
    counts.merged = stage2.merged.len();

    let proposals = if cfg.last_stage == Stage::S3 {
        let t = Instant::now();
        let edges = image
            .scales
            .par_iter()
            .enumerate()
            .map(|(s, maps)| match edge_source {
                EdgeSource::FineFeatures => maps
                    .fine
                    .as_ref()
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!("scale {s} has no fine layer"))
                    })
                    .and_then(edge_from_features),
                EdgeSource::Ingested => maps.edges.clone().ok_or_else(|| {
                    Error::InvalidParameter(format!("scale {s} has no edge map"))
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        let refined = refine_all(&stage2.merged, &edges, dims, refine_cfg)?;
        timings.stage3 = t.elapsed();
        counts.refined = refined.len();
        refined
    } else {
        stage2.merged.clone()
    };

    Ok(CascadeOutput {
        stage1,
        stage2: Some(stage2),
        proposals,
        counts,
        timings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budget_split_is_proportional() {
        assert_eq!(split_budget(4000, &[1000, 1000, 2000]), vec![1000, 1000, 2000]);
        assert_eq!(split_budget(10, &[5, 5, 5]), vec![4, 3, 3]);
        assert_eq!(split_budget(1, &[100, 300]), vec![1, 1]);
        assert_eq!(split_budget(100, &[3, 0]), vec![3, 0]);
        assert_eq!(split_budget(5, &[]), Vec::<usize>::new());
        let q = split_budget(4000, &[2100, 3900, 7600, 19000]);
        assert_eq!(q.iter().sum::<usize>(), 4000);
    }

    #[test]
    fn config_validation() {
        assert!(CascadeConfig::default().validate().is_ok());
        let bad = CascadeConfig {
            stage2_keep: 5000,
            ..CascadeConfig::default()
        };
        assert!(bad.validate().is_err());
        let c = CascadeConfig::default();
        assert!((c.within_scale().alpha - 0.55).abs() < 1e-12);
        assert_eq!(c.across_scales().alpha, 0.5);
        let c = CascadeConfig::tuned_for_07();
        assert!((c.within_scale().alpha - 0.75).abs() < 1e-12);
    }

    #[test]
    fn missing_model_is_reported() {
        let map = FeatureMap::zeros(2, 6, 6, 1.0, "L5").unwrap();
        let bank = ShapeBank::new(4, vec![crate::windowing::WindowShape::new(2, 2)]).unwrap();
        let err = run_stage1(&[&map], (60, 60), &bank, &[], &CascadeConfig::default()).unwrap_err();
        assert!(matches!(err, Error::MissingModel { stage: 1, scale: 0 }));
    }

    #[test]
    fn transfer_grows_small_boxes_and_flags_foreign_boxes() {
        let map = FeatureMap::zeros(1, 10, 10, 1.0, "L3").unwrap();
        let b = BBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        assert_eq!(transfer_to_map(&b, &map, (100, 100), 2).unwrap(), [0, 0, 2, 2]);
        let edge = BBox::new(95.0, 95.0, 100.0, 100.0).unwrap();
        assert_eq!(transfer_to_map(&edge, &map, (100, 100), 2).unwrap(), [8, 8, 10, 10]);
        let outside = BBox::new(50.0, 50.0, 150.0, 90.0).unwrap();
        assert!(matches!(
            transfer_to_map(&outside, &map, (100, 100), 2),
            Err(Error::OutOfBounds(_))
        ));
    }
}
