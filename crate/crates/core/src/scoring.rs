//! Linear objectness models: sample mining, hinge-loss training, scoring and
//! per-stage score normalization.

use std::collections::HashMap;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::windowing::DescriptorSpec;

/// Weight vector and bias over one descriptor layout, for one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub scale_id: usize,
    pub descriptor: DescriptorSpec,
}

impl LinearModel {
    pub fn new(
        weights: Vec<f64>,
        bias: f64,
        scale_id: usize,
        descriptor: DescriptorSpec,
    ) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
            return Err(Error::NonFinite("model weights"));
        }
        Ok(LinearModel {
            weights,
            bias,
            scale_id,
            descriptor,
        })
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Checks that the weight count matches the descriptor layout on a map
    /// with `channels` channels.
    pub fn check_channels(&self, channels: usize) -> Result<()> {
        let expected = self.descriptor.len(channels);
        if expected != self.weights.len() {
            return Err(Error::LengthMismatch {
                expected,
                got: self.weights.len(),
            });
        }
        Ok(())
    }

    /// `w . x + b` without the length check.
    #[inline]
    pub(crate) fn score_unchecked(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }
}

pub fn score(model: &LinearModel, descriptor: &[f64]) -> Result<f64> {
    if descriptor.len() != model.weights.len() {
        return Err(Error::LengthMismatch {
            expected: model.weights.len(),
            got: descriptor.len(),
        });
    }
    Ok(model.score_unchecked(descriptor))
}

/// Scores a row-major block of descriptors, `model.dim()` values per row.
pub fn score_batch(model: &LinearModel, rows: &[f64]) -> Result<Vec<f64>> {
    let d = model.dim();
    if d == 0 || rows.len() % d != 0 {
        return Err(Error::LengthMismatch {
            expected: d,
            got: rows.len(),
        });
    }
    Ok(rows.chunks_exact(d).map(|x| model.score_unchecked(x)).collect())
}

/// Affine map of `scores` onto `[0, 1]`, lowest to 0 and highest to 1. A
/// constant list maps to all ones so that a flat stage is neutral under
/// multiplicative fusion.
pub fn normalize_scores(scores: &[f64]) -> Vec<f64> {
    let (lo, hi) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| {
            (lo.min(s), hi.max(s))
        });
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![1.0; scores.len()];
    }
    scores.iter().map(|s| ((s - lo) / range).clamp(0.0, 1.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiningConfig {
    pub pos_iou: f64,
    pub neg_iou: f64,
    pub pos_per_object: usize,
    pub neg_per_image: usize,
    pub seed: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            pos_iou: 0.70,
            neg_iou: 0.30,
            pos_per_object: 10,
            neg_per_image: 50,
            seed: 0,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.neg_iou && self.neg_iou < self.pos_iou && self.pos_iou <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < neg_iou < pos_iou <= 1, got {} / {}",
                self.neg_iou, self.pos_iou
            )));
        }
        Ok(())
    }
}

/// Indices into the candidate list chosen as training samples.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MinedSamples {
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

/// Picks at most `pos_per_object` candidates per ground-truth box with
/// IoU > `pos_iou`, and at most `neg_per_image` candidates whose best IoU with
/// every ground-truth box is below `neg_iou`. Sampling is without replacement
/// and driven by `cfg.seed`; indices come back sorted.
pub fn mine_samples(candidates: &[BBox], gt: &[BBox], cfg: &MiningConfig) -> MinedSamples {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut best = vec![0.0f64; candidates.len()];
    let mut positives = Vec::new();

    for g in gt {
        let mut eligible = Vec::new();
        for (i, c) in candidates.iter().enumerate() {
            let o = iou(c, g);
            best[i] = best[i].max(o);
            if o > cfg.pos_iou {
                eligible.push(i);
            }
        }
        let take = cfg.pos_per_object.min(eligible.len());
        positives.extend(
            index::sample(&mut rng, eligible.len(), take)
                .into_iter()
                .map(|j| eligible[j]),
        );
    }
    positives.sort_unstable();
    positives.dedup();

    let eligible: Vec<usize> = (0..candidates.len())
        .filter(|&i| best[i] < cfg.neg_iou)
        .collect();
    let take = cfg.neg_per_image.min(eligible.len());
    let mut negatives: Vec<usize> = index::sample(&mut rng, eligible.len(), take)
        .into_iter()
        .map(|j| eligible[j])
        .collect();
    negatives.sort_unstable();

    MinedSamples {
        positives,
        negatives,
    }
}

/// Stochastic subgradient settings.
///
/// Defaults (C = 100, 300 epochs, rate0 = 0.1, decay = 1e-4) are a local
/// choice; nothing upstream fixes the solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub c: f64,
    pub epochs: usize,
    pub rate0: f64,
    pub decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            c: 100.0,
            epochs: 300,
            rate0: 0.1,
            decay: 1e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) || self.epochs == 0 {
            return Err(Error::InvalidParameter(format!(
                "need C > 0 and epochs >= 1, got C={} epochs={}",
                self.c, self.epochs
            )));
        }
        if !(self.rate0 > 0.0) || !(self.decay >= 0.0) {
            return Err(Error::InvalidParameter(
                "learning rate must be positive and decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Training samples with identical (label, descriptor) pairs merged into a
/// multiplicity, in first-occurrence order.
struct WeightedSet<'a> {
    rows: Vec<&'a [f64]>,
    labels: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> WeightedSet<'a> {
    fn build(pos: &'a [Vec<f64>], neg: &'a [Vec<f64>]) -> Self {
        let mut seen: HashMap<(bool, Vec<u64>), usize> = HashMap::new();
        let mut set = WeightedSet {
            rows: Vec::new(),
            labels: Vec::new(),
            weights: Vec::new(),
        };
        let tagged = pos.iter().map(|x| (true, x)).chain(neg.iter().map(|x| (false, x)));
        for (is_pos, x) in tagged {
            let key = (is_pos, x.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            match seen.get(&key) {
                Some(&i) => set.weights[i] += 1.0,
                None => {
                    seen.insert(key, set.rows.len());
                    set.rows.push(x);
                    set.labels.push(if is_pos { 1.0 } else { -1.0 });
                    set.weights.push(1.0);
                }
            }
        }
        set
    }
}

/// Primal objective `0.5 |w|^2 + C * sum_i hinge(y_i (w . x_i + b))`.
pub fn svm_objective(model: &LinearModel, pos: &[Vec<f64>], neg: &[Vec<f64>], c: f64) -> f64 {
    let hinge = |x: &[f64], y: f64| (1.0 - y * model.score_unchecked(x)).max(0.0);
    let loss: f64 = pos.iter().map(|x| hinge(x, 1.0)).sum::<f64>()
        + neg.iter().map(|x| hinge(x, -1.0)).sum::<f64>();
    0.5 * model.weights.iter().map(|w| w * w).sum::<f64>() + c * loss
}

fn weighted_objective(set: &WeightedSet<'_>, w: &[f64], b: f64, c: f64) -> f64 {
    let mut loss = 0.0;
    for ((x, &y), &m) in set.rows.iter().zip(&set.labels).zip(&set.weights) {
        let s: f64 = w.iter().zip(x.iter()).map(|(a, v)| a * v).sum::<f64>() + b;
        loss += m * (1.0 - y * s).max(0.0);
    }
    0.5 * w.iter().map(|v| v * v).sum::<f64>() + c * loss
}

/// Minimizes the primal hinge objective by seeded stochastic subgradient
/// descent with step `rate0 / (1 + decay * t)`.
///
/// Duplicate samples are merged into weights first, so the result depends
/// only on the weighted sample set (duplicating every sample and halving C
/// yields the same model). The iterate with the lowest objective among the
/// epoch ends is returned.
pub fn train_linear(
    pos: &[Vec<f64>],
    neg: &[Vec<f64>],
    cfg: &TrainConfig,
    scale_id: usize,
    descriptor: DescriptorSpec,
) -> Result<LinearModel> {
    cfg.validate()?;
    if pos.is_empty() {
        return Err(Error::EmptyInput("positive training samples"));
    }
    if neg.is_empty() {
        return Err(Error::EmptyInput("negative training samples"));
    }
    let dim = pos[0].len();
    for x in pos.iter().chain(neg) {
        if x.len() != dim {
            return Err(Error::LengthMismatch {
                expected: dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training descriptor"));
        }
    }

    let set = WeightedSet::build(pos, neg);
    let n = set.rows.len();
    let shrink_share = 1.0 / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();

    let mut w = vec![0.0f64; dim];
    let mut b = 0.0f64;
    let mut best = (weighted_objective(&set, &w, b, cfg.c), w.clone(), b);
    let mut t = 0u64;

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let eta = cfg.rate0 / (1.0 + cfg.decay * t as f64);
            t += 1;
            let x = set.rows[i];
            let y = set.labels[i];
            let margin = y * (w.iter().zip(x.iter()).map(|(a, v)| a * v).sum::<f64>() + b);
            let decay = 1.0 - eta * shrink_share;
            if margin < 1.0 {
                let push = eta * cfg.c * set.weights[i] * y;
                for (wj, xj) in w.iter_mut().zip(x.iter()) {
                    *wj = *wj * decay + push * xj;
                }
                b += push;
            } else {
                w.iter_mut().for_each(|wj| *wj *= decay);
            }
        }
        let obj = weighted_objective(&set, &w, b, cfg.c);
        if obj < best.0 {
            best = (obj, w.clone(), b);
        }
    }

    LinearModel::new(best.1, best.2, scale_id, descriptor)
}
