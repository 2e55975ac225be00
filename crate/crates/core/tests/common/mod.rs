//! Reference implementations used as test oracles. They favour the most
//! literal reading of each definition over speed.

#![allow(dead_code)]

use proposal_cascade::featmap::FeatureMap;
use proposal_cascade::geometry::BBox;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
    BBox::new(x0, y0, x1, y1).unwrap()
}

pub fn iou_ref(a: &BBox, b: &BBox) -> f64 {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union > 0.0 {
        inter / union
    } else {
        0.0
    }
}

/// Quadratic greedy suppression with an explicit "suppressed" mask.
pub fn nms_ref(boxes: &[BBox], scores: &[f64], alpha: f64) -> Vec<usize> {
    let n = boxes.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Selection sort on (score desc, index asc).
    for i in 0..n {
        let mut best = i;
        for j in i + 1..n {
            let (a, b) = (order[j], order[best]);
            if scores[a] > scores[b] || (scores[a] == scores[b] && a < b) {
                best = j;
            }
        }
        order.swap(i, best);
    }
    let mut suppressed = vec![false; n];
    let mut kept = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        kept.push(i);
        for &j in &order[pos + 1..] {
            if iou_ref(&boxes[i], &boxes[j]) > alpha {
                suppressed[j] = true;
            }
        }
    }
    kept
}

pub fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    let data = (0..c * h * w).map(|_| rng.random_range(0.0..1.0f32)).collect();
    FeatureMap::new(c, h, w, data, 1.0, "L5").unwrap()
}

/// Nested-loop mean of channel `c` over cells `[x0, x1) x [y0, y1)`.
pub fn mean_ref(fm: &FeatureMap, c: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
    let mut s = 0.0f64;
    for y in y0..y1 {
        for x in x0..x1 {
            s += fm.get(c, y, x) as f64;
        }
    }
    s / ((x1 - x0) * (y1 - y0)) as f64
}

/// Split point `round(i * len / g)` in integer arithmetic (halves round up).
fn split(i: usize, len: usize, g: usize) -> usize {
    (2 * i * len + g) / (2 * g)
}

/// Pyramid pooling by nested loops: levels in order, sub-windows row-major,
/// channels innermost.
pub fn pyramid_ref(fm: &FeatureMap, [x0, y0, x1, y1]: [usize; 4], levels: &[usize]) -> Vec<f64> {
    let mut out = Vec::new();
    for &g in levels {
        for r in 0..g {
            for c in 0..g {
                let (sx0, sx1) = (x0 + split(c, x1 - x0, g), x0 + split(c + 1, x1 - x0, g));
                let (sy0, sy1) = (y0 + split(r, y1 - y0, g), y0 + split(r + 1, y1 - y0, g));
                for ch in 0..fm.channels() {
                    out.push(mean_ref(fm, ch, sx0, sy0, sx1, sy1));
                }
            }
        }
    }
    out
}

/// Shape `(w, h)` centred on `g`, corner rounded to the nearest cell.
fn centered(w: u32, h: u32, g: &BBox) -> BBox {
    let (cx, cy) = ((g.x0() + g.x1()) / 2.0, (g.y0() + g.y1()) / 2.0);
    let x0 = (cx - w as f64 / 2.0).round();
    let y0 = (cy - h as f64 / 2.0).round();
    bx(x0, y0, x0 + w as f64, y0 + h as f64)
}

/// `sum_alpha #{g : max over chosen shapes of IoU > alpha}`.
fn coverage_objective(chosen: &[(u32, u32)], gt: &[BBox], alphas: &[f64]) -> usize {
    let mut total = 0;
    for &a in alphas {
        for g in gt {
            if chosen.iter().any(|&(w, h)| iou_ref(&centered(w, h, g), g) > a) {
                total += 1;
            }
        }
    }
    total
}

/// Greedy selection that recomputes the full objective for every candidate
/// at every step. Ties: smaller area, then smaller width.
pub fn select_shapes_ref(gt: &[BBox], z: u32, k: usize, alphas: &[f64]) -> Vec<(u32, u32)> {
    let mut chosen: Vec<(u32, u32)> = Vec::new();
    let mut current = 0;
    while chosen.len() < k {
        let mut best: Option<((u32, u32), usize)> = None;
        for w in 1..=z {
            for h in 1..=z {
                if chosen.contains(&(w, h)) {
                    continue;
                }
                let mut trial = chosen.clone();
                trial.push((w, h));
                let obj = coverage_objective(&trial, gt, alphas);
                let better = match best {
                    None => true,
                    Some(((bw, bh), bo)) => {
                        obj > bo || (obj == bo && (w * h < bw * bh || (w * h == bw * bh && w < bw)))
                    }
                };
                if better {
                    best = Some(((w, h), obj));
                }
            }
        }
        match best {
            Some((s, obj)) if obj > current => {
                chosen.push(s);
                current = obj;
            }
            _ => break,
        }
    }
    chosen
}

/// Best total link score over every full-length path, or `None` when no
/// path has all links above the gate. A single frame scores 0.
pub fn best_path_ref(frames: &[Vec<(BBox, f64)>], gate: f64) -> Option<f64> {
    if frames.iter().any(Vec::is_empty) {
        return None;
    }
    let mut best: Option<f64> = None;
    let mut idx = vec![0usize; frames.len()];
    loop {
        let mut total = 0.0;
        let mut feasible = true;
        for t in 1..frames.len() {
            let (b1, c1) = frames[t - 1][idx[t - 1]];
            let (b2, c2) = frames[t][idx[t]];
            let o = iou_ref(&b1, &b2);
            if o <= gate {
                feasible = false;
                break;
            }
            total += c1 + c2 + o;
        }
        if feasible && best.is_none_or(|b| total > b) {
            best = Some(total);
        }
        // Odometer increment.
        let mut t = frames.len();
        loop {
            if t == 0 {
                return best;
            }
            t -= 1;
            idx[t] += 1;
            if idx[t] < frames[t].len() {
                break;
            }
            idx[t] = 0;
        }
    }
}

/// A box with integer corners inside `w x h`, at least `min` cells per side.
pub fn random_cell_box(rng: &mut ChaCha8Rng, w: usize, h: usize, min: usize) -> [usize; 4] {
    let bw = rng.random_range(min..=w);
    let bh = rng.random_range(min..=h);
    let x0 = rng.random_range(0..=w - bw);
    let y0 = rng.random_range(0..=h - bh);
    [x0, y0, x0 + bw, y0 + bh]
}

pub fn random_real_box(rng: &mut ChaCha8Rng, extent: f64) -> BBox {
    let x0 = rng.random_range(0.0..extent * 0.9);
    let y0 = rng.random_range(0.0..extent * 0.9);
    let w = rng.random_range(1.0..extent * 0.4);
    let h = rng.random_range(1.0..extent * 0.4);
    bx(x0, y0, x0 + w, y0 + h)
}
