//! Proposal and action-proposal recall metrics.
//!
//! A ground-truth box counts as recalled when any of the image's top-`k`
//! proposals reaches the IoU threshold. There is no one-to-one assignment:
//! one proposal may recall several ground-truth boxes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};
use crate::tubes::{tube_overlap, GroundTruthTube, Tube};

/// IoU thresholds `start, start + step, ..., end` (inclusive), built from
/// integer hundredths so grid points are exact decimals.
pub fn iou_grid(start_pct: u32, end_pct: u32, step_pct: u32) -> Vec<f64> {
    assert!(step_pct > 0 && start_pct <= end_pct);
    (start_pct..=end_pct)
        .step_by(step_pct as usize)
        .map(|p| p as f64 / 100.0)
        .collect()
}

/// Grid used for average recall: 0.50 to 1.00 in steps of 0.01.
pub fn average_recall_grid() -> Vec<f64> {
    iou_grid(50, 100, 1)
}

/// Grid used for the area under the recall-vs-IoU curve: 0 to 1 by 0.01.
pub fn auc_grid() -> Vec<f64> {
    iou_grid(0, 100, 1)
}

/// Grid used for reported curves: 0.50 to 1.00 by 0.05.
pub fn report_grid() -> Vec<f64> {
    iou_grid(50, 100, 5)
}

/// Recall sampled along an axis (proposal budget or IoU threshold).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallCurve {
    pub points: Vec<(f64, f64)>,
}

/// IoU of every ground-truth box with each ranked proposal of its image,
/// kept per ground truth as a running maximum over rank.
struct CoverageTable {
    /// `best[g][r]`: best IoU of ground truth `g` among proposals `0..=r`.
    best: Vec<Vec<f64>>,
}

impl CoverageTable {
    fn build(proposals: &[Vec<BBox>], gt: &[Vec<BBox>]) -> Result<Self> {
        if proposals.len() != gt.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} proposal lists for {} annotated images",
                proposals.len(),
                gt.len()
            )));
        }
        if gt.iter().all(Vec::is_empty) {
            return Err(Error::EmptyInput("ground-truth boxes"));
        }
        let mut best = Vec::new();
        for (props, boxes) in proposals.iter().zip(gt) {
            for g in boxes {
                let mut run = 0.0f64;
                best.push(
                    props
                        .iter()
                        .map(|p| {
                            run = run.max(iou(p, g));
                            run
                        })
                        .collect(),
                );
            }
        }
        Ok(CoverageTable { best })
    }

    fn recall(&self, k: usize, thr: f64) -> f64 {
        if k == 0 {
            return 0.0;
        }
        let hit = self
            .best
            .iter()
            .filter(|row| row.get(k.min(row.len()).wrapping_sub(1)).is_some_and(|&v| v >= thr))
            .count();
        hit as f64 / self.best.len() as f64
    }

    /// Smallest budget whose recall at `thr` reaches `target`.
    fn budget_for(&self, target: f64, thr: f64) -> Option<usize> {
        let total = self.best.len();
        let needed = ((target * total as f64) - 1e-9).ceil().max(0.0) as usize;
        if needed == 0 {
            return Some(0);
        }
        let mut first: Vec<usize> = self
            .best
            .iter()
            .filter_map(|row| row.iter().position(|&v| v >= thr))
            .map(|r| r + 1)
            .collect();
        if first.len() < needed {
            return None;
        }
        first.sort_unstable();
        Some(first[needed - 1])
    }
}

/// Fraction of ground-truth boxes covered at IoU >= `iou_thr` by the top `k`
/// proposals of their image.
pub fn recall_at(proposals: &[Vec<BBox>], gt: &[Vec<BBox>], k: usize, iou_thr: f64) -> Result<f64> {
    Ok(CoverageTable::build(proposals, gt)?.recall(k, iou_thr))
}

/// Recall at each threshold of `thr_grid` for a fixed budget.
pub fn recall_vs_iou(
    proposals: &[Vec<BBox>],
    gt: &[Vec<BBox>],
    k: usize,
    thr_grid: &[f64],
) -> Result<RecallCurve> {
    let table = CoverageTable::build(proposals, gt)?;
    Ok(RecallCurve {
        points: thr_grid.iter().map(|&t| (t, table.recall(k, t))).collect(),
    })
}

/// Recall at each budget for a fixed threshold.
pub fn recall_vs_budget(
    proposals: &[Vec<BBox>],
    gt: &[Vec<BBox>],
    budgets: &[usize],
    iou_thr: f64,
) -> Result<RecallCurve> {
    let table = CoverageTable::build(proposals, gt)?;
    Ok(RecallCurve {
        points: budgets
            .iter()
            .map(|&k| (k as f64, table.recall(k, iou_thr)))
            .collect(),
    })
}

/// Mean recall over IoU thresholds 0.50, 0.51, ..., 1.00.
pub fn average_recall(proposals: &[Vec<BBox>], gt: &[Vec<BBox>], k: usize) -> Result<f64> {
    let grid = average_recall_grid();
    let curve = recall_vs_iou(proposals, gt, k, &grid)?;
    Ok(curve.points.iter().map(|p| p.1).sum::<f64>() / grid.len() as f64)
}

/// Trapezoidal area under a curve given as `(x, y)` points sorted by `x`.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum()
}

/// Area under recall-vs-IoU and the budgets needed for 25/50/75 % recall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSummary {
    pub auc: f64,
    /// `None` when the target recall is never reached.
    pub n_at_25: Option<usize>,
    pub n_at_50: Option<usize>,
    pub n_at_75: Option<usize>,
}

/// AUC of recall vs IoU over `[0, 1]` at budget `k`, and N@25/50/75 % at
/// `iou_thr` over the full ranked lists.
pub fn auc_and_budgets(
    proposals: &[Vec<BBox>],
    gt: &[Vec<BBox>],
    k: usize,
    iou_thr: f64,
) -> Result<BudgetSummary> {
    let table = CoverageTable::build(proposals, gt)?;
    let points: Vec<(f64, f64)> = auc_grid().into_iter().map(|t| (t, table.recall(k, t))).collect();
    Ok(BudgetSummary {
        auc: trapezoid_area(&points),
        n_at_25: table.budget_for(0.25, iou_thr),
        n_at_50: table.budget_for(0.50, iou_thr),
        n_at_75: table.budget_for(0.75, iou_thr),
    })
}

/// Fraction of ground-truth tubes whose overlap with some of the top `k`
/// tubes of their video reaches `ovr_thr`.
pub fn action_recall(
    tubes: &[Vec<Tube>],
    gt_tubes: &[Vec<GroundTruthTube>],
    k: usize,
    ovr_thr: f64,
) -> Result<f64> {
    if tubes.len() != gt_tubes.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} tube lists for {} annotated videos",
            tubes.len(),
            gt_tubes.len()
        )));
    }
    let total: usize = gt_tubes.iter().map(Vec::len).sum();
    if total == 0 {
        return Err(Error::EmptyInput("ground-truth tubes"));
    }
    let mut hit = 0usize;
    for (props, gts) in tubes.iter().zip(gt_tubes) {
        for g in gts {
            for p in props.iter().take(k) {
                if tube_overlap(p, g)? >= ovr_thr {
                    hit += 1;
                    break;
                }
            }
        }
    }
    Ok(hit as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x0: f64, y0: f64, x1: f64, y1: f64) -> BBox {
        BBox::new(x0, y0, x1, y1).unwrap()
    }

    #[test]
    fn grids() {
        assert_eq!(average_recall_grid().len(), 51);
        assert_eq!(auc_grid().len(), 101);
        assert_eq!(report_grid(), vec![0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 1.0]);
    }

    #[test]
    fn perfect_and_empty() {
        let gt = vec![vec![bx(0.0, 0.0, 5.0, 5.0), bx(10.0, 10.0, 20.0, 20.0)]];
        assert_eq!(recall_at(&gt, &gt, 2, 1.0).unwrap(), 1.0);
        assert_eq!(recall_at(&gt, &gt, 0, 0.5).unwrap(), 0.0);
        assert_eq!(average_recall(&gt, &gt, 5).unwrap(), 1.0);
        assert_eq!(average_recall(&[vec![]], &gt, 5).unwrap(), 0.0);
        assert!(recall_at(&[vec![]], &[vec![]], 1, 0.5).is_err());
        let s = auc_and_budgets(&gt, &gt, 1000, 0.7).unwrap();
        assert!((s.auc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_fixture() {
        // Image 0: gt A matched by rank 1 at IoU 1; gt B only partially (IoU 25/175).
        // Image 1: gt C matched by rank 0 at IoU 0.5.
        // Image 2: gt D with no proposals.
        let gt = vec![
            vec![bx(0.0, 0.0, 10.0, 10.0), bx(50.0, 50.0, 60.0, 60.0)],
            vec![bx(0.0, 0.0, 10.0, 10.0)],
            vec![bx(0.0, 0.0, 4.0, 4.0)],
        ];
        let props = vec![
            vec![bx(55.0, 55.0, 65.0, 65.0), bx(0.0, 0.0, 10.0, 10.0)],
            vec![bx(0.0, 0.0, 10.0, 5.0)],
            vec![],
        ];
        assert_eq!(recall_at(&props, &gt, 1, 0.5).unwrap(), 1.0 / 4.0);
        assert_eq!(recall_at(&props, &gt, 2, 0.5).unwrap(), 2.0 / 4.0);
        assert_eq!(recall_at(&props, &gt, 2, 0.7).unwrap(), 1.0 / 4.0);
        assert_eq!(recall_at(&props, &gt, 2, 0.1).unwrap(), 3.0 / 4.0);
        assert_eq!(recall_at(&props, &gt, 2, 0.0).unwrap(), 3.0 / 4.0);
    }

    #[test]
    fn budget_fixture() {
        // Ten images, one gt each; the gt of image i is first covered at rank i.
        let gt: Vec<Vec<BBox>> = (0..10).map(|_| vec![bx(0.0, 0.0, 10.0, 10.0)]).collect();
        let props: Vec<Vec<BBox>> = (0..10)
            .map(|i| {
                let mut v = vec![bx(50.0, 50.0, 60.0, 60.0); i];
                v.push(bx(0.0, 0.0, 10.0, 10.0));
                v
            })
            .collect();
        // 50 % recall needs five gts: ranks 0..4, so budget 5.
        let s = auc_and_budgets(&props, &gt, 1000, 0.7).unwrap();
        assert_eq!(s.n_at_25, Some(3));
        assert_eq!(s.n_at_50, Some(5));
        assert_eq!(s.n_at_75, Some(8));
        let half = &props[..4];
        let s = auc_and_budgets(half, &gt[..4], 1000, 0.7).unwrap();
        assert_eq!(s.n_at_75, Some(3));
        let none: Vec<Vec<BBox>> = vec![vec![]; 4];
        assert_eq!(auc_and_budgets(&none, &gt[..4], 1000, 0.7).unwrap().n_at_75, None);
    }

    #[test]
    fn action_recall_cases() {
        let track: Vec<BBox> = (0..5).map(|t| bx(t as f64, 0.0, t as f64 + 10.0, 10.0)).collect();
        let tube = Tube { boxes: track.clone(), indices: vec![0; 5], path_score: 1.0 };
        let g = GroundTruthTube::new(track.iter().copied().map(Some).collect()).unwrap();
        let other = GroundTruthTube::new(vec![Some(bx(80.0, 80.0, 90.0, 90.0)); 5]).unwrap();
        let tubes = vec![vec![tube.clone()], vec![tube]];
        let gts = vec![vec![g.clone()], vec![g, other]];
        assert_eq!(action_recall(&tubes, &gts, 0, 0.5).unwrap(), 0.0);
        assert!((action_recall(&tubes, &gts, 1, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!(action_recall(&tubes, &[vec![], vec![]], 1, 0.5).is_err());
    }
}
