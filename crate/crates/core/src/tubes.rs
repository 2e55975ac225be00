//! Linking per-frame proposals into action tubes.
//!
//! Consecutive boxes are linked with `S = C(a) + C(b) + IoU(a, b)` when their
//! IoU clears the gate and `-inf` otherwise. The best full-length path is
//! found by Viterbi; further tubes come from removing the used boxes and
//! solving again.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BBox};

pub const DEFAULT_LINK_IOU: f64 = 0.5;

/// Candidate boxes of frame `t` with their confidences.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameProposals {
    pub t: usize,
    pub entries: Vec<(BBox, f64)>,
}

impl FrameProposals {
    pub fn new(t: usize, entries: Vec<(BBox, f64)>) -> Result<Self> {
        if entries.iter().any(|(_, c)| !c.is_finite()) {
            return Err(Error::NonFinite("frame confidences"));
        }
        Ok(FrameProposals { t, entries })
    }
}

/// One box per frame, plus the index of that box in its frame's list.
#[derive(Debug, Clone, PartialEq)]
pub struct Tube {
    pub boxes: Vec<BBox>,
    pub indices: Vec<usize>,
    pub path_score: f64,
}

impl Tube {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Ground-truth track; `None` marks frames without the action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Option<BBox>>", into = "Vec<Option<BBox>>")]
pub struct GroundTruthTube {
    boxes: Vec<Option<BBox>>,
}

impl GroundTruthTube {
    pub fn new(boxes: Vec<Option<BBox>>) -> Result<Self> {
        if boxes.iter().all(Option::is_none) {
            return Err(Error::EmptyInput("ground-truth tube without any box"));
        }
        Ok(GroundTruthTube { boxes })
    }

    pub fn boxes(&self) -> &[Option<BBox>] {
        &self.boxes
    }
}

impl TryFrom<Vec<Option<BBox>>> for GroundTruthTube {
    type Error = Error;
    fn try_from(v: Vec<Option<BBox>>) -> Result<Self> {
        GroundTruthTube::new(v)
    }
}

impl From<GroundTruthTube> for Vec<Option<BBox>> {
    fn from(g: GroundTruthTube) -> Self {
        g.boxes
    }
}

/// `c1 + c2 + IoU(b1, b2)` if the IoU exceeds `gate`, else `-inf`.
pub fn link_score_gated(b1: &BBox, c1: f64, b2: &BBox, c2: f64, gate: f64) -> f64 {
    let o = iou(b1, b2);
    if o > gate {
        c1 + c2 + o
    } else {
        f64::NEG_INFINITY
    }
}

/// [`link_score_gated`] with the default 0.5 gate.
pub fn link_score(b1: &BBox, c1: f64, b2: &BBox, c2: f64) -> f64 {
    link_score_gated(b1, c1, b2, c2, DEFAULT_LINK_IOU)
}

/// Highest-scoring full-length path, or `None` if every path has a `-inf`
/// link (or some frame is empty). Ties go to the lowest box index.
pub fn best_path(frames: &[FrameProposals]) -> Result<Option<Tube>> {
    best_path_gated(frames, DEFAULT_LINK_IOU)
}

pub fn best_path_gated(frames: &[FrameProposals], gate: f64) -> Result<Option<Tube>> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("frame list"));
    }
    if frames.iter().any(|f| f.entries.is_empty()) {
        return Ok(None);
    }

    if frames.len() == 1 {
        let entries = &frames[0].entries;
        let mut best = 0;
        for (i, (_, c)) in entries.iter().enumerate() {
            if *c > entries[best].1 {
                best = i;
            }
        }
        return Ok(Some(Tube {
            boxes: vec![entries[best].0],
            indices: vec![best],
            path_score: 0.0,
        }));
    }

    // value[j]: best score of a path ending at box j of the current frame.
    let mut value: Vec<f64> = vec![0.0; frames[0].entries.len()];
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(frames.len() - 1);

    for pair in frames.windows(2) {
        let (prev, cur) = (&pair[0].entries, &pair[1].entries);
        let mut next = vec![f64::NEG_INFINITY; cur.len()];
        let mut arg = vec![0usize; cur.len()];
        for (j, (bj, cj)) in cur.iter().enumerate() {
            for (i, (bi, ci)) in prev.iter().enumerate() {
                if value[i] == f64::NEG_INFINITY {
                    continue;
                }
                let v = value[i] + link_score_gated(bi, *ci, bj, *cj, gate);
                if v > next[j] {
                    next[j] = v;
                    arg[j] = i;
                }
            }
        }
        back.push(arg);
        value = next;
    }

    let mut end = 0;
    for (j, v) in value.iter().enumerate() {
        if *v > value[end] {
            end = j;
        }
    }
    if value[end] == f64::NEG_INFINITY {
        return Ok(None);
    }

    let mut indices = vec![0usize; frames.len()];
    indices[frames.len() - 1] = end;
    for t in (1..frames.len()).rev() {
        indices[t - 1] = back[t - 1][indices[t]];
    }
    let boxes = indices
        .iter()
        .zip(frames)
        .map(|(&i, f)| f.entries[i].0)
        .collect();
    Ok(Some(Tube {
        boxes,
        indices,
        path_score: value[end],
    }))
}

/// Repeatedly takes the best path and removes its boxes, until no feasible
/// path is left or `max_tubes` tubes are found. Tube indices refer to the
/// original frame lists.
pub fn extract_tubes(frames: &[FrameProposals], max_tubes: usize) -> Result<Vec<Tube>> {
    extract_tubes_gated(frames, max_tubes, DEFAULT_LINK_IOU)
}

pub fn extract_tubes_gated(
    frames: &[FrameProposals],
    max_tubes: usize,
    gate: f64,
) -> Result<Vec<Tube>> {
    if frames.is_empty() {
        return Err(Error::EmptyInput("frame list"));
    }
    // Remaining entries with their original indices.
    let mut alive: Vec<Vec<usize>> = frames
        .iter()
        .map(|f| (0..f.entries.len()).collect())
        .collect();
    let mut tubes = Vec::new();

    while tubes.len() < max_tubes {
        let view: Vec<FrameProposals> = frames
            .iter()
            .zip(&alive)
            .map(|(f, ids)| FrameProposals {
                t: f.t,
                entries: ids.iter().map(|&i| f.entries[i]).collect(),
            })
            .collect();
        let Some(mut tube) = best_path_gated(&view, gate)? else {
            break;
        };
        for (t, local) in tube.indices.iter_mut().enumerate() {
            let original = alive[t].remove(*local);
            *local = original;
        }
        tubes.push(tube);
    }
    Ok(tubes)
}

/// Mean per-frame IoU over the frames where the proposal or the ground truth
/// has a box. Frames without a ground-truth box count as zero overlap.
pub fn tube_overlap(p: &Tube, g: &GroundTruthTube) -> Result<f64> {
    let frames = p.boxes.len().max(g.boxes.len());
    let mut considered = 0usize;
    let mut total = 0.0;
    for t in 0..frames {
        let pb = p.boxes.get(t);
        let gb = g.boxes.get(t).copied().flatten();
        match (pb, gb) {
            (None, None) => {}
            (Some(a), Some(b)) => {
                considered += 1;
                total += iou(a, &b);
            }
            _ => considered += 1,
        }
    }
    if considered == 0 {
        return Err(Error::EmptyInput("tube overlap over zero frames"));
    }
    Ok(total / considered as f64)
}
