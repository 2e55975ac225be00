//! Dataset-level operations behind the command-line tool.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cascade::{run_cascade, ImageMaps, ModelSet, Proposal};
use crate::error::{Error, Result};
use crate::eval::{auc_and_budgets, average_recall, recall_vs_budget};
use crate::geometry::BBox;
use crate::io::dataset::{DatasetManifest, ManifestEntry};
use crate::io::{AnnotationFile, PipelineConfig, ProposalRow, TubeRecord, TubesFile, VideoTubes};
use crate::scoring::{LinearModel, MiningConfig};
use crate::synth::COARSE_CELL;
use crate::training::{gt_in_cells, train_stage_model, LabeledImage};
use crate::tubes::{extract_tubes_gated, FrameProposals};
use crate::windowing::{default_alpha_grid, select_shapes, ScaleSet, ShapeBank};

/// Window shapes selected from every annotated image box, measured in
/// coarse cells at every scale.
pub fn bank_from_annotations(
    ann: &AnnotationFile,
    scales: &ScaleSet,
    pool_bound: u32,
    count: usize,
) -> Result<ShapeBank> {
    let boxes: Vec<(BBox, u32, u32)> = ann
        .images
        .iter()
        .flat_map(|i| i.boxes.iter().map(move |b| (*b, i.width, i.height)))
        .collect();
    let cells = gt_in_cells(&boxes, scales, COARSE_CELL)?;
    select_shapes(&cells, pool_bound, count, &default_alpha_grid())
}

/// Loads the maps of the given manifest entries in parallel.
pub fn load_images(dir: &Path, manifest: &DatasetManifest, entries: &[&ManifestEntry]) -> Result<Vec<ImageMaps>> {
    entries
        .par_iter()
        .map(|e| {
            let maps = manifest.load_image(dir, e)?;
            check_scale_count(&maps, manifest.scales.len(), &e.id)?;
            Ok(maps)
        })
        .collect()
}

fn check_scale_count(maps: &ImageMaps, n: usize, id: &str) -> Result<()> {
    if maps.scales.len() != n {
        return Err(Error::ShapeMismatch(format!("{id}: {} scales, manifest lists {n}", maps.scales.len())));
    }
    Ok(())
}

/// One model per stage and scale scores every image, so channel counts must
/// agree across the dataset.
fn check_uniform_channels(maps: &[ImageMaps], entries: &[&ManifestEntry]) -> Result<()> {
    let sig = |m: &ImageMaps| -> Vec<(usize, usize)> {
        m.scales.iter().map(|s| (s.coarse.channels(), s.mid.channels())).collect()
    };
    let Some(first) = maps.first().map(sig) else { return Ok(()) };
    for (m, e) in maps.iter().zip(entries).skip(1) {
        if sig(m) != first {
            return Err(Error::ShapeMismatch(format!(
                "{}: channel counts {:?} differ from {}: {:?}",
                e.id,
                sig(m),
                entries[0].id,
                first
            )));
        }
    }
    Ok(())
}

/// A trained model with the channel count of the map it scores.
pub struct TrainedModel {
    pub stage: u8,
    pub model: LinearModel,
    pub channels: usize,
}

/// Trains the requested stages on every annotated image of the dataset.
/// `scale = None` trains every scale. Mining and training seeds come from
/// `seed`.
pub fn train_from_dir(
    dir: &Path,
    ann: &AnnotationFile,
    bank: &ShapeBank,
    stages: &[u8],
    scale: Option<usize>,
    seed: u64,
    cfg: &PipelineConfig,
) -> Result<Vec<TrainedModel>> {
    let manifest = DatasetManifest::read(dir)?;
    let n_scales = manifest.scales.len();
    if let Some(s) = scale {
        if s >= n_scales {
            return Err(Error::InvalidParameter(format!("scale {s} out of range (dataset has {n_scales})")));
        }
    }
    let mut entries = Vec::with_capacity(ann.images.len());
    for img in &ann.images {
        let e = manifest
            .entry(&img.id)
            .ok_or_else(|| Error::InvalidParameter(format!("annotated image {} is not in the tensor directory", img.id)))?;
        entries.push(e);
    }
    if entries.is_empty() {
        return Err(Error::EmptyInput("annotated images"));
    }
    let maps = load_images(dir, &manifest, &entries)?;
    check_uniform_channels(&maps, &entries)?;
    let labeled: Vec<LabeledImage> = maps
        .iter()
        .zip(&ann.images)
        .map(|(m, a)| LabeledImage { maps: m, gt: &a.boxes })
        .collect();
    let mining = MiningConfig { seed, ..cfg.mining.clone() };
    let train = crate::scoring::TrainConfig { seed, ..cfg.train.clone() };
    let scales: Vec<usize> = match scale {
        Some(s) => vec![s],
        None => (0..n_scales).collect(),
    };
    let jobs: Vec<(u8, usize)> = stages.iter().flat_map(|&st| scales.iter().map(move |&s| (st, s))).collect();
    jobs.par_iter()
        .map(|&(stage, s)| {
            let model = train_stage_model(&labeled, stage, s, bank, &mining, &train)?;
            let layer = &maps[0].scales[s];
            let channels = if stage == 1 { layer.coarse.channels() } else { layer.mid.channels() };
            Ok(TrainedModel { stage, model, channels })
        })
        .collect()
}

pub fn proposals_to_rows(image_id: &str, proposals: &[Proposal]) -> Vec<ProposalRow> {
    proposals
        .iter()
        .enumerate()
        .map(|(rank, p)| {
            let [x0, y0, x1, y1] = p.bbox.corners();
            ProposalRow {
                image_id: image_id.to_string(),
                rank,
                x0,
                y0,
                x1,
                y1,
                score: p.score,
            }
        })
        .collect()
}

/// Runs the cascade on every image of the dataset. `limit` truncates each
/// image's list.
pub fn propose_dir(
    dir: &Path,
    bank: &ShapeBank,
    models: &ModelSet,
    cfg: &PipelineConfig,
    limit: Option<usize>,
) -> Result<Vec<ProposalRow>> {
    cfg.validate()?;
    let manifest = DatasetManifest::read(dir)?;
    let per_image: Vec<Vec<ProposalRow>> = manifest
        .images
        .par_iter()
        .map(|e| {
            let maps = manifest.load_image(dir, e)?;
            check_scale_count(&maps, manifest.scales.len(), &e.id)?;
            let out = run_cascade(&maps, bank, models, cfg.edge_source, &cfg.cascade, &cfg.refine)?;
            let n = limit.unwrap_or(usize::MAX).min(out.proposals.len());
            Ok(proposals_to_rows(&e.id, &out.proposals[..n]))
        })
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().flatten().collect())
}

/// Rows grouped by image id, each group ordered by rank.
pub fn group_rows(rows: &[ProposalRow]) -> BTreeMap<&str, Vec<&ProposalRow>> {
    let mut groups: BTreeMap<&str, Vec<&ProposalRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.image_id.as_str()).or_default().push(r);
    }
    for g in groups.values_mut() {
        g.sort_by_key(|r| r.rank);
    }
    groups
}

/// Splits a frame id `<video>/<frame>` into its parts.
pub fn split_frame_id(id: &str) -> Result<(&str, usize)> {
    let (video, frame) = id
        .rsplit_once('/')
        .ok_or_else(|| Error::InvalidParameter(format!("image id {id:?} is not of the form <video>/<frame>")))?;
    let t = frame
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("frame index {frame:?} in {id:?} is not a number")))?;
    Ok((video, t))
}

/// Links the top `per_frame` proposals of every frame into at most
/// `max_tubes` tubes per video.
pub fn link_tubes_rows(rows: &[ProposalRow], per_frame: usize, max_tubes: usize, gate: f64) -> Result<TubesFile> {
    let mut videos: BTreeMap<&str, BTreeMap<usize, Vec<&ProposalRow>>> = BTreeMap::new();
    for (id, group) in group_rows(rows) {
        let (video, t) = split_frame_id(id)?;
        videos.entry(video).or_default().insert(t, group);
    }
    let out: Vec<VideoTubes> = videos
        .into_par_iter()
        .map(|(video, frames)| {
            let n = frames.keys().next_back().map_or(0, |t| t + 1);
            let mut lists = Vec::with_capacity(n);
            for t in 0..n {
                let entries = match frames.get(&t) {
                    Some(g) => g
                        .iter()
                        .take(per_frame)
                        .map(|r| Ok((r.bbox()?, r.score)))
                        .collect::<Result<Vec<_>>>()?,
                    None => Vec::new(),
                };
                lists.push(FrameProposals::new(t, entries)?);
            }
            let frame_ids: Vec<usize> = (0..n).collect();
            let tubes = extract_tubes_gated(&lists, max_tubes, gate)?;
            Ok(VideoTubes {
                video_id: video.to_string(),
                tubes: tubes.iter().map(|t| TubeRecord::from_tube(t, &frame_ids)).collect(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(TubesFile { videos: out })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub iou: f64,
    pub images: usize,
    pub gt_boxes: usize,
    pub budgets: Vec<usize>,
    pub recall: Vec<f64>,
    /// At the largest budget.
    pub average_recall: f64,
    pub auc: f64,
    pub n_at_25: Option<usize>,
    pub n_at_50: Option<usize>,
    pub n_at_75: Option<usize>,
}

/// Boxes of each annotated image in annotation order, with the matching
/// proposal lists. Proposals for unknown images are an error.
pub fn align_proposals(rows: &[ProposalRow], ann: &AnnotationFile) -> Result<(Vec<Vec<BBox>>, Vec<Vec<BBox>>)> {
    let groups = group_rows(rows);
    for id in groups.keys() {
        if ann.image(id).is_none() {
            return Err(Error::InvalidParameter(format!("proposals for unannotated image {id:?}")));
        }
    }
    let mut props = Vec::with_capacity(ann.images.len());
    let mut gt = Vec::with_capacity(ann.images.len());
    for img in &ann.images {
        let list = match groups.get(img.id.as_str()) {
            Some(g) => g.iter().map(|r| r.bbox()).collect::<Result<_>>()?,
            None => Vec::new(),
        };
        props.push(list);
        gt.push(img.boxes.clone());
    }
    Ok((props, gt))
}

pub fn eval_recall_rows(rows: &[ProposalRow], ann: &AnnotationFile, iou: f64, budgets: &[usize]) -> Result<RecallReport> {
    if !(0.0..=1.0).contains(&iou) {
        return Err(Error::InvalidParameter(format!("IoU threshold {iou} outside [0, 1]")));
    }
    if budgets.is_empty() {
        return Err(Error::EmptyInput("budget list"));
    }
    let (props, gt) = align_proposals(rows, ann)?;
    let curve = recall_vs_budget(&props, &gt, budgets, iou)?;
    let k = *budgets.iter().max().expect("non-empty");
    let summary = auc_and_budgets(&props, &gt, k, iou)?;
    Ok(RecallReport {
        iou,
        images: gt.len(),
        gt_boxes: gt.iter().map(Vec::len).sum(),
        budgets: budgets.to_vec(),
        recall: curve.points.iter().map(|p| p.1).collect(),
        average_recall: average_recall(&props, &gt, k)?,
        auc: summary.auc,
        n_at_25: summary.n_at_25,
        n_at_50: summary.n_at_50,
        n_at_75: summary.n_at_75,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeReport {
    pub ovr: f64,
    pub max_tubes: Option<usize>,
    pub videos: usize,
    pub gt_tubes: usize,
    pub action_recall: f64,
}

/// Action recall of the stored tubes against the annotated videos, using
/// each video's top `k` tubes (all when `None`).
pub fn eval_tubes_file(tubes: &TubesFile, ann: &AnnotationFile, ovr: f64, k: Option<usize>) -> Result<TubeReport> {
    for v in &tubes.videos {
        if !ann.videos.iter().any(|a| a.id == v.video_id) {
            return Err(Error::InvalidParameter(format!("tubes for unannotated video {:?}", v.video_id)));
        }
    }
    let mut props = Vec::with_capacity(ann.videos.len());
    let mut gts = Vec::with_capacity(ann.videos.len());
    for a in &ann.videos {
        let list = match tubes.videos.iter().find(|v| v.video_id == a.id) {
            Some(v) => v
                .tubes
                .iter()
                .map(|t| t.to_tube(a.frames).map_err(|d| Error::InvalidParameter(format!("{}: {d}", a.id))))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        props.push(list);
        gts.push(a.tubes.clone());
    }
    let recall = crate::eval::action_recall(&props, &gts, k.unwrap_or(usize::MAX), ovr)?;
    Ok(TubeReport {
        ovr,
        max_tubes: k,
        videos: gts.len(),
        gt_tubes: gts.iter().map(Vec::len).sum(),
        action_recall: recall,
    })
}
