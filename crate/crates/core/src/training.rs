//! Sample mining and per-scale model training over a set of images.

use rayon::prelude::*;

use crate::cascade::{transfer_to_map, ImageMaps, ModelSet};
use crate::error::{Error, Result};
use crate::featmap::build_integral;
use crate::geometry::BBox;
use crate::scoring::{mine_samples, train_linear, LinearModel, MiningConfig, TrainConfig};
use crate::windowing::{descriptor_into, grid_positions, DescriptorSpec, ScaleSet, ShapeBank};

/// An image's maps with its ground-truth boxes in image pixels.
pub struct LabeledImage<'a> {
    pub maps: &'a ImageMaps,
    pub gt: &'a [BBox],
}

/// Descriptor used by each cascade stage.
pub fn stage_descriptor(stage: u8) -> Result<DescriptorSpec> {
    match stage {
        1 => Ok(DescriptorSpec::flat()),
        2 => Ok(DescriptorSpec::pyramid()),
        _ => Err(Error::InvalidParameter(format!("stage must be 1 or 2, got {stage}"))),
    }
}

/// Mining seed for one (image, scale) pair.
fn mining_seed(base: u64, image: usize, scale: usize) -> u64 {
    base ^ ((image as u64) << 20 | scale as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Bank windows on the coarse map of `scale`, in image pixels. These are
/// the candidates both stages mine from.
pub fn candidate_windows(image: &ImageMaps, scale: usize, bank: &ShapeBank, stride: usize) -> Result<Vec<BBox>> {
    let map = &image.scales[scale].coarse;
    let sx = image.width as f64 / map.width() as f64;
    let sy = image.height as f64 / map.height() as f64;
    bank.shapes
        .iter()
        .flat_map(|&s| grid_positions(map.height(), map.width(), s, stride))
        .map(|b| b.scale_xy(sx, sy))
        .collect()
}

/// Positive and negative descriptors mined from one image at one scale.
pub fn image_samples(
    image: &LabeledImage,
    image_index: usize,
    scale: usize,
    stage: u8,
    bank: &ShapeBank,
    mining: &MiningConfig,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let spec = stage_descriptor(stage)?;
    if scale >= image.maps.scales.len() {
        return Err(Error::InvalidParameter(format!(
            "scale {scale} missing (image has {})",
            image.maps.scales.len()
        )));
    }
    let candidates = candidate_windows(image.maps, scale, bank, 1)?;
    let cfg = MiningConfig {
        seed: mining_seed(mining.seed, image_index, scale),
        ..mining.clone()
    };
    let mined = mine_samples(&candidates, image.gt, &cfg);
    let maps = &image.maps.scales[scale];
    let map = if stage == 1 { &maps.coarse } else { &maps.mid };
    let ii = build_integral(map);
    let dims = image.maps.dims();
    let describe = |i: &usize| -> Result<Vec<f64>> {
        let cells = transfer_to_map(&candidates[*i], map, dims, spec.pyramid.finest())?;
        let mut v = Vec::with_capacity(spec.len(map.channels()));
        descriptor_into(&ii, cells, &spec, dims, &mut v)?;
        Ok(v)
    };
    let pos = mined.positives.iter().map(describe).collect::<Result<_>>()?;
    let neg = mined.negatives.iter().map(describe).collect::<Result<_>>()?;
    Ok((pos, neg))
}

/// Trains the stage model of one scale on all images.
pub fn train_stage_model(
    images: &[LabeledImage],
    stage: u8,
    scale: usize,
    bank: &ShapeBank,
    mining: &MiningConfig,
    train: &TrainConfig,
) -> Result<LinearModel> {
    mining.validate()?;
    let per_image: Vec<_> = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| image_samples(img, i, scale, stage, bank, mining))
        .collect::<Result<_>>()?;
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (p, n) in per_image {
        pos.extend(p);
        neg.extend(n);
    }
    train_linear(&pos, &neg, train, scale, stage_descriptor(stage)?)
}

/// Both stages at every scale.
pub fn train_models(
    images: &[LabeledImage],
    n_scales: usize,
    bank: &ShapeBank,
    mining: &MiningConfig,
    train: &TrainConfig,
) -> Result<ModelSet> {
    let jobs: Vec<(u8, usize)> = [1u8, 2].iter().flat_map(|&st| (0..n_scales).map(move |s| (st, s))).collect();
    let models: Vec<(u8, LinearModel)> = jobs
        .par_iter()
        .map(|&(stage, scale)| Ok((stage, train_stage_model(images, stage, scale, bank, mining, train)?)))
        .collect::<Result<_>>()?;
    let mut set = ModelSet::default();
    for (stage, m) in models {
        if stage == 1 {
            set.stage1.push(m);
        } else {
            set.stage2.push(m);
        }
    }
    Ok(set)
}

/// Ground-truth boxes in coarse cells at every scale, the space window
/// shapes are selected in. `cell` is the image-pixel size of a coarse cell
/// at the resized resolution.
pub fn gt_in_cells(boxes: &[(BBox, u32, u32)], scales: &ScaleSet, cell: f64) -> Result<Vec<BBox>> {
    let mut out = Vec::with_capacity(boxes.len() * scales.len());
    for k in 0..scales.len() {
        for (b, w, h) in boxes {
            let f = scales.resize_factor(k, *w, *h) / cell;
            out.push(b.scale_xy(f, f)?);
        }
    }
    Ok(out)
}
