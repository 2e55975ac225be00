//! Window-shape bank selection, sliding-window grids and window descriptors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featmap::{pyramid_pool_cells, IntegralImage, PyramidSpec};
use crate::geometry::{iou, BBox};

/// Window size in feature-map cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct WindowShape {
    pub w: u32,
    pub h: u32,
}

impl WindowShape {
    pub fn new(w: u32, h: u32) -> Self {
        WindowShape { w, h }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    /// The shape placed with its center on the center of `target`, snapped to
    /// the nearest cell.
    pub fn centered_on(&self, target: &BBox) -> BBox {
        let (cx, cy) = target.center();
        let x0 = (cx - self.w as f64 / 2.0).round();
        let y0 = (cy - self.h as f64 / 2.0).round();
        BBox::from_origin(x0, y0, self.w as f64, self.h as f64)
            .expect("window shapes have positive extent")
    }
}

impl From<[u32; 2]> for WindowShape {
    fn from([w, h]: [u32; 2]) -> Self {
        WindowShape { w, h }
    }
}

impl From<WindowShape> for [u32; 2] {
    fn from(s: WindowShape) -> Self {
        [s.w, s.h]
    }
}

pub const DEFAULT_POOL_BOUND: u32 = 20;
pub const DEFAULT_BANK_SIZE: usize = 50;

/// IoU levels summed by the selection objective: 0.50, 0.55, ..., 0.95.
pub fn default_alpha_grid() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

/// Ordered set of window shapes, in the order they were selected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeBank {
    pub pool_bound: u32,
    pub shapes: Vec<WindowShape>,
}

impl ShapeBank {
    pub fn new(pool_bound: u32, shapes: Vec<WindowShape>) -> Result<Self> {
        for (i, s) in shapes.iter().enumerate() {
            if s.w == 0 || s.h == 0 || s.w > pool_bound || s.h > pool_bound {
                return Err(Error::InvalidParameter(format!(
                    "shape {}x{} outside pool [1..{pool_bound}]",
                    s.w, s.h
                )));
            }
            if shapes[..i].contains(s) {
                return Err(Error::InvalidParameter(format!(
                    "duplicate shape {}x{}",
                    s.w, s.h
                )));
            }
        }
        Ok(ShapeBank { pool_bound, shapes })
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Fraction of `gt` boxes, averaged over `alpha_grid`, that some shape in
    /// the bank recalls at IoU > alpha when centered on the box. This is the
    /// best recall any sliding placement of the bank can reach (up to the one
    /// cell lost by snapping).
    pub fn recall_upper_bound(&self, gt: &[BBox], alpha_grid: &[f64]) -> f64 {
        if gt.is_empty() || alpha_grid.is_empty() {
            return 0.0;
        }
        let hits: usize = gt
            .iter()
            .map(|g| {
                let best = self
                    .shapes
                    .iter()
                    .map(|s| iou(&s.centered_on(g), g))
                    .fold(0.0, f64::max);
                levels_above(best, alpha_grid)
            })
            .sum();
        hits as f64 / (gt.len() * alpha_grid.len()) as f64
    }
}

/// Target short sides of the resized image, one feature-map scale each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScaleSet {
    pub sides: Vec<u32>,
}

impl ScaleSet {
    pub fn new(sides: Vec<u32>) -> Result<Self> {
        if sides.is_empty() || sides[0] == 0 || sides.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidParameter(format!(
                "scales must be positive and strictly increasing, got {sides:?}"
            )));
        }
        Ok(ScaleSet { sides })
    }

    pub fn len(&self) -> usize {
        self.sides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sides.is_empty()
    }

    /// Resize factor taking an image with the given size to scale `id`.
    pub fn resize_factor(&self, id: usize, width: u32, height: u32) -> f64 {
        self.sides[id] as f64 / width.min(height) as f64
    }
}

impl Default for ScaleSet {
    fn default() -> Self {
        ScaleSet {
            sides: vec![227, 300, 400, 600],
        }
    }
}

fn levels_above(v: f64, alpha_grid: &[f64]) -> usize {
    alpha_grid.iter().filter(|&&a| v > a).count()
}

/// Greedy forward selection of window shapes from the pool
/// `{1..=pool_bound}^2`.
///
/// Each step adds the shape with the largest gain in
/// `sum_alpha #{gt : max_chosen IoU(centered shape, gt) > alpha}`. Ties go to
/// the smaller area, then the smaller width. Selection stops after `k` shapes
/// or when no shape adds anything.
pub fn select_shapes(
    gt_boxes: &[BBox],
    pool_bound: u32,
    k: usize,
    alpha_grid: &[f64],
) -> Result<ShapeBank> {
    if gt_boxes.is_empty() {
        return Err(Error::EmptyInput("annotation boxes for shape selection"));
    }
    if k == 0 || pool_bound == 0 {
        return Err(Error::InvalidParameter(
            "bank size and pool bound must be >= 1".into(),
        ));
    }

    let mut pool: Vec<WindowShape> = (1..=pool_bound)
        .flat_map(|w| (1..=pool_bound).map(move |h| WindowShape::new(w, h)))
        .collect();
    pool.sort_by_key(|s| (s.area(), s.w));

    // IoU of every (shape, gt) pair under centered placement.
    let overlaps: Vec<Vec<f64>> = pool
        .iter()
        .map(|s| gt_boxes.iter().map(|g| iou(&s.centered_on(g), g)).collect())
        .collect();

    let mut best = vec![0.0f64; gt_boxes.len()];
    let mut taken = vec![false; pool.len()];
    let mut shapes = Vec::with_capacity(k);

    while shapes.len() < k {
        let mut choice: Option<(usize, usize)> = None;
        for (si, row) in overlaps.iter().enumerate() {
            if taken[si] {
                continue;
            }
            let gain: usize = row
                .iter()
                .zip(&best)
                .filter(|(&o, &b)| o > b)
                .map(|(&o, &b)| levels_above(o, alpha_grid) - levels_above(b, alpha_grid))
                .sum();
            // The pool is sorted by tie-break order, so only a strictly
            // larger gain replaces the incumbent.
            if gain > 0 && choice.is_none_or(|(_, g)| gain > g) {
                choice = Some((si, gain));
            }
        }
        let Some((si, _)) = choice else { break };
        taken[si] = true;
        for (b, &o) in best.iter_mut().zip(&overlaps[si]) {
            *b = b.max(o);
        }
        shapes.push(pool[si]);
    }

    ShapeBank::new(pool_bound, shapes)
}

/// Every placement of `shape` whose top-left corner lies on the `stride`
/// lattice and whose extent stays inside the map, in row-major order.
pub fn grid_positions(map_h: usize, map_w: usize, shape: WindowShape, stride: usize) -> Vec<BBox> {
    assert!(stride >= 1, "stride must be >= 1");
    let (w, h) = (shape.w as usize, shape.h as usize);
    if w == 0 || h == 0 || w > map_w || h > map_h {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(((map_h - h) / stride + 1) * ((map_w - w) / stride + 1));
    for y in (0..=map_h - h).step_by(stride) {
        for x in (0..=map_w - w).step_by(stride) {
            out.push(
                BBox::from_origin(x as f64, y as f64, w as f64, h as f64)
                    .expect("positive extent"),
            );
        }
    }
    out
}

/// What a window descriptor is made of.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DescriptorSpec {
    pub pyramid: PyramidSpec,
    pub size_bias: bool,
}

impl DescriptorSpec {
    /// Average pooling plus the size block; used by the coarse stage.
    pub fn flat() -> Self {
        DescriptorSpec {
            pyramid: PyramidSpec::flat(),
            size_bias: true,
        }
    }

    /// `1x1 + 2x2` pyramid plus the size block; used by the mid stage.
    pub fn pyramid() -> Self {
        DescriptorSpec {
            pyramid: PyramidSpec::two_level(),
            size_bias: true,
        }
    }

    pub fn len(&self, channels: usize) -> usize {
        self.pyramid.output_len(channels) + if self.size_bias { 3 } else { 0 }
    }
}

fn l2_normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

/// Pooled block and size block `(w, h, w*h)`, each l2-normalized on its own.
/// The size block uses the box extent in original-image pixels, obtained from
/// the ratio between `image_dims = (width, height)` and the map size.
pub fn assemble_descriptor(
    ii: &IntegralImage,
    b: &BBox,
    spec: &PyramidSpec,
    image_dims: (u32, u32),
) -> Result<Vec<f64>> {
    let cells = ii.cells_of(b)?;
    let dspec = DescriptorSpec {
        pyramid: spec.clone(),
        size_bias: true,
    };
    let mut out = Vec::with_capacity(dspec.len(ii.channels()));
    descriptor_into(ii, cells, &dspec, image_dims, &mut out)?;
    Ok(out)
}

/// Appends the descriptor of a validated cell rectangle to `out`.
pub(crate) fn descriptor_into(
    ii: &IntegralImage,
    cells: [usize; 4],
    spec: &DescriptorSpec,
    image_dims: (u32, u32),
    out: &mut Vec<f64>,
) -> Result<()> {
    let start = out.len();
    pyramid_pool_cells(ii, cells, &spec.pyramid, out)?;
    l2_normalize(&mut out[start..]);
    if spec.size_bias {
        let px_per_cell_x = image_dims.0 as f64 / ii.width() as f64;
        let px_per_cell_y = image_dims.1 as f64 / ii.height() as f64;
        let w = (cells[2] - cells[0]) as f64 * px_per_cell_x;
        let h = (cells[3] - cells[1]) as f64 * px_per_cell_y;
        let mut size = [w, h, w * h];
        l2_normalize(&mut size);
        out.extend_from_slice(&size);
    }
    Ok(())
}
