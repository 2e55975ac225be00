//! Feature-map tensors, summed-area tables and constant-time box pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

/// A `C x H x W` tensor stored channel-major, row-major within a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
    scale_factor: f64,
    layer_tag: String,
}

impl FeatureMap {
    /// Builds a map after checking the payload length, finiteness and the
    /// scale factor. Zero channels are allowed in memory (an empty operand
    /// for [`concat_maps`]); height and width must be positive.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
        scale_factor: f64,
        layer_tag: impl Into<String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::ShapeMismatch(format!(
                "feature map needs positive height and width, got {height}x{width}"
            )));
        }
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                got: data.len(),
            });
        }
        if !(scale_factor.is_finite() && scale_factor > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "scale factor must be positive, got {scale_factor}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(FeatureMap {
            channels,
            height,
            width,
            data,
            scale_factor,
            layer_tag: layer_tag.into(),
        })
    }

    pub fn zeros(
        channels: usize,
        height: usize,
        width: usize,
        scale_factor: f64,
        layer_tag: impl Into<String>,
    ) -> Result<Self> {
        FeatureMap::new(
            channels,
            height,
            width,
            vec![0.0; channels * height * width],
            scale_factor,
            layer_tag,
        )
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn scale_factor(&self) -> f64 {
        self.scale_factor
    }
    pub fn layer_tag(&self) -> &str {
        &self.layer_tag
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// Channel-wise concatenation (`a` channels first, then `b`).
pub fn concat_maps(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.height != b.height || a.width != b.width {
        return Err(Error::ShapeMismatch(format!(
            "cannot concatenate {}x{} with {}x{}",
            a.height, a.width, b.height, b.width
        )));
    }
    if (a.scale_factor - b.scale_factor).abs() > 1e-12 * a.scale_factor.max(b.scale_factor) {
        return Err(Error::ShapeMismatch(format!(
            "scale factors differ: {} vs {}",
            a.scale_factor, b.scale_factor
        )));
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    let tag = match (a.channels, b.channels) {
        (0, _) => b.layer_tag.clone(),
        (_, 0) => a.layer_tag.clone(),
        _ => a.layer_tag.clone(),
    };
    FeatureMap::new(
        a.channels + b.channels,
        a.height,
        a.width,
        data,
        a.scale_factor,
        tag,
    )
}

#[cfg(test)]
thread_local! {
    static LOOKUPS: std::cell::Cell<usize> = const { std::cell::Cell::new(0) };
}

/// Per-channel summed-area tables of size `(H+1) x (W+1)` in `f64`.
///
/// Entry `(y, x)` holds the sum of the source channel over `[0, x) x [0, y)`.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    channels: usize,
    height: usize,
    width: usize,
    table: Vec<f64>,
}

impl IntegralImage {
    pub fn build(fm: &FeatureMap) -> Self {
        let (h, w) = (fm.height, fm.width);
        let stride = w + 1;
        let plane = (h + 1) * stride;
        let mut table = vec![0.0f64; fm.channels * plane];
        for (c, sat) in table.chunks_mut(plane).enumerate() {
            let src = fm.channel(c);
            for y in 0..h {
                let mut row_sum = 0.0f64;
                for x in 0..w {
                    row_sum += src[y * w + x] as f64;
                    sat[(y + 1) * stride + x + 1] = sat[y * stride + x + 1] + row_sum;
                }
            }
        }
        IntegralImage {
            channels: fm.channels,
            height: h,
            width: w,
            table,
        }
    }

    /// Summed-area table of a single-channel `f64` field.
    pub(crate) fn from_plane(height: usize, width: usize, values: &[f64]) -> Self {
        debug_assert_eq!(values.len(), height * width);
        let stride = width + 1;
        let mut table = vec![0.0f64; (height + 1) * stride];
        for y in 0..height {
            let mut row_sum = 0.0;
            for x in 0..width {
                row_sum += values[y * width + x];
                table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row_sum;
            }
        }
        IntegralImage {
            channels: 1,
            height,
            width,
            table,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }

    /// Table entry `F(x, y)` for channel `c`.
    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        #[cfg(test)]
        LOOKUPS.with(|n| n.set(n.get() + 1));
        self.table[c * (self.height + 1) * (self.width + 1) + y * (self.width + 1) + x]
    }

    /// Sum of channel `c` over the cell rectangle `[x0, x1) x [y0, y1)`.
    #[inline]
    pub fn rect_sum(&self, c: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        self.at(c, y1, x1) - self.at(c, y1, x0) - self.at(c, y0, x1) + self.at(c, y0, x0)
    }

    /// Per-channel mean over a cell rectangle, appended to `out`. The caller
    /// guarantees a non-empty rectangle inside the map.
    #[inline]
    pub(crate) fn mean_cells_into(
        &self,
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        out: &mut Vec<f64>,
    ) {
        let inv_area = 1.0 / ((x1 - x0) * (y1 - y0)) as f64;
        for c in 0..self.channels {
            out.push(self.rect_sum(c, x0, y0, x1, y1) * inv_area);
        }
    }

    /// Validated cell corners of `b` on this table.
    pub fn cells_of(&self, b: &BBox) -> Result<[usize; 4]> {
        let cells = b
            .cell_corners()
            .ok_or_else(|| Error::OutOfBounds(format!("{:?}", b.corners())))?;
        if cells[2] > self.width || cells[3] > self.height {
            return Err(Error::OutOfBounds(format!("{:?}", b.corners())));
        }
        if cells[2] <= cells[0] || cells[3] <= cells[1] {
            return Err(Error::ZeroArea);
        }
        Ok(cells)
    }
}

/// Builds the summed-area table of every channel.
pub fn build_integral(fm: &FeatureMap) -> IntegralImage {
    IntegralImage::build(fm)
}

/// Mean of every channel inside `b`: four table lookups and one division per
/// channel whatever the box size.
pub fn avg_pool(ii: &IntegralImage, b: &BBox) -> Result<Vec<f64>> {
    let [x0, y0, x1, y1] = ii.cells_of(b)?;
    let mut out = Vec::with_capacity(ii.channels);
    ii.mean_cells_into(x0, y0, x1, y1, &mut out);
    Ok(out)
}

/// Grid sizes of a spatial pyramid, coarsest first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PyramidSpec {
    levels: Vec<usize>,
}

impl PyramidSpec {
    pub fn new(levels: Vec<usize>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidParameter("pyramid needs at least one level".into()));
        }
        if levels.contains(&0) {
            return Err(Error::InvalidParameter("pyramid grid sizes must be >= 1".into()));
        }
        Ok(PyramidSpec { levels })
    }

    /// `sp_level` 0, 1, 2 → grids {1}, {1,2}, {1,2,4}.
    pub fn from_sp_level(sp_level: u32) -> Self {
        PyramidSpec {
            levels: (0..=sp_level).map(|l| 1usize << l).collect(),
        }
    }

    /// Plain average pooling.
    pub fn flat() -> Self {
        PyramidSpec { levels: vec![1] }
    }

    /// `1x1 + 2x2`.
    pub fn two_level() -> Self {
        PyramidSpec { levels: vec![1, 2] }
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn cell_count(&self) -> usize {
        self.levels.iter().map(|g| g * g).sum()
    }

    pub fn finest(&self) -> usize {
        self.levels.iter().copied().max().unwrap_or(1)
    }

    pub fn output_len(&self, channels: usize) -> usize {
        channels * self.cell_count()
    }
}

/// Split points `round(i * len / g)` for `i = 0..=g`, offset by `start`.
fn split_points(start: usize, len: usize, g: usize) -> impl Iterator<Item = usize> {
    (0..=g).map(move |i| start + ((i * len) as f64 / g as f64).round() as usize)
}

/// Spatial-pyramid pooling: for every level, the box is cut into a `g x g`
/// grid and each sub-window is average pooled. Levels are concatenated in
/// order, sub-windows row-major within a level.
pub fn pyramid_pool(ii: &IntegralImage, b: &BBox, spec: &PyramidSpec) -> Result<Vec<f64>> {
    let cells = ii.cells_of(b)?;
    let mut out = Vec::with_capacity(spec.output_len(ii.channels));
    pyramid_pool_cells(ii, cells, spec, &mut out)?;
    Ok(out)
}

pub(crate) fn pyramid_pool_cells(
    ii: &IntegralImage,
    [x0, y0, x1, y1]: [usize; 4],
    spec: &PyramidSpec,
    out: &mut Vec<f64>,
) -> Result<()> {
    let (w, h) = (x1 - x0, y1 - y0);
    for (level, &g) in spec.levels.iter().enumerate() {
        if g > w || g > h {
            return Err(Error::PyramidTooSmall { level, grid: g });
        }
        let xs: Vec<usize> = split_points(x0, w, g).collect();
        let ys: Vec<usize> = split_points(y0, h, g).collect();
        for r in 0..g {
            for c in 0..g {
                ii.mean_cells_into(xs[c], ys[r], xs[c + 1], ys[r + 1], out);
            }
        }
    }
    Ok(())
}
