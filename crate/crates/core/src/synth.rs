//! Synthetic planted-object data.
//!
//! Each image holds non-overlapping rectangles. On the coarse and mid layers
//! an object adds its one-cell contour ring to channel 0 and the coverage of
//! the remaining interior (amplitude 1.0) to a random subset of half the
//! channels `1..C`. Ring and interior are disjoint. The fine layer
//! holds filled rectangles only, so its gradient traces the outlines. The
//! background is rectified Gaussian noise, which is exactly zero at noise
//! level 0. Video frames append two motion channels (|vx|, |vy| coverage) to
//! the coarse and mid layers.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cascade::{ImageMaps, ScaleMaps, StageLayers};
use crate::error::{Error, Result};
use crate::featmap::{concat_maps, FeatureMap};
use crate::geometry::BBox;
use crate::io::dataset::{DatasetManifest, ManifestEntry};
use crate::io::{AnnotationFile, ImageAnnotation, VideoAnnotation};
use crate::refine::edge_from_features;
use crate::tubes::GroundTruthTube;
use crate::windowing::ScaleSet;

/// Image pixels per coarse cell at every scale.
pub const COARSE_CELL: f64 = 16.0;
pub const COARSE_CHANNELS: usize = 8;
pub const MID_CHANNELS: usize = 8;
pub const FINE_CHANNELS: usize = 4;
pub const MOTION_CHANNELS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub images: usize,
    pub objects_per_image: usize,
    pub noise_level: f64,
    pub videos: usize,
    pub frames: usize,
    pub actors_per_video: usize,
    pub min_side: u32,
    pub max_side: u32,
    pub scales: ScaleSet,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            images: 10,
            objects_per_image: 3,
            noise_level: 0.3,
            videos: 0,
            frames: 20,
            actors_per_video: 2,
            min_side: 160,
            max_side: 320,
            scales: ScaleSet::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects_per_image == 0 || self.actors_per_video == 0 {
            return Err(Error::InvalidParameter("need at least one object per image or video".into()));
        }
        if !(self.noise_level.is_finite() && self.noise_level >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise level {}", self.noise_level)));
        }
        if self.min_side < 64 || self.max_side < self.min_side {
            return Err(Error::InvalidParameter(format!(
                "image sides must satisfy 64 <= min <= max, got {}..{}",
                self.min_side, self.max_side
            )));
        }
        if self.videos > 0 && self.frames == 0 {
            return Err(Error::InvalidParameter("videos need at least one frame".into()));
        }
        Ok(())
    }
}

/// One planted object: its box and the channels it lights up.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedObject {
    pub bbox: BBox,
    pub coarse_channels: Vec<usize>,
    pub mid_channels: Vec<usize>,
    pub fine_channels: Vec<usize>,
    /// Pixels per frame; zero for still images.
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub objects: Vec<PlantedObject>,
    pub maps: ImageMaps,
}

#[derive(Debug, Clone)]
pub struct SynthVideo {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub frames: Vec<SynthImage>,
    pub tubes: Vec<GroundTruthTube>,
}

#[derive(Debug, Clone, Default)]
pub struct SynthDataset {
    pub images: Vec<SynthImage>,
    pub videos: Vec<SynthVideo>,
}

/// Coarse map size `(H, W)` of an image at scale `k`.
pub fn coarse_dims(scales: &ScaleSet, k: usize, width: u32, height: u32) -> (usize, usize) {
    let f = scales.resize_factor(k, width, height);
    let cells = |side: u32| ((side as f64 * f / COARSE_CELL).round() as usize).max(3);
    (cells(height), cells(width))
}

/// Length of `[a0, a1) ∩ [i, i + 1)`.
fn overlap(a0: f64, a1: f64, i: usize) -> f64 {
    (a1.min(i as f64 + 1.0) - a0.max(i as f64)).max(0.0)
}

/// Adds `amp * coverage(b)` to `plane` (an `h x w` grid of cells).
fn add_coverage(plane: &mut [f32], h: usize, w: usize, b: &BBox, amp: f64) {
    let x_lo = b.x0().floor().max(0.0) as usize;
    let x_hi = (b.x1().ceil() as usize).min(w);
    let y_lo = b.y0().floor().max(0.0) as usize;
    let y_hi = (b.y1().ceil() as usize).min(h);
    for y in y_lo..y_hi {
        let oy = overlap(b.y0(), b.y1(), y);
        for x in x_lo..x_hi {
            plane[y * w + x] += (amp * oy * overlap(b.x0(), b.x1(), x)) as f32;
        }
    }
}

struct Layer<'a> {
    channels: usize,
    h: usize,
    w: usize,
    tag: &'a str,
    sx: f64,
    sy: f64,
}

fn render_layer(
    layer: &Layer,
    objects: &[PlantedObject],
    pick: impl Fn(&PlantedObject) -> &[usize],
    contour: bool,
    noise: f64,
    rng: &mut ChaCha8Rng,
    image_w: u32,
) -> Result<FeatureMap> {
    let plane = layer.h * layer.w;
    let mut data = vec![0.0f32; layer.channels * plane];
    for o in objects {
        let b = o.bbox.scale_xy(layer.sx, layer.sy)?;
        let inner = if contour && b.width() > 2.0 && b.height() > 2.0 {
            Some(BBox::new(b.x0() + 1.0, b.y0() + 1.0, b.x1() - 1.0, b.y1() - 1.0)?)
        } else {
            None
        };
        let body = inner.as_ref().unwrap_or(&b);
        for &c in pick(o) {
            add_coverage(&mut data[c * plane..(c + 1) * plane], layer.h, layer.w, body, 1.0);
        }
        if contour {
            let ring = &mut data[..plane];
            add_coverage(ring, layer.h, layer.w, &b, 1.0);
            if let Some(inner) = &inner {
                add_coverage(ring, layer.h, layer.w, inner, -1.0);
            }
        }
    }
    if contour {
        // Cancellation can leave tiny negative residues.
        data[..plane].iter_mut().for_each(|v| *v = v.max(0.0));
    }
    add_noise(&mut data, noise, rng);
    FeatureMap::new(
        layer.channels,
        layer.h,
        layer.w,
        data,
        layer.w as f64 / image_w as f64,
        layer.tag,
    )
}

fn add_noise(data: &mut [f32], noise: f64, rng: &mut ChaCha8Rng) {
    if noise > 0.0 {
        let normal = Normal::new(0.0, noise).expect("noise level checked");
        for v in data.iter_mut() {
            *v += normal.sample(rng).max(0.0) as f32;
        }
    }
}

fn motion_layer(layer: &Layer, objects: &[PlantedObject], noise: f64, rng: &mut ChaCha8Rng, image_w: u32) -> Result<FeatureMap> {
    let plane = layer.h * layer.w;
    let mut data = vec![0.0f32; MOTION_CHANNELS * plane];
    const VMAX: f64 = 4.0;
    for o in objects {
        let b = o.bbox.scale_xy(layer.sx, layer.sy)?;
        let (vx, vy) = o.velocity;
        add_coverage(&mut data[..plane], layer.h, layer.w, &b, (vx.abs() / VMAX).min(1.0));
        add_coverage(&mut data[plane..], layer.h, layer.w, &b, (vy.abs() / VMAX).min(1.0));
    }
    add_noise(&mut data, noise, rng);
    FeatureMap::new(MOTION_CHANNELS, layer.h, layer.w, data, layer.w as f64 / image_w as f64, "motion")
}

/// Renders every scale of one image. With `motion`, the coarse and mid
/// layers carry two extra motion channels.
pub fn render_image(
    width: u32,
    height: u32,
    objects: &[PlantedObject],
    scales: &ScaleSet,
    noise: f64,
    motion: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ImageMaps> {
    let tags = StageLayers::default();
    let mut out = Vec::with_capacity(scales.len());
    for k in 0..scales.len() {
        let (hc, wc) = coarse_dims(scales, k, width, height);
        let mut maps = Vec::with_capacity(3);
        for (mult, channels, tag, contour) in [
            (1, COARSE_CHANNELS, tags.coarse.as_str(), true),
            (2, MID_CHANNELS, tags.mid.as_str(), true),
            (4, FINE_CHANNELS, tags.fine.as_str(), false),
        ] {
            let layer = Layer {
                channels,
                h: hc * mult,
                w: wc * mult,
                tag,
                sx: (wc * mult) as f64 / width as f64,
                sy: (hc * mult) as f64 / height as f64,
            };
            let pick: fn(&PlantedObject) -> &[usize] = match mult {
                1 => |o| &o.coarse_channels,
                2 => |o| &o.mid_channels,
                _ => |o| &o.fine_channels,
            };
            let mut fm = render_layer(&layer, objects, pick, contour, noise, rng, width)?;
            if motion && mult < 4 {
                let m = motion_layer(&layer, objects, noise, rng, width)?;
                fm = concat_maps(&fm, &m)?;
            }
            maps.push(fm);
        }
        let fine = maps.pop().expect("three layers");
        let mid = maps.pop().expect("three layers");
        let coarse = maps.pop().expect("three layers");
        let edges = edge_from_features(&fine)?;
        out.push(ScaleMaps {
            coarse,
            mid,
            fine: Some(fine),
            edges: Some(edges),
        });
    }
    Ok(ImageMaps {
        width,
        height,
        scales: out,
    })
}

fn channel_subset(rng: &mut ChaCha8Rng, first: usize, channels: usize) -> Vec<usize> {
    let avail = channels - first;
    let n = avail.div_ceil(2);
    let mut v: Vec<usize> = index::sample(rng, avail, n).into_iter().map(|c| c + first).collect();
    v.sort_unstable();
    v
}

fn random_channels(rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    (
        channel_subset(rng, 1, COARSE_CHANNELS),
        channel_subset(rng, 1, MID_CHANNELS),
        channel_subset(rng, 0, FINE_CHANNELS),
    )
}

/// Integer-pixel box with sides between 20% and 60% of the short side.
fn random_box(rng: &mut ChaCha8Rng, width: u32, height: u32) -> BBox {
    let short = width.min(height) as f64;
    let bw = (rng.random_range(0.2..0.6) * short).round().min(width as f64 - 2.0);
    let bh = (rng.random_range(0.2..0.6) * short).round().min(height as f64 - 2.0);
    let x0 = rng.random_range(0.0..=(width as f64 - bw)).floor();
    let y0 = rng.random_range(0.0..=(height as f64 - bh)).floor();
    BBox::from_origin(x0, y0, bw, bh).expect("positive size")
}

fn image_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Image `i` of the dataset; independent of the other images.
pub fn generate_image(cfg: &SynthConfig, i: usize) -> Result<SynthImage> {
    let mut rng = image_rng(cfg.seed, 2 * i as u64);
    let width = rng.random_range(cfg.min_side..=cfg.max_side);
    let height = rng.random_range(cfg.min_side..=cfg.max_side);
    let n = rng.random_range(1..=cfg.objects_per_image);
    let mut objects: Vec<PlantedObject> = Vec::with_capacity(n);
    let mut attempts = 0;
    while objects.len() < n && attempts < 200 {
        attempts += 1;
        let b = random_box(&mut rng, width, height);
        if objects.iter().any(|o| o.bbox.intersection_area(&b) > 0.0) {
            continue;
        }
        let (coarse_channels, mid_channels, fine_channels) = random_channels(&mut rng);
        objects.push(PlantedObject {
            bbox: b,
            coarse_channels,
            mid_channels,
            fine_channels,
            velocity: (0.0, 0.0),
        });
    }
    // Mixed datasets give stills the (empty) motion channels too, so every
    // entry has the same channel count.
    let motion = cfg.videos > 0;
    let maps = render_image(width, height, &objects, &cfg.scales, cfg.noise_level, motion, &mut rng)?;
    Ok(SynthImage {
        id: format!("img{i:04}"),
        width,
        height,
        objects,
        maps,
    })
}

/// Video `v`: actors move linearly inside disjoint horizontal bands, so
/// they never overlap.
pub fn generate_video(cfg: &SynthConfig, v: usize) -> Result<SynthVideo> {
    let mut rng = image_rng(cfg.seed, 2 * v as u64 + 1);
    let width = rng.random_range(cfg.min_side..=cfg.max_side);
    let height = rng.random_range(cfg.min_side..=cfg.max_side);
    let n = cfg.actors_per_video;
    let band = height as f64 / n as f64;
    let steps = cfg.frames.saturating_sub(1).max(1) as f64;
    let mut actors = Vec::with_capacity(n);
    for a in 0..n {
        let bh = (rng.random_range(0.6..0.9) * band).round().max(8.0);
        let bw = (rng.random_range(0.2..0.4) * width as f64).round();
        let y0 = (a as f64 * band + rng.random_range(0.0..=(band - bh).max(0.0))).floor();
        let start_x = rng.random_range(0.0..=(width as f64 - bw)).floor();
        let end_x = rng.random_range(0.0..=(width as f64 - bw)).floor();
        let vx = ((end_x - start_x) / steps).clamp(-4.0, 4.0);
        let (coarse_channels, mid_channels, fine_channels) = random_channels(&mut rng);
        actors.push((start_x, y0, bw, bh, vx, coarse_channels, mid_channels, fine_channels));
    }
    let mut frames = Vec::with_capacity(cfg.frames);
    let mut tracks: Vec<Vec<Option<BBox>>> = vec![Vec::with_capacity(cfg.frames); n];
    for t in 0..cfg.frames {
        let objects: Vec<PlantedObject> = actors
            .iter()
            .map(|(x, y, bw, bh, vx, cc, mc, fc)| PlantedObject {
                bbox: BBox::from_origin((x + vx * t as f64).round(), *y, *bw, *bh).expect("positive size"),
                coarse_channels: cc.clone(),
                mid_channels: mc.clone(),
                fine_channels: fc.clone(),
                velocity: (*vx, 0.0),
            })
            .collect();
        for (track, o) in tracks.iter_mut().zip(&objects) {
            track.push(Some(o.bbox));
        }
        let maps = render_image(width, height, &objects, &cfg.scales, cfg.noise_level, true, &mut rng)?;
        frames.push(SynthImage {
            id: format!("vid{v:04}/{t:04}"),
            width,
            height,
            objects,
            maps,
        });
    }
    let tubes = tracks.into_iter().map(GroundTruthTube::new).collect::<Result<_>>()?;
    Ok(SynthVideo {
        id: format!("vid{v:04}"),
        width,
        height,
        frames,
        tubes,
    })
}

/// Generates the whole dataset in memory.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    use rayon::prelude::*;
    cfg.validate()?;
    let images = (0..cfg.images).into_par_iter().map(|i| generate_image(cfg, i)).collect::<Result<_>>()?;
    let videos = (0..cfg.videos).into_par_iter().map(|v| generate_video(cfg, v)).collect::<Result<_>>()?;
    Ok(SynthDataset { images, videos })
}

impl SynthDataset {
    /// Every still image and every video frame, in id order.
    pub fn all_images(&self) -> impl Iterator<Item = &SynthImage> {
        self.images.iter().chain(self.videos.iter().flat_map(|v| v.frames.iter()))
    }

    pub fn manifest(&self, scales: &ScaleSet) -> DatasetManifest {
        DatasetManifest {
            scales: scales.sides.clone(),
            layers: StageLayers::default(),
            images: self
                .all_images()
                .map(|i| ManifestEntry {
                    id: i.id.clone(),
                    width: i.width,
                    height: i.height,
                })
                .collect(),
        }
    }

    /// Still images and video frames as image entries, plus video tubes.
    pub fn annotations(&self) -> AnnotationFile {
        AnnotationFile {
            images: self
                .all_images()
                .map(|i| ImageAnnotation {
                    id: i.id.clone(),
                    width: i.width,
                    height: i.height,
                    boxes: i.objects.iter().map(|o| o.bbox).collect(),
                })
                .collect(),
            videos: self
                .videos
                .iter()
                .map(|v| VideoAnnotation {
                    id: v.id.clone(),
                    width: v.width,
                    height: v.height,
                    frames: v.frames.len(),
                    tubes: v.tubes.clone(),
                })
                .collect(),
        }
    }

    /// Writes `manifest.json`, `annotations.json` and all tensors to `dir`.
    pub fn write(&self, dir: &std::path::Path, scales: &ScaleSet) -> Result<()> {
        use rayon::prelude::*;
        let manifest = self.manifest(scales);
        let all: Vec<&SynthImage> = self.all_images().collect();
        all.par_iter()
            .try_for_each(|img| manifest.store_image(dir, &img.id, &img.maps))?;
        self.annotations().write(&dir.join("annotations.json"))?;
        manifest.write(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(noise: f64) -> SynthConfig {
        SynthConfig {
            seed: 7,
            images: 3,
            noise_level: noise,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn seed_repeatable() {
        let a = synth_generate(&small(0.1)).unwrap();
        let b = synth_generate(&small(0.1)).unwrap();
        for (x, y) in a.images.iter().zip(&b.images) {
            assert_eq!(x.objects, y.objects);
            for (p, q) in x.maps.scales.iter().zip(&y.maps.scales) {
                assert_eq!(p.coarse, q.coarse);
                assert_eq!(p.fine, q.fine);
            }
        }
    }

    #[test]
    fn zero_noise_background_is_zero() {
        let ds = synth_generate(&small(0.0)).unwrap();
        let img = &ds.images[0];
        let s = &img.maps.scales[0];
        let (h, w) = (s.coarse.height(), s.coarse.width());
        let (sx, sy) = (w as f64 / img.width as f64, h as f64 / img.height as f64);
        for y in 0..h {
            for x in 0..w {
                let cell = BBox::new(x as f64 / sx, y as f64 / sy, (x + 1) as f64 / sx, (y + 1) as f64 / sy).unwrap();
                if img.objects.iter().all(|o| o.bbox.intersection_area(&cell) <= 1e-9) {
                    for c in 0..s.coarse.channels() {
                        assert_eq!(s.coarse.get(c, y, x), 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn objects_disjoint_and_inside() {
        let ds = synth_generate(&SynthConfig { images: 20, ..small(0.1) }).unwrap();
        for img in &ds.images {
            assert!(!img.objects.is_empty());
            for (i, a) in img.objects.iter().enumerate() {
                assert!(a.bbox.x1() <= img.width as f64 && a.bbox.y1() <= img.height as f64);
                for b in &img.objects[i + 1..] {
                    assert_eq!(a.bbox.intersection_area(&b.bbox), 0.0);
                }
            }
        }
    }

    #[test]
    fn video_actors_stay_apart() {
        let cfg = SynthConfig {
            images: 0,
            videos: 1,
            frames: 6,
            ..small(0.1)
        };
        let v = generate_video(&cfg, 0).unwrap();
        assert_eq!(v.frames.len(), 6);
        assert_eq!(v.frames[0].maps.scales[0].coarse.channels(), COARSE_CHANNELS + MOTION_CHANNELS);
        for f in &v.frames {
            assert_eq!(f.objects[0].bbox.intersection_area(&f.objects[1].bbox), 0.0);
            assert!(f.objects.iter().all(|o| o.bbox.x0() >= 0.0 && o.bbox.x1() <= v.width as f64));
        }
    }
}
