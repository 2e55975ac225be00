use proposal_cascade::featmap::FeatureMap;
use proposal_cascade::geometry::BBox;
use proposal_cascade::synth::{generate_image, generate_video, synth_generate, SynthConfig};

/// Cells of an `h x w` grid that overlap some box by a positive area, with
/// boxes given in image pixels of a `width x height` image.
fn expected_support(boxes: &[BBox], h: usize, w: usize, width: u32, height: u32) -> Vec<bool> {
    let (sx, sy) = (w as f64 / width as f64, h as f64 / height as f64);
    let mut mask = vec![false; h * w];
    for b in boxes {
        let (x0, x1, y0, y1) = (b.x0() * sx, b.x1() * sx, b.y0() * sy, b.y1() * sy);
        for y in 0..h {
            let oy = y1.min(y as f64 + 1.0) - y0.max(y as f64);
            for x in 0..w {
                let ox = x1.min(x as f64 + 1.0) - x0.max(x as f64);
                if ox > 0.0 && oy > 0.0 {
                    mask[y * w + x] = true;
                }
            }
        }
    }
    mask
}

fn actual_support(fm: &FeatureMap) -> Vec<bool> {
    let (h, w) = (fm.height(), fm.width());
    let mut mask = vec![false; h * w];
    for c in 0..fm.channels() {
        for y in 0..h {
            for x in 0..w {
                mask[y * w + x] |= fm.get(c, y, x) != 0.0;
            }
        }
    }
    mask
}

#[test]
fn noiseless_support_is_the_object_footprint() {
    let cfg = SynthConfig { seed: 21, noise_level: 0.0, objects_per_image: 4, ..SynthConfig::default() };
    for i in 0..8 {
        let img = generate_image(&cfg, i).unwrap();
        let boxes: Vec<BBox> = img.objects.iter().map(|o| o.bbox).collect();
        for (k, s) in img.maps.scales.iter().enumerate() {
            for (name, fm) in [("coarse", &s.coarse), ("mid", &s.mid), ("fine", s.fine.as_ref().unwrap())] {
                let want = expected_support(&boxes, fm.height(), fm.width(), img.width, img.height);
                assert_eq!(actual_support(fm), want, "image {i} scale {k} {name}");
            }
        }
    }
}

#[test]
fn noiseless_video_support_includes_motion() {
    let cfg = SynthConfig { seed: 4, noise_level: 0.0, videos: 1, frames: 5, ..SynthConfig::default() };
    let v = generate_video(&cfg, 0).unwrap();
    for f in &v.frames {
        let boxes: Vec<BBox> = f.objects.iter().map(|o| o.bbox).collect();
        let s = &f.maps.scales[0];
        let want = expected_support(&boxes, s.coarse.height(), s.coarse.width(), f.width, f.height);
        assert_eq!(actual_support(&s.coarse), want, "{}", f.id);
    }
}

#[test]
fn generation_is_seeded() {
    let cfg = SynthConfig { seed: 3, images: 3, videos: 1, frames: 4, ..SynthConfig::default() };
    let a = synth_generate(&cfg).unwrap();
    let b = synth_generate(&cfg).unwrap();
    for (x, y) in a.all_images().zip(b.all_images()) {
        assert_eq!(x.id, y.id);
        assert_eq!(x.maps.scales[0].coarse, y.maps.scales[0].coarse);
        assert_eq!(x.maps.scales[0].fine, y.maps.scales[0].fine);
    }
    let other = synth_generate(&SynthConfig { seed: 4, ..cfg }).unwrap();
    assert_ne!(a.images[0].maps.scales[0].coarse, other.images[0].maps.scales[0].coarse);
    // Every image sees the same channel layout in a mixed dataset.
    let channels: Vec<usize> = a.all_images().map(|i| i.maps.scales[0].coarse.channels()).collect();
    assert!(channels.windows(2).all(|w| w[0] == w[1]), "{channels:?}");
}
