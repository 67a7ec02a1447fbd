use image::RgbImage;
use rand::{Rng, RngExt};

use crate::scene::CompositeSample;

/// Probabilities and ranges of the training-time augmentations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentParams {
    pub flip_p: f64,
    pub dropout_p: f64,
    pub brightness_p: f64,
    /// Inclusive range of dropout rectangles per application.
    pub dropout_holes: (u32, u32),
    /// Largest fraction of the image area a single hole may cover.
    pub dropout_max_area: f64,
    pub contrast_range: (f64, f64),
    pub offset_range: (f64, f64),
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            flip_p: 0.5,
            dropout_p: 0.5,
            brightness_p: 0.5,
            dropout_holes: (1, 4),
            dropout_max_area: 0.1,
            contrast_range: (0.8, 1.2),
            offset_range: (-20.0, 20.0),
        }
    }
}

/// Applies flip, coarse dropout and brightness/contrast jitter, each with
/// probability 0.5. Masks change only under the flip.
pub fn augment<R: Rng + ?Sized>(sample: &CompositeSample, rng: &mut R) -> CompositeSample {
    augment_with(sample, &AugmentParams::default(), rng)
}

fn coin<R: Rng + ?Sized>(rng: &mut R, p: f64) -> bool {
    rng.random::<f64>() < p
}

pub fn augment_with<R: Rng + ?Sized>(
    sample: &CompositeSample,
    params: &AugmentParams,
    rng: &mut R,
) -> CompositeSample {
    let mut out = sample.clone();
    // Decisions are drawn up front so each one consumes the rng the same way.
    let do_flip = coin(rng, params.flip_p);
    let do_dropout = coin(rng, params.dropout_p);
    let do_brightness = coin(rng, params.brightness_p);

    if do_flip {
        out.frame_t = image::imageops::flip_horizontal(&out.frame_t);
        out.frame_t1 = image::imageops::flip_horizontal(&out.frame_t1);
        out.mask_t = out.mask_t.flip_horizontal();
        out.mask_t1 = out.mask_t1.flip_horizontal();
        out.hflipped = !out.hflipped;
    }
    if do_dropout {
        let holes = dropout_holes(out.frame_t.width(), out.frame_t.height(), params, rng);
        fill_holes(&mut out.frame_t, &holes);
        fill_holes(&mut out.frame_t1, &holes);
    }
    if do_brightness {
        let scale = rng.random_range(params.contrast_range.0..=params.contrast_range.1);
        let offset = rng.random_range(params.offset_range.0..=params.offset_range.1);
        jitter(&mut out.frame_t, scale, offset);
        jitter(&mut out.frame_t1, scale, offset);
    }
    out
}

/// `(x, y, w, h)` rectangles, each at most `dropout_max_area` of the image.
fn dropout_holes<R: Rng + ?Sized>(
    width: u32,
    height: u32,
    params: &AugmentParams,
    rng: &mut R,
) -> Vec<(u32, u32, u32, u32)> {
    let n = rng.random_range(params.dropout_holes.0..=params.dropout_holes.1);
    let side = params.dropout_max_area.sqrt();
    let max_w = ((width as f64 * side).floor() as u32).max(1);
    let max_h = ((height as f64 * side).floor() as u32).max(1);
    (0..n)
        .map(|_| {
            let w = rng.random_range(1..=max_w);
            let h = rng.random_range(1..=max_h);
            let x = rng.random_range(0..=width - w);
            let y = rng.random_range(0..=height - h);
            (x, y, w, h)
        })
        .collect()
}

fn fill_holes(img: &mut RgbImage, holes: &[(u32, u32, u32, u32)]) {
    let n = (img.width() * img.height()).max(1) as u64;
    let mut sum = [0u64; 3];
    for p in img.pixels() {
        for c in 0..3 {
            sum[c] += p.0[c] as u64;
        }
    }
    let mean = image::Rgb([0, 1, 2].map(|c| ((sum[c] + n / 2) / n) as u8));
    for &(x0, y0, w, h) in holes {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                img.put_pixel(x, y, mean);
            }
        }
    }
}

fn jitter(img: &mut RgbImage, scale: f64, offset: f64) {
    for p in img.pixels_mut() {
        for c in 0..3 {
            p.0[c] = (p.0[c] as f64 * scale + offset).round().clamp(0.0, 255.0) as u8;
        }
    }
}
