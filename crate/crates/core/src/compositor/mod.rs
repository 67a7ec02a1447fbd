//! Copy-paste compositing: depth-aware rescale, hard paste, textured
//! polygons, shifted pseudo frame pairs and training-time augmentation.

mod augment;
mod polygon;
mod synth;

use image::RgbImage;

use crate::error::{Error, Result};
use crate::raster::Mask;
use crate::scene::{
    BaseScene, CompositeSample, ObjectCutout, PlacementSpec, RescaleParams, ShiftRange,
    MIN_OBJECT_HEIGHT,
};

pub use augment::{augment, augment_with, AugmentParams};
pub use polygon::{random_textured_polygon, random_textured_polygon_with_vertices};
pub use synth::{
    sample_seed, synthesize, synthesize_dataset, CategoryCounts, CutoutPools, PlacementRegion,
    SynthesisConfig, SynthesizedSample,
};

/// Rounds half-up: `floor(v + 0.5)`.
pub(crate) fn round_half_up(v: f64) -> i64 {
    (v + 0.5).floor() as i64
}

/// Resizes a cutout so its height follows `alpha * anchor_y + beta` and its
/// width keeps the aspect ratio. Nearest-neighbour sampling keeps alpha binary.
pub fn rescale_cutout(
    cutout: &ObjectCutout,
    anchor_y: i64,
    params: &RescaleParams,
) -> Result<ObjectCutout> {
    if anchor_y < 0 {
        return Err(Error::InvalidParameter(format!(
            "anchor_y must be >= 0, got {anchor_y}"
        )));
    }
    params.validate()?;
    let h = round_half_up(params.alpha * anchor_y as f64 + params.beta);
    if h < MIN_OBJECT_HEIGHT {
        return Err(Error::ObjectTooSmall {
            height: h,
            min: MIN_OBJECT_HEIGHT,
        });
    }
    let (src_h, src_w) = (cutout.height() as i64, cutout.width() as i64);
    // w = round(h / H * W), computed exactly in integers.
    let w = ((2 * h * src_w + src_h) / (2 * src_h)).max(1);
    let (h, w) = (h as usize, w as usize);

    let src_x = |x: usize| ((2 * x + 1) * src_w as usize / (2 * w)).min(src_w as usize - 1);
    let src_y = |y: usize| ((2 * y + 1) * src_h as usize / (2 * h)).min(src_h as usize - 1);
    let patch = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        *cutout
            .patch()
            .get_pixel(src_x(x as usize) as u32, src_y(y as usize) as u32)
    });
    let alpha = Mask::from_fn(w, h, |x, y| cutout.alpha().get(src_x(x), src_y(y)));
    if alpha.is_empty() {
        return Err(Error::ObjectTooSmall {
            height: h as i64,
            min: MIN_OBJECT_HEIGHT,
        });
    }
    Ok(
        ObjectCutout::unchecked_tightness(patch, alpha, cutout.category, cutout.source_id.clone())?
            .with_native_size(cutout.native_size),
    )
}

/// Top-left frame position of a cutout whose bottom-center sits at `anchor`.
pub fn footprint_origin(cutout: &ObjectCutout, anchor: (i64, i64)) -> (i64, i64) {
    (
        anchor.0 - (cutout.width() / 2) as i64,
        anchor.1 - cutout.height() as i64 + 1,
    )
}

/// The cutout's alpha placed in frame coordinates, clipped to the frame.
pub fn place_footprint(
    cutout: &ObjectCutout,
    anchor: (i64, i64),
    width: usize,
    height: usize,
) -> Mask {
    let (ox, oy) = footprint_origin(cutout, anchor);
    let mut fp = Mask::new(width, height);
    for cy in 0..cutout.height() {
        for cx in 0..cutout.width() {
            let (fx, fy) = (ox + cx as i64, oy + cy as i64);
            if fx < 0 || fy < 0 || fx >= width as i64 || fy >= height as i64 {
                continue;
            }
            if cutout.alpha().get(cx, cy) {
                fp.set(fx as usize, fy as usize, true);
            }
        }
    }
    fp
}

/// Output of [`paste`].
#[derive(Debug, Clone, PartialEq)]
pub struct Pasted {
    pub image: RgbImage,
    /// Railway ROI minus the footprint.
    pub visible_railway: Mask,
    pub footprint: Mask,
}

/// Hard-pastes `cutout` with its bottom-center at `anchor`.
pub fn paste(scene: &BaseScene, cutout: &ObjectCutout, anchor: (i64, i64)) -> Result<Pasted> {
    paste_with(scene, cutout, anchor, false)
}

/// [`paste`] with optional feathering: object pixels on the alpha boundary
/// are blended 50/50 with the background. Masks are unaffected.
pub fn paste_with(
    scene: &BaseScene,
    cutout: &ObjectCutout,
    anchor: (i64, i64),
    feather: bool,
) -> Result<Pasted> {
    let (w, h) = (scene.width(), scene.height());
    let footprint = place_footprint(cutout, anchor, w, h);
    if footprint.is_empty() {
        return Err(Error::PlacementOutOfFrame(format!(
            "{}x{} cutout `{}` anchored at {:?} misses the {}x{} frame",
            cutout.width(),
            cutout.height(),
            cutout.source_id,
            anchor,
            w,
            h
        )));
    }
    let (ox, oy) = footprint_origin(cutout, anchor);
    let mut image = scene.image.clone();
    let alpha = cutout.alpha();
    for cy in 0..cutout.height() {
        for cx in 0..cutout.width() {
            if !alpha.get(cx, cy) {
                continue;
            }
            let (fx, fy) = (ox + cx as i64, oy + cy as i64);
            if fx < 0 || fy < 0 || fx >= w as i64 || fy >= h as i64 {
                continue;
            }
            let src = *cutout.patch().get_pixel(cx as u32, cy as u32);
            let dst = image.get_pixel_mut(fx as u32, fy as u32);
            if feather && on_alpha_edge(alpha, cx, cy) {
                for c in 0..3 {
                    dst.0[c] = (src.0[c] as u16 + dst.0[c] as u16).div_ceil(2) as u8;
                }
            } else {
                *dst = src;
            }
        }
    }
    let visible_railway = scene.railway_mask.and_not(&footprint)?;
    Ok(Pasted {
        image,
        visible_railway,
        footprint,
    })
}

fn on_alpha_edge(alpha: &Mask, x: usize, y: usize) -> bool {
    let (w, h) = alpha.dims();
    x == 0
        || y == 0
        || x + 1 == w
        || y + 1 == h
        || !alpha.get(x - 1, y)
        || !alpha.get(x + 1, y)
        || !alpha.get(x, y - 1)
        || !alpha.get(x, y + 1)
}

/// Pastes the same (already rescaled) cutout at `anchor` and at
/// `anchor + shift` on the same scene, giving a pseudo frame pair.
#[allow(clippy::too_many_arguments)]
pub fn generate_pair(
    scene: &BaseScene,
    cutout: &ObjectCutout,
    anchor: (i64, i64),
    shift: (i64, i64),
    shift_range: ShiftRange,
    rescale: RescaleParams,
    seed: u64,
    feather: bool,
) -> Result<CompositeSample> {
    shift_range.validate()?;
    if !shift_range.admits(shift) {
        return Err(Error::InvalidParameter(format!(
            "shift {:?} outside configured range [{}, {}]",
            shift, shift_range.lo, shift_range.hi
        )));
    }
    let first = paste_with(scene, cutout, anchor, feather)?;
    let second = paste_with(
        scene,
        cutout,
        (anchor.0 + shift.0, anchor.1 + shift.1),
        feather,
    )?;
    Ok(CompositeSample {
        scene_id: scene.scene_id.clone(),
        weather: scene.weather,
        category: cutout.category,
        seed,
        frame_t: first.image,
        frame_t1: second.image,
        mask_t: first.visible_railway,
        mask_t1: second.visible_railway,
        placement: PlacementSpec {
            anchor,
            shift,
            rescale,
        },
        hflipped: false,
    })
}

#[cfg(test)]
mod tests;
