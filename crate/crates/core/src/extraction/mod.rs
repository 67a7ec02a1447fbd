//! Object cutout extraction through a detect -> segment backend chain.
//!
//! Three backends ship with the crate: a chroma-key [`OracleBackend`] that
//! needs no model weights, [`PrecomputedMaskBackend`] for datasets that ship
//! their own masks, and [`PluginBackend`] which talks to an external
//! detector/segmenter over the subprocess protocol.

mod backends;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::RgbImage;

use crate::compositor::CutoutPools;
use crate::error::{Error, Result};
use crate::raster::{load_rgb, Mask, PixelRect};
use crate::scene::{Category, ObjectCutout};

pub use backends::{parse_detect_response, OracleBackend, PluginBackend, PrecomputedMaskBackend};

/// Detection result. Coordinates are half-open: `[x_min, x_max) x [y_min, y_max)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
    pub category: String,
    pub confidence: f64,
}

impl BoundingBox {
    pub fn rect(&self) -> PixelRect {
        PixelRect {
            x_min: self.x_min,
            y_min: self.y_min,
            x_max: self.x_max,
            y_max: self.y_max,
        }
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if self.x_min >= self.x_max || self.y_min >= self.y_max {
            return Err(Error::InvalidParameter(format!("degenerate box {self:?}")));
        }
        if self.x_max > width || self.y_max > height {
            return Err(Error::InvalidParameter(format!(
                "box {self:?} exceeds {width}x{height} image"
            )));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidParameter(format!(
                "confidence {} outside [0, 1]",
                self.confidence
            )));
        }
        Ok(())
    }

    /// Intersects the box with the image; `None` if nothing is left.
    pub(crate) fn clamped(mut self, width: usize, height: usize) -> Option<Self> {
        self.x_max = self.x_max.min(width);
        self.y_max = self.y_max.min(height);
        (self.x_min < self.x_max && self.y_min < self.y_max).then_some(self)
    }
}

/// An object image handed to a backend.
#[derive(Debug, Clone)]
pub struct ObjectImage {
    pub id: String,
    pub image: RgbImage,
    /// Source file, when the image came from disk. File-based backends use it.
    pub path: Option<PathBuf>,
    /// Label to give detections when the backend cannot classify.
    pub category_hint: Option<String>,
}

impl ObjectImage {
    pub fn in_memory(id: impl Into<String>, image: RgbImage) -> Self {
        ObjectImage {
            id: id.into(),
            image,
            path: None,
            category_hint: None,
        }
    }

    pub fn with_hint(mut self, category: impl Into<String>) -> Self {
        self.category_hint = Some(category.into());
        self
    }

    pub fn width(&self) -> usize {
        self.image.width() as usize
    }

    pub fn height(&self) -> usize {
        self.image.height() as usize
    }
}

pub trait ExtractorBackend: Send + Sync {
    fn name(&self) -> &str;

    fn detect(&self, image: &ObjectImage, categories: &[String]) -> Result<Vec<BoundingBox>>;

    /// Mask of the object prompted by `bbox`, same size as the image.
    fn segment(&self, image: &ObjectImage, bbox: &BoundingBox) -> Result<Mask>;
}

fn backend_error(backend: &dyn ExtractorBackend, err: Error) -> Error {
    match err {
        e @ Error::Backend { .. } => e,
        other => Error::Backend {
            backend: backend.name().to_string(),
            message: other.to_string(),
        },
    }
}

/// Runs detection and keeps boxes whose category is allowed and whose
/// confidence reaches `min_confidence`, most confident first.
pub fn detect_objects(
    image: &ObjectImage,
    allowed_categories: &BTreeSet<String>,
    backend: &dyn ExtractorBackend,
    min_confidence: f64,
) -> Result<Vec<BoundingBox>> {
    if image.width() == 0 || image.height() == 0 {
        return Err(Error::InvalidParameter(format!("image `{}` is empty", image.id)));
    }
    if allowed_categories.is_empty() {
        return Err(Error::InvalidParameter("allowed_categories is empty".into()));
    }
    let requested: Vec<String> = allowed_categories.iter().cloned().collect();
    let raw = backend
        .detect(image, &requested)
        .map_err(|e| backend_error(backend, e))?;
    let mut boxes: Vec<BoundingBox> = raw
        .into_iter()
        .filter(|b| allowed_categories.contains(&b.category))
        .filter(|b| b.confidence >= min_confidence)
        .filter_map(|b| b.clamped(image.width(), image.height()))
        .collect();
    // Stable sort keeps backend order among equal confidences.
    boxes.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    Ok(boxes)
}

/// Asks the backend for the object inside `bbox`. Pixels the backend marks
/// outside the box are clipped away rather than rejected.
pub fn segment_from_box(
    image: &ObjectImage,
    bbox: &BoundingBox,
    backend: &dyn ExtractorBackend,
) -> Result<Mask> {
    bbox.validate(image.width(), image.height())?;
    let mask = backend
        .segment(image, bbox)
        .map_err(|e| backend_error(backend, e))?;
    if mask.dims() != (image.width(), image.height()) {
        return Err(Error::Backend {
            backend: backend.name().to_string(),
            message: format!(
                "mask is {}x{}, image is {}x{}",
                mask.width(),
                mask.height(),
                image.width(),
                image.height()
            ),
        });
    }
    let clipped = mask.clip_to(bbox.rect());
    if clipped.is_empty() {
        return Err(Error::ExtractionEmpty(format!(
            "no object pixels in box [{}, {}, {}, {}] of `{}`",
            bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max, image.id
        )));
    }
    Ok(clipped)
}

/// Tight-crops `image` and `mask` to the mask's bounding box.
pub fn extract_cutout(
    image: &RgbImage,
    mask: &Mask,
    category: Category,
    source_id: &str,
) -> Result<ObjectCutout> {
    if !crate::raster::same_dims(image, mask) {
        return Err(Error::DimensionMismatch(format!(
            "image {}x{} vs mask {}x{}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    let rect = mask
        .bounding_box()
        .ok_or_else(|| Error::ExtractionEmpty(format!("mask for `{source_id}` is empty")))?;
    let patch = image::imageops::crop_imm(
        image,
        rect.x_min as u32,
        rect.y_min as u32,
        rect.width() as u32,
        rect.height() as u32,
    )
    .to_image();
    ObjectCutout::new(patch, mask.crop(rect), category, source_id)
}

/// Max per-channel absolute distance between two colors.
pub fn chroma_distance(a: [u8; 3], b: [u8; 3]) -> u8 {
    (0..3).map(|c| a[c].abs_diff(b[c])).max().unwrap_or(0)
}

/// Foreground = pixels farther than `tolerance` from `chroma_key`.
pub fn chroma_foreground(image: &RgbImage, chroma_key: [u8; 3], tolerance: u8) -> Mask {
    Mask::from_fn(image.width() as usize, image.height() as usize, |x, y| {
        chroma_distance(image.get_pixel(x as u32, y as u32).0, chroma_key) > tolerance
    })
}

/// Whole-image chroma-key extraction: every non-key pixel becomes alpha.
pub fn oracle_extract(
    image: &RgbImage,
    chroma_key: [u8; 3],
    tolerance: u8,
    category: Category,
    source_id: &str,
) -> Result<ObjectCutout> {
    let fg = chroma_foreground(image, chroma_key, tolerance);
    if fg.is_empty() {
        return Err(Error::ExtractionEmpty(format!(
            "`{source_id}`: every pixel is within {tolerance} of the chroma key"
        )));
    }
    extract_cutout(image, &fg, category, source_id)
}

/// Detect, segment and crop every allowed object in `image`.
///
/// Boxes that segment to nothing are skipped with a warning; imperfect masks
/// are expected from learned backends.
pub fn extract_objects(
    image: &ObjectImage,
    category: Category,
    allowed_categories: &BTreeSet<String>,
    backend: &dyn ExtractorBackend,
    min_confidence: f64,
) -> Result<Vec<ObjectCutout>> {
    let boxes = detect_objects(image, allowed_categories, backend, min_confidence)?;
    let mut out = Vec::new();
    for (i, bbox) in boxes.iter().enumerate() {
        let mask = match segment_from_box(image, bbox, backend) {
            Ok(m) => m,
            Err(Error::ExtractionEmpty(msg)) => {
                log::warn!("skipping detection: {msg}");
                continue;
            }
            Err(e) => return Err(e),
        };
        out.push(extract_cutout(
            &image.image,
            &mask,
            category,
            &format!("{}#{i}", image.id),
        )?);
    }
    Ok(out)
}

/// Sorted PNG files of `dir`, leaving out names ending in `exclude_suffix`
/// (sidecar masks). A missing directory lists as empty.
fn png_files(dir: &Path, exclude_suffix: Option<&str>) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && !exclude_suffix.is_some_and(|s| stem.ends_with(s)) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Builds cutout pools from `objects_dir/{person,animal,texture}/*.png`.
///
/// Person and animal photos go through `backend`; texture images are used
/// as they are.
pub fn load_object_pools(
    objects_dir: &Path,
    backend: &dyn ExtractorBackend,
    min_confidence: f64,
    exclude_suffix: Option<&str>,
) -> Result<CutoutPools> {
    let mut pools = CutoutPools::default();
    for category in [Category::Person, Category::Animal] {
        let allowed: BTreeSet<String> = [category.as_str().to_string()].into();
        for path in png_files(&objects_dir.join(category.as_str()), exclude_suffix)? {
            let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let image = ObjectImage {
                id: format!("{category}/{id}"),
                image: load_rgb(&path)?,
                path: Some(path.clone()),
                category_hint: Some(category.as_str().to_string()),
            };
            let cutouts = extract_objects(&image, category, &allowed, backend, min_confidence)?;
            if cutouts.is_empty() {
                log::warn!("no {category} found in {}", path.display());
            }
            match category {
                Category::Person => pools.person.extend(cutouts),
                _ => pools.animal.extend(cutouts),
            }
        }
    }
    for path in png_files(&objects_dir.join(Category::Texture.as_str()), exclude_suffix)? {
        pools.textures.push(load_rgb(&path)?);
    }
    log::info!(
        "object pools: {} person, {} animal, {} texture",
        pools.person.len(),
        pools.animal.len(),
        pools.textures.len()
    );
    Ok(pools)
}

#[cfg(test)]
mod tests;
