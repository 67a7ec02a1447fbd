use std::path::{Path, PathBuf};
use std::time::Duration;

use image::GrayImage;
use serde_json::{json, Value};

use super::{chroma_foreground, BoundingBox, ExtractorBackend, ObjectImage};
use crate::error::{Error, Result};
use crate::plugin::PluginPool;
use crate::raster::{label_components, Mask};

/// Boxes around the components of a label raster, one per label in 1..=count.
fn component_boxes(labels: &[u32], count: u32, width: usize) -> Vec<(u32, usize, usize, usize, usize)> {
    let mut boxes: Vec<Option<(usize, usize, usize, usize)>> = vec![None; count as usize];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = (i % width, i / width);
        let b = &mut boxes[l as usize - 1];
        *b = Some(match *b {
            None => (x, y, x + 1, y + 1),
            Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1)),
        });
    }
    boxes
        .into_iter()
        .enumerate()
        .filter_map(|(i, b)| b.map(|(x0, y0, x1, y1)| (i as u32 + 1, x0, y0, x1, y1)))
        .collect()
}

/// Deterministic detector/segmenter for objects rendered on a flat key color.
///
/// Detection returns one box per 8-connected foreground component of at
/// least `min_area` pixels, labelled with the image's category hint and
/// confidence 1.0. Segmentation returns the foreground inside the box.
#[derive(Debug, Clone)]
pub struct OracleBackend {
    pub chroma_key: [u8; 3],
    pub tolerance: u8,
    pub min_area: usize,
}

impl OracleBackend {
    pub fn new(chroma_key: [u8; 3], tolerance: u8) -> Self {
        OracleBackend {
            chroma_key,
            tolerance,
            min_area: 1,
        }
    }
}

impl ExtractorBackend for OracleBackend {
    fn name(&self) -> &str {
        "oracle"
    }

    fn detect(&self, image: &ObjectImage, _categories: &[String]) -> Result<Vec<BoundingBox>> {
        let fg = chroma_foreground(&image.image, self.chroma_key, self.tolerance);
        let (labels, count) = label_components(&fg);
        let mut areas = vec![0usize; count as usize + 1];
        for &l in &labels {
            areas[l as usize] += 1;
        }
        let category = image
            .category_hint
            .clone()
            .unwrap_or_else(|| "object".to_string());
        Ok(component_boxes(&labels, count, fg.width())
            .into_iter()
            .filter(|(l, ..)| areas[*l as usize] >= self.min_area)
            .map(|(_, x0, y0, x1, y1)| BoundingBox {
                x_min: x0,
                y_min: y0,
                x_max: x1,
                y_max: y1,
                category: category.clone(),
                confidence: 1.0,
            })
            .collect())
    }

    fn segment(&self, image: &ObjectImage, bbox: &BoundingBox) -> Result<Mask> {
        Ok(chroma_foreground(&image.image, self.chroma_key, self.tolerance).clip_to(bbox.rect()))
    }
}

/// Uses masks shipped next to the images: `<stem>.png` pairs with
/// `<stem><suffix>.png`. Distinct nonzero mask values are separate
/// instances, as in instance-labelled pedestrian datasets.
#[derive(Debug, Clone)]
pub struct PrecomputedMaskBackend {
    pub mask_suffix: String,
}

impl Default for PrecomputedMaskBackend {
    fn default() -> Self {
        PrecomputedMaskBackend {
            mask_suffix: "_mask".to_string(),
        }
    }
}

impl PrecomputedMaskBackend {
    pub fn mask_path(&self, image_path: &Path) -> PathBuf {
        let stem = image_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        image_path.with_file_name(format!("{stem}{}.png", self.mask_suffix))
    }

    fn instances(&self, image: &ObjectImage) -> Result<GrayImage> {
        let path = image.path.as_ref().ok_or_else(|| Error::Backend {
            backend: self.name().to_string(),
            message: format!("image `{}` has no source path", image.id),
        })?;
        let mask_path = self.mask_path(path);
        let gray = image::open(&mask_path)
            .map_err(|source| Error::Image {
                path: mask_path.clone(),
                source,
            })?
            .to_luma8();
        if (gray.width() as usize, gray.height() as usize) != (image.width(), image.height()) {
            return Err(Error::DimensionMismatch(format!(
                "mask {} does not match its image",
                mask_path.display()
            )));
        }
        Ok(gray)
    }
}

impl ExtractorBackend for PrecomputedMaskBackend {
    fn name(&self) -> &str {
        "masks"
    }

    fn detect(&self, image: &ObjectImage, _categories: &[String]) -> Result<Vec<BoundingBox>> {
        let gray = self.instances(image)?;
        let category = image
            .category_hint
            .clone()
            .unwrap_or_else(|| "object".to_string());
        let width = gray.width() as usize;
        let labels: Vec<u32> = gray.as_raw().iter().map(|&v| v as u32).collect();
        Ok(component_boxes(&labels, 255, width)
            .into_iter()
            .map(|(_, x0, y0, x1, y1)| BoundingBox {
                x_min: x0,
                y_min: y0,
                x_max: x1,
                y_max: y1,
                category: category.clone(),
                confidence: 1.0,
            })
            .collect())
    }

    fn segment(&self, image: &ObjectImage, bbox: &BoundingBox) -> Result<Mask> {
        let gray = self.instances(image)?;
        let width = gray.width() as usize;
        // The instance id that dominates the box is the prompted object.
        let mut votes = [0usize; 256];
        for y in bbox.y_min..bbox.y_max {
            for x in bbox.x_min..bbox.x_max {
                votes[gray.as_raw()[y * width + x] as usize] += 1;
            }
        }
        let id = (1..256).max_by_key(|&v| (votes[v], std::cmp::Reverse(v))).unwrap_or(1);
        if votes[id] == 0 {
            return Ok(Mask::new(width, gray.height() as usize));
        }
        Ok(Mask::from_fn(width, gray.height() as usize, |x, y| {
            gray.as_raw()[y * width + x] as usize == id
        }))
    }
}

/// External detector/segmenter reached through the plugin protocol.
pub struct PluginBackend {
    pool: PluginPool,
    scratch: PathBuf,
}

impl PluginBackend {
    /// `scratch` receives PNGs of in-memory images the plugin must read.
    pub fn new(command: &str, timeout: Duration, scratch: PathBuf) -> Self {
        PluginBackend {
            pool: PluginPool::new(command, timeout),
            scratch,
        }
    }

    fn image_path(&self, image: &ObjectImage) -> Result<PathBuf> {
        if let Some(p) = &image.path {
            return Ok(p.clone());
        }
        let safe: String = image
            .id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
            .collect();
        let path = self.scratch.join(format!("{safe}.png"));
        crate::raster::save_rgb(&image.image, &path)?;
        Ok(path)
    }
}

/// Parses the `boxes` array of a detect response. Each element is
/// `{"box": [x0, y0, x1, y1], "category": "...", "confidence": c}`.
pub fn parse_detect_response(value: &Value) -> Result<Vec<BoundingBox>> {
    let boxes = value
        .get("boxes")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Plugin("detect response lacks a `boxes` array".into()))?;
    boxes
        .iter()
        .map(|b| {
            let coords = b
                .get("box")
                .and_then(Value::as_array)
                .filter(|a| a.len() == 4)
                .ok_or_else(|| Error::Plugin(format!("box entry {b} lacks `box: [x0,y0,x1,y1]`")))?;
            let mut c = [0usize; 4];
            for (slot, v) in c.iter_mut().zip(coords) {
                let f = v
                    .as_f64()
                    .filter(|f| f.is_finite() && *f >= 0.0)
                    .ok_or_else(|| Error::Plugin(format!("bad box coordinate {v}")))?;
                *slot = f.round() as usize;
            }
            let category = b
                .get("category")
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Plugin(format!("box entry {b} lacks `category`")))?
                .to_string();
            let confidence = b
                .get("confidence")
                .and_then(Value::as_f64)
                .filter(|c| (0.0..=1.0).contains(c))
                .ok_or_else(|| Error::Plugin(format!("box entry {b} has no confidence in [0,1]")))?;
            Ok(BoundingBox {
                x_min: c[0],
                y_min: c[1],
                x_max: c[2],
                y_max: c[3],
                category,
                confidence,
            })
        })
        .collect()
}

impl ExtractorBackend for PluginBackend {
    fn name(&self) -> &str {
        self.pool.command()
    }

    fn detect(&self, image: &ObjectImage, categories: &[String]) -> Result<Vec<BoundingBox>> {
        let path = self.image_path(image)?;
        let resp = self.pool.call(&json!({
            "op": "detect",
            "image": path.to_string_lossy(),
            "categories": categories,
        }))?;
        Ok(parse_detect_response(&resp)?
            .into_iter()
            .filter(|b| b.x_min < b.x_max && b.y_min < b.y_max)
            .collect())
    }

    fn segment(&self, image: &ObjectImage, bbox: &BoundingBox) -> Result<Mask> {
        let path = self.image_path(image)?;
        let resp = self.pool.call(&json!({
            "op": "segment",
            "image": path.to_string_lossy(),
            "box": [bbox.x_min, bbox.y_min, bbox.x_max, bbox.y_max],
        }))?;
        let mask_path = resp
            .get("mask")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Plugin("segment response lacks `mask`".into()))?;
        Mask::load(Path::new(mask_path))
    }
}
