//! Binary masks and PNG raster I/O.
//!
//! Masks live in memory as one byte per pixel holding 0 or 1. On disk they
//! are 1-channel 8-bit PNGs with values {0, 255}, thresholded at 128 on load.

use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, RgbImage};

use crate::error::{Error, Result};

pub use image::Rgb;

/// Threshold applied to 8-bit mask values on load.
pub const MASK_THRESHOLD: u8 = 128;

/// Half-open pixel rectangle `[x_min, x_max) x [y_min, y_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl PixelRect {
    pub fn width(&self) -> usize {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Mask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("ones", &self.count())
            .finish()
    }
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            data: vec![1; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Mask {
            width,
            height,
            data,
        }
    }

    /// Builds a mask from row-major values; any nonzero value counts as set.
    pub fn from_values(width: usize, height: usize, values: &[u8]) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {}x{} mask",
                values.len(),
                width,
                height
            )));
        }
        Ok(Mask {
            width,
            height,
            data: values.iter().map(|&v| (v != 0) as u8).collect(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Row-major 0/1 values.
    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn is_full(&self) -> bool {
        self.data.iter().all(|&v| v != 0)
    }

    fn check_same_dims(&self, other: &Mask) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "mask {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// `self AND NOT other`.
    pub fn and_not(&self, other: &Mask) -> Result<Mask> {
        self.check_same_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a != 0 && b == 0) as u8)
            .collect();
        Ok(Mask {
            width: self.width,
            height: self.height,
            data,
        })
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.check_same_dims(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a != 0 || b != 0) as u8)
            .collect();
        Ok(Mask {
            width: self.width,
            height: self.height,
            data,
        })
    }

    /// Number of pixels set in both masks.
    pub fn intersection_count(&self, other: &Mask) -> Result<usize> {
        self.check_same_dims(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a != 0 && b != 0)
            .count())
    }

    /// Intersection over union of the set pixels; 1.0 when both are empty.
    pub fn iou(&self, other: &Mask) -> Result<f64> {
        let inter = self.intersection_count(other)?;
        let union = self.count() + other.count() - inter;
        if union == 0 {
            return Ok(1.0);
        }
        Ok(inter as f64 / union as f64)
    }

    /// Tight bounding box of the set pixels.
    pub fn bounding_box(&self) -> Option<PixelRect> {
        let mut rect: Option<PixelRect> = None;
        for y in 0..self.height {
            let row = &self.data[y * self.width..(y + 1) * self.width];
            let Some(first) = row.iter().position(|&v| v != 0) else {
                continue;
            };
            let last = row.iter().rposition(|&v| v != 0).unwrap_or(first);
            rect = Some(match rect {
                None => PixelRect {
                    x_min: first,
                    y_min: y,
                    x_max: last + 1,
                    y_max: y + 1,
                },
                Some(r) => PixelRect {
                    x_min: r.x_min.min(first),
                    y_min: r.y_min,
                    x_max: r.x_max.max(last + 1),
                    y_max: y + 1,
                },
            });
        }
        rect
    }

    pub fn crop(&self, rect: PixelRect) -> Mask {
        Mask::from_fn(rect.width(), rect.height(), |x, y| {
            self.get(rect.x_min + x, rect.y_min + y)
        })
    }

    /// Clears everything outside `rect`.
    pub fn clip_to(&self, rect: PixelRect) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| {
            rect.contains(x, y) && self.get(x, y)
        })
    }

    pub fn flip_horizontal(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y)
        })
    }

    /// Chebyshev dilation by `radius` pixels.
    pub fn dilate(&self, radius: usize) -> Mask {
        if radius == 0 {
            return self.clone();
        }
        // Separable: rows then columns.
        let mut rows = Mask::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let lo = x.saturating_sub(radius);
                let hi = (x + radius).min(self.width - 1);
                if (lo..=hi).any(|xx| self.get(xx, y)) {
                    rows.set(x, y, true);
                }
            }
        }
        let mut out = Mask::new(self.width, self.height);
        for y in 0..self.height {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius).min(self.height - 1);
            for x in 0..self.width {
                if (lo..=hi).any(|yy| rows.get(x, yy)) {
                    out.set(x, y, true);
                }
            }
        }
        out
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.get(x as usize, y as usize) { 255 } else { 0 }])
        })
    }

    pub fn from_gray(gray: &GrayImage) -> Mask {
        Mask::from_fn(gray.width() as usize, gray.height() as usize, |x, y| {
            gray.get_pixel(x as u32, y as u32)[0] >= MASK_THRESHOLD
        })
    }

    pub fn load(path: &Path) -> Result<Mask> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Mask::from_gray(&img.to_luma8()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_png(&image::DynamicImage::ImageLuma8(self.to_gray()), path)
    }
}

/// Labels the 8-connected components of `mask`.
///
/// Returns a row-major label raster (0 = background, components numbered
/// from 1 in raster-scan order of their first pixel) and the component count.
pub fn label_components(mask: &Mask) -> (Vec<u32>, u32) {
    let (w, h) = mask.dims();
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask.as_slice()[start] == 0 || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (x, y) = ((idx % w) as i64, (idx / w) as i64);
            for dy in -1..=1i64 {
                for dx in -1..=1i64 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if mask.as_slice()[n] != 0 && labels[n] == 0 {
                        labels[n] = next;
                        stack.push(n);
                    }
                }
            }
        }
    }
    (labels, next)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(img.to_rgb8())
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    save_png(&image::DynamicImage::ImageRgb8(img.clone()), path)
}

fn save_png(img: &image::DynamicImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// ITU-R BT.601 luma in [0, 1].
pub fn luminance(img: &RgbImage) -> Vec<f32> {
    img.pixels()
        .map(|p| (0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32) / 255.0)
        .collect()
}

pub fn flip_rgb_horizontal(img: &RgbImage) -> RgbImage {
    image::imageops::flip_horizontal(img)
}

pub fn same_dims(img: &RgbImage, mask: &Mask) -> bool {
    img.width() as usize == mask.width() && img.height() as usize == mask.height()
}
