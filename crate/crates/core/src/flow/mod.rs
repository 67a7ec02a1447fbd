//! Dense optical flow between pseudo frames and its encoding as network input.
//!
//! The built-in estimator is a coarse-to-fine Horn–Schunck solver with
//! warping; learned estimators plug in through [`external_flow`].

mod external;
mod hs;
mod io;

use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Mask;

pub use external::{external_flow, parse_flow_response, request_flow};
pub use hs::{effective_levels, estimate_flow, MIN_LEVEL_SIDE};
pub use io::{decode_flow, encode_flow, read_flow, write_flow, FLOW_MAGIC};

/// Subdirectory of a manifest's directory where flow files live by default.
pub const FLOW_DIR: &str = "flow";

/// `<flow_dir>/<stem of frame_t>.rsfl`, the flow file belonging to a sample.
pub fn flow_file_for(flow_dir: &Path, frame_t: &str) -> PathBuf {
    let stem = Path::new(frame_t)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| frame_t.to_string());
    flow_dir.join(format!("{stem}.rsfl"))
}

/// Computes and writes the flow file of every sample in `manifest`.
///
/// With `plugin` (command and timeout) the external estimator is used,
/// otherwise the built-in solver. Returns the number of files written.
pub fn flow_for_manifest(
    manifest: &Path,
    flow_dir: &Path,
    params: &FlowSolverParams,
    plugin: Option<(&str, std::time::Duration)>,
) -> Result<usize> {
    use rayon::prelude::*;
    params.validate()?;
    let base = crate::manifest::manifest_dir(manifest);
    let records = crate::manifest::load_manifest(manifest)?;
    let pool = plugin.map(|(cmd, timeout)| crate::plugin::PluginPool::new(cmd, timeout));
    records
        .par_iter()
        .map(|r| {
            let (pt, pt1) = (base.join(&r.frame_t), base.join(&r.frame_t1));
            let frame_t = crate::raster::load_rgb(&pt)?;
            let flow = match &pool {
                Some(pool) => request_flow(pool, &pt, &pt1, (frame_t.width() as usize, frame_t.height() as usize))?,
                None => estimate_flow(&frame_t, &crate::raster::load_rgb(&pt1)?, params)?,
            };
            write_flow(&flow, &flow_file_for(flow_dir, &r.frame_t))
        })
        .collect::<Result<Vec<()>>>()?;
    log::info!("wrote {} flow files to {}", records.len(), flow_dir.display());
    Ok(records.len())
}

/// Flow channels are clamped to this many pixels before scaling to [-1, 1].
pub const FLOW_CLAMP: f32 = 16.0;

/// Per-pixel displacement from frame t to frame t+1, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    /// Builds a field from row-major components, rejecting non-finite values.
    pub fn from_components(width: usize, height: usize, dx: Vec<f32>, dy: Vec<f32>) -> Result<Self> {
        if dx.len() != width * height || dy.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "flow components of length {}/{} for {}x{}",
                dx.len(),
                dy.len(),
                width,
                height
            )));
        }
        let field = FlowField {
            width,
            height,
            dx,
            dy,
        };
        if let Some((x, y)) = field.first_non_finite() {
            return Err(Error::InvalidParameter(format!(
                "non-finite flow value at pixel (x={x}, y={y})"
            )));
        }
        Ok(field)
    }

    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Self {
        FlowField {
            width,
            height,
            dx: vec![dx; width * height],
            dy: vec![dy; width * height],
        }
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

    pub fn dx(&self) -> &[f32] {
        &self.dx
    }

    pub fn dy(&self) -> &[f32] {
        &self.dy
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.dx
            .iter()
            .zip(&self.dy)
            .position(|(a, b)| !a.is_finite() || !b.is_finite())
            .map(|i| (i % self.width.max(1), i / self.width.max(1)))
    }

    pub fn magnitude(&self) -> Vec<f32> {
        self.dx
            .iter()
            .zip(&self.dy)
            .map(|(a, b)| (a * a + b * b).sqrt())
            .collect()
    }

    /// Mirror image of the field: columns reversed and `dx` negated.
    pub fn flip_horizontal(&self) -> FlowField {
        let mut out = FlowField::zeros(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let src = y * self.width + (self.width - 1 - x);
                let dst = y * self.width + x;
                out.dx[dst] = -self.dx[src];
                out.dy[dst] = self.dy[src];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSolverParams {
    #[serde(default = "default_smoothness")]
    pub smoothness_weight: f64,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_levels")]
    pub pyramid_levels: usize,
}

fn default_smoothness() -> f64 {
    0.1
}
fn default_iterations() -> usize {
    200
}
fn default_levels() -> usize {
    4
}

impl Default for FlowSolverParams {
    fn default() -> Self {
        FlowSolverParams {
            smoothness_weight: default_smoothness(),
            iterations: default_iterations(),
            pyramid_levels: default_levels(),
        }
    }
}

impl FlowSolverParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.smoothness_weight.is_finite() && self.smoothness_weight > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "smoothness_weight must be > 0, got {}",
                self.smoothness_weight
            )));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidParameter("iterations must be >= 1".into()));
        }
        if self.pyramid_levels < 1 {
            return Err(Error::InvalidParameter("pyramid_levels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Pixels whose flow magnitude exceeds `threshold`.
pub fn flow_magnitude_mask(flow: &FlowField, threshold: f32) -> Result<Mask> {
    if !(threshold.is_finite() && threshold > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "flow magnitude threshold must be > 0, got {threshold}"
        )));
    }
    let t2 = threshold * threshold;
    let values: Vec<u8> = flow
        .dx
        .iter()
        .zip(&flow.dy)
        .map(|(a, b)| (a * a + b * b > t2) as u8)
        .collect();
    Mask::from_values(flow.width, flow.height, &values)
}

/// Channel-major network input: `channels x height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct InputStack {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl InputStack {
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

/// RGB scaled to [0, 1], followed by `dx`, `dy` clamped to ±16 px and
/// scaled to [-1, 1] when a flow field is given.
pub fn fuse_inputs(image: &RgbImage, flow: Option<&FlowField>) -> Result<InputStack> {
    let (w, h) = (image.width() as usize, image.height() as usize);
    let channels = if flow.is_some() { 5 } else { 3 };
    let n = w * h;
    let mut data = vec![0.0f32; channels * n];
    for (i, p) in image.pixels().enumerate() {
        for c in 0..3 {
            data[c * n + i] = p.0[c] as f32 / 255.0;
        }
    }
    if let Some(f) = flow {
        if f.dims() != (w, h) {
            return Err(Error::DimensionMismatch(format!(
                "flow {}x{} vs image {}x{}",
                f.width, f.height, w, h
            )));
        }
        for i in 0..n {
            data[3 * n + i] = f.dx[i].clamp(-FLOW_CLAMP, FLOW_CLAMP) / FLOW_CLAMP;
            data[4 * n + i] = f.dy[i].clamp(-FLOW_CLAMP, FLOW_CLAMP) / FLOW_CLAMP;
        }
    }
    Ok(InputStack {
        channels,
        height: h,
        width: w,
        data,
    })
}
