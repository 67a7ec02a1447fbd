//! Binary railway segmentation: soft Jaccard loss, a small U-shaped
//! network over fused image(+flow) stacks, training and inference.

mod train;

use std::path::Path;

use image::RgbImage;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{fuse_inputs, FlowField, InputStack};
use crate::nn::{Tensor, UNet};
use crate::raster::Mask;

pub(crate) use train::{load_examples, Example};
pub use train::{train, EpochRecord, TrainOutcome, CHECKPOINT_FILE, HISTORY_FILE};

pub const JACCARD_EPS: f64 = 1e-7;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_in_channels")]
    pub in_channels: usize,
    #[serde(default = "default_base_width")]
    pub base_width: usize,
    /// Number of 2x downsampling stages.
    #[serde(default = "default_depth")]
    pub depth: usize,
}

fn default_in_channels() -> usize {
    3
}
fn default_base_width() -> usize {
    16
}
fn default_depth() -> usize {
    4
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: default_in_channels(),
            base_width: default_base_width(),
            depth: default_depth(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels != 3 && self.in_channels != 5 {
            return Err(Error::InvalidParameter(format!(
                "in_channels must be 3 or 5, got {}",
                self.in_channels
            )));
        }
        if self.base_width == 0 || self.depth == 0 || self.depth > 8 {
            return Err(Error::InvalidParameter(format!(
                "base_width must be >= 1 and depth in 1..=8, got {} and {}",
                self.base_width, self.depth
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    /// Flip, coarse dropout and brightness jitter on training batches.
    #[serde(default = "default_augment")]
    pub augment: bool,
}

fn default_batch() -> usize {
    8
}
fn default_epochs() -> usize {
    20
}
fn default_lr() -> f64 {
    3e-4
}
fn default_wd() -> f64 {
    1e-4
}
fn default_val_fraction() -> f64 {
    0.1
}
fn default_augment() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: default_batch(),
            epochs: default_epochs(),
            lr: default_lr(),
            weight_decay: default_wd(),
            seed: 0,
            val_fraction: default_val_fraction(),
            augment: default_augment(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 || self.epochs < 1 {
            return Err(Error::InvalidParameter(format!(
                "batch_size and epochs must be >= 1, got {} and {}",
                self.batch_size, self.epochs
            )));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) || !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lr must be > 0 and weight_decay >= 0, got {} and {}",
                self.lr, self.weight_decay
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Per-pixel railway probabilities, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl ProbMap {
    /// Pixels with probability strictly above `threshold`.
    pub fn threshold(&self, threshold: f32) -> Mask {
        let values: Vec<u8> = self.data.iter().map(|&p| (p > threshold) as u8).collect();
        Mask::from_values(self.width, self.height, &values).expect("sized by construction")
    }
}

fn check_pair(pred: &[f64], target: &Mask) -> Result<()> {
    if pred.len() != target.as_slice().len() {
        return Err(Error::DimensionMismatch(format!(
            "prediction of {} pixels vs target {:?}",
            pred.len(),
            target.dims()
        )));
    }
    Ok(())
}

fn jaccard_terms(pred: &[f64], target: &Mask) -> (f64, f64) {
    let mut inter = 0.0;
    let mut sum_p = 0.0;
    let mut sum_t = 0.0;
    for (&p, &t) in pred.iter().zip(target.as_slice()) {
        let t = t as f64;
        inter += p * t;
        sum_p += p;
        sum_t += t;
    }
    (inter + JACCARD_EPS, sum_p + sum_t - inter + JACCARD_EPS)
}

/// `1 - (I + eps) / (U + eps)` with soft intersection `I = sum p t` and
/// union `U = sum p + sum t - I`.
pub fn jaccard_loss(pred: &[f64], target: &Mask) -> Result<f64> {
    check_pair(pred, target)?;
    let (i, u) = jaccard_terms(pred, target);
    Ok(1.0 - i / u)
}

/// Gradient of [`jaccard_loss`] with respect to each prediction:
/// `-(t_k (U + eps) - (I + eps)(1 - t_k)) / (U + eps)^2`.
pub fn jaccard_grad(pred: &[f64], target: &Mask) -> Result<Vec<f64>> {
    check_pair(pred, target)?;
    let (i, u) = jaccard_terms(pred, target);
    let u2 = u * u;
    Ok(target
        .as_slice()
        .iter()
        .map(|&t| {
            let t = t as f64;
            -(t * u - i * (1.0 - t)) / u2
        })
        .collect())
}

/// A network plus its architecture description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegModel {
    pub config: ModelConfig,
    net: UNet,
}

impl SegModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<SegModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = UNet::new(config.in_channels, config.base_width, config.depth, &mut rng);
        Ok(SegModel { config, net })
    }

    pub fn parameter_count(&mut self) -> usize {
        self.net.parameter_count()
    }

    pub(crate) fn net_mut(&mut self) -> &mut UNet {
        &mut self.net
    }

    /// Inference on one stack. Inputs whose sides are not multiples of
    /// `2^depth` are edge-padded and the output cropped back.
    pub fn forward(&mut self, stack: &InputStack) -> Result<ProbMap> {
        if stack.channels != self.config.in_channels {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} input channels, got {}",
                self.config.in_channels, stack.channels
            )));
        }
        let batch = pad_batch(&[stack], self.net.multiple());
        let logits = self.net.forward(&batch, false);
        Ok(crop_probs(&logits, 0, stack.width, stack.height))
    }
}

fn sigmoid(z: f32) -> f64 {
    1.0 / (1.0 + (-(z as f64)).exp())
}

/// Probabilities are clamped so they stay strictly inside (0, 1) after
/// rounding to f32.
const PROB_FLOOR: f32 = 1e-7;

fn crop_probs(logits: &Tensor, b: usize, width: usize, height: usize) -> ProbMap {
    let mut data = Vec::with_capacity(width * height);
    let plane = &logits.data[b * logits.h * logits.w..][..logits.h * logits.w];
    for y in 0..height {
        for x in 0..width {
            let p = sigmoid(plane[y * logits.w + x]) as f32;
            data.push(p.clamp(PROB_FLOOR, 1.0 - PROB_FLOOR));
        }
    }
    ProbMap { width, height, data }
}

/// Stacks same-sized inputs into a `[C, B, H', W']` tensor, edge-padding
/// each side up to a multiple of `multiple`.
fn pad_batch(stacks: &[&InputStack], multiple: usize) -> Tensor {
    let first = stacks[0];
    let (c, h, w) = (first.channels, first.height, first.width);
    let hp = h.div_ceil(multiple) * multiple;
    let wp = w.div_ceil(multiple) * multiple;
    let b = stacks.len();
    let mut t = Tensor::zeros(c, b, hp, wp);
    for (bi, s) in stacks.iter().enumerate() {
        assert_eq!((s.channels, s.height, s.width), (c, h, w), "batch members differ in shape");
        for ci in 0..c {
            let src = s.plane(ci);
            let dst = &mut t.data[(ci * b + bi) * hp * wp..][..hp * wp];
            for y in 0..hp {
                let sy = y.min(h - 1);
                for x in 0..wp {
                    dst[y * wp + x] = src[sy * w + x.min(w - 1)];
                }
            }
        }
    }
    t
}

/// Thresholded railway mask for one frame. The presence of `flow` must
/// match the model's channel count.
pub fn predict(model: &mut SegModel, image: &RgbImage, flow: Option<&FlowField>, threshold: f32) -> Result<Mask> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in [0, 1], got {threshold}"
        )));
    }
    match (model.config.in_channels, flow.is_some()) {
        (3, true) => {
            return Err(Error::DimensionMismatch(
                "flow channels supplied to a 3-channel model".into(),
            ))
        }
        (5, false) => {
            return Err(Error::DimensionMismatch(
                "5-channel model needs a flow field".into(),
            ))
        }
        _ => {}
    }
    let stack = fuse_inputs(image, flow)?;
    Ok(model.forward(&stack)?.threshold(threshold))
}

/// Serialized best model plus the settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub use_flow: bool,
    pub epoch: usize,
    pub val_miou: f64,
    pub train_config: TrainConfig,
    pub model: SegModel,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut ckpt: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Validation(format!("checkpoint {}: {e}", path.display())))?;
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Validation(format!(
                "checkpoint {} has version {}, expected {CHECKPOINT_VERSION}",
                path.display(),
                ckpt.version
            )));
        }
        ckpt.model.config.validate()?;
        let mut reference = SegModel::new(ckpt.model.config, 0)?;
        let expected: Vec<usize> = reference.net.params().iter().map(|p| p.value.len()).collect();
        let found: Vec<usize> = ckpt.model.net.params().iter().map(|p| p.value.len()).collect();
        if expected != found || ckpt.model.net.in_channels != ckpt.model.config.in_channels {
            return Err(Error::Validation(format!(
                "checkpoint {} weights do not match its model config",
                path.display()
            )));
        }
        ckpt.model.net.zero_grad();
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests;
