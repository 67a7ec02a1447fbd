use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::SystemTime;

use image::{Rgb, RgbImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::metrics::{accuracy_from_counts, confusion_counts, iou, miou, swap_classes, ConfusionCounts, RAILWAY};
use crate::error::{Error, Result};
use crate::flow::{FlowField, FLOW_DIR};
use crate::manifest::manifest_dir;
use crate::raster::{save_rgb, Mask};
use crate::segmentation::{load_examples, train, Checkpoint, Example, ModelConfig, SegModel, TrainConfig};

/// Averaging mode recorded in reports: counts are pooled within a band
/// before any metric is computed.
pub const AVERAGING: &str = "micro";
pub const DEFAULT_THRESHOLD: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Near,
    Mid,
    Far,
}

impl Band {
    pub const ALL: [Band; 3] = [Band::Near, Band::Mid, Band::Far];

    pub fn as_str(&self) -> &'static str {
        match self {
            Band::Near => "near",
            Band::Mid => "mid",
            Band::Far => "far",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Band {
    type Err = Error;
    fn from_str(s: &str) -> Result<Band> {
        Band::ALL
            .into_iter()
            .find(|b| b.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown band `{s}`; expected near, mid or far")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerClassIou {
    pub railway: f64,
    pub non_railway: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandMetrics {
    pub iou: PerClassIou,
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub samples: usize,
    /// Railway-class counts pooled over the band.
    pub counts: ConfusionCounts,
}

impl BandMetrics {
    pub fn from_counts(counts: ConfusionCounts, samples: usize) -> BandMetrics {
        let railway = iou(&counts);
        let non_railway = iou(&swap_classes(&counts));
        BandMetrics {
            iou: PerClassIou { railway, non_railway },
            miou: miou(&[non_railway, railway]).expect("two classes"),
            pixel_accuracy: accuracy_from_counts(&counts),
            samples,
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_band: BTreeMap<Band, BandMetrics>,
    pub averaging: String,
    pub threshold: f32,
    pub use_flow: bool,
    pub config_fingerprint: String,
    pub timestamp: String,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    pub fn load(path: &Path) -> Result<EvalReport> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Validation(format!("report {}: {e}", path.display())))
    }
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn timestamp_now() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

fn fingerprint(value: &serde_json::Value) -> String {
    sha256_hex(value.to_string().as_bytes())
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub threshold: f32,
    /// Directory for prediction overlays and flow heatmaps.
    pub plot_dir: Option<PathBuf>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: DEFAULT_THRESHOLD,
            plot_dir: None,
        }
    }
}

fn load_band(manifest: &Path, use_flow: bool) -> Result<Vec<Example>> {
    let flow_dir = manifest_dir(manifest).join(FLOW_DIR);
    load_examples(manifest, use_flow.then_some(flow_dir.as_path()))
}

/// Pooled railway counts of `model` over `examples`. With `plot`, one
/// overlay (and a flow heatmap when present) is written per example.
fn pooled_counts(
    model: &SegModel,
    examples: &[Example],
    threshold: f32,
    plot: Option<&Path>,
) -> Result<ConfusionCounts> {
    let per_image: Vec<ConfusionCounts> = examples
        .par_iter()
        .enumerate()
        .map_init(
            || model.clone(),
            |m, (i, ex)| {
                let pred = crate::segmentation::predict(m, &ex.sample.frame_t, ex.flow.as_ref(), threshold)?;
                if let Some(dir) = plot {
                    save_rgb(&overlay(&ex.sample.frame_t, &pred, &ex.sample.mask_t), &dir.join(format!("{i:05}_overlay.png")))?;
                    if let Some(flow) = &ex.flow {
                        save_rgb(&flow_heatmap(flow), &dir.join(format!("{i:05}_flow.png")))?;
                    }
                }
                confusion_counts(&pred, &ex.sample.mask_t, RAILWAY)
            },
        )
        .collect::<Result<_>>()?;
    Ok(per_image.into_iter().fold(ConfusionCounts::default(), |a, c| a + c))
}

/// Darkened frame with true positives in green, false positives in red
/// and misses in blue.
pub fn overlay(frame: &RgbImage, pred: &Mask, gt: &Mask) -> RgbImage {
    RgbImage::from_fn(frame.width(), frame.height(), |x, y| {
        let base = frame.get_pixel(x, y).0.map(|v| v / 2);
        let tint = match (pred.get(x as usize, y as usize), gt.get(x as usize, y as usize)) {
            (true, true) => [0, 120, 0],
            (true, false) => [120, 0, 0],
            (false, true) => [0, 0, 120],
            (false, false) => [0, 0, 0],
        };
        Rgb([0, 1, 2].map(|c| base[c].saturating_add(tint[c])))
    })
}

/// Flow magnitude, black at zero through red to yellow at the maximum.
pub fn flow_heatmap(flow: &FlowField) -> RgbImage {
    let mag = flow.magnitude();
    let max = mag.iter().cloned().fold(0.0f32, f32::max).max(1e-6);
    RgbImage::from_fn(flow.width() as u32, flow.height() as u32, |x, y| {
        let t = mag[y as usize * flow.width() + x as usize] / max;
        let r = (t * 2.0).min(1.0);
        let g = (t * 2.0 - 1.0).max(0.0);
        Rgb([(r * 255.0) as u8, (g * 255.0) as u8, 0])
    })
}

/// Evaluates `checkpoint` on each band manifest. Counts are pooled per
/// band, then turned into metrics. Bands whose manifest does not exist are
/// skipped with a warning; a report with no band is an error.
pub fn evaluate_bands(
    checkpoint: &Checkpoint,
    bands: &BTreeMap<Band, PathBuf>,
    use_flow: bool,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if checkpoint.use_flow != use_flow {
        return Err(Error::Config(format!(
            "checkpoint was trained with use_flow={} but evaluation asks for use_flow={use_flow}",
            checkpoint.use_flow
        )));
    }
    if !(0.0..=1.0).contains(&options.threshold) {
        return Err(Error::InvalidParameter(format!(
            "threshold must lie in [0, 1], got {}",
            options.threshold
        )));
    }
    let mut per_band = BTreeMap::new();
    let mut digests = BTreeMap::new();
    for band in Band::ALL {
        let Some(manifest) = bands.get(&band) else {
            log::warn!("no manifest for band `{band}`");
            continue;
        };
        if !manifest.is_file() {
            log::warn!("band `{band}`: manifest {} not found; skipping", manifest.display());
            continue;
        }
        let examples = load_band(manifest, use_flow)?;
        let plot = options.plot_dir.as_ref().map(|d| d.join(band.as_str()));
        let counts = pooled_counts(&checkpoint.model, &examples, options.threshold, plot.as_deref())?;
        log::info!("band `{band}`: {} samples", examples.len());
        per_band.insert(band, BandMetrics::from_counts(counts, examples.len()));
        digests.insert(band.as_str(), file_digest(manifest)?);
    }
    if per_band.is_empty() {
        return Err(Error::Validation("no band could be evaluated; the report would be empty".into()));
    }
    let config_fingerprint = fingerprint(&json!({
        "model": checkpoint.model.config,
        "train": checkpoint.train_config,
        "epoch": checkpoint.epoch,
        "weights": sha256_hex(serde_json::to_string(&checkpoint.model)?.as_bytes()),
        "use_flow": use_flow,
        "threshold": options.threshold,
        "bands": digests,
    }));
    Ok(EvalReport {
        per_band,
        averaging: AVERAGING.to_string(),
        threshold: options.threshold,
        use_flow,
        config_fingerprint,
        timestamp: timestamp_now(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub train_samples: usize,
    pub best_epoch: usize,
    pub best_val_miou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: BTreeMap<String, AblationRow>,
    /// Which evaluation data the rows were scored on.
    pub eval_split: String,
    pub eval_samples: usize,
    pub averaging: String,
    pub use_flow: bool,
    pub config_fingerprint: String,
    pub timestamp: String,
}

impl AblationReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(self, path)
    }

    /// Fixed-width text table, one row per variant.
    pub fn table(&self) -> String {
        let width = self.rows.keys().map(|k| k.len()).max().unwrap_or(0).max(7);
        let mut out = format!("{:<width$}  {:>6}  {:>6}  {:>7}\n", "variant", "mIoU", "PA", "samples");
        for (name, row) in &self.rows {
            out.push_str(&format!(
                "{name:<width$}  {:>6.4}  {:>6.4}  {:>7}\n",
                row.miou, row.pixel_accuracy, row.train_samples
            ));
        }
        out
    }
}

/// Trains one model per dataset variant with the same model and training
/// settings, then scores each on the union of the evaluation bands.
///
/// A variant that fails to train aborts the run; the error names it. With
/// `out_dir`, each variant's checkpoint and history go to `out_dir/<name>`.
pub fn run_ablation(
    variants: &BTreeMap<String, PathBuf>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    use_flow: bool,
    eval_manifests: &BTreeMap<Band, PathBuf>,
    out_dir: Option<&Path>,
) -> Result<AblationReport> {
    if variants.len() < 2 {
        return Err(Error::Config(format!(
            "an ablation needs at least 2 dataset variants, got {}",
            variants.len()
        )));
    }
    if eval_manifests.is_empty() {
        return Err(Error::Config("an ablation needs at least one evaluation manifest".into()));
    }
    let mut eval = Vec::new();
    let mut eval_digests = BTreeMap::new();
    for (band, manifest) in eval_manifests {
        eval.extend(load_band(manifest, use_flow)?);
        eval_digests.insert(band.as_str(), file_digest(manifest)?);
    }
    let mut rows = BTreeMap::new();
    let mut variant_digests = BTreeMap::new();
    for (name, manifest) in variants {
        log::info!("ablation variant `{name}`");
        let wrap = |e: Error| Error::Training(format!("variant `{name}`: {e}"));
        let dir = out_dir.map(|d| d.join(name));
        let outcome = train(manifest, model_config, train_config, use_flow, None, dir.as_deref()).map_err(wrap)?;
        let counts = pooled_counts(&outcome.checkpoint.model, &eval, DEFAULT_THRESHOLD, None)?;
        let metrics = BandMetrics::from_counts(counts, eval.len());
        let train_samples = crate::manifest::load_manifest(manifest)?.len();
        rows.insert(
            name.clone(),
            AblationRow {
                miou: metrics.miou,
                pixel_accuracy: metrics.pixel_accuracy,
                train_samples,
                best_epoch: outcome.checkpoint.epoch,
                best_val_miou: outcome.checkpoint.val_miou,
            },
        );
        variant_digests.insert(name.as_str(), file_digest(manifest)?);
    }
    let bands: Vec<&str> = eval_manifests.keys().map(|b| b.as_str()).collect();
    let config_fingerprint = fingerprint(&json!({
        "model": model_config,
        "train": train_config,
        "use_flow": use_flow,
        "variants": variant_digests,
        "eval": eval_digests,
    }));
    Ok(AblationReport {
        rows,
        eval_split: format!("union of bands: {}", bands.join(", ")),
        eval_samples: eval.len(),
        averaging: AVERAGING.to_string(),
        use_flow,
        config_fingerprint,
        timestamp: timestamp_now(),
    })
}
