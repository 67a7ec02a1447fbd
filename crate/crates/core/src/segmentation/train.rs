use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{jaccard_grad, jaccard_loss, pad_batch, sigmoid, Checkpoint, ModelConfig, SegModel, TrainConfig, CHECKPOINT_VERSION};
use crate::compositor::{augment, sample_seed};
use crate::error::{Error, Result};
use crate::evaluation::{iou, miou, swap_classes, confusion_counts, ConfusionCounts, RAILWAY};
use crate::flow::{flow_file_for, fuse_inputs, read_flow, FlowField, InputStack, FLOW_DIR};
use crate::manifest::{load_samples, manifest_dir, LoadedSample};
use crate::nn::{AdamW, Tensor};
use crate::scene::{CompositeSample, PlacementSpec, RescaleParams};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_miou: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub steps: u64,
}

pub(crate) struct Example {
    pub(crate) sample: CompositeSample,
    pub(crate) flow: Option<FlowField>,
}

fn to_composite(s: LoadedSample) -> CompositeSample {
    let r = s.record;
    CompositeSample {
        scene_id: r.scene_id,
        weather: r.weather,
        category: r.category,
        seed: r.seed,
        frame_t: s.frame_t,
        frame_t1: s.frame_t1,
        mask_t: s.mask_t,
        mask_t1: s.mask_t1,
        placement: PlacementSpec {
            anchor: (r.anchor_x, r.anchor_y),
            shift: (r.dx, r.dy),
            rescale: RescaleParams::default(),
        },
        hflipped: false,
    }
}

/// Loads the samples of `manifest` and, with `flow_dir`, their flow
/// fields. Missing flow files are reported together.
pub(crate) fn load_examples(manifest: &Path, flow_dir: Option<&Path>) -> Result<Vec<Example>> {
    let samples = load_samples(manifest)?;
    if samples.is_empty() {
        return Err(Error::Validation(format!("manifest {} has no samples", manifest.display())));
    }
    let flows: Vec<Option<PathBuf>> = samples
        .iter()
        .map(|s| flow_dir.map(|d| flow_file_for(d, &s.record.frame_t)))
        .collect();
    let missing: Vec<String> = flows
        .iter()
        .flatten()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "{} flow file(s) missing; run `railsynth flow` first: {}",
            missing.len(),
            missing.join(", ")
        )));
    }
    let dims = (samples[0].frame_t.width(), samples[0].frame_t.height());
    samples
        .into_iter()
        .zip(flows)
        .map(|(s, fp)| {
            if (s.frame_t.width(), s.frame_t.height()) != dims {
                return Err(Error::DimensionMismatch(format!(
                    "training frames must share one size; `{}` differs from {}x{}",
                    s.record.frame_t, dims.0, dims.1
                )));
            }
            let flow = fp.map(|p| read_flow(&p)).transpose()?;
            Ok(Example {
                sample: to_composite(s),
                flow,
            })
        })
        .collect()
}

/// Deterministic train/validation split: at least one sample on each side.
fn split(n: usize, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(sample_seed(seed, usize::MAX)));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let val = order[..n_val].to_vec();
    let mut train = order[n_val..].to_vec();
    train.sort_unstable();
    (train, val)
}

fn stack_for(example: &Example, augment_seed: Option<u64>) -> Result<(InputStack, crate::raster::Mask)> {
    match augment_seed {
        None => Ok((
            fuse_inputs(&example.sample.frame_t, example.flow.as_ref())?,
            example.sample.mask_t.clone(),
        )),
        Some(seed) => {
            let aug = augment(&example.sample, &mut ChaCha8Rng::seed_from_u64(seed));
            let flow = match (&example.flow, aug.hflipped) {
                (Some(f), true) => Some(f.flip_horizontal()),
                (f, _) => f.clone(),
            };
            Ok((fuse_inputs(&aug.frame_t, flow.as_ref())?, aug.mask_t))
        }
    }
}

/// Two-class mIoU of thresholded predictions, from counts pooled over
/// the given examples.
fn validation_miou(model: &mut SegModel, examples: &[Example], idx: &[usize]) -> Result<f64> {
    let mut rail = ConfusionCounts::default();
    for &i in idx {
        let (stack, target) = stack_for(&examples[i], None)?;
        let pred = model.forward(&stack)?.threshold(0.5);
        rail += confusion_counts(&pred, &target, RAILWAY)?;
    }
    miou(&[iou(&swap_classes(&rail)), iou(&rail)])
}

/// Trains a fresh model on the samples of `manifest`.
///
/// With `use_flow`, flow fields are read from `flow_dir` (default
/// `<manifest dir>/flow`) and the model must take 5 input channels. The
/// checkpoint with the best validation mIoU is kept; when `out_dir` is
/// given it is written there together with the per-epoch history.
pub fn train(
    manifest: &Path,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    use_flow: bool,
    flow_dir: Option<&Path>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    model_config.validate()?;
    train_config.validate()?;
    let expected = if use_flow { 5 } else { 3 };
    if model_config.in_channels != expected {
        return Err(Error::Config(format!(
            "model.in_channels is {} but use_flow={use_flow} needs {expected}",
            model_config.in_channels
        )));
    }
    let default_flow_dir = manifest_dir(manifest).join(FLOW_DIR);
    let flow_dir = use_flow.then(|| flow_dir.unwrap_or(&default_flow_dir));
    let examples = load_examples(manifest, flow_dir)?;
    if examples.len() < 2 {
        return Err(Error::Validation(
            "training needs at least 2 samples (one is held out for validation)".into(),
        ));
    }
    let (train_idx, val_idx) = split(examples.len(), train_config.val_fraction, train_config.seed);
    log::info!(
        "training on {} samples, validating on {}",
        train_idx.len(),
        val_idx.len()
    );

    let mut model = SegModel::new(*model_config, train_config.seed)?;
    let mut opt = AdamW::new(train_config.lr as f32, train_config.weight_decay as f32);
    let mut order_rng = ChaCha8Rng::seed_from_u64(sample_seed(train_config.seed, usize::MAX - 1));
    let mut history = Vec::with_capacity(train_config.epochs);
    let mut best: Option<Checkpoint> = None;
    let mut history_file = match out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path = dir.join(HISTORY_FILE);
            Some((std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?, path))
        }
        None => None,
    };

    for epoch in 1..=train_config.epochs {
        let mut order = train_idx.clone();
        order.shuffle(&mut order_rng);
        let epoch_seed = sample_seed(train_config.seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(train_config.batch_size) {
            let mut stacks = Vec::with_capacity(batch.len());
            let mut targets = Vec::with_capacity(batch.len());
            for &i in batch {
                let seed = train_config.augment.then(|| sample_seed(epoch_seed, i));
                let (s, t) = stack_for(&examples[i], seed)?;
                stacks.push(s);
                targets.push(t);
            }
            loss_sum += step(&mut model, &mut opt, &stacks, &targets)? * batch.len() as f64;
            log::debug!("epoch {epoch} step {}", opt.steps());
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        if !train_loss.is_finite() {
            return Err(Error::Training(format!("loss diverged at epoch {epoch}")));
        }
        let val_miou = validation_miou(&mut model, &examples, &val_idx)?;
        log::info!("epoch {epoch}: train_loss {train_loss:.4} val_miou {val_miou:.4}");
        let record = EpochRecord {
            epoch,
            train_loss,
            val_miou,
        };
        if let Some((file, path)) = history_file.as_mut() {
            writeln!(file, "{}", serde_json::to_string(&record)?).map_err(|e| Error::io(path.as_path(), e))?;
        }
        history.push(record);
        if best.as_ref().is_none_or(|b| val_miou > b.val_miou) {
            best = Some(Checkpoint {
                version: CHECKPOINT_VERSION,
                use_flow,
                epoch,
                val_miou,
                train_config: *train_config,
                model: model.clone(),
            });
        }
    }
    let checkpoint = best.expect("at least one epoch");
    if let Some(dir) = out_dir {
        checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    }
    Ok(TrainOutcome {
        checkpoint,
        history,
        steps: opt.steps() as u64,
    })
}

/// One optimizer step on a batch; returns the mean per-image loss.
fn step(model: &mut SegModel, opt: &mut AdamW, stacks: &[InputStack], targets: &[crate::raster::Mask]) -> Result<f64> {
    let refs: Vec<&InputStack> = stacks.iter().collect();
    let net = model.net_mut();
    let input = pad_batch(&refs, net.multiple());
    net.zero_grad();
    let logits = net.forward(&input, true);
    let (w, h) = (stacks[0].width, stacks[0].height);
    let mut dlogits = Tensor::zeros(1, logits.b, logits.h, logits.w);
    let b = stacks.len() as f64;
    let mut total = 0.0;
    for (bi, target) in targets.iter().enumerate() {
        let plane = &logits.data[bi * logits.h * logits.w..][..logits.h * logits.w];
        let p_exact: Vec<f64> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (y, x)))
            .map(|(y, x)| sigmoid(plane[y * logits.w + x]))
            .collect();
        total += jaccard_loss(&p_exact, target)?;
        let grad = jaccard_grad(&p_exact, target)?;
        let dplane = &mut dlogits.data[bi * logits.h * logits.w..][..logits.h * logits.w];
        for y in 0..h {
            for x in 0..w {
                let k = y * w + x;
                let p = p_exact[k];
                dplane[y * logits.w + x] = (grad[k] * p * (1.0 - p) / b) as f32;
            }
        }
    }
    net.backward(&dlogits);
    opt.step(net.params());
    Ok(total / b)
}
