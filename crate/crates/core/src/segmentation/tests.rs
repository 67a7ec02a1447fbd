use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::compositor::CategoryCounts;
use crate::fixtures::{desk_dataset, texture};
use crate::flow::{encode_flow, FlowField};
use crate::manifest::{load_manifest, manifest_dir};

fn mask(w: usize, h: usize, v: &[u8]) -> Mask {
    Mask::from_values(w, h, v).unwrap()
}

#[test]
fn jaccard_reference_values() {
    let t = mask(2, 2, &[1, 1, 0, 0]);
    assert!(jaccard_loss(&[1.0, 1.0, 0.0, 0.0], &t).unwrap() < 1e-7);
    assert!((jaccard_loss(&[0.0, 0.0, 1.0, 1.0], &t).unwrap() - 1.0).abs() < 1e-7);
    // p = 0.5 everywhere: I = 1, U = 2 + 2 - 1 = 3.
    let loss = jaccard_loss(&[0.5; 4], &t).unwrap();
    assert!((loss - (1.0 - (1.0 + 1e-7) / (3.0 + 1e-7))).abs() < 1e-12, "{loss}");
    assert!(jaccard_loss(&[0.5; 3], &t).is_err());
}

fn random_instance(seed: u64, n: usize) -> (Vec<f64>, Mask) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.01..0.99)).collect();
    let t: Vec<u8> = (0..n * n).map(|_| rng.random_bool(0.5) as u8).collect();
    (p, mask(n, n, &t))
}

#[test]
fn jaccard_gradient_matches_central_differences() {
    for seed in 0..20 {
        let (p, t) = random_instance(seed, 8);
        let g = jaccard_grad(&p, &t).unwrap();
        let h = 1e-6;
        for k in 0..p.len() {
            let mut hi = p.clone();
            hi[k] += h;
            let mut lo = p.clone();
            lo[k] -= h;
            let fd = (jaccard_loss(&hi, &t).unwrap() - jaccard_loss(&lo, &t).unwrap()) / (2.0 * h);
            let rel = (fd - g[k]).abs() / g[k].abs().max(1e-12);
            assert!(rel < 1e-4, "seed {seed} pixel {k}: fd {fd} analytic {}", g[k]);
        }
    }
}

proptest! {
    #[test]
    fn jaccard_invariant_under_flip(seed in any::<u64>()) {
        let (p, t) = random_instance(seed, 6);
        let flipped_p: Vec<f64> = (0..36).map(|i| p[(i / 6) * 6 + 5 - i % 6]).collect();
        let a = jaccard_loss(&p, &t).unwrap();
        let b = jaccard_loss(&flipped_p, &t.flip_horizontal()).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

fn small_model(in_channels: usize) -> SegModel {
    SegModel::new(
        ModelConfig {
            in_channels,
            base_width: 4,
            depth: 2,
        },
        3,
    )
    .unwrap()
}

#[test]
fn forward_shape_range_and_determinism() {
    for (w, h) in [(16, 16), (13, 10)] {
        let img = texture(w, h, 4);
        let mut m = small_model(3);
        let stack = fuse_inputs(&img, None).unwrap();
        let a = m.forward(&stack).unwrap();
        let b = m.forward(&stack).unwrap();
        assert_eq!((a.width, a.height), (w as usize, h as usize));
        assert!(a.data.iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(a, b);
    }
}

#[test]
fn three_and_five_channel_models() {
    let img = texture(16, 16, 5);
    let flow = FlowField::constant(16, 16, 3.0, -1.0);
    assert!(small_model(3).forward(&fuse_inputs(&img, None).unwrap()).is_ok());
    assert!(small_model(5).forward(&fuse_inputs(&img, Some(&flow)).unwrap()).is_ok());
    assert!(small_model(5).forward(&fuse_inputs(&img, None).unwrap()).is_err());
}

#[test]
fn predict_threshold_extremes_and_channel_checks() {
    let img = texture(16, 12, 6);
    let mut m = small_model(3);
    assert!(predict(&mut m, &img, None, 0.0).unwrap().is_full());
    assert!(predict(&mut m, &img, None, 1.0).unwrap().is_empty());
    let flow = FlowField::zeros(16, 12);
    assert!(predict(&mut m, &img, Some(&flow), 0.5).is_err());
    assert!(predict(&mut small_model(5), &img, None, 0.5).is_err());
    assert!(predict(&mut m, &img, None, 1.5).is_err());
}

#[test]
fn config_validation() {
    assert!(ModelConfig {
        in_channels: 4,
        ..Default::default()
    }
    .validate()
    .is_err());
    for cfg in [
        TrainConfig {
            batch_size: 0,
            ..Default::default()
        },
        TrainConfig {
            epochs: 0,
            ..Default::default()
        },
        TrainConfig {
            val_fraction: 1.0,
            ..Default::default()
        },
    ] {
        assert!(cfg.validate().is_err());
    }
    let defaults = TrainConfig::default();
    assert_eq!((defaults.batch_size, defaults.epochs, defaults.lr), (8, 20, 3e-4));
}

fn tiny_dataset(n: usize) -> (tempfile::TempDir, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let counts = CategoryCounts::new(n - n / 2, n / 2, 0);
    let manifest = desk_dataset(dir.path(), counts, 64, 9).unwrap();
    (dir, manifest)
}

fn tiny_model(in_channels: usize) -> ModelConfig {
    ModelConfig {
        in_channels,
        base_width: 2,
        depth: 1,
    }
}

#[test]
fn one_epoch_step_count() {
    let (_dir, manifest) = tiny_dataset(16);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 8,
        ..Default::default()
    };
    // 16 samples, 2 held out, 14 trained in batches of 8.
    let out = train(&manifest, &tiny_model(3), &cfg, false, None, None).unwrap();
    assert_eq!(out.steps, 2);
    assert_eq!(out.history.len(), 1);
}

#[test]
fn same_seed_same_history_and_files() {
    let (dir, manifest) = tiny_dataset(10);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        lr: 1e-2,
        ..Default::default()
    };
    let a = dir.path().join("run_a");
    let b = dir.path().join("run_b");
    let ra = train(&manifest, &tiny_model(3), &cfg, false, None, Some(&a)).unwrap();
    let rb = train(&manifest, &tiny_model(3), &cfg, false, None, Some(&b)).unwrap();
    assert_eq!(ra.history, rb.history);
    for file in [CHECKPOINT_FILE, HISTORY_FILE] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap());
    }
    let lines = std::fs::read_to_string(a.join(HISTORY_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 3);
    let first: serde_json::Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    let keys: Vec<&String> = first.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["epoch", "train_loss", "val_miou"]);
    // The saved checkpoint is the best epoch and reloads to the same model.
    let best = ra.history.iter().map(|r| r.val_miou).fold(f64::MIN, f64::max);
    let ckpt = Checkpoint::load(&a.join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt.val_miou, best);
    let json = |m: &SegModel| serde_json::to_string(m).unwrap();
    assert_eq!(json(&ckpt.model), json(&ra.checkpoint.model));
}

#[test]
fn missing_flow_is_listed_before_training() {
    let (_dir, manifest) = tiny_dataset(4);
    let err = train(&manifest, &tiny_model(5), &TrainConfig::default(), true, None, None).unwrap_err();
    assert!(err.is_validation());
    assert!(err.to_string().contains("4 flow file(s) missing"), "{err}");
    // Channel count must agree with use_flow.
    let err = train(&manifest, &tiny_model(3), &TrainConfig::default(), true, None, None).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn all_zero_flow_trains() {
    let (_dir, manifest) = tiny_dataset(6);
    let flow_dir = manifest_dir(&manifest).join("flow");
    for rec in load_manifest(&manifest).unwrap() {
        let img = crate::raster::load_rgb(&manifest_dir(&manifest).join(&rec.frame_t)).unwrap();
        let bytes = encode_flow(&FlowField::zeros(img.width() as usize, img.height() as usize));
        let path = crate::flow::flow_file_for(&flow_dir, &rec.frame_t);
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(path, bytes).unwrap();
    }
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..Default::default()
    };
    let out = train(&manifest, &tiny_model(5), &cfg, true, None, None).unwrap();
    assert!(out.history.iter().all(|r| r.train_loss.is_finite()));
}

#[test]
fn corrupt_checkpoint_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    let ckpt = Checkpoint {
        version: CHECKPOINT_VERSION,
        use_flow: false,
        epoch: 1,
        val_miou: 0.5,
        train_config: TrainConfig::default(),
        model: small_model(3),
    };
    ckpt.save(&path).unwrap();
    let json = |m: &SegModel| serde_json::to_string(m).unwrap();
    assert_eq!(json(&Checkpoint::load(&path).unwrap().model), json(&ckpt.model));
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    v["model"]["config"]["base_width"] = 5.into();
    std::fs::write(&path, v.to_string()).unwrap();
    assert!(Checkpoint::load(&path).is_err());
    std::fs::write(&path, "{").unwrap();
    assert!(Checkpoint::load(&path).unwrap_err().is_validation());
}
