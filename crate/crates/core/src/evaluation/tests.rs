use std::collections::BTreeMap;

use proptest::prelude::*;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::compositor::{paste, CategoryCounts};
use crate::error::Error;
use crate::fixtures::{desk_dataset, railway_scene};
use crate::manifest::{load_manifest, manifest_dir};
use crate::raster::Mask;
use crate::scene::{Category, ObjectCutout, Weather};
use crate::segmentation::{Checkpoint, ModelConfig, SegModel, TrainConfig, CHECKPOINT_VERSION};

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, p: f64) -> Mask {
    Mask::from_fn(w, h, |_, _| rng.random_bool(p))
}

fn brute(pred: &Mask, gt: &Mask, class: bool) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            match (pred.get(x, y) == class, gt.get(x, y) == class) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    c
}

#[test]
fn confusion_examples() {
    let gt = Mask::from_fn(8, 8, |x, _| x < 4);
    let same = confusion_counts(&gt, &gt, RAILWAY).unwrap();
    assert_eq!((same.fp, same.fn_), (0, 0));
    let c = confusion_counts(&Mask::filled(8, 8), &gt, RAILWAY).unwrap();
    assert_eq!((c.tp, c.fp, c.fn_), (32, 32, 0));
    assert!(confusion_counts(&gt, &Mask::new(8, 7), RAILWAY).is_err());
    assert!(confusion_counts(&gt, &gt, 2).is_err());
}

#[test]
fn counts_match_brute_force_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let p = rng.random_range(0.0..1.0);
        let pred = random_mask(&mut rng, 16, 16, p);
        let gt = random_mask(&mut rng, 16, 16, 0.5);
        for (class, id) in [(true, RAILWAY), (false, NON_RAILWAY)] {
            let c = confusion_counts(&pred, &gt, id).unwrap();
            assert_eq!(c, brute(&pred, &gt, class));
            assert_eq!(c.total(), 256);
        }
    }
}

#[test]
fn iou_examples() {
    let c = |tp, fp, fn_| ConfusionCounts { tp, fp, fn_, tn: 0 };
    assert_eq!(iou(&c(50, 25, 25)), 0.5);
    assert_eq!(iou(&c(0, 0, 0)), 1.0);
    assert_eq!(iou(&c(0, 10, 0)), 0.0);
}

#[test]
fn miou_examples() {
    assert_eq!(miou(&[1.0, 1.0]).unwrap(), 1.0);
    assert!((miou(&[0.8, 0.6]).unwrap() - 0.7).abs() < 1e-12);
    assert!(miou(&[]).is_err());
}

#[test]
fn per_image_miou_over_fixture_set() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pairs: Vec<(Mask, Mask)> = (0..5)
        .map(|_| (random_mask(&mut rng, 12, 9, 0.4), random_mask(&mut rng, 12, 9, 0.6)))
        .collect();
    let ours: f64 = pairs.iter().map(|(p, g)| binary_miou(p, g).unwrap()).sum::<f64>() / 5.0;
    let mut oracle = 0.0;
    for (p, g) in &pairs {
        let mut per_class = 0.0;
        for class in [false, true] {
            let (mut inter, mut union) = (0, 0);
            for (a, b) in p.as_slice().iter().zip(g.as_slice()) {
                let (a, b) = ((*a == 1) == class, (*b == 1) == class);
                inter += (a && b) as usize;
                union += (a || b) as usize;
            }
            per_class += if union == 0 { 1.0 } else { inter as f64 / union as f64 };
        }
        oracle += per_class / 2.0;
    }
    assert!((ours - oracle / 5.0).abs() < 1e-12);
}

#[test]
fn pixel_accuracy_examples() {
    let a = Mask::from_fn(10, 10, |x, y| (x + y) % 3 == 0);
    assert_eq!(pixel_accuracy(&a, &a).unwrap(), 1.0);
    let inv = Mask::from_fn(10, 10, |x, y| !a.get(x, y));
    assert_eq!(pixel_accuracy(&a, &inv).unwrap(), 0.0);
    let mut b = a.clone();
    for x in 0..3 {
        b.set(x, 5, !b.get(x, 5));
    }
    assert!((pixel_accuracy(&a, &b).unwrap() - 0.97).abs() < 1e-12);
    assert!(pixel_accuracy(&a, &Mask::new(10, 9)).is_err());
}

proptest! {
    #[test]
    fn miou_symmetric_and_bounded(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let m = miou(&[a, b]).unwrap();
        prop_assert_eq!(m, miou(&[b, a]).unwrap());
        prop_assert!(m >= a.min(b) && m <= a.max(b));
    }

    #[test]
    fn accuracy_from_counts_matches_direct(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = random_mask(&mut rng, 32, 32, 0.5);
        let gt = random_mask(&mut rng, 32, 32, 0.5);
        let c = confusion_counts(&pred, &gt, RAILWAY).unwrap();
        prop_assert_eq!(accuracy_from_counts(&c), pixel_accuracy(&pred, &gt).unwrap());
        prop_assert_eq!(iou(&swap_classes(&c)), iou(&confusion_counts(&pred, &gt, NON_RAILWAY).unwrap()));
    }
}

fn square_obstacle(side: usize) -> ObjectCutout {
    let patch = image::RgbImage::from_pixel(side as u32, side as u32, image::Rgb([200, 30, 30]));
    ObjectCutout::new(patch, Mask::filled(side, side), Category::Texture, "square").unwrap()
}

#[test]
fn single_pasted_obstacle_is_one_region() {
    let scene = railway_scene("s", 128, 128, Weather::Sunny, 2);
    let roi = &scene.railway_mask;
    assert!(obstacle_regions(roi, roi, 1).unwrap().is_empty());
    // Anchor on the track centreline well below the horizon.
    let y = 110;
    let xs: Vec<usize> = (0..128).filter(|&x| roi.get(x, y)).collect();
    let x = xs[xs.len() / 2];
    let pasted = paste(&scene, &square_obstacle(20), (x as i64, y as i64)).unwrap();
    let regions = obstacle_regions(&pasted.visible_railway, roi, 1).unwrap();
    assert_eq!(regions.len(), 1, "{regions:?}");
    let r = &regions[0];
    let inside = pasted.footprint.intersection_count(roi).unwrap();
    assert_eq!(r.area, inside);
    assert!(r.area > 300 && r.area <= 400, "{}", r.area);
    assert!(obstacle_regions(&pasted.visible_railway, roi, 500).unwrap().is_empty());
}

#[test]
fn regions_sorted_by_area_then_position() {
    let roi = Mask::filled(20, 20);
    // Holes: 2x2 at (10,10), 3x3 at (0,15), 2x2 at (15,2), 2x2 at (2,2).
    let holes = [(10, 10, 2), (0, 15, 3), (15, 2, 2), (2, 2, 2)];
    let pred = Mask::from_fn(20, 20, |x, y| {
        !holes
            .iter()
            .any(|&(hx, hy, s)| x >= hx && x < hx + s && y >= hy && y < hy + s)
    });
    let regions = obstacle_regions(&pred, &roi, 1).unwrap();
    let corners: Vec<[usize; 2]> = regions.iter().map(|r| [r.bbox[0], r.bbox[1]]).collect();
    assert_eq!(corners, [[0, 15], [2, 2], [15, 2], [10, 10]]);
    assert_eq!(regions[0].bbox, [0, 15, 3, 18]);
    assert_eq!(regions[0].centroid, [1.0, 16.0]);
    assert_eq!(regions.iter().map(|r| r.area).collect::<Vec<_>>(), [9, 4, 4, 4]);
    // Diagonal neighbours join under 8-connectivity.
    let diag = Mask::from_fn(4, 4, |x, y| !(x == y));
    assert_eq!(obstacle_regions(&diag, &Mask::filled(4, 4), 1).unwrap().len(), 1);
}

/// A model whose output is the constant `logit` everywhere.
fn constant_model(in_channels: usize, logit: f32) -> SegModel {
    let model = SegModel::new(
        ModelConfig {
            in_channels,
            base_width: 2,
            depth: 1,
        },
        0,
    )
    .unwrap();
    let mut v = serde_json::to_value(&model).unwrap();
    let head = &mut v["net"]["head"];
    let n = head["weight"]["value"].as_array().unwrap().len();
    head["weight"]["value"] = serde_json::json!(vec![0.0; n]);
    head["bias"]["value"] = serde_json::json!([logit]);
    serde_json::from_value(v).unwrap()
}

fn checkpoint(model: SegModel, use_flow: bool) -> Checkpoint {
    Checkpoint {
        version: CHECKPOINT_VERSION,
        use_flow,
        epoch: 1,
        val_miou: 1.0,
        train_config: TrainConfig::default(),
        model,
    }
}

/// Desk dataset whose ground-truth masks are overwritten with all-railway.
fn all_railway_band(dir: &std::path::Path, seed: u64) -> std::path::PathBuf {
    let manifest = desk_dataset(dir, CategoryCounts::new(2, 1, 1), 64, seed).unwrap();
    for rec in load_manifest(&manifest).unwrap() {
        Mask::filled(64, 64).save(&manifest_dir(&manifest).join(&rec.mask_t)).unwrap();
    }
    manifest
}

#[test]
fn perfect_predictions_give_unit_metrics_and_report_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let mut bands = BTreeMap::new();
    bands.insert(Band::Near, all_railway_band(&dir.path().join("near"), 1));
    bands.insert(Band::Far, all_railway_band(&dir.path().join("far"), 2));
    let ckpt = checkpoint(constant_model(3, 20.0), false);
    let opts = EvalOptions {
        plot_dir: Some(dir.path().join("plots")),
        ..Default::default()
    };
    let report = evaluate_bands(&ckpt, &bands, false, &opts).unwrap();
    assert_eq!(report.per_band.len(), 2);
    for m in report.per_band.values() {
        assert_eq!((m.iou.railway, m.iou.non_railway, m.miou, m.pixel_accuracy), (1.0, 1.0, 1.0, 1.0));
        assert_eq!(m.samples, 4);
    }
    assert_eq!(report.averaging, "micro");
    assert_eq!(report.config_fingerprint.len(), 64);
    assert!(dir.path().join("plots/near/00000_overlay.png").is_file());
    let path = dir.path().join("report.json");
    report.save(&path).unwrap();
    assert_eq!(EvalReport::load(&path).unwrap(), report);

    // Same inputs, same fingerprint; a different model changes it.
    let again = evaluate_bands(&ckpt, &bands, false, &EvalOptions::default()).unwrap();
    assert_eq!(again.config_fingerprint, report.config_fingerprint);
    let other = evaluate_bands(&checkpoint(constant_model(3, -20.0), false), &bands, false, &EvalOptions::default()).unwrap();
    assert_ne!(other.config_fingerprint, report.config_fingerprint);
    assert_eq!(other.per_band[&Band::Near].iou.railway, 0.0);
}

#[test]
fn missing_bands_warn_but_empty_report_fails() {
    let dir = tempfile::tempdir().unwrap();
    let mut bands = BTreeMap::new();
    bands.insert(Band::Mid, all_railway_band(&dir.path().join("mid"), 3));
    bands.insert(Band::Far, dir.path().join("nope/manifest.jsonl"));
    let ckpt = checkpoint(constant_model(3, 20.0), false);
    let report = evaluate_bands(&ckpt, &bands, false, &EvalOptions::default()).unwrap();
    assert_eq!(report.per_band.keys().copied().collect::<Vec<_>>(), [Band::Mid]);

    bands.remove(&Band::Mid);
    let err = evaluate_bands(&ckpt, &bands, false, &EvalOptions::default()).unwrap_err();
    assert!(err.to_string().contains("empty"), "{err}");
    assert!(matches!(
        evaluate_bands(&ckpt, &bands, true, &EvalOptions::default()),
        Err(Error::Config(_))
    ));
}

#[test]
fn band_names_parse() {
    assert_eq!("near".parse::<Band>().unwrap(), Band::Near);
    assert!("close".parse::<Band>().is_err());
    assert_eq!(serde_json::to_string(&Band::Far).unwrap(), "\"far\"");
}

fn tiny_train() -> TrainConfig {
    TrainConfig {
        epochs: 1,
        batch_size: 4,
        ..Default::default()
    }
}

fn tiny_model() -> ModelConfig {
    ModelConfig {
        in_channels: 3,
        base_width: 2,
        depth: 1,
    }
}

#[test]
fn ablation_shape_and_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let all = desk_dataset(&dir.path().join("all"), CategoryCounts::new(3, 3, 2), 64, 4).unwrap();
    let no_texture = desk_dataset(&dir.path().join("no_texture"), CategoryCounts::new(4, 4, 0), 64, 4).unwrap();
    let eval = desk_dataset(&dir.path().join("eval"), CategoryCounts::new(2, 2, 1), 64, 8).unwrap();
    let variants: BTreeMap<String, _> = [
        ("all".to_string(), all.clone()),
        ("all_again".to_string(), all),
        ("no_texture".to_string(), no_texture),
    ]
    .into();
    let evals: BTreeMap<Band, _> = [(Band::Near, eval.clone()), (Band::Far, eval)].into();
    let report = run_ablation(&variants, &tiny_model(), &tiny_train(), false, &evals, None).unwrap();
    assert_eq!(report.rows.len(), 3);
    assert!(report.rows.values().all(|r| (0.0..=1.0).contains(&r.miou)));
    assert_eq!(report.rows["all"], report.rows["all_again"]);
    assert_eq!(report.eval_split, "union of bands: near, far");
    assert_eq!(report.eval_samples, 10);
    assert!(report.table().lines().count() == 4);
}

#[test]
fn ablation_errors_name_the_variant() {
    let dir = tempfile::tempdir().unwrap();
    let ok = desk_dataset(&dir.path().join("ok"), CategoryCounts::new(2, 2, 0), 64, 4).unwrap();
    let evals: BTreeMap<Band, _> = [(Band::Near, ok.clone())].into();
    let one: BTreeMap<String, _> = [("only".to_string(), ok.clone())].into();
    assert!(matches!(
        run_ablation(&one, &tiny_model(), &tiny_train(), false, &evals, None),
        Err(Error::Config(_))
    ));
    let two: BTreeMap<String, _> = [
        ("good".to_string(), ok),
        ("broken".to_string(), dir.path().join("missing.jsonl")),
    ]
    .into();
    let err = run_ablation(&two, &tiny_model(), &tiny_train(), false, &evals, None).unwrap_err();
    assert!(err.to_string().contains("variant `broken`"), "{err}");
}
