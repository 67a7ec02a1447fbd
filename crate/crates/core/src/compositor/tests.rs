use std::collections::BTreeMap;
use std::convert::Infallible;

use image::Rgb;
use proptest::prelude::*;
use rand::{SeedableRng, TryRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::scene::{Category, Weather};

fn opaque(w: u32, h: u32, color: [u8; 3]) -> ObjectCutout {
    ObjectCutout::new(
        RgbImage::from_pixel(w, h, Rgb(color)),
        Mask::filled(w as usize, h as usize),
        Category::Person,
        "opaque",
    )
    .unwrap()
}

/// Patch whose every pixel has a distinct color not used by `plain_scene`.
fn gradient(w: u32, h: u32) -> ObjectCutout {
    ObjectCutout::new(
        RgbImage::from_fn(w, h, |x, y| Rgb([x as u8 * 4 + 1, y as u8 * 4 + 1, 255])),
        Mask::filled(w as usize, h as usize),
        Category::Animal,
        "gradient",
    )
    .unwrap()
}

/// 64x48 gray scene whose railway is the rectangle cols 16..48, rows 16..48.
fn plain_scene() -> BaseScene {
    BaseScene::new(
        "plain",
        RgbImage::from_fn(64, 48, |x, y| Rgb([(x * 2) as u8, (y * 3) as u8, 0])),
        Mask::from_fn(64, 48, |x, y| (16..48).contains(&x) && y >= 16),
        Weather::Sunny,
    )
    .unwrap()
}

#[test]
fn rescale_reference_values() {
    let p = RescaleParams::default();
    let out = rescale_cutout(&opaque(100, 200, [1, 2, 3]), 100, &p).unwrap();
    assert_eq!((out.height(), out.width()), (90, 45));
    assert_eq!(out.native_size, (200, 100));
    let out = rescale_cutout(&opaque(100, 200, [1, 2, 3]), 0, &p).unwrap();
    assert_eq!(out.height(), 30);
}

#[test]
fn rescale_square_stays_square() {
    let sq = opaque(50, 50, [9, 9, 9]);
    for y in [0, 7, 33, 100, 250] {
        let out = rescale_cutout(&sq, y, &RescaleParams::default()).unwrap();
        assert_eq!(out.height(), out.width(), "anchor_y={y}");
    }
}

#[test]
fn rescale_rejects_tiny_and_negative() {
    let p = RescaleParams {
        alpha: 0.05,
        beta: 2.0,
    };
    match rescale_cutout(&opaque(10, 10, [0; 3]), 20, &p) {
        Err(Error::ObjectTooSmall { height: 3, min: 8 }) => {}
        other => panic!("unexpected {other:?}"),
    }
    assert!(rescale_cutout(&opaque(10, 10, [0; 3]), -1, &RescaleParams::default()).is_err());
}

#[test]
fn rescale_keeps_alpha_binary_and_shape() {
    // Diagonal band alpha, upscaled: every output alpha pixel maps to a source alpha pixel.
    let patch = RgbImage::from_pixel(20, 20, Rgb([100, 0, 0]));
    let alpha = Mask::from_fn(20, 20, |x, y| x.abs_diff(y) < 3);
    let cut = ObjectCutout::new(patch, alpha, Category::Texture, "diag").unwrap();
    let out = rescale_cutout(&cut, 50, &RescaleParams::default()).unwrap();
    assert_eq!((out.height(), out.width()), (60, 60));
    assert!(out.alpha().get(0, 0) && out.alpha().get(59, 59));
    assert!(!out.alpha().get(59, 0));
}

proptest! {
    #[test]
    fn rescale_is_monotone_in_anchor_row(y1 in 0i64..600, dy in 0i64..300,
                                         alpha in 0.01f64..2.0, beta in 8.0f64..60.0,
                                         h in 5u32..60, w in 5u32..60) {
        let p = RescaleParams { alpha, beta };
        let cut = opaque(w, h, [3, 3, 3]);
        let a = rescale_cutout(&cut, y1, &p).unwrap();
        let b = rescale_cutout(&cut, y1 + dy, &p).unwrap();
        prop_assert!(a.height() <= b.height());
    }

    #[test]
    fn rescale_preserves_aspect_within_a_pixel(y in 0i64..500, h in 10u32..120, w in 10u32..120) {
        let out = rescale_cutout(&opaque(w, h, [0; 3]), y, &RescaleParams::default()).unwrap();
        let ideal = out.height() as f64 / h as f64 * w as f64;
        prop_assert!((out.width() as f64 - ideal).abs() <= 0.5 + 1e-9);
    }
}

#[test]
fn paste_off_railway_leaves_mask_intact() {
    let s = plain_scene();
    let p = paste(&s, &opaque(6, 6, [250, 250, 250]), (5, 10)).unwrap();
    assert_eq!(p.visible_railway, s.railway_mask);
    assert_eq!(p.footprint.count(), 36);
}

#[test]
fn opaque_square_removes_exactly_its_area() {
    let s = plain_scene();
    let before = s.railway_mask.count();
    let p = paste(&s, &opaque(10, 10, [250, 250, 250]), (30, 40)).unwrap();
    assert_eq!(before - p.visible_railway.count(), 100);
}

/// Per-pixel reference paste written independently of the implementation.
fn brute_force_paste(scene: &BaseScene, cut: &ObjectCutout, anchor: (i64, i64)) -> (RgbImage, Mask) {
    let mut img = scene.image.clone();
    let mut fp = Mask::new(scene.width(), scene.height());
    let left = anchor.0 - cut.width() as i64 / 2;
    let top = anchor.1 - (cut.height() as i64 - 1);
    for fy in 0..scene.height() as i64 {
        for fx in 0..scene.width() as i64 {
            let (cx, cy) = (fx - left, fy - top);
            if cx >= 0 && cy >= 0 && cx < cut.width() as i64 && cy < cut.height() as i64
                && cut.alpha().get(cx as usize, cy as usize)
            {
                img.put_pixel(fx as u32, fy as u32, *cut.patch().get_pixel(cx as u32, cy as u32));
                fp.set(fx as usize, fy as usize, true);
            }
        }
    }
    (img, fp)
}

#[test]
fn half_outside_left_edge_is_clipped() {
    let s = plain_scene();
    let cut = gradient(12, 10);
    let p = paste(&s, &cut, (0, 30)).unwrap();
    let (img, fp) = brute_force_paste(&s, &cut, (0, 30));
    assert_eq!(p.image, img);
    assert_eq!(p.footprint, fp);
    assert_eq!(p.footprint.count(), 6 * 10);
}

#[test]
fn paste_fully_outside_is_error() {
    let s = plain_scene();
    assert!(matches!(
        paste(&s, &opaque(5, 5, [1, 1, 1]), (-20, 10)),
        Err(Error::PlacementOutOfFrame(_))
    ));
    assert!(matches!(
        paste(&s, &opaque(5, 5, [1, 1, 1]), (10, 60)),
        Err(Error::PlacementOutOfFrame(_))
    ));
}

#[test]
fn paste_preserves_background_outside_footprint() {
    let s = plain_scene();
    let cut = gradient(9, 13);
    let p = paste(&s, &cut, (33, 20)).unwrap();
    for (x, y, px) in p.image.enumerate_pixels() {
        if !p.footprint.get(x as usize, y as usize) {
            assert_eq!(px, s.image.get_pixel(x, y));
        }
    }
}

#[test]
fn feathered_paste_keeps_mask_exact() {
    let s = plain_scene();
    let cut = gradient(9, 13);
    let hard = paste(&s, &cut, (33, 30)).unwrap();
    let soft = paste_with(&s, &cut, (33, 30), true).unwrap();
    assert_eq!(hard.visible_railway, soft.visible_railway);
    assert_ne!(hard.image, soft.image);
}

fn texture() -> RgbImage {
    RgbImage::from_fn(48, 40, |x, y| Rgb([(x * 5) as u8, (y * 6) as u8, ((x ^ y) * 3) as u8]))
}

#[test]
fn polygon_is_deterministic() {
    let t = texture();
    let a = random_textured_polygon(&t, &mut ChaCha8Rng::seed_from_u64(42));
    let b = random_textured_polygon(&t, &mut ChaCha8Rng::seed_from_u64(42));
    assert_eq!(a, b);
    assert_eq!(a.category, Category::Texture);
}

#[test]
fn polygon_vertex_count_in_range() {
    let t = texture();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut seen = BTreeMap::new();
    for _ in 0..1000 {
        let (_, v) = random_textured_polygon_with_vertices(&t, &mut rng);
        assert!((3..=8).contains(&v.len()));
        *seen.entry(v.len()).or_insert(0) += 1;
    }
    assert_eq!(seen.len(), 6, "every count 3..=8 should occur: {seen:?}");
}

/// Even-odd ray casting; independent of the convexity test used to raster.
fn ray_cast(poly: &[[f64; 2]], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = (poly[i][0], poly[i][1]);
        let (xj, yj) = (poly[j][0], poly[j][1]);
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

#[test]
fn polygon_alpha_matches_point_in_polygon() {
    let t = texture();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pick = ChaCha8Rng::seed_from_u64(99);
    use rand::RngExt;
    for _ in 0..20 {
        let (cut, verts) = random_textured_polygon_with_vertices(&t, &mut rng);
        for _ in 0..200 {
            let x = pick.random_range(0..cut.width());
            let y = pick.random_range(0..cut.height());
            assert_eq!(
                cut.alpha().get(x, y),
                ray_cast(&verts, x as f64 + 0.5, y as f64 + 0.5),
                "pixel ({x},{y})"
            );
        }
    }
}

#[test]
#[should_panic]
fn polygon_needs_32px_texture() {
    random_textured_polygon(&RgbImage::new(31, 64), &mut ChaCha8Rng::seed_from_u64(1));
}

fn pair(shift: (i64, i64)) -> Result<CompositeSample> {
    generate_pair(
        &plain_scene(),
        &gradient(10, 12),
        (30, 30),
        shift,
        ShiftRange::default(),
        RescaleParams::default(),
        11,
        false,
    )
}

#[test]
fn pair_differs_exactly_on_footprint_union() {
    let s = pair((5, 5)).unwrap();
    let scene = plain_scene();
    let cut = gradient(10, 12);
    let fp_t = place_footprint(&cut, (30, 30), 64, 48);
    let fp_t1 = place_footprint(&cut, (35, 35), 64, 48);
    let union = fp_t.or(&fp_t1).unwrap();
    let diff = Mask::from_fn(64, 48, |x, y| {
        s.frame_t.get_pixel(x as u32, y as u32) != s.frame_t1.get_pixel(x as u32, y as u32)
    });
    assert_eq!(diff, union);
    assert_eq!(s.mask_t, scene.railway_mask.and_not(&fp_t).unwrap());
    assert_eq!(s.mask_t1, scene.railway_mask.and_not(&fp_t1).unwrap());
    assert_eq!(s.seed, 11);
    assert_eq!(s.placement.shift, (5, 5));
}

#[test]
fn zero_shift_rejected() {
    assert!(matches!(pair((0, 0)), Err(Error::InvalidParameter(_))));
    assert!(pair((5, 11)).is_err());
}

#[test]
fn footprint_area_equal_in_both_frames() {
    let cut = gradient(10, 12);
    let a = place_footprint(&cut, (30, 30), 64, 48).count();
    let b = place_footprint(&cut, (38, 37), 64, 48).count();
    assert_eq!(a, b);
    assert_eq!(a, cut.alpha().count());
}

/// Always returns all-ones words, so every probability test fails.
struct SaturatedRng;

impl TryRng for SaturatedRng {
    type Error = Infallible;
    fn try_next_u32(&mut self) -> std::result::Result<u32, Infallible> {
        Ok(u32::MAX)
    }
    fn try_next_u64(&mut self) -> std::result::Result<u64, Infallible> {
        Ok(u64::MAX)
    }
    fn try_fill_bytes(&mut self, dst: &mut [u8]) -> std::result::Result<(), Infallible> {
        dst.fill(0xFF);
        Ok(())
    }
}

#[test]
fn identity_rng_leaves_sample_unchanged() {
    let s = pair((6, 7)).unwrap();
    assert_eq!(augment(&s, &mut SaturatedRng), s);
}

#[test]
fn double_flip_restores() {
    let s = pair((6, 7)).unwrap();
    let only_flip = AugmentParams {
        flip_p: 1.0,
        dropout_p: 0.0,
        brightness_p: 0.0,
        ..AugmentParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let once = augment_with(&s, &only_flip, &mut rng);
    assert!(once.hflipped);
    assert_ne!(once.frame_t, s.frame_t);
    assert_eq!(once.mask_t, s.mask_t.flip_horizontal());
    let twice = augment_with(&once, &only_flip, &mut rng);
    assert_eq!(twice, s);
}

#[test]
fn dropout_and_jitter_never_touch_masks() {
    let s = pair((6, 7)).unwrap();
    let no_flip = AugmentParams {
        flip_p: 0.0,
        dropout_p: 1.0,
        brightness_p: 1.0,
        ..AugmentParams::default()
    };
    let mut changed = 0;
    for seed in 0..100 {
        let out = augment_with(&s, &no_flip, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(out.mask_t, s.mask_t);
        assert_eq!(out.mask_t1, s.mask_t1);
        changed += (out.frame_t != s.frame_t) as usize;
    }
    assert!(changed > 90);
}

#[test]
fn augment_is_deterministic() {
    let s = pair((6, 7)).unwrap();
    for seed in 0..20 {
        let a = augment(&s, &mut ChaCha8Rng::seed_from_u64(seed));
        let b = augment(&s, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(a, b);
    }
}

fn scenes() -> Vec<BaseScene> {
    Weather::ALL
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let mut s = plain_scene();
            s.scene_id = format!("scene_{i}");
            s.weather = w;
            s
        })
        .collect()
}

fn pools() -> CutoutPools {
    CutoutPools {
        person: vec![gradient(6, 14), opaque(5, 12, [200, 10, 10])],
        animal: vec![opaque(14, 8, [120, 80, 20])],
        textures: vec![texture()],
    }
}

fn desk_config(counts: CategoryCounts, seed: u64) -> SynthesisConfig {
    SynthesisConfig {
        counts,
        rescale: RescaleParams {
            alpha: 0.25,
            beta: 6.0,
        },
        global_seed: seed,
        ..SynthesisConfig::default()
    }
}

#[test]
fn synthesize_honours_counts_and_masks() {
    let cfg = desk_config(CategoryCounts::new(2, 2, 1), 5);
    let out = synthesize(&scenes(), &pools(), &cfg).unwrap();
    assert_eq!(out.len(), 5);
    let mut hist = BTreeMap::new();
    for s in &out {
        *hist.entry(s.sample.category).or_insert(0) += 1;
        let railway = &scenes()
            .into_iter()
            .find(|sc| sc.scene_id == s.sample.scene_id)
            .unwrap()
            .railway_mask;
        let (w, h) = railway.dims();
        let fp = place_footprint(&s.cutout, s.sample.placement.anchor, w, h);
        assert!(railway.intersection_count(&fp).unwrap() > 0);
        assert_eq!(s.sample.mask_t, railway.and_not(&fp).unwrap());
        assert!(ShiftRange::default().contains(s.sample.placement.shift.0));
    }
    assert_eq!(hist[&Category::Person], 2);
    assert_eq!(hist[&Category::Animal], 2);
    assert_eq!(hist[&Category::Texture], 1);
    // Weather round robin.
    let weathers: Vec<_> = out.iter().map(|s| s.sample.weather).collect();
    assert_eq!(&weathers[..3], &[Weather::Sunny, Weather::Foggy, Weather::Rainy]);
}

#[test]
fn synthesize_dataset_is_bit_identical_across_runs() {
    let cfg = desk_config(CategoryCounts::new(4, 4, 2), 77);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = synthesize_dataset(&scenes(), &pools(), &cfg, a.path()).unwrap();
    let mb = synthesize_dataset(&scenes(), &pools(), &cfg, b.path()).unwrap();
    assert_eq!(std::fs::read(&ma).unwrap(), std::fs::read(&mb).unwrap());
    for rec in crate::manifest::load_manifest(&ma).unwrap() {
        for rel in rec.raster_paths() {
            assert_eq!(
                std::fs::read(a.path().join(rel)).unwrap(),
                std::fs::read(b.path().join(rel)).unwrap()
            );
        }
    }
    // A different seed changes the output.
    let c = tempfile::tempdir().unwrap();
    let mc = synthesize_dataset(&scenes(), &pools(), &desk_config(cfg.counts, 78), c.path()).unwrap();
    assert_ne!(std::fs::read(&ma).unwrap(), std::fs::read(&mc).unwrap());
}

#[test]
fn empty_pool_is_config_error() {
    let mut p = pools();
    p.textures.clear();
    let err = synthesize(&scenes(), &p, &desk_config(CategoryCounts::new(1, 1, 1), 0)).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err:?}");
    // Not requested means not needed.
    assert!(synthesize(&scenes(), &p, &desk_config(CategoryCounts::new(1, 1, 0), 0)).is_ok());
}

#[test]
fn desk_scale_composition_matches_four_four_two() {
    let cfg = desk_config(CategoryCounts::new(40, 40, 20), 1);
    let out = synthesize(&scenes(), &pools(), &cfg).unwrap();
    let count = |c| out.iter().filter(|s| s.sample.category == c).count();
    assert_eq!(
        (count(Category::Person), count(Category::Animal), count(Category::Texture)),
        (40, 40, 20)
    );
}

#[test]
fn sample_seeds_depend_on_index_and_global_seed() {
    assert_ne!(sample_seed(1, 0), sample_seed(1, 1));
    assert_ne!(sample_seed(1, 0), sample_seed(2, 0));
    assert_eq!(sample_seed(9, 4), sample_seed(9, 4));
}
