//! Procedural stand-ins for real data: railway scenes, chroma-keyed
//! object photos and surface textures. Used by the demo data generator,
//! the tests and the acceptance suite.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compositor::{synthesize_dataset, CategoryCounts, CutoutPools, SynthesisConfig};
use crate::error::Result;
use crate::extraction::oracle_extract;
use crate::manifest::write_scenes;
use crate::raster::{save_rgb, Mask};
use crate::scene::{BaseScene, Category, ObjectCutout, RescaleParams, Weather};

/// Background color of generated object photos.
pub const CHROMA_KEY: [u8; 3] = [0, 255, 0];
/// Extraction tolerance that separates generated objects from the key.
pub const CHROMA_TOLERANCE: u8 = 40;

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Multi-octave value noise in [0, 1].
pub fn value_noise(width: u32, height: u32, cell: u32, octaves: u32, seed: u64) -> Vec<f32> {
    let mut rng = rng_for(seed, 1);
    let (w, h) = (width as usize, height as usize);
    let mut out = vec![0.0f32; w * h];
    let mut amp = 1.0f32;
    let mut total = 0.0f32;
    let mut cell = cell.max(1) as usize;
    for _ in 0..octaves.max(1) {
        let gw = w / cell + 2;
        let gh = h / cell + 2;
        let grid: Vec<f32> = (0..gw * gh).map(|_| rng.random::<f32>()).collect();
        for y in 0..h {
            let gy = y / cell;
            let fy = (y % cell) as f32 / cell as f32;
            for x in 0..w {
                let gx = x / cell;
                let fx = (x % cell) as f32 / cell as f32;
                let g = |i: usize, j: usize| grid[j * gw + i];
                let top = g(gx, gy) * (1.0 - fx) + g(gx + 1, gy) * fx;
                let bot = g(gx, gy + 1) * (1.0 - fx) + g(gx + 1, gy + 1) * fx;
                out[y * w + x] += amp * (top * (1.0 - fy) + bot * fy);
            }
        }
        total += amp;
        amp *= 0.5;
        cell = (cell / 2).max(1);
    }
    out.iter_mut().for_each(|v| *v /= total);
    out
}

fn shade(base: [f32; 3], k: f32) -> Rgb<u8> {
    Rgb(base.map(|c| (c * k).round().clamp(0.0, 255.0) as u8))
}

/// Colored noise texture, e.g. for textured-polygon obstacles.
pub fn texture(width: u32, height: u32, seed: u64) -> RgbImage {
    let mut rng = rng_for(seed, 2);
    let base = [0, 1, 2].map(|_| rng.random_range(60.0..220.0f32));
    let cell = rng.random_range(4..12);
    let noise = value_noise(width, height, cell, 3, seed);
    RgbImage::from_fn(width, height, |x, y| {
        shade(base, 0.45 + 1.1 * noise[(y * width + x) as usize])
    })
}

/// Railway scene: sky, textured ground, and a ballast track bed narrowing
/// toward a horizon, with two rails and sleepers. The railway mask is the
/// track bed.
pub fn railway_scene(id: &str, width: u32, height: u32, weather: Weather, seed: u64) -> BaseScene {
    let mut rng = rng_for(seed, 3);
    let (w, h) = (width as f32, height as f32);
    let horizon = (h * rng.random_range(0.25..0.35)).round();
    let center_bottom = w * rng.random_range(0.4..0.6);
    let center_top = w * rng.random_range(0.45..0.55);
    let half_bottom = w * rng.random_range(0.2..0.28);
    let half_top = w * rng.random_range(0.02..0.04);
    let ground = [
        rng.random_range(70.0..120.0f32),
        rng.random_range(100.0..150.0f32),
        rng.random_range(50.0..90.0f32),
    ];
    let ballast = [
        rng.random_range(110.0..150.0f32),
        rng.random_range(100.0..140.0f32),
        rng.random_range(90.0..130.0f32),
    ];
    let sky = [150.0, 185.0, 230.0f32];
    let noise = value_noise(width, height, 6, 3, seed);
    let fine = value_noise(width, height, 2, 1, seed.wrapping_add(17));

    let mut mask = Mask::new(width as usize, height as usize);
    let image = RgbImage::from_fn(width, height, |x, y| {
        let (xf, yf) = (x as f32 + 0.5, y as f32 + 0.5);
        let i = (y * width + x) as usize;
        if yf < horizon {
            return shade(sky, 0.9 + 0.2 * noise[i]);
        }
        // 0 at the horizon, 1 at the bottom row.
        let t = (yf - horizon) / (h - horizon);
        let center = center_top + (center_bottom - center_top) * t;
        let half = half_top + (half_bottom - half_top) * t;
        let u = (xf - center) / half;
        if u.abs() <= 1.0 {
            mask.set(x as usize, y as usize, true);
            let rail = (u.abs() - 0.55).abs() < 0.07 + 0.5 / half;
            // Sleepers repeat evenly in depth, so they crowd near the horizon.
            let depth = 1.0 / (0.15 + t);
            let sleeper = (depth * 6.0).fract() < 0.35;
            if rail {
                shade([70.0, 70.0, 75.0], 0.8 + 0.5 * fine[i])
            } else if sleeper {
                shade([95.0, 70.0, 50.0], 0.8 + 0.4 * noise[i])
            } else {
                shade(ballast, 0.6 + 0.8 * fine[i])
            }
        } else {
            shade(ground, 0.55 + 0.9 * noise[i])
        }
    });
    let image = apply_weather(&image, weather, seed);
    BaseScene::new(id, image, mask, weather).expect("generated scene is valid")
}

/// Contrast reduction toward a bright haze: `out = (1 - s) * in + s * haze`.
pub fn fog_degrade(image: &RgbImage, strength: f32) -> RgbImage {
    let haze = 200.0;
    let mut out = image.clone();
    for p in out.pixels_mut() {
        for c in p.0.iter_mut() {
            *c = ((1.0 - strength) * *c as f32 + strength * haze).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

fn apply_weather(image: &RgbImage, weather: Weather, seed: u64) -> RgbImage {
    match weather {
        Weather::Sunny => image.clone(),
        Weather::Foggy => fog_degrade(image, 0.45),
        Weather::Rainy => {
            let mut rng = rng_for(seed, 4);
            let mut out = image.clone();
            for p in out.pixels_mut() {
                for c in p.0.iter_mut() {
                    *c = (*c as f32 * 0.7) as u8;
                }
            }
            // Short bright diagonal streaks.
            let streaks = (image.width() * image.height() / 60).max(1);
            for _ in 0..streaks {
                let x0 = rng.random_range(0..image.width()) as i64;
                let y0 = rng.random_range(0..image.height()) as i64;
                for k in 0..4i64 {
                    let (x, y) = (x0 + k / 2, y0 + k);
                    if x < image.width() as i64 && y < image.height() as i64 {
                        let p = out.get_pixel_mut(x as u32, y as u32);
                        p.0 = p.0.map(|c| c.saturating_add(50));
                    }
                }
            }
            out
        }
    }
}

/// Object colors keep the green channel well below the red or blue one,
/// so they never fall within the chroma tolerance of the key.
fn object_color<R: Rng + ?Sized>(rng: &mut R) -> [f32; 3] {
    [
        rng.random_range(90.0..240.0f32),
        rng.random_range(20.0..120.0f32),
        rng.random_range(60.0..230.0f32),
    ]
}

fn fill_ellipse(img: &mut RgbImage, cx: f32, cy: f32, rx: f32, ry: f32, color: [f32; 3], noise: &[f32]) {
    let w = img.width();
    for y in 0..img.height() {
        for x in 0..w {
            let dx = (x as f32 + 0.5 - cx) / rx;
            let dy = (y as f32 + 0.5 - cy) / ry;
            if dx * dx + dy * dy <= 1.0 {
                img.put_pixel(x, y, shade(color, 0.7 + 0.5 * noise[(y * w + x) as usize]));
            }
        }
    }
}

fn fill_rect(img: &mut RgbImage, x0: f32, y0: f32, x1: f32, y1: f32, color: [f32; 3], noise: &[f32]) {
    let w = img.width();
    for y in 0..img.height() {
        for x in 0..w {
            let (xf, yf) = (x as f32 + 0.5, y as f32 + 0.5);
            if xf >= x0 && xf < x1 && yf >= y0 && yf < y1 {
                img.put_pixel(x, y, shade(color, 0.7 + 0.5 * noise[(y * w + x) as usize]));
            }
        }
    }
}

/// Standing figure on a chroma-key background, about 2.5:1 tall.
pub fn person_photo(height: u32, seed: u64) -> RgbImage {
    let mut rng = rng_for(seed, 5);
    let h = height.max(16);
    let w = (h * 2 / 5).max(8) + 4;
    let mut img = RgbImage::from_pixel(w, h + 2, Rgb(CHROMA_KEY));
    let noise = value_noise(w, h + 2, 3, 2, seed);
    let (hf, cx) = (h as f32, w as f32 / 2.0);
    let skin = [rng.random_range(150.0..230.0f32), rng.random_range(90.0..120.0f32), rng.random_range(70.0..120.0f32)];
    let shirt = object_color(&mut rng);
    let trousers = object_color(&mut rng);
    let bw = (w as f32 - 4.0) / 2.0;
    fill_rect(&mut img, cx - bw / 2.0, 0.55 * hf, cx - 0.5, hf, trousers, &noise);
    fill_rect(&mut img, cx + 0.5, 0.55 * hf, cx + bw / 2.0, hf, trousers, &noise);
    fill_rect(&mut img, cx - bw / 2.0 - 1.0, 0.17 * hf, cx + bw / 2.0 + 1.0, 0.58 * hf, shirt, &noise);
    fill_ellipse(&mut img, cx, 0.09 * hf + 1.0, 0.09 * hf, 0.09 * hf, skin, &noise);
    img
}

/// Four-legged animal on a chroma-key background, wider than tall.
pub fn animal_photo(height: u32, seed: u64) -> RgbImage {
    let mut rng = rng_for(seed, 6);
    let h = height.max(12);
    let w = h * 3 / 2 + 4;
    let mut img = RgbImage::from_pixel(w, h + 2, Rgb(CHROMA_KEY));
    let noise = value_noise(w, h + 2, 3, 2, seed);
    let (hf, wf) = (h as f32, w as f32);
    let fur = [rng.random_range(100.0..200.0f32), rng.random_range(50.0..110.0f32), rng.random_range(20.0..90.0f32)];
    let leg = hf * 0.08;
    for k in [0.22f32, 0.34, 0.62, 0.74] {
        fill_rect(&mut img, wf * k - leg, 0.55 * hf, wf * k + leg, hf, fur, &noise);
    }
    fill_ellipse(&mut img, wf * 0.48, 0.45 * hf, wf * 0.32, 0.2 * hf, fur, &noise);
    fill_ellipse(&mut img, wf * 0.84, 0.25 * hf, 0.13 * hf + 1.0, 0.12 * hf + 1.0, fur, &noise);
    img
}

/// Cutout of a generated person or animal photo via chroma-key extraction.
pub fn object_cutout(category: Category, height: u32, seed: u64) -> Result<ObjectCutout> {
    let (photo, id) = match category {
        Category::Person => (person_photo(height, seed), format!("person_{seed}")),
        Category::Animal => (animal_photo(height, seed), format!("animal_{seed}")),
        Category::Texture => {
            let mut rng = rng_for(seed, 7);
            let tex = texture(height.max(32), height.max(32), seed);
            let cutout = crate::compositor::random_textured_polygon(&tex, &mut rng);
            return Ok(cutout);
        }
    };
    oracle_extract(&photo, CHROMA_KEY, CHROMA_TOLERANCE, category, &id)
}

/// `n` scenes cycling through the three weathers, seeded from `seed`.
pub fn scene_set(n: usize, width: u32, height: u32, seed: u64) -> Vec<BaseScene> {
    (0..n)
        .map(|i| {
            let weather = Weather::ALL[i % Weather::ALL.len()];
            railway_scene(&format!("scene_{i:03}"), width, height, weather, seed.wrapping_add(i as u64 * 7919))
        })
        .collect()
}

/// Object pools for desk-scale synthesis: `n` persons, `n` animals and
/// `n` textures per category, seeded from `seed`.
pub fn desk_pools(n: usize, seed: u64) -> CutoutPools {
    let person = (0..n)
        .map(|i| object_cutout(Category::Person, 48 + (i as u32 % 4) * 4, seed + 31 * i as u64).expect("person"))
        .collect();
    let animal = (0..n)
        .map(|i| object_cutout(Category::Animal, 28 + (i as u32 % 4) * 3, seed + 37 * i as u64 + 1).expect("animal"))
        .collect();
    let textures = (0..n).map(|i| texture(64, 64, seed + 41 * i as u64 + 2)).collect();
    CutoutPools {
        person,
        animal,
        textures,
    }
}

/// Synthesis settings for `size x size` desk scenes. The rescale law is
/// the default one scaled to the frame: `h = 0.25 y + 6 * size / 64`.
pub fn desk_synthesis(counts: CategoryCounts, size: u32, seed: u64) -> SynthesisConfig {
    SynthesisConfig {
        counts,
        rescale: RescaleParams {
            alpha: 0.25,
            beta: 6.0 * size as f64 / 64.0,
        },
        global_seed: seed,
        ..SynthesisConfig::default()
    }
}

/// Writes scenes, then a synthesized dataset, under `dir`; returns the
/// manifest path. Scenes go to `dir/scenes`, samples to `dir/data`.
pub fn desk_dataset(dir: &Path, counts: CategoryCounts, size: u32, seed: u64) -> Result<PathBuf> {
    let scenes = scene_set(12, size, size, seed);
    write_scenes(&scenes, &dir.join("scenes"))?;
    synthesize_dataset(&scenes, &desk_pools(6, seed), &desk_synthesis(counts, size, seed), &dir.join("data"))
}

/// Writes the raw material of [`desk_pools`] as an objects directory:
/// chroma-keyed photos under `person/` and `animal/`, textures under
/// `texture/`.
pub fn write_object_dir(dir: &Path, n: usize, seed: u64) -> Result<()> {
    for i in 0..n {
        let name = format!("{i:03}.png");
        let person = person_photo(48 + (i as u32 % 4) * 4, seed + 31 * i as u64);
        let animal = animal_photo(28 + (i as u32 % 4) * 3, seed + 37 * i as u64 + 1);
        save_rgb(&person, &dir.join("person").join(&name))?;
        save_rgb(&animal, &dir.join("animal").join(&name))?;
        save_rgb(&texture(64, 64, seed + 41 * i as u64 + 2), &dir.join("texture").join(&name))?;
    }
    Ok(())
}

/// Applies [`fog_degrade`] in place to both frames of every sample in
/// `manifest`. Masks are untouched.
pub fn fog_manifest(manifest: &Path, strength: f32) -> Result<()> {
    let base = crate::manifest::manifest_dir(manifest);
    for rec in crate::manifest::load_manifest(manifest)? {
        for frame in [&rec.frame_t, &rec.frame_t1] {
            let path = base.join(frame);
            save_rgb(&fog_degrade(&crate::raster::load_rgb(&path)?, strength), &path)?;
        }
    }
    Ok(())
}
