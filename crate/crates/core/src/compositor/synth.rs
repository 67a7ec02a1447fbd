use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::RgbImage;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{generate_pair, place_footprint, random_textured_polygon, rescale_cutout};
use crate::error::{Error, Result};
use crate::manifest::{write_manifest, SampleRecord, SCHEMA_VERSION};
use crate::raster::save_rgb;
use crate::scene::{
    BaseScene, Category, CompositeSample, ObjectCutout, RescaleParams, ShiftRange, Weather,
};

const MAX_PLACEMENT_ATTEMPTS: usize = 200;

/// Dilation applied to the railway ROI for `railway_and_margin`.
pub const PLACEMENT_MARGIN_PX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryCounts {
    #[serde(default)]
    pub person: usize,
    #[serde(default)]
    pub animal: usize,
    #[serde(default)]
    pub texture: usize,
}

impl CategoryCounts {
    pub fn new(person: usize, animal: usize, texture: usize) -> Self {
        CategoryCounts {
            person,
            animal,
            texture,
        }
    }

    pub fn get(&self, c: Category) -> usize {
        match c {
            Category::Person => self.person,
            Category::Animal => self.animal,
            Category::Texture => self.texture,
        }
    }

    pub fn total(&self) -> usize {
        self.person + self.animal + self.texture
    }

    /// Category of every sample index, in generation order.
    fn schedule(&self) -> Vec<Category> {
        Category::ALL
            .iter()
            .flat_map(|&c| std::iter::repeat_n(c, self.get(c)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementRegion {
    #[default]
    RailwayOnly,
    RailwayAndMargin,
}

fn default_shift_range() -> [i64; 2] {
    [5, 10]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    #[serde(default)]
    pub counts: CategoryCounts,
    #[serde(default)]
    pub rescale: RescaleParams,
    #[serde(default = "default_shift_range")]
    pub shift_range: [i64; 2],
    #[serde(default)]
    pub global_seed: u64,
    #[serde(default)]
    pub placement_region: PlacementRegion,
    /// Blend object edges with the background. Off keeps hard pastes.
    #[serde(default)]
    pub feather: bool,
    /// Optional inclusive `[top, bottom]` row band for anchors; used to
    /// build distance-banded validation sets.
    #[serde(default)]
    pub anchor_rows: Option<[usize; 2]>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            counts: CategoryCounts::default(),
            rescale: RescaleParams::default(),
            shift_range: default_shift_range(),
            global_seed: 0,
            placement_region: PlacementRegion::default(),
            feather: false,
            anchor_rows: None,
        }
    }
}

impl SynthesisConfig {
    pub fn shift(&self) -> ShiftRange {
        ShiftRange {
            lo: self.shift_range[0],
            hi: self.shift_range[1],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.shift().validate()?;
        self.rescale.validate()?;
        if let Some([top, bottom]) = self.anchor_rows {
            if top > bottom {
                return Err(Error::InvalidParameter(format!(
                    "anchor_rows [{top}, {bottom}] is inverted"
                )));
            }
        }
        Ok(())
    }
}

/// Source material per category. Textures feed the random polygon generator.
#[derive(Debug, Clone, Default)]
pub struct CutoutPools {
    pub person: Vec<ObjectCutout>,
    pub animal: Vec<ObjectCutout>,
    pub textures: Vec<RgbImage>,
}

impl CutoutPools {
    fn len(&self, c: Category) -> usize {
        match c {
            Category::Person => self.person.len(),
            Category::Animal => self.animal.len(),
            Category::Texture => self.textures.len(),
        }
    }
}

/// A generated sample together with the rescaled cutout that was pasted.
#[derive(Debug, Clone)]
pub struct SynthesizedSample {
    pub index: usize,
    pub sample: CompositeSample,
    pub cutout: ObjectCutout,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-sample seed derived only from the global seed and sample index.
pub fn sample_seed(global_seed: u64, index: usize) -> u64 {
    splitmix64(global_seed ^ splitmix64(index as u64))
}

/// Scenes grouped by weather, each group in input order.
fn weather_groups(scenes: &[BaseScene]) -> Vec<Vec<&BaseScene>> {
    let mut groups: BTreeMap<Weather, Vec<&BaseScene>> = BTreeMap::new();
    for s in scenes {
        groups.entry(s.weather).or_default().push(s);
    }
    groups.into_values().collect()
}

struct PreparedScene<'a> {
    scene: &'a BaseScene,
    /// Row-major pixel indices anchors are drawn from.
    candidates: Vec<usize>,
}

fn prepare_scene<'a>(scene: &'a BaseScene, config: &SynthesisConfig) -> Result<PreparedScene<'a>> {
    let region = match config.placement_region {
        PlacementRegion::RailwayOnly => scene.railway_mask.clone(),
        PlacementRegion::RailwayAndMargin => scene.railway_mask.dilate(PLACEMENT_MARGIN_PX),
    };
    let w = scene.width();
    let (top, bottom) = match config.anchor_rows {
        Some([t, b]) => (t, b),
        None => (0, usize::MAX),
    };
    let candidates: Vec<usize> = region
        .as_slice()
        .iter()
        .enumerate()
        .filter(|&(i, &v)| v != 0 && (top..=bottom).contains(&(i / w)))
        .map(|(i, _)| i)
        .collect();
    let Some(&first) = candidates.first() else {
        return Err(Error::Config(format!(
            "scene `{}` has no anchor pixels in the placement region",
            scene.scene_id
        )));
    };
    config
        .rescale
        .validate_for_rows(first / w)
        .map_err(|e| Error::Config(format!("scene `{}`: {e}", scene.scene_id)))?;
    Ok(PreparedScene { scene, candidates })
}

fn make_sample(
    index: usize,
    category: Category,
    scene: &PreparedScene<'_>,
    pools: &CutoutPools,
    config: &SynthesisConfig,
) -> Result<SynthesizedSample> {
    let seed = sample_seed(config.global_seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut source = match category {
        Category::Person => pools.person[rng.random_range(0..pools.person.len())].clone(),
        Category::Animal => pools.animal[rng.random_range(0..pools.animal.len())].clone(),
        Category::Texture => {
            let tex = &pools.textures[rng.random_range(0..pools.textures.len())];
            random_textured_polygon(tex, &mut rng)
        }
    };
    // Pool membership decides the category.
    source.category = category;
    let shift_range = config.shift();
    let base = scene.scene;
    let (w, h) = (base.width(), base.height());
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let pix = scene.candidates[rng.random_range(0..scene.candidates.len())];
        let anchor = ((pix % w) as i64, (pix / w) as i64);
        let shift = (
            rng.random_range(shift_range.lo..=shift_range.hi),
            rng.random_range(shift_range.lo..=shift_range.hi),
        );
        let cutout = rescale_cutout(&source, anchor.1, &config.rescale)?;
        let fp_t = place_footprint(&cutout, anchor, w, h);
        if base.railway_mask.intersection_count(&fp_t)? == 0 {
            continue;
        }
        let fp_t1 = place_footprint(&cutout, (anchor.0 + shift.0, anchor.1 + shift.1), w, h);
        if fp_t1.is_empty() {
            continue;
        }
        let sample = generate_pair(
            base,
            &cutout,
            anchor,
            shift,
            shift_range,
            config.rescale,
            seed,
            config.feather,
        )?;
        return Ok(SynthesizedSample {
            index,
            sample,
            cutout,
        });
    }
    Err(Error::Validation(format!(
        "sample {index}: no placement of `{}` on scene `{}` touches the railway after {MAX_PLACEMENT_ATTEMPTS} attempts",
        source.source_id, base.scene_id
    )))
}

fn check_inputs(scenes: &[BaseScene], pools: &CutoutPools, config: &SynthesisConfig) -> Result<()> {
    config.validate()?;
    if scenes.is_empty() {
        return Err(Error::Config("no base scenes".into()));
    }
    for c in Category::ALL {
        if config.counts.get(c) > 0 && pools.len(c) == 0 {
            return Err(Error::Config(format!(
                "{} samples of `{c}` requested but its pool is empty",
                config.counts.get(c)
            )));
        }
    }
    for w in Weather::ALL {
        if !scenes.iter().any(|s| s.weather == w) {
            log::warn!("no base scene with weather `{w}`");
        }
    }
    Ok(())
}

/// Generates every configured sample in memory.
///
/// Scenes are visited round-robin over weather groups; everything random
/// about sample `i` comes from `sample_seed(global_seed, i)`, so the output
/// does not depend on worker scheduling.
pub fn synthesize(
    scenes: &[BaseScene],
    pools: &CutoutPools,
    config: &SynthesisConfig,
) -> Result<Vec<SynthesizedSample>> {
    check_inputs(scenes, pools, config)?;
    let groups: Vec<Vec<PreparedScene<'_>>> = weather_groups(scenes)
        .into_iter()
        .map(|g| g.into_iter().map(|s| prepare_scene(s, config)).collect())
        .collect::<Result<_>>()?;
    let schedule = config.counts.schedule();
    schedule
        .par_iter()
        .enumerate()
        .map(|(i, &category)| {
            let group = &groups[i % groups.len()];
            let scene = &group[(i / groups.len()) % group.len()];
            make_sample(i, category, scene, pools, config)
        })
        .collect()
}

fn relative_paths(index: usize) -> [String; 4] {
    [
        format!("frames/{index:05}_t.png"),
        format!("frames/{index:05}_t1.png"),
        format!("masks/{index:05}_t.png"),
        format!("masks/{index:05}_t1.png"),
    ]
}

/// Writes a sample's rasters under `out_dir` and returns its manifest record.
pub(crate) fn write_sample(out_dir: &Path, index: usize, s: &CompositeSample) -> Result<SampleRecord> {
    let [ft, ft1, mt, mt1] = relative_paths(index);
    save_rgb(&s.frame_t, &out_dir.join(&ft))?;
    save_rgb(&s.frame_t1, &out_dir.join(&ft1))?;
    s.mask_t.save(&out_dir.join(&mt))?;
    s.mask_t1.save(&out_dir.join(&mt1))?;
    Ok(SampleRecord {
        schema_version: SCHEMA_VERSION,
        scene_id: s.scene_id.clone(),
        seed: s.seed,
        frame_t: ft,
        frame_t1: ft1,
        mask_t: mt,
        mask_t1: mt1,
        weather: s.weather,
        category: s.category,
        anchor_x: s.placement.anchor.0,
        anchor_y: s.placement.anchor.1,
        dx: s.placement.shift.0,
        dy: s.placement.shift.1,
    })
}

/// Synthesizes the dataset into `out_dir` and writes `out_dir/manifest.jsonl`.
pub fn synthesize_dataset(
    scenes: &[BaseScene],
    pools: &CutoutPools,
    config: &SynthesisConfig,
    out_dir: &Path,
) -> Result<PathBuf> {
    let samples = synthesize(scenes, pools, config)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let records: Vec<SampleRecord> = samples
        .par_iter()
        .map(|s| write_sample(out_dir, s.index, &s.sample))
        .collect::<Result<_>>()?;
    let manifest = out_dir.join("manifest.jsonl");
    write_manifest(&records, &manifest)?;
    log::info!("wrote {} samples to {}", records.len(), manifest.display());
    Ok(manifest)
}
