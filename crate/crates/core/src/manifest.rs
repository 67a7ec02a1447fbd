//! Line-delimited JSON manifests for composite samples and base scenes.
//!
//! Each manifest line is one flat JSON object. Raster paths are stored
//! relative to the manifest's directory. Unknown keys are ignored so newer
//! writers stay readable; a different `schema_version` is rejected outright.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{load_rgb, Mask};
use crate::scene::{BaseScene, Category, Weather};

pub const SCHEMA_VERSION: u32 = 1;

/// Name of the scene index file inside a scenes directory.
pub const SCENE_INDEX: &str = "scenes.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub schema_version: u32,
    pub scene_id: String,
    pub seed: u64,
    pub frame_t: String,
    pub frame_t1: String,
    pub mask_t: String,
    pub mask_t1: String,
    pub weather: Weather,
    pub category: Category,
    pub anchor_x: i64,
    pub anchor_y: i64,
    pub dx: i64,
    pub dy: i64,
}

impl SampleRecord {
    pub fn raster_paths(&self) -> [&str; 4] {
        [&self.frame_t, &self.frame_t1, &self.mask_t, &self.mask_t1]
    }
}

/// Directory that relative raster paths in a manifest resolve against.
pub fn manifest_dir(manifest: &Path) -> PathBuf {
    match manifest.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Writes `records` to `path`, one per line, replacing any existing file.
///
/// Every raster a record references must already exist relative to the
/// manifest directory.
pub fn write_manifest(records: &[SampleRecord], path: &Path) -> Result<usize> {
    let base = manifest_dir(path);
    let mut missing = Vec::new();
    for rec in records {
        for rel in rec.raster_paths() {
            if !base.join(rel).is_file() {
                missing.push(format!("{} ({})", rec.scene_id, rel));
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "missing raster files for samples: {}",
            missing.join(", ")
        )));
    }

    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        let line = serde_json::to_string(rec)?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

/// Parses one manifest line. `line_no` is 1-based and only used in errors.
pub fn parse_record_line(line: &str, line_no: usize) -> Result<SampleRecord> {
    let value: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::ManifestLine {
            line: line_no,
            message: e.to_string(),
        })?;
    let obj = value.as_object().ok_or_else(|| Error::ManifestLine {
        line: line_no,
        message: "record is not a JSON object".into(),
    })?;
    let version = obj
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::ManifestLine {
            line: line_no,
            message: "missing or non-integer schema_version".into(),
        })?;
    if version != SCHEMA_VERSION as u64 {
        return Err(Error::SchemaVersion {
            found: u32::try_from(version).unwrap_or(u32::MAX),
            expected: SCHEMA_VERSION,
        });
    }
    serde_json::from_value(value).map_err(|e| Error::ManifestLine {
        line: line_no,
        message: e.to_string(),
    })
}

pub fn parse_manifest(text: &str) -> Result<Vec<SampleRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_record_line(l, i + 1))
        .collect()
}

pub fn load_manifest(path: &Path) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

/// A manifest record with its rasters read from disk.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub frame_t: RgbImage,
    pub frame_t1: RgbImage,
    pub mask_t: Mask,
    pub mask_t1: Mask,
}

impl LoadedSample {
    pub fn load(record: &SampleRecord, base: &Path) -> Result<Self> {
        let frame_t = load_rgb(&base.join(&record.frame_t))?;
        let frame_t1 = load_rgb(&base.join(&record.frame_t1))?;
        let mask_t = Mask::load(&base.join(&record.mask_t))?;
        let mask_t1 = Mask::load(&base.join(&record.mask_t1))?;
        let dims = (frame_t.width() as usize, frame_t.height() as usize);
        if (frame_t1.width() as usize, frame_t1.height() as usize) != dims
            || mask_t.dims() != dims
            || mask_t1.dims() != dims
        {
            return Err(Error::DimensionMismatch(format!(
                "rasters of sample `{}` (seed {}) differ in size",
                record.scene_id, record.seed
            )));
        }
        Ok(LoadedSample {
            record: record.clone(),
            frame_t,
            frame_t1,
            mask_t,
            mask_t1,
        })
    }
}

/// Loads every sample of a manifest, rasters included.
pub fn load_samples(path: &Path) -> Result<Vec<LoadedSample>> {
    let base = manifest_dir(path);
    load_manifest(path)?
        .iter()
        .map(|r| LoadedSample::load(r, &base))
        .collect()
}

/// One line of a scenes directory's `scenes.jsonl`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneIndexEntry {
    pub scene_id: String,
    pub image: String,
    pub railway_mask: String,
    pub weather: Weather,
}

pub fn parse_scene_index(text: &str) -> Result<Vec<SceneIndexEntry>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::ManifestLine {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes base scenes as PNG pairs plus a `scenes.jsonl` index.
pub fn write_scenes(scenes: &[BaseScene], dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut lines = String::new();
    for scene in scenes {
        let entry = SceneIndexEntry {
            scene_id: scene.scene_id.clone(),
            image: format!("{}.png", scene.scene_id),
            railway_mask: format!("{}_railway.png", scene.scene_id),
            weather: scene.weather,
        };
        crate::raster::save_rgb(&scene.image, &dir.join(&entry.image))?;
        scene.railway_mask.save(&dir.join(&entry.railway_mask))?;
        lines.push_str(&serde_json::to_string(&entry)?);
        lines.push('\n');
    }
    let index = dir.join(SCENE_INDEX);
    fs::write(&index, lines).map_err(|e| Error::io(&index, e))?;
    Ok(index)
}

/// Reads the scenes listed in `dir/scenes.jsonl` without validating them.
pub fn read_scenes_unchecked(dir: &Path) -> Result<Vec<BaseScene>> {
    let index = dir.join(SCENE_INDEX);
    let text = fs::read_to_string(&index).map_err(|e| Error::io(&index, e))?;
    parse_scene_index(&text)?
        .into_iter()
        .map(|e| {
            Ok(BaseScene {
                image: load_rgb(&dir.join(&e.image))?,
                railway_mask: Mask::load(&dir.join(&e.railway_mask))?,
                scene_id: e.scene_id,
                weather: e.weather,
            })
        })
        .collect()
}

/// Reads and validates the scenes of a scenes directory.
pub fn load_scenes(dir: &Path) -> Result<Vec<BaseScene>> {
    read_scenes_unchecked(dir)?
        .into_iter()
        .map(|s| BaseScene::new(s.scene_id, s.image, s.railway_mask, s.weather))
        .collect()
}
