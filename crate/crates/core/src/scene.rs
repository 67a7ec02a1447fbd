//! Core data types shared by every stage of the pipeline.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{Mask, PixelRect};

/// Smallest object height (pixels) a rescale may produce.
pub const MIN_OBJECT_HEIGHT: i64 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weather {
    Sunny,
    Foggy,
    Rainy,
}

impl Weather {
    pub const ALL: [Weather; 3] = [Weather::Sunny, Weather::Foggy, Weather::Rainy];

    pub fn as_str(&self) -> &'static str {
        match self {
            Weather::Sunny => "sunny",
            Weather::Foggy => "foggy",
            Weather::Rainy => "rainy",
        }
    }
}

impl fmt::Display for Weather {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Weather {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sunny" => Ok(Weather::Sunny),
            "foggy" => Ok(Weather::Foggy),
            "rainy" => Ok(Weather::Rainy),
            other => Err(Error::Validation(format!("unknown weather `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Person,
    Animal,
    Texture,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Person, Category::Animal, Category::Texture];

    pub fn as_str(&self) -> &'static str {
        match self {
            Category::Person => "person",
            Category::Animal => "animal",
            Category::Texture => "texture",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "person" => Ok(Category::Person),
            "animal" => Ok(Category::Animal),
            "texture" => Ok(Category::Texture),
            other => Err(Error::Validation(format!("unknown category `{other}`"))),
        }
    }
}

/// Obstacle-free background with its railway region.
///
/// Fields are public so that malformed scenes can be represented and
/// reported by [`validate_scene`]; use [`BaseScene::new`] to get a checked one.
#[derive(Debug, Clone)]
pub struct BaseScene {
    pub scene_id: String,
    pub image: RgbImage,
    pub railway_mask: Mask,
    pub weather: Weather,
}

impl BaseScene {
    pub fn new(
        scene_id: impl Into<String>,
        image: RgbImage,
        railway_mask: Mask,
        weather: Weather,
    ) -> Result<Self> {
        let scene = BaseScene {
            scene_id: scene_id.into(),
            image,
            railway_mask,
            weather,
        };
        let violations = validate_scene(&scene);
        if !violations.is_empty() {
            let names: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
            return Err(Error::Validation(format!(
                "scene `{}`: {}",
                scene.scene_id,
                names.join(", ")
            )));
        }
        Ok(scene)
    }

    pub fn width(&self) -> usize {
        self.image.width() as usize
    }

    pub fn height(&self) -> usize {
        self.image.height() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneViolation {
    ShapeMismatch,
    RailwayMaskEmpty,
    RailwayMaskFull,
}

impl fmt::Display for SceneViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SceneViolation::ShapeMismatch => "shape mismatch",
            SceneViolation::RailwayMaskEmpty => "railway_mask empty",
            SceneViolation::RailwayMaskFull => "railway_mask full",
        })
    }
}

/// Checks the BaseScene invariants. Returns an empty list for a valid scene.
pub fn validate_scene(scene: &BaseScene) -> Vec<SceneViolation> {
    let mut out = Vec::new();
    if !crate::raster::same_dims(&scene.image, &scene.railway_mask) {
        out.push(SceneViolation::ShapeMismatch);
    }
    if scene.railway_mask.is_empty() {
        out.push(SceneViolation::RailwayMaskEmpty);
    } else if scene.railway_mask.is_full() {
        out.push(SceneViolation::RailwayMaskFull);
    }
    out
}

/// A paste-able object: color patch plus binary alpha of the same size.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectCutout {
    patch: RgbImage,
    alpha: Mask,
    pub category: Category,
    pub source_id: String,
    /// `(height, width)` of the patch as extracted, before any rescale.
    pub native_size: (usize, usize),
}

impl ObjectCutout {
    /// Builds a tight-cropped cutout: alpha must be nonempty and touch all
    /// four patch edges.
    pub fn new(
        patch: RgbImage,
        alpha: Mask,
        category: Category,
        source_id: impl Into<String>,
    ) -> Result<Self> {
        let cutout = Self::unchecked_tightness(patch, alpha, category, source_id.into())?;
        let bbox = cutout.alpha.bounding_box().expect("nonempty alpha");
        if bbox
            != (PixelRect {
                x_min: 0,
                y_min: 0,
                x_max: cutout.alpha.width(),
                y_max: cutout.alpha.height(),
            })
        {
            return Err(Error::Validation(format!(
                "cutout `{}` is not tight-cropped: alpha bbox {:?} in {}x{} patch",
                cutout.source_id,
                bbox,
                cutout.alpha.width(),
                cutout.alpha.height()
            )));
        }
        Ok(cutout)
    }

    /// Rescaled cutouts keep their exact target frame, so nearest-neighbour
    /// sampling may leave an empty border row or column.
    pub(crate) fn unchecked_tightness(
        patch: RgbImage,
        alpha: Mask,
        category: Category,
        source_id: String,
    ) -> Result<Self> {
        if !crate::raster::same_dims(&patch, &alpha) {
            return Err(Error::DimensionMismatch(format!(
                "cutout `{source_id}`: patch {}x{} vs alpha {}x{}",
                patch.width(),
                patch.height(),
                alpha.width(),
                alpha.height()
            )));
        }
        if alpha.is_empty() {
            return Err(Error::ExtractionEmpty(format!(
                "cutout `{source_id}` has an empty alpha"
            )));
        }
        let native_size = (alpha.height(), alpha.width());
        Ok(ObjectCutout {
            patch,
            alpha,
            category,
            source_id,
            native_size,
        })
    }

    pub(crate) fn with_native_size(mut self, native_size: (usize, usize)) -> Self {
        self.native_size = native_size;
        self
    }

    pub fn patch(&self) -> &RgbImage {
        &self.patch
    }

    pub fn alpha(&self) -> &Mask {
        &self.alpha
    }

    pub fn width(&self) -> usize {
        self.alpha.width()
    }

    pub fn height(&self) -> usize {
        self.alpha.height()
    }
}

/// Depth-aware scale law: object height = `alpha * anchor_y + beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RescaleParams {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for RescaleParams {
    fn default() -> Self {
        RescaleParams {
            alpha: 0.6,
            beta: 30.0,
        }
    }
}

impl RescaleParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rescale.alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "rescale.beta must be >= 0, got {}",
                self.beta
            )));
        }
        Ok(())
    }

    /// Object height for an anchor row, rounded half-up.
    pub fn height_at(&self, anchor_y: usize) -> i64 {
        (self.alpha * anchor_y as f64 + self.beta + 0.5).floor() as i64
    }

    /// Checks that every anchor row from `min_anchor_y` down yields an
    /// object of at least [`MIN_OBJECT_HEIGHT`] pixels. The law is increasing
    /// in y, so the topmost legal row is the binding one.
    pub fn validate_for_rows(&self, min_anchor_y: usize) -> Result<()> {
        self.validate()?;
        let h = self.height_at(min_anchor_y);
        if h < MIN_OBJECT_HEIGHT {
            return Err(Error::InvalidParameter(format!(
                "rescale gives {h} px at anchor row {min_anchor_y}; minimum is {MIN_OBJECT_HEIGHT}"
            )));
        }
        Ok(())
    }
}

/// Where an object goes in frame t and how it moves for frame t+1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementSpec {
    /// Bottom-center of the cutout in frame coordinates.
    pub anchor: (i64, i64),
    pub shift: (i64, i64),
    pub rescale: RescaleParams,
}

/// Inclusive bounds on each shift component.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShiftRange {
    pub lo: i64,
    pub hi: i64,
}

impl Default for ShiftRange {
    fn default() -> Self {
        ShiftRange { lo: 5, hi: 10 }
    }
}

impl ShiftRange {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        let r = ShiftRange { lo, hi };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo < 1 || self.lo > self.hi {
            return Err(Error::InvalidParameter(format!(
                "shift_range [{}, {}] must satisfy 1 <= lo <= hi",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn contains(&self, v: i64) -> bool {
        v >= self.lo && v <= self.hi
    }

    /// A shift vector is admissible when no component exceeds `hi` in
    /// magnitude and the larger one reaches `lo`. Sampling draws both
    /// components from `[lo, hi]`; this looser check also admits axis-aligned
    /// and negative shifts for hand-built pairs.
    pub fn admits(&self, shift: (i64, i64)) -> bool {
        let (ax, ay) = (shift.0.abs(), shift.1.abs());
        ax <= self.hi && ay <= self.hi && ax.max(ay) >= self.lo
    }
}

/// One training unit: a pseudo frame pair with visible-railway masks.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeSample {
    pub scene_id: String,
    pub weather: Weather,
    pub category: Category,
    pub seed: u64,
    pub frame_t: RgbImage,
    pub frame_t1: RgbImage,
    /// Railway ROI minus the obstacle footprint in frame t.
    pub mask_t: Mask,
    pub mask_t1: Mask,
    pub placement: PlacementSpec,
    /// Set when the sample was mirrored; horizontal flow must be negated.
    pub hflipped: bool,
}
