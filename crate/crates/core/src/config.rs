//! The single experiment description that drives every subcommand.
//!
//! TOML with nested sections; key names are the field names of the types
//! they configure. Unknown keys are rejected with their full path.
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::compositor::SynthesisConfig;
use crate::error::{Error, Result};
use crate::evaluation::Band;
use crate::extraction::{ExtractorBackend, OracleBackend, PluginBackend, PrecomputedMaskBackend};
use crate::fixtures::{CHROMA_KEY, CHROMA_TOLERANCE};
use crate::flow::FlowSolverParams;
use crate::segmentation::{ModelConfig, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    #[serde(default = "default_scenes_dir")]
    pub scenes_dir: PathBuf,
    #[serde(default = "default_objects_dir")]
    pub objects_dir: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_scenes_dir() -> PathBuf {
    "scenes".into()
}
fn default_objects_dir() -> PathBuf {
    "objects".into()
}
fn default_out_dir() -> PathBuf {
    "out".into()
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            scenes_dir: default_scenes_dir(),
            objects_dir: default_objects_dir(),
            out_dir: default_out_dir(),
        }
    }
}

fn default_timeout_secs() -> u64 {
    60
}

/// Solver parameters plus an optional external flow plugin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    #[serde(default = "FlowConfig::default_smoothness")]
    pub smoothness_weight: f64,
    #[serde(default = "FlowConfig::default_iterations")]
    pub iterations: usize,
    #[serde(default = "FlowConfig::default_levels")]
    pub pyramid_levels: usize,
    /// Command line of a flow plugin; the built-in solver runs when absent.
    #[serde(default)]
    pub plugin: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl FlowConfig {
    fn default_smoothness() -> f64 {
        FlowSolverParams::default().smoothness_weight
    }
    fn default_iterations() -> usize {
        FlowSolverParams::default().iterations
    }
    fn default_levels() -> usize {
        FlowSolverParams::default().pyramid_levels
    }

    pub fn solver(&self) -> FlowSolverParams {
        FlowSolverParams {
            smoothness_weight: self.smoothness_weight,
            iterations: self.iterations,
            pyramid_levels: self.pyramid_levels,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }
}

impl Default for FlowConfig {
    fn default() -> Self {
        let s = FlowSolverParams::default();
        FlowConfig {
            smoothness_weight: s.smoothness_weight,
            iterations: s.iterations,
            pyramid_levels: s.pyramid_levels,
            plugin: None,
            timeout_secs: default_timeout_secs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectBackend {
    /// Chroma-key extraction; needs no model weights.
    #[default]
    Oracle,
    /// Instance masks shipped next to the photos.
    Masks,
    Plugin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectConfig {
    #[serde(default)]
    pub backend: DetectBackend,
    #[serde(default = "DetectConfig::default_min_confidence")]
    pub min_confidence: f64,
    #[serde(default = "DetectConfig::default_chroma_key")]
    pub chroma_key: [u8; 3],
    #[serde(default = "DetectConfig::default_chroma_tolerance")]
    pub chroma_tolerance: u8,
    #[serde(default = "DetectConfig::default_mask_suffix")]
    pub mask_suffix: String,
    #[serde(default)]
    pub plugin: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

impl DetectConfig {
    fn default_min_confidence() -> f64 {
        0.5
    }
    fn default_chroma_key() -> [u8; 3] {
        CHROMA_KEY
    }
    fn default_chroma_tolerance() -> u8 {
        CHROMA_TOLERANCE
    }
    fn default_mask_suffix() -> String {
        "_mask".into()
    }

    /// The configured backend. `scratch` holds images a plugin must read.
    pub fn backend(&self, scratch: &Path) -> Result<Box<dyn ExtractorBackend>> {
        Ok(match self.backend {
            DetectBackend::Oracle => Box::new(OracleBackend::new(self.chroma_key, self.chroma_tolerance)),
            DetectBackend::Masks => Box::new(PrecomputedMaskBackend {
                mask_suffix: self.mask_suffix.clone(),
            }),
            DetectBackend::Plugin => {
                let cmd = self
                    .plugin
                    .as_deref()
                    .ok_or_else(|| Error::Config("detect.backend = \"plugin\" needs detect.plugin".into()))?;
                Box::new(PluginBackend::new(
                    cmd,
                    Duration::from_secs(self.timeout_secs),
                    scratch.to_path_buf(),
                ))
            }
        })
    }

    /// Sidecar mask files to skip when listing photos.
    pub fn exclude_suffix(&self) -> Option<&str> {
        (self.backend == DetectBackend::Masks).then_some(self.mask_suffix.as_str())
    }
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig {
            backend: DetectBackend::default(),
            min_confidence: Self::default_min_confidence(),
            chroma_key: Self::default_chroma_key(),
            chroma_tolerance: Self::default_chroma_tolerance(),
            mask_suffix: Self::default_mask_suffix(),
            plugin: None,
            timeout_secs: default_timeout_secs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    /// Variant name to training manifest.
    #[serde(default)]
    pub variants: BTreeMap<String, PathBuf>,
    /// Evaluation manifests; rows are scored on their union.
    #[serde(default)]
    pub eval_bands: BTreeMap<Band, PathBuf>,
    #[serde(default)]
    pub use_flow: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RootConfig {
    #[serde(default)]
    pub paths: PathsConfig,
    #[serde(default)]
    pub synthesis: SynthesisConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub detect: DetectConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

impl RootConfig {
    /// Parses TOML text. Errors name the offending key path.
    pub fn from_toml_str(text: &str) -> Result<RootConfig> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config(e.to_string()))?;
        let config: RootConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            let message = inner.message().trim_end().to_string();
            if path == "." {
                Error::Config(message)
            } else {
                Error::Config(format!("key `{path}`: {message}"))
            }
        })?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<RootConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config =
            Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.scenes_dir);
        fix(&mut self.paths.objects_dir);
        fix(&mut self.paths.out_dir);
        self.ablation.variants.values_mut().for_each(fix);
        self.ablation.eval_bands.values_mut().for_each(fix);
    }

    pub fn validate(&self) -> Result<()> {
        fn tag(section: &'static str) -> impl Fn(Error) -> Error {
            move |e| Error::Config(format!("[{section}] {e}"))
        }
        self.synthesis.validate().map_err(tag("synthesis"))?;
        self.flow.solver().validate().map_err(tag("flow"))?;
        self.model.validate().map_err(tag("model"))?;
        self.train.validate().map_err(tag("train"))?;
        if !(0.0..=1.0).contains(&self.detect.min_confidence) {
            return Err(Error::Config(format!(
                "[detect] min_confidence must lie in [0, 1], got {}",
                self.detect.min_confidence
            )));
        }
        Ok(())
    }
}
