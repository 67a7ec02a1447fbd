//! `railsynth` command line: subcommand dispatch, worker pool sizing and
//! the exit-code contract (0 ok, 1 validation/config/usage, 2 runtime).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::compositor::synthesize_dataset;
use crate::config::RootConfig;
use crate::error::{Error, Result};
use crate::evaluation::{evaluate_bands, run_ablation, Band, EvalOptions, DEFAULT_THRESHOLD};
use crate::extraction::load_object_pools;
use crate::flow::{flow_for_manifest, FLOW_DIR};
use crate::manifest::{load_samples, load_scenes, manifest_dir, read_scenes_unchecked};
use crate::scene::validate_scene;
use crate::segmentation::{train, Checkpoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable that overrides `--jobs`.
pub const JOBS_ENV: &str = "RAILSYNTH_JOBS";

#[derive(Debug, Parser)]
#[command(name = "railsynth", version, about = "Copy-paste synthesis, optical flow and railway segmentation")]
struct Cli {
    /// Worker threads (default: logical cores). RAILSYNTH_JOBS overrides it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Composite cutouts onto base scenes and write a dataset manifest.
    Synth {
        #[arg(long)]
        config: PathBuf,
        /// Dataset directory (default: paths.out_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate flow for every sample of a manifest.
    Flow {
        #[arg(long)]
        config: PathBuf,
        /// Default: <paths.out_dir>/manifest.jsonl.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Flow directory (default: <manifest dir>/flow).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a segmentation model.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        use_flow: bool,
        #[arg(long)]
        flow_dir: Option<PathBuf>,
        /// Checkpoint and history directory (default: <paths.out_dir>/train).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on distance-banded manifests.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// `near=<manifest>,mid=<manifest>,far=<manifest>`; any subset.
        #[arg(long, value_parser = parse_bands)]
        bands: BandMap,
        #[arg(long)]
        use_flow: bool,
        #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
        threshold: f32,
        /// Write prediction overlays and flow heatmaps here.
        #[arg(long)]
        plot: Option<PathBuf>,
        /// Report file; the report is always printed to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score every dataset variant of the `[ablation]` section.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Default: <paths.out_dir>/ablation.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check base scenes and/or a manifest without changing anything.
    Validate {
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Debug, Clone)]
struct BandMap(BTreeMap<Band, PathBuf>);

fn parse_bands(s: &str) -> std::result::Result<BandMap, String> {
    let mut map = BTreeMap::new();
    for part in s.split(',').filter(|p| !p.is_empty()) {
        let (name, path) = part
            .split_once('=')
            .ok_or_else(|| format!("`{part}` is not band=<manifest>"))?;
        let band: Band = name.trim().parse().map_err(|e: Error| e.to_string())?;
        if map.insert(band, PathBuf::from(path)).is_some() {
            return Err(format!("band `{band}` given twice"));
        }
    }
    if map.is_empty() {
        return Err("no bands given".into());
    }
    Ok(BandMap(map))
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn jobs(flag: Option<usize>) -> Result<usize> {
    let jobs = match std::env::var(JOBS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("{JOBS_ENV}=`{v}` is not a thread count")))?,
        Err(_) => flag.unwrap_or(0),
    };
    Ok(jobs)
}

/// Parses `argv` (program name first), runs the subcommand and returns
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    init_logging(cli.verbose);
    let result = jobs(cli.jobs).and_then(|n| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {n} workers: {e}")))?;
        pool.install(|| dispatch(cli.command))
    });
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_INVALID
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn default_manifest(config: &RootConfig) -> PathBuf {
    config.paths.out_dir.join("manifest.jsonl")
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out } => {
            let cfg = RootConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.paths.out_dir.clone());
            let scenes = load_scenes(&cfg.paths.scenes_dir)?;
            let scratch = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
            let backend = cfg.detect.backend(scratch.path())?;
            let pools = load_object_pools(
                &cfg.paths.objects_dir,
                backend.as_ref(),
                cfg.detect.min_confidence,
                cfg.detect.exclude_suffix(),
            )?;
            let manifest = synthesize_dataset(&scenes, &pools, &cfg.synthesis, &out)?;
            println!("{}", manifest.display());
        }
        Command::Flow { config, manifest, out } => {
            let cfg = RootConfig::load(&config)?;
            let manifest = manifest.unwrap_or_else(|| default_manifest(&cfg));
            let flow_dir = out.unwrap_or_else(|| manifest_dir(&manifest).join(FLOW_DIR));
            let plugin = cfg.flow.plugin.as_deref().map(|c| (c, cfg.flow.timeout()));
            let n = flow_for_manifest(&manifest, &flow_dir, &cfg.flow.solver(), plugin)?;
            println!("{n} flow files in {}", flow_dir.display());
        }
        Command::Train {
            config,
            manifest,
            use_flow,
            flow_dir,
            out,
        } => {
            let cfg = RootConfig::load(&config)?;
            let manifest = manifest.unwrap_or_else(|| default_manifest(&cfg));
            let out = out.unwrap_or_else(|| cfg.paths.out_dir.join("train"));
            let mut model = cfg.model;
            model.in_channels = if use_flow { 5 } else { 3 };
            let outcome = train(&manifest, &model, &cfg.train, use_flow, flow_dir.as_deref(), Some(&out))?;
            println!(
                "best epoch {} val_miou {:.4}; checkpoint in {}",
                outcome.checkpoint.epoch,
                outcome.checkpoint.val_miou,
                out.display()
            );
        }
        Command::Eval {
            checkpoint,
            bands,
            use_flow,
            threshold,
            plot,
            out,
        } => {
            let ckpt = Checkpoint::load(&checkpoint)?;
            let options = EvalOptions {
                threshold,
                plot_dir: plot,
            };
            let report = evaluate_bands(&ckpt, &bands.0, use_flow, &options)?;
            if let Some(path) = out {
                report.save(&path)?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Ablate { config, out } => {
            let cfg = RootConfig::load(&config)?;
            let out = out.unwrap_or_else(|| cfg.paths.out_dir.join("ablation"));
            let ab = &cfg.ablation;
            let mut model = cfg.model;
            model.in_channels = if ab.use_flow { 5 } else { 3 };
            let report = run_ablation(&ab.variants, &model, &cfg.train, ab.use_flow, &ab.eval_bands, Some(&out))?;
            report.save(&out.join("ablation.json"))?;
            print!("{}", report.table());
        }
        Command::Validate { scenes, manifest } => validate(scenes.as_deref(), manifest.as_deref())?,
    }
    Ok(())
}

fn validate(scenes: Option<&Path>, manifest: Option<&Path>) -> Result<()> {
    if scenes.is_none() && manifest.is_none() {
        return Err(Error::InvalidParameter("validate needs --scenes and/or --manifest".into()));
    }
    let mut problems = Vec::new();
    if let Some(dir) = scenes {
        let all = read_scenes_unchecked(dir)?;
        for scene in &all {
            for v in validate_scene(scene) {
                problems.push(format!("scene `{}`: {v}", scene.scene_id));
            }
        }
        println!("{} scene(s) checked in {}", all.len(), dir.display());
    }
    if let Some(m) = manifest {
        let samples = load_samples(m)?;
        println!("{} sample(s) checked in {}", samples.len(), m.display());
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(problems.join("; ")))
    }
}
