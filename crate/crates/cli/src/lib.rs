//! `dsvis`: command-line front end.
//!
//! [`run`] parses arguments, merges them over an optional TOML config,
//! executes one subcommand and always writes `run.json` into the output
//! directory. Exit codes: 0 success, 1 validation error, 2 I/O error.

mod commands;
mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{parse_size, RunConfig, Validation};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const DEFAULT_OUTPUT_DIR: &str = "dsvis-out";

#[derive(Debug, Parser)]
#[command(
    name = "dsvis",
    version,
    about = "Dataset-level visual analysis of image datasets"
)]
struct Cli {
    /// JSONL dataset manifest.
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Directory for all outputs, including run.json.
    #[arg(short = 'o', long, global = true)]
    output_dir: Option<PathBuf>,
    /// Seed for every random choice (default 0).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true, env = "DSVIS_JOBS")]
    jobs: Option<usize>,
    /// TOML file with defaults for any option.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Principal components of whole (optionally bbox-cropped) images.
    Pca(PcaArgs),
    /// Principal components of random image patches.
    PatchPca(PatchPcaArgs),
    /// Independent components after PCA whitening.
    Ica(IcaArgs),
    /// Per-category mask heatmaps and split comparison.
    Spatial(SpatialArgs),
    /// Per-group mean images.
    Average(AverageArgs),
    /// Write a channel-ablated copy of the dataset.
    Ablate(AblateArgs),
    /// Top-1 accuracy of prediction files, with an optional ablation table.
    Score(ScoreArgs),
    /// Combine earlier outputs into report.html and report.json.
    Report(ReportArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Pca(_) => "pca",
            Command::PatchPca(_) => "patch-pca",
            Command::Ica(_) => "ica",
            Command::Spatial(_) => "spatial",
            Command::Average(_) => "average",
            Command::Ablate(_) => "ablate",
            Command::Score(_) => "score",
            Command::Report(_) => "report",
        }
    }
}

#[derive(Debug, Args)]
struct LoadArgs {
    /// Crop each image to its bounding box before resizing.
    #[arg(long)]
    crop_bbox: bool,
    /// Resize target, WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size_arg)]
    size: Option<String>,
    /// Expand grayscale images to RGB.
    #[arg(long)]
    force_rgb: bool,
    /// Only use samples from this split.
    #[arg(long)]
    split: Option<String>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    /// Nearest-neighbour upscale factor for rendered cells.
    #[arg(long)]
    cell_scale: Option<usize>,
}

#[derive(Debug, Args)]
struct PcaArgs {
    #[command(flatten)]
    load: LoadArgs,
    #[command(flatten)]
    render: RenderArgs,
    /// Number of components to compute and draw.
    #[arg(long)]
    top_k: Option<usize>,
    /// exact, randomized or auto.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Debug, Args)]
struct PatchPcaArgs {
    /// Patch size, WIDTHxHEIGHT.
    #[arg(long, value_parser = parse_size_arg)]
    patch: Option<String>,
    /// Number of patches to sample.
    #[arg(long)]
    count: Option<usize>,
    /// Expand grayscale images to RGB.
    #[arg(long)]
    force_rgb: bool,
    /// Only use samples from this split.
    #[arg(long)]
    split: Option<String>,
    #[command(flatten)]
    render: RenderArgs,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    method: Option<String>,
}

#[derive(Debug, Args)]
struct IcaArgs {
    #[command(flatten)]
    load: LoadArgs,
    #[command(flatten)]
    render: RenderArgs,
    /// Number of independent components.
    #[arg(long)]
    k: Option<usize>,
    /// PCA dimensions whitened before FastICA.
    #[arg(long)]
    pre_pca_k: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

#[derive(Debug, Args)]
struct SpatialArgs {
    /// Object category whose masks are aggregated.
    #[arg(long)]
    category: Option<String>,
    /// Only use samples from this split.
    #[arg(long, conflicts_with = "compare")]
    split: Option<String>,
    /// Aggregate two splits and compare them.
    #[arg(long, num_args = 2, value_names = ["SPLIT_A", "SPLIT_B"])]
    compare: Option<Vec<String>>,
    /// Heatmap size, WIDTHxHEIGHT (default 640x640).
    #[arg(long, value_parser = parse_size_arg)]
    size: Option<String>,
    /// Directory of `<id>_<category>.png` masks.
    #[arg(long)]
    mask_dir: Option<PathBuf>,
    /// Also count category co-occurrence from `label` or this metadata key.
    #[arg(long)]
    categories_key: Option<String>,
    /// grayscale or viridis.
    #[arg(long)]
    colormap: Option<String>,
}

#[derive(Debug, Args)]
struct AverageArgs {
    #[command(flatten)]
    load: LoadArgs,
    #[command(flatten)]
    render: RenderArgs,
    /// `label` or a metadata key.
    #[arg(long)]
    group_key: Option<String>,
    /// Smallest group that gets an average.
    #[arg(long)]
    min_n: Option<usize>,
}

#[derive(Debug, Args)]
struct AblateArgs {
    /// red, green or blue.
    #[arg(long)]
    channel: Option<String>,
    /// mean_of_others or gray.
    #[arg(long)]
    strategy: Option<String>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    /// Baseline predictions CSV (`sample_id,prediction`).
    #[arg(long)]
    predictions: Option<PathBuf>,
    /// Predictions on an ablated dataset, as CHANNEL:STRATEGY=PATH (repeatable).
    #[arg(long = "variant")]
    variants: Vec<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Directories holding earlier outputs (default: the output directory).
    #[arg(long = "inputs", num_args = 1..)]
    inputs: Vec<PathBuf>,
    /// Add image size histograms computed from --manifest.
    #[arg(long)]
    metadata: bool,
    /// Report title.
    #[arg(long)]
    title: Option<String>,
    /// grayscale or viridis.
    #[arg(long)]
    colormap: Option<String>,
    #[command(flatten)]
    render: RenderArgs,
}

fn parse_size_arg(s: &str) -> Result<String, String> {
    parse_size(s).map(|_| s.to_string())
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn set_flag(slot: &mut Option<bool>, flag: bool) {
    if flag {
        *slot = Some(true);
    }
}

impl LoadArgs {
    fn apply(self, cfg: &mut RunConfig) {
        set_flag(&mut cfg.load.crop_bbox, self.crop_bbox);
        set(&mut cfg.load.size, self.size);
        set_flag(&mut cfg.load.force_rgb, self.force_rgb);
        set(&mut cfg.load.split, self.split);
    }
}

impl Command {
    /// Folds subcommand flags into the config; returns what the config does
    /// not carry.
    fn apply(self, cfg: &mut RunConfig) -> commands::Extra {
        let mut extra = commands::Extra::default();
        match self {
            Command::Pca(a) => {
                a.load.apply(cfg);
                set(&mut cfg.render.cell_scale, a.render.cell_scale);
                set(&mut cfg.pca.top_k, a.top_k);
                set(&mut cfg.pca.method, a.method);
            }
            Command::PatchPca(a) => {
                set(&mut cfg.patch.size, a.patch);
                set(&mut cfg.patch.count, a.count);
                set_flag(&mut cfg.load.force_rgb, a.force_rgb);
                set(&mut cfg.load.split, a.split);
                set(&mut cfg.render.cell_scale, a.render.cell_scale);
                set(&mut cfg.pca.top_k, a.top_k);
                set(&mut cfg.pca.method, a.method);
            }
            Command::Ica(a) => {
                a.load.apply(cfg);
                set(&mut cfg.render.cell_scale, a.render.cell_scale);
                set(&mut cfg.ica.k, a.k);
                set(&mut cfg.ica.pre_pca_k, a.pre_pca_k);
                set(&mut cfg.ica.tol, a.tol);
                set(&mut cfg.ica.max_iter, a.max_iter);
            }
            Command::Spatial(a) => {
                set(&mut cfg.spatial.category, a.category);
                set(&mut cfg.load.split, a.split);
                set(&mut cfg.spatial.size, a.size);
                set(&mut cfg.spatial.mask_dir, a.mask_dir);
                set(&mut cfg.spatial.categories_key, a.categories_key);
                set(&mut cfg.render.colormap, a.colormap);
                extra.compare = a.compare;
            }
            Command::Average(a) => {
                a.load.apply(cfg);
                set(&mut cfg.render.cell_scale, a.render.cell_scale);
                set(&mut cfg.average.group_key, a.group_key);
                set(&mut cfg.average.min_n, a.min_n);
            }
            Command::Ablate(a) => {
                set(&mut cfg.ablation.channel, a.channel);
                set(&mut cfg.ablation.strategy, a.strategy);
            }
            Command::Score(a) => {
                extra.predictions = a.predictions;
                extra.variants = a.variants;
            }
            Command::Report(a) => {
                set(&mut cfg.render.colormap, a.colormap);
                set(&mut cfg.render.cell_scale, a.render.cell_scale);
                extra.inputs = a.inputs;
                extra.metadata = a.metadata;
                extra.title = a.title;
            }
        }
        extra
    }
}

#[derive(Debug, Serialize)]
struct Versions {
    dsvis: &'static str,
    dsvis_core: &'static str,
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    command: Option<&'a str>,
    argv: Vec<String>,
    config: Option<&'a RunConfig>,
    seed: u64,
    jobs: Option<usize>,
    versions: Versions,
    started_unix_ms: u128,
    elapsed_seconds: f64,
    exit_code: i32,
    error: Option<String>,
    outputs: Vec<PathBuf>,
}

/// Maps an error to an exit code: I/O failures anywhere in the chain give
/// 2, everything else 1.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<dsvis_core::Error>() {
            return if e.is_io() { EXIT_IO } else { EXIT_VALIDATION };
        }
        if cause.is::<std::io::Error>() {
            return EXIT_IO;
        }
    }
    EXIT_VALIDATION
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format_timestamp(None)
        .try_init();
}

/// Best-effort output directory for runs whose arguments did not parse.
fn scan_output_dir(argv: &[String]) -> PathBuf {
    let mut it = argv.iter();
    while let Some(a) = it.next() {
        if a == "-o" || a == "--output-dir" {
            if let Some(v) = it.next() {
                return PathBuf::from(v);
            }
        } else if let Some(v) = a.strip_prefix("--output-dir=") {
            return PathBuf::from(v);
        }
    }
    PathBuf::from(DEFAULT_OUTPUT_DIR)
}

fn write_record(dir: &Path, record: &RunRecord<'_>) {
    let path = dir.join("run.json");
    let res = std::fs::create_dir_all(dir).and_then(|_| {
        let bytes = serde_json::to_vec_pretty(record).map_err(std::io::Error::other)?;
        std::fs::write(&path, bytes)
    });
    if let Err(e) = res {
        eprintln!("dsvis: cannot write {}: {e}", path.display());
    }
}

/// Runs the tool with `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let start = Instant::now();
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0);
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv_text: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let record = |command, config, seed, jobs, code, error: Option<String>, outputs| RunRecord {
        command,
        argv: argv_text.clone(),
        config,
        seed,
        jobs,
        versions: Versions {
            dsvis: env!("CARGO_PKG_VERSION"),
            dsvis_core: dsvis_core::VERSION,
        },
        started_unix_ms,
        elapsed_seconds: start.elapsed().as_secs_f64(),
        exit_code: code,
        error,
        outputs,
    };

    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let msg = e.render().to_string();
            eprint!("{msg}");
            let first_line = msg
                .lines()
                .next()
                .unwrap_or("invalid arguments")
                .to_string();
            write_record(
                &scan_output_dir(&argv_text),
                &record(
                    None,
                    None,
                    0,
                    None,
                    EXIT_VALIDATION,
                    Some(first_line),
                    vec![],
                ),
            );
            return EXIT_VALIDATION;
        }
    };
    init_logging(cli.verbose);

    let mut cfg = match &cli.config {
        Some(path) => match RunConfig::from_file(path) {
            Ok(c) => c,
            Err(e) => {
                let code = exit_code(&e);
                eprintln!("dsvis: {e:#}");
                let dir = cli
                    .output_dir
                    .clone()
                    .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));
                write_record(
                    &dir,
                    &record(
                        Some(cli.command.name()),
                        None,
                        cli.seed.unwrap_or(0),
                        cli.jobs,
                        code,
                        Some(format!("{e:#}")),
                        vec![],
                    ),
                );
                return code;
            }
        },
        None => RunConfig::default(),
    };
    set(&mut cfg.manifest, cli.manifest);
    set(&mut cfg.output_dir, cli.output_dir);
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.jobs, cli.jobs);
    let name = cli.command.name();
    let extra = cli.command.apply(&mut cfg);
    let out_dir = cfg.output_dir();

    let mut outputs = Vec::new();
    let result = (|| -> anyhow::Result<()> {
        std::fs::create_dir_all(&out_dir).map_err(|e| {
            anyhow::Error::new(e).context(format!("cannot create {}", out_dir.display()))
        })?;
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(j) = cfg.jobs {
            if j == 0 {
                anyhow::bail!(Validation("--jobs must be at least 1".into()));
            }
            builder = builder.num_threads(j);
        }
        let pool = builder.build()?;
        pool.install(|| commands::dispatch(name, &cfg, &extra, &out_dir, &mut outputs))
    })();

    let (code, error) = match &result {
        Ok(()) => (EXIT_OK, None),
        Err(e) => {
            eprintln!("dsvis {name}: {e:#}");
            (exit_code(e), Some(format!("{e:#}")))
        }
    };
    write_record(
        &out_dir,
        &record(
            Some(name),
            Some(&cfg),
            cfg.seed(),
            cfg.jobs,
            code,
            error,
            outputs,
        ),
    );
    code
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_code_classification() {
        let io = anyhow::Error::new(dsvis_core::Error::Io {
            path: "x".into(),
            source: std::io::Error::other("boom"),
        });
        assert_eq!(exit_code(&io), EXIT_IO);
        let v = anyhow::Error::new(Validation("bad".into()));
        assert_eq!(exit_code(&v), EXIT_VALIDATION);
        let raw = anyhow::Error::new(std::io::Error::other("disk")).context("writing");
        assert_eq!(exit_code(&raw), EXIT_IO);
    }

    #[test]
    fn output_dir_scan() {
        let argv: Vec<String> = ["dsvis", "pca", "-o", "out"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        assert_eq!(scan_output_dir(&argv), PathBuf::from("out"));
        let argv = vec!["dsvis".to_string(), "--output-dir=x".to_string()];
        assert_eq!(scan_output_dir(&argv), PathBuf::from("x"));
    }
}
