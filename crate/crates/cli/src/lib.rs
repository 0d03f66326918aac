//! The `panosense` command-line tool and its HTTP annotation service.
//!
//! Every command reads its inputs from files, writes its results into the output
//! directory and prints a JSON summary on stdout. Exit codes: 0 success, 1 I/O or
//! parse failure, 2 degenerate input, 3 solver non-convergence.

use std::cell::RefCell;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use panosense::LmConfig;
use serde::Serialize;
use serde_json::Value;

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod service;

pub use error::CliError;

use commands::{align, calib, fusion, imaging, occupancy, synth};
use config::FileConfig;

#[derive(Debug, Parser)]
#[command(name = "panosense", version, about = "Calibration, occupancy and fusion tools for panoramic multimodal rigs")]
pub struct Cli {
    /// TOML file with defaults for the global and per-command settings.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice a command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Omit wall-clock fields from the printed summary so reruns are byte-identical.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Directory that receives the command's output files.
    #[arg(long, global = true, value_name = "DIR")]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["error", "warn", "info", "debug", "trace", "off"])]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Checkerboard intrinsic calibration (pinhole or OCam refinement).
    CalibrateIntrinsics(calib::IntrinsicsArgs),
    /// LiDAR-to-camera extrinsics from whiteboard corner correspondences.
    CalibrateExtrinsics(calib::ExtrinsicsArgs),
    /// Project a point cloud into a camera image.
    Project(calib::ProjectArgs),
    /// DoLP and AoLP rasters from four polarizer-angle images.
    Polarization(imaging::PolarizationArgs),
    /// Bucket a point cloud into voxels with a per-voxel point cap.
    Voxelize(occupancy::VoxelizeArgs),
    /// Confusion matrix and mIoU between predicted and ground-truth label grids.
    EvalMiou(occupancy::EvalArgs),
    /// Vertical jitter statistics from an IMU log.
    Jitter(imaging::JitterArgs),
    /// Reference forward passes of the fusion operators.
    #[command(subcommand)]
    Fusion(fusion::FusionCommand),
    /// Match sensor streams to anchor timestamps and sample keyframes.
    Align(align::AlignArgs),
    /// Serve the annotation API over HTTP.
    Serve(ServeArgs),
    /// Write a synthetic fixture dataset with known ground truth.
    Synth(synth::SynthArgs),
}

#[derive(Debug, clap::Args)]
pub struct ServeArgs {
    /// Dataset directory (manifest.json, cameras/, lidar_corners/, annotations/, extrinsics/).
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub bind: String,
}

/// Resolved global settings plus a record of the files a command wrote.
pub struct Ctx {
    pub seed: u64,
    pub deterministic: bool,
    pub output: PathBuf,
    pub lm: LmConfig,
    pub file: FileConfig,
    written: RefCell<Vec<String>>,
}

impl Ctx {
    pub fn new(output: PathBuf, seed: u64) -> Self {
        Self {
            seed,
            deterministic: true,
            output,
            lm: LmConfig::default(),
            file: FileConfig::default(),
            written: RefCell::default(),
        }
    }

    /// Path of an output file, creating its parent directory.
    pub fn out_path(&self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.output.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| CliError::input(format!("{}: {e}", parent.display())))?;
        }
        self.written.borrow_mut().push(name.to_owned());
        Ok(path)
    }

    /// Like [`Ctx::out_path`] for files that carry a `.json` sidecar.
    pub fn out_path_with_sidecar(&self, name: &str) -> Result<PathBuf, CliError> {
        let path = self.out_path(name)?;
        self.written.borrow_mut().push(format!("{name}.json"));
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        Ok(panosense::raster::write_json(&self.out_path(name)?, value)?)
    }

    pub fn written(&self) -> Vec<String> {
        self.written.borrow().clone()
    }
}

/// What a command reports: a JSON summary, and optionally a failure that should set
/// the exit code after the summary and outputs are already written.
pub struct Outcome {
    pub summary: Value,
    pub failure: Option<CliError>,
}

impl Outcome {
    pub fn ok(summary: Value) -> Self {
        Self { summary, failure: None }
    }
}

pub fn read_json_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn init_logging(level: &str) {
    let filter = level.parse().unwrap_or(log::LevelFilter::Warn);
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .target(env_logger::Target::Stderr)
        .try_init();
}

/// Parses arguments and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let level = cli.log_level.clone().or_else(|| file.log_level.clone()).unwrap_or_else(|| "warn".into());
    init_logging(&level);
    let ctx = Ctx {
        seed: cli.seed.or(file.seed).unwrap_or(0),
        deterministic: cli.deterministic || file.deterministic.unwrap_or(false),
        output: cli.output.clone().or_else(|| file.output.clone()).unwrap_or_else(|| PathBuf::from(".")),
        lm: file.lm.unwrap_or_default(),
        file,
        written: RefCell::default(),
    };
    ctx.lm.validate().map_err(|e| CliError::input(e.to_string()))?;

    let start = Instant::now();
    let outcome = match &cli.command {
        Command::CalibrateIntrinsics(a) => calib::intrinsics(&ctx, a),
        Command::CalibrateExtrinsics(a) => calib::extrinsics(&ctx, a),
        Command::Project(a) => calib::project(&ctx, a),
        Command::Polarization(a) => imaging::polarization(&ctx, a),
        Command::Voxelize(a) => occupancy::voxelize(&ctx, a),
        Command::EvalMiou(a) => occupancy::eval_miou(&ctx, a),
        Command::Jitter(a) => imaging::jitter(&ctx, a),
        Command::Fusion(c) => fusion::run(&ctx, c),
        Command::Align(a) => align::align(&ctx, a),
        Command::Synth(a) => synth::synth(&ctx, a),
        Command::Serve(a) => return service::serve_blocking(&a.data, &a.bind, a.port),
    }?;

    let mut summary = outcome.summary;
    if let Value::Object(map) = &mut summary {
        map.insert("outputs".into(), ctx.written().into());
        if !ctx.deterministic {
            map.insert("elapsed_ms".into(), (start.elapsed().as_secs_f64() * 1e3).into());
        }
    }
    println!("{}", serde_json::to_string_pretty(&summary).expect("summary serializes"));
    outcome.failure.map_or(Ok(()), Err)
}
