use std::path::PathBuf;

use clap::ValueEnum;
use ndarray::Array2;
use panosense::polarization::{polarization_maps, stokes_from_capture, PolarizationCapture, DEFAULT_EPSILON};
use panosense::raster::{read_intensity, write_raster};
use panosense::signal::{detrend_mean, downsample, jitter_stats, moving_average, read_imu_csv, ImuAxis};
use serde_json::json;

use crate::{CliError, Ctx, Outcome};

#[derive(Debug, clap::Args)]
pub struct PolarizationArgs {
    #[arg(long, value_name = "FILE")]
    pub i0: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub i45: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub i90: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub i135: PathBuf,
    /// Pixels with `S0` at or below this are marked invalid.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

pub fn polarization(ctx: &Ctx, args: &PolarizationArgs) -> Result<Outcome, CliError> {
    let epsilon = args.epsilon.or(ctx.file.polarization.epsilon).unwrap_or(DEFAULT_EPSILON);
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(CliError::input(format!("epsilon must be finite and non-negative, got {epsilon}")));
    }
    let capture = PolarizationCapture::new(
        read_intensity(&args.i0)?,
        read_intensity(&args.i45)?,
        read_intensity(&args.i90)?,
        read_intensity(&args.i135)?,
    )?;
    let stokes = stokes_from_capture(&capture);
    let maps = polarization_maps(&stokes, epsilon);
    write_raster(&ctx.out_path_with_sidecar("dolp.f32")?, &maps.dolp)?;
    write_raster(&ctx.out_path_with_sidecar("aolp.f32")?, &maps.aolp)?;
    let valid: Array2<f64> = maps.valid.mapv(|v| if v { 1.0 } else { 0.0 });
    write_raster(&ctx.out_path_with_sidecar("valid.f32")?, &valid)?;

    let n_valid = maps.valid_count();
    let mean_dolp = if n_valid == 0 {
        0.0
    } else {
        maps.dolp.iter().zip(&maps.valid).filter(|(_, v)| **v).map(|(d, _)| d).sum::<f64>() / n_valid as f64
    };
    let (height, width) = capture.dim();
    let summary = json!({
        "command": "polarization",
        "width": width,
        "height": height,
        "epsilon": epsilon,
        "valid_pixels": n_valid,
        "clamped_pixels": maps.clamped,
        "inconsistent_pixels": stokes.inconsistent,
        "mean_dolp": mean_dolp,
    });
    ctx.write_json("polarization.json", &summary)?;
    Ok(Outcome::ok(summary))
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, clap::Args)]
pub struct JitterArgs {
    /// IMU CSV with a header `timestamp,ax,ay,az`; timestamps in seconds.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = Axis::Z)]
    pub axis: Axis,
    /// Odd moving-average window applied after detrending.
    #[arg(long)]
    pub window: Option<usize>,
    /// Keep every n-th sample after smoothing.
    #[arg(long)]
    pub downsample: Option<usize>,
}

pub fn jitter(ctx: &Ctx, args: &JitterArgs) -> Result<Outcome, CliError> {
    let axis = match args.axis {
        Axis::X => ImuAxis::X,
        Axis::Y => ImuAxis::Y,
        Axis::Z => ImuAxis::Z,
    };
    let file =
        std::fs::File::open(&args.input).map_err(|e| CliError::input(format!("{}: {e}", args.input.display())))?;
    let raw = read_imu_csv(std::io::BufReader::new(file), axis)?;
    let mut series = detrend_mean(&raw);
    if let Some(w) = args.window {
        series = moving_average(&series, w)?;
    }
    if let Some(f) = args.downsample {
        series = downsample(&series, f)?;
    }
    let stats = jitter_stats(&series)?;
    let summary = json!({
        "command": "jitter",
        "axis": format!("{:?}", args.axis).to_lowercase(),
        "raw_mean": raw.mean(),
        "window": args.window,
        "downsample": args.downsample,
        "stats": stats,
    });
    ctx.write_json("jitter.json", &summary)?;
    Ok(Outcome::ok(summary))
}
