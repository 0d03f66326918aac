use std::path::PathBuf;

use clap::ValueEnum;
use panosense::calib::{
    calibrate_extrinsics_with, calibrate_intrinsics_pinhole_with, extrinsic_residuals, initial_extrinsics_from_frame,
    overall_rms, project_cloud, refine_intrinsics_ocam_with, BoardObservationFile, CalibError, CalibrationResult,
    CornerObservationSet, ProjectedPoint,
};
use panosense::geometry::Projection;
use panosense::occupancy::read_cloud;
use panosense::{CameraModel, RigidTransform};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::{read_json_file, CliError, Ctx, Outcome};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IntrinsicModel {
    Pinhole,
    Ocam,
}

#[derive(Debug, clap::Args)]
pub struct IntrinsicsArgs {
    /// Checkerboard views: `{"width", "height", "frames": [{"id", "board_points", "image_points"}]}`.
    #[arg(long, value_name = "FILE")]
    pub views: PathBuf,
    #[arg(long, value_enum, default_value_t = IntrinsicModel::Pinhole)]
    pub model: IntrinsicModel,
    /// Starting camera JSON. Required for `ocam`, which refines rather than initializes.
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ExtrinsicsArgs {
    /// Corner correspondences: `{"frames": [{"id", "image_corners", "lidar_corners"}]}`.
    #[arg(long, value_name = "FILE")]
    pub corners: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub camera: PathBuf,
    /// Starting LiDAR-to-camera transform; estimated from the corners when omitted.
    #[arg(long, value_name = "FILE")]
    pub init: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
pub struct ProjectArgs {
    #[arg(long, value_name = "FILE")]
    pub cloud: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub camera: PathBuf,
    /// A transform JSON, or an extrinsic calibration result.
    #[arg(long, value_name = "FILE")]
    pub extrinsics: PathBuf,
}

fn convergence(result: &CalibrationResult) -> Option<CliError> {
    (!result.report.termination.converged())
        .then(|| CliError::NotConverged(format!("stopped after {} iterations", result.report.iterations)))
}

fn summary(command: &str, result: &CalibrationResult) -> serde_json::Value {
    json!({
        "command": command,
        "rms": result.rms,
        "iterations": result.report.iterations,
        "termination": result.report.termination,
        "worst_frames": result.worst_frames().into_iter().take(3).collect::<Vec<_>>(),
        "warnings": result.warnings,
    })
}

pub fn intrinsics(ctx: &Ctx, args: &IntrinsicsArgs) -> Result<Outcome, CliError> {
    let file: BoardObservationFile = read_json_file(&args.views)?;
    let result = match args.model {
        IntrinsicModel::Pinhole => calibrate_intrinsics_pinhole_with(&file.frames, file.width, file.height, &ctx.lm)?,
        IntrinsicModel::Ocam => {
            let path = args.init.as_ref().ok_or_else(|| CliError::input("--model ocam requires --init"))?;
            let init: CameraModel = read_json_file(path)?;
            let Projection::Ocam(start) = init.projection() else {
                return Err(CliError::input(format!("{}: expected an ocam camera", path.display())));
            };
            refine_intrinsics_ocam_with(&file.frames, file.width, file.height, start, &ctx.lm)?
        }
    };
    let camera = result.camera.as_ref().expect("intrinsic calibration yields a camera");
    ctx.write_json("intrinsics.json", &result)?;
    ctx.write_json("camera.json", camera)?;
    let mut s = summary("calibrate-intrinsics", &result);
    s["views"] = file.frames.len().into();
    s["camera"] = serde_json::to_value(camera)?;
    Ok(Outcome { summary: s, failure: convergence(&result) })
}

/// The per-frame initial estimate with the lowest reprojection RMS over all frames,
/// among those that put every corner in front of the camera.
pub fn initial_guess(obs: &CornerObservationSet, camera: &CameraModel) -> Result<RigidTransform, CalibError> {
    let mut best: Option<(f64, RigidTransform)> = None;
    let mut first_err = None;
    for frame in &obs.frames {
        match initial_extrinsics_from_frame(frame, camera) {
            Ok(t) if t.to_params().iter().all(|v| v.is_finite()) => {
                let res = extrinsic_residuals(obs, camera, &t);
                if res.iter().any(|f| !f.masked.is_empty()) {
                    continue;
                }
                let rms = overall_rms(&res);
                if rms.is_finite() && best.as_ref().is_none_or(|(b, _)| rms < *b) {
                    best = Some((rms, t));
                }
            }
            Ok(_) => {}
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match (best, first_err) {
        (Some((_, t)), _) => Ok(t),
        (None, Some(e)) => Err(e),
        (None, None) => Err(CalibError::DegenerateConfiguration(
            "no frame gives an initial transform with every corner in front of the camera".into(),
        )),
    }
}

#[derive(Serialize)]
struct ResidualRow<'a> {
    frame: &'a str,
    corner: usize,
    du: f64,
    dv: f64,
    error: f64,
    masked: bool,
}

pub fn extrinsics(ctx: &Ctx, args: &ExtrinsicsArgs) -> Result<Outcome, CliError> {
    let obs: CornerObservationSet = read_json_file(&args.corners)?;
    let camera: CameraModel = read_json_file(&args.camera)?;
    if obs.frames.is_empty() {
        return Err(CliError::Degenerate("no corner frames".into()));
    }
    let initial = match &args.init {
        Some(path) => read_json_file(path)?,
        None => initial_guess(&obs, &camera)?,
    };
    let result = calibrate_extrinsics_with(&obs, &camera, &initial, &ctx.lm)?;
    let transform = result.extrinsics.expect("extrinsic calibration yields a transform");
    ctx.write_json("extrinsics.json", &result)?;
    ctx.write_json("transform.json", &transform)?;

    let mut table = csv::Writer::from_writer(Vec::new());
    for f in &result.frames {
        for (corner, r) in f.residuals.iter().enumerate() {
            table
                .serialize(ResidualRow {
                    frame: &f.id,
                    corner,
                    du: r[0],
                    dv: r[1],
                    error: r[0].hypot(r[1]),
                    masked: f.masked.contains(&corner),
                })
                .map_err(|e| CliError::input(e.to_string()))?;
        }
    }
    let bytes = table.into_inner().map_err(|e| CliError::input(e.to_string()))?;
    panosense::raster::write_atomic(&ctx.out_path("residuals.csv")?, &bytes)?;

    let mut s = summary("calibrate-extrinsics", &result);
    s["frames"] = obs.frames.len().into();
    s["transform"] = serde_json::to_value(transform)?;
    Ok(Outcome { summary: s, failure: convergence(&result) })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ExtrinsicsDoc {
    Transform(RigidTransform),
    Result(Box<CalibrationResult>),
}

pub fn load_extrinsics(path: &std::path::Path) -> Result<RigidTransform, CliError> {
    match read_json_file(path)? {
        ExtrinsicsDoc::Transform(t) => Ok(t),
        ExtrinsicsDoc::Result(r) => {
            r.extrinsics.ok_or_else(|| CliError::input(format!("{}: result holds no extrinsics", path.display())))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Overlay {
    pub width: u32,
    pub height: u32,
    pub input_points: usize,
    pub behind_camera: usize,
    pub outside_image: usize,
    pub points: Vec<ProjectedPoint>,
}

pub fn overlay(points: &[panosense::Vec3], transform: &RigidTransform, camera: &CameraModel) -> Overlay {
    let projected = project_cloud(points, transform, camera);
    let behind_camera = points.iter().filter(|p| transform.transform_point(p).z <= 0.0).count();
    Overlay {
        width: camera.width(),
        height: camera.height(),
        input_points: points.len(),
        behind_camera,
        outside_image: points.len() - behind_camera - projected.len(),
        points: projected,
    }
}

pub fn project(ctx: &Ctx, args: &ProjectArgs) -> Result<Outcome, CliError> {
    let cloud = read_cloud(&args.cloud)?;
    let camera: CameraModel = read_json_file(&args.camera)?;
    let transform = load_extrinsics(&args.extrinsics)?;
    let o = overlay(&cloud.positions, &transform, &camera);
    ctx.write_json("overlay.json", &o)?;
    Ok(Outcome::ok(json!({
        "command": "project",
        "input_points": o.input_points,
        "projected": o.points.len(),
        "behind_camera": o.behind_camera,
        "outside_image": o.outside_image,
    })))
}
