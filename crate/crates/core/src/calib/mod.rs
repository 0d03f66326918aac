//! Checkerboard intrinsic calibration and corner-based LiDAR-camera extrinsics.
//!
//! Corner detection happens elsewhere; this module ingests 2D/3D corner lists and
//! minimizes reprojection error with [`crate::optim::levenberg_marquardt`].

mod extrinsics;
mod homography;
mod intrinsics;
mod observations;

pub use extrinsics::{
    calibrate_extrinsics, calibrate_extrinsics_with, extrinsic_residuals, initial_extrinsics_from_frame,
    MIN_EXTRINSIC_CORRESPONDENCES,
};
pub use homography::{decompose_homography, estimate_homography, estimate_homography_view};
pub use intrinsics::{
    calibrate_intrinsics_pinhole, calibrate_intrinsics_pinhole_with, refine_intrinsics_ocam,
    refine_intrinsics_ocam_with, MIN_INTRINSIC_VIEWS,
};
pub use observations::{
    is_clockwise_quad, BoardObservation, BoardObservationFile, CornerFrame, CornerObservationSet, COPLANARITY_WARN_RMS,
};

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, GeometryError, Pixel, RigidTransform, Vec3};
use crate::optim::{LmReport, OptimError};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CalibError {
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error("degenerate configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("need at least {required} correspondences, got {got}")]
    InsufficientCorrespondences { got: usize, required: usize },
    #[error("frame {frame}: corners are not ordered top-left, top-right, bottom-right, bottom-left")]
    CornerOrder { frame: String },
    #[error("frame {frame}, corner {corner}: point is behind the camera under the initial transform")]
    InitialCheirality { frame: String, corner: usize },
    #[error("invalid observation: {0}")]
    InvalidObservation(String),
}

impl CalibError {
    /// Input problems that no amount of solver effort can fix.
    pub fn is_degenerate(&self) -> bool {
        matches!(
            self,
            CalibError::DegenerateConfiguration(_)
                | CalibError::InsufficientCorrespondences { .. }
                | CalibError::CornerOrder { .. }
                | CalibError::InitialCheirality { .. }
                | CalibError::InvalidObservation(_)
        )
    }
}

/// Reprojection residuals of one frame or view; each entry is `observed − predicted`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameResiduals {
    pub id: String,
    pub residuals: Vec<[f64; 2]>,
    /// Corners that were behind the camera and contributed a penalty instead.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub masked: Vec<usize>,
    pub rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<CameraModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrinsics: Option<RigidTransform>,
    /// Board-to-camera pose of each intrinsic view.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub view_poses: Vec<RigidTransform>,
    /// `√(mean of squared residual components)` over every corner, in pixels.
    pub rms: f64,
    pub frames: Vec<FrameResiduals>,
    pub report: LmReport,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl CalibrationResult {
    /// Frame ids ordered from the largest to the smallest per-frame RMS.
    pub fn worst_frames(&self) -> Vec<&str> {
        let mut order: Vec<&FrameResiduals> = self.frames.iter().collect();
        order.sort_by(|a, b| b.rms.total_cmp(&a.rms));
        order.into_iter().map(|f| f.id.as_str()).collect()
    }
}

/// RMS over all residual components of all frames.
pub fn overall_rms(frames: &[FrameResiduals]) -> f64 {
    let (sum, count) = frames
        .iter()
        .flat_map(|f| f.residuals.iter())
        .fold((0.0, 0usize), |(s, c), r| (s + r[0] * r[0] + r[1] * r[1], c + 2));
    if count == 0 {
        0.0
    } else {
        (sum / count as f64).sqrt()
    }
}

pub(crate) fn frame_residuals(id: &str, residuals: Vec<[f64; 2]>, masked: Vec<usize>) -> FrameResiduals {
    let sum: f64 = residuals.iter().map(|r| r[0] * r[0] + r[1] * r[1]).sum();
    let rms = if residuals.is_empty() { 0.0 } else { (sum / (2 * residuals.len()) as f64).sqrt() };
    FrameResiduals { id: id.to_owned(), residuals, masked, rms }
}

/// Residual magnitude (pixels, per component) substituted for a corner that lands
/// behind the camera during an optimizer trial step.
pub(crate) fn cheirality_penalty(camera: &CameraModel) -> f64 {
    2.0 * (camera.width() + camera.height()) as f64
}

/// A LiDAR point projected into the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPoint {
    /// Index into the input cloud.
    pub index: usize,
    pub pixel: Pixel,
    /// Camera-frame depth `Z` in meters.
    pub depth: f64,
}

/// Transforms `points` into the camera frame and keeps those in front of the camera
/// that land inside the image rectangle.
pub fn project_cloud(points: &[Vec3], transform: &RigidTransform, camera: &CameraModel) -> Vec<ProjectedPoint> {
    points
        .iter()
        .enumerate()
        .filter_map(|(index, p)| {
            let pc = transform.transform_point(p);
            if pc.z <= 0.0 {
                return None;
            }
            let pixel = camera.project(&pc).ok()?;
            camera.contains(&pixel).then_some(ProjectedPoint { index, pixel, depth: pc.z })
        })
        .collect()
}
