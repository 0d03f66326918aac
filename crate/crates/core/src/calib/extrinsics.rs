use nalgebra::Matrix3;

use super::homography::{decompose_homography, estimate_homography};
use super::{
    cheirality_penalty, frame_residuals, overall_rms, CalibError, CalibrationResult, CornerFrame, CornerObservationSet,
};
use crate::geometry::{CameraModel, Pixel, RigidTransform, Vec3};
use crate::optim::{levenberg_marquardt, LeastSquaresProblem, LmConfig};

/// Six unknowns need at least eight corner correspondences (two frames).
pub const MIN_EXTRINSIC_CORRESPONDENCES: usize = 8;

struct ExtrinsicProblem<'a> {
    frames: &'a [CornerFrame],
    lidar: Vec<[Vec3; 4]>,
    camera: &'a CameraModel,
    penalty: f64,
}

impl ExtrinsicProblem<'_> {
    fn predict(&self, transform: &RigidTransform, frame: usize, corner: usize) -> Option<Pixel> {
        let pc = transform.transform_point(&self.lidar[frame][corner]);
        if pc.z <= 0.0 {
            return None;
        }
        self.camera.project(&pc).ok()
    }
}

impl LeastSquaresProblem for ExtrinsicProblem<'_> {
    fn num_params(&self) -> usize {
        6
    }

    fn num_residuals(&self) -> usize {
        8 * self.frames.len()
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        let t = RigidTransform::from_params(x);
        for (fi, frame) in self.frames.iter().enumerate() {
            for j in 0..4 {
                let k = 8 * fi + 2 * j;
                match self.predict(&t, fi, j) {
                    Some(p) => {
                        out[k] = p.u - frame.image_corners[j].u;
                        out[k + 1] = p.v - frame.image_corners[j].v;
                    }
                    None => {
                        out[k] = self.penalty;
                        out[k + 1] = self.penalty;
                    }
                }
            }
        }
    }
}

fn lidar_quads(obs: &CornerObservationSet) -> Vec<[Vec3; 4]> {
    obs.frames
        .iter()
        .map(|f| {
            let p = f.lidar_points();
            [p[0], p[1], p[2], p[3]]
        })
        .collect()
}

/// Reprojection residual table (`observed − predicted`) for `transform`, with masked
/// corners reported separately. Used for both the solver output and re-checks.
pub fn extrinsic_residuals(
    obs: &CornerObservationSet,
    camera: &CameraModel,
    transform: &RigidTransform,
) -> Vec<super::FrameResiduals> {
    obs.frames
        .iter()
        .map(|frame| {
            let mut residuals = Vec::with_capacity(4);
            let mut masked = Vec::new();
            for (j, (px, pl)) in frame.image_corners.iter().zip(frame.lidar_points()).enumerate() {
                let pc = transform.transform_point(&pl);
                match (pc.z > 0.0).then(|| camera.project(&pc).ok()).flatten() {
                    Some(p) => residuals.push([px.u - p.u, px.v - p.v]),
                    None => {
                        let penalty = cheirality_penalty(camera);
                        residuals.push([-penalty, -penalty]);
                        masked.push(j);
                    }
                }
            }
            frame_residuals(&frame.id, residuals, masked)
        })
        .collect()
}

pub fn calibrate_extrinsics(
    obs: &CornerObservationSet,
    camera: &CameraModel,
    initial: &RigidTransform,
) -> Result<CalibrationResult, CalibError> {
    calibrate_extrinsics_with(obs, camera, initial, &LmConfig::default())
}

/// Minimizes `Σᵢ Σⱼ ‖uᵢⱼ − π(R Pⱼ + t)‖²` over an axis-angle rotation and a translation.
///
/// A corner that falls behind the camera during a trial step contributes a fixed
/// penalty residual instead of aborting the solve; the solver then rejects that step.
pub fn calibrate_extrinsics_with(
    obs: &CornerObservationSet,
    camera: &CameraModel,
    initial: &RigidTransform,
    config: &LmConfig,
) -> Result<CalibrationResult, CalibError> {
    let count = obs.correspondence_count();
    if count < MIN_EXTRINSIC_CORRESPONDENCES || obs.frames.len() < 2 {
        return Err(CalibError::InsufficientCorrespondences { got: count, required: MIN_EXTRINSIC_CORRESPONDENCES });
    }
    let mut warnings = Vec::new();
    for frame in &obs.frames {
        warnings.extend(frame.validate()?);
    }
    let lidar = lidar_quads(obs);
    for (frame, quad) in obs.frames.iter().zip(&lidar) {
        if let Some(corner) = quad.iter().position(|p| initial.transform_point(p).z <= 0.0) {
            return Err(CalibError::InitialCheirality { frame: frame.id.clone(), corner });
        }
    }
    let problem = ExtrinsicProblem { frames: &obs.frames, lidar, camera, penalty: cheirality_penalty(camera) };
    let report = levenberg_marquardt(&problem, &initial.to_params(), config)?;
    let transform = RigidTransform::from_params(&report.solution);
    let frames = extrinsic_residuals(obs, camera, &transform);
    for f in frames.iter().filter(|f| !f.masked.is_empty()) {
        log::warn!("frame {}: {} corners behind the camera at the solution", f.id, f.masked.len());
        warnings.push(format!("frame {}: corners {:?} behind the camera at the solution", f.id, f.masked));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(CalibrationResult {
        camera: None,
        extrinsics: Some(transform),
        view_poses: Vec::new(),
        rms: overall_rms(&frames),
        frames,
        report,
        warnings,
    })
}

/// Coarse LiDAR-to-camera transform from a single frame: the four LiDAR corners are
/// expressed in their own best-fit plane, a plane homography to the unprojected image
/// corners gives the board pose, and the two are chained.
pub fn initial_extrinsics_from_frame(frame: &CornerFrame, camera: &CameraModel) -> Result<RigidTransform, CalibError> {
    frame.validate()?;
    let pts = frame.lidar_points();
    let centroid = pts.iter().fold(Vec3::zeros(), |a, p| a + p) / 4.0;
    let mut scatter = Matrix3::zeros();
    for p in &pts {
        let d = p - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let e1: Vec3 = eig.eigenvectors.column(idx[0]).into();
    let e2: Vec3 = eig.eigenvectors.column(idx[1]).into();
    let normal = e1.cross(&e2);
    let basis = Matrix3::from_rows(&[e1.transpose(), e2.transpose(), normal.transpose()]);

    let board: Vec<[f64; 2]> = pts
        .iter()
        .map(|p| {
            let q = basis * (p - centroid);
            [q.x, q.y]
        })
        .collect();
    let normalized = frame
        .image_corners
        .iter()
        .map(|px| {
            let ray = camera.unproject(px)?;
            if ray.z <= 0.0 {
                return Err(CalibError::DegenerateConfiguration("corner ray points backwards".into()));
            }
            Ok(Pixel::new(ray.x / ray.z, ray.y / ray.z))
        })
        .collect::<Result<Vec<_>, CalibError>>()?;
    let h = estimate_homography(&board, &normalized)?;
    let board_to_camera = decompose_homography(&h)?;
    // lidar → board plane coordinates
    let lidar_to_board = RigidTransform::new(basis, -(basis * centroid))?;
    Ok(board_to_camera.compose(&lidar_to_board))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn identity_stays_put() {
        let cam = synthetic::thermal_camera();
        let obs = synthetic::corner_frames(&cam, &RigidTransform::identity(), &synthetic::whiteboard_poses(3), 0.0, 0);
        let res = calibrate_extrinsics(&obs, &cam, &RigidTransform::identity()).unwrap();
        assert!(res.rms < 1e-10);
        let t = res.extrinsics.unwrap();
        assert!(t.rotation_angle_to(&RigidTransform::identity()) < 1e-12);
        assert!(t.translation().norm() < 1e-12);
    }

    #[test]
    fn three_corners_insufficient() {
        let cam = synthetic::thermal_camera();
        let mut obs =
            synthetic::corner_frames(&cam, &RigidTransform::identity(), &synthetic::whiteboard_poses(1), 0.0, 0);
        obs.frames[0].image_corners.truncate(3);
        obs.frames[0].lidar_corners.truncate(3);
        assert!(matches!(
            calibrate_extrinsics(&obs, &cam, &RigidTransform::identity()),
            Err(CalibError::InsufficientCorrespondences { got: 3, required: 8 })
        ));
    }

    #[test]
    fn single_frame_initialization_is_exact_without_noise() {
        let cam = synthetic::thermal_camera();
        let truth = synthetic::reference_extrinsics();
        let obs = synthetic::corner_frames(&cam, &truth, &synthetic::whiteboard_poses(2), 0.0, 0);
        let t0 = initial_extrinsics_from_frame(&obs.frames[1], &cam).unwrap();
        assert!(t0.rotation_angle_to(&truth) < 1e-8);
        assert!((t0.translation() - truth.translation()).norm() < 1e-8);
    }

    #[test]
    fn initial_transform_behind_camera_rejected() {
        let cam = synthetic::thermal_camera();
        let obs = synthetic::corner_frames(&cam, &RigidTransform::identity(), &synthetic::whiteboard_poses(2), 0.0, 0);
        let flipped = RigidTransform::from_axis_angle(Vec3::new(0.0, std::f64::consts::PI, 0.0), Vec3::zeros());
        assert!(matches!(calibrate_extrinsics(&obs, &cam, &flipped), Err(CalibError::InitialCheirality { .. })));
    }
}
