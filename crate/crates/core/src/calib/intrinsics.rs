use nalgebra::{DMatrix, Matrix3};

use super::homography::{decompose_homography, estimate_homography};
use super::{cheirality_penalty, frame_residuals, overall_rms, BoardObservation, CalibError, CalibrationResult};
use crate::geometry::ocam::project_raw;
use crate::geometry::{CameraModel, OcamIntrinsics, PinholeIntrinsics, Pixel, Projection, RigidTransform, Vec3};
use crate::optim::{levenberg_marquardt, LeastSquaresProblem, LmConfig};

/// Closed-form initialization needs three views in general position.
pub const MIN_INTRINSIC_VIEWS: usize = 3;

/// Relative singular-value threshold for the closed-form intrinsic system.
const ZHANG_RANK_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy)]
enum IntrinsicModel {
    Pinhole,
    Ocam { coefficients: usize },
}

impl IntrinsicModel {
    fn param_count(self) -> usize {
        match self {
            IntrinsicModel::Pinhole => PinholeIntrinsics::PARAM_COUNT,
            IntrinsicModel::Ocam { coefficients } => coefficients + 3,
        }
    }

    fn project(self, params: &[f64], point: &Vec3) -> Option<Pixel> {
        if point.z <= 0.0 {
            return None;
        }
        match self {
            IntrinsicModel::Pinhole => PinholeIntrinsics::from_params(params).project(point).ok(),
            IntrinsicModel::Ocam { coefficients } => {
                let (poly, rest) = params.split_at(coefficients);
                project_raw(poly, rest[0], rest[1], rest[2], point).ok()
            }
        }
    }
}

/// Joint refinement of intrinsics and per-view board poses.
struct BoardProblem<'a> {
    views: &'a [BoardObservation],
    model: IntrinsicModel,
    penalty: f64,
    residual_count: usize,
}

impl<'a> BoardProblem<'a> {
    fn new(views: &'a [BoardObservation], model: IntrinsicModel, penalty: f64) -> Self {
        let residual_count = views.iter().map(|v| 2 * v.board_points.len()).sum();
        Self { views, model, penalty, residual_count }
    }

    /// Calls `visit(view, point, predicted)` for every correspondence.
    fn for_each_prediction(&self, x: &[f64], mut visit: impl FnMut(usize, usize, Option<Pixel>)) {
        let k = self.model.param_count();
        let intrinsics = &x[..k];
        for (vi, view) in self.views.iter().enumerate() {
            let pose = RigidTransform::from_params(&x[k + 6 * vi..k + 6 * vi + 6]);
            for (pi, b) in view.board_points.iter().enumerate() {
                let pc = pose.transform_point(&Vec3::new(b[0], b[1], 0.0));
                visit(vi, pi, self.model.project(intrinsics, &pc));
            }
        }
    }
}

impl LeastSquaresProblem for BoardProblem<'_> {
    fn num_params(&self) -> usize {
        self.model.param_count() + 6 * self.views.len()
    }

    fn num_residuals(&self) -> usize {
        self.residual_count
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]) {
        let mut i = 0;
        self.for_each_prediction(x, |vi, pi, predicted| {
            let obs = self.views[vi].image_points[pi];
            let (du, dv) = match predicted {
                Some(p) => (p.u - obs.u, p.v - obs.v),
                None => (self.penalty, self.penalty),
            };
            out[i] = du;
            out[i + 1] = dv;
            i += 2;
        });
    }
}

fn validate_views(views: &[BoardObservation]) -> Result<(), CalibError> {
    if views.len() < MIN_INTRINSIC_VIEWS {
        return Err(CalibError::DegenerateConfiguration(format!(
            "intrinsic calibration needs at least {MIN_INTRINSIC_VIEWS} views, got {}",
            views.len()
        )));
    }
    views.iter().try_for_each(BoardObservation::validate)
}

/// Row `v_ij` of the closed-form constraint on `B = K⁻ᵀK⁻¹`.
fn constraint_row(h: &Matrix3<f64>, i: usize, j: usize) -> [f64; 6] {
    let (hi, hj) = (h.column(i), h.column(j));
    [
        hi[0] * hj[0],
        hi[0] * hj[1] + hi[1] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ]
}

/// Zero-skew intrinsics from plane homographies. Pixels are first mapped by `norm`
/// (centered, scaled by half the image size) for conditioning.
fn closed_form_intrinsics(
    homographies: &[Matrix3<f64>],
    width: u32,
    height: u32,
) -> Result<PinholeIntrinsics, CalibError> {
    let s = 0.5 * width.max(height) as f64;
    let (c0x, c0y) = (0.5 * width as f64, 0.5 * height as f64);
    let norm = Matrix3::new(1.0 / s, 0.0, -c0x / s, 0.0, 1.0 / s, -c0y / s, 0.0, 0.0, 1.0);

    let mut v = DMatrix::zeros(2 * homographies.len(), 6);
    for (k, h) in homographies.iter().enumerate() {
        let hn = norm * h;
        let v12 = constraint_row(&hn, 0, 1);
        let v11 = constraint_row(&hn, 0, 0);
        let v22 = constraint_row(&hn, 1, 1);
        for c in 0..6 {
            v[(2 * k, c)] = v12[c];
            v[(2 * k + 1, c)] = v11[c] - v22[c];
        }
    }
    let svd = v.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let largest = svd.singular_values[*order.last().expect("non-empty")];
    if order.len() < 6 || svd.singular_values[order[1]] <= ZHANG_RANK_TOLERANCE * largest {
        return Err(CalibError::DegenerateConfiguration(
            "views do not constrain the intrinsics (too few distinct board orientations)".into(),
        ));
    }
    let b = v_t.row(order[0]);
    let sign = if b[0] < 0.0 { -1.0 } else { 1.0 };
    let (b11, b12, b22, b13, b23, b33) = (sign * b[0], sign * b[1], sign * b[2], sign * b[3], sign * b[4], sign * b[5]);
    let denom = b11 * b22 - b12 * b12;
    if b11 <= 0.0 || denom <= 0.0 {
        return Err(CalibError::DegenerateConfiguration("closed-form intrinsics are not positive definite".into()));
    }
    let v0 = (b12 * b13 - b11 * b23) / denom;
    let lambda = b33 - (b13 * b13 + v0 * (b12 * b13 - b11 * b23)) / b11;
    if lambda / b11 <= 0.0 {
        return Err(CalibError::DegenerateConfiguration("closed-form intrinsics are not positive definite".into()));
    }
    let alpha = (lambda / b11).sqrt();
    let beta = (lambda * b11 / denom).sqrt();
    let gamma = -b12 * alpha * alpha * beta / lambda;
    let u0 = gamma * v0 / beta - b13 * alpha * alpha / lambda;

    // undo the conditioning: K = N⁻¹ K'
    let fx = alpha * s;
    let fy = beta * s;
    let cx = u0 * s + c0x;
    let cy = v0 * s + c0y;
    PinholeIntrinsics::new(fx, fy, cx, cy, Default::default())
        .map_err(|e| CalibError::DegenerateConfiguration(format!("closed-form intrinsics invalid: {e}")))
}

/// Board pose from pixels, using `camera` to lift pixels onto the `z = 1` plane.
fn initial_pose(view: &BoardObservation, camera: &CameraModel) -> Result<RigidTransform, CalibError> {
    let mut board = Vec::with_capacity(view.board_points.len());
    let mut normalized = Vec::with_capacity(view.board_points.len());
    for (b, px) in view.board_points.iter().zip(&view.image_points) {
        if let Ok(ray) = camera.unproject(px) {
            if ray.z > 1e-9 {
                board.push(*b);
                normalized.push(Pixel::new(ray.x / ray.z, ray.y / ray.z));
            }
        }
    }
    if board.len() < 4 {
        return Err(CalibError::DegenerateConfiguration(format!(
            "view {}: fewer than 4 pixels can be unprojected with the initial intrinsics",
            view.id
        )));
    }
    let h = estimate_homography(&board, &normalized)?;
    decompose_homography(&h)
}

fn solve_board_problem(
    views: &[BoardObservation],
    model: IntrinsicModel,
    initial_camera: &CameraModel,
    x0: Vec<f64>,
    config: &LmConfig,
    build: impl Fn(&[f64]) -> Result<CameraModel, CalibError>,
) -> Result<CalibrationResult, CalibError> {
    let problem = BoardProblem::new(views, model, cheirality_penalty(initial_camera));
    let report = levenberg_marquardt(&problem, &x0, config)?;
    let x = &report.solution;
    let k = model.param_count();

    let mut tables: Vec<(Vec<[f64; 2]>, Vec<usize>)> = vec![(Vec::new(), Vec::new()); views.len()];
    problem.for_each_prediction(x, |vi, pi, predicted| {
        let obs = views[vi].image_points[pi];
        match predicted {
            Some(p) => tables[vi].0.push([obs.u - p.u, obs.v - p.v]),
            None => {
                tables[vi].0.push([-problem.penalty, -problem.penalty]);
                tables[vi].1.push(pi);
            }
        }
    });
    let frames: Vec<_> =
        views.iter().zip(tables).map(|(view, (res, masked))| frame_residuals(&view.id, res, masked)).collect();
    let mut warnings = Vec::new();
    for f in frames.iter().filter(|f| !f.masked.is_empty()) {
        warnings.push(format!("view {}: {} points behind the camera at the solution", f.id, f.masked.len()));
    }
    let camera = build(&x[..k])?;
    if let Projection::Ocam(o) = camera.projection() {
        if !o.is_monotone() {
            warnings.push(format!(
                "refined OCam polynomial is not strictly increasing on [0, {}]; unprojection is unavailable",
                o.rho_max()
            ));
        }
    }
    let view_poses = (0..views.len()).map(|v| RigidTransform::from_params(&x[k + 6 * v..k + 6 * v + 6])).collect();
    Ok(CalibrationResult {
        camera: Some(camera),
        extrinsics: None,
        view_poses,
        rms: overall_rms(&frames),
        frames,
        report,
        warnings,
    })
}

pub fn calibrate_intrinsics_pinhole(
    views: &[BoardObservation],
    width: u32,
    height: u32,
) -> Result<CalibrationResult, CalibError> {
    calibrate_intrinsics_pinhole_with(views, width, height, &LmConfig::default())
}

/// Closed-form initialization from homographies followed by joint LM over
/// `(fx, fy, cx, cy, k1, k2, k3, p1, p2)` and every view pose.
pub fn calibrate_intrinsics_pinhole_with(
    views: &[BoardObservation],
    width: u32,
    height: u32,
    config: &LmConfig,
) -> Result<CalibrationResult, CalibError> {
    validate_views(views)?;
    let homographies =
        views.iter().map(|v| estimate_homography(&v.board_points, &v.image_points)).collect::<Result<Vec<_>, _>>()?;
    let k0 = closed_form_intrinsics(&homographies, width, height)?;
    let camera0 = CameraModel::pinhole(width, height, k0)?;

    let mut x0 = k0.to_params().to_vec();
    for view in views {
        x0.extend(initial_pose(view, &camera0)?.to_params());
    }
    solve_board_problem(views, IntrinsicModel::Pinhole, &camera0, x0, config, |p| {
        let k = PinholeIntrinsics::from_params(p);
        k.validate()?;
        Ok(CameraModel::pinhole(width, height, k)?)
    })
}

pub fn refine_intrinsics_ocam(
    views: &[BoardObservation],
    width: u32,
    height: u32,
    initial: &OcamIntrinsics,
) -> Result<CalibrationResult, CalibError> {
    refine_intrinsics_ocam_with(views, width, height, initial, &LmConfig::default())
}

/// LM over `(a0..aN, cx, cy, α)` and every view pose, starting from caller-supplied
/// intrinsics. Poses are initialized by unprojecting with `initial`.
pub fn refine_intrinsics_ocam_with(
    views: &[BoardObservation],
    width: u32,
    height: u32,
    initial: &OcamIntrinsics,
    config: &LmConfig,
) -> Result<CalibrationResult, CalibError> {
    validate_views(views)?;
    let camera0 = CameraModel::ocam(width, height, initial.clone())?;
    let mut x0 = initial.to_params();
    for view in views {
        x0.extend(initial_pose(view, &camera0)?.to_params());
    }
    let rho_max = initial.rho_max();
    let model = IntrinsicModel::Ocam { coefficients: initial.poly().len() };
    solve_board_problem(views, model, &camera0, x0, config, |p| {
        Ok(CameraModel::ocam(width, height, OcamIntrinsics::from_params(p, rho_max)?)?)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic;

    #[test]
    fn two_views_is_degenerate() {
        let rig = synthetic::pinhole_rig();
        let views = synthetic::board_views(&rig.camera, &rig.board, &synthetic::intrinsic_board_poses(2), 0.0, 0);
        assert!(matches!(calibrate_intrinsics_pinhole(&views, 640, 480), Err(CalibError::DegenerateConfiguration(_))));
    }

    #[test]
    fn fronto_parallel_views_are_degenerate() {
        let rig = synthetic::pinhole_rig();
        let poses: Vec<_> = (0..4)
            .map(|i| RigidTransform::from_axis_angle(Vec3::zeros(), Vec3::new(-0.2 + 0.02 * i as f64, -0.15, 0.7)))
            .collect();
        let views = synthetic::board_views(&rig.camera, &rig.board, &poses, 0.0, 0);
        assert!(matches!(calibrate_intrinsics_pinhole(&views, 640, 480), Err(CalibError::DegenerateConfiguration(_))));
    }

    #[test]
    fn closed_form_is_exact_without_distortion() {
        let k = PinholeIntrinsics::new(400.0, 410.0, 330.0, 235.0, Default::default()).unwrap();
        let cam = CameraModel::pinhole(640, 480, k).unwrap();
        let rig = synthetic::pinhole_rig();
        let views = synthetic::board_views(&cam, &rig.board, &synthetic::intrinsic_board_poses(5), 0.0, 0);
        let hs: Vec<_> = views.iter().map(|v| estimate_homography(&v.board_points, &v.image_points).unwrap()).collect();
        let k0 = closed_form_intrinsics(&hs, 640, 480).unwrap();
        assert!((k0.fx - 400.0).abs() < 1e-6 && (k0.fy - 410.0).abs() < 1e-6);
        assert!((k0.cx - 330.0).abs() < 1e-6 && (k0.cy - 235.0).abs() < 1e-6);
    }
}
