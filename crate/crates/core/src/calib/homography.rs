use nalgebra::{DMatrix, Matrix3, Vector3};

use super::{BoardObservation, CalibError};
use crate::geometry::{Pixel, RigidTransform, Vec3};

/// Relative singular-value threshold below which the DLT system is rank deficient.
const RANK_TOLERANCE: f64 = 1e-10;

/// Similarity that moves the centroid to the origin and the mean distance to √2.
fn normalizer(points: &[[f64; 2]]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let (mx, my) = points.iter().fold((0.0, 0.0), |(x, y), p| (x + p[0] / n, y + p[1] / n));
    let mean_dist = points.iter().map(|p| (p[0] - mx).hypot(p[1] - my)).sum::<f64>() / n;
    let s = if mean_dist > 0.0 { std::f64::consts::SQRT_2 / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * mx, 0.0, s, -s * my, 0.0, 0.0, 1.0)
}

fn apply(m: &Matrix3<f64>, p: [f64; 2]) -> [f64; 2] {
    let v = m * Vector3::new(p[0], p[1], 1.0);
    [v.x / v.z, v.y / v.z]
}

/// Normalized DLT homography mapping board-plane points to pixels, scaled to unit
/// Frobenius norm with a non-negative `H[2][2]`.
pub fn estimate_homography(board: &[[f64; 2]], image: &[Pixel]) -> Result<Matrix3<f64>, CalibError> {
    if board.len() != image.len() {
        return Err(CalibError::InvalidObservation("board/image point counts differ".into()));
    }
    if board.len() < 4 {
        return Err(CalibError::DegenerateConfiguration(format!(
            "homography needs at least 4 correspondences, got {}",
            board.len()
        )));
    }
    let pixels: Vec<[f64; 2]> = image.iter().map(|&p| p.into()).collect();
    let t_src = normalizer(board);
    let t_dst = normalizer(&pixels);

    let rows = (2 * board.len()).max(9);
    let mut a = DMatrix::zeros(rows, 9);
    for (k, (src, dst)) in board.iter().zip(&pixels).enumerate() {
        let [x, y] = apply(&t_src, *src);
        let [u, v] = apply(&t_dst, *dst);
        let r = 2 * k;
        a.row_mut(r).copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1).copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("requested V");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let largest = svd.singular_values[order[order.len() - 1]];
    let second_smallest = svd.singular_values[order[1]];
    if largest == 0.0 || second_smallest <= RANK_TOLERANCE * largest {
        return Err(CalibError::DegenerateConfiguration("homography system is rank deficient".into()));
    }
    let h = v_t.row(order[0]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let t_dst_inv =
        t_dst.try_inverse().ok_or_else(|| CalibError::DegenerateConfiguration("image points coincide".into()))?;
    let mut hm = t_dst_inv * hn * t_src;
    let norm = hm.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(CalibError::DegenerateConfiguration("degenerate homography".into()));
    }
    hm /= norm;
    if hm[(2, 2)] < 0.0 {
        hm = -hm;
    }
    Ok(hm)
}

pub fn estimate_homography_view(view: &BoardObservation) -> Result<Matrix3<f64>, CalibError> {
    estimate_homography(&view.board_points, &view.image_points)
}

/// Board-to-camera pose from a homography expressed in normalized image coordinates
/// (i.e. already premultiplied by `K⁻¹`). The board lies in its own `z = 0` plane.
pub fn decompose_homography(h: &Matrix3<f64>) -> Result<RigidTransform, CalibError> {
    let c1: Vec3 = h.column(0).into();
    let c2: Vec3 = h.column(1).into();
    let c3: Vec3 = h.column(2).into();
    let scale = 2.0 / (c1.norm() + c2.norm());
    if !scale.is_finite() {
        return Err(CalibError::DegenerateConfiguration("homography columns vanish".into()));
    }
    // the board must sit in front of the camera
    let scale = if c3.z < 0.0 { -scale } else { scale };
    let r1 = c1 * scale;
    let r2 = c2 * scale;
    let r3 = r1.cross(&r2);
    let t = c3 * scale;
    let approx = Matrix3::from_columns(&[r1, r2, r3]);
    let svd = approx.svd(true, true);
    let (u, v_t) = (svd.u.expect("U"), svd.v_t.expect("V"));
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    RigidTransform::new(r, t).map_err(CalibError::from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraModel, Distortion, PinholeIntrinsics};

    #[test]
    fn identity_correspondences() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.5, 0.3]];
        let px: Vec<Pixel> = pts.iter().map(|&p| Pixel::from(p)).collect();
        let h = estimate_homography(&pts, &px).unwrap();
        let expected = Matrix3::identity() / 3f64.sqrt();
        assert!((h - expected).amax() < 1e-12, "{h}");
    }

    #[test]
    fn three_points_is_degenerate() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]];
        let px: Vec<Pixel> = pts.iter().map(|&p| Pixel::from(p)).collect();
        assert!(matches!(estimate_homography(&pts, &px), Err(CalibError::DegenerateConfiguration(_))));
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0], [4.0, 0.0]];
        let px: Vec<Pixel> = pts.iter().map(|&p| Pixel::from(p)).collect();
        assert!(estimate_homography(&pts, &px).is_err());
    }

    #[test]
    fn synthetic_view_reprojects_exactly() {
        let k = PinholeIntrinsics::new(400.0, 420.0, 320.0, 240.0, Distortion::default()).unwrap();
        let cam = CameraModel::pinhole(640, 480, k).unwrap();
        let pose = RigidTransform::from_axis_angle(Vec3::new(0.3, -0.2, 0.1), Vec3::new(-0.1, 0.05, 0.8));
        let board: Vec<[f64; 2]> =
            (0..6).flat_map(|i| (0..5).map(move |j| [i as f64 * 0.05, j as f64 * 0.05])).collect();
        let pixels: Vec<Pixel> =
            board.iter().map(|b| cam.project(&pose.transform_point(&Vec3::new(b[0], b[1], 0.0))).unwrap()).collect();
        let h = estimate_homography(&board, &pixels).unwrap();
        assert!((h.norm() - 1.0).abs() < 1e-12);
        for (b, p) in board.iter().zip(&pixels) {
            let q = apply(&h, *b);
            assert!((q[0] - p.u).abs() < 1e-8 && (q[1] - p.v).abs() < 1e-8);
        }
        // decomposing K⁻¹H recovers the pose
        let kinv = Matrix3::new(1.0 / 400.0, 0.0, -320.0 / 400.0, 0.0, 1.0 / 420.0, -240.0 / 420.0, 0.0, 0.0, 1.0);
        let recovered = decompose_homography(&(kinv * h)).unwrap();
        assert!(recovered.rotation_angle_to(&pose) < 1e-9);
        assert!((recovered.translation() - pose.translation()).norm() < 1e-9);
    }
}
