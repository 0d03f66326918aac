//! Deterministic synthetic rigs and observations with known ground truth.
//!
//! Used by the test suites, the benchmarks and the CLI `synth` command. Every
//! generator is seeded, so the same arguments always give the same data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::calib::{BoardObservation, CornerFrame, CornerObservationSet};
use crate::geometry::{CameraModel, Distortion, OcamIntrinsics, PinholeIntrinsics, Pixel, RigidTransform, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Planar grid of `cols × rows` corners with the given spacing, centered on the origin.
pub fn checkerboard(cols: usize, rows: usize, square: f64) -> Vec<[f64; 2]> {
    let ox = 0.5 * (cols - 1) as f64 * square;
    let oy = 0.5 * (rows - 1) as f64 * square;
    (0..rows).flat_map(|r| (0..cols).map(move |c| [c as f64 * square - ox, r as f64 * square - oy])).collect()
}

pub struct PinholeRig {
    pub camera: CameraModel,
    pub board: Vec<[f64; 2]>,
}

/// 640×480 camera with `fx = fy = 400`, principal point (320, 240), `k1 = −0.1`,
/// observed through a 12×9 corner grid with 36 mm squares.
pub fn pinhole_rig() -> PinholeRig {
    let k = PinholeIntrinsics::new(400.0, 400.0, 320.0, 240.0, Distortion { k1: -0.1, ..Default::default() })
        .expect("valid intrinsics");
    PinholeRig { camera: CameraModel::pinhole(640, 480, k).expect("valid size"), board: checkerboard(12, 9, 0.036) }
}

/// Board-to-camera poses with varied tilt, roll, distance and lateral offset.
pub fn intrinsic_board_poses(n: usize) -> Vec<RigidTransform> {
    const TILT_X: [f64; 10] = [0.55, -0.55, 0.0, 0.05, 0.4, -0.4, 0.45, -0.45, 0.2, -0.2];
    const TILT_Y: [f64; 10] = [0.0, 0.05, 0.55, -0.55, 0.4, 0.4, -0.4, -0.4, -0.6, 0.6];
    const SHIFT_X: [f64; 10] = [-0.1, 0.1, 0.0, 0.05, -0.12, 0.12, -0.08, 0.08, 0.0, 0.0];
    const SHIFT_Y: [f64; 10] = [0.0, 0.02, -0.07, 0.07, 0.05, -0.05, -0.06, 0.06, 0.03, -0.03];
    (0..n)
        .map(|i| {
            let k = i % 10;
            let round = (i / 10) as f64;
            let roll = 0.1 * k as f64 - 0.45;
            let w = Vec3::new(TILT_X[k], TILT_Y[k], roll + 0.05 * round);
            let t = Vec3::new(SHIFT_X[k], SHIFT_Y[k], 0.5 + 0.02 * k as f64 + 0.05 * round);
            RigidTransform::from_axis_angle(w, t)
        })
        .collect()
}

fn noisy(rng: &mut ChaCha8Rng, p: Pixel, sigma: f64) -> Pixel {
    if sigma == 0.0 {
        return p;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Pixel::new(p.u + n.sample(rng), p.v + n.sample(rng))
}

/// Projects `board` under each pose and adds isotropic Gaussian pixel noise.
///
/// # Panics
/// If a board point falls behind the camera.
pub fn board_views(
    camera: &CameraModel,
    board: &[[f64; 2]],
    poses: &[RigidTransform],
    sigma: f64,
    seed: u64,
) -> Vec<BoardObservation> {
    let mut rng = rng(seed);
    poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let image_points = board
                .iter()
                .map(|b| {
                    let p = camera.project(&pose.transform_point(&Vec3::new(b[0], b[1], 0.0))).expect("in front");
                    noisy(&mut rng, p, sigma)
                })
                .collect();
            BoardObservation { id: format!("view_{i:02}"), board_points: board.to_vec(), image_points }
        })
        .collect()
}

/// 640×512 thermal-style pinhole camera with mild radial distortion.
pub fn thermal_camera() -> CameraModel {
    let k =
        PinholeIntrinsics::new(500.0, 500.0, 320.0, 256.0, Distortion { k1: -0.05, k2: 0.01, ..Default::default() })
            .expect("valid intrinsics");
    CameraModel::pinhole(640, 512, k).expect("valid size")
}

/// 1024×1024 OCam camera; `f(ρ) = 350ρ − 25ρ³` on `ρ ∈ [0, 2]`.
pub fn panoramic_intrinsics() -> OcamIntrinsics {
    OcamIntrinsics::new(vec![0.0, 350.0, 0.0, -25.0], 512.0, 510.0, 0.0005, 2.0).expect("monotone")
}

pub fn panoramic_camera() -> CameraModel {
    CameraModel::ocam(1024, 1024, panoramic_intrinsics()).expect("valid size")
}

/// Board poses spread around the panoramic field of view, each turned to face the camera.
pub fn ocam_board_poses(n: usize) -> Vec<RigidTransform> {
    (0..n)
        .map(|i| {
            let azimuth = i as f64 * 2.0 * std::f64::consts::PI / n as f64 + 0.3;
            let off_axis = 0.25 + 0.2 * (i % 3) as f64;
            let dist = 1.0 + 0.1 * (i % 4) as f64;
            let center = Vec3::new(
                dist * off_axis.sin() * azimuth.cos(),
                dist * off_axis.sin() * azimuth.sin(),
                dist * off_axis.cos(),
            );
            // rotate the board normal (+z) onto the viewing direction, then add some roll
            let dir = center.normalize();
            let axis = Vec3::z().cross(&dir);
            let angle = Vec3::z().dot(&dir).clamp(-1.0, 1.0).acos();
            let facing = if axis.norm() > 1e-12 { axis.normalize() * angle } else { Vec3::zeros() };
            let tilt =
                RigidTransform::from_axis_angle(Vec3::new(0.15 * (i % 2) as f64, -0.1, 0.2 * i as f64), Vec3::zeros());
            RigidTransform::from_axis_angle(facing, center).compose(&tilt)
        })
        .collect()
}

/// LiDAR-to-camera transform used as ground truth: a 10° rotation and a 0.2 m translation.
pub fn reference_extrinsics() -> RigidTransform {
    let axis = Vec3::new(1.0, 2.0, 3.0).normalize();
    let t = Vec3::new(0.6, -0.48, 0.64) * 0.2;
    RigidTransform::from_axis_angle(axis * 10f64.to_radians(), t)
}

/// Whiteboard corners in board coordinates (x right, y down), ordered TL, TR, BR, BL.
pub fn whiteboard_corners() -> [Vec3; 4] {
    let (hw, hh) = (0.5, 0.4);
    [Vec3::new(-hw, -hh, 0.0), Vec3::new(hw, -hh, 0.0), Vec3::new(hw, hh, 0.0), Vec3::new(-hw, hh, 0.0)]
}

/// Whiteboard-to-camera poses 2–3 m in front of a forward-looking camera.
pub fn whiteboard_poses(n: usize) -> Vec<RigidTransform> {
    const SHIFT: [(f64, f64); 6] = [(-0.6, -0.1), (0.5, 0.15), (0.0, 0.0), (0.7, -0.2), (-0.4, 0.25), (0.2, -0.3)];
    (0..n)
        .map(|i| {
            let k = i % SHIFT.len();
            let (sx, sy) = SHIFT[k];
            let w = Vec3::new(0.2 * ((k % 3) as f64 - 1.0), 0.25 * ((k % 2) as f64 * 2.0 - 1.0), 0.05 * k as f64);
            RigidTransform::from_axis_angle(w, Vec3::new(sx, sy, 2.0 + 0.2 * k as f64 + 0.1 * (i / 6) as f64))
        })
        .collect()
}

/// Whiteboard poses around a panoramic camera, turned to face it.
pub fn panoramic_whiteboard_poses(n: usize) -> Vec<RigidTransform> {
    (0..n)
        .map(|i| {
            let azimuth = 0.7 + i as f64 * 2.1;
            let off_axis = 0.6 + 0.15 * (i % 3) as f64;
            let dist = 2.5 + 0.3 * (i % 2) as f64;
            let center = Vec3::new(
                dist * off_axis.sin() * azimuth.cos(),
                dist * off_axis.sin() * azimuth.sin(),
                dist * off_axis.cos(),
            );
            let dir = center.normalize();
            let axis = Vec3::z().cross(&dir);
            let angle = Vec3::z().dot(&dir).acos();
            RigidTransform::from_axis_angle(axis.normalize() * angle, center)
        })
        .collect()
}

/// Corner annotations for a rig whose true LiDAR-to-camera transform is `lidar_to_camera`.
pub fn corner_frames(
    camera: &CameraModel,
    lidar_to_camera: &RigidTransform,
    board_poses: &[RigidTransform],
    sigma: f64,
    seed: u64,
) -> CornerObservationSet {
    let mut rng = rng(seed);
    let camera_to_lidar = lidar_to_camera.inverse();
    let frames = board_poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let cam_pts: Vec<Vec3> = whiteboard_corners().iter().map(|c| pose.transform_point(c)).collect();
            let image_corners =
                cam_pts.iter().map(|p| noisy(&mut rng, camera.project(p).expect("in front"), sigma)).collect();
            let lidar_corners = cam_pts
                .iter()
                .map(|p| {
                    let l = camera_to_lidar.transform_point(p);
                    [l.x, l.y, l.z]
                })
                .collect();
            CornerFrame { id: format!("frame_{i:03}"), image_corners, lidar_corners }
        })
        .collect();
    CornerObservationSet { frames }
}

/// Uniform random points in an axis-aligned box.
pub fn random_cloud(n: usize, lo: Vec3, hi: Vec3, seed: u64) -> Vec<Vec3> {
    let mut rng = rng(seed);
    (0..n)
        .map(|_| Vec3::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y), rng.random_range(lo.z..hi.z)))
        .collect()
}
