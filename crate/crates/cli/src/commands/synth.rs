//! Synthetic fixture dataset with known ground truth.
//!
//! Besides the annotation layout described in [`crate::dataset`], the output holds
//! inputs for every other command:
//!
//! ```text
//! calib/    pinhole_views.json, ocam_views.json, ocam_init.json, corners_<camera>.json
//! truth/    pinhole_camera.json, extrinsics_<camera>.json, corners_<camera>.json
//! polar/    i0.f32, i45.f32, i90.f32, i135.f32
//! occupancy/grid.json, gt.occ, pred.occ, scene.bin
//! imu/      imu.csv
//! fusion/   lidar.f32, pal.f32, thermal.f32, polar.f32, vjc_zero.wb, mipf.wb
//! ```

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::Cursor;

use image::{GrayImage, ImageFormat, Luma};
use ndarray::{Array2, Array3};
use panosense::calib::{BoardObservationFile, CornerObservationSet};
use panosense::dataio::{
    save_manifest, Lighting, Modality, Scene, SequenceManifest, Split, StreamEntry, StreamIndex, Timestamp,
};
use panosense::fusion::{MipfWeights, VjcWeights, DEFAULT_HEADS, DEFAULT_HIDDEN, DEFAULT_PROMPT_WIDTH};
use panosense::geometry::{OcamIntrinsics, Projection};
use panosense::occupancy::{write_cloud, write_labels, GridSpec, OccupancyGrid, PointCloud};
use panosense::raster::{write_atomic, write_raster};
use panosense::synthetic::{self, whiteboard_corners};
use panosense::{CameraModel, FeatureMap, Pixel, RigidTransform, Vec3};
use rand::Rng;
use serde_json::json;

use crate::{CliError, Ctx, Outcome};

#[derive(Debug, Clone, clap::Args)]
pub struct SynthArgs {
    /// Number of whiteboard frames in the annotation dataset.
    #[arg(long, default_value_t = 6)]
    pub frames: usize,
    /// Standard deviation of the pixel noise in the calibration corner files.
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
}

impl Default for SynthArgs {
    fn default() -> Self {
        Self { frames: 6, noise: 0.5 }
    }
}

const BASE_TIME_NS: i64 = 1_700_000_000_000_000_000;
const LIDAR_PERIOD_NS: i64 = 100_000_000;
const THERMAL_OFFSET_NS: i64 = 12_000_000;
const PAL_OFFSET_NS: i64 = -8_000_000;

/// Panoramic camera mounting: a small turn and shift relative to the thermal camera.
pub fn pal_extrinsics() -> RigidTransform {
    RigidTransform::from_axis_angle(Vec3::new(0.0, 0.05, 0.02), Vec3::new(0.05, 0.0, 0.0))
        .compose(&synthetic::reference_extrinsics())
}

pub fn synth(ctx: &Ctx, args: &SynthArgs) -> Result<Outcome, CliError> {
    if args.frames < 2 || !(args.noise >= 0.0 && args.noise.is_finite()) {
        return Err(CliError::input("synth needs at least 2 frames and a finite, non-negative noise level"));
    }
    let mut seeds = synthetic::rng(ctx.seed);
    let mut next_seed = move || seeds.random::<u64>();

    let thermal = synthetic::thermal_camera();
    let pal = synthetic::panoramic_camera();
    let t_thermal = synthetic::reference_extrinsics();
    let t_pal = pal_extrinsics();
    let poses = synthetic::whiteboard_poses(args.frames);
    // the same physical board, seen from the panoramic camera
    let pal_poses: Vec<RigidTransform> = poses.iter().map(|p| t_pal.compose(&t_thermal.inverse()).compose(p)).collect();
    let cams = [("thermal", &thermal, &t_thermal, &poses), ("pal", &pal, &t_pal, &pal_poses)];

    ctx.write_json("cameras/thermal.json", &thermal)?;
    ctx.write_json("cameras/pal.json", &pal)?;

    let frame_id = |i: usize| format!("frame_{i:03}");
    let mut clean: BTreeMap<&str, CornerObservationSet> = BTreeMap::new();
    for (name, cam, t, p) in cams {
        let exact = synthetic::corner_frames(cam, t, p, 0.0, 0);
        let noisy = synthetic::corner_frames(cam, t, p, args.noise, next_seed());
        ctx.write_json(&format!("truth/extrinsics_{name}.json"), t)?;
        let truth: BTreeMap<String, &Vec<Pixel>> =
            exact.frames.iter().enumerate().map(|(i, f)| (frame_id(i), &f.image_corners)).collect();
        ctx.write_json(&format!("truth/corners_{name}.json"), &truth)?;
        ctx.write_json(&format!("calib/corners_{name}.json"), &noisy)?;
        clean.insert(name, exact);
    }

    let mut lidar = Vec::new();
    let mut thermal_stream = Vec::new();
    let mut pal_stream = Vec::new();
    for (i, pose) in poses.iter().enumerate().take(args.frames) {
        let id = frame_id(i);
        let t = BASE_TIME_NS + i as i64 * LIDAR_PERIOD_NS;
        let lidar_path = format!("lidar/{id}.bin");
        let cloud = frame_cloud(pose, &t_thermal, next_seed());
        write_cloud(&ctx.out_path_with_sidecar(&lidar_path)?, &cloud)?;
        ctx.write_json(&format!("lidar_corners/{id}.json"), &clean["thermal"].frames[i].lidar_corners)?;
        lidar.push(StreamEntry { timestamp: Timestamp(t), path: lidar_path });

        for (name, cam, stream, offset) in [
            ("thermal", &thermal, &mut thermal_stream, THERMAL_OFFSET_NS),
            ("pal", &pal, &mut pal_stream, PAL_OFFSET_NS),
        ] {
            let path = format!("images/{name}/{id}.png");
            let corners = &clean[name].frames[i].image_corners;
            write_png(ctx, &path, &render_board(cam, corners, next_seed()))?;
            stream.push(StreamEntry { timestamp: Timestamp(t + offset), path });
        }
    }
    let manifest = SequenceManifest {
        sequence_id: "synth_0000".into(),
        scene: Scene::Campus,
        lighting: Lighting::Day,
        split: Split::Train,
        streams: [
            (Modality::Lidar, StreamIndex::new(Modality::Lidar, lidar)?),
            (Modality::Thermal, StreamIndex::new(Modality::Thermal, thermal_stream)?),
            (Modality::Pal, StreamIndex::new(Modality::Pal, pal_stream)?),
        ]
        .into(),
    };
    save_manifest(&ctx.out_path(crate::dataset::MANIFEST_FILE)?, &manifest)?;

    write_calibration_views(ctx, args.noise, &mut next_seed)?;
    write_polarization(ctx)?;
    write_occupancy(ctx, next_seed(), next_seed())?;
    write_imu(ctx, next_seed())?;
    write_fusion(ctx, &mut next_seed)?;

    Ok(Outcome::ok(json!({
        "command": "synth",
        "frames": args.frames,
        "noise": args.noise,
        "files": ctx.written().len(),
    })))
}

/// Board points, a ground plane and scattered clutter (some behind the camera), in the LiDAR frame.
fn frame_cloud(board_pose: &RigidTransform, lidar_to_camera: &RigidTransform, seed: u64) -> PointCloud {
    let mut rng = synthetic::rng(seed);
    let to_lidar = lidar_to_camera.inverse();
    let mut positions = Vec::new();
    let mut intensity = Vec::new();
    let c = whiteboard_corners();
    for _ in 0..600 {
        let p = Vec3::new(rng.random_range(c[0].x..c[1].x), rng.random_range(c[0].y..c[2].y), 0.0);
        positions.push(to_lidar.transform_point(&board_pose.transform_point(&p)));
        intensity.push(0.8);
    }
    for _ in 0..1500 {
        let p = Vec3::new(rng.random_range(-4.0..4.0), 1.2, rng.random_range(0.5..8.0));
        positions.push(to_lidar.transform_point(&p));
        intensity.push(0.3);
    }
    for _ in 0..300 {
        let p = Vec3::new(rng.random_range(-5.0..5.0), rng.random_range(-2.0..1.2), rng.random_range(-4.0..8.0));
        positions.push(to_lidar.transform_point(&p));
        intensity.push(rng.random_range(0.0..1.0));
    }
    PointCloud { positions, intensity: Some(intensity), features: None }
}

/// Dark gradient background with the board quad filled in bright, plus pixel noise.
fn render_board(camera: &CameraModel, corners: &[Pixel], seed: u64) -> GrayImage {
    let mut rng = synthetic::rng(seed);
    let (w, h) = (camera.width(), camera.height());
    GrayImage::from_fn(w, h, |x, y| {
        let p = Pixel::new(x as f64 + 0.5, y as f64 + 0.5);
        let inside = (0..4).all(|k| {
            let (a, b) = (corners[k], corners[(k + 1) % 4]);
            (b.u - a.u) * (p.v - a.v) - (b.v - a.v) * (p.u - a.u) >= 0.0
        });
        let base = if inside { 200.0 } else { 40.0 + 40.0 * y as f64 / h as f64 };
        Luma([(base + rng.random_range(-6.0..6.0)).round().clamp(0.0, 255.0) as u8])
    })
}

fn write_png(ctx: &Ctx, name: &str, img: &GrayImage) -> Result<(), CliError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png).map_err(|e| CliError::input(format!("{name}: {e}")))?;
    Ok(write_atomic(&ctx.out_path(name)?, buf.get_ref())?)
}

fn write_calibration_views(ctx: &Ctx, noise: f64, next_seed: &mut impl FnMut() -> u64) -> Result<(), CliError> {
    let rig = synthetic::pinhole_rig();
    let views =
        synthetic::board_views(&rig.camera, &rig.board, &synthetic::intrinsic_board_poses(10), noise, next_seed());
    ctx.write_json("truth/pinhole_camera.json", &rig.camera)?;
    ctx.write_json("calib/pinhole_views.json", &BoardObservationFile { width: 640, height: 480, frames: views })?;

    let pal = synthetic::panoramic_camera();
    let board = synthetic::checkerboard(9, 7, 0.08);
    let views = synthetic::board_views(&pal, &board, &synthetic::ocam_board_poses(8), noise, next_seed());
    ctx.write_json("calib/ocam_views.json", &BoardObservationFile { width: 1024, height: 1024, frames: views })?;
    let Projection::Ocam(truth) = pal.projection() else { unreachable!("panoramic camera is ocam") };
    let poly = truth.poly().iter().enumerate().map(|(i, a)| a * if i % 2 == 0 { 1.02 } else { 0.98 }).collect();
    let init = OcamIntrinsics::new(poly, truth.cx() + 3.0, truth.cy() - 2.0, truth.alpha(), truth.rho_max())?;
    ctx.write_json("calib/ocam_init.json", &CameraModel::ocam(1024, 1024, init)?)?;
    Ok(())
}

/// 64×48 capture: DoLP rising left to right, AoLP sweeping top to bottom, and an unlit 4×4 corner.
fn write_polarization(ctx: &Ctx) -> Result<(), CliError> {
    let (h, w) = (48, 64);
    let mut channels = [Array2::zeros((h, w)), Array2::zeros((h, w)), Array2::zeros((h, w)), Array2::zeros((h, w))];
    for r in 0..h {
        for c in 0..w {
            if r < 4 && c < 4 {
                continue;
            }
            let s0 = 200.0 + c as f64;
            let dolp = 0.9 * c as f64 / (w - 1) as f64;
            let angle = -PI / 2.0 + PI * (r as f64 + 0.5) / h as f64;
            let (s1, s2) = (dolp * s0 * (2.0 * angle).cos(), dolp * s0 * (2.0 * angle).sin());
            let vals = [(s0 + s1) / 2.0, (s0 + s2) / 2.0, (s0 - s1) / 2.0, (s0 - s2) / 2.0];
            for (ch, v) in channels.iter_mut().zip(vals) {
                ch[[r, c]] = v;
            }
        }
    }
    for (name, ch) in ["i0", "i45", "i90", "i135"].iter().zip(&channels) {
        write_raster(&ctx.out_path_with_sidecar(&format!("polar/{name}.f32"))?, ch)?;
    }
    Ok(())
}

/// Ground-truth grid with a ground layer and random boxes, a prediction with 5% label
/// noise, and a cloud sampled from the occupied voxels (one voxel far above the cap).
fn write_occupancy(ctx: &Ctx, grid_seed: u64, cloud_seed: u64) -> Result<(), CliError> {
    let spec = GridSpec::default();
    let [nx, ny, nz] = spec.dims();
    let mut rng = synthetic::rng(grid_seed);
    let mut gt = Array3::<u8>::zeros((nx, ny, nz));
    gt.slice_mut(ndarray::s![.., .., 0..2]).fill(1);
    for _ in 0..25 {
        let class = rng.random_range(2..=12u8);
        let (x0, y0) = (rng.random_range(0..nx - 8), rng.random_range(0..ny - 8));
        let (sx, sy, sz) = (rng.random_range(2..8), rng.random_range(2..8), rng.random_range(1..8));
        gt.slice_mut(ndarray::s![x0..x0 + sx, y0..y0 + sy, 2..2 + sz]).fill(class);
    }
    let mut pred = gt.clone();
    for (g, p) in gt.iter_mut().zip(pred.iter_mut()) {
        if rng.random_bool(0.05) {
            *p = rng.random_range(0..=12u8);
        }
        if rng.random_bool(0.01) {
            *g = 255;
        }
    }
    ctx.write_json("occupancy/grid.json", &spec)?;
    write_labels(&ctx.out_path("occupancy/gt.occ")?, &OccupancyGrid::new(spec, gt.clone())?)?;
    write_labels(&ctx.out_path("occupancy/pred.occ")?, &OccupancyGrid::new(spec, pred)?)?;

    let mut rng = synthetic::rng(cloud_seed);
    let v = spec.voxel_size();
    let mut positions = Vec::new();
    for ((x, y, z), &label) in gt.indexed_iter() {
        if label == 0 || label == 255 {
            continue;
        }
        let c = spec.voxel_center([x, y, z]);
        for _ in 0..rng.random_range(0..3) {
            positions.push(
                c + Vec3::new(
                    rng.random_range(-0.45..0.45),
                    rng.random_range(-0.45..0.45),
                    rng.random_range(-0.45..0.45),
                ) * v,
            );
        }
    }
    let dense = spec.voxel_center([10, 10, 1]);
    positions.extend((0..25).map(|k| dense + Vec3::new(0.01 * k as f64, -0.005 * k as f64, 0.0)));
    positions.extend((0..100).map(|k| Vec3::new(20.0 + k as f64 * 0.1, 0.0, 0.0)));
    write_cloud(&ctx.out_path_with_sidecar("occupancy/scene.bin")?, &PointCloud::from_positions(positions))?;
    Ok(())
}

/// 200 Hz for 10 s: gravity plus a 2.5 Hz gait oscillation on the vertical axis.
fn write_imu(ctx: &Ctx, seed: u64) -> Result<(), CliError> {
    use rand_distr::{Distribution, Normal};
    let mut rng = synthetic::rng(seed);
    let noise = Normal::new(0.0, 0.02).expect("finite");
    let mut text = String::from("timestamp,ax,ay,az\n");
    for i in 0..2000 {
        let t = i as f64 / 200.0;
        let az = 9.81 + 0.35 * (2.0 * PI * 2.5 * t).sin() + noise.sample(&mut rng);
        let (ax, ay) = (noise.sample(&mut rng), noise.sample(&mut rng));
        text.push_str(&format!("{t:.6},{ax:.6},{ay:.6},{az:.6}\n"));
    }
    Ok(write_atomic(&ctx.out_path("imu/imu.csv")?, text.as_bytes())?)
}

fn write_fusion(ctx: &Ctx, next_seed: &mut impl FnMut() -> u64) -> Result<(), CliError> {
    let lidar = FeatureMap::random((16, 32, 32), next_seed());
    lidar.save(&ctx.out_path_with_sidecar("fusion/lidar.f32")?)?;
    for name in ["pal", "thermal", "polar"] {
        FeatureMap::random((8, 32, 32), next_seed())
            .save(&ctx.out_path_with_sidecar(&format!("fusion/{name}.f32"))?)?;
    }
    VjcWeights::zeros(16, DEFAULT_HIDDEN).to_bundle().save(&ctx.out_path("fusion/vjc_zero.wb")?)?;
    MipfWeights::random(16, [8; 3], 32, DEFAULT_PROMPT_WIDTH, DEFAULT_HEADS, next_seed())
        .to_bundle()
        .save(&ctx.out_path("fusion/mipf.wb")?)?;
    Ok(())
}
