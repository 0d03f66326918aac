use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use panosense::calib::{project_cloud, CornerObservationSet};
use panosense::geometry::Projection;
use panosense::occupancy::{read_cloud, write_labels, GridSpec, OccupancyGrid};
use panosense::raster::{read_raster, write_raster};
use panosense::signal::{jitter_stats, TimeSeries};
use panosense::{synthetic, CameraModel, RigidTransform, Vec3};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_panosense"))
}

fn run(args: &[&str], out: &Path) -> Output {
    bin().args(args).arg("--output").arg(out).arg("--deterministic").output().expect("binary runs")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn read(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new(extra: &[&str]) -> Self {
        let dir = TempDir::new().unwrap();
        let mut args = vec!["synth"];
        args.extend_from_slice(extra);
        let o = run(&args, dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        Self { dir }
    }

    fn path(&self, rel: &str) -> String {
        self.dir.path().join(rel).to_string_lossy().into_owned()
    }

    fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join("out").join(name)
    }
}

#[test]
fn pinhole_intrinsics_from_fixture_views() {
    let fx = Fixture::new(&[]);
    let o = run(&["calibrate-intrinsics", "--views", &fx.path("calib/pinhole_views.json")], &fx.out("k"));
    assert!(o.status.success());
    let truth = read(fx.path("truth/pinhole_camera.json"));
    let got = read(fx.out("k").join("camera.json"));
    for key in ["fx", "fy"] {
        let (g, t) = (got[key].as_f64().unwrap(), truth[key].as_f64().unwrap());
        assert!((g / t - 1.0).abs() < 0.01, "{key}: {g} vs {t}");
    }
    assert!(read(fx.out("k").join("intrinsics.json"))["rms"].as_f64().unwrap() < 1.0);
}

#[test]
fn missing_views_file_exits_1() {
    let dir = TempDir::new().unwrap();
    let o = run(&["calibrate-intrinsics", "--views", "does/not/exist.json"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exist.json"));
}

#[test]
fn two_views_exit_2() {
    let dir = TempDir::new().unwrap();
    let rig = synthetic::pinhole_rig();
    let views = synthetic::board_views(&rig.camera, &rig.board, &synthetic::intrinsic_board_poses(2), 0.0, 0);
    let file = dir.path().join("views.json");
    let doc = serde_json::json!({ "width": 640, "height": 480, "frames": views });
    std::fs::write(&file, doc.to_string()).unwrap();
    let o = run(&["calibrate-intrinsics", "--views", file.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn ocam_requires_init() {
    let fx = Fixture::new(&[]);
    let o =
        run(&["calibrate-intrinsics", "--model", "ocam", "--views", &fx.path("calib/ocam_views.json")], &fx.out("o"));
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn extrinsics_from_noise_free_fixture() {
    let fx = Fixture::new(&["--noise", "0"]);
    let o = run(
        &[
            "calibrate-extrinsics",
            "--corners",
            &fx.path("calib/corners_thermal.json"),
            "--camera",
            &fx.path("cameras/thermal.json"),
        ],
        &fx.out("e"),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let got: RigidTransform = serde_json::from_value(read(fx.out("e").join("transform.json"))).unwrap();
    let truth: RigidTransform = serde_json::from_value(read(fx.path("truth/extrinsics_thermal.json"))).unwrap();
    assert!(got.rotation_angle_to(&truth).to_degrees() < 0.01);
    assert!((got.translation() - truth.translation()).norm() < 1e-3);
    let table = std::fs::read_to_string(fx.out("e").join("residuals.csv")).unwrap();
    assert!(table.starts_with("frame,corner,du,dv,error,masked"));
    assert_eq!(table.lines().count(), 1 + 6 * 4);
}

#[test]
fn extrinsics_identity_fixture() {
    let dir = TempDir::new().unwrap();
    let cam = synthetic::thermal_camera();
    let obs = synthetic::corner_frames(&cam, &RigidTransform::identity(), &synthetic::whiteboard_poses(3), 0.0, 0);
    let corners = dir.path().join("corners.json");
    let camera = dir.path().join("camera.json");
    std::fs::write(&corners, serde_json::to_string(&obs).unwrap()).unwrap();
    std::fs::write(&camera, serde_json::to_string(&cam).unwrap()).unwrap();
    let o = run(
        &["calibrate-extrinsics", "--corners", corners.to_str().unwrap(), "--camera", camera.to_str().unwrap()],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout_json(&o)["rms"].as_f64().unwrap() < 1e-10);
}

#[test]
fn three_correspondences_exit_2() {
    let dir = TempDir::new().unwrap();
    let cam = synthetic::thermal_camera();
    let mut obs = synthetic::corner_frames(&cam, &RigidTransform::identity(), &synthetic::whiteboard_poses(1), 0.0, 0);
    obs.frames[0].image_corners.truncate(3);
    obs.frames[0].lidar_corners.truncate(3);
    let corners = dir.path().join("corners.json");
    let camera = dir.path().join("camera.json");
    std::fs::write(&corners, serde_json::to_string(&obs).unwrap()).unwrap();
    std::fs::write(&camera, serde_json::to_string(&cam).unwrap()).unwrap();
    let o = run(
        &["calibrate-extrinsics", "--corners", corners.to_str().unwrap(), "--camera", camera.to_str().unwrap()],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn iteration_cap_exits_3_and_still_writes() {
    let fx = Fixture::new(&[]);
    let cfg = fx.dir.path().join("cfg.toml");
    std::fs::write(&cfg, "[lm]\nmax_iterations = 1\n").unwrap();
    let o = bin()
        .args([
            "--config",
            cfg.to_str().unwrap(),
            "calibrate-intrinsics",
            "--views",
            &fx.path("calib/pinhole_views.json"),
        ])
        .arg("--output")
        .arg(fx.out("k"))
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(fx.out("k").join("camera.json").exists());
}

#[test]
fn unknown_flags_and_config_keys_rejected() {
    let dir = TempDir::new().unwrap();
    let o = bin().args(["align", "--manifest", "m.json", "--frobnicate"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "sed = 3\n").unwrap();
    let o = bin().args(["--config", cfg.to_str().unwrap(), "align", "--manifest", "m.json"]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
}

fn write_pinhole_scene(dir: &Path) -> (PathBuf, PathBuf, PathBuf, CameraModel) {
    let cam = synthetic::thermal_camera();
    let cloud = dir.join("cloud.txt");
    std::fs::write(&cloud, "0 0 5\n0 0 -5\n1 0.5 4\n100 0 1\n").unwrap();
    let camera = dir.join("camera.json");
    std::fs::write(&camera, serde_json::to_string(&cam).unwrap()).unwrap();
    let ext = dir.join("identity.json");
    std::fs::write(&ext, serde_json::to_string(&RigidTransform::identity()).unwrap()).unwrap();
    (cloud, camera, ext, cam)
}

#[test]
fn project_axis_point_lands_on_principal_point() {
    let dir = TempDir::new().unwrap();
    let (cloud, camera, ext, cam) = write_pinhole_scene(dir.path());
    let o = run(
        &[
            "project",
            "--cloud",
            cloud.to_str().unwrap(),
            "--camera",
            camera.to_str().unwrap(),
            "--extrinsics",
            ext.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(o.status.success());
    let overlay = read(dir.path().join("overlay.json"));
    let Projection::Pinhole(k) = cam.projection() else { unreachable!() };
    let first = &overlay["points"][0];
    assert_eq!(first["index"], 0);
    assert_eq!(first["pixel"][0].as_f64().unwrap(), k.cx);
    assert_eq!(first["pixel"][1].as_f64().unwrap(), k.cy);
    assert_eq!(overlay["behind_camera"], 1);
    assert_eq!(overlay["outside_image"], 1);
}

#[test]
fn project_matches_library() {
    let fx = Fixture::new(&[]);
    let o = run(
        &[
            "project",
            "--cloud",
            &fx.path("lidar/frame_002.bin"),
            "--camera",
            &fx.path("cameras/pal.json"),
            "--extrinsics",
            &fx.path("truth/extrinsics_pal.json"),
        ],
        &fx.out("p"),
    );
    assert!(o.status.success());
    let cloud = read_cloud(Path::new(&fx.path("lidar/frame_002.bin"))).unwrap();
    let cam: CameraModel = serde_json::from_value(read(fx.path("cameras/pal.json"))).unwrap();
    let t: RigidTransform = serde_json::from_value(read(fx.path("truth/extrinsics_pal.json"))).unwrap();
    let expected = serde_json::to_value(project_cloud(&cloud.positions, &t, &cam)).unwrap();
    assert_eq!(read(fx.out("p").join("overlay.json"))["points"], expected);
}

fn polarization_case(dir: &Path, vals: [f64; 4]) -> (f64, f64) {
    let names = ["i0", "i45", "i90", "i135"];
    let mut args = vec!["polarization".to_string()];
    for (n, v) in names.iter().zip(vals) {
        let p = dir.join(format!("{n}.f32"));
        write_raster(&p, &Array2::from_elem((2, 3), v)).unwrap();
        args.push(format!("--{n}"));
        args.push(p.to_string_lossy().into_owned());
    }
    let out = dir.join("out");
    let o = run(&args.iter().map(String::as_str).collect::<Vec<_>>(), &out);
    assert!(o.status.success());
    (read_raster(&out.join("dolp.f32")).unwrap()[[1, 2]], read_raster(&out.join("aolp.f32")).unwrap()[[1, 2]])
}

#[test]
fn polarization_examples_through_files() {
    let dir = TempDir::new().unwrap();
    // rasters are float32, so compare at single precision
    let (d, a) = polarization_case(dir.path(), [1.0, 1.0, 1.0, 1.0]);
    assert_eq!((d, a), (0.0, 0.0));
    let (d, a) = polarization_case(dir.path(), [1.0, 0.5, 0.0, 0.5]);
    assert!((d - 1.0).abs() < 1e-7 && a.abs() < 1e-7);
    let (d, a) = polarization_case(dir.path(), [0.5, 1.0, 0.5, 0.0]);
    assert!((d - 1.0).abs() < 1e-7 && (a - std::f64::consts::FRAC_PI_4).abs() < 1e-7);
}

#[test]
fn polarization_size_mismatch_exits_1() {
    let dir = TempDir::new().unwrap();
    let mut args = vec!["polarization".to_string()];
    for (i, n) in ["i0", "i45", "i90", "i135"].iter().enumerate() {
        let p = dir.path().join(format!("{n}.f32"));
        write_raster(&p, &Array2::from_elem((2, 2 + i / 3), 1.0)).unwrap();
        args.push(format!("--{n}"));
        args.push(p.to_string_lossy().into_owned());
    }
    let o = run(&args.iter().map(String::as_str).collect::<Vec<_>>(), dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn eval_miou_identical_grids() {
    let dir = TempDir::new().unwrap();
    let spec = GridSpec::new([0.0; 3], [3.2, 3.2, 1.6], 0.4).unwrap();
    let labels = ndarray::Array3::from_shape_fn((8, 8, 4), |(x, y, z)| ((x + 2 * y + 3 * z) % 13) as u8);
    let grid = OccupancyGrid::new(spec, labels).unwrap();
    let p = dir.path().join("g.occ");
    write_labels(&p, &grid).unwrap();
    let o = run(&["eval-miou", "--pred", p.to_str().unwrap(), "--gt", p.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    assert_eq!(stdout_json(&o)["miou"].as_f64(), Some(1.0));
}

#[test]
fn vjc_zero_bundle_is_bit_identical() {
    let fx = Fixture::new(&[]);
    let o = run(
        &["fusion", "vjc", "--input", &fx.path("fusion/lidar.f32"), "--weights", &fx.path("fusion/vjc_zero.wb")],
        &fx.out("v"),
    );
    assert!(o.status.success());
    assert_eq!(
        std::fs::read(fx.path("fusion/lidar.f32")).unwrap(),
        std::fs::read(fx.out("v").join("vjc.f32")).unwrap()
    );
}

#[test]
fn jitter_on_sine_matches_module() {
    let dir = TempDir::new().unwrap();
    let (rate, amp, freq) = (100.0, 0.4, 5.0);
    let samples: Vec<f64> =
        (0..1000).map(|i| 9.81 + amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate).sin()).collect();
    let mut csv = String::from("timestamp,ax,ay,az\n");
    for (i, v) in samples.iter().enumerate() {
        csv.push_str(&format!("{},0,0,{v:?}\n", i as f64 / rate));
    }
    let file = dir.path().join("imu.csv");
    std::fs::write(&file, csv).unwrap();
    let o = run(&["jitter", "--input", file.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    let stats = &stdout_json(&o)["stats"];
    let oracle = jitter_stats(&TimeSeries::new(samples, rate).unwrap()).unwrap();
    assert!((stats["rms"].as_f64().unwrap() - oracle.rms).abs() < 1e-12);
    assert!((stats["rms"].as_f64().unwrap() - amp / 2f64.sqrt()).abs() < 1e-6);
    assert!((stats["dominant_frequency"].as_f64().unwrap() - freq).abs() < 1e-9);
}

#[test]
fn align_reports_counts() {
    let fx = Fixture::new(&["--frames", "12"]);
    let o = run(&["align", "--manifest", &fx.path("manifest.json"), "--stride", "5"], &fx.out("a"));
    assert!(o.status.success());
    let s = stdout_json(&o);
    assert_eq!(s["aligned"], 12);
    assert_eq!(s["keyframes"], 3);
    let o = run(&["align", "--manifest", &fx.path("manifest.json"), "--tolerance", "0.01"], &fx.out("b"));
    assert_eq!(stdout_json(&o)["aligned"], 0);
}

#[test]
fn noisy_corner_file_is_a_valid_observation_set() {
    let fx = Fixture::new(&[]);
    let obs: CornerObservationSet = serde_json::from_value(read(fx.path("calib/corners_pal.json"))).unwrap();
    assert_eq!(obs.frames.len(), 6);
    let cam: CameraModel = serde_json::from_value(read(fx.path("cameras/pal.json"))).unwrap();
    assert!(obs.frames.iter().flat_map(|f| &f.image_corners).all(|p| cam.contains(p)));
    assert!(Vec3::from(obs.frames[0].lidar_corners[0]).norm() > 1.0);
}
