//! Quantitative acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Run with `cargo test -p panosense-cli --test acceptance`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, Array3, Array4};
use panosense::calib::{calibrate_extrinsics, calibrate_intrinsics_pinhole};
use panosense::dataio::{align_streams, Modality, StreamIndex, Timestamp};
use panosense::fusion::{
    cross_entropy, lovasz_softmax, mipf_forward, vjc_forward, FeatureMap, Linear, MipfInputs, MipfWeights, PromptMlp,
    VjcWeights,
};
use panosense::geometry::{Distortion, PinholeIntrinsics, Projection};
use panosense::occupancy::{confusion, default_class_set, miou, voxelize, GridSpec, OccupancyGrid, PointCloud};
use panosense::optim::{levenberg_marquardt, FnProblem, LmConfig};
use panosense::polarization::{polarization_maps, stokes_from_capture, PolarizationCapture, DEFAULT_EPSILON};
use panosense::signal::{detrend_mean, jitter_stats, TimeSeries};
use panosense::{synthetic, CameraModel, RigidTransform, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;
type Snapshot = BTreeMap<PathBuf, Vec<u8>>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn extrinsic_recovery() -> Check {
    let start = Instant::now();
    let cam = synthetic::thermal_camera();
    let truth = synthetic::reference_extrinsics();
    let poses = synthetic::whiteboard_poses(3);

    let obs = synthetic::corner_frames(&cam, &truth, &poses, 0.0, 0);
    ensure!(obs.correspondence_count() == 12, "expected 12 correspondences");
    let res = calibrate_extrinsics(&obs, &cam, &RigidTransform::identity()).map_err(|e| e.to_string())?;
    let t = res.extrinsics.ok_or("no transform")?;
    let rot = t.rotation_angle_to(&truth).to_degrees();
    let trans = (t.translation() - truth.translation()).norm();
    ensure!(rot < 0.01, "noise-free rotation error {rot}°");
    ensure!(trans < 1e-3, "noise-free translation error {trans} m");
    ensure!(res.rms < 1e-8, "noise-free rms {}", res.rms);

    let (mut rots, mut transs, mut rmss) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..20 {
        let obs = synthetic::corner_frames(&cam, &truth, &poses, 0.5, seed);
        let res = calibrate_extrinsics(&obs, &cam, &RigidTransform::identity()).map_err(|e| e.to_string())?;
        let t = res.extrinsics.ok_or("no transform")?;
        rots.push(t.rotation_angle_to(&truth).to_degrees());
        transs.push((t.translation() - truth.translation()).norm());
        rmss.push(res.rms);
    }
    let elapsed = start.elapsed();
    let (mr, mt) = (median(rots), median(transs));
    ensure!(mr < 0.3, "median rotation error {mr}°");
    ensure!(mt < 0.02, "median translation error {mt} m");
    let (lo, hi) = rmss.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
    ensure!(lo >= 0.25 && hi <= 0.75, "rms range [{lo}, {hi}]");
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "noise-free {rot:.2e}° {:.2e} m rms {:.1e}; σ=0.5 median {mr:.3}° {:.1} mm, rms [{lo:.2}, {hi:.2}]; {} ms",
        trans,
        res.rms,
        mt * 1e3,
        elapsed.as_millis()
    ))
}

fn pinhole_intrinsic_recovery() -> Check {
    let start = Instant::now();
    let rig = synthetic::pinhole_rig();
    let Projection::Pinhole(k) = rig.camera.projection() else { return Err("rig is not pinhole".into()) };
    let (w, h) = (rig.camera.width(), rig.camera.height());
    let poses = synthetic::intrinsic_board_poses(10);
    let mut errs: [Vec<f64>; 4] = Default::default();
    for seed in 0..20 {
        let views = synthetic::board_views(&rig.camera, &rig.board, &poses, 0.5, seed);
        let res = calibrate_intrinsics_pinhole(&views, w, h).map_err(|e| e.to_string())?;
        let Some(Projection::Pinhole(got)) = res.camera.as_ref().map(CameraModel::projection) else {
            return Err("no pinhole camera in result".into());
        };
        errs[0].push((got.fx / k.fx - 1.0).abs());
        errs[1].push((got.fy / k.fy - 1.0).abs());
        errs[2].push((got.cx - k.cx).hypot(got.cy - k.cy));
        errs[3].push((got.distortion.k1 / k.distortion.k1 - 1.0).abs());
    }
    let elapsed = start.elapsed();
    let [fx, fy, pp, k1] = errs.map(median);
    ensure!(fx < 0.01 && fy < 0.01, "median focal error fx {fx} fy {fy}");
    ensure!(pp < 2.0, "median principal point error {pp} px");
    ensure!(k1 < 0.2, "median k1 relative error {k1}");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "median fx {:.3}% fy {:.3}% pp {pp:.2} px k1 {:.1}%; {} ms",
        fx * 100.0,
        fy * 100.0,
        k1 * 100.0,
        elapsed.as_millis()
    ))
}

fn lm_solver() -> Check {
    let rosenbrock = FnProblem::new(2, 2, |x: &[f64], r: &mut [f64]| {
        r[0] = 10.0 * (x[1] - x[0] * x[0]);
        r[1] = 1.0 - x[0];
    });
    let config = LmConfig { max_iterations: 100, ..LmConfig::default() };
    let rep = levenberg_marquardt(&rosenbrock, &[-1.2, 1.0], &config).map_err(|e| e.to_string())?;
    ensure!(rep.cost < 1e-12, "rosenbrock cost {}", rep.cost);
    ensure!(rep.iterations <= 100, "rosenbrock took {} iterations", rep.iterations);

    let mut r = rng(11);
    for case in 0..100 {
        // y = a·exp(b·t) + c·sin(d·t), fitted from a perturbed start
        let truth =
            [r.random_range(0.5..2.0), r.random_range(-1.0..0.5), r.random_range(-1.0..1.0), r.random_range(0.5..3.0)];
        let ts: Vec<f64> = (0..25).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = ts
            .iter()
            .map(|&t| truth[0] * (truth[1] * t).exp() + truth[2] * (truth[3] * t).sin() + r.random_range(-0.05..0.05))
            .collect();
        let start: Vec<f64> = truth.iter().map(|v| v + r.random_range(-0.3..0.3)).collect();
        let p = FnProblem::new(4, ts.len(), |x: &[f64], out: &mut [f64]| {
            for (i, (&t, &y)) in ts.iter().zip(&ys).enumerate() {
                out[i] = x[0] * (x[1] * t).exp() + x[2] * (x[3] * t).sin() - y;
            }
        });
        let rep = levenberg_marquardt(&p, &start, &LmConfig::default()).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(rep.cost_trace.last() == Some(&rep.cost), "case {case}: trace does not end at the final cost");
        if let Some(i) = rep.cost_trace.windows(2).position(|w| w[1] > w[0]) {
            return Err(format!("case {case}: cost rose at accepted step {i}: {:?}", &rep.cost_trace[i..i + 2]));
        }
    }
    Ok(format!("rosenbrock cost {:.1e} in {} iterations; 100 fuzzed traces monotone", rep.cost, rep.iterations))
}

fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

fn projection_round_trip() -> Check {
    let cam = synthetic::panoramic_camera();
    let intr = synthetic::panoramic_intrinsics();
    let mut r = rng(21);
    let (mut rays, mut worst) = (0, 0.0f64);
    let mut attempts = 0;
    while rays < 1000 {
        attempts += 1;
        ensure!(attempts < 100_000, "could not sample in-view rays");
        let ray = Vec3::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
        // field of view: elevation ratio within the polynomial's working range
        if ray.z <= 1e-3 || ray.x.hypot(ray.y) / ray.z > intr.rho_max() {
            continue;
        }
        let px = cam.project(&ray).map_err(|e| format!("project {ray:?}: {e}"))?;
        let back = cam.unproject(&px).map_err(|e| format!("unproject {px:?}: {e}"))?;
        worst = worst.max(angle_between(&ray, &back));
        rays += 1;
    }
    ensure!(worst < 1e-6, "worst angular error {worst} rad");

    let plain = PinholeIntrinsics::new(100.0, 100.0, 50.0, 50.0, Distortion::default()).map_err(|e| e.to_string())?;
    let radial = PinholeIntrinsics::new(100.0, 100.0, 50.0, 50.0, Distortion { k1: 0.1, ..Default::default() })
        .map_err(|e| e.to_string())?;
    for (k, p, want) in [
        (&plain, Vec3::new(0.0, 0.0, 2.0), (50.0, 50.0)),
        (&plain, Vec3::new(1.0, 0.0, 2.0), (100.0, 50.0)),
        // x = 0.5, x_d = 0.5·(1 + 0.1·0.25) = 0.5125
        (&radial, Vec3::new(1.0, 0.0, 2.0), (101.25, 50.0)),
    ] {
        let px = k.project(&p).map_err(|e| e.to_string())?;
        ensure!((px.u - want.0).abs() < 1e-10 && (px.v - want.1).abs() < 1e-10, "{p:?} → {px:?}, want {want:?}");
    }
    Ok(format!("worst ocam round-trip error {worst:.1e} rad over 1000 rays; distortion example exact"))
}

fn polarization() -> Check {
    let cases = [
        ([1.0, 1.0, 1.0, 1.0], [2.0, 0.0, 0.0], 0.0, 0.0),
        ([1.0, 0.5, 0.0, 0.5], [1.0, 1.0, 0.0], 1.0, 0.0),
        ([0.5, 1.0, 0.5, 0.0], [1.0, 0.0, 1.0], 1.0, FRAC_PI_4),
    ];
    for (i, (iv, s, dolp, aolp)) in cases.iter().enumerate() {
        let cap = PolarizationCapture::uniform((2, 3), iv[0], iv[1], iv[2], iv[3]).map_err(|e| e.to_string())?;
        let st = stokes_from_capture(&cap);
        let maps = polarization_maps(&st, DEFAULT_EPSILON);
        for px in [[0, 0], [1, 2]] {
            let got = [st.s0[px], st.s1[px], st.s2[px]];
            ensure!(got.iter().zip(s).all(|(a, b)| (a - b).abs() < 1e-12), "example {i}: stokes {got:?}");
            ensure!((maps.dolp[px] - dolp).abs() < 1e-12, "example {i}: dolp {}", maps.dolp[px]);
            ensure!((maps.aolp[px] - aolp).abs() < 1e-12, "example {i}: aolp {}", maps.aolp[px]);
            ensure!(maps.valid[px], "example {i}: pixel marked invalid");
        }
    }

    let mut r = rng(31);
    let dim = (250, 400);
    let mut channel = || Array2::from_shape_simple_fn(dim, || r.random_range(0.01..1.0));
    let base = [channel(), channel(), channel(), channel()];
    let lambda = 37.25;
    let cap = PolarizationCapture::new(base[0].clone(), base[1].clone(), base[2].clone(), base[3].clone())
        .map_err(|e| e.to_string())?;
    let scaled = PolarizationCapture::new(&base[0] * lambda, &base[1] * lambda, &base[2] * lambda, &base[3] * lambda)
        .map_err(|e| e.to_string())?;
    let a = polarization_maps(&stokes_from_capture(&cap), DEFAULT_EPSILON);
    let b = polarization_maps(&stokes_from_capture(&scaled), DEFAULT_EPSILON);
    ensure!(a.valid_count() == dim.0 * dim.1 && b.valid_count() == dim.0 * dim.1, "fuzzed pixels masked invalid");
    ensure!(a.dolp.iter().chain(b.dolp.iter()).all(|d| (0.0..=1.0).contains(d)), "DoLP outside [0, 1]");
    let mut worst = 0.0f64;
    for ((da, db), (aa, ab)) in a.dolp.iter().zip(&b.dolp).zip(a.aolp.iter().zip(&b.aolp)) {
        let dang = (aa - ab).abs();
        worst = worst.max((da - db).abs()).max(dang.min(PI - dang));
    }
    ensure!(worst < 1e-12, "scale changed DoLP/AoLP by {worst}");
    Ok(format!("3 examples exact; 1e5 fuzzed pixels in range, scale deviation {worst:.1e} ({} clamped)", a.clamped))
}

fn random_grid(spec: &GridSpec, r: &mut ChaCha8Rng) -> OccupancyGrid {
    let [x, y, z] = spec.dims();
    let labels =
        Array3::from_shape_simple_fn((x, y, z), || if r.random_bool(0.05) { 255 } else { r.random_range(0..=12) });
    OccupancyGrid::new(*spec, labels).expect("dims match")
}

fn occupancy_metrics() -> Check {
    let spec = GridSpec::new([0.0; 3], [3.2, 3.2, 1.6], 0.4).map_err(|e| e.to_string())?;
    ensure!(spec.dims() == [8, 8, 4], "grid dims {:?}", spec.dims());
    let classes = default_class_set();
    let mut r = rng(41);
    for case in 0..100 {
        let (pred, gt) = (random_grid(&spec, &mut r), random_grid(&spec, &mut r));
        let cm = confusion(&pred, &gt, 255).map_err(|e| e.to_string())?;
        let mut tally = vec![vec![0u64; 13]; 13];
        let mut total = 0;
        for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
            if g != 255 {
                tally[g as usize][if p == 255 { 0 } else { p as usize }] += 1;
                total += 1;
            }
        }
        ensure!(cm.counts == tally && cm.total == total, "case {case}: confusion differs from tally");
        let rep = miou(&cm, &classes).map_err(|e| e.to_string())?;
        let mut sum = 0.0;
        for &c in &classes {
            let (mut tp, mut fp, mut fnn) = (0u64, 0u64, 0u64);
            for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
                if g == 255 {
                    continue;
                }
                let p = if p == 255 { 0 } else { p };
                match (g == c, p == c) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fnn += 1,
                    _ => {}
                }
            }
            let denom = tp + fp + fnn;
            sum += if denom == 0 { 0.0 } else { tp as f64 / denom as f64 };
        }
        let oracle = sum / classes.len() as f64;
        ensure!((rep.miou - oracle).abs() < 1e-12, "case {case}: miou {} vs {oracle}", rep.miou);
    }

    let labels = Array3::from_shape_fn((8, 8, 4), |(x, y, z)| ((x * 32 + y * 4 + z) % 13) as u8);
    let perfect = OccupancyGrid::new(spec, labels).map_err(|e| e.to_string())?;
    let rep =
        miou(&confusion(&perfect, &perfect, 255).map_err(|e| e.to_string())?, &classes).map_err(|e| e.to_string())?;
    ensure!(rep.miou == 1.0, "perfect prediction miou {}", rep.miou);

    let vspec = GridSpec::new([-1.0, -1.0, 0.0], [1.0, 1.0, 1.0], 0.5).map_err(|e| e.to_string())?;
    for case in 0..100 {
        let n = r.random_range(50..400);
        let mut positions: Vec<Vec3> = (0..n)
            .map(|_| Vec3::new(r.random_range(-1.2..1.2), r.random_range(-1.2..1.2), r.random_range(-0.2..1.2)))
            .collect();
        // dense clusters so the cap matters
        let anchor = positions[0];
        positions.extend((0..15).map(|_| anchor + Vec3::new(1e-3, 0.0, 0.0) * r.random_range(0.0..1.0)));
        let features =
            (case % 2 == 1).then(|| positions.iter().map(|_| vec![r.random_range(-5.0..5.0); 2]).collect::<Vec<_>>());
        let cloud = PointCloud { positions: positions.clone(), intensity: None, features: features.clone() };
        let got = voxelize(&cloud, &vspec, 10).map_err(|e| e.to_string())?;

        let mut buckets: BTreeMap<[usize; 3], Vec<Vec<f64>>> = BTreeMap::new();
        for (i, p) in positions.iter().enumerate() {
            let idx = [(p.x + 1.0) / 0.5, (p.y + 1.0) / 0.5, p.z / 0.5].map(f64::floor);
            if idx.iter().zip([4.0, 4.0, 2.0]).any(|(v, d)| *v < 0.0 || *v >= d) {
                continue;
            }
            let f = features.as_ref().map_or_else(|| vec![p.x, p.y, p.z], |f| f[i].clone());
            buckets.entry(idx.map(|v| v as usize)).or_default().push(f);
        }
        ensure!(got.len() == buckets.len(), "case {case}: {} voxels vs {}", got.len(), buckets.len());
        for (idx, mut members) in buckets {
            members.truncate(10);
            let v = got.get(&idx).ok_or_else(|| format!("case {case}: voxel {idx:?} missing"))?;
            ensure!(v.count == members.len(), "case {case}: voxel {idx:?} count {} vs {}", v.count, members.len());
            for (a, m) in v.mean.iter().enumerate() {
                let want = members.iter().map(|f| f[a]).sum::<f64>() / members.len() as f64;
                ensure!(
                    (m - want).abs() <= 1e-12 * want.abs().max(1.0),
                    "case {case}: voxel {idx:?} mean {m} vs {want}"
                );
            }
        }
    }
    Ok("100 confusion/mIoU pairs match the tally; perfect mIoU = 1; 100 voxelized clouds match".into())
}

fn vjc() -> Check {
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let map = FeatureMap::random((8, 16, 16), 500 + seed);
        let (out, raw) = vjc_forward(&map, &VjcWeights::zeros(8, 16)).map_err(|e| e.to_string())?;
        ensure!(raw == 0.0, "zero weights predicted {raw}");
        ensure!(
            out.data().iter().zip(map.data()).all(|(a, b)| a.to_bits() == b.to_bits()),
            "zero offset changed the map"
        );
        for k in -3i32..=3 {
            let (out, raw) =
                vjc_forward(&map, &VjcWeights::constant_offset(8, 16, k as f64)).map_err(|e| e.to_string())?;
            ensure!(raw == k as f64, "constant offset {k} predicted {raw}");
            let (c, h, w) = map.dim();
            for ci in 0..c {
                for y in 0..h {
                    let src = (y as i32 + k).clamp(0, h as i32 - 1) as usize;
                    for x in 0..w {
                        worst = worst.max((out.data()[[ci, y, x]] - map.data()[[ci, src, x]]).abs());
                    }
                }
            }
        }
    }
    ensure!(worst <= 1e-6, "row-shift deviation {worst}");
    Ok(format!("zero offset bit-exact; shifts −3..3 deviate {worst:.1e} from the row-shift oracle"))
}

fn lin(weight: Array2<f64>, bias: Array1<f64>) -> Linear {
    Linear { weight, bias }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn mipf() -> Check {
    let inputs_for = |seed: u64, h: usize, w: usize| {
        (
            FeatureMap::random((6, h, w), seed),
            [
                FeatureMap::random((3, h, w), seed + 1),
                FeatureMap::random((2, h, w), seed + 2),
                FeatureMap::random((4, h, w), seed + 3),
            ],
        )
    };
    let (mut row_dev, mut ratio_lo, mut ratio_hi) = (0.0f64, f64::INFINITY, 0.0f64);
    for seed in 0..20 {
        let (lidar, images) = inputs_for(100 + 4 * seed, 5, 7);
        let weights = MipfWeights::random(6, [3, 2, 4], 16, 8, 4, seed);
        let out = mipf_forward(&MipfInputs { lidar: &lidar, images: [&images[0], &images[1], &images[2]] }, &weights)
            .map_err(|e| e.to_string())?;
        for lane in out.attention.lanes(ndarray::Axis(3)) {
            row_dev = row_dev.max((lane.sum() - 1.0).abs());
        }
        for (f, l) in out.fused.data().iter().zip(out.lidar_embedding.data()) {
            ensure!(
                f.abs() >= l.abs() && f.abs() <= 2.0 * l.abs(),
                "seed {seed}: |fused| = {f} vs |projected lidar| = {l}"
            );
            if l.abs() > 1e-12 {
                ratio_lo = ratio_lo.min(f / l);
                ratio_hi = ratio_hi.max(f / l);
            }
        }

        let mut saturated = weights.clone();
        saturated.gate = lin(Array2::zeros((16, 16)), Array1::from_elem(16, -20.0));
        let out = mipf_forward(&MipfInputs { lidar: &lidar, images: [&images[0], &images[1], &images[2]] }, &saturated)
            .map_err(|e| e.to_string())?;
        let diff = (out.fused.data() - out.lidar_embedding.data()).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let scale = out.lidar_embedding.max_abs();
        ensure!(diff <= 1e-6 * scale, "seed {seed}: saturated gate moved output by {diff} (scale {scale})");
    }
    ensure!(row_dev <= 1e-9, "attention rows deviate from 1 by {row_dev}");

    // one cell, D = 4, one head: evaluate every stage by hand
    let lidar_w = Array2::from_shape_vec((4, 2), vec![0.5, -0.25, 1.0, 0.0, -0.5, 0.75, 0.25, 0.25]).unwrap();
    let lidar_b = Array1::from(vec![0.1, 0.0, -0.1, 0.2]);
    let img_w = [vec![1.0, -1.0, 0.5, 0.25], vec![-0.5, 0.5, 1.0, 0.0], vec![0.25, 0.75, -0.25, 1.0]];
    let img_b = [vec![0.0, 0.1, 0.0, -0.1], vec![0.2, 0.0, 0.0, 0.0], vec![0.0, 0.0, 0.3, 0.0]];
    let hid_w = Array2::from_shape_vec((2, 4), vec![0.5, 0.25, -0.5, 1.0, -0.25, 0.5, 0.75, 0.0]).unwrap();
    let hid_b = Array1::from(vec![0.05, -0.05]);
    let out_w = Array2::from_shape_vec((4, 2), vec![1.0, 0.0, 0.0, 1.0, 0.5, -0.5, -1.0, 0.25]).unwrap();
    let out_b = Array1::from(vec![0.0, 0.1, 0.0, -0.1]);
    let key = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 1.0 } else { 0.1 * (i as f64 - j as f64) });
    let value = Array2::from_shape_fn((4, 4), |(i, j)| 0.2 * (i + j) as f64 - 0.3);
    let gate_w = Array2::from_shape_fn((4, 4), |(i, j)| if i == j { 0.5 } else { -0.1 });
    let gate_b = Array1::from(vec![0.0, 0.5, -0.5, 1.0]);
    let weights = MipfWeights {
        lidar_projection: lin(lidar_w.clone(), lidar_b.clone()),
        image_projections: [0, 1, 2]
            .map(|m| lin(Array2::from_shape_vec((4, 1), img_w[m].clone()).unwrap(), Array1::from(img_b[m].clone()))),
        prompts: [(); 3].map(|_| PromptMlp {
            hidden: lin(hid_w.clone(), hid_b.clone()),
            output: lin(out_w.clone(), out_b.clone()),
        }),
        key: key.clone(),
        value: value.clone(),
        gate: lin(gate_w.clone(), gate_b.clone()),
        heads: 1,
    };
    let lidar_in = [0.8, -0.6];
    let image_in = [1.5, -0.7, 0.4];
    let lidar = FeatureMap::new(Array3::from_shape_vec((2, 1, 1), lidar_in.to_vec()).unwrap()).unwrap();
    let images = image_in.map(|v| FeatureMap::new(Array3::from_elem((1, 1, 1), v)).unwrap());
    let out = mipf_forward(&MipfInputs { lidar: &lidar, images: [&images[0], &images[1], &images[2]] }, &weights)
        .map_err(|e| e.to_string())?;

    let q: Vec<f64> =
        (0..4).map(|i| lidar_w[[i, 0]] * lidar_in[0] + lidar_w[[i, 1]] * lidar_in[1] + lidar_b[i]).collect();
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for m in 0..3 {
        let pooled: Vec<f64> = (0..4).map(|i| img_w[m][i] * image_in[m] + img_b[m][i]).collect();
        let hidden: Vec<f64> =
            (0..2).map(|j| ((0..4).map(|i| hid_w[[j, i]] * pooled[i]).sum::<f64>() + hid_b[j]).max(0.0)).collect();
        let prompt: Vec<f64> =
            (0..4).map(|i| out_w[[i, 0]] * hidden[0] + out_w[[i, 1]] * hidden[1] + out_b[i]).collect();
        keys.push((0..4).map(|i| (0..4).map(|j| key[[i, j]] * prompt[j]).sum::<f64>()).collect::<Vec<_>>());
        values.push((0..4).map(|i| (0..4).map(|j| value[[i, j]] * prompt[j]).sum::<f64>()).collect::<Vec<_>>());
    }
    let scores: Vec<f64> = keys.iter().map(|k| (0..4).map(|i| q[i] * k[i]).sum::<f64>() / 2.0).collect();
    let z: f64 = scores.iter().map(|s| s.exp()).sum();
    let attn: Vec<f64> = scores.iter().map(|s| s.exp() / z).collect();
    let attended: Vec<f64> = (0..4).map(|i| (0..3).map(|m| attn[m] * values[m][i]).sum()).collect();
    let fused: Vec<f64> = (0..4)
        .map(|i| {
            let g = sigmoid((0..4).map(|j| gate_w[[i, j]] * attended[j]).sum::<f64>() + gate_b[i]);
            q[i] + g * q[i]
        })
        .collect();
    for (i, want) in fused.iter().enumerate() {
        let got = out.fused.data()[[i, 0, 0]];
        ensure!((got - want).abs() < 1e-10, "hand case channel {i}: {got} vs {want}");
    }
    for (m, want) in attn.iter().enumerate() {
        ensure!((out.attention[[0, 0, 0, m]] - want).abs() < 1e-10, "hand case attention {m}");
    }
    Ok(format!(
        "row sums within {row_dev:.1e}; saturated gate ok; hand case ok; fused/lidar ratio in [{ratio_lo:.3}, {ratio_hi:.3}]"
    ))
}

fn losses() -> Check {
    let spec = GridSpec::new([0.0; 3], [1.2, 1.6, 0.8], 0.4).map_err(|e| e.to_string())?;
    let [nx, ny, nz] = spec.dims();
    let classes = 4;
    let mut r = rng(61);
    let (mut worst_ce, mut worst_lv) = (0.0f64, 0.0f64);
    for case in 0..100 {
        let labels = Array3::from_shape_simple_fn((nx, ny, nz), || {
            if r.random_bool(0.1) {
                255
            } else {
                r.random_range(0..classes as u8)
            }
        });
        let grid = OccupancyGrid::new(spec, labels.clone()).map_err(|e| e.to_string())?;
        let logits = Array4::from_shape_simple_fn((nx, ny, nz, classes), || r.random_range(-4.0..4.0));

        let ce = cross_entropy(&logits, &grid, 255).map_err(|e| e.to_string())?;
        let (mut total, mut count) = (0.0, 0);
        for ((x, y, z), &l) in labels.indexed_iter() {
            if l == 255 {
                continue;
            }
            let denom: f64 = (0..classes).map(|k| logits[[x, y, z, k]].exp()).sum();
            total += -(logits[[x, y, z, l as usize]].exp() / denom).ln();
            count += 1;
        }
        let oracle = if count == 0 { 0.0 } else { total / count as f64 };
        worst_ce = worst_ce.max((ce - oracle).abs());
        ensure!((ce - oracle).abs() < 1e-10, "case {case}: cross entropy {ce} vs {oracle}");

        let pred = Array3::from_shape_simple_fn((nx, ny, nz), || r.random_range(0..classes));
        let probs =
            Array4::from_shape_fn((nx, ny, nz, classes), |(x, y, z, k)| f64::from(u8::from(pred[[x, y, z]] == k)));
        let lv = lovasz_softmax(&probs, &grid, 255).map_err(|e| e.to_string())?;
        let mut terms = Vec::new();
        for c in 0..classes {
            let (mut inter, mut union, mut present) = (0, 0, false);
            for ((x, y, z), &l) in labels.indexed_iter() {
                if l == 255 {
                    continue;
                }
                let (g, p) = (l as usize == c, pred[[x, y, z]] == c);
                present |= g;
                inter += usize::from(g && p);
                union += usize::from(g || p);
            }
            if present {
                terms.push(1.0 - inter as f64 / union as f64);
            }
        }
        let oracle = if terms.is_empty() { 0.0 } else { terms.iter().sum::<f64>() / terms.len() as f64 };
        worst_lv = worst_lv.max((lv - oracle).abs());
        ensure!((lv - oracle).abs() < 1e-10, "case {case}: lovasz {lv} vs {oracle}");
    }
    Ok(format!("cross-entropy deviation {worst_ce:.1e}; hard Lovász vs 1 − Jaccard {worst_lv:.1e} over 100 instances"))
}

fn signal() -> Check {
    let mut r = rng(71);
    let mut worst_mean = 0.0f64;
    for _ in 0..20 {
        let offset = r.random_range(-1e3..1e3);
        let samples: Vec<f64> = (0..997).map(|_| offset + r.random_range(-2.0..2.0)).collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let d = detrend_mean(&TimeSeries::new(samples, 100.0).map_err(|e| e.to_string())?);
        let rel = (d.samples().iter().sum::<f64>() / d.len() as f64).abs() / mean.abs();
        worst_mean = worst_mean.max(rel);
    }
    ensure!(worst_mean < 1e-12, "detrended mean {worst_mean} relative");

    let mut worst_rms = 0.0f64;
    for (amp, bin, n, rate, phase, dc) in
        [(0.35, 25, 2000, 200.0, 0.0, 9.81), (1.7, 37, 1000, 200.0, 0.4, -3.0), (0.02, 3, 512, 64.0, 1.1, 0.5)]
    {
        let f = bin as f64 * rate / n as f64;
        let samples: Vec<f64> = (0..n).map(|i| dc + amp * (2.0 * PI * f * i as f64 / rate + phase).sin()).collect();
        let stats =
            jitter_stats(&TimeSeries::new(samples, rate).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        worst_rms = worst_rms.max((stats.rms - amp / 2f64.sqrt()).abs());
        ensure!((stats.rms - amp / 2f64.sqrt()).abs() < 1e-6, "rms {} for amplitude {amp}", stats.rms);
        ensure!(
            stats.dominant_frequency == Some(f),
            "dominant {:?}, want bin {bin} = {f} Hz",
            stats.dominant_frequency
        );
    }
    Ok(format!("detrended mean {worst_mean:.1e} relative; sine rms deviation {worst_rms:.1e}; dominant bins exact"))
}

fn random_times(r: &mut ChaCha8Rng, n: usize, max_gap_ms: i64) -> Vec<Timestamp> {
    let mut t = 1_700_000_000_000_000_000i64 + r.random_range(0..50_000_000);
    (0..n)
        .map(|_| {
            t += r.random_range(1..max_gap_ms * 1_000_000);
            Timestamp(t)
        })
        .collect()
}

fn alignment() -> Check {
    let mut r = rng(81);
    for case in 0..100 {
        let (na, no) = (r.random_range(1..60), r.random_range(1..80));
        let anchors = random_times(&mut r, na, 120);
        let others = random_times(&mut r, no, 60);
        let streams = [
            StreamIndex::from_timestamps(Modality::Lidar, &anchors).map_err(|e| e.to_string())?,
            StreamIndex::from_timestamps(Modality::Thermal, &others).map_err(|e| e.to_string())?,
        ];
        let tolerance = r.random_range(0.001..0.08);
        let got = align_streams(&streams, Modality::Lidar, tolerance).map_err(|e| e.to_string())?;
        let tol_ns = (tolerance * 1e9).round() as i64;
        let mut expected = Vec::new();
        for a in &anchors {
            // brute force; the earlier entry wins a tie
            let best = others.iter().min_by_key(|o| ((o.0 - a.0).abs(), o.0)).expect("non-empty");
            if (best.0 - a.0).abs() <= tol_ns {
                expected.push((*a, *best));
            }
        }
        ensure!(
            got.len() == expected.len(),
            "case {case}: kept {} anchors, brute force keeps {}",
            got.len(),
            expected.len()
        );
        for (f, (a, b)) in got.iter().zip(&expected) {
            let m = &f.matches[&Modality::Thermal];
            ensure!(f.anchor == *a && m.timestamp == *b, "case {case}: anchor {a} matched {} not {b}", m.timestamp);
            ensure!((m.offset - (b.0 - a.0) as f64 * 1e-9).abs() < 1e-12, "case {case}: offset {}", m.offset);
        }
    }

    let base: Vec<Timestamp> = (0..20).map(|i| Timestamp(i * 100_000_000)).collect();
    let shifted: Vec<Timestamp> = base.iter().map(|t| Timestamp(t.0 + 10_000_000)).collect();
    let streams = [
        StreamIndex::from_timestamps(Modality::Lidar, &base).map_err(|e| e.to_string())?,
        StreamIndex::from_timestamps(Modality::Pal, &shifted).map_err(|e| e.to_string())?,
    ];
    let got = align_streams(&streams, Modality::Lidar, 0.05).map_err(|e| e.to_string())?;
    ensure!(got.len() == 20, "offset stream kept {} of 20", got.len());
    ensure!(got.iter().all(|f| (f.matches[&Modality::Pal].offset - 0.01).abs() < 1e-12), "offsets are not 0.01 s");

    // camera stream every 33 ms with a 0.5 s hole
    let camera: Vec<Timestamp> =
        (0..61).map(|i| Timestamp(i * 33_000_000)).filter(|t| !(600_000_000..1_100_000_000).contains(&t.0)).collect();
    let streams = [
        StreamIndex::from_timestamps(Modality::Lidar, &base).map_err(|e| e.to_string())?,
        StreamIndex::from_timestamps(Modality::Thermal, &camera).map_err(|e| e.to_string())?,
    ];
    let kept: Vec<i64> = align_streams(&streams, Modality::Lidar, 0.05)
        .map_err(|e| e.to_string())?
        .iter()
        .map(|f| f.anchor.0 / 1_000_000)
        .collect();
    let expected: Vec<i64> = (0..20)
        .map(|i| i * 100)
        .filter(|&ms| camera.iter().map(|c| (c.0 / 1_000_000 - ms).abs()).min().unwrap() <= 50)
        .collect();
    ensure!(kept == expected, "gap handling kept {kept:?}, want {expected:?}");
    ensure!(!kept.contains(&800), "anchor inside the gap was kept");
    Ok(format!("100 random pairs match brute force; +10 ms offset matched; gap drops {} anchors", 20 - kept.len()))
}

fn snapshot(dir: &Path) -> Snapshot {
    fn walk(root: &Path, dir: &Path, out: &mut Snapshot) {
        for entry in std::fs::read_dir(dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    if dir.exists() {
        walk(dir, dir, &mut out);
    }
    out
}

/// Runs the binary with `args` into a fresh `out`, returning stdout and every written file.
fn run_once(args: &[String], out: &Path) -> Result<(Vec<u8>, Snapshot), String> {
    if out.exists() {
        std::fs::remove_dir_all(out).map_err(|e| e.to_string())?;
    }
    let o = Command::new(env!("CARGO_BIN_EXE_panosense"))
        .args(["--deterministic", "--seed", "0", "--output"])
        .arg(out)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{:?} exited {:?}: {}", args, o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    Ok((o.stdout, snapshot(out)))
}

fn cli_determinism() -> Check {
    let tmp = tempfile::TempDir::new().map_err(|e| e.to_string())?;
    let fx = tmp.path().join("fixture");
    let first = run_once(&["synth".into()], &fx)?;
    let second = run_once(&["synth".into()], &fx)?;
    ensure!(first == second, "synth output differs between runs");

    let p = |rel: &str| fx.join(rel).to_string_lossy().into_owned();
    let commands: Vec<Vec<String>> = [
        vec!["calibrate-intrinsics", "--views", &p("calib/pinhole_views.json")],
        vec![
            "calibrate-intrinsics",
            "--model",
            "ocam",
            "--views",
            &p("calib/ocam_views.json"),
            "--init",
            &p("calib/ocam_init.json"),
        ],
        vec![
            "calibrate-extrinsics",
            "--corners",
            &p("calib/corners_thermal.json"),
            "--camera",
            &p("cameras/thermal.json"),
        ],
        vec!["calibrate-extrinsics", "--corners", &p("calib/corners_pal.json"), "--camera", &p("cameras/pal.json")],
        vec![
            "project",
            "--cloud",
            &p("lidar/frame_000.bin"),
            "--camera",
            &p("cameras/pal.json"),
            "--extrinsics",
            &p("truth/extrinsics_pal.json"),
        ],
        vec![
            "polarization",
            "--i0",
            &p("polar/i0.f32"),
            "--i45",
            &p("polar/i45.f32"),
            "--i90",
            &p("polar/i90.f32"),
            "--i135",
            &p("polar/i135.f32"),
        ],
        vec!["voxelize", "--cloud", &p("occupancy/scene.bin"), "--grid", &p("occupancy/grid.json")],
        vec!["eval-miou", "--pred", &p("occupancy/pred.occ"), "--gt", &p("occupancy/gt.occ")],
        vec!["jitter", "--input", &p("imu/imu.csv"), "--window", "5", "--downsample", "2"],
        vec!["fusion", "vjc", "--input", &p("fusion/lidar.f32")],
        vec!["fusion", "vjc", "--input", &p("fusion/lidar.f32"), "--weights", &p("fusion/vjc_zero.wb")],
        vec![
            "fusion",
            "mipf",
            "--lidar",
            &p("fusion/lidar.f32"),
            "--pal",
            &p("fusion/pal.f32"),
            "--thermal",
            &p("fusion/thermal.f32"),
            "--polar",
            &p("fusion/polar.f32"),
        ],
        vec![
            "fusion",
            "mipf",
            "--lidar",
            &p("fusion/lidar.f32"),
            "--pal",
            &p("fusion/pal.f32"),
            "--thermal",
            &p("fusion/thermal.f32"),
            "--polar",
            &p("fusion/polar.f32"),
            "--weights",
            &p("fusion/mipf.wb"),
        ],
        vec!["align", "--manifest", &p("manifest.json")],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();

    let out = tmp.path().join("out");
    let mut files = 0;
    for args in &commands {
        let a = run_once(args, &out)?;
        let b = run_once(args, &out)?;
        ensure!(!a.1.is_empty(), "{} wrote nothing", args[0]);
        if a.0 != b.0 {
            return Err(format!("{args:?}: stdout differs"));
        }
        if let Some(name) = a.1.keys().find(|k| a.1.get(*k) != b.1.get(*k)) {
            return Err(format!("{args:?}: {} differs", name.display()));
        }
        ensure!(a.1.len() == b.1.len(), "{args:?}: file sets differ");
        files += a.1.len();
    }
    Ok(format!("synth ({} files) and {} command runs byte-identical ({files} files)", first.1.len(), commands.len()))
}

fn main() {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 12] = [
        ("extrinsic recovery", extrinsic_recovery),
        ("pinhole intrinsic recovery", pinhole_intrinsic_recovery),
        ("lm solver", lm_solver),
        ("projection round trip", projection_round_trip),
        ("polarization", polarization),
        ("occupancy metrics", occupancy_metrics),
        ("vjc", vjc),
        ("mipf", mipf),
        ("losses", losses),
        ("signal", signal),
        ("alignment", alignment),
        ("cli determinism", cli_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL  {name}: {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
