//! Acceptance checks. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use flying_frustum::clinical::{axis_from_angles, app_from_landmarks, cup_angles, in_safe_zone, CupOrientation};
use flying_frustum::frustum::{frustum_project, image_pose, FlyingFrustum, ImageRef};
use flying_frustum::geom::{project, FrameId, Ray, RigidTransform, Vec2, Vec3};
use flying_frustum::handeye::{calibrate, default_mounting, generate_pose_pairs, sampling_experiment, transform_error, MotionRange, NoiseModel};
use flying_frustum::planning::{ray_from_annotation, trajectory_from_frustum_pair, triangulate, Annotation, AnnotationLabel, PlanningError, VirtualTool};
use flying_frustum::sim::{
    carm_pose, default_intrinsics, replay_str, run_kwire_experiment, run_tha_experiment, serialize_session, CalibrationConfig,
    ExecutionNoise, KwireConfig, LocalizerModel, NoiseConfig, PhantomKind, Session, SessionConfig, SimError, ThaConfig, CARM_SOURCE_DISTANCE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

type Check = fn() -> Result<Outcome, SimError>;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

fn inversions(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] > w[0]).count()
}

fn frustum(pose: RigidTransform, tag: usize) -> FlyingFrustum {
    FlyingFrustum::new(default_intrinsics(), pose, ImageRef { handle: format!("shot-{tag}"), timestamp_ms: 0 }).unwrap()
}

fn random_view_pair(rng: &mut ChaCha8Rng, tag: usize) -> (FlyingFrustum, FlyingFrustum) {
    let center = Vec3::from_fn(|_, _| rng.random_range(-20.0..20.0));
    let az = rng.random_range(-180.0..180.0);
    let sep = rng.random_range(30.0..150.0);
    let p0 = carm_pose(&center, CARM_SOURCE_DISTANCE, az, rng.random_range(-30.0..30.0)).unwrap();
    let p1 = carm_pose(&center, CARM_SOURCE_DISTANCE, az + sep, rng.random_range(-30.0..30.0)).unwrap();
    (frustum(p0, 2 * tag), frustum(p1, 2 * tag + 1))
}

fn click(fr: &FlyingFrustum, id: usize, x: &Vec3, label: AnnotationLabel) -> Annotation {
    let point = frustum_project(fr, x).unwrap();
    Annotation { frustum_id: id, point, label, author: "acceptance".into(), timestamp_ms: 0 }
}

fn handeye_exact_recovery() -> Outcome {
    let truth = default_mounting();
    let (mut worst_r, mut worst_t, mut slowest) = (0f64, 0f64, Duration::ZERO);
    for seed in 0..20 {
        let pairs = generate_pose_pairs(&truth, 10, MotionRange::default(), NoiseModel::noiseless(seed)).unwrap();
        let start = Instant::now();
        let cal = calibrate(&pairs).unwrap();
        slowest = slowest.max(start.elapsed());
        let (er, et) = transform_error(&cal.x, &truth);
        worst_r = worst_r.max(er);
        worst_t = worst_t.max(et);
    }
    outcome(
        worst_r < 1e-9 && worst_t < 1e-9 && slowest < Duration::from_secs(1),
        format!("20 datasets, N=10: max rot {worst_r:.2e} deg, max trans {worst_t:.2e} mm, slowest {slowest:?}"),
    )
}

fn sampling_trend() -> Outcome {
    let truth = default_mounting();
    let start = Instant::now();
    let pairs = generate_pose_pairs(&truth, 120, MotionRange::default(), NoiseModel { rot_sigma: 0.5, trans_sigma: 2.0, seed: 1 }).unwrap();
    let rows = sampling_experiment(&pairs, &[5, 10, 20, 40, 80, 120], 100, Some(&truth), 1).unwrap();
    let elapsed = start.elapsed();
    let rot: Vec<f64> = rows.iter().map(|r| r.mean_rot_err).collect();
    let trans: Vec<f64> = rows.iter().map(|r| r.mean_trans_err).collect();
    let (ir, it) = (inversions(&rot), inversions(&trans));
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    outcome(
        ir <= 1 && it <= 1 && elapsed < Duration::from_secs(30),
        format!("rot [{}] deg ({ir} inv), trans [{}] mm ({it} inv), {elapsed:?}", fmt(&rot), fmt(&trans)),
    )
}

/// Sum of squared point-to-line distances.
fn ray_objective(p: &Vec3, rays: &[(Vec3, Vec3)]) -> f64 {
    rays.iter()
        .map(|(o, d)| {
            let v = p - o;
            (v - d * v.dot(d)).norm_squared()
        })
        .sum()
}

/// Coarse grid over a fixed box, then exact line searches along a fixed set
/// of directions until the point stops moving.
fn brute_force_minimizer(rays: &[(Vec3, Vec3)]) -> Vec3 {
    let mut best = (f64::INFINITY, Vec3::zeros());
    for i in -15..=15 {
        for j in -15..=15 {
            for k in -15..=15 {
                let p = Vec3::new(i as f64, j as f64, k as f64) * 10.0;
                let f = ray_objective(&p, rays);
                if f < best.0 {
                    best = (f, p);
                }
            }
        }
    }
    let mut p = best.1;
    let (d0, d1) = (rays[0].1, rays[1].1);
    let dirs = [Vec3::x(), Vec3::y(), Vec3::z(), d0, d1, (d0 + d1).normalize(), (d0 - d1).normalize(), d0.cross(&d1).normalize()];
    for _ in 0..2000 {
        let mut moved = 0f64;
        for u in &dirs {
            let h = 1.0;
            let (fm, f0, fp) = (ray_objective(&(p - u * h), rays), ray_objective(&p, rays), ray_objective(&(p + u * h), rays));
            let curv = fm - 2.0 * f0 + fp;
            if curv > 0.0 {
                let t = h * (fm - fp) / (2.0 * curv);
                p += u * t;
                moved = moved.max(t.abs());
            }
        }
        if moved < 1e-12 {
            break;
        }
    }
    p
}

fn triangulation_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0f64;
    for _ in 0..100 {
        let target = Vec3::from_fn(|_, _| rng.random_range(-100.0..100.0));
        let az = rng.random_range(-180.0..180.0);
        let sep = rng.random_range(20.0..160.0);
        let mut rays = Vec::new();
        for a in [az, az + sep] {
            let origin = carm_pose(&target, CARM_SOURCE_DISTANCE, a, rng.random_range(-40.0..40.0)).unwrap().translation;
            let aim = target + Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0));
            rays.push(Ray::new(origin, aim - origin).unwrap());
        }
        let (closed, _) = triangulate(&rays).unwrap();
        let plain: Vec<(Vec3, Vec3)> = rays.iter().map(|r| (r.origin, r.direction.normalize())).collect();
        worst = worst.max((closed - brute_force_minimizer(&plain)).norm());
    }
    outcome(worst < 1e-6, format!("100 skew 2-ray instances: max |closed form - brute force| {worst:.2e} mm"))
}

fn planning_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst_point = 0f64;
    let mut points = 0;
    let mut pair_idx = 0;
    while points < 10_000 {
        let (fa, fb) = random_view_pair(&mut rng, pair_idx);
        pair_idx += 1;
        let mut here = 0;
        while here < 100 {
            let x = Vec3::from_fn(|_, _| rng.random_range(-80.0..80.0));
            if !(fa.contains(&x) && fb.contains(&x)) {
                continue;
            }
            let label = AnnotationLabel::Landmark("p".into());
            let ra = ray_from_annotation(&fa, &click(&fa, 0, &x, label.clone())).unwrap();
            let rb = ray_from_annotation(&fb, &click(&fb, 1, &x, label)).unwrap();
            let (est, _) = triangulate(&[ra, rb]).unwrap();
            worst_point = worst_point.max((est - x).norm());
            here += 1;
        }
        points += here;
    }

    let (mut worst_dir, mut segments, mut coplanar) = (0f64, 0, 0);
    while segments < 1000 {
        let (fa, fb) = random_view_pair(&mut rng, pair_idx);
        pair_idx += 1;
        let entry = Vec3::from_fn(|_, _| rng.random_range(-60.0..60.0));
        let exit = Vec3::from_fn(|_, _| rng.random_range(-60.0..60.0));
        if (exit - entry).norm() < 20.0 || ![entry, exit].iter().all(|p| fa.contains(p) && fb.contains(p)) {
            continue;
        }
        let result = trajectory_from_frustum_pair(
            &click(&fa, 0, &entry, AnnotationLabel::Entry),
            &click(&fa, 0, &exit, AnnotationLabel::Exit),
            &click(&fb, 1, &entry, AnnotationLabel::Entry),
            &click(&fb, 1, &exit, AnnotationLabel::Exit),
            &fa,
            &fb,
        );
        match result {
            Ok(traj) => {
                worst_dir = worst_dir.max(angle_between(&traj.direction, &(exit - entry)).to_degrees());
                segments += 1;
            }
            Err(PlanningError::CoplanarViews) => coplanar += 1,
            Err(e) => return outcome(false, format!("segment planning failed: {e}")),
        }
    }
    outcome(
        worst_point < 1e-9 && worst_dir < 1e-6,
        format!("{points} points: max {worst_point:.2e} mm; 1000 segments: max {worst_dir:.2e} deg ({coplanar} rejected as coplanar)"),
    )
}

fn near_plane_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut at_f, mut at_zero, mut central, mut collinear) = (0f64, 0f64, 0f64, 0f64);
    for tag in 0..200 {
        let (fr, _) = random_view_pair(&mut rng, tag);
        let f = fr.intrinsics.focal_length;
        let k = fr.intrinsics;
        let (r, t) = (fr.source_pose.rotation, fr.source_pose.translation);

        let zero = fr.clone().with_near_plane(0.0).unwrap();
        let ip = image_pose(&zero).unwrap();
        at_zero = at_zero.max((ip.rotation - r).abs().max()).max((ip.translation - t).abs().max());

        for _ in 0..50 {
            let x = Vec3::from_fn(|_, _| rng.random_range(-80.0..80.0));
            if !fr.contains(&x) {
                continue;
            }
            let full = fr.clone().with_near_plane(f).unwrap();
            at_f = at_f.max((frustum_project(&full, &x).unwrap() - project(&k, &fr.extrinsic(), &x).unwrap()).abs().max());

            let n = rng.random_range(0.0..=f);
            let fr_n = fr.clone().with_near_plane(n).unwrap();
            let got = frustum_project(&fr_n, &x).unwrap();
            // camera coordinates by hand, then similar triangles on the plane z = n
            let xc = r.transpose() * (x - t);
            let expected = k.principal_point + Vec2::new(xc.x / xc.z, xc.y / xc.z) * (n / k.pixel_pitch);
            central = central.max((got - expected).abs().max());

            // the near-plane pixel, placed in OR via the image pose, lies on the source->X ray
            let on_plane = image_pose(&fr_n).unwrap().apply(&Vec3::new(
                (got.x - k.principal_point.x) * k.pixel_pitch,
                (got.y - k.principal_point.y) * k.pixel_pitch,
                0.0,
            ));
            let ray = (x - t).normalize();
            let v = on_plane - t;
            collinear = collinear.max((v - ray * v.dot(&ray)).norm());
        }
    }
    outcome(
        at_f <= 1e-12 && at_zero <= 1e-12 && central < 1e-9 && collinear < 1e-9,
        format!(
            "n=f: {at_f:.1e} px; n=0 pose: {at_zero:.1e}; central scaling: {central:.1e} px; near-plane point off ray: {collinear:.1e} mm"
        ),
    )
}

fn tha_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0f64;
    let mut cases = 0;
    for trial in 0..50 {
        let jitter = |rng: &mut ChaCha8Rng| Vec3::from_fn(|_, _| rng.random_range(-15.0..15.0));
        let app = if trial == 0 {
            app_from_landmarks(&Vec3::new(-115.0, 0.0, 0.0), &Vec3::new(115.0, 0.0, 0.0), &Vec3::new(0.0, 0.0, -95.0)).unwrap()
        } else {
            let l = Vec3::new(-115.0, 0.0, 0.0) + jitter(&mut rng);
            let r = Vec3::new(115.0, 0.0, 0.0) + jitter(&mut rng);
            let p = Vec3::new(0.0, 0.0, -95.0) + jitter(&mut rng);
            let pose = RigidTransform::from_rotation_vector(FrameId::P, FrameId::OR, &Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)), jitter(&mut rng));
            app_from_landmarks(&pose.apply(&l), &pose.apply(&r), &pose.apply(&p)).unwrap()
        };
        let grid = (0..=80).flat_map(|a| (0..=160).map(move |v| (5.0 + a as f64, -80.0 + v as f64)));
        let random: Vec<(f64, f64)> = (0..200).map(|_| (rng.random_range(5.0..=85.0), rng.random_range(-80.0..=80.0))).collect();
        for (abduction, anteversion) in grid.chain(random) {
            let cup = CupOrientation { abduction, anteversion };
            let back = cup_angles(&axis_from_angles(&cup, &app), &app).unwrap();
            worst = worst.max((back.abduction - abduction).abs()).max((back.anteversion - anteversion).abs());
            cases += 1;
        }
    }
    let app = app_from_landmarks(&Vec3::new(-115.0, 0.0, 0.0), &Vec3::new(115.0, 0.0, 0.0), &Vec3::new(0.0, 0.0, -95.0)).unwrap();
    let target = CupOrientation { abduction: 40.0, anteversion: 15.0 };
    let safe = in_safe_zone(&cup_angles(&axis_from_angles(&target, &app), &app).unwrap());
    outcome(worst < 1e-9 && safe, format!("{cases} angle pairs over [5,85]x[-80,80]: max {worst:.2e} deg; (40,15) in safe zone: {safe}"))
}

fn experiments_zero_noise_and_trend() -> Result<Outcome, SimError> {
    let (kw, _) = run_kwire_experiment(&KwireConfig::new("zero", 20, 3, NoiseConfig::noiseless()))?;
    let (tha, _) = run_tha_experiment(&ThaConfig::new("zero", 20, 3, NoiseConfig::noiseless()))?;
    let kw_max = kw.rows.iter().map(|r| r.mean_mm).fold(0.0, f64::max);
    let tha_max = tha.rows.iter().map(|r| r.abduction_err.max(r.anteversion_err)).fold(0.0, f64::max);
    let shots_ok = kw.rows.iter().all(|r| r.shots == 2) && tha.rows.iter().all(|r| r.shots == 8);

    let levels = [0.0, 0.125, 0.25, 0.5, 1.0];
    let (mut kw_means, mut abd_means, mut ant_means) = (Vec::new(), Vec::new(), Vec::new());
    for &lambda in &levels {
        let noise = NoiseConfig::matched().scaled(lambda);
        let (k, _) = run_kwire_experiment(&KwireConfig::new("trend", 40, 21, noise))?;
        let (t, _) = run_tha_experiment(&ThaConfig::new("trend", 40, 21, noise))?;
        kw_means.push(k.error().mean);
        abd_means.push(t.abduction_error().mean);
        ant_means.push(t.anteversion_error().mean);
    }
    let increasing = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
    let trend_ok = increasing(&kw_means) && increasing(&abd_means) && increasing(&ant_means);
    let converges = kw_means[0] < 1e-6 && abd_means[0] < 1e-6 && ant_means[0] < 1e-6;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(" ");
    Ok(outcome(
        kw_max < 1e-6 && tha_max < 1e-6 && shots_ok && trend_ok && converges,
        format!(
            "zero noise: kwire {kw_max:.1e} mm, tha {tha_max:.1e} deg, shots 2/8: {shots_ok}; noise x{levels:?}: kwire [{}] mm, abd [{}], ant [{}] deg",
            fmt(&kw_means),
            fmt(&abd_means),
            fmt(&ant_means)
        ),
    ))
}

fn localizer_fidelity() -> Result<Outcome, SimError> {
    let model = LocalizerModel::default();
    let (mut rot, mut trans, mut draws) = (0.0, 0.0, 0usize);
    for s in 0..100 {
        let mut session = Session::create(format!("loc-{s}"), SessionConfig::noiseless(PhantomKind::TubeInCube, s))?;
        for k in 0..100 {
            let pose = carm_pose(&Vec3::zeros(), CARM_SOURCE_DISTANCE, 3.6 * k as f64, 10.0)?;
            let shot = session.acquire(pose, LocalizerModel { seed: s, ..model }, 0.0)?;
            let delta = shot.frustum.source_pose.compose(&shot.true_source_pose.invert())?;
            rot += delta.angle().to_degrees();
            trans += delta.translation.norm();
            draws += 1;
        }
    }
    let (rot, trans) = (rot / draws as f64, trans / draws as f64);
    let (er, et) = ((rot - 0.75).abs() / 0.75, (trans - 8.0).abs() / 8.0);
    Ok(outcome(
        er < 0.05 && et < 0.05,
        format!("{draws} acquisitions: mean rot {rot:.4} deg ({:.2}%), mean trans {trans:.4} mm ({:.2}%)", er * 100.0, et * 100.0),
    ))
}

/// A session built from random operations; failures are part of the script
/// and must leave nothing behind.
fn random_session(seed: u64) -> Result<Session, SimError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = if rng.random_bool(0.5) { PhantomKind::TubeInCube } else { PhantomKind::PelvisLandmarks };
    let noise = NoiseConfig::matched().scaled(rng.random_range(0.0..2.0));
    let config = SessionConfig {
        localizer: LocalizerModel { seed: rng.random(), ..noise.localizer },
        pixel_noise_sigma: noise.pixel_noise_sigma,
        calibration: if rng.random_bool(0.5) { noise.calibration } else { CalibrationConfig::Exact },
        phantom_pose: RigidTransform::from_rotation_vector(FrameId::P, FrameId::OR, &Vec3::from_fn(|_, _| rng.random_range(-0.2..0.2)), Vec3::from_fn(|_, _| rng.random_range(-10.0..10.0))),
        ..SessionConfig::noiseless(kind, rng.random())
    };
    let mut s = Session::create(format!("rand-{seed}"), config)?;
    let landmarks: Vec<String> = s.phantom.landmarks.keys().cloned().collect();
    let mut planned = 0;
    for _ in 0..rng.random_range(2..6) {
        let pose = carm_pose(&Vec3::zeros(), CARM_SOURCE_DISTANCE, rng.random_range(-180.0..180.0), rng.random_range(-30.0..30.0))?;
        let shot = s.shots.len();
        s.acquire_default(pose)?;
        for name in &landmarks {
            let label = match name.as_str() {
                "tube_entry" => AnnotationLabel::Entry,
                "tube_exit" => AnnotationLabel::Exit,
                other => AnnotationLabel::Landmark(other.into()),
            };
            let _ = s.annotate_landmark(shot, name, label, "random");
        }
        let free = Vec2::new(rng.random_range(-50.0..1100.0), rng.random_range(-50.0..1100.0));
        let _ = s.annotate(Annotation { frustum_id: shot, point: free, label: AnnotationLabel::Landmark("free".into()), author: "random".into(), timestamp_ms: 0 });
        let _ = s.set_near_plane(shot, rng.random_range(-100.0..1100.0));
    }
    let n_ann = s.annotations.len().max(1);
    let idx = [0; 4].map(|_| rng.random_range(0..n_ann));
    if s.plan_trajectory(idx).is_ok() {
        planned += 1;
    }
    if kind == PhantomKind::TubeInCube && s.plan_trajectory([0, 1, 2, 3]).is_ok() {
        planned += 1;
    }
    if kind == PhantomKind::PelvisLandmarks && s.plan_cup(CupOrientation { abduction: rng.random_range(30.0..50.0), anteversion: rng.random_range(5.0..25.0) }).is_ok() {
        planned += 1;
    }
    let tool_pose = RigidTransform::from_rotation_vector(FrameId::T, FrameId::OR, &Vec3::from_fn(|_, _| rng.random_range(-1.0..1.0)), Vec3::from_fn(|_, _| rng.random_range(-40.0..40.0)));
    let _ = s.plan_tool(VirtualTool::kwire(120.0, 9, tool_pose).expect("valid wire"), None);
    for plan in 0..planned + 1 {
        let _ = s.execute(plan, ExecutionNoise { rot_sigma_deg: rng.random_range(0.0..1.0), trans_sigma_mm: rng.random_range(0.0..1.0) });
    }
    Ok(s)
}

fn replay_determinism() -> Result<Outcome, SimError> {
    let mut identical = 0;
    let mut events = 0;
    for seed in 0..20 {
        let session = random_session(seed)?;
        events += session.events.len();
        let first = serialize_session(&session)?;
        let second = serialize_session(&replay_str(&first)?)?;
        if first == second {
            identical += 1;
        }
    }
    Ok(outcome(identical == 20, format!("{identical}/20 randomized sessions byte-identical ({events} events total)")))
}

fn main() {
    let checks: Vec<(&str, Check)> = vec![
        ("handeye_exact_recovery", || Ok(handeye_exact_recovery())),
        ("pair_count_trend", || Ok(sampling_trend())),
        ("triangulation_oracle", || Ok(triangulation_oracle())),
        ("planning_round_trip", || Ok(planning_round_trip())),
        ("near_plane_identities", || Ok(near_plane_identities())),
        ("cup_angle_round_trip", || Ok(tha_round_trip())),
        ("zero_noise_experiments", experiments_zero_noise_and_trend),
        ("localizer_fidelity", localizer_fidelity),
        ("replay_determinism", replay_determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let result = check().unwrap_or_else(|e| outcome(false, format!("error: {e}")));
        if !result.pass {
            failed += 1;
        }
        println!("{} {name}: {} [{:.1?}]", if result.pass { "PASS" } else { "FAIL" }, result.detail, start.elapsed());
    }
    println!("acceptance: {} passed, {failed} failed", 9 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
