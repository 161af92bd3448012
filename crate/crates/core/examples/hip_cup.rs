//! Cup orientation relative to the anterior pelvic plane, and planning a cup
//! from landmarks reconstructed out of simulated shots.

use flying_frustum::clinical::{app_from_landmarks, axis_from_angles, cup_angles, cup_angles_with, in_safe_zone, AngleConvention, CupOrientation};
use flying_frustum::geom::Vec3;
use flying_frustum::planning::AnnotationLabel;
use flying_frustum::sim::{carm_pose, ExecutionNoise, Outcome, PhantomKind, Session, SessionConfig, CARM_SOURCE_DISTANCE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let app = app_from_landmarks(&Vec3::new(-115.0, 0.0, 0.0), &Vec3::new(115.0, 0.0, 0.0), &Vec3::new(0.0, 0.0, -95.0))?;
    for (abd, ant) in [(40.0, 15.0), (55.0, 10.0), (35.0, 30.0)] {
        let axis = axis_from_angles(&CupOrientation { abduction: abd, anteversion: ant }, &app);
        let op = cup_angles_with(&axis, &app, AngleConvention::Operative)?;
        let safe = in_safe_zone(&cup_angles(&axis, &app)?);
        println!("radiographic ({abd}, {ant}) -> operative ({:.1}, {:.1}), safe zone: {safe}", op.abduction, op.anteversion);
    }

    let mut session = Session::create("cup-demo", SessionConfig { pixel_noise_sigma: 1.0, ..SessionConfig::noiseless(PhantomKind::PelvisLandmarks, 8) })?;
    let names: Vec<String> = session.phantom.landmarks.keys().cloned().collect();
    for name in &names {
        let target = session.phantom.landmark_world(name).expect("known landmark");
        for (az, el) in [(0.0, 0.0), (40.0, 15.0)] {
            let shot = session.shots.len();
            session.acquire_default(carm_pose(&target, CARM_SOURCE_DISTANCE, az, el)?)?;
            session.annotate_landmark(shot, name, AnnotationLabel::Landmark(name.clone()), "demo")?;
        }
    }
    let plan = session.plan_cup(CupOrientation { abduction: 40.0, anteversion: 15.0 })?;
    println!("planned cup axis {:.3?}, worst landmark rms {:.2} mm", plan.axis.as_slice(), plan.residual);
    if let Outcome::Cup { achieved, abduction_error, anteversion_error, .. } = session.execute(0, ExecutionNoise { rot_sigma_deg: 1.0, trans_sigma_mm: 0.0 })? {
        println!("achieved ({:.2}, {:.2}), errors {abduction_error:.2} / {anteversion_error:.2} deg", achieved.abduction, achieved.anteversion);
    }
    Ok(())
}
