//! Click each pelvic landmark on two simulated shots and reconstruct them in
//! the room frame.

use flying_frustum::planning::AnnotationLabel;
use flying_frustum::sim::{carm_pose, LocalizerModel, PhantomKind, Session, SessionConfig, CARM_SOURCE_DISTANCE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SessionConfig { pixel_noise_sigma: 0.5, localizer: LocalizerModel::default(), ..SessionConfig::noiseless(PhantomKind::PelvisLandmarks, 3) };
    let mut session = Session::create("pelvis-demo", config)?;
    let names: Vec<String> = session.phantom.landmarks.keys().cloned().collect();
    // the pelvis is wider than the detector: two views centred on each landmark
    for name in &names {
        let target = session.phantom.landmark_world(name).expect("known landmark");
        for az in [-20.0, 35.0] {
            let shot = session.shots.len();
            session.acquire_default(carm_pose(&target, CARM_SOURCE_DISTANCE, az, 10.0)?)?;
            session.annotate_landmark(shot, name, AnnotationLabel::Landmark(name.clone()), "demo")?;
        }
    }
    for name in &names {
        let (estimate, rms) = session.triangulate_landmark(name)?;
        let truth = session.phantom.landmark_world(name).expect("known landmark");
        println!("{name:>12}: error {:.2} mm, ray rms {rms:.2} mm", (estimate - truth).norm());
    }
    println!("dose so far: {:.4}", session.dose());
    Ok(())
}
