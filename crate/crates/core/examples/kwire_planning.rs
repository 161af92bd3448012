//! Plan a K-wire through the tube phantom from two clicked views, drill it
//! with some hand tremor and score it against the tube.

use flying_frustum::geom::Vec3;
use flying_frustum::planning::AnnotationLabel;
use flying_frustum::sim::{carm_pose, ExecutionNoise, Outcome, PhantomKind, Session, SessionConfig, CARM_SOURCE_DISTANCE, TUBE_ENTRY, TUBE_EXIT};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SessionConfig { pixel_noise_sigma: 1.0, ..SessionConfig::noiseless(PhantomKind::TubeInCube, 11) };
    let mut session = Session::create("kwire-demo", config)?;
    let mut clicks = Vec::new();
    for az in [5.0, 85.0] {
        let shot = session.shots.len();
        session.acquire_default(carm_pose(&Vec3::zeros(), CARM_SOURCE_DISTANCE, az, 0.0)?)?;
        clicks.push(session.annotate_landmark(shot, TUBE_ENTRY, AnnotationLabel::Entry, "demo")?.0);
        clicks.push(session.annotate_landmark(shot, TUBE_EXIT, AnnotationLabel::Exit, "demo")?.0);
    }
    let plan = session.plan_trajectory([clicks[0], clicks[1], clicks[2], clicks[3]])?;
    println!("planned entry {:.2?}, direction {:.4?}", plan.point.as_slice(), plan.direction.as_slice());

    if let Outcome::Kwire { error, .. } = session.execute(0, ExecutionNoise { rot_sigma_deg: 0.5, trans_sigma_mm: 0.5 })? {
        println!("entry {:.2} mm, exit {:.2} mm, mean {:.2} mm, breached: {}", error.entry_dist, error.exit_dist, error.mean, error.breached);
    }
    println!("{} shots, dose {:.4}", session.shots.len(), session.dose());
    Ok(())
}
