//! Overlay a virtual K-wire on both shots and measure how well it agrees
//! with the clicked tube axis; writes the first shot as a PNG.

use flying_frustum::geom::{FrameId, RigidTransform, Vec3};
use flying_frustum::planning::{AnnotationLabel, VirtualTool};
use flying_frustum::sim::{carm_pose, render_shot_png, PhantomKind, Session, SessionConfig, CARM_SOURCE_DISTANCE, TUBE_ENTRY, TUBE_EXIT};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut session = Session::create("tool-demo", SessionConfig::noiseless(PhantomKind::TubeInCube, 2))?;
    for az in [0.0, 90.0] {
        let shot = session.shots.len();
        session.acquire_default(carm_pose(&Vec3::zeros(), CARM_SOURCE_DISTANCE, az, 10.0)?)?;
        session.annotate_landmark(shot, TUBE_ENTRY, AnnotationLabel::Entry, "demo")?;
        session.annotate_landmark(shot, TUBE_EXIT, AnnotationLabel::Exit, "demo")?;
    }
    let tube = session.phantom.tube_world().expect("tube phantom");
    for tilt in [0.0, 2.0, 5.0] {
        let look = RigidTransform::look_at(&tube.axis_start, &tube.axis_end, &Vec3::x())?;
        let wobble = RigidTransform::from_rotation_vector(FrameId::T, FrameId::T, &(Vec3::x() * f64::to_radians(tilt)), Vec3::zeros());
        let pose = RigidTransform::new(FrameId::T, FrameId::OR, look.rotation, tube.axis_start)?.compose(&wobble)?;
        let tool = VirtualTool::kwire((tube.axis_end - tube.axis_start).norm(), 12, pose)?;
        let plan = session.plan_tool(tool, None)?;
        println!("tilt {tilt:.0} deg: consensus residual {:.2} px over views {:?}", plan.consensus_residual.unwrap_or(f64::NAN), plan.views);
    }
    let path = std::env::temp_dir().join("frustum-shot0.png");
    std::fs::write(&path, render_shot_png(&session.shots[0])?)?;
    println!("wrote {}", path.display());
    Ok(())
}
