//! Place an acquisition in the room, slide its near plane, check how far the
//! C-arm is from a stored view and how much of a volume two views cover.

use flying_frustum::frustum::{alignment_to, frustum_project, image_pose, interlock, Aabb, FlyingFrustum, ImageRef};
use flying_frustum::geom::Vec3;
use flying_frustum::sim::{carm_pose, default_intrinsics, CARM_SOURCE_DISTANCE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let k = default_intrinsics();
    let ap = FlyingFrustum::new(k, carm_pose(&Vec3::zeros(), CARM_SOURCE_DISTANCE, 0.0, 0.0)?, ImageRef { handle: "ap".into(), timestamp_ms: 0 })?;
    let lat = FlyingFrustum::new(k, carm_pose(&Vec3::zeros(), CARM_SOURCE_DISTANCE, 90.0, 0.0)?, ImageRef { handle: "lat".into(), timestamp_ms: 1 })?;

    let point = Vec3::new(20.0, 0.0, 35.0);
    for n in [k.focal_length, 600.0, 300.0, 0.0] {
        let fr = ap.clone().with_near_plane(n)?;
        let origin = image_pose(&fr)?.translation;
        let px = frustum_project(&fr, &point)?;
        println!("n = {n:>5.1}: image plane at {:.1?}, point at pixel ({:.2}, {:.2})", origin.as_slice(), px.x, px.y);
    }

    let moved = FlyingFrustum::new(k, carm_pose(&Vec3::new(5.0, 0.0, 0.0), CARM_SOURCE_DISTANCE, 8.0, 3.0)?, ImageRef { handle: "now".into(), timestamp_ms: 2 })?;
    let a = alignment_to(&moved, &ap);
    println!("back to AP: rotate {:.2} deg, translate {:.2} mm", a.rot_offset, a.trans_offset);

    let report = interlock(&[ap, lat], &Aabb::centered(Vec3::zeros(), Vec3::repeat(60.0)))?;
    println!("coverage of a 120 mm box: {:.3} (both views: {:.3})", report.coverage, report.pairwise[0].fraction);
    Ok(())
}
