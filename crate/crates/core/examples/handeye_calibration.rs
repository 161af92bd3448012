//! Co-calibrate a tracking marker on the C-arm with the X-ray source from
//! synthetic motion pairs, with and without measurement noise.

use flying_frustum::handeye::{calibrate, default_mounting, generate_pose_pairs, transform_error, MotionRange, NoiseModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = default_mounting();
    for (rot_sigma, trans_sigma) in [(0.0, 0.0), (0.1, 0.5), (0.5, 2.0)] {
        let noise = NoiseModel { rot_sigma, trans_sigma, seed: 42 };
        let pairs = generate_pose_pairs(&truth, 40, MotionRange::default(), noise)?;
        let cal = calibrate(&pairs)?;
        let (er, et) = transform_error(&cal.x, &truth);
        println!(
            "noise {rot_sigma:.1} deg / {trans_sigma:.1} mm: error {er:.2e} deg, {et:.2e} mm; residual {:.3} deg, {:.3} mm",
            cal.rotation_residual, cal.translation_residual
        );
    }
    Ok(())
}
