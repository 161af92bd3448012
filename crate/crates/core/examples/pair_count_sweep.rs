//! How calibration error falls as more motion pairs are used.

use flying_frustum::handeye::{default_mounting, generate_pose_pairs, sampling_experiment, MotionRange, NoiseModel};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let truth = default_mounting();
    let pairs = generate_pose_pairs(&truth, 120, MotionRange::default(), NoiseModel { rot_sigma: 0.5, trans_sigma: 2.0, seed: 1 })?;
    let rows = sampling_experiment(&pairs, &[5, 10, 20, 40, 80, 120], 100, Some(&truth), 7)?;
    println!("{:>4} {:>10} {:>10} {:>10} {:>10}", "N", "rot deg", "sd", "trans mm", "sd");
    for r in rows {
        println!("{:>4} {:>10.3} {:>10.3} {:>10.3} {:>10.3}", r.n, r.mean_rot_err, r.sd_rot_err, r.mean_trans_err, r.sd_trans_err);
    }
    Ok(())
}
