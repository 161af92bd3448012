//! Repeated K-wire placements at increasing noise, same random draws at
//! every level.

use flying_frustum::sim::{run_kwire_experiment, KwireConfig, NoiseConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for scale in [0.0, 0.5, 1.0, 2.0] {
        let config = KwireConfig::new(format!("x{scale}"), 50, 7, NoiseConfig::matched().scaled(scale));
        let (report, _) = run_kwire_experiment(&config)?;
        let e = report.error();
        let breached = report.rows.iter().filter(|r| r.breached).count();
        println!("noise x{scale}: {:.2} +- {:.2} mm (median {:.2}, max {:.2}), {breached} breaches", e.mean, e.sd, e.median, e.max);
    }
    Ok(())
}
