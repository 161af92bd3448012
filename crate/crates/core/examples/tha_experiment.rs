//! Repeated cup placements: angle errors and how often the result stays in
//! the safe zone.

use flying_frustum::sim::{run_tha_experiment, NoiseConfig, ThaConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for scale in [0.0, 0.5, 1.0] {
        let (report, _) = run_tha_experiment(&ThaConfig::new(format!("x{scale}"), 50, 7, NoiseConfig::matched().scaled(scale)))?;
        let (abd, ant) = (report.abduction_error(), report.anteversion_error());
        let safe = report.rows.iter().filter(|r| r.in_safe_zone).count();
        println!(
            "noise x{scale}: abduction {:.2} +- {:.2} deg, anteversion {:.2} +- {:.2} deg, {safe}/{} in safe zone",
            abd.mean, abd.sd, ant.mean, ant.sd, report.rows.len()
        );
    }
    Ok(())
}
