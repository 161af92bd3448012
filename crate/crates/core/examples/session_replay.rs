//! Save an experiment session, reload it from its event log and check that
//! the reloaded file is byte-for-byte the same.

use flying_frustum::sim::{replay, run_kwire_experiment, save_session, serialize_session, KwireConfig, NoiseConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (_, sessions) = run_kwire_experiment(&KwireConfig::new("demo", 1, 5, NoiseConfig::matched()))?;
    let session = &sessions[0];
    let path = std::env::temp_dir().join(format!("{}.json", session.id));
    save_session(&path, session)?;

    let restored = replay(&path)?;
    for event in &restored.events {
        println!("{:>3} {:>5} ms  {}", event.seq, event.timestamp_ms, event.op.name());
    }
    let same = serialize_session(&restored)? == std::fs::read_to_string(&path)?;
    println!("{} events, identical on re-serialisation: {same}", restored.events.len());
    Ok(())
}
