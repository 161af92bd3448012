//! `frustum` command line. Exit status: 0 on success, 1 on a domain error
//! (printed to stderr as an [`ApiError`] JSON object), 2 on a usage error.

use super::{ApiError, WirePose};
use crate::handeye::{calibrate, default_mounting, generate_pose_pairs, sampling_experiment, transform_error, MotionRange, NoiseModel};
use crate::sim::{
    load_pairs, replay, run_kwire_experiment, run_tha_experiment, save_pairs, save_session, KwireConfig, KwireReport, NoiseConfig, PairDataset,
    Session, ThaConfig, ThaReport,
};
use clap::{Args, Parser, Subcommand};
use serde_json::json;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Parser)]
#[command(name = "frustum", version, about = "C-arm co-calibration, flying-frustum planning and virtual OR experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic pose-pair dataset.
    GenPairs {
        #[arg(long, default_value_t = 120)]
        n: usize,
        /// Per-axis rotation noise, degrees.
        #[arg(long, default_value_t = 0.5)]
        rot_sigma: f64,
        /// Per-axis translation noise, mm.
        #[arg(long, default_value_t = 2.0)]
        trans_sigma: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Calibrate from a pose-pair file and print the result as JSON.
    Calibrate {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Calibration error versus number of pairs, as CSV.
    #[command(alias = "fig9")]
    PairSweep {
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "5,10,20,40,80,120")]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-view K-wire placement experiment, as CSV.
    Kwire(ExperimentArgs),
    /// Cup placement experiment, as CSV.
    Tha(ExperimentArgs),
    /// Validate a session file by re-running its log, and summarise it.
    Replay { file: PathBuf },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "FRUSTUM_STATE_DIR", default_value = "frustum-state")]
        state_dir: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ExperimentArgs {
    /// JSON experiment configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Start from zero noise instead of the matched defaults.
    #[arg(long)]
    noiseless: bool,
    #[arg(long)]
    pixel_sigma: Option<f64>,
    /// Run once per factor, every noise amplitude multiplied by it.
    #[arg(long, value_delimiter = ',', default_value = "1")]
    noise_scale: Vec<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for one session file per repeat.
    #[arg(long)]
    sessions: Option<PathBuf>,
}

/// Parses `argv` (including the program name) and runs it, writing to the
/// process's stdout and stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let stream: &mut dyn Write = if code == 0 { out } else { err };
            let _ = write!(stream, "{}", e.render());
            return if code == 0 { 0 } else { 2 };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", serde_json::to_string(&e).expect("ApiError serializes"));
            1
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::bad_request(format!("{}: {e}", path.display()))
}

fn emit(text: &str, path: Option<&Path>, out: &mut dyn Write) -> Result<(), ApiError> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => out.write_all(text.as_bytes()).map_err(|e| ApiError::bad_request(e.to_string())),
    }
}

fn save_sessions(dir: Option<&Path>, sessions: &[Session]) -> Result<(), ApiError> {
    let Some(dir) = dir else { return Ok(()) };
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for s in sessions {
        save_session(&dir.join(format!("{}.json", s.id)), s)?;
    }
    Ok(())
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ApiError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ApiError::not_found(path.display().to_string()),
        _ => io_err(path, e),
    })?;
    serde_json::from_str(&text).map_err(|e| ApiError::bad_request(format!("{}: {e}", path.display())))
}

/// Base noise and the per-factor labels shared by both experiments.
fn noise_levels(args: &ExperimentArgs, base: NoiseConfig, label: &str) -> Result<Vec<(String, NoiseConfig)>, ApiError> {
    let mut noise = if args.noiseless { NoiseConfig::noiseless() } else { base };
    if let Some(px) = args.pixel_sigma {
        noise.pixel_noise_sigma = px;
    }
    if args.noise_scale.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
        return Err(ApiError::bad_request("noise scale factors must be finite and non-negative"));
    }
    Ok(args
        .noise_scale
        .iter()
        .map(|&f| (if args.noise_scale.len() > 1 { format!("{label}x{f}") } else { label.to_string() }, noise.scaled(f)))
        .collect())
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), ApiError> {
    match command {
        Command::GenPairs { n, rot_sigma, trans_sigma, seed, out: path } => {
            let gt = default_mounting();
            let pairs = generate_pose_pairs(&gt, n, MotionRange::default(), NoiseModel { rot_sigma, trans_sigma, seed })?;
            save_pairs(&path, &PairDataset { pairs, ground_truth: Some(gt) })?;
            let _ = writeln!(err, "wrote {n} pairs to {}", path.display());
            Ok(())
        }
        Command::Calibrate { pairs, out: path } => {
            let data = load_pairs(&pairs)?;
            let cal = calibrate(&data.pairs)?;
            let error = data.ground_truth.map(|gt| {
                let (r, t) = transform_error(&cal.x, &gt);
                json!({ "rotation_deg": r, "translation_mm": t })
            });
            let report = json!({
                "x": WirePose::from_transform(&cal.x),
                "rotation_residual_deg": cal.rotation_residual,
                "translation_residual_mm": cal.translation_residual,
                "n_pairs": cal.n_pairs,
                "error_vs_truth": error,
            });
            emit(&format!("{}\n", serde_json::to_string_pretty(&report).expect("json")), path.as_deref(), out)
        }
        Command::PairSweep { pairs, sizes, repeats, seed, out: path } => {
            let data = load_pairs(&pairs)?;
            let rows = sampling_experiment(&data.pairs, &sizes, repeats, data.ground_truth.as_ref(), seed)?;
            let mut csv = String::from("n,draws,degenerate,mean_rot_err_deg,sd_rot_err_deg,mean_trans_err_mm,sd_trans_err_mm,mean_rot_residual_deg,mean_trans_residual_mm\n");
            for r in rows {
                csv.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    r.n, r.draws, r.degenerate, r.mean_rot_err, r.sd_rot_err, r.mean_trans_err, r.sd_trans_err, r.mean_rot_residual, r.mean_trans_residual
                ));
            }
            emit(&csv, path.as_deref(), out)
        }
        Command::Kwire(args) => {
            let base = match &args.config {
                Some(p) => read_config::<KwireConfig>(p)?,
                None => KwireConfig::new("matched", 100, 0, NoiseConfig::matched()),
            };
            let mut csv = format!("{}\n", KwireReport::CSV_HEADER);
            for (label, noise) in noise_levels(&args, base.noise, &base.label)? {
                let cfg = KwireConfig { label, noise, repeats: args.repeats.unwrap_or(base.repeats), seed: args.seed.unwrap_or(base.seed), ..base.clone() };
                let (report, sessions) = run_kwire_experiment(&cfg)?;
                let e = report.error();
                let _ = writeln!(err, "{}: mean {:.3} mm, sd {:.3} mm, redraws {}", cfg.label, e.mean, e.sd, report.redraws());
                report.append_csv_rows(&mut csv);
                save_sessions(args.sessions.as_deref(), &sessions)?;
            }
            emit(&csv, args.out.as_deref(), out)
        }
        Command::Tha(args) => {
            let base = match &args.config {
                Some(p) => read_config::<ThaConfig>(p)?,
                None => ThaConfig::new("matched", 100, 0, NoiseConfig::matched()),
            };
            let mut csv = format!("{}\n", ThaReport::CSV_HEADER);
            for (label, noise) in noise_levels(&args, base.noise, &base.label)? {
                let cfg = ThaConfig { label, noise, repeats: args.repeats.unwrap_or(base.repeats), seed: args.seed.unwrap_or(base.seed), ..base.clone() };
                let (report, sessions) = run_tha_experiment(&cfg)?;
                let (a, v) = (report.abduction_error(), report.anteversion_error());
                let _ = writeln!(err, "{}: abduction {:.3} +/- {:.3} deg, anteversion {:.3} +/- {:.3} deg", cfg.label, a.mean, a.sd, v.mean, v.sd);
                report.append_csv_rows(&mut csv);
                save_sessions(args.sessions.as_deref(), &sessions)?;
            }
            emit(&csv, args.out.as_deref(), out)
        }
        Command::Replay { file } => {
            let s = replay(&file)?;
            let summary = json!({
                "id": s.id,
                "valid": true,
                "events": s.events.len(),
                "shots": s.shots.len(),
                "annotations": s.annotations.len(),
                "plans": s.plans.len(),
                "dose": s.dose(),
                "metrics": s.metrics(),
            });
            emit(&format!("{}\n", serde_json::to_string_pretty(&summary).expect("json")), None, out)
        }
        Command::Serve { port, host, state_dir } => {
            let rt = tokio::runtime::Runtime::new().map_err(|e| ApiError::bad_request(e.to_string()))?;
            let _ = writeln!(err, "serving on http://{host}:{port}, state in {}", state_dir.display());
            rt.block_on(super::http::serve(&host, port, state_dir))
        }
    }
}
