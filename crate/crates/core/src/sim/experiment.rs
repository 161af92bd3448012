//! Scripted end-to-end runs: acquire, annotate with a simulated clicker,
//! plan, execute and score against the phantom. Repeats are independent
//! sessions seeded from `(seed, repeat)`, so two configurations that differ
//! only in noise amplitude see the same underlying random draws.

use super::{
    carm_pose, mix_seed, CalibrationConfig, ExecutionNoise, LocalizerModel, Outcome, PhantomKind, Session, SessionConfig, SimError,
    ACETABULUM, ASIS_LEFT, ASIS_RIGHT, CARM_SOURCE_DISTANCE, PUBIS, TUBE_ENTRY, TUBE_EXIT,
};
use crate::clinical::CupOrientation;
use crate::planning::AnnotationLabel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub const KWIRE_SHOTS: usize = 2;
pub const THA_SHOTS: usize = 8;
/// Attempts per repeat before a degenerate geometry is reported as an error.
pub const MAX_ATTEMPTS: usize = 10;
const ANNOTATOR: &str = "script";

/// Every noise source of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub localizer: LocalizerModel,
    pub pixel_noise_sigma: f64,
    pub calibration: CalibrationConfig,
    pub execution: ExecutionNoise,
}

impl NoiseConfig {
    pub fn noiseless() -> Self {
        Self { localizer: LocalizerModel::perfect(), pixel_noise_sigma: 0.0, calibration: CalibrationConfig::Exact, execution: ExecutionNoise::default() }
    }

    /// Default localizer, 1 px clicks, a 30-pair calibration and mild
    /// execution error. Chosen to land in the range of reported outcomes;
    /// not a model of any particular operator.
    pub fn matched() -> Self {
        Self {
            localizer: LocalizerModel::default(),
            pixel_noise_sigma: 1.0,
            calibration: CalibrationConfig::Estimated { pairs: 30, rot_sigma: 0.1, trans_sigma: 0.5 },
            execution: ExecutionNoise { rot_sigma_deg: 0.5, trans_sigma_mm: 0.5 },
        }
    }

    /// Every amplitude multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            localizer: self.localizer.scaled(factor),
            pixel_noise_sigma: self.pixel_noise_sigma * factor,
            calibration: self.calibration.scaled(factor),
            execution: self.execution.scaled(factor),
        }
    }

    fn session_config(&self, kind: PhantomKind, seed: u64) -> SessionConfig {
        SessionConfig {
            calibration: self.calibration,
            localizer: self.localizer,
            pixel_noise_sigma: self.pixel_noise_sigma,
            ..SessionConfig::noiseless(kind, seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwireConfig {
    /// Written to the `config` column of the report.
    pub label: String,
    pub repeats: usize,
    pub seed: u64,
    pub noise: NoiseConfig,
    /// Half-width of the uniform jitter on each view direction, degrees.
    pub view_jitter_deg: f64,
}

impl KwireConfig {
    pub fn new(label: impl Into<String>, repeats: usize, seed: u64, noise: NoiseConfig) -> Self {
        Self { label: label.into(), repeats, seed, noise, view_jitter_deg: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThaConfig {
    pub label: String,
    pub repeats: usize,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub target: CupOrientation,
    pub view_jitter_deg: f64,
}

impl ThaConfig {
    pub fn new(label: impl Into<String>, repeats: usize, seed: u64, noise: NoiseConfig) -> Self {
        Self { label: label.into(), repeats, seed, noise, target: CupOrientation { abduction: 40.0, anteversion: 15.0 }, view_jitter_deg: 5.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KwireRow {
    pub repeat: usize,
    pub shots: usize,
    pub dose: f64,
    pub entry_mm: f64,
    pub exit_mm: f64,
    pub mean_mm: f64,
    pub breached: bool,
    pub residual_mm: f64,
    pub redraws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThaRow {
    pub repeat: usize,
    pub shots: usize,
    pub dose: f64,
    pub abduction: f64,
    pub anteversion: f64,
    pub abduction_err: f64,
    pub anteversion_err: f64,
    pub in_safe_zone: bool,
    pub residual_mm: f64,
    pub redraws: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub max: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary { mean: f64::NAN, sd: f64::NAN, median: f64::NAN, max: f64::NAN };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt() } else { 0.0 };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { sorted[n / 2] } else { 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]) };
    Summary { mean, sd, median, max: sorted[n - 1] }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KwireReport {
    pub config: KwireConfig,
    pub rows: Vec<KwireRow>,
}

impl KwireReport {
    pub fn error(&self) -> Summary {
        summarize(&self.rows.iter().map(|r| r.mean_mm).collect::<Vec<_>>())
    }

    pub fn redraws(&self) -> usize {
        self.rows.iter().map(|r| r.redraws).sum()
    }

    pub const CSV_HEADER: &'static str = "config,repeat,shots,dose,entry_mm,exit_mm,mean_mm,breached,residual_mm,redraws";

    /// Header plus one line per repeat.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        self.append_csv_rows(&mut out);
        out
    }

    pub fn append_csv_rows(&self, out: &mut String) {
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                self.config.label, r.repeat, r.shots, r.dose, r.entry_mm, r.exit_mm, r.mean_mm, r.breached, r.residual_mm, r.redraws
            );
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThaReport {
    pub config: ThaConfig,
    pub rows: Vec<ThaRow>,
}

impl ThaReport {
    pub fn abduction_error(&self) -> Summary {
        summarize(&self.rows.iter().map(|r| r.abduction_err).collect::<Vec<_>>())
    }

    pub fn anteversion_error(&self) -> Summary {
        summarize(&self.rows.iter().map(|r| r.anteversion_err).collect::<Vec<_>>())
    }

    pub fn redraws(&self) -> usize {
        self.rows.iter().map(|r| r.redraws).sum()
    }

    pub const CSV_HEADER: &'static str =
        "config,repeat,shots,dose,abduction_deg,anteversion_deg,abduction_err_deg,anteversion_err_deg,in_safe_zone,residual_mm,redraws";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        self.append_csv_rows(&mut out);
        out
    }

    pub fn append_csv_rows(&self, out: &mut String) {
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                self.config.label,
                r.repeat,
                r.shots,
                r.dose,
                r.abduction,
                r.anteversion,
                r.abduction_err,
                r.anteversion_err,
                r.in_safe_zone,
                r.residual_mm,
                r.redraws
            );
        }
    }
}

fn validate(repeats: usize, noise: &NoiseConfig, jitter: f64) -> Result<(), SimError> {
    if repeats == 0 {
        return Err(SimError::InvalidParams("repeats must be >= 1".into()));
    }
    if !(0.0..45.0).contains(&jitter) {
        return Err(SimError::InvalidParams(format!("view jitter {jitter} deg must be in [0, 45)")));
    }
    noise.localizer.validate()?;
    let sigmas = [noise.pixel_noise_sigma, noise.execution.rot_sigma_deg, noise.execution.trans_sigma_mm];
    if !sigmas.iter().all(|s| *s >= 0.0 && s.is_finite()) {
        return Err(SimError::InvalidParams("noise sigmas must be finite and non-negative".into()));
    }
    Ok(())
}

/// Runs `attempt` with fresh seeds until it succeeds; returns the result and
/// the number of failed attempts.
fn with_redraws<T>(base_seed: u64, mut attempt: impl FnMut(u64) -> Result<T, SimError>) -> Result<(T, usize), SimError> {
    let mut last = None;
    for k in 0..MAX_ATTEMPTS {
        match attempt(mix_seed(base_seed, k as u64)) {
            Ok(v) => return Ok((v, k)),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

fn jitter(rng: &mut ChaCha8Rng, half_width: f64) -> f64 {
    let u: f64 = rng.random_range(-1.0..=1.0);
    u * half_width
}

fn kwire_attempt(config: &KwireConfig, repeat: usize, seed: u64) -> Result<(Session, KwireRow), SimError> {
    let mut s = Session::create(format!("{}-{repeat:04}", config.label), config.noise.session_config(PhantomKind::TubeInCube, seed))?;
    let tube = s.phantom.tube_world().expect("tube phantom");
    let center = (tube.axis_start + tube.axis_end) / 2.0;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EED_u64));
    let j = config.view_jitter_deg;
    // roughly AP and lateral
    for base_az in [0.0, 90.0] {
        let pose = carm_pose(&center, CARM_SOURCE_DISTANCE, base_az + jitter(&mut rng, j), jitter(&mut rng, j))?;
        s.acquire_default(pose)?;
    }
    for shot in 0..KWIRE_SHOTS {
        s.annotate_landmark(shot, TUBE_ENTRY, AnnotationLabel::Entry, ANNOTATOR)?;
        s.annotate_landmark(shot, TUBE_EXIT, AnnotationLabel::Exit, ANNOTATOR)?;
    }
    let plan = s.plan_trajectory([0, 1, 2, 3])?;
    let Outcome::Kwire { error, .. } = s.execute(0, config.noise.execution)? else { unreachable!("wire plan") };
    let row = KwireRow {
        repeat,
        shots: s.shots.len(),
        dose: s.dose(),
        entry_mm: error.entry_dist,
        exit_mm: error.exit_dist,
        mean_mm: error.mean,
        breached: error.breached,
        residual_mm: plan.residual,
        redraws: 0,
    };
    Ok((s, row))
}

/// Two-view K-wire placement into the tube phantom, `repeats` times.
pub fn run_kwire_experiment(config: &KwireConfig) -> Result<(KwireReport, Vec<Session>), SimError> {
    validate(config.repeats, &config.noise, config.view_jitter_deg)?;
    let runs: Vec<(Session, KwireRow)> = (0..config.repeats)
        .into_par_iter()
        .map(|r| {
            let ((s, mut row), redraws) = with_redraws(mix_seed(config.seed, r as u64), |seed| kwire_attempt(config, r, seed))?;
            row.redraws = redraws;
            Ok((s, row))
        })
        .collect::<Result<_, SimError>>()?;
    let (sessions, rows) = runs.into_iter().unzip();
    Ok((KwireReport { config: config.clone(), rows }, sessions))
}

/// Two views per landmark: AP plus an oblique towards the landmark's side.
const THA_VIEWS: [(&str, [(f64, f64); 2]); 4] = [
    (ASIS_LEFT, [(0.0, 0.0), (-40.0, 15.0)]),
    (ASIS_RIGHT, [(0.0, 0.0), (40.0, 15.0)]),
    (PUBIS, [(0.0, 0.0), (25.0, 35.0)]),
    (ACETABULUM, [(0.0, 0.0), (50.0, -15.0)]),
];

fn tha_attempt(config: &ThaConfig, repeat: usize, seed: u64) -> Result<(Session, ThaRow), SimError> {
    let mut s = Session::create(format!("{}-{repeat:04}", config.label), config.noise.session_config(PhantomKind::PelvisLandmarks, seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0x5EED_u64));
    let j = config.view_jitter_deg;
    for (name, views) in THA_VIEWS {
        let x = s.phantom.landmark_world(name).expect("pelvis landmark");
        for (az, el) in views {
            s.acquire_default(carm_pose(&x, CARM_SOURCE_DISTANCE, az + jitter(&mut rng, j), el + jitter(&mut rng, j))?)?;
            let shot = s.shots.len() - 1;
            s.annotate_landmark(shot, name, AnnotationLabel::Landmark(name.to_string()), ANNOTATOR)?;
        }
    }
    let plan = s.plan_cup(config.target)?;
    let Outcome::Cup { achieved, abduction_error, anteversion_error, in_safe_zone, .. } = s.execute(0, config.noise.execution)? else {
        unreachable!("cup plan")
    };
    let row = ThaRow {
        repeat,
        shots: s.shots.len(),
        dose: s.dose(),
        abduction: achieved.abduction,
        anteversion: achieved.anteversion,
        abduction_err: abduction_error,
        anteversion_err: anteversion_error,
        in_safe_zone,
        residual_mm: plan.residual,
        redraws: 0,
    };
    Ok((s, row))
}

/// Cup placement: eight shots of the APP landmarks and acetabulum, plan at
/// the target angles, execute with tremor, score against the true APP.
pub fn run_tha_experiment(config: &ThaConfig) -> Result<(ThaReport, Vec<Session>), SimError> {
    validate(config.repeats, &config.noise, config.view_jitter_deg)?;
    let runs: Vec<(Session, ThaRow)> = (0..config.repeats)
        .into_par_iter()
        .map(|r| {
            let ((s, mut row), redraws) = with_redraws(mix_seed(config.seed, r as u64), |seed| tha_attempt(config, r, seed))?;
            row.redraws = redraws;
            Ok((s, row))
        })
        .collect::<Result<_, SimError>>()?;
    let (sessions, rows) = runs.into_iter().unzip();
    Ok((ThaReport { config: config.clone(), rows }, sessions))
}
