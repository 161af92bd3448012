//! Hand-eye co-calibration of the X-ray source with the gantry-mounted
//! tracker: solves `A X = X B` for `X = ^X T_H`.
//!
//! The rotation is recovered first as the unit quaternion minimising
//! `||M q||^2`, where `M` stacks one 4x4 block per motion pair, then the
//! translation from the stacked linear system `(R_A - I) t_X = R_X t_B - t_A`.
//!
//! `A` is the relative motion of the source between two instants (frames
//! `X -> X`), `B` the relative motion of the tracker over the same interval
//! (`H -> H`).

use crate::geom::{exp_so3, rotation_angle, skew, FrameId, GeomError, Mat3, RigidTransform, UnitQuaternion, Vec3};
use nalgebra::{DMatrix, DVector, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Two rotation axes closer than this are treated as parallel.
pub const AXIS_PARALLEL_DEG: f64 = 1.0;
/// Smallest admissible singular value of the stacked `(R_A - I)` system.
pub const TRANSLATION_SIGMA_MIN: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HandEyeError {
    #[error("insufficient data: need at least {needed} pose pairs, got {got}")]
    InsufficientData { needed: usize, got: usize },
    #[error("degenerate motion: {0}")]
    DegenerateMotion(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// One relative-motion correspondence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosePair {
    pub a: RigidTransform,
    pub b: RigidTransform,
}

impl PosePair {
    pub fn new(a: RigidTransform, b: RigidTransform) -> Self {
        Self { a: a.relabel(FrameId::X, FrameId::X), b: b.relabel(FrameId::H, FrameId::H) }
    }

    /// Builds the pair from absolute poses at two instants:
    /// `A = ^IR T_X(t1)^-1 ^IR T_X(t0)` and `B = ^OR T_H(t1)^-1 ^OR T_H(t0)`.
    pub fn from_absolute(
        ir_x_t0: &RigidTransform,
        ir_x_t1: &RigidTransform,
        or_h_t0: &RigidTransform,
        or_h_t1: &RigidTransform,
    ) -> Result<Self, HandEyeError> {
        let a = ir_x_t1.invert().compose(ir_x_t0)?;
        let b = or_h_t1.invert().compose(or_h_t0)?;
        Ok(Self::new(a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// `^X T_H`.
    pub x: RigidTransform,
    /// RMS of `angle(R_A R_X, R_X R_B)`, degrees.
    pub rotation_residual: f64,
    /// RMS of `||R_A t_X + t_A - R_X t_B - t_X||`, mm.
    pub translation_residual: f64,
    pub n_pairs: usize,
}

impl CalibrationResult {
    /// A perfect calibration, used when the true mounting is known.
    pub fn exact(x: RigidTransform) -> Self {
        Self { x, rotation_residual: 0.0, translation_residual: 0.0, n_pairs: 0 }
    }
}

/// Gaussian perturbation applied independently to every `A` and `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Per-axis std of the rotation-vector perturbation, degrees.
    pub rot_sigma: f64,
    /// Per-axis std of the translation perturbation, mm.
    pub trans_sigma: f64,
    pub seed: u64,
}

impl NoiseModel {
    pub fn noiseless(seed: u64) -> Self {
        Self { rot_sigma: 0.0, trans_sigma: 0.0, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionRange {
    /// Largest rotation angle of a generated motion, degrees.
    pub rot: f64,
    /// Largest absolute translation per axis, mm.
    pub trans: f64,
}

impl Default for MotionRange {
    fn default() -> Self {
        Self { rot: 60.0, trans: 200.0 }
    }
}

/// The 4x4 block linking `q_X` to one pair: `M q_X = q_A q_X - q_X q_B`.
/// The scalar row comes from `s_A s_X - v_A.v_X = s_X s_B - v_X.v_B`, hence
/// the minus sign on `v_A - v_B`.
fn pair_block(qa: &UnitQuaternion, qb: &UnitQuaternion) -> Matrix4<f64> {
    let ds = qa.s - qb.s;
    let dv = qa.v - qb.v;
    let cross = Mat3::identity() * ds + skew(&(qa.v + qb.v));
    let mut m = Matrix4::zeros();
    m[(0, 0)] = ds;
    for i in 0..3 {
        m[(0, i + 1)] = -dv[i];
        m[(i + 1, 0)] = dv[i];
        for j in 0..3 {
            m[(i + 1, j + 1)] = cross[(i, j)];
        }
    }
    m
}

fn check_axes(pairs: &[PosePair]) -> Result<(), HandEyeError> {
    let axes: Vec<Vec3> = pairs.iter().filter(|p| p.a.angle() > 1e-9).filter_map(|p| p.a.axis()).collect();
    let limit = AXIS_PARALLEL_DEG.to_radians().sin();
    let spread = axes.iter().enumerate().any(|(i, u)| axes[i + 1..].iter().any(|w| u.cross(w).norm() > limit));
    if spread {
        Ok(())
    } else {
        Err(HandEyeError::DegenerateMotion(format!(
            "all rotation axes lie within {AXIS_PARALLEL_DEG} deg of each other"
        )))
    }
}

/// Rotation part of the hand-eye problem.
pub fn solve_rotation(pairs: &[PosePair]) -> Result<UnitQuaternion, HandEyeError> {
    if pairs.len() < 2 {
        return Err(HandEyeError::InsufficientData { needed: 2, got: pairs.len() });
    }
    check_axes(pairs)?;

    let mut m = DMatrix::<f64>::zeros(4 * pairs.len(), 4);
    for (i, p) in pairs.iter().enumerate() {
        let block = pair_block(&p.a.quaternion(), &p.b.quaternion());
        m.view_mut((4 * i, 0), (4, 4)).copy_from(&block);
    }

    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let (smallest, second, largest) = (order[0], order[1], order[3]);
    let sigma_max = svd.singular_values[largest];
    if sigma_max == 0.0 || svd.singular_values[second] <= 1e-9 * sigma_max {
        return Err(HandEyeError::DegenerateMotion("rotation null space has dimension > 1".into()));
    }
    let row = v_t.row(smallest);
    Ok(UnitQuaternion::new(row[0], Vec3::new(row[1], row[2], row[3]))?)
}

/// Translation part, given the rotation `r_x`.
pub fn solve_translation(pairs: &[PosePair], r_x: &Mat3) -> Result<Vec3, HandEyeError> {
    if pairs.len() < 2 {
        return Err(HandEyeError::InsufficientData { needed: 2, got: pairs.len() });
    }
    let n = pairs.len();
    let mut c = DMatrix::<f64>::zeros(3 * n, 3);
    let mut d = DVector::<f64>::zeros(3 * n);
    for (i, p) in pairs.iter().enumerate() {
        c.view_mut((3 * i, 0), (3, 3)).copy_from(&(p.a.rotation - Mat3::identity()));
        d.rows_mut(3 * i, 3).copy_from(&(r_x * p.b.translation - p.a.translation));
    }
    let sigma_min = c.singular_values().min();
    if !(sigma_min > TRANSLATION_SIGMA_MIN) {
        return Err(HandEyeError::DegenerateMotion(format!(
            "stacked (R_A - I) has rank < 3 (sigma_min = {sigma_min:e})"
        )));
    }
    // Householder QR: nalgebra's SVD solve loses several digits here
    let qr = c.qr();
    let rhs = qr.q().transpose() * d;
    let t = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or_else(|| HandEyeError::DegenerateMotion("singular triangular factor".into()))?;
    Ok(Vec3::new(t[0], t[1], t[2]))
}

/// Per-pair residuals `(rotation degrees, translation mm)` for a candidate `X`.
pub fn pair_residuals(pairs: &[PosePair], x: &RigidTransform) -> Vec<(f64, f64)> {
    pairs
        .iter()
        .map(|p| {
            let lhs = p.a.rotation * x.rotation;
            let rhs = x.rotation * p.b.rotation;
            let rot = rotation_angle(&(lhs.transpose() * rhs)).to_degrees();
            let tr = (p.a.rotation * x.translation + p.a.translation - x.rotation * p.b.translation - x.translation).norm();
            (rot, tr)
        })
        .collect()
}

fn rms(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v * v, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Rotation first, then translation.
pub fn calibrate(pairs: &[PosePair]) -> Result<CalibrationResult, HandEyeError> {
    let q = solve_rotation(pairs)?;
    let r_x = q.to_matrix();
    let t_x = solve_translation(pairs, &r_x)?;
    let x = RigidTransform::new(FrameId::H, FrameId::X, r_x, t_x)?;
    let res = pair_residuals(pairs, &x);
    Ok(CalibrationResult {
        x,
        rotation_residual: rms(res.iter().map(|r| r.0)),
        translation_residual: rms(res.iter().map(|r| r.1)),
        n_pairs: pairs.len(),
    })
}

/// Rotation (degrees) and translation (mm) error of an estimate against truth.
pub fn transform_error(estimate: &RigidTransform, truth: &RigidTransform) -> (f64, f64) {
    let rot = rotation_angle(&(estimate.rotation * truth.rotation.transpose())).to_degrees();
    (rot, (estimate.translation - truth.translation).norm())
}

fn perturb(t: &RigidTransform, rng: &mut ChaCha8Rng, rot: &Normal<f64>, trans: &Normal<f64>) -> RigidTransform {
    let w = Vec3::new(rot.sample(rng), rot.sample(rng), rot.sample(rng));
    let dt = Vec3::new(trans.sample(rng), trans.sample(rng), trans.sample(rng));
    let noise = RigidTransform::from_rotation_vector(t.to, t.to, &w, dt);
    noise.compose(t).expect("noise is expressed in the target frame")
}

/// Synthetic pairs: random motions `A`, `B = X^-1 A X`, then independent
/// left-multiplied noise on both. Deterministic in `noise.seed`.
pub fn generate_pose_pairs(
    ground_truth_x: &RigidTransform,
    n: usize,
    motion_range: MotionRange,
    noise: NoiseModel,
) -> Result<Vec<PosePair>, HandEyeError> {
    if n < 2 {
        return Err(HandEyeError::InvalidArgument(format!("need n >= 2 pairs, got {n}")));
    }
    if !(motion_range.rot > 0.0) || motion_range.rot >= 180.0 || motion_range.trans < 0.0 {
        return Err(HandEyeError::InvalidArgument("motion range must satisfy 0 < rot < 180 deg, trans >= 0".into()));
    }
    if !(noise.rot_sigma >= 0.0 && noise.trans_sigma >= 0.0) {
        return Err(HandEyeError::InvalidArgument("noise sigmas must be non-negative".into()));
    }
    let x = ground_truth_x.relabel(FrameId::H, FrameId::X);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
    let rot_noise = Normal::new(0.0, noise.rot_sigma.to_radians()).expect("sigma checked");
    let trans_noise = Normal::new(0.0, noise.trans_sigma).expect("sigma checked");
    let max_angle = motion_range.rot.to_radians();

    let mut pairs = Vec::with_capacity(n);
    for _ in 0..n {
        let axis: [f64; 3] = UnitSphere.sample(&mut rng);
        let angle = rng.random_range(0.0..=max_angle);
        let t = Vec3::from_fn(|_, _| rng.random_range(-motion_range.trans..=motion_range.trans));
        let a = RigidTransform::from_rotation_vector(FrameId::X, FrameId::X, &(Vec3::from(axis) * angle), t);
        let b = x.invert().compose(&a)?.compose(&x)?;
        let a = perturb(&a, &mut rng, &rot_noise, &trans_noise);
        let b = perturb(&b, &mut rng, &rot_noise, &trans_noise);
        pairs.push(PosePair { a, b });
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingRow {
    pub n: usize,
    /// Draws that produced a calibration.
    pub draws: usize,
    /// Draws rejected as degenerate, excluded from the statistics.
    pub degenerate: usize,
    /// Error against ground truth when known, otherwise the pair residual.
    pub mean_rot_err: f64,
    pub sd_rot_err: f64,
    pub mean_trans_err: f64,
    pub sd_trans_err: f64,
    /// Residuals over the sampled pairs, always reported.
    pub mean_rot_residual: f64,
    pub mean_trans_residual: f64,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn draw_seed(seed: u64, draw: u64) -> u64 {
    seed ^ draw.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Error versus number of pairs: for every `N`, calibrate on `repeats`
/// random `N`-subsets and aggregate. `N == pairs.len()` uses every pair once,
/// in order. Draws run in parallel and are aggregated by draw index.
pub fn sampling_experiment(
    pairs: &[PosePair],
    sample_sizes: &[usize],
    repeats: usize,
    ground_truth: Option<&RigidTransform>,
    seed: u64,
) -> Result<Vec<SamplingRow>, HandEyeError> {
    if repeats < 1 {
        return Err(HandEyeError::InvalidArgument("repeats must be >= 1".into()));
    }
    if let Some(&too_big) = sample_sizes.iter().find(|&&n| n > pairs.len()) {
        return Err(HandEyeError::InvalidArgument(format!("sample size {too_big} exceeds {} available pairs", pairs.len())));
    }

    let mut rows = Vec::with_capacity(sample_sizes.len());
    for (size_idx, &n) in sample_sizes.iter().enumerate() {
        let outcomes: Vec<Option<(f64, f64, f64, f64)>> = (0..repeats)
            .into_par_iter()
            .map(|r| {
                let subset: Vec<PosePair> = if n == pairs.len() {
                    pairs.to_vec()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(draw_seed(seed, (size_idx * repeats + r) as u64));
                    let mut idx = rand::seq::index::sample(&mut rng, pairs.len(), n).into_vec();
                    idx.sort_unstable();
                    idx.into_iter().map(|i| pairs[i]).collect()
                };
                let cal = calibrate(&subset).ok()?;
                let (er, et) = match ground_truth {
                    Some(gt) => transform_error(&cal.x, gt),
                    None => (cal.rotation_residual, cal.translation_residual),
                };
                Some((er, et, cal.rotation_residual, cal.translation_residual))
            })
            .collect();

        let ok: Vec<_> = outcomes.iter().flatten().copied().collect();
        let (mean_rot_err, sd_rot_err) = mean_sd(&ok.iter().map(|o| o.0).collect::<Vec<_>>());
        let (mean_trans_err, sd_trans_err) = mean_sd(&ok.iter().map(|o| o.1).collect::<Vec<_>>());
        let (mean_rot_residual, _) = mean_sd(&ok.iter().map(|o| o.2).collect::<Vec<_>>());
        let (mean_trans_residual, _) = mean_sd(&ok.iter().map(|o| o.3).collect::<Vec<_>>());
        rows.push(SamplingRow {
            n,
            draws: ok.len(),
            degenerate: repeats - ok.len(),
            mean_rot_err,
            sd_rot_err,
            mean_trans_err,
            sd_trans_err,
            mean_rot_residual,
            mean_trans_residual,
        });
    }
    Ok(rows)
}

/// Default ground-truth mounting used by the examples and the CLI:
/// marker offset (10, 20, 30) mm, turned 30 deg about a skew axis.
pub fn default_mounting() -> RigidTransform {
    RigidTransform::new(FrameId::H, FrameId::X, exp_so3(&(Vec3::new(0.2, -0.1, 1.0).normalize() * 30f64.to_radians())), Vec3::new(10.0, 20.0, 30.0))
        .expect("valid rotation")
}
