use super::SimError;
use crate::geom::{FrameId, RigidTransform, Vec3};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, UnitSphere};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

/// Pose error of the tracker that reports C-arm poses in the OR frame.
///
/// Rotation errors have a uniformly random axis and a folded-Gaussian angle
/// whose mean is `rot_noise_norm`. Translation errors take their direction
/// from an anisotropic Gaussian shaped by `per_axis_trans` and a
/// folded-Gaussian length with mean `trans_noise_norm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizerModel {
    /// Mean rotation error, degrees.
    pub rot_noise_norm: f64,
    /// Mean translation error, mm.
    pub trans_noise_norm: f64,
    /// Per-axis translation scale, mm.
    pub per_axis_trans: Vec3,
    pub seed: u64,
}

impl Default for LocalizerModel {
    fn default() -> Self {
        Self { rot_noise_norm: 0.75, trans_noise_norm: 8.0, per_axis_trans: Vec3::new(4.0, 5.0, 4.8), seed: 0 }
    }
}

impl LocalizerModel {
    pub fn perfect() -> Self {
        Self { rot_noise_norm: 0.0, trans_noise_norm: 0.0, per_axis_trans: Vec3::zeros(), seed: 0 }
    }

    /// Same shape, both norms multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            rot_noise_norm: self.rot_noise_norm * factor,
            trans_noise_norm: self.trans_noise_norm * factor,
            per_axis_trans: self.per_axis_trans * factor,
            seed: self.seed,
        }
    }

    pub fn is_perfect(&self) -> bool {
        self.rot_noise_norm == 0.0 && self.trans_noise_norm == 0.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let ok = |v: f64| v >= 0.0 && v.is_finite();
        if !ok(self.rot_noise_norm) || !ok(self.trans_noise_norm) || !self.per_axis_trans.iter().all(|&v| ok(v)) {
            return Err(SimError::InvalidParams("localizer noise norms must be finite and non-negative".into()));
        }
        if self.trans_noise_norm > 0.0 {
            let shape = self.per_axis_trans.norm();
            if (shape - self.trans_noise_norm).abs() > 0.1 * self.trans_noise_norm {
                return Err(SimError::InvalidParams(format!(
                    "per-axis translation norm {shape:.3} mm inconsistent with trans_noise_norm {} mm",
                    self.trans_noise_norm
                )));
            }
        }
        Ok(())
    }

    /// One error transform `OR -> OR`, applied on the left of a true pose.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> RigidTransform {
        let axis: [f64; 3] = UnitSphere.sample(rng);
        let angle = folded_normal(rng, self.rot_noise_norm.to_radians());
        let rotvec = Vec3::from(axis) * angle;

        let g = Vec3::from_fn(|i, _| {
            let z: f64 = StandardNormal.sample(rng);
            z * self.per_axis_trans[i]
        });
        let length = folded_normal(rng, self.trans_noise_norm);
        let translation = g.try_normalize(1e-300).map_or(Vec3::zeros(), |d| d * length);
        RigidTransform::from_rotation_vector(FrameId::OR, FrameId::OR, &rotvec, translation)
    }
}

/// `|N(0, s)|` scaled so that its mean is `mean`.
fn folded_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64) -> f64 {
    if mean == 0.0 {
        return 0.0;
    }
    let sigma = mean * FRAC_PI_2.sqrt();
    Normal::new(0.0, sigma).expect("sigma is finite and positive").sample(rng).abs()
}
