//! Clinical reference frames and outcome metrics.
//!
//! Cup angles are measured against the anterior pelvic plane (APP), spanned by
//! the two anterior superior iliac spines and the pubic symphysis. The default
//! convention is radiographic: anteversion is the angle between the cup axis
//! and the APP, abduction the in-plane angle between the projected axis and
//! the longitudinal axis.

use crate::geom::{RigidTransform, Vec3};
use crate::planning::Trajectory3D;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half of the 2.8 mm K-wire.
pub const DEFAULT_WIRE_RADIUS: f64 = 1.4;
/// Largest wire-to-tube-axis angle for which the end planes are crossed.
pub const MAX_WIRE_TILT_DEG: f64 = 89.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClinicalError {
    #[error("APP landmarks are (nearly) collinear: triangle area {area} mm^2")]
    CollinearLandmarks { area: f64 },
    #[error("cup axis is perpendicular to the APP; abduction is undefined")]
    DegenerateProjection,
    #[error("wire does not cross the tube end planes")]
    NoCrossing,
    #[error("invalid tube: {0}")]
    InvalidTube(String),
    #[error("zero-length cup axis")]
    ZeroAxis,
}

/// Right-handed APP frame: lateral (left to right ASIS), anterior (normal to
/// the APP), longitudinal (pubis towards the ASIS midpoint).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppFrame {
    /// Midpoint of the ASIS landmarks.
    pub origin: Vec3,
    pub lateral: Vec3,
    pub anterior: Vec3,
    pub longitudinal: Vec3,
}

impl AppFrame {
    pub fn transformed(&self, t: &RigidTransform) -> AppFrame {
        AppFrame {
            origin: t.apply(&self.origin),
            lateral: t.apply_vector(&self.lateral),
            anterior: t.apply_vector(&self.anterior),
            longitudinal: t.apply_vector(&self.longitudinal),
        }
    }
}

pub fn app_from_landmarks(asis_left: &Vec3, asis_right: &Vec3, pubis: &Vec3) -> Result<AppFrame, ClinicalError> {
    let area = 0.5 * (asis_right - asis_left).cross(&(pubis - asis_left)).norm();
    if !(area > 1.0) {
        return Err(ClinicalError::CollinearLandmarks { area });
    }
    let lateral = (asis_right - asis_left).normalize();
    let origin = (asis_left + asis_right) * 0.5;
    let up = origin - pubis;
    let longitudinal = (up - lateral * up.dot(&lateral)).normalize();
    let anterior = longitudinal.cross(&lateral);
    Ok(AppFrame { origin, lateral, anterior, longitudinal })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CupOrientation {
    /// Degrees, in `[0, 90]`.
    pub abduction: f64,
    /// Degrees, in `[-90, 90]`.
    pub anteversion: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngleConvention {
    #[default]
    Radiographic,
    /// Inclination measured from the sagittal plane, anteversion in the
    /// sagittal plane from the longitudinal axis.
    Operative,
}

fn canonical_axis(cup_axis: &Vec3, app: &AppFrame) -> Result<Vec3, ClinicalError> {
    let a = cup_axis.try_normalize(1e-12).ok_or(ClinicalError::ZeroAxis)?;
    Ok(if a.dot(&app.lateral) < 0.0 { -a } else { a })
}

pub fn cup_angles(cup_axis: &Vec3, app: &AppFrame) -> Result<CupOrientation, ClinicalError> {
    cup_angles_with(cup_axis, app, AngleConvention::Radiographic)
}

pub fn cup_angles_with(cup_axis: &Vec3, app: &AppFrame, convention: AngleConvention) -> Result<CupOrientation, ClinicalError> {
    let a = canonical_axis(cup_axis, app)?;
    let (x, y, z) = (a.dot(&app.lateral), a.dot(&app.anterior), a.dot(&app.longitudinal));
    if y.abs() > 1.0 - 1e-9 {
        return Err(ClinicalError::DegenerateProjection);
    }
    Ok(match convention {
        AngleConvention::Radiographic => CupOrientation {
            abduction: x.atan2(z.abs()).to_degrees(),
            anteversion: y.clamp(-1.0, 1.0).asin().to_degrees(),
        },
        AngleConvention::Operative => CupOrientation {
            abduction: x.clamp(-1.0, 1.0).asin().to_degrees(),
            anteversion: y.atan2(z.abs()).to_degrees(),
        },
    })
}

/// Cup axis (pointing laterally) with the given radiographic angles, in OR.
pub fn axis_from_angles(cup: &CupOrientation, app: &AppFrame) -> Vec3 {
    let (abd, ant) = (cup.abduction.to_radians(), cup.anteversion.to_radians());
    app.lateral * (abd.sin() * ant.cos()) + app.anterior * ant.sin() + app.longitudinal * (abd.cos() * ant.cos())
}

/// Closed target box for cup orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafeZone {
    pub abduction: (f64, f64),
    pub anteversion: (f64, f64),
}

impl Default for SafeZone {
    /// 40 +/- 10 deg abduction, 15 +/- 10 deg anteversion.
    fn default() -> Self {
        Self { abduction: (30.0, 50.0), anteversion: (5.0, 25.0) }
    }
}

impl SafeZone {
    pub fn contains(&self, cup: &CupOrientation) -> bool {
        (self.abduction.0..=self.abduction.1).contains(&cup.abduction) && (self.anteversion.0..=self.anteversion.1).contains(&cup.anteversion)
    }
}

pub fn in_safe_zone(cup: &CupOrientation) -> bool {
    SafeZone::default().contains(cup)
}

/// Bone-corridor surrogate: a straight tube between two ring centres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TubePhantomSpec {
    pub axis_start: Vec3,
    pub axis_end: Vec3,
    /// mm.
    pub diameter: f64,
}

impl TubePhantomSpec {
    pub fn new(axis_start: Vec3, axis_end: Vec3, diameter: f64) -> Result<Self, ClinicalError> {
        let t = Self { axis_start, axis_end, diameter };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<(), ClinicalError> {
        if !(self.diameter > 0.0) {
            return Err(ClinicalError::InvalidTube(format!("diameter {} must be positive", self.diameter)));
        }
        if !((self.axis_end - self.axis_start).norm() > 0.0) {
            return Err(ClinicalError::InvalidTube("zero-length axis".into()));
        }
        Ok(())
    }

    pub fn axis(&self) -> Vec3 {
        (self.axis_end - self.axis_start).normalize()
    }

    pub fn transformed(&self, t: &RigidTransform) -> Self {
        Self { axis_start: t.apply(&self.axis_start), axis_end: t.apply(&self.axis_end), diameter: self.diameter }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KwireError {
    /// Distance from the entry ring centre where the wire crosses the entry plane, mm.
    pub entry_dist: f64,
    pub exit_dist: f64,
    pub mean: f64,
    /// The wire surface leaves the tube at either end.
    pub breached: bool,
}

pub fn kwire_error(wire: &Trajectory3D, tube: &TubePhantomSpec) -> Result<KwireError, ClinicalError> {
    kwire_error_with_radius(wire, tube, DEFAULT_WIRE_RADIUS)
}

pub fn kwire_error_with_radius(wire: &Trajectory3D, tube: &TubePhantomSpec, wire_radius: f64) -> Result<KwireError, ClinicalError> {
    tube.validate()?;
    let axis = tube.axis();
    let d = wire.direction.try_normalize(1e-12).ok_or(ClinicalError::NoCrossing)?;
    let cos = d.dot(&axis);
    if cos.abs() < MAX_WIRE_TILT_DEG.to_radians().cos() {
        return Err(ClinicalError::NoCrossing);
    }
    let hit = |center: &Vec3| -> f64 {
        let t = (center - wire.point).dot(&axis) / cos;
        (wire.point + d * t - center).norm()
    };
    let entry_dist = hit(&tube.axis_start);
    let exit_dist = hit(&tube.axis_end);
    let limit = tube.diameter / 2.0 - wire_radius;
    Ok(KwireError { entry_dist, exit_dist, mean: 0.5 * (entry_dist + exit_dist), breached: entry_dist > limit || exit_dist > limit })
}
