//! Frames, rigid transforms, unit quaternions and the pinhole projection used
//! for the X-ray source.
//!
//! Conventions:
//! - A [`RigidTransform`] labelled `from -> to` maps coordinates expressed in
//!   `from` into `to`, so `^OR T_X` has `from = X`, `to = OR`.
//! - The X-ray frame has its origin at the source, `+z` pointing from the
//!   source towards the detector, and the detector plane at `z = f`.
//! - Millimetres everywhere, radians internally. Public helpers that take
//!   degrees say so in their name.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality tolerance accepted by [`RigidTransform::new`].
pub const ROTATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeomError {
    #[error("frame mismatch: cannot chain {left} with {right}")]
    FrameMismatch { left: String, right: String },
    #[error("point is behind the X-ray source (depth {depth} mm)")]
    BehindSource { depth: f64 },
    #[error("matrix is not a proper rotation (orthonormality error {error:e})")]
    NotARotation { error: f64 },
    #[error("invalid camera intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("zero-length vector where a direction was required")]
    ZeroVector,
}

/// Coordinate frames of the operating room.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FrameId {
    /// Shared operating-room anchor.
    OR,
    /// X-ray source.
    X,
    /// Visual tracker rigidly mounted on the gantry.
    H,
    /// External infrared tracker.
    IR,
    /// Surgeon head-mounted display.
    S,
    /// Interactive image plane inside a frustum.
    I,
    /// Detector.
    D,
    /// Phantom.
    P,
    /// Virtual tool model frame.
    T,
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Skew-symmetric cross-product matrix `[v]x`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues rotation about a (not necessarily unit) axis.
pub fn axis_angle_matrix(axis: &Vec3, angle: f64) -> Mat3 {
    let n = axis.norm();
    if n == 0.0 || angle == 0.0 {
        return Mat3::identity();
    }
    let k = skew(&(axis / n));
    Mat3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Rotation matrix from a rotation vector (axis times angle, radians).
pub fn exp_so3(rotvec: &Vec3) -> Mat3 {
    axis_angle_matrix(rotvec, rotvec.norm())
}

/// Rotation vector of a rotation matrix. Stable near 0 and near pi.
pub fn log_so3(r: &Mat3) -> Vec3 {
    let q = UnitQuaternion::from_matrix(r);
    q.rotation_vector()
}

/// Rotation angle of a rotation matrix in radians, in `[0, pi]`.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let w = Vec3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin = 0.5 * w.norm();
    let cos = 0.5 * (r.trace() - 1.0);
    sin.atan2(cos)
}

pub fn rot_x_deg(deg: f64) -> Mat3 {
    axis_angle_matrix(&Vec3::x(), deg.to_radians())
}

pub fn rot_y_deg(deg: f64) -> Mat3 {
    axis_angle_matrix(&Vec3::y(), deg.to_radians())
}

pub fn rot_z_deg(deg: f64) -> Mat3 {
    axis_angle_matrix(&Vec3::z(), deg.to_radians())
}

/// `max |R^T R - I|` combined with `|det R - 1|`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    let g = r.transpose() * r - Mat3::identity();
    g.abs().max().max((r.determinant() - 1.0).abs())
}

/// One Newton step of the polar decomposition. Pulls a nearly orthonormal
/// matrix back onto SO(3) with error quadratic in the input drift.
pub fn reorthonormalize(r: &Mat3) -> Mat3 {
    r * (Mat3::identity() * 3.0 - r.transpose() * r) * 0.5
}

/// Unit quaternion `s + v`, canonicalised to `s >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitQuaternion {
    pub s: f64,
    pub v: Vec3,
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        Self { s: 1.0, v: Vec3::zeros() }
    }

    /// Normalises and canonicalises the given components.
    pub fn new(s: f64, v: Vec3) -> Result<Self, GeomError> {
        let n = (s * s + v.norm_squared()).sqrt();
        if !(n > 0.0) || !n.is_finite() {
            return Err(GeomError::ZeroVector);
        }
        Ok(Self { s: s / n, v: v / n }.canonical())
    }

    pub fn canonical(self) -> Self {
        if self.s < 0.0 {
            Self { s: -self.s, v: -self.v }
        } else {
            self
        }
    }

    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Result<Self, GeomError> {
        let n = axis.norm();
        if n == 0.0 {
            return Err(GeomError::ZeroVector);
        }
        let half = 0.5 * angle;
        Ok(Self { s: half.cos(), v: axis / n * half.sin() }.canonical())
    }

    /// Shepperd's method: picks the numerically largest component first.
    pub fn from_matrix(r: &Mat3) -> Self {
        let tr = r.trace();
        let (s, x, y, z);
        if tr >= r[(0, 0)] && tr >= r[(1, 1)] && tr >= r[(2, 2)] {
            let t = (1.0 + tr).sqrt() * 2.0;
            s = 0.25 * t;
            x = (r[(2, 1)] - r[(1, 2)]) / t;
            y = (r[(0, 2)] - r[(2, 0)]) / t;
            z = (r[(1, 0)] - r[(0, 1)]) / t;
        } else if r[(0, 0)] >= r[(1, 1)] && r[(0, 0)] >= r[(2, 2)] {
            let t = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            s = (r[(2, 1)] - r[(1, 2)]) / t;
            x = 0.25 * t;
            y = (r[(0, 1)] + r[(1, 0)]) / t;
            z = (r[(0, 2)] + r[(2, 0)]) / t;
        } else if r[(1, 1)] >= r[(2, 2)] {
            let t = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            s = (r[(0, 2)] - r[(2, 0)]) / t;
            x = (r[(0, 1)] + r[(1, 0)]) / t;
            y = 0.25 * t;
            z = (r[(1, 2)] + r[(2, 1)]) / t;
        } else {
            let t = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            s = (r[(1, 0)] - r[(0, 1)]) / t;
            x = (r[(0, 2)] + r[(2, 0)]) / t;
            y = (r[(1, 2)] + r[(2, 1)]) / t;
            z = 0.25 * t;
        }
        let n = (s * s + x * x + y * y + z * z).sqrt();
        Self { s: s / n, v: Vec3::new(x, y, z) / n }.canonical()
    }

    pub fn to_matrix(&self) -> Mat3 {
        let (w, x, y, z) = (self.s, self.v.x, self.v.y, self.v.z);
        Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Hamilton product `self * rhs`, canonicalised.
    pub fn mul(&self, rhs: &Self) -> Self {
        let s = self.s * rhs.s - self.v.dot(&rhs.v);
        let v = rhs.v * self.s + self.v * rhs.s + self.v.cross(&rhs.v);
        Self { s, v }.canonical()
    }

    pub fn conjugate(&self) -> Self {
        Self { s: self.s, v: -self.v }
    }

    pub fn angle(&self) -> f64 {
        2.0 * self.v.norm().atan2(self.s.abs())
    }

    pub fn rotation_vector(&self) -> Vec3 {
        let n = self.v.norm();
        if n < 1e-300 {
            return Vec3::zeros();
        }
        let q = self.canonical();
        q.v / n * (2.0 * n.atan2(q.s))
    }

    /// Angle in radians between the rotations represented by two quaternions.
    pub fn angle_to(&self, other: &Self) -> f64 {
        let d = self.s * other.s + self.v.dot(&other.v);
        2.0 * d.abs().min(1.0).acos()
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.s, self.v.x, self.v.y, self.v.z]
    }
}

/// SE(3) pose mapping coordinates from frame `from` into frame `to`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidTransform {
    pub from: FrameId,
    pub to: FrameId,
    pub rotation: Mat3,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(from: FrameId, to: FrameId, rotation: Mat3, translation: Vec3) -> Result<Self, GeomError> {
        let error = orthonormality_error(&rotation);
        if !(error <= ROTATION_TOLERANCE) || !translation.iter().all(|t| t.is_finite()) {
            return Err(GeomError::NotARotation { error });
        }
        Ok(Self { from, to, rotation, translation })
    }

    pub fn identity(frame: FrameId) -> Self {
        Self::identity_between(frame, frame)
    }

    pub fn identity_between(from: FrameId, to: FrameId) -> Self {
        Self { from, to, rotation: Mat3::identity(), translation: Vec3::zeros() }
    }

    pub fn from_quaternion(from: FrameId, to: FrameId, q: &UnitQuaternion, translation: Vec3) -> Self {
        Self { from, to, rotation: q.to_matrix(), translation }
    }

    pub fn from_rotation_vector(from: FrameId, to: FrameId, rotvec: &Vec3, translation: Vec3) -> Self {
        Self { from, to, rotation: exp_so3(rotvec), translation }
    }

    /// Same pose, different frame labels.
    pub fn relabel(mut self, from: FrameId, to: FrameId) -> Self {
        self.from = from;
        self.to = to;
        self
    }

    /// `self ∘ rhs`: first `rhs`, then `self`. Requires `self.from == rhs.to`.
    pub fn compose(&self, rhs: &RigidTransform) -> Result<RigidTransform, GeomError> {
        if self.from != rhs.to {
            return Err(GeomError::FrameMismatch {
                left: format!("{}<-{}", self.to, self.from),
                right: format!("{}<-{}", rhs.to, rhs.from),
            });
        }
        Ok(RigidTransform {
            from: rhs.from,
            to: self.to,
            rotation: reorthonormalize(&(self.rotation * rhs.rotation)),
            translation: self.rotation * rhs.translation + self.translation,
        })
    }

    pub fn invert(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform { from: self.to, to: self.from, rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn apply(&self, point: &Vec3) -> Vec3 {
        self.rotation * point + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    pub fn quaternion(&self) -> UnitQuaternion {
        UnitQuaternion::from_matrix(&self.rotation)
    }

    /// Rotation angle in radians.
    pub fn angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Unit rotation axis, or `None` for a (numerically) pure translation.
    pub fn axis(&self) -> Option<Vec3> {
        let w = log_so3(&self.rotation);
        let n = w.norm();
        (n > 1e-12).then(|| w / n)
    }

    /// `^OR T_X` for a source at `source` whose viewing axis passes through
    /// `target`. `up` fixes the roll; any vector not parallel to the axis works.
    pub fn look_at(source: &Vec3, target: &Vec3, up: &Vec3) -> Result<RigidTransform, GeomError> {
        let z = (target - source).try_normalize(1e-12).ok_or(GeomError::ZeroVector)?;
        let x = up.cross(&z).try_normalize(1e-9).or_else(|| Vec3::x().cross(&z).try_normalize(1e-9)).ok_or(GeomError::ZeroVector)?;
        let y = z.cross(&x);
        let r = Mat3::from_columns(&[x, y, z]);
        RigidTransform::new(FrameId::X, FrameId::OR, r, *source)
    }

    /// Column `k` of the rotation, i.e. axis `k` of `from` expressed in `to`.
    pub fn column(&self, k: usize) -> Vec3 {
        self.rotation.column(k).into_owned()
    }
}

/// Ideal pinhole model of the C-arm: source-to-detector distance `f`,
/// square detector pixels of size `pixel_pitch`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    /// Source-to-detector distance, mm.
    pub focal_length: f64,
    /// Detector pixel size, mm/pixel.
    pub pixel_pitch: f64,
    pub principal_point: Vec2,
    pub image_size: Vec2,
}

impl CameraIntrinsics {
    pub fn new(focal_length: f64, pixel_pitch: f64, principal_point: Vec2, image_size: Vec2) -> Result<Self, GeomError> {
        if !(focal_length > 0.0 && focal_length.is_finite()) {
            return Err(GeomError::InvalidIntrinsics(format!("focal length {focal_length} must be positive")));
        }
        if !(pixel_pitch > 0.0 && pixel_pitch.is_finite()) {
            return Err(GeomError::InvalidIntrinsics(format!("pixel pitch {pixel_pitch} must be positive")));
        }
        if !(image_size.x > 0.0 && image_size.y > 0.0) {
            return Err(GeomError::InvalidIntrinsics("image size must be positive".into()));
        }
        let k = Self { focal_length, pixel_pitch, principal_point, image_size };
        if !k.contains(&principal_point) {
            return Err(GeomError::InvalidIntrinsics("principal point outside the image".into()));
        }
        Ok(k)
    }

    /// Centred principal point.
    pub fn centered(focal_length: f64, pixel_pitch: f64, width: f64, height: f64) -> Result<Self, GeomError> {
        Self::new(focal_length, pixel_pitch, Vec2::new(width / 2.0, height / 2.0), Vec2::new(width, height))
    }

    /// Focal length in pixels.
    pub fn focal_pixels(&self) -> f64 {
        self.focal_length / self.pixel_pitch
    }

    pub fn matrix(&self) -> Mat3 {
        let fp = self.focal_pixels();
        Mat3::new(fp, 0.0, self.principal_point.x, 0.0, fp, self.principal_point.y, 0.0, 0.0, 1.0)
    }

    /// Image spans `[0, width] x [0, height]` in continuous pixel coordinates.
    pub fn contains(&self, px: &Vec2) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x <= self.image_size.x && px.y <= self.image_size.y
    }

    /// `K^-1 [u, v, 1]^T`: direction in the X-ray frame with unit depth.
    pub fn back_project(&self, px: &Vec2) -> Vec3 {
        let fp = self.focal_pixels();
        Vec3::new((px.x - self.principal_point.x) / fp, (px.y - self.principal_point.y) / fp, 1.0)
    }

    /// Image corners in order (0,0), (w,0), (w,h), (0,h).
    pub fn corners(&self) -> [Vec2; 4] {
        let (w, h) = (self.image_size.x, self.image_size.y);
        [Vec2::new(0.0, 0.0), Vec2::new(w, 0.0), Vec2::new(w, h), Vec2::new(0.0, h)]
    }
}

/// Half-line from `origin` along unit `direction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3) -> Result<Self, GeomError> {
        let n = direction.norm();
        if !(n > 0.0) || !n.is_finite() {
            return Err(GeomError::ZeroVector);
        }
        Ok(Self { origin, direction: direction / n })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Distance from a point to the infinite line carrying the ray.
    pub fn distance_to(&self, p: &Vec3) -> f64 {
        let d = p - self.origin;
        (d - self.direction * d.dot(&self.direction)).norm()
    }
}

/// Perspective projection of an OR-frame point through a source whose
/// extrinsic `pose` maps OR into X.
pub fn project(k: &CameraIntrinsics, pose: &RigidTransform, x: &Vec3) -> Result<Vec2, GeomError> {
    if pose.from != FrameId::OR || pose.to != FrameId::X {
        return Err(GeomError::FrameMismatch {
            left: format!("{}<-{}", FrameId::X, FrameId::OR),
            right: format!("{}<-{}", pose.to, pose.from),
        });
    }
    let p = pose.apply(x);
    if !(p.z > 0.0) {
        return Err(GeomError::BehindSource { depth: p.z });
    }
    let h = k.matrix() * p;
    Ok(Vec2::new(h.x / h.z, h.y / h.z))
}
