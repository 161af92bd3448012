//! The flying frustum: one X-ray acquisition kept at its source pose, with
//! the image displayable on any cross-section between source and detector.
//!
//! The near-plane image at distance `n` is the detector image scaled by
//! `n / f` about the principal point, which keeps it on the geometric
//! cross-section of the viewing pyramid.

use crate::geom::{project, CameraIntrinsics, FrameId, GeomError, RigidTransform, Vec2, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Monte-Carlo sample count used by [`interlock`] unless overridden.
pub const INTERLOCK_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrustumError {
    #[error("near plane n = {n} mm outside [0, f = {f}] mm")]
    NearPlaneOutOfRange { n: f64, f: f64 },
    #[error("pixel ({x}, {y}) outside the image")]
    PixelOutOfBounds { x: f64, y: f64 },
    #[error("at least one frustum is required")]
    NoFrustums,
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Opaque handle to the acquired image plus its acquisition time on the
/// simulator clock.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub handle: String,
    pub timestamp_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlyingFrustum {
    pub intrinsics: CameraIntrinsics,
    /// `^OR T_X` at acquisition time.
    pub source_pose: RigidTransform,
    pub image_ref: ImageRef,
    /// Near-plane distance from the source, mm, in `[0, f]`.
    pub near_plane: f64,
}

impl FlyingFrustum {
    /// New frustum with the image at the detector (`n = f`).
    pub fn new(intrinsics: CameraIntrinsics, source_pose: RigidTransform, image_ref: ImageRef) -> Result<Self, FrustumError> {
        if source_pose.from != FrameId::X || source_pose.to != FrameId::OR {
            return Err(GeomError::FrameMismatch {
                left: "OR<-X".into(),
                right: format!("{}<-{}", source_pose.to, source_pose.from),
            }
            .into());
        }
        let near_plane = intrinsics.focal_length;
        Ok(Self { intrinsics, source_pose, image_ref, near_plane })
    }

    pub fn with_near_plane(mut self, n: f64) -> Result<Self, FrustumError> {
        self.set_near_plane(n)?;
        Ok(self)
    }

    pub fn set_near_plane(&mut self, n: f64) -> Result<(), FrustumError> {
        check_near_plane(n, self.intrinsics.focal_length)?;
        self.near_plane = n;
        Ok(())
    }

    /// `n / f`.
    pub fn scale(&self) -> f64 {
        self.near_plane / self.intrinsics.focal_length
    }

    /// `^X T_OR`.
    pub fn extrinsic(&self) -> RigidTransform {
        self.source_pose.invert()
    }

    pub fn source_position(&self) -> Vec3 {
        self.source_pose.translation
    }

    /// Unit viewing axis in OR (third rotation column).
    pub fn viewing_axis(&self) -> Vec3 {
        self.source_pose.column(2)
    }

    /// Inside the (unbounded) viewing pyramid: positive depth and projecting
    /// onto the detector.
    pub fn contains(&self, x: &Vec3) -> bool {
        match project(&self.intrinsics, &self.extrinsic(), x) {
            Ok(px) => self.intrinsics.contains(&px),
            Err(_) => false,
        }
    }
}

fn check_near_plane(n: f64, f: f64) -> Result<(), FrustumError> {
    if n >= 0.0 && n <= f {
        Ok(())
    } else {
        Err(FrustumError::NearPlaneOutOfRange { n, f })
    }
}

/// `^OR T_I`: the source pose shifted by `n` along its viewing axis.
pub fn image_pose(fr: &FlyingFrustum) -> Result<RigidTransform, FrustumError> {
    check_near_plane(fr.near_plane, fr.intrinsics.focal_length)?;
    let offset = RigidTransform::new(FrameId::I, FrameId::X, crate::geom::Mat3::identity(), Vec3::new(0.0, 0.0, fr.near_plane))?;
    Ok(fr.source_pose.compose(&offset)?)
}

fn scale_about_principal_point(px: &Vec2, fr: &FlyingFrustum) -> Vec2 {
    let c = fr.intrinsics.principal_point;
    c + (px - c) * fr.scale()
}

/// Maps an acquisition-image pixel to its position on the near plane,
/// scaled by `n / f` about the principal point.
pub fn scale_to_near_plane(x_i: &Vec2, fr: &FlyingFrustum) -> Result<Vec2, FrustumError> {
    check_near_plane(fr.near_plane, fr.intrinsics.focal_length)?;
    if !fr.intrinsics.contains(x_i) {
        return Err(FrustumError::PixelOutOfBounds { x: x_i.x, y: x_i.y });
    }
    Ok(scale_about_principal_point(x_i, fr))
}

/// Projection of an OR point onto the frustum's near-plane image.
pub fn frustum_project(fr: &FlyingFrustum, x: &Vec3) -> Result<Vec2, FrustumError> {
    check_near_plane(fr.near_plane, fr.intrinsics.focal_length)?;
    let px = project(&fr.intrinsics, &fr.extrinsic(), x)?;
    Ok(scale_about_principal_point(&px, fr))
}

/// C-arm repositioning needed to move from `current` to `target`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrustumAlignment {
    /// Degrees.
    pub rot_offset: f64,
    /// Millimetres.
    pub trans_offset: f64,
    /// Rotation axis of the correction, in the target source frame. `+z` when
    /// no rotation is needed.
    pub axis_hint: Vec3,
}

pub fn alignment_to(current: &FlyingFrustum, target: &FlyingFrustum) -> FrustumAlignment {
    let delta = target
        .source_pose
        .invert()
        .compose(&current.source_pose)
        .expect("both source poses map X into OR");
    FrustumAlignment {
        rot_offset: delta.angle().to_degrees(),
        trans_offset: delta.translation.norm(),
        axis_hint: delta.axis().unwrap_or_else(Vec3::z),
    }
}

/// Axis-aligned box in OR, mm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn centered(center: Vec3, half: Vec3) -> Self {
        Self { min: center - half, max: center + half }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub i: usize,
    pub j: usize,
    /// Fraction of the box inside both frustums.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    /// Fraction of the box inside at least one frustum.
    pub coverage: f64,
    /// Fraction of the box inside each frustum.
    pub per_frustum: Vec<f64>,
    pub pairwise: Vec<PairOverlap>,
    pub samples: usize,
}

/// Seeded Monte-Carlo coverage of a box by several viewing pyramids.
pub fn interlock(frustums: &[FlyingFrustum], extent: &Aabb) -> Result<CoverageReport, FrustumError> {
    interlock_with(frustums, extent, INTERLOCK_SAMPLES, 0x1f1f_0f0f)
}

pub fn interlock_with(frustums: &[FlyingFrustum], extent: &Aabb, samples: usize, seed: u64) -> Result<CoverageReport, FrustumError> {
    if frustums.is_empty() {
        return Err(FrustumError::NoFrustums);
    }
    let k = frustums.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut any = 0usize;
    let mut single = vec![0usize; k];
    let mut pair = vec![0usize; k * k];
    let mut inside = vec![false; k];
    for _ in 0..samples {
        let p = Vec3::from_fn(|i, _| {
            if extent.max[i] > extent.min[i] {
                rng.random_range(extent.min[i]..extent.max[i])
            } else {
                extent.min[i]
            }
        });
        for (flag, fr) in inside.iter_mut().zip(frustums) {
            *flag = fr.contains(&p);
        }
        if inside.iter().any(|&b| b) {
            any += 1;
        }
        for i in 0..k {
            if inside[i] {
                single[i] += 1;
                for j in i + 1..k {
                    if inside[j] {
                        pair[i * k + j] += 1;
                    }
                }
            }
        }
    }
    let frac = |c: usize| c as f64 / samples as f64;
    let mut pairwise = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            pairwise.push(PairOverlap { i, j, fraction: frac(pair[i * k + j]) });
        }
    }
    Ok(CoverageReport { coverage: frac(any), per_frustum: single.into_iter().map(frac).collect(), pairwise, samples })
}
