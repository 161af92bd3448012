//! Command-line and HTTP front ends over the library.

pub mod cli;
pub mod http;

use crate::clinical::ClinicalError;
use crate::frustum::FrustumError;
use crate::geom::{FrameId, GeomError, RigidTransform, UnitQuaternion, Vec3};
use crate::handeye::HandEyeError;
use crate::planning::PlanningError;
use crate::sim::SimError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    FrameMismatch,
    DegenerateMotion,
    ParallelRays,
    CoplanarViews,
    NearPlaneOutOfRange,
    SchemaMismatch,
    NotFound,
    BadRequest,
}

impl ErrorCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::FrameMismatch => "frame_mismatch",
            Self::DegenerateMotion => "degenerate_motion",
            Self::ParallelRays => "parallel_rays",
            Self::CoplanarViews => "coplanar_views",
            Self::NearPlaneOutOfRange => "near_plane_out_of_range",
            Self::SchemaMismatch => "schema_mismatch",
            Self::NotFound => "not_found",
            Self::BadRequest => "bad_request",
        }
    }

    pub fn http_status(&self) -> u16 {
        match self {
            Self::NotFound => 404,
            Self::BadRequest => 400,
            Self::SchemaMismatch => 409,
            _ => 422,
        }
    }
}

/// Error payload shared by the CLI (on stderr) and the HTTP service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub detail: Value,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>, detail: Value) -> Self {
        Self { code, message: message.into(), detail }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message, Value::Null)
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        let what = what.into();
        Self::new(ErrorCode::NotFound, format!("{what} not found"), json!({ "resource": what }))
    }
}

impl fmt::Display for ApiError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code.as_str(), self.message)
    }
}

impl std::error::Error for ApiError {}

fn detail(module: &str, error: &impl fmt::Debug) -> Value {
    json!({ "module": module, "error": format!("{error:?}") })
}

impl From<GeomError> for ApiError {
    fn from(e: GeomError) -> Self {
        let code = match e {
            GeomError::FrameMismatch { .. } => ErrorCode::FrameMismatch,
            GeomError::BehindSource { .. } | GeomError::NotARotation { .. } | GeomError::InvalidIntrinsics(_) | GeomError::ZeroVector => {
                ErrorCode::BadRequest
            }
        };
        Self::new(code, e.to_string(), detail("geom", &e))
    }
}

impl From<HandEyeError> for ApiError {
    fn from(e: HandEyeError) -> Self {
        match e {
            HandEyeError::Geom(g) => g.into(),
            HandEyeError::DegenerateMotion(_) => Self::new(ErrorCode::DegenerateMotion, e.to_string(), detail("handeye", &e)),
            HandEyeError::InsufficientData { .. } | HandEyeError::InvalidArgument(_) => Self::new(ErrorCode::BadRequest, e.to_string(), detail("handeye", &e)),
        }
    }
}

impl From<FrustumError> for ApiError {
    fn from(e: FrustumError) -> Self {
        match e {
            FrustumError::Geom(g) => g.into(),
            FrustumError::NearPlaneOutOfRange { n, f } => {
                Self::new(ErrorCode::NearPlaneOutOfRange, e.to_string(), json!({ "module": "frustum", "n": n, "f": f }))
            }
            FrustumError::PixelOutOfBounds { .. } | FrustumError::NoFrustums => Self::new(ErrorCode::BadRequest, e.to_string(), detail("frustum", &e)),
        }
    }
}

impl From<PlanningError> for ApiError {
    fn from(e: PlanningError) -> Self {
        let code = match e {
            PlanningError::Frustum(f) => return f.into(),
            PlanningError::Geom(g) => return g.into(),
            PlanningError::ParallelRays => ErrorCode::ParallelRays,
            PlanningError::CoplanarViews => ErrorCode::CoplanarViews,
            PlanningError::InsufficientRays(_) | PlanningError::InsufficientViews(_) | PlanningError::LabelMismatch(_) | PlanningError::InvalidTool(_) => {
                ErrorCode::BadRequest
            }
        };
        Self::new(code, e.to_string(), detail("planning", &e))
    }
}

impl From<ClinicalError> for ApiError {
    fn from(e: ClinicalError) -> Self {
        Self::new(ErrorCode::BadRequest, e.to_string(), detail("clinical", &e))
    }
}

impl From<SimError> for ApiError {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::Planning(p) => return p.into(),
            SimError::Frustum(f) => return f.into(),
            SimError::Geom(g) => return g.into(),
            SimError::HandEye(h) => return h.into(),
            SimError::Clinical(c) => return c.into(),
            SimError::NotFound(what) => return ApiError::not_found(what),
            SimError::SchemaMismatch { .. } | SimError::CorruptLog(_) | SimError::ReplayDivergence(_) => ErrorCode::SchemaMismatch,
            SimError::InvalidParams(_) | SimError::Io(_) => ErrorCode::BadRequest,
        };
        Self::new(code, e.to_string(), detail("sim", &e))
    }
}

/// Rotation `{s, v}` plus translation (mm), as exchanged over HTTP.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WirePose {
    pub rotation: UnitQuaternion,
    pub translation: Vec3,
}

impl WirePose {
    pub fn from_transform(t: &RigidTransform) -> Self {
        Self { rotation: t.quaternion(), translation: t.translation }
    }

    /// Normalises the quaternion; rejects a zero one.
    pub fn to_transform(&self, from: FrameId, to: FrameId) -> Result<RigidTransform, ApiError> {
        let q = UnitQuaternion::new(self.rotation.s, self.rotation.v)?;
        if !self.translation.iter().all(|t| t.is_finite()) {
            return Err(ApiError::bad_request("translation must be finite"));
        }
        Ok(RigidTransform::from_quaternion(from, to, &q, self.translation))
    }
}
