//! Virtual operating room: phantoms with known geometry, a simulated C-arm
//! whose poses are reported by a noisy localizer, event-sourced sessions
//! that replay bit-exactly, and the end-to-end K-wire and cup experiments.

mod experiment;
mod localizer;
mod phantom;
mod render;
mod session;
mod store;

pub use experiment::*;
pub use localizer::*;
pub use phantom::*;
pub use render::*;
pub use session::*;
pub use store::*;

use crate::clinical::ClinicalError;
use crate::frustum::FrustumError;
use crate::geom::GeomError;
use crate::handeye::HandEyeError;
use crate::planning::PlanningError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported schema {found:?}, expected {expected:?}")]
    SchemaMismatch { found: String, expected: String },
    #[error("corrupt log: {0}")]
    CorruptLog(String),
    #[error("replay diverged from the recorded state: {0}")]
    ReplayDivergence(String),
    #[error("{0} not found")]
    NotFound(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Frustum(#[from] FrustumError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    HandEye(#[from] HandEyeError),
    #[error(transparent)]
    Clinical(#[from] ClinicalError),
}

/// SplitMix64 finaliser, used to derive independent stream seeds.
pub(crate) fn mix_seed(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_add(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
