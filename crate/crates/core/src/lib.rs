//! Flying frustums: X-ray acquisitions kept in the operating-room frame as
//! viewing pyramids, for planning trajectories and tool poses directly in 3D.
//!
//! - [`geom`]: frames, rigid transforms, the pinhole C-arm model.
//! - [`handeye`]: `AX = XB` co-calibration of the source and a mounted tracker.
//! - [`frustum`]: near-plane geometry and frustum coverage.
//! - [`planning`]: ray triangulation, two-view trajectories, tool consensus.
//! - [`clinical`]: anterior pelvic plane, cup angles, K-wire error.
//! - [`sim`]: virtual operating room, sessions with replay, experiments.
//! - [`service`]: CLI and HTTP front ends.

pub mod clinical;
pub mod frustum;
pub mod geom;
pub mod handeye;
pub mod planning;
pub mod service;
pub mod sim;
