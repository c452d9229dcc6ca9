//! Minimal-time steering of a finite crowd of indistinguishable agents.
//!
//! A crowd of n agents in R^d drifts along a fixed velocity field; the only
//! actuation is a velocity perturbation supported on a convex control
//! region. This crate computes the infimum time to steer an initial
//! configuration to a target one (exactly, or approximately in the
//! permutation-invariant configuration distance), synthesizes the explicit
//! localized control, and verifies it by closed-loop simulation.

pub mod check;
pub mod control_synthesis;
pub mod error;
pub mod flow_engine;
pub mod geom;
pub mod minimal_time;
pub mod params;
pub mod pipeline;
pub mod scenario;
pub mod transport_plan;

pub use error::{CrowdError, Result};
pub use flow_engine::{Configuration, ConvexRegion, HalfSpace, Membership, VectorField};
pub use params::{Params, WorkingBox};
