//! Core algorithms for boundary-return statistics of a rarefied hard-sphere
//! gas in a half space over a cold monokinetic background beam.
//!
//! The crate provides
//! * velocity-space geometry of beam collisions and backward chains
//!   ([`geometry`]),
//! * the family of oscillatory product integrals controlling chain weights
//!   ([`jint`]),
//! * angle-region volumes and bounds for chain radii ([`regions`]),
//! * the collision gain operator in direct, plane-chart, and mollified
//!   forms ([`carleman`]),
//! * the backward series for the returning flux with its certified bounds
//!   ([`series`]),
//! * a forward particle simulator for cross-validation ([`simulator`]),
//! * deterministic counter-based random streams ([`rng`]), Monte Carlo
//!   accumulators ([`stats`]), and adaptive quadrature ([`quad`]).

pub mod carleman;
pub mod error;
pub mod geometry;
pub mod jint;
pub mod quad;
pub mod regions;
pub mod rng;
pub mod stats;

pub use error::{CoreError, Result};
pub use geometry::{ProblemParams, Velocity3};
pub use rng::CounterRng;
pub use stats::McEstimate;
