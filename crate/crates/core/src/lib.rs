//! Gate-conditioned innovation statistics for linear-Gaussian Kalman tracking.
//!
//! Ellipsoidal validation gating and nearest-neighbor association both act as
//! selection operators on the innovation stream. This crate provides the exact
//! truncated chi-square machinery describing their effect ([`statx`]), the
//! Kalman recursion producing innovations ([`filter`]), the two selection
//! operators ([`selection`]), gate-aware consistency diagnostics
//! ([`diagnostics`]) and a seeded, shard-deterministic Monte Carlo engine
//! ([`sim`]) that checks every closed form empirically.
//!
//! The numerical core is generic over the scalar type (`f32` or `f64`, see
//! [`Real`]); the aliases at the crate root fix it to `f64`, which is what the
//! experiment engine and the CLI use.

// `!(x > 0)` style guards are deliberate: they reject NaN along with the range.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
mod error;
pub mod filter;
mod real;
pub mod selection;
pub mod sim;
pub mod statx;

pub use error::{Error, Result};
pub use real::Real;
pub use statx::Dof;

pub type GateSpec64 = statx::GateSpec<f64>;
pub type ContractionFactor64 = statx::ContractionFactor<f64>;
pub type StateSpaceModel64 = filter::StateSpaceModel<f64>;
pub type TrackState64 = filter::TrackState<f64>;
pub type Innovation64 = filter::Innovation<f64>;
pub type CovFactor64 = filter::CovFactor<f64>;
pub type GateDecision64 = selection::GateDecision<f64>;
pub type CandidateSet64 = selection::CandidateSet<f64>;
pub type Selected64 = selection::Selected<f64>;
pub type NisAccumulator64 = diagnostics::NisAccumulator<f64>;
pub type ConsistencyVerdict64 = diagnostics::ConsistencyVerdict<f64>;

pub type GateSpec32 = statx::GateSpec<f32>;
pub type StateSpaceModel32 = filter::StateSpaceModel<f32>;
pub type TrackState32 = filter::TrackState<f32>;
pub type Innovation32 = filter::Innovation<f32>;
pub type NisAccumulator32 = diagnostics::NisAccumulator<f32>;
