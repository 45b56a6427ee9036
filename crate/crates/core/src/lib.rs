//! Discrete-time simulation and ergodicity analysis of feedback loops in
//! which a controller broadcasts a signal to a population of stochastic
//! agents sharing a resource.
//!
//! The loop is `r - F(y) -> C -> pi -> agents -> y = sum x_i`. The crate
//! provides the building blocks ([`agents`], [`control`], [`filters`]),
//! a stepping [`closed_loop`], and [`analysis`] routines that either prove
//! a unique invariant measure, prove its absence, or measure the dependence
//! of long-run averages on the initial condition.

pub mod agents;
pub mod analysis;
pub mod closed_loop;
pub mod control;
pub mod error;
pub mod filters;
pub mod fixtures;
pub mod numerics;

pub use error::{Error, Result};
