//! Probabilistically guaranteed flowpipes for black-box stochastic dynamical systems.
//!
//! The workflow has three stages:
//!
//! 1. sample trajectories from a simulator ([`dynamics`]) and train a ReLU
//!    surrogate that maps an initial state to the flattened trajectory tail
//!    under a quantile loss ([`surrogate`]);
//! 2. push partitions of the initial set through the surrogate with a sound
//!    zonotope abstraction to get a surrogate flowpipe ([`reach`]);
//! 3. inflate that flowpipe by a robust conformal quantile of the scaled
//!    prediction residuals ([`conformal`], [`refine`]) so it contains deployment
//!    trajectories with probability at least `delta`, even when the deployment
//!    distribution lies in an f-divergence ball of radius `tau` around the
//!    simulator.
//!
//! [`pipeline`] wires the stages together and owns the on-disk artifact formats.

pub mod conformal;
pub mod dynamics;
mod error;
pub mod io;
pub mod linalg;
pub mod pipeline;
pub mod reach;
pub mod refine;
pub mod surrogate;

pub use error::{Error, Result};
