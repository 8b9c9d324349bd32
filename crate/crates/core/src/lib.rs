//! Joint transmit beamforming for a multi-antenna OFDM base station that senses
//! targets by beam scanning while serving information receivers (IRs) and
//! energy receivers (ERs).
//!
//! The crate is organised bottom-up:
//!
//! - [`scenario`] builds the physical world: arrays, angular grid, slot schedule,
//!   desired beampatterns and Rician channels.
//! - [`metrics`] evaluates beampattern gain, matching error, SINR, rates and
//!   harvested power of a [`BeamformingSolution`].
//! - [`conic`] is the declarative convex-program container and its solver.
//! - [`joint_optimizer`] solves the semidefinite relaxation with successive
//!   convex approximation (SCA) or fractional programming (FP).
//! - [`rank1`] turns relaxed covariances into rank-one information beams with
//!   identical metrics.
//! - [`baselines`] holds the zero-forcing, round-robin and time-switching designs.
//! - [`sensing`] synthesizes echoes and runs MUSIC and delay/Doppler estimation.

// links the system OpenBLAS behind the solver's dense kernels
use openblas_src as _;

pub mod baselines;
pub mod conic;
mod error;
pub mod joint_optimizer;
pub mod linalg;
pub mod metrics;
mod model;
pub mod rank1;
pub mod scenario;
pub mod sensing;

pub use error::{Error, Result};
pub use metrics::{BeamformingSolution, PerformanceReport};
pub use scenario::{ChannelSet, Requirements, Scenario, ScenarioConfig, UserGeometry};
