//! Two-timescale movable-antenna (MA) multiuser MIMO downlink.
//!
//! Antenna positions are chosen on the large timescale from statistical CSI
//! (angles of departure, Rician factors, path loss); beamformers are computed
//! per channel realization on the small timescale.
//!
//! * [`channel`] – geometry, LoS steering vectors and Rician channel draws.
//! * [`beamforming`] – MRT / ZF / water-filling / WMMSE and SINR evaluation.
//! * [`ergodic`] – closed-form MRT approximation, ZF Jensen lower bound and
//!   Monte-Carlo ergodic rates.
//! * [`subsolver`] – exact maximizer for the per-antenna 2-D subproblems.
//! * [`mrt_opt`] / [`zf_opt`] – alternating per-antenna position optimization
//!   for MRT and ZF beamforming.
//! * [`experiments`] – scenario generation, sweeps, CSV output and the oracle
//!   validation suite.

// `!(x > 0.0)` is used on purpose to reject NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod beamforming;
pub mod channel;
pub mod ergodic;
mod error;
pub mod experiments;
pub mod mrt_opt;
pub mod optimizer;
pub mod subsolver;
pub mod zf_opt;

pub use error::{Error, Result};

/// Complex double used for all channel quantities.
pub type C64 = num_complex::Complex<f64>;
/// 2-D position or direction in the antenna plane.
pub type Point = nalgebra::Vector2<f64>;
