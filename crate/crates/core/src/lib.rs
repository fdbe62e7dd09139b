//! Joint transmit beamforming and movable-antenna placement for multiuser
//! covert downlinks.
//!
//! The solver alternates between closed-form WMMSE auxiliaries, a proximal
//! distance method for the beamformer and a per-antenna successive convex
//! approximation for the antenna positions. The [`experiment`] module runs
//! seeded parameter sweeps over the solver and its baselines.

// `!(x > 0.0)` guards are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bsum;
pub mod channel;
pub mod covertness;
pub mod error;
pub mod experiment;
pub mod pda;
pub mod sca;
pub mod wmmse;

pub use error::{Error, Result};
