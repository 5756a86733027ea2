//! Link-level simulation of multi-LED, multi-photodiode optical wireless
//! links: channel geometry, codebook construction for FLIM, SMX, SM and
//! GSM-II, ML and MMSE detection, analytic bounds and Monte Carlo ABEP.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod channel;
pub mod cli;
pub mod codebook;
pub mod detect;
pub mod error;
pub mod geometry;
pub mod par;
pub mod sim;

pub use error::{Error, Result};
