//! Outage capacity and common-randomness capacity of MIMO slow-fading
//! channels, with Monte Carlo checks of the coding constructions behind them.
//!
//! Parameter checks are written as `!(x > 0.0)` on purpose so that NaN is
//! rejected along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod app;
pub mod channel;
pub mod compound;
pub mod cr;
pub mod error;
pub mod identification;
pub mod linalg;
pub mod optim;
pub mod outage;
pub mod protocol;
pub mod rng;
pub mod verify;
