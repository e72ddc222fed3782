//! Simulator and diagnostics for the two-dimensional periodic
//! Vlasov–Navier–Stokes system.

// `!(x > 0.0)` also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod density;
pub mod diagnostics;
pub mod error;
pub mod fluid;
pub mod initial;
pub mod nufft;
pub mod oracle;
pub mod output;
pub mod particles;
pub mod scenario;
pub mod sim;
pub mod spectral;

pub use error::{Error, Result};
