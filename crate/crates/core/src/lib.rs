//! Co-simulation of self-triggered networked control over a flooding
//! wireless protocol.

// NaN must fail the range checks, so comparisons are written negated.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod lqr;
pub mod metrics;
pub mod net;
pub mod numerics;
pub mod output;
pub mod par;
pub mod plant;
pub mod rng;
pub mod sched;
pub mod sim;
pub mod stc;
pub mod sweep;
pub mod validate;

pub use error::{Error, Result};
