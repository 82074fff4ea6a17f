//! Consensus-based optimization with a stochastic information rate.
//!
//! Each agent carries a position `x ∈ ℝ^d` and a rate `λ ∈ [0, 1]` that
//! interpolates between the Gibbs-weighted consensus of an objective and the
//! weighted mean of an observable. See the README for an overview.

// `!(x > 0.0)` is used deliberately so that NaN fails validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod error;
pub mod gibbs;
pub mod harness;
pub mod infokernel;
pub mod linalg;
pub mod measures;
pub mod objectives;
mod record;
pub mod rng;
pub mod sde;

pub use error::{CboError, Result};
pub use record::{BallSeries, RecordOptions, Snapshot, StepContext, TrajectoryRecord};

/// Version of this crate, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
