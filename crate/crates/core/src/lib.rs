//! Age-of-information optimal sampling when the channel delay distribution is
//! unknown.
//!
//! A sensor samples a process, sends each update over a channel with an i.i.d.
//! random delay, and waits for the acknowledgement before it may sample again.
//! After observing the delay `D_k` of update `k` it chooses a waiting time
//! `W_k`.
//!
//! Modules:
//!
//! * [`delay`]: delay distributions with exact threshold integrals.
//! * [`cycle`]: per-cycle age accounting and trajectory metrics.
//! * [`oracle`]: the known-distribution optimum, found by bisection on the
//!   optimality condition, with or without a sampling-frequency constraint.
//! * [`sampler`]: the online Robbins-Monro threshold learner with a
//!   frequency-debt virtual queue.
//! * [`policy`]: the online learner and baseline policies behind one type.
//! * [`simulator`]: seeded single runs and ensembles with confidence intervals.
//! * [`scenario`], [`acceptance`]: canned experiments and the pass/fail suite
//!   used by the CLI.

// `!(x > 0.0)` is used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acceptance;
pub mod cycle;
pub mod delay;
mod error;
pub mod numeric;
pub mod oracle;
pub mod output;
pub mod policy;
pub mod sampler;
pub mod scenario;
pub mod simulator;

pub use cycle::{cycle_area, CycleAccumulator, CycleRecord, Trajectory};
pub use delay::{
    DelayDistribution, DelayModel, DelaySpec, EmpiricalDistribution, MomentSummary,
    ThresholdIntegrals,
};
pub use error::{Error, Result};
pub use oracle::{GammaBounds, OracleSolution};
pub use policy::{Policy, PolicySpec};
pub use sampler::{SamplerConfig, SamplerState};
pub use simulator::{BoundsMode, EnsembleSummary, MomentBounds, RunConfig};

/// Crate version embedded in every output artifact.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
