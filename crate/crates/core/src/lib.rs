//! Interacting particle systems and the random batch method with replacement.
//!
//! * [`model`]: confinement potentials, interaction kernels and assumption checks.
//! * [`dynamics`]: batch sampling and Euler–Maruyama steppers for IPS, RBM-1 and RBM-r.
//! * [`coupling`]: selection clocks, the shared increment ledger and coupled runs.
//! * [`metrics`]: strong errors, Wasserstein distances, moments and slope fits.
//! * [`lemma_lab`]: Monte-Carlo validators for the laws of the selection clocks.
//! * [`harness`]: configuration, parallel replica experiments and CSV output.

// Validation uses `!(x > 0.0)` on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coupling;
pub mod dynamics;
pub mod ensemble;
pub mod error;
pub mod harness;
pub mod lemma_lab;
pub mod metrics;
pub mod model;
pub mod rng;

pub use coupling::{
    build_clock, run_coupled, strong_error, time_change_check, ClockState, CoupledRun,
    IncrementLedger, PhysicalTime, PseudoTime, StrongErrorSample,
};
pub use dynamics::{run_trajectory, BatchSchedule, Scheme, StepConfig, Stepper};
pub use ensemble::ParticleEnsemble;
pub use error::{Error, Result};
pub use lemma_lab::ClockLawReport;
pub use metrics::{EmpiricalMarginal, MeanSe, SlopeFit};
pub use model::{audit_assumptions, BuiltinModel, Kernel, ModelSpec, Potential};
