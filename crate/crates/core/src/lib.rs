//! Deterministic simulator for decentralized data-parallel SGD on a ring of
//! processing elements (PEs).
//!
//! Two training loops are provided: regular neighbor averaging, where every
//! PE exchanges all parameters with its ring neighbors each iteration, and
//! event-triggered averaging, where a parameter block is sent only when it
//! has drifted from its last broadcast by a slope-adaptive threshold.
//! Communication is emulated with one-sided writes into receiver windows and
//! counted exactly.
//!
//! Modules:
//! * [`mixing`]: ring mixing matrix and its spectral quantity `rho`.
//! * [`objectives`]: least squares, logistic regression and a tiny MLP.
//! * [`trigger`]: event condition, adaptive threshold and cap schedules.
//! * [`comm`]: windows, puts, top-k sparsification and message accounting.
//! * [`engine`]: the training loops, metrics and arm comparison.
//! * [`analysis`]: convergence-bound evaluators and constant estimation.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod comm;
pub mod engine;
pub mod mixing;
pub mod objectives;
pub mod rng;
pub mod trigger;

pub use analysis::{
    bound_report, corollary1_rhs, estimate_constants, theorem1_rhs, BoundInputs, BoundReport,
    ConstantEstimates,
};
pub use comm::{message_percentage, topk_sparsify, CommStats, Network, PayloadMode, Window};
pub use engine::{
    compare, run, Algorithm, CompareReport, EngineError, MetricsRow, RunConfig, RunMeta,
    RunMetrics, Simulation,
};
pub use mixing::MixingMatrix;
pub use objectives::{global_loss, ModelLayout, ModelState, Objective, ObjectiveSpec};
pub use trigger::{ThresholdSchedule, TriggerConfig, TriggerState};
