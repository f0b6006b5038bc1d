//! Engine for plot-model dynamic Bayesian networks.
//!
//! A plot model is a two-time-slice DBN with three layers: a latent phase
//! chain `W`, a latent task vector `θ` whose distribution depends on the
//! current phase, and observed intensity channels `Z`, each informing
//! exactly one task. This crate holds everything that does not touch the
//! filesystem or the network:
//!
//! * [`model`]: domain types, structural validation, the phase transition
//!   matrix and the explicit two-slice graph.
//! * [`inference`]: exact filtering, prediction, smoothing and category
//!   mixtures over the joint `(W_t, θ_t)` state.
//! * [`interventions`]: do-style CPT substitution and expected-utility
//!   scoring of decisions.
//! * [`learning`]: conjugate Dirichlet updating from ancestral incident
//!   data and designed samples.
//! * [`library`]: ordered model libraries, shared structure, novelty sets,
//!   sanitized exports and diffs.
//! * [`simulate`]: seeded generation of synthetic incidents.
//!
//! The crate is `no_std` and only needs `alloc`.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

mod factor;
pub mod inference;
pub mod interventions;
pub mod learning;
pub mod library;
pub mod model;
pub mod simulate;

pub use inference::{BeliefState, InferenceError, MixtureBelief, ObservationRecord};
pub use interventions::{Decision, UtilitySpec};
pub use model::{PlotModel, ValidationReport};

/// Tolerance for "sums to one" checks on stored probability vectors.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Rows off by at most this much are renormalized on load instead of rejected.
pub const RENORMALIZE_TOLERANCE: f64 = 1e-9;
