//! Exact filtering, prediction and smoothing of `(W_t, θ_t)`.
//!
//! The belief state is a dense table over the phase, every task, and any
//! lag-parent intensity whose value at `t` was not observed. Carrying those
//! channels keeps the next step exact: their children see the joint
//! distribution rather than an independent guess.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::factor::{Factor, TooLarge};
use crate::model::{ConfigError, PlotModel};

mod filter;
mod mixture;

pub(crate) use filter::latent_step;
pub use filter::{filter_log, filter_step, predict, predict_joint, smooth, Smoothed, StepResult};
pub use mixture::{filter_mixture, MixtureBelief, MixtureStep};

/// Default upper bound on the number of cells in any table the engine builds.
pub const DEFAULT_CELL_CAP: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InferenceError {
    #[error("evidence at t={t} has probability zero under the model")]
    Inconsistent { t: u32 },
    #[error("every category assigns probability zero to the evidence at t={t}")]
    AllCategoriesInconsistent { t: u32 },
    #[error("observation for t={found} does not follow the belief at t={expected_prev}")]
    TimeMismatch { expected_prev: u32, found: u32 },
    #[error("unknown intensity channel `{0}`")]
    UnknownChannel(String),
    #[error("`{vertex}` has no state `{state}`")]
    UnknownState { vertex: String, state: String },
    #[error("prior has {found} cells, expected {expected}")]
    PriorDimension { expected: usize, found: usize },
    #[error("prior is not a probability distribution: {0}")]
    InvalidPrior(String),
    #[error("a table of {cells} cells exceeds the cap of {cap}")]
    CapExceeded { cells: usize, cap: usize },
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("belief does not match the model's state space")]
    StateMismatch,
    #[error("category weights and models are misaligned: {0}")]
    Categories(String),
    #[error("prediction horizon must be at least 1")]
    ZeroHorizon,
}

pub(crate) fn too_large(cap: usize) -> impl Fn(TooLarge) -> InferenceError {
    move |TooLarge(cells)| InferenceError::CapExceeded { cells, cap }
}

/// Values revealed after the fact, consumed by learning.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Revealed {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tasks: BTreeMap<String, String>,
}

/// Intensity outcomes at slice `t`. A channel absent from the map, or
/// mapped to `None`, is missing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationRecord {
    pub t: u32,
    #[serde(default)]
    pub channels: BTreeMap<String, Option<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revealed: Option<Revealed>,
}

impl ObservationRecord {
    pub fn new(t: u32) -> Self {
        ObservationRecord { t, ..Default::default() }
    }

    pub fn with(mut self, channel: impl Into<String>, state: impl Into<String>) -> Self {
        self.channels.insert(channel.into(), Some(state.into()));
        self
    }

    pub fn missing(mut self, channel: impl Into<String>) -> Self {
        self.channels.insert(channel.into(), None);
        self
    }

    /// Per-channel state indices, in model order.
    pub fn resolve(&self, model: &PlotModel) -> Result<Vec<Option<usize>>, InferenceError> {
        let mut out = alloc::vec![None; model.channels.len()];
        for (name, value) in &self.channels {
            let c = model.channel_index(name).ok_or_else(|| InferenceError::UnknownChannel(name.clone()))?;
            if let Some(state) = value {
                let s = model.channels[c]
                    .states
                    .iter()
                    .position(|x| x == state)
                    .ok_or_else(|| InferenceError::UnknownState { vertex: name.clone(), state: state.clone() })?;
                out[c] = Some(s);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Prior {
    /// Point mass on the inactive phase with every task in its first state.
    Inactive,
    Uniform,
    /// Explicit table over `(W, θ_1..θ_n)`, `W` slowest.
    Joint(Vec<f64>),
}

/// Filtered distribution at slice `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub t: u32,
    /// Cardinalities of `W` then each task.
    pub cards: Vec<usize>,
    /// Lag-parent channels unobserved at `t`, carried as extra axes after
    /// the tasks, with their cardinalities.
    pub latent: Vec<(usize, usize)>,
    /// Lag-parent channels observed at `t`.
    pub observed: BTreeMap<usize, usize>,
    pub cells: Vec<f64>,
    /// `log p(z_{1:t})`.
    pub log_likelihood: f64,
    pub cap: usize,
}

/// Checks and builds the slice-0 belief.
pub fn init_belief(model: &PlotModel, prior: &Prior) -> Result<BeliefState, InferenceError> {
    init_belief_capped(model, prior, DEFAULT_CELL_CAP)
}

pub fn init_belief_capped(model: &PlotModel, prior: &Prior, cap: usize) -> Result<BeliefState, InferenceError> {
    let mut cards = alloc::vec![model.phase_count()];
    cards.extend(model.task_cards());
    let size = cards.iter().try_fold(1usize, |a, &c| a.checked_mul(c)).unwrap_or(usize::MAX);
    if size > cap {
        return Err(InferenceError::CapExceeded { cells: size, cap });
    }
    let cells = match prior {
        Prior::Inactive => {
            let mut v = alloc::vec![0.0; size];
            v[0] = 1.0;
            v
        }
        Prior::Uniform => alloc::vec![1.0 / size as f64; size],
        Prior::Joint(v) => {
            if v.len() != size {
                return Err(InferenceError::PriorDimension { expected: size, found: v.len() });
            }
            if let Some(x) = v.iter().find(|x| !x.is_finite() || **x < 0.0) {
                return Err(InferenceError::InvalidPrior(alloc::format!("entry {x}")));
            }
            let total: f64 = v.iter().sum();
            if (total - 1.0).abs() > crate::RENORMALIZE_TOLERANCE {
                return Err(InferenceError::InvalidPrior(alloc::format!("entries sum to {total}")));
            }
            v.clone()
        }
    };
    // Intensities before the first slice are taken to be in their first state.
    let observed = model.lag_parent_channels().into_iter().map(|c| (c, 0)).collect();
    Ok(BeliefState { t: 0, cards, latent: Vec::new(), observed, cells, log_likelihood: 0.0, cap })
}

impl BeliefState {
    fn joint_len(&self) -> usize {
        self.cards.iter().product()
    }

    /// `p(W_t, θ_t | z_{1:t})`, `W` slowest.
    pub fn joint(&self) -> Vec<f64> {
        let n = self.joint_len();
        if self.latent.is_empty() {
            return self.cells.clone();
        }
        let inner = self.cells.len() / n;
        self.cells.chunks(inner).map(|c| c.iter().sum()).collect()
    }

    pub fn phase_marginal(&self) -> Vec<f64> {
        let m = self.cards[0];
        let inner = self.cells.len() / m;
        self.cells.chunks(inner).map(|c| c.iter().sum()).collect()
    }

    /// Marginal of each task.
    pub fn task_marginals(&self) -> Vec<Vec<f64>> {
        let joint = self.joint();
        let mut out: Vec<Vec<f64>> = self.cards[1..].iter().map(|&c| alloc::vec![0.0; c]).collect();
        let mut digits = alloc::vec![0usize; self.cards.len()];
        for &p in &joint {
            for (k, d) in digits[1..].iter().enumerate() {
                out[k][*d] += p;
            }
            for d in (0..digits.len()).rev() {
                digits[d] += 1;
                if digits[d] < self.cards[d] {
                    break;
                }
                digits[d] = 0;
            }
        }
        out
    }

    /// Distribution over the state `(W, θ, latent)` as a factor with the
    /// given variable ids.
    pub(crate) fn factor(&self, ids: &[usize]) -> Factor {
        let mut cards = self.cards.clone();
        cards.extend(self.latent.iter().map(|&(_, c)| c));
        Factor::new(ids.to_vec(), cards, self.cells.clone())
    }

    /// The same belief with latent channels summed out.
    pub fn marginalized(&self) -> BeliefState {
        BeliefState { latent: Vec::new(), cells: self.joint(), ..self.clone() }
    }

    pub(crate) fn check_model(&self, model: &PlotModel) -> Result<(), InferenceError> {
        let ok = self.cards.len() == 1 + model.tasks.len()
            && self.cards[0] == model.phase_count()
            && self.cards[1..] == model.task_cards()[..]
            && self.latent.iter().all(|&(c, k)| model.channels.get(c).is_some_and(|ch| ch.states.len() == k))
            && self.cells.len() == self.joint_len() * self.latent.iter().map(|l| l.1).product::<usize>();
        if ok {
            Ok(())
        } else {
            Err(InferenceError::StateMismatch)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelBuilder;

    fn toy() -> PlotModel {
        ModelBuilder::new("toy", &["w0", "w1"])
            .task("a", 2, &["W"], vec![vec![0.9, 0.1]])
            .task_phase("a", "w1", vec![vec![0.2, 0.8]])
            .build()
            .unwrap()
    }

    #[test]
    fn default_prior_is_inactive_point_mass() {
        let b = init_belief(&toy(), &Prior::Inactive).unwrap();
        assert_eq!(b.cells, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn uniform_prior_is_flat() {
        let b = init_belief(&toy(), &Prior::Uniform).unwrap();
        assert!(b.cells.iter().all(|&x| x == 0.25));
    }

    #[test]
    fn negative_prior_is_rejected() {
        let err = init_belief(&toy(), &Prior::Joint(vec![1.5, -0.5, 0.0, 0.0])).unwrap_err();
        assert!(matches!(err, InferenceError::InvalidPrior(_)));
        let err = init_belief(&toy(), &Prior::Joint(vec![1.0])).unwrap_err();
        assert_eq!(err, InferenceError::PriorDimension { expected: 4, found: 1 });
    }
}
