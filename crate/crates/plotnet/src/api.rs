//! Request and response documents shared by the HTTP service and the
//! command line's `--json` output.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use plotnet_core::inference::{BeliefState, MixtureBelief, Prior};
use plotnet_core::interventions::ScoredDecision;
use plotnet_core::model::{Partition, PlotModel};

use crate::format::{ModelDocument, PriorRow};

pub const API_VERSION: &str = "v1";
pub const STATE_FORMAT: &str = "plot-session-state/1";

/// Initial distribution over `(W, θ)`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    /// All mass on the first active phase with every task in its first
    /// state, where simulated incidents start.
    #[default]
    Entered,
    /// All mass on the given phase, tasks in their first state.
    Phase(String),
    /// All mass on the inactive phase.
    Inactive,
    Uniform,
    /// Explicit table, `W` slowest and the last task fastest.
    Joint(Vec<f64>),
}

impl PriorSpec {
    pub fn to_prior(&self, model: &PlotModel) -> Result<Prior, String> {
        let point = |phase: usize| {
            let inner: usize = model.task_cards().iter().product();
            let mut cells = vec![0.0; model.phase_count() * inner];
            cells[phase * inner] = 1.0;
            Prior::Joint(cells)
        };
        Ok(match self {
            PriorSpec::Entered => point(1.min(model.phase_count() - 1)),
            PriorSpec::Phase(label) => {
                point(model.phases.index_of(label).ok_or_else(|| format!("unknown phase `{label}`"))?)
            }
            PriorSpec::Inactive => Prior::Inactive,
            PriorSpec::Uniform => Prior::Uniform,
            PriorSpec::Joint(v) => Prior::Joint(v.clone()),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryWeight {
    pub category: String,
    pub weight: f64,
}

/// Body of `POST /v1/sessions`. Give at most one of `category` and
/// `mixture`; with neither the entry's own category is used.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub entry: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixture: Option<Vec<CategoryWeight>>,
    #[serde(default)]
    pub prior: PriorSpec,
}

/// Body of `POST /v1/sessions/{id}/what-if`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfQuery {
    /// Decision ids from the catalogue; all of them when absent. The
    /// do-nothing decision is always scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decisions: Option<Vec<String>>,
    pub utility: String,
    pub horizon: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResult {
    pub t: u32,
    pub utility: String,
    pub horizon: u32,
    /// Descending score, ties by id.
    pub ranking: Vec<ScoredDecision>,
    pub state_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMarginal {
    pub name: String,
    pub states: Vec<String>,
    pub marginal: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryView {
    pub key: String,
    pub weight: f64,
    /// False once the category's model has ruled out the evidence.
    pub live: bool,
}

/// Marginal summary of a belief at one slice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeliefView {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    pub t: u32,
    pub phases: Vec<String>,
    pub phase_marginal: Vec<f64>,
    pub tasks: Vec<TaskMarginal>,
    pub categories: Vec<CategoryView>,
    /// `log p(z_{1:t})` under the mixture.
    pub log_likelihood: f64,
    /// `log p(z_t | z_{1:t-1})` for the last absorbed slice.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_evidence: Option<f64>,
    pub state_hash: String,
}

/// SHA-256 of the canonical JSON of a belief.
pub fn state_hash(belief: &MixtureBelief) -> String {
    let bytes = serde_json::to_vec(belief).expect("beliefs serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// A single-category belief wrapped as a mixture of one.
pub fn single(key: &str, belief: BeliefState) -> MixtureBelief {
    MixtureBelief { t: belief.t, keys: vec![key.into()], weights: vec![1.0], beliefs: vec![Some(belief)] }
}

impl BeliefView {
    /// `models[k]` is the model of category `k`; all share one state space.
    pub fn of(
        models: &[PlotModel],
        belief: &MixtureBelief,
        log_likelihood: f64,
        log_evidence: Option<f64>,
    ) -> BeliefView {
        let model = &models[0];
        let mut tasks: Vec<TaskMarginal> = model
            .tasks
            .iter()
            .map(|t| TaskMarginal {
                name: t.name.clone(),
                states: t.states.clone(),
                marginal: vec![0.0; t.states.len()],
            })
            .collect();
        for (w, b) in belief.weights.iter().zip(&belief.beliefs) {
            let Some(b) = b else { continue };
            for (out, m) in tasks.iter_mut().zip(b.task_marginals()) {
                out.marginal.iter_mut().zip(m).for_each(|(o, x)| *o += w * x);
            }
        }
        BeliefView {
            session: None,
            t: belief.t,
            phases: model.phases.labels().to_vec(),
            phase_marginal: belief.phase_marginal(),
            tasks,
            categories: belief
                .keys
                .iter()
                .zip(&belief.weights)
                .zip(&belief.beliefs)
                .map(|((k, &weight), b)| CategoryView { key: k.clone(), weight, live: b.is_some() })
                .collect(),
            log_likelihood,
            log_evidence,
            state_hash: state_hash(belief),
        }
    }
}

/// A session's belief and models, self-contained enough to be scored
/// offline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionState {
    pub format: String,
    pub session: String,
    pub entry: String,
    /// One model per category, in the order of `belief.keys`.
    pub models: Vec<ModelDocument>,
    pub belief: MixtureBelief,
    pub log_likelihood: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: String,
    pub entry: String,
    pub t: u32,
    pub closed: bool,
    pub observations: usize,
    pub categories: Vec<String>,
    pub decisions: Vec<String>,
    pub utilities: Vec<String>,
}

/// What a successful close changed in the entry's hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloseReceipt {
    pub session: String,
    pub entry: String,
    /// Rows with at least one new count; `counts` holds the increments and
    /// `alpha` the resulting hyperparameters.
    pub updated_rows: Vec<PriorRow>,
}

/// Body of `POST` and `PUT /v1/library/entries`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryRequest {
    pub model: ModelDocument,
    /// Partition tags to set before the entry is added.
    #[serde(default)]
    pub declaration: BTreeMap<String, Partition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryReceipt {
    pub id: String,
    pub novelty: BTreeMap<Partition, std::collections::BTreeSet<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub session: String,
    pub events: u64,
    pub live_hash: String,
    pub replayed_hash: String,
    pub consistent: bool,
}

/// Error body of every non-2xx response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: ErrorDetail,
    /// The unchanged session state, for rejected observations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub belief: Option<BeliefView>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorDetail {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
}
