//! Do-style interventions by CPT substitution, and decision scoring.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::{CptTable, PhaseParams, PlotModel, TaskCpt, ValidationReport, VertexRef, ViolationKind};

mod seu;
mod utility;

pub use seu::{rank_decisions, seu, ScoredDecision, SeuError};
pub use utility::{Attribute, AttributeKind, TableUtility, UtilityForm, UtilityRow, UtilitySpec};

/// Id reserved for the "do nothing" decision `d_φ`.
pub const DO_NOTHING: &str = "do_nothing";

/// Half-open slice interval `[from, until)` during which substitutions are
/// in force. A missing `from` means "from the time the decision is taken".
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Window {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub from: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub until: Option<u32>,
}

impl Window {
    pub const ALWAYS: Window = Window { from: None, until: None };

    pub fn contains(&self, t: u32) -> bool {
        self.from.map_or(true, |f| t >= f) && self.until.map_or(true, |u| t < u)
    }

    /// Fills a missing start with `t_now`.
    pub fn anchored(self, t_now: u32) -> Window {
        Window { from: Some(self.from.unwrap_or(t_now)), until: self.until }
    }
}

/// Abort / stay / jump parameters given by label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseRow {
    pub abort: f64,
    pub stay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Replacement {
    /// Degenerate table putting probability one on `state` whatever the
    /// parents. On `W` only the inactive phase can be forced.
    Force { state: String },
    /// New transition parameters for the listed active phases.
    Transition { phases: BTreeMap<String, PhaseRow> },
    /// New task CPT: `base` rows plus rows per phase label in the task set.
    Task {
        base: Vec<Vec<f64>>,
        #[serde(default)]
        phases: BTreeMap<String, Vec<Vec<f64>>>,
    },
    /// New intensity CPT.
    Table { rows: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Substitution {
    pub vertex: String,
    pub replacement: Replacement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Decision {
    pub id: String,
    #[serde(default)]
    pub substitutions: Vec<Substitution>,
    #[serde(default)]
    pub window: Window,
    /// Resource cost, exposed to utilities through the `cost` attribute.
    #[serde(default)]
    pub cost: f64,
}

impl Decision {
    pub fn do_nothing() -> Self {
        Decision { id: DO_NOTHING.into(), substitutions: Vec::new(), window: Window::ALWAYS, cost: 0.0 }
    }

    pub fn new(id: impl Into<String>) -> Self {
        Decision { id: id.into(), ..Decision::do_nothing() }
    }

    pub fn substitute(mut self, vertex: impl Into<String>, replacement: Replacement) -> Self {
        self.substitutions.push(Substitution { vertex: vertex.into(), replacement });
        self
    }

    pub fn force(self, vertex: impl Into<String>, state: impl Into<String>) -> Self {
        self.substitute(vertex, Replacement::Force { state: state.into() })
    }

    pub fn window(mut self, window: Window) -> Self {
        self.window = window;
        self
    }

    pub fn cost(mut self, cost: f64) -> Self {
        self.cost = cost;
        self
    }
}

/// A resolved substitution installed in a model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppliedSubstitution {
    pub decision: String,
    pub target: VertexRef,
    pub window: Window,
    pub table: AppliedTable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum AppliedTable {
    /// Replacement parameters keyed by active phase index.
    Transition(BTreeMap<usize, PhaseParams>),
    Task(TaskCpt),
    Channel(CptTable),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterventionError {
    #[error("decision `{decision}`: unknown vertex `{vertex}`")]
    UnknownVertex { decision: String, vertex: String },
    #[error("decision `{decision}`: `{vertex}` has no state `{state}`")]
    UnknownState { decision: String, vertex: String, state: String },
    #[error("decision `{decision}`: {vertex} can only be forced to the inactive phase")]
    UnsupportedForce { decision: String, vertex: String },
    #[error("decision `{decision}`: replacement kind does not fit vertex `{vertex}`")]
    KindMismatch { decision: String, vertex: String },
    #[error("decision `{decision}`: replacement for `{vertex}` is invalid: {message}")]
    InvalidTable { decision: String, vertex: String, message: String },
    #[error("unknown decision `{0}`")]
    UnknownDecision(String),
}

/// Installs the decision's substitutions with its own window; a window
/// without a start applies from slice 0.
pub fn apply_intervention(model: &PlotModel, decision: &Decision) -> Result<PlotModel, InterventionError> {
    apply_intervention_at(model, decision, 0)
}

/// As [`apply_intervention`], anchoring an open window start at `t_now`.
///
/// The result differs from `model` only in the tables read inside the
/// window; the graph is untouched.
pub fn apply_intervention_at(
    model: &PlotModel,
    decision: &Decision,
    t_now: u32,
) -> Result<PlotModel, InterventionError> {
    let mut out = model.clone();
    if decision.substitutions.is_empty() {
        return Ok(out);
    }
    let window = decision.window.anchored(t_now);
    for sub in &decision.substitutions {
        let (target, table) = resolve(model, decision, sub)?;
        out.applied.push(AppliedSubstitution { decision: decision.id.clone(), target, window, table });
    }
    Ok(out)
}

/// Resolves the decision `id` from the model's catalogue and applies it.
pub fn apply_decision_id(model: &PlotModel, id: &str, t_now: u32) -> Result<PlotModel, InterventionError> {
    let decision = model.decision(id).ok_or_else(|| InterventionError::UnknownDecision(id.into()))?;
    apply_intervention_at(model, decision, t_now)
}

/// Resolves a standalone replacement table against `model`; `owner` names
/// it in errors.
pub(crate) fn resolve_replacement(
    model: &PlotModel,
    owner: &str,
    vertex: &str,
    replacement: &Replacement,
) -> Result<(VertexRef, AppliedTable), InterventionError> {
    let sub = Substitution { vertex: vertex.into(), replacement: replacement.clone() };
    resolve(model, &Decision::new(owner), &sub)
}

fn resolve(
    model: &PlotModel,
    decision: &Decision,
    sub: &Substitution,
) -> Result<(VertexRef, AppliedTable), InterventionError> {
    let err_vertex = || sub.vertex.clone();
    let target = model
        .vertex_by_name(&sub.vertex)
        .ok_or_else(|| InterventionError::UnknownVertex { decision: decision.id.clone(), vertex: err_vertex() })?;
    let mismatch = || InterventionError::KindMismatch { decision: decision.id.clone(), vertex: err_vertex() };
    let invalid = |message: String| InterventionError::InvalidTable {
        decision: decision.id.clone(),
        vertex: err_vertex(),
        message,
    };
    let state_index = |state: &str| {
        model.vertex_states(target).iter().position(|s| s == state).ok_or_else(|| InterventionError::UnknownState {
            decision: decision.id.clone(),
            vertex: err_vertex(),
            state: state.into(),
        })
    };

    let table = match (&sub.replacement, target) {
        (Replacement::Force { state }, VertexRef::Phase) => {
            if state_index(state)? != 0 {
                return Err(InterventionError::UnsupportedForce {
                    decision: decision.id.clone(),
                    vertex: err_vertex(),
                });
            }
            let rows = (1..model.phase_count())
                .map(|i| {
                    let mut p = model.transition.phases[i - 1].clone();
                    p.abort = 1.0;
                    (i, p)
                })
                .collect();
            AppliedTable::Transition(rows)
        }
        (Replacement::Force { state }, VertexRef::Task(i)) => {
            AppliedTable::Task(model.tasks[i].cpt.degenerate_like(state_index(state)?))
        }
        (Replacement::Force { state }, VertexRef::Channel(c)) => {
            let cpt = &model.channels[c].cpt;
            AppliedTable::Channel(CptTable::degenerate(cpt.row_count(), cpt.columns(), state_index(state)?))
        }
        (Replacement::Transition { phases }, VertexRef::Phase) => {
            let mut rows = BTreeMap::new();
            for (label, row) in phases {
                let i = match model.phases.index_of(label) {
                    Some(i) if i > 0 => i,
                    _ => return Err(invalid(format!("`{label}` is not an active phase"))),
                };
                let reach = model.phases.reach(i);
                let jump = match &row.jump {
                    None if reach.len() == 1 => alloc::vec![1.0],
                    None if reach.is_empty() => Vec::new(),
                    None => return Err(invalid(format!("phase `{label}` needs a jump distribution"))),
                    Some(map) => {
                        let mut jump = Vec::with_capacity(reach.len());
                        for &j in reach {
                            let p = map.get(model.phases.label(j)).ok_or_else(|| {
                                invalid(format!("jump from `{label}` to `{}` is undefined", model.phases.label(j)))
                            })?;
                            jump.push(*p);
                        }
                        if map.len() != reach.len() {
                            return Err(invalid(format!("jump from `{label}` names phases outside its reach set")));
                        }
                        jump
                    }
                };
                rows.insert(i, PhaseParams::new(row.abort, row.stay, jump));
            }
            AppliedTable::Transition(rows)
        }
        (Replacement::Task { base, phases }, VertexRef::Task(_)) => {
            let table = |rows: &Vec<Vec<f64>>| CptTable::from_rows(rows.clone()).map_err(|e| invalid(format!("{e}")));
            let mut cpt = TaskCpt::new(table(base)?);
            for (label, rows) in phases {
                let j = model.phases.index_of(label).ok_or_else(|| invalid(format!("unknown phase `{label}`")))?;
                cpt.phases.insert(j, table(rows)?);
            }
            AppliedTable::Task(cpt)
        }
        (Replacement::Table { rows }, VertexRef::Channel(_)) => {
            AppliedTable::Channel(CptTable::from_rows(rows.clone()).map_err(|e| invalid(format!("{e}")))?)
        }
        _ => return Err(mismatch()),
    };

    // Shape and row checks reuse the model validator on a one-substitution model.
    let mut probe = model.clone();
    probe.applied = alloc::vec![AppliedSubstitution {
        decision: decision.id.clone(),
        target,
        window: Window::ALWAYS,
        table: table.clone(),
    }];
    let mut report = ValidationReport::default();
    crate::model::check_applied(&probe, &mut report);
    if let Some(v) = report.violations.first() {
        return Err(invalid(format!("{}: {}", v.location, v.message)));
    }
    Ok((target, table))
}

/// Catalogue checks run by `validate_model`.
pub(crate) fn check_catalogue(model: &PlotModel, report: &mut ValidationReport) {
    let mut ids = BTreeSet::new();
    for d in &model.decisions {
        let location = format!("decisions[{}]", d.id);
        if !ids.insert(d.id.as_str()) {
            report.push(ViolationKind::Catalogue, location.clone(), "duplicate decision id");
        }
        if d.id == DO_NOTHING && !d.substitutions.is_empty() {
            report.push(ViolationKind::Catalogue, location.clone(), "the do-nothing decision cannot substitute tables");
        }
        if !d.cost.is_finite() {
            report.push(ViolationKind::Catalogue, location.clone(), "cost must be finite");
        }
        for sub in &d.substitutions {
            if let Err(e) = resolve(model, d, sub) {
                report.push(ViolationKind::Catalogue, format!("{location}.{}", sub.vertex), format!("{e}"));
            }
        }
    }
    let mut ids = BTreeSet::new();
    for u in &model.utilities {
        let location = format!("utilities[{}]", u.id);
        if !ids.insert(u.id.as_str()) {
            report.push(ViolationKind::Catalogue, location.clone(), "duplicate utility id");
        }
        if let Err(e) = u.check(model) {
            report.push(ViolationKind::Catalogue, location, format!("{e}"));
        }
    }
}
