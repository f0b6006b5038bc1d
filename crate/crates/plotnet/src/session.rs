//! Monitoring sessions as a fold over their event log.
//!
//! A session is created from a library entry and then only changes by
//! absorbing observations. Every state is reachable by replaying
//! [`SessionEvent`]s from the `Created` event, which is what recovery and
//! the audit check both do.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use plotnet_core::inference::{filter_mixture, init_belief, InferenceError, MixtureBelief, ObservationRecord};
use plotnet_core::interventions::{rank_decisions, Decision, ScoredDecision, SeuError, DO_NOTHING};
use plotnet_core::learning::{update_from_incidents, CompletedIncident, DirichletSet, LearningError, LearningUpdate};
use plotnet_core::library::{Library, LibraryError};
use plotnet_core::model::PlotModel;

use crate::api::{BeliefView, CreateSession, SessionState, SessionSummary, WhatIfQuery, WhatIfResult, STATE_FORMAT};
use crate::format::{FormatError, ModelDocument};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("observation for t={found}, expected t={expected}")]
    Duplicate { expected: u32, found: u32 },
    #[error("observation for t={found} skips ahead of t={expected}")]
    Gap { expected: u32, found: u32 },
    #[error("session is closed")]
    Closed,
    #[error("{0}")]
    BadRequest(String),
    #[error("unknown decision `{0}`")]
    UnknownDecision(String),
    #[error("unknown utility `{0}`")]
    UnknownUtility(String),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Seu(#[from] SeuError),
    #[error(transparent)]
    Learning(#[from] LearningError),
    #[error(transparent)]
    Library(#[from] LibraryError),
    #[error(transparent)]
    Format(#[from] FormatError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionEvent {
    /// Carries the models themselves so later library edits cannot change
    /// what a replay computes.
    Created {
        session: String,
        request: CreateSession,
        keys: Vec<String>,
        weights: Vec<f64>,
        models: Vec<ModelDocument>,
    },
    Observed {
        record: ObservationRecord,
    },
    /// A posted observation that did not change the state.
    Rejected {
        record: ObservationRecord,
        reason: String,
    },
    Queried {
        query: WhatIfQuery,
        ranking: Vec<ScoredDecision>,
    },
    Closed {
        incident: CompletedIncident,
        rows: usize,
    },
    CloseRejected {
        incident: CompletedIncident,
        reason: String,
    },
}

/// One line of `events.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventLine {
    pub seq: u64,
    #[serde(flatten)]
    pub event: SessionEvent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Session {
    pub id: String,
    pub entry: String,
    pub models: Vec<PlotModel>,
    pub documents: Vec<ModelDocument>,
    pub belief: MixtureBelief,
    pub log_likelihood: f64,
    pub last_log_evidence: Option<f64>,
    pub records: Vec<ObservationRecord>,
    pub closed: bool,
}

/// Resolves a create request against the library into its `Created` event.
pub fn created_event(id: &str, request: &CreateSession, library: &Library) -> Result<SessionEvent, SessionError> {
    let picks: Vec<(Option<String>, f64)> = match (&request.category, &request.mixture) {
        (Some(_), Some(_)) => return Err(SessionError::BadRequest("give either `category` or `mixture`".into())),
        (c, None) => vec![(c.clone(), 1.0)],
        (None, Some(m)) if m.is_empty() => return Err(SessionError::BadRequest("empty mixture".into())),
        (None, Some(m)) => m.iter().map(|c| (Some(c.category.clone()), c.weight)).collect(),
    };
    let mut keys = Vec::new();
    let mut weights = Vec::new();
    let mut models = Vec::new();
    for (category, weight) in picks {
        let model = library.model_for(&request.entry, category.as_deref())?;
        let key = category.unwrap_or_else(|| model.category.key.clone());
        if keys.contains(&key) {
            return Err(SessionError::BadRequest(format!("category `{key}` appears twice")));
        }
        keys.push(key);
        weights.push(weight);
        models.push(ModelDocument::from_model(&model));
    }
    Ok(SessionEvent::Created { session: id.into(), request: request.clone(), keys, weights, models })
}

impl Session {
    /// The state right after a `Created` event.
    pub fn start(event: &SessionEvent) -> Result<Session, SessionError> {
        let SessionEvent::Created { session, request, keys, weights, models: documents } = event else {
            return Err(SessionError::BadRequest("a session log must start with `created`".into()));
        };
        let models = documents.iter().map(|d| Ok(d.to_model()?.model)).collect::<Result<Vec<_>, FormatError>>()?;
        let mut beliefs = Vec::with_capacity(models.len());
        for m in &models {
            let prior = request.prior.to_prior(m).map_err(SessionError::BadRequest)?;
            beliefs.push(init_belief(m, &prior)?);
        }
        if let Some(m) = models.iter().find(|m| m.state_cells() != models[0].state_cells()) {
            return Err(SessionError::BadRequest(format!("category model `{}` has a different state space", m.id)));
        }
        let belief = MixtureBelief::new(keys.clone(), weights.clone(), beliefs)?;
        Ok(Session {
            id: session.clone(),
            entry: request.entry.clone(),
            models,
            documents: documents.clone(),
            belief,
            log_likelihood: 0.0,
            last_log_evidence: None,
            records: Vec::new(),
            closed: false,
        })
    }

    /// Rebuilds a session from its full log.
    pub fn replay<'a>(lines: impl IntoIterator<Item = &'a SessionEvent>) -> Result<Session, SessionError> {
        let mut lines = lines.into_iter();
        let first = lines.next().ok_or_else(|| SessionError::BadRequest("empty session log".into()))?;
        let mut session = Session::start(first)?;
        for event in lines {
            session.apply(event)?;
        }
        Ok(session)
    }

    /// Checks that `record` is the next slice, without touching the state.
    pub fn check_next(&self, record: &ObservationRecord) -> Result<(), SessionError> {
        if self.closed {
            return Err(SessionError::Closed);
        }
        let expected = self.belief.t + 1;
        match record.t {
            t if t < expected => Err(SessionError::Duplicate { expected, found: t }),
            t if t > expected => Err(SessionError::Gap { expected, found: t }),
            _ => Ok(()),
        }
    }

    /// Absorbs one observation; on error the state is unchanged.
    pub fn observe(&mut self, record: &ObservationRecord) -> Result<(), SessionError> {
        self.check_next(record)?;
        let models: Vec<&PlotModel> = self.models.iter().collect();
        let step = filter_mixture(&self.belief, &models, record)?;
        self.belief = step.belief;
        self.log_likelihood += step.log_evidence;
        self.last_log_evidence = Some(step.log_evidence);
        self.records.push(record.clone());
        Ok(())
    }

    pub fn apply(&mut self, event: &SessionEvent) -> Result<(), SessionError> {
        match event {
            SessionEvent::Created { .. } => Err(SessionError::BadRequest("duplicate `created` event".into())),
            SessionEvent::Observed { record } => self.observe(record),
            SessionEvent::Closed { .. } => {
                self.closed = true;
                Ok(())
            }
            SessionEvent::Rejected { .. } | SessionEvent::Queried { .. } | SessionEvent::CloseRejected { .. } => Ok(()),
        }
    }

    pub fn view(&self) -> BeliefView {
        let mut view = BeliefView::of(&self.models, &self.belief, self.log_likelihood, self.last_log_evidence);
        view.session = Some(self.id.clone());
        view
    }

    pub fn summary(&self) -> SessionSummary {
        let model = &self.models[0];
        SessionSummary {
            id: self.id.clone(),
            entry: self.entry.clone(),
            t: self.belief.t,
            closed: self.closed,
            observations: self.records.len(),
            categories: self.belief.keys.clone(),
            decisions: catalogue(model).into_iter().map(|d| d.id).collect(),
            utilities: model.utilities.iter().map(|u| u.id.clone()).collect(),
        }
    }

    pub fn state(&self) -> SessionState {
        SessionState {
            format: STATE_FORMAT.into(),
            session: self.id.clone(),
            entry: self.entry.clone(),
            models: self.documents.clone(),
            belief: self.belief.clone(),
            log_likelihood: self.log_likelihood,
        }
    }

    /// Ranks decisions by subjective expected utility under the current
    /// belief. Pure.
    pub fn what_if(&self, query: &WhatIfQuery) -> Result<WhatIfResult, SessionError> {
        what_if(&self.models, &self.belief, query)
    }

    /// The learning update a close would apply to `priors`.
    pub fn close_update(
        &self,
        priors: &DirichletSet,
        incident: &CompletedIncident,
    ) -> Result<LearningUpdate, SessionError> {
        if self.closed {
            return Err(SessionError::Closed);
        }
        Ok(update_from_incidents(priors, std::slice::from_ref(incident), &self.models[0])?)
    }
}

/// The model's decisions with do-nothing first unless the model defines it.
pub fn catalogue(model: &PlotModel) -> Vec<Decision> {
    let mut out = Vec::with_capacity(model.decisions.len() + 1);
    if model.decision(DO_NOTHING).is_none() {
        out.push(Decision::do_nothing());
    }
    out.extend(model.decisions.iter().cloned());
    out
}

/// Category-weighted SEU ranking. With one category this is exactly
/// `rank_decisions`.
pub fn what_if(
    models: &[PlotModel],
    belief: &MixtureBelief,
    query: &WhatIfQuery,
) -> Result<WhatIfResult, SessionError> {
    let mut totals: BTreeMap<String, f64> = BTreeMap::new();
    for ((model, &w), b) in models.iter().zip(&belief.weights).zip(&belief.beliefs) {
        let all = catalogue(model);
        let chosen: Vec<Decision> = match &query.decisions {
            None => all,
            Some(ids) => {
                let mut out: Vec<Decision> = all.iter().filter(|d| d.id == DO_NOTHING).cloned().collect();
                for id in ids.iter().filter(|id| *id != DO_NOTHING) {
                    let d =
                        all.iter().find(|d| &d.id == id).ok_or_else(|| SessionError::UnknownDecision(id.clone()))?;
                    out.push(d.clone());
                }
                out
            }
        };
        let utility =
            model.utility(&query.utility).ok_or_else(|| SessionError::UnknownUtility(query.utility.clone()))?;
        let Some(b) = b.as_ref().filter(|_| w > 0.0) else {
            for d in &chosen {
                totals.entry(d.id.clone()).or_insert(0.0);
            }
            continue;
        };
        for s in rank_decisions(model, b, &chosen, utility, query.horizon)? {
            *totals.entry(s.id).or_insert(0.0) += w * s.score;
        }
    }
    let mut ranking: Vec<ScoredDecision> = totals.into_iter().map(|(id, score)| ScoredDecision { id, score }).collect();
    ranking.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    Ok(WhatIfResult {
        t: belief.t,
        utility: query.utility.clone(),
        horizon: query.horizon,
        ranking,
        state_hash: crate::api::state_hash(belief),
    })
}
