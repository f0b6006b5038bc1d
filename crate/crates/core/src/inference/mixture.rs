use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{filter_step, BeliefState, InferenceError, ObservationRecord};
use crate::model::PlotModel;

/// Beliefs under several candidate categories plus the posterior weight of
/// each category. A category whose model ruled out the evidence keeps
/// weight zero and no belief.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureBelief {
    pub t: u32,
    pub keys: Vec<String>,
    pub weights: Vec<f64>,
    pub beliefs: Vec<Option<BeliefState>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixtureStep {
    pub belief: MixtureBelief,
    /// `log p(z_t | z_{1:t-1})` under the mixture.
    pub log_evidence: f64,
    /// Per-category `log p(z_t | z_{1:t-1}, S)`; `None` when ruled out.
    pub category_log_evidence: Vec<Option<f64>>,
}

impl MixtureBelief {
    pub fn new(keys: Vec<String>, weights: Vec<f64>, beliefs: Vec<BeliefState>) -> Result<Self, InferenceError> {
        if keys.len() != weights.len() || keys.len() != beliefs.len() || keys.is_empty() {
            return Err(InferenceError::Categories("one key, weight and belief per category".into()));
        }
        let total: f64 = weights.iter().sum();
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) || (total - 1.0).abs() > crate::ROW_TOLERANCE {
            return Err(InferenceError::Categories(alloc::format!("weights sum to {total}")));
        }
        let t = beliefs[0].t;
        if beliefs.iter().any(|b| b.t != t) {
            return Err(InferenceError::Categories("beliefs are at different slices".into()));
        }
        Ok(MixtureBelief { t, keys, weights, beliefs: beliefs.into_iter().map(Some).collect() })
    }

    /// Category-weighted phase marginal; the categories must share a phase
    /// space.
    pub fn phase_marginal(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.beliefs) {
            if let Some(b) = b {
                let p = b.phase_marginal();
                out.resize(p.len().max(out.len()), 0.0);
                out.iter_mut().zip(p).for_each(|(o, x)| *o += w * x);
            }
        }
        out
    }
}

/// Filters every live category independently and reweights by Bayes' rule
/// on the per-category evidence.
pub fn filter_mixture(
    mixture: &MixtureBelief,
    models: &[&PlotModel],
    obs: &ObservationRecord,
) -> Result<MixtureStep, InferenceError> {
    if models.len() != mixture.keys.len() {
        return Err(InferenceError::Categories(alloc::format!(
            "{} models for {} categories",
            models.len(),
            mixture.keys.len()
        )));
    }
    if obs.t != mixture.t + 1 {
        return Err(InferenceError::TimeMismatch { expected_prev: mixture.t, found: obs.t });
    }
    let mut beliefs = Vec::with_capacity(models.len());
    let mut logs = Vec::with_capacity(models.len());
    for ((belief, model), &w) in mixture.beliefs.iter().zip(models).zip(&mixture.weights) {
        let step = match belief {
            Some(b) if w > 0.0 => match filter_step(b, model, obs) {
                Ok(s) => Some(s),
                Err(InferenceError::Inconsistent { .. }) => None,
                Err(e) => return Err(e),
            },
            _ => None,
        };
        logs.push(step.as_ref().map(|s| s.log_evidence));
        beliefs.push(step.map(|s| s.belief));
    }
    let scores: Vec<Option<f64>> =
        logs.iter().zip(&mixture.weights).map(|(l, &w)| l.map(|l| libm::log(w) + l)).collect();
    let top = scores.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(InferenceError::AllCategoriesInconsistent { t: obs.t });
    }
    let raw: Vec<f64> = scores.iter().map(|s| s.map_or(0.0, |s| libm::exp(s - top))).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|r| r / total).collect();
    Ok(MixtureStep {
        belief: MixtureBelief { t: obs.t, keys: mixture.keys.clone(), weights, beliefs },
        log_evidence: top + libm::log(total),
        category_log_evidence: logs,
    })
}
