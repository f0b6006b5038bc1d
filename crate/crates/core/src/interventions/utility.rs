use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::seu::SeuError;
use crate::model::PlotModel;

/// A deterministic functional of the latent trajectory `W_{t..t+h}`,
/// `θ_{t..t+h}` (current slice included), or of the decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttributeKind {
    /// 1 if some slice is in one of `phases`, else 0.
    Reached { phases: Vec<String> },
    /// First slice index in one of `phases`; one past the horizon if never.
    FirstReach { phases: Vec<String> },
    /// Number of slices spent in `phases`.
    Occupancy { phases: Vec<String> },
    /// Number of slices with `task` in `state`.
    TaskSteps { task: String, state: String },
    /// 1 if the last slice is in one of `phases`.
    FinalIn { phases: Vec<String> },
    /// The decision's cost.
    Cost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    #[serde(flatten)]
    pub kind: AttributeKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityRow {
    /// Attribute values in the order of [`TableUtility::attributes`].
    pub values: Vec<f64>,
    pub utility: f64,
}

/// `U(a)` as a lookup table over attribute value tuples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableUtility {
    pub attributes: Vec<String>,
    pub rows: Vec<UtilityRow>,
    /// Utility of any tuple not listed; without it such tuples are an error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case", deny_unknown_fields)]
pub enum UtilityForm {
    /// `intercept + Σ weights[name] · a[name]`.
    Affine {
        #[serde(default)]
        intercept: f64,
        #[serde(default)]
        weights: alloc::collections::BTreeMap<String, f64>,
    },
    Table(TableUtility),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilitySpec {
    pub id: String,
    #[serde(default)]
    pub attributes: Vec<Attribute>,
    pub utility: UtilityForm,
}

impl UtilitySpec {
    pub fn constant(id: impl Into<String>, c: f64) -> Self {
        UtilitySpec {
            id: id.into(),
            attributes: Vec::new(),
            utility: UtilityForm::Affine { intercept: c, weights: Default::default() },
        }
    }

    /// Adds an attribute and, for affine utilities, its weight.
    pub fn term(mut self, name: &str, kind: AttributeKind, weight: f64) -> Self {
        self.attributes.push(Attribute { name: name.into(), kind });
        if let UtilityForm::Affine { weights, .. } = &mut self.utility {
            weights.insert(name.into(), weight);
        }
        self
    }

    /// `αU + β`.
    pub fn transformed(&self, alpha: f64, beta: f64) -> Self {
        let mut out = self.clone();
        match &mut out.utility {
            UtilityForm::Affine { intercept, weights } => {
                *intercept = alpha * *intercept + beta;
                weights.values_mut().for_each(|w| *w *= alpha);
            }
            UtilityForm::Table(table) => {
                table.rows.iter_mut().for_each(|r| r.utility = alpha * r.utility + beta);
                if let Some(d) = &mut table.default {
                    *d = alpha * *d + beta;
                }
            }
        }
        out
    }

    /// Checks names and finiteness against a model.
    pub fn check(&self, model: &PlotModel) -> Result<(), SeuError> {
        let bad = |message: String| Err(SeuError::InvalidUtility { id: self.id.clone(), message });
        let mut names = BTreeSet::new();
        for a in &self.attributes {
            if !names.insert(a.name.as_str()) {
                return bad(format!("attribute `{}` declared twice", a.name));
            }
            let phases: &[String] = match &a.kind {
                AttributeKind::Reached { phases }
                | AttributeKind::FirstReach { phases }
                | AttributeKind::Occupancy { phases }
                | AttributeKind::FinalIn { phases } => phases,
                AttributeKind::TaskSteps { task, state } => {
                    let Some(i) = model.task_index(task) else {
                        return bad(format!("unknown task `{task}`"));
                    };
                    if !model.tasks[i].states.contains(state) {
                        return bad(format!("task `{task}` has no state `{state}`"));
                    }
                    &[]
                }
                AttributeKind::Cost => &[],
            };
            if let Some(p) = phases.iter().find(|p| model.phases.index_of(p).is_none()) {
                return bad(format!("unknown phase `{p}`"));
            }
        }
        match &self.utility {
            UtilityForm::Affine { intercept, weights } => {
                if !intercept.is_finite() || weights.values().any(|w| !w.is_finite()) {
                    return bad("affine coefficients must be finite".into());
                }
                if let Some(k) = weights.keys().find(|k| !names.contains(k.as_str())) {
                    return bad(format!("weight for undeclared attribute `{k}`"));
                }
            }
            UtilityForm::Table(table) => {
                if let Some(k) = table.attributes.iter().find(|k| !names.contains(k.as_str())) {
                    return bad(format!("table column for undeclared attribute `{k}`"));
                }
                for row in &table.rows {
                    if row.values.len() != table.attributes.len() || !row.utility.is_finite() {
                        return bad("table rows need one value per attribute and a finite utility".into());
                    }
                }
                if table.default.is_some_and(|d| !d.is_finite()) {
                    return bad("default utility must be finite".into());
                }
            }
        }
        Ok(())
    }

    /// `U(a)` for attribute values listed in declaration order.
    pub(crate) fn evaluate(&self, values: &[f64]) -> Result<f64, SeuError> {
        let lookup = |name: &str| self.attributes.iter().position(|a| a.name == name).map(|k| values[k]).unwrap_or(0.0);
        let u = match &self.utility {
            UtilityForm::Affine { intercept, weights } => {
                weights.iter().fold(*intercept, |acc, (name, w)| acc + w * lookup(name))
            }
            UtilityForm::Table(table) => {
                let key: Vec<f64> = table.attributes.iter().map(|n| lookup(n)).collect();
                match table.rows.iter().find(|r| r.values == key) {
                    Some(r) => r.utility,
                    None => table
                        .default
                        .ok_or_else(|| SeuError::UndefinedUtility { id: self.id.clone(), values: key.clone() })?,
                }
            }
        };
        if u.is_finite() {
            Ok(u)
        } else {
            Err(SeuError::InvalidUtility { id: self.id.clone(), message: format!("utility evaluates to {u}") })
        }
    }
}
