use serde::{Deserialize, Serialize};

use plotnet_core::learning::{row_layout, DirichletSet, RowKey};
use plotnet_core::model::{PlotModel, PHASE_VERTEX};

use super::{check_format, FormatError};

pub const PRIORS_FORMAT: &str = "plot-priors/1";

/// Dirichlet hyperparameters of one model, addressed by vertex and phase
/// names so the file survives reordering of the model document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorsDocument {
    pub format: String,
    pub model: String,
    pub rows: Vec<PriorRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorRow {
    /// `W` for transition rows, otherwise the vertex name.
    pub table: String,
    /// `abort`, `stay`, `jump`, `task` or `channel`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub row: Option<usize>,
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub counts: Vec<u64>,
}

fn describe(model: &PlotModel, key: &RowKey) -> (String, &'static str, Option<String>, Option<usize>) {
    let label = |j: usize| model.phases.label(j).to_string();
    match *key {
        RowKey::Abort { phase } => (PHASE_VERTEX.into(), "abort", Some(label(phase)), None),
        RowKey::Stay { phase } => (PHASE_VERTEX.into(), "stay", Some(label(phase)), None),
        RowKey::Jump { phase } => (PHASE_VERTEX.into(), "jump", Some(label(phase)), None),
        RowKey::Task { task, phase, row } => (model.tasks[task].name.clone(), "task", phase.map(label), Some(row)),
        RowKey::Channel { channel, row } => (model.channels[channel].name.clone(), "channel", None, Some(row)),
    }
}

impl PriorsDocument {
    pub fn from_set(model: &PlotModel, set: &DirichletSet) -> PriorsDocument {
        let rows = set
            .alpha
            .iter()
            .map(|(key, alpha)| {
                let (table, kind, phase, row) = describe(model, key);
                PriorRow {
                    table,
                    kind: kind.into(),
                    phase,
                    row,
                    alpha: alpha.clone(),
                    counts: set.counts.get(key).cloned().unwrap_or_else(|| vec![0; alpha.len()]),
                }
            })
            .collect();
        PriorsDocument { format: PRIORS_FORMAT.into(), model: model.id.clone(), rows }
    }

    /// Every learnable row of `model` must appear exactly once.
    pub fn to_set(&self, model: &PlotModel) -> Result<DirichletSet, FormatError> {
        check_format(PRIORS_FORMAT, &self.format)?;
        if self.model != model.id {
            return Err(FormatError::Content(format!("priors are for `{}`, not `{}`", self.model, model.id)));
        }
        let layout = row_layout(model);
        let mut set = DirichletSet::default();
        for row in &self.rows {
            let found = layout.iter().find(|(key, _)| {
                let (table, kind, phase, r) = describe(model, key);
                table == row.table && kind == row.kind && phase == row.phase && r == row.row
            });
            let Some(&(key, width)) = found else {
                return Err(FormatError::Content(format!(
                    "no learnable row {} {} {:?} {:?}",
                    row.table, row.kind, row.phase, row.row
                )));
            };
            let counts = if row.counts.is_empty() { vec![0; width] } else { row.counts.clone() };
            if row.alpha.len() != width || counts.len() != width {
                return Err(FormatError::Content(format!("row {} {} has the wrong width", row.table, row.kind)));
            }
            if row.alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
                return Err(FormatError::Content(format!(
                    "row {} {} needs positive hyperparameters",
                    row.table, row.kind
                )));
            }
            if set.alpha.insert(key, row.alpha.clone()).is_some() {
                return Err(FormatError::Content(format!("row {} {} appears twice", row.table, row.kind)));
            }
            set.counts.insert(key, counts);
        }
        if let Some((key, _)) = layout.iter().find(|(key, _)| !set.alpha.contains_key(key)) {
            let (table, kind, _, _) = describe(model, key);
            return Err(FormatError::Content(format!("priors miss a {kind} row of {table}")));
        }
        Ok(set)
    }
}
