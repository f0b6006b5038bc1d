use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use plotnet_core::interventions::{Decision, PhaseRow, UtilitySpec};
use plotnet_core::model::{
    renormalize, CategoryProfile, ModelBuilder, ParentSpec, Partition, PhaseParams, PlotModel, RawParams,
    Renormalization,
};

use super::{check_format, parse, read_json, to_canonical, write_atomic, FormatError};

pub const MODEL_FORMAT: &str = "plot-model/1";

/// A plot model as stored on disk.
///
/// Table rows are indexed by the vertex's row parents (every parent except
/// `W`) in declared order, last parent varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelDocument {
    pub format: String,
    pub id: String,
    #[serde(default)]
    pub category: CategoryProfile,
    #[serde(default)]
    pub meta: MetaDocument,
    /// Phase `w_0` first.
    pub phases: Vec<PhaseDocument>,
    pub transition: TransitionDocument,
    #[serde(default)]
    pub tasks: Vec<VertexDocument>,
    #[serde(default)]
    pub intensities: Vec<VertexDocument>,
    /// Tables of tasks and intensities by vertex name.
    #[serde(default)]
    pub cpts: BTreeMap<String, CptDocument>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decisions: Vec<Decision>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub utilities: Vec<UtilitySpec>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetaDocument {
    /// Default number of slices simulated or scored.
    #[serde(default)]
    pub horizon: u32,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub notes: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseDocument {
    pub label: String,
    /// Active phases reachable in one step other than staying or aborting.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reach: Vec<String>,
    /// The task set of the phase.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tasks: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionDocument {
    #[serde(default = "open")]
    pub partition: Partition,
    /// Parameters of every active phase by label.
    pub phases: BTreeMap<String, PhaseRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub overrides: Vec<OverrideDocument>,
}

/// Parameters for leaving `phase` into slice `t` only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverrideDocument {
    pub t: u32,
    pub phase: String,
    pub abort: f64,
    pub stay: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jump: Option<BTreeMap<String, f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexDocument {
    pub name: String,
    pub states: Vec<String>,
    /// `"W"`, `"x"` or `"x@t-1"`.
    pub parents: Vec<String>,
    #[serde(default = "open")]
    pub partition: Partition,
}

/// A task table (`base` plus `phases` by label) or an intensity table
/// (`rows`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CptDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub phases: BTreeMap<String, Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f64>>>,
}

fn open() -> Partition {
    Partition::Open
}

/// A validated model and the rows that were rescaled on the way in.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub model: PlotModel,
    pub renormalized: Vec<Renormalization>,
}

fn content(message: String) -> FormatError {
    FormatError::Content(message)
}

fn raw_params(row: &PhaseRow) -> RawParams {
    RawParams {
        abort: row.abort,
        stay: row.stay,
        jump: row.jump.as_ref().map(|m| m.iter().map(|(k, v)| (k.clone(), *v)).collect()),
    }
}

impl ModelDocument {
    /// Builds, renormalizes near-stochastic rows and validates.
    pub fn to_model(&self) -> Result<LoadedModel, FormatError> {
        check_format(MODEL_FORMAT, &self.format)?;
        let labels: Vec<String> = self.phases.iter().map(|p| p.label.clone()).collect();
        let mut b = ModelBuilder::with_labels(self.id.clone(), labels.clone())
            .category(self.category.clone())
            .horizon(self.meta.horizon)
            .transition_partition(self.transition.partition);
        for (k, v) in &self.meta.notes {
            b = b.note(k.clone(), v.clone());
        }
        for phase in self.phases.iter().skip(1) {
            let row = self
                .transition
                .phases
                .get(&phase.label)
                .ok_or_else(|| content(format!("transition has no parameters for phase `{}`", phase.label)))?;
            let reach: Vec<&str> = phase.reach.iter().map(String::as_str).collect();
            b = b.reach(&phase.label, &reach).params(&phase.label, raw_params(row));
        }
        if let Some(first) = self.phases.first() {
            if !first.reach.is_empty() || !first.tasks.is_empty() {
                return Err(content(format!("the inactive phase `{}` has no reach set or tasks", first.label)));
            }
        }
        if let Some(label) = self.transition.phases.keys().find(|l| !labels[1.min(labels.len())..].contains(l)) {
            return Err(content(format!("transition parameters for `{label}`, which is not an active phase")));
        }
        for o in &self.transition.overrides {
            let row = PhaseRow { abort: o.abort, stay: o.stay, jump: o.jump.clone() };
            b = b.override_params(o.t, &o.phase, raw_params(&row));
        }

        let parents = |v: &VertexDocument| v.parents.iter().map(|p| ParentSpec::parse(p)).collect::<Vec<_>>();
        let mut tables: BTreeMap<&str, &CptDocument> = self.cpts.iter().map(|(k, v)| (k.as_str(), v)).collect();
        for task in &self.tasks {
            let cpt = tables
                .remove(task.name.as_str())
                .ok_or_else(|| content(format!("no table for task `{}`", task.name)))?;
            let base = cpt.base.clone().ok_or_else(|| content(format!("task `{}` needs `base` rows", task.name)))?;
            if cpt.rows.is_some() {
                return Err(content(format!("task `{}` takes `base` and `phases`, not `rows`", task.name)));
            }
            b = b.task_named(&task.name, task.states.clone(), parents(task), task.partition, base);
            for (phase, rows) in &cpt.phases {
                b = b.task_phase_table(&task.name, phase, rows.clone());
            }
        }
        for phase in &self.phases {
            let tasks: Vec<&str> = phase.tasks.iter().map(String::as_str).collect();
            if !tasks.is_empty() {
                b = b.task_set(&phase.label, &tasks);
            }
        }
        for channel in &self.intensities {
            let cpt = tables
                .remove(channel.name.as_str())
                .ok_or_else(|| content(format!("no table for intensity `{}`", channel.name)))?;
            let rows = match cpt {
                CptDocument { rows: Some(rows), base: None, phases } if phases.is_empty() => rows.clone(),
                _ => return Err(content(format!("intensity `{}` takes `rows` only", channel.name))),
            };
            b = b.channel_named(&channel.name, channel.states.clone(), parents(channel), channel.partition, rows);
        }
        if let Some(name) = tables.keys().next() {
            return Err(content(format!("table for undeclared vertex `{name}`")));
        }
        for d in &self.decisions {
            b = b.decision(d.clone());
        }
        for u in &self.utilities {
            b = b.utility(u.clone());
        }

        let mut model = b.build()?;
        let renormalized = renormalize(&mut model);
        let report = model.validate();
        if !report.is_valid() {
            return Err(FormatError::Invalid { id: model.id, report });
        }
        Ok(LoadedModel { model, renormalized })
    }

    /// The document form of `model`; installed interventions are not part
    /// of a model file and are dropped.
    pub fn from_model(model: &PlotModel) -> ModelDocument {
        let label = |j: usize| model.phases.label(j).to_string();
        let phases = (0..model.phase_count())
            .map(|j| PhaseDocument {
                label: label(j),
                reach: model.phases.reach(j).iter().map(|&k| label(k)).collect(),
                tasks: model.task_sets[j].iter().map(|&i| model.tasks[i].name.clone()).collect(),
            })
            .collect();
        let row = |i: usize, p: &PhaseParams| {
            let reach = model.phases.reach(i);
            let implicit = reach.len() == 1 && p.jump == [1.0];
            let jump = (!reach.is_empty() && !implicit)
                .then(|| reach.iter().zip(&p.jump).map(|(&j, &x)| (label(j), x)).collect());
            PhaseRow { abort: p.abort, stay: p.stay, jump }
        };
        let transition = TransitionDocument {
            partition: model.transition_partition,
            phases: (1..model.phase_count()).map(|i| (label(i), row(i, &model.transition.phases[i - 1]))).collect(),
            overrides: model
                .transition
                .overrides
                .iter()
                .map(|(&(t, i), p)| {
                    let r = row(i, p);
                    OverrideDocument { t, phase: label(i), abort: r.abort, stay: r.stay, jump: r.jump }
                })
                .collect(),
        };
        let vertex = |name: &str, states: &[String], parents: Vec<String>, partition| VertexDocument {
            name: name.into(),
            states: states.to_vec(),
            parents,
            partition,
        };
        let mut cpts = BTreeMap::new();
        let tasks = model
            .tasks
            .iter()
            .map(|t| {
                cpts.insert(
                    t.name.clone(),
                    CptDocument {
                        base: Some(t.cpt.base.to_rows()),
                        phases: t.cpt.phases.iter().map(|(&j, table)| (label(j), table.to_rows())).collect(),
                        rows: None,
                    },
                );
                vertex(&t.name, &t.states, t.parents.iter().map(|&p| model.parent_name(p)).collect(), t.partition)
            })
            .collect();
        let intensities = model
            .channels
            .iter()
            .map(|c| {
                cpts.insert(c.name.clone(), CptDocument { rows: Some(c.cpt.to_rows()), ..Default::default() });
                vertex(&c.name, &c.states, c.parents.iter().map(|&p| model.parent_name(p)).collect(), c.partition)
            })
            .collect();
        ModelDocument {
            format: MODEL_FORMAT.into(),
            id: model.id.clone(),
            category: model.category.clone(),
            meta: MetaDocument { horizon: model.horizon, notes: model.notes.clone() },
            phases,
            transition,
            tasks,
            intensities,
            cpts,
            decisions: model.decisions.clone(),
            utilities: model.utilities.clone(),
        }
    }
}

/// Parses and validates a model document.
pub fn read_model(text: &str, context: &str) -> Result<LoadedModel, FormatError> {
    parse::<ModelDocument>(text, context)?.to_model()
}

pub fn load_model(path: &Path) -> Result<LoadedModel, FormatError> {
    read_json::<ModelDocument>(path)?.to_model()
}

pub fn write_model(model: &PlotModel) -> String {
    to_canonical(&ModelDocument::from_model(model))
}

pub fn save_model(path: &Path, model: &PlotModel) -> Result<(), FormatError> {
    write_atomic(path, &write_model(model))
}
