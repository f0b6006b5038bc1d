use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::{
    CategoryProfile, ChannelNode, CptTable, Parent, Partition, PhaseParams, PhaseSpace, PlotModel, TaskCpt, TaskNode,
    TransitionParams, VertexRef, LAG_SUFFIX, PHASE_VERTEX,
};
use crate::interventions::{Decision, UtilitySpec};

/// A parent reference by name: `"x"` for slice `t`, `"x@t-1"` for slice `t-1`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParentSpec {
    pub name: String,
    pub lagged: bool,
}

impl ParentSpec {
    pub fn parse(s: &str) -> Self {
        match s.strip_suffix(LAG_SUFFIX) {
            Some(name) => ParentSpec { name: name.into(), lagged: true },
            None => ParentSpec { name: s.into(), lagged: false },
        }
    }
}

impl fmt::Display for ParentSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)?;
        if self.lagged {
            f.write_str(LAG_SUFFIX)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BuildError {
    #[error("unknown phase label `{0}`")]
    UnknownPhase(String),
    #[error("unknown vertex `{0}`")]
    UnknownVertex(String),
    #[error("unknown task `{0}`")]
    UnknownTask(String),
    #[error("vertex name `{0}` is declared more than once")]
    DuplicateName(String),
    #[error("table of `{0}` has rows of different lengths")]
    RaggedTable(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RawParams {
    pub abort: f64,
    pub stay: f64,
    /// `None` leaves the jump distribution to be implied by a singleton
    /// reach set.
    pub jump: Option<Vec<(String, f64)>>,
}

#[derive(Clone, Debug)]
struct RawTask {
    name: String,
    states: Vec<String>,
    parents: Vec<ParentSpec>,
    partition: Partition,
    base: Vec<Vec<f64>>,
    phases: Vec<(String, Vec<Vec<f64>>)>,
}

#[derive(Clone, Debug)]
struct RawChannel {
    name: String,
    states: Vec<String>,
    parents: Vec<ParentSpec>,
    partition: Partition,
    rows: Vec<Vec<f64>>,
}

/// Assembles a [`PlotModel`] from name-based declarations.
///
/// The builder resolves names and shapes tables; it does not check the
/// plot-model template. Run `validate_model` on the result.
#[derive(Clone, Debug)]
pub struct ModelBuilder {
    id: String,
    category: CategoryProfile,
    horizon: u32,
    notes: BTreeMap<String, String>,
    labels: Vec<String>,
    reach: BTreeMap<String, Vec<String>>,
    params: BTreeMap<String, RawParams>,
    overrides: Vec<(u32, String, RawParams)>,
    transition_partition: Partition,
    tasks: Vec<RawTask>,
    task_sets: BTreeMap<String, Vec<String>>,
    channels: Vec<RawChannel>,
    decisions: Vec<Decision>,
    utilities: Vec<UtilitySpec>,
}

pub(crate) fn state_names(n: usize) -> Vec<String> {
    (0..n).map(|s| s.to_string()).collect()
}

fn parents(specs: &[&str]) -> Vec<ParentSpec> {
    specs.iter().map(|s| ParentSpec::parse(s)).collect()
}

impl ModelBuilder {
    pub fn new(id: impl Into<String>, phases: &[&str]) -> Self {
        Self::with_labels(id, phases.iter().map(|s| String::from(*s)).collect())
    }

    pub fn with_labels(id: impl Into<String>, labels: Vec<String>) -> Self {
        let id = id.into();
        ModelBuilder {
            category: CategoryProfile::new(id.clone()),
            id,
            horizon: 10,
            notes: BTreeMap::new(),
            labels,
            reach: BTreeMap::new(),
            params: BTreeMap::new(),
            overrides: Vec::new(),
            transition_partition: Partition::Open,
            tasks: Vec::new(),
            task_sets: BTreeMap::new(),
            channels: Vec::new(),
            decisions: Vec::new(),
            utilities: Vec::new(),
        }
    }

    pub fn category(mut self, category: CategoryProfile) -> Self {
        self.category = category;
        self
    }

    pub fn horizon(mut self, horizon: u32) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn note(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.notes.insert(key.into(), value.into());
        self
    }

    pub fn reach(mut self, from: &str, to: &[&str]) -> Self {
        self.reach.insert(from.into(), to.iter().map(|s| String::from(*s)).collect());
        self
    }

    pub fn params(mut self, phase: &str, params: RawParams) -> Self {
        self.params.insert(phase.into(), params);
        self
    }

    /// Declares reach and parameters of an active phase in one go.
    pub fn phase(self, label: &str, abort: f64, stay: f64, jump: &[(&str, f64)]) -> Self {
        let targets: Vec<&str> = jump.iter().map(|(l, _)| *l).collect();
        self.reach(label, &targets).params(
            label,
            RawParams { abort, stay, jump: Some(jump.iter().map(|(l, p)| (String::from(*l), *p)).collect()) },
        )
    }

    pub fn override_params(mut self, t: u32, phase: &str, params: RawParams) -> Self {
        self.overrides.push((t, phase.into(), params));
        self
    }

    pub fn transition_partition(mut self, partition: Partition) -> Self {
        self.transition_partition = partition;
        self
    }

    /// Adds a task with `states` anonymous states (`"0"`, `"1"`, ...).
    pub fn task(self, name: &str, states: usize, parent_refs: &[&str], base: Vec<Vec<f64>>) -> Self {
        self.task_named(name, state_names(states), parents(parent_refs), Partition::Open, base)
    }

    pub fn task_named(
        mut self,
        name: &str,
        states: Vec<String>,
        parents: Vec<ParentSpec>,
        partition: Partition,
        base: Vec<Vec<f64>>,
    ) -> Self {
        self.tasks.push(RawTask { name: name.into(), states, parents, partition, base, phases: Vec::new() });
        self
    }

    /// Gives `task` its own table in `phase` and adds it to that phase's task set.
    pub fn task_phase(self, task: &str, phase: &str, rows: Vec<Vec<f64>>) -> Self {
        let mut b = self.task_phase_table(task, phase, rows);
        b.task_sets.entry(phase.into()).or_default().push(task.into());
        b
    }

    /// Phase-specific table without touching the task sets.
    pub fn task_phase_table(mut self, task: &str, phase: &str, rows: Vec<Vec<f64>>) -> Self {
        if let Some(t) = self.tasks.iter_mut().find(|t| t.name == task) {
            t.phases.push((phase.into(), rows));
        } else {
            // Resolved (and rejected) in `build`.
            self.tasks.push(RawTask {
                name: task.into(),
                states: Vec::new(),
                parents: Vec::new(),
                partition: Partition::Open,
                base: Vec::new(),
                phases: alloc::vec![(phase.into(), rows)],
            });
        }
        self
    }

    pub fn task_set(mut self, phase: &str, tasks: &[&str]) -> Self {
        self.task_sets.insert(phase.into(), tasks.iter().map(|s| String::from(*s)).collect());
        self
    }

    pub fn channel(self, name: &str, states: usize, parent_refs: &[&str], rows: Vec<Vec<f64>>) -> Self {
        self.channel_named(name, state_names(states), parents(parent_refs), Partition::Open, rows)
    }

    pub fn channel_named(
        mut self,
        name: &str,
        states: Vec<String>,
        parents: Vec<ParentSpec>,
        partition: Partition,
        rows: Vec<Vec<f64>>,
    ) -> Self {
        self.channels.push(RawChannel { name: name.into(), states, parents, partition, rows });
        self
    }

    pub fn partition(mut self, vertex: &str, partition: Partition) -> Self {
        if vertex == PHASE_VERTEX {
            self.transition_partition = partition;
        } else if let Some(t) = self.tasks.iter_mut().find(|t| t.name == vertex) {
            t.partition = partition;
        } else if let Some(c) = self.channels.iter_mut().find(|c| c.name == vertex) {
            c.partition = partition;
        }
        self
    }

    pub fn decision(mut self, decision: Decision) -> Self {
        self.decisions.push(decision);
        self
    }

    pub fn utility(mut self, utility: UtilitySpec) -> Self {
        self.utilities.push(utility);
        self
    }

    pub fn build(self) -> Result<PlotModel, BuildError> {
        let phase_index = |label: &str| {
            self.labels.iter().position(|l| l == label).ok_or_else(|| BuildError::UnknownPhase(label.into()))
        };

        let mut seen = BTreeSet::new();
        seen.insert(PHASE_VERTEX);
        for name in self.tasks.iter().map(|t| &t.name).chain(self.channels.iter().map(|c| &c.name)) {
            if !seen.insert(name.as_str()) {
                return Err(BuildError::DuplicateName(name.clone()));
            }
        }
        let resolve = |spec: &ParentSpec| -> Result<Parent, BuildError> {
            let vertex = if spec.name == PHASE_VERTEX {
                VertexRef::Phase
            } else if let Some(i) = self.tasks.iter().position(|t| t.name == spec.name) {
                VertexRef::Task(i)
            } else if let Some(c) = self.channels.iter().position(|c| c.name == spec.name) {
                VertexRef::Channel(c)
            } else {
                return Err(BuildError::UnknownVertex(spec.to_string()));
            };
            Ok(Parent { vertex, lagged: spec.lagged })
        };
        let table = |name: &str, rows: Vec<Vec<f64>>| {
            CptTable::from_rows(rows).map_err(|_| BuildError::RaggedTable(name.into()))
        };

        let n = self.labels.len();
        let mut reach = alloc::vec![Vec::new(); n];
        for (from, to) in &self.reach {
            let i = phase_index(from)?;
            reach[i] = to.iter().map(|l| phase_index(l)).collect::<Result<_, _>>()?;
        }
        let resolve_params = |i: usize, raw: &RawParams| -> Result<PhaseParams, BuildError> {
            let jump = match &raw.jump {
                Some(pairs) => {
                    let mut by_target = BTreeMap::new();
                    for (label, p) in pairs {
                        by_target.insert(phase_index(label)?, *p);
                    }
                    // Aligned with the reach set. A missing target leaves the
                    // vector short and targets outside the set make it long;
                    // validation reports both.
                    let mut jump = Vec::new();
                    let mut complete = true;
                    for j in &reach[i] {
                        match by_target.remove(j) {
                            Some(p) if complete => jump.push(p),
                            _ => complete = false,
                        }
                    }
                    if complete {
                        jump.extend(by_target.values());
                    }
                    jump
                }
                None if reach[i].len() == 1 => alloc::vec![1.0],
                None => Vec::new(),
            };
            Ok(PhaseParams { abort: raw.abort, stay: raw.stay, jump })
        };
        let mut phase_params = Vec::with_capacity(n.saturating_sub(1));
        for i in 1..n {
            let p = match self.params.get(&self.labels[i]) {
                Some(raw) => resolve_params(i, raw)?,
                // An unparameterised phase never moves.
                None => resolve_params(i, &RawParams { abort: 0.0, stay: 1.0, jump: None })?,
            };
            phase_params.push(p);
        }
        for label in self.params.keys() {
            phase_index(label)?;
        }
        let mut transition = TransitionParams::homogeneous(phase_params);
        for (t, label, raw) in &self.overrides {
            let i = phase_index(label)?;
            transition.overrides.insert((*t, i), resolve_params(i, raw)?);
        }

        let mut task_sets = alloc::vec![BTreeSet::new(); n];
        for (phase, names) in &self.task_sets {
            let j = phase_index(phase)?;
            for name in names {
                let i = self
                    .tasks
                    .iter()
                    .position(|t| &t.name == name)
                    .ok_or_else(|| BuildError::UnknownTask(name.clone()))?;
                task_sets[j].insert(i);
            }
        }

        let mut tasks = Vec::with_capacity(self.tasks.len());
        for raw in &self.tasks {
            if raw.states.is_empty() && raw.base.is_empty() {
                return Err(BuildError::UnknownTask(raw.name.clone()));
            }
            let mut cpt = TaskCpt::new(table(&raw.name, raw.base.clone())?);
            for (phase, rows) in &raw.phases {
                cpt.phases.insert(phase_index(phase)?, table(&raw.name, rows.clone())?);
            }
            tasks.push(TaskNode {
                name: raw.name.clone(),
                states: raw.states.clone(),
                parents: raw.parents.iter().map(resolve).collect::<Result<_, _>>()?,
                cpt,
                partition: raw.partition,
            });
        }
        let mut channels = Vec::with_capacity(self.channels.len());
        for raw in &self.channels {
            channels.push(ChannelNode {
                name: raw.name.clone(),
                states: raw.states.clone(),
                parents: raw.parents.iter().map(resolve).collect::<Result<_, _>>()?,
                cpt: table(&raw.name, raw.rows.clone())?,
                partition: raw.partition,
            });
        }

        Ok(PlotModel {
            id: self.id,
            category: self.category,
            horizon: self.horizon,
            notes: self.notes,
            phases: PhaseSpace::new(self.labels, reach),
            transition,
            transition_partition: self.transition_partition,
            tasks,
            task_sets,
            channels,
            decisions: self.decisions,
            utilities: self.utilities,
            applied: Vec::new(),
        })
    }
}
