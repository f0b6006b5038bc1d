//! Plot-model domain types.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::interventions::{AppliedSubstitution, AppliedTable, Decision, UtilitySpec};

mod builder;
mod graph;
mod phase;
mod table;
mod validate;

pub use builder::{BuildError, ModelBuilder, ParentSpec, RawParams};
pub use graph::{SliceGraph, SliceVertex, UnrolledGraph, VertexKind};
pub use phase::{build_transition_matrix, ConfigError, PhaseParams, PhaseSpace, TransitionMatrix, TransitionParams};
pub use table::{CptTable, TableShapeError, TaskCpt};
pub(crate) use validate::check_applied;
pub use validate::{renormalize, validate_model, Renormalization, ValidationReport, Violation, ViolationKind};

/// Name of the phase vertex in every entry of a library.
pub const PHASE_VERTEX: &str = "W";

/// Suffix marking a reference to the previous time slice, as in `"x@t-1"`.
pub const LAG_SUFFIX: &str = "@t-1";

/// Disclosure class of a CPT across the firewall.
///
/// `Dummy` only appears in sanitized exports, where it labels a stand-in
/// table that replaced a `Secure` one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Partition {
    Open,
    Partial,
    Secure,
    Dummy,
}

impl Partition {
    pub fn as_str(self) -> &'static str {
        match self {
            Partition::Open => "open",
            Partition::Partial => "partial",
            Partition::Secure => "secure",
            Partition::Dummy => "dummy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VertexRef {
    Phase,
    Task(usize),
    Channel(usize),
}

/// A parent of a slice-`t` vertex, either in slice `t` or in slice `t-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Parent {
    pub vertex: VertexRef,
    pub lagged: bool,
}

impl Parent {
    pub const fn current(vertex: VertexRef) -> Self {
        Parent { vertex, lagged: false }
    }

    pub const fn lagged(vertex: VertexRef) -> Self {
        Parent { vertex, lagged: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CategoryProfile {
    pub key: String,
    #[serde(default)]
    pub background: BTreeMap<String, String>,
    #[serde(default)]
    pub environment: BTreeMap<String, String>,
}

impl CategoryProfile {
    pub fn new(key: impl Into<String>) -> Self {
        CategoryProfile { key: key.into(), ..Default::default() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TaskNode {
    pub name: String,
    pub states: Vec<String>,
    /// Declared parents, including the slice-`t` phase vertex.
    pub parents: Vec<Parent>,
    pub cpt: TaskCpt,
    pub partition: Partition,
}

impl TaskNode {
    /// Parents that index the rows of the task's tables: every parent
    /// except the phase vertex, in declared order.
    pub fn row_parents(&self) -> impl Iterator<Item = Parent> + '_ {
        self.parents.iter().copied().filter(|p| matches!(p.vertex, VertexRef::Task(_)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelNode {
    pub name: String,
    pub states: Vec<String>,
    pub parents: Vec<Parent>,
    pub cpt: CptTable,
    pub partition: Partition,
}

impl ChannelNode {
    /// Parents that index the rows of the intensity table: the owning task
    /// and lagged channels, in declared order.
    pub fn row_parents(&self) -> impl Iterator<Item = Parent> + '_ {
        self.parents
            .iter()
            .copied()
            .filter(|p| matches!((p.vertex, p.lagged), (VertexRef::Task(_), false) | (VertexRef::Channel(_), true)))
    }

    /// The unique current-slice task parent, if there is exactly one.
    pub fn owner(&self) -> Option<usize> {
        let mut owners = self.parents.iter().filter_map(|p| match (p.vertex, p.lagged) {
            (VertexRef::Task(i), false) => Some(i),
            _ => None,
        });
        match (owners.next(), owners.next()) {
            (Some(i), None) => Some(i),
            _ => None,
        }
    }
}

/// One library entry: a plot-model graph with its full CPT collection.
#[derive(Clone, Debug, PartialEq)]
pub struct PlotModel {
    pub id: String,
    pub category: CategoryProfile,
    pub horizon: u32,
    pub notes: BTreeMap<String, String>,
    pub phases: PhaseSpace,
    pub transition: TransitionParams,
    pub transition_partition: Partition,
    pub tasks: Vec<TaskNode>,
    /// `task_sets[j]` is `I(w_j)`; `task_sets[0]` is always empty.
    pub task_sets: Vec<BTreeSet<usize>>,
    pub channels: Vec<ChannelNode>,
    pub decisions: Vec<Decision>,
    pub utilities: Vec<UtilitySpec>,
    /// Substitutions installed by `apply_intervention`, last one wins.
    pub applied: Vec<AppliedSubstitution>,
}

impl PlotModel {
    pub fn builder(id: impl Into<String>, phases: &[&str]) -> ModelBuilder {
        ModelBuilder::new(id, phases)
    }

    pub fn phase_count(&self) -> usize {
        self.phases.len()
    }

    pub fn task_cards(&self) -> Vec<usize> {
        self.tasks.iter().map(|t| t.states.len()).collect()
    }

    pub fn channel_cards(&self) -> Vec<usize> {
        self.channels.iter().map(|c| c.states.len()).collect()
    }

    /// Number of cells of the joint `(W, θ)` table.
    pub fn state_cells(&self) -> usize {
        self.tasks.iter().fold(self.phase_count(), |acc, t| acc.saturating_mul(t.states.len()))
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn vertex_by_name(&self, name: &str) -> Option<VertexRef> {
        if name == PHASE_VERTEX {
            return Some(VertexRef::Phase);
        }
        self.task_index(name).map(VertexRef::Task).or_else(|| self.channel_index(name).map(VertexRef::Channel))
    }

    pub fn vertex_name(&self, v: VertexRef) -> &str {
        match v {
            VertexRef::Phase => PHASE_VERTEX,
            VertexRef::Task(i) => &self.tasks[i].name,
            VertexRef::Channel(c) => &self.channels[c].name,
        }
    }

    pub fn vertex_states(&self, v: VertexRef) -> &[String] {
        match v {
            VertexRef::Phase => self.phases.labels(),
            VertexRef::Task(i) => &self.tasks[i].states,
            VertexRef::Channel(c) => &self.channels[c].states,
        }
    }

    pub fn parent_name(&self, p: Parent) -> String {
        let mut s = String::from(self.vertex_name(p.vertex));
        if p.lagged {
            s.push_str(LAG_SUFFIX);
        }
        s
    }

    /// Channels of slice `t-1` that are parents of some slice-`t` channel.
    pub fn lag_parent_channels(&self) -> BTreeSet<usize> {
        self.channels
            .iter()
            .flat_map(|c| c.row_parents())
            .filter_map(|p| match p.vertex {
                VertexRef::Channel(k) => Some(k),
                _ => None,
            })
            .collect()
    }

    /// Effective parameters for leaving phase `i` into slice `t`.
    pub fn phase_params_at(&self, t: u32, i: usize) -> &PhaseParams {
        for sub in self.applied.iter().rev() {
            if let AppliedTable::Transition(map) = &sub.table {
                if sub.window.contains(t) {
                    if let Some(p) = map.get(&i) {
                        return p;
                    }
                }
            }
        }
        self.transition.params(t, i)
    }

    /// The phase transition matrix `W_{t-1} -> W_t`, honouring applied
    /// interventions.
    pub fn transition_matrix(&self, t: u32) -> Result<TransitionMatrix, ConfigError> {
        phase::matrix_from(&self.phases, |i| self.phase_params_at(t, i))
    }

    pub fn task_cpt_at(&self, i: usize, t: u32) -> &TaskCpt {
        for sub in self.applied.iter().rev() {
            if let (VertexRef::Task(k), AppliedTable::Task(cpt)) = (sub.target, &sub.table) {
                if k == i && sub.window.contains(t) {
                    return cpt;
                }
            }
        }
        &self.tasks[i].cpt
    }

    pub fn channel_cpt_at(&self, c: usize, t: u32) -> &CptTable {
        for sub in self.applied.iter().rev() {
            if let (VertexRef::Channel(k), AppliedTable::Channel(cpt)) = (sub.target, &sub.table) {
                if k == c && sub.window.contains(t) {
                    return cpt;
                }
            }
        }
        &self.channels[c].cpt
    }

    pub fn decision(&self, id: &str) -> Option<&Decision> {
        self.decisions.iter().find(|d| d.id == id)
    }

    pub fn utility(&self, id: &str) -> Option<&UtilitySpec> {
        self.utilities.iter().find(|u| u.id == id)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_model(self)
    }

    pub fn slice_graph(&self) -> SliceGraph {
        SliceGraph::of(self)
    }
}

/// Mixed-radix index with the last digit varying fastest.
pub(crate) fn mixed_radix_index(digits: impl IntoIterator<Item = (usize, usize)>) -> usize {
    digits.into_iter().fold(0, |acc, (value, card)| acc * card + value)
}
