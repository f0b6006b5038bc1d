//! Conjugate Dirichlet learning of CPT rows from completed incidents and
//! designed samples.
//!
//! Every learnable row carries its own Dirichlet, so updates never couple
//! rows. A phase row `(q', (1-q')q, (1-q')(1-q)p)` is parameterised by
//! independent stick-breaking pieces: abort vs continue, stay vs leave,
//! and the jump distribution. A Dirichlet prior on the whole row factors
//! exactly this way, so the split loses nothing.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::inference::ObservationRecord;
use crate::library::Side;
use crate::model::{mixed_radix_index, Partition, PlotModel, VertexRef};

/// Address of one learnable probability vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowKey {
    /// `(abort, continue)` for an active phase.
    Abort {
        phase: usize,
    },
    /// `(stay, leave)` given no abort; fixed when the reach set is empty.
    Stay {
        phase: usize,
    },
    /// Jump distribution over the reach set; fixed unless it has two or
    /// more targets.
    Jump {
        phase: usize,
    },
    /// Task row; `phase: None` is the shared inactive-phase table.
    Task {
        task: usize,
        phase: Option<usize>,
        row: usize,
    },
    Channel {
        channel: usize,
        row: usize,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearningError {
    #[error("incident {incident}: unknown vertex `{vertex}`")]
    UnknownVertex { incident: usize, vertex: String },
    #[error("incident {incident}: `{vertex}` has no state `{state}`")]
    UnknownState { incident: usize, vertex: String, state: String },
    #[error("incident {incident}: records must have strictly increasing t")]
    Unordered { incident: usize },
    #[error("non-ancestral incidents rejected: {0:?}")]
    Rejected(Vec<Rejection>),
    #[error("incident {incident}: {vertex} at t={t} has probability zero under the model")]
    Impossible { incident: usize, t: u32, vertex: String },
    #[error("sample {sample}: {message}")]
    BadSample { sample: usize, message: String },
    #[error("sample {sample}: table of `{task}` is secure and cannot be updated on the academic side")]
    SecureTable { sample: usize, task: String },
    #[error("prior has no row {0:?}")]
    MissingRow(RowKey),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub incident: usize,
    pub t: u32,
    pub vertex: String,
}

/// Post-hoc data on one incident: ordered records whose `revealed` field
/// carries the latent values and whose `channels` the intensities.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletedIncident {
    #[serde(default)]
    pub id: String,
    #[serde(default)]
    pub category: String,
    pub records: Vec<ObservationRecord>,
}

/// Outcome of the ancestrality check.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ancestry {
    pub ancestral: bool,
    /// First observed variable with an unobserved parent, as `(t, name)`.
    pub violator: Option<(u32, String)>,
}

/// Values of one slice, by model index.
#[derive(Clone, Debug)]
struct Slice {
    t: u32,
    phase: Option<usize>,
    tasks: Vec<Option<usize>>,
    channels: Vec<Option<usize>>,
}

fn resolve(incident: &CompletedIncident, model: &PlotModel, index: usize) -> Result<Vec<Slice>, LearningError> {
    let unknown = |vertex: &str| LearningError::UnknownVertex { incident: index, vertex: vertex.into() };
    let state = |vertex: &str, states: &[String], s: &str| {
        states.iter().position(|x| x == s).ok_or_else(|| LearningError::UnknownState {
            incident: index,
            vertex: vertex.into(),
            state: s.into(),
        })
    };
    let mut out: Vec<Slice> = Vec::with_capacity(incident.records.len());
    for r in &incident.records {
        if out.last().is_some_and(|s| s.t >= r.t) {
            return Err(LearningError::Unordered { incident: index });
        }
        let mut slice = Slice {
            t: r.t,
            phase: None,
            tasks: alloc::vec![None; model.tasks.len()],
            channels: alloc::vec![None; model.channels.len()],
        };
        if let Some(rev) = &r.revealed {
            if let Some(p) = &rev.phase {
                slice.phase = Some(state(crate::model::PHASE_VERTEX, model.phases.labels(), p)?);
            }
            for (name, value) in &rev.tasks {
                let i = model.task_index(name).ok_or_else(|| unknown(name))?;
                slice.tasks[i] = Some(state(name, &model.tasks[i].states, value)?);
            }
        }
        for (name, value) in &r.channels {
            let c = model.channel_index(name).ok_or_else(|| unknown(name))?;
            if let Some(v) = value {
                slice.channels[c] = Some(state(name, &model.channels[c].states, v)?);
            }
        }
        out.push(slice);
    }
    Ok(out)
}

/// Value of `v` (lagged or not) as seen from slice `k`, if observed.
/// Intensities before slice 1 sit in their first state.
fn value(slices: &[Slice], k: usize, v: VertexRef, lagged: bool) -> Option<usize> {
    let slice = if lagged {
        let t = slices[k].t;
        match (k.checked_sub(1).map(|j| &slices[j]), v) {
            (_, VertexRef::Channel(_)) if t == 1 => return Some(0),
            (Some(prev), _) if prev.t + 1 == t => prev,
            _ => return None,
        }
    } else {
        &slices[k]
    };
    match v {
        VertexRef::Phase => slice.phase,
        VertexRef::Task(i) => slice.tasks[i],
        VertexRef::Channel(c) => slice.channels[c],
    }
}

fn first_violation(slices: &[Slice], model: &PlotModel) -> Option<(u32, String)> {
    for k in 0..slices.len() {
        let s = &slices[k];
        // Slice 0 holds the initial condition; its variables are founders.
        if s.t == 0 {
            continue;
        }
        if s.phase.is_some() && value(slices, k, VertexRef::Phase, true).is_none() {
            return Some((s.t, crate::model::PHASE_VERTEX.into()));
        }
        for (i, task) in model.tasks.iter().enumerate() {
            if s.tasks[i].is_some()
                && (s.phase.is_none() || task.row_parents().any(|p| value(slices, k, p.vertex, p.lagged).is_none()))
            {
                return Some((s.t, task.name.clone()));
            }
        }
        for (c, channel) in model.channels.iter().enumerate() {
            if s.channels[c].is_some() && channel.row_parents().any(|p| value(slices, k, p.vertex, p.lagged).is_none())
            {
                return Some((s.t, channel.name.clone()));
            }
        }
    }
    None
}

/// True iff every observed variable has all of its parents observed.
pub fn check_ancestral(incident: &CompletedIncident, model: &PlotModel) -> Result<Ancestry, LearningError> {
    let slices = resolve(incident, model, 0)?;
    let violator = first_violation(&slices, model);
    Ok(Ancestry { ancestral: violator.is_none(), violator })
}

/// Independent Dirichlet hyperparameters for every learnable row, plus the
/// integer counts absorbed so far.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DirichletSet {
    pub alpha: BTreeMap<RowKey, Vec<f64>>,
    pub counts: BTreeMap<RowKey, Vec<u64>>,
}

/// Learnable rows of a model and their widths.
pub fn row_layout(model: &PlotModel) -> Vec<(RowKey, usize)> {
    let mut out = Vec::new();
    for i in 1..model.phase_count() {
        let reach = model.phases.reach(i).len();
        out.push((RowKey::Abort { phase: i }, 2));
        if reach > 0 {
            out.push((RowKey::Stay { phase: i }, 2));
        }
        if reach > 1 {
            out.push((RowKey::Jump { phase: i }, reach));
        }
    }
    for (i, task) in model.tasks.iter().enumerate() {
        for (phase, table) in task.cpt.tables() {
            for row in 0..table.row_count() {
                out.push((RowKey::Task { task: i, phase, row }, table.columns()));
            }
        }
    }
    for (c, channel) in model.channels.iter().enumerate() {
        for row in 0..channel.cpt.row_count() {
            out.push((RowKey::Channel { channel: c, row }, channel.cpt.columns()));
        }
    }
    out
}

impl DirichletSet {
    /// Symmetric prior with concentration `alpha` on every learnable row.
    pub fn symmetric(model: &PlotModel, alpha: f64) -> Self {
        let mut set = DirichletSet::default();
        for (key, width) in row_layout(model) {
            set.alpha.insert(key, alloc::vec![alpha; width]);
            set.counts.insert(key, alloc::vec![0; width]);
        }
        set
    }

    pub fn flat(model: &PlotModel) -> Self {
        Self::symmetric(model, 1.0)
    }

    pub fn mean(&self, key: &RowKey) -> Option<Vec<f64>> {
        let a = self.alpha.get(key)?;
        let total: f64 = a.iter().sum();
        Some(a.iter().map(|x| x / total).collect())
    }

    /// Adds `counts` to both the hyperparameters and the exposure counts.
    pub fn absorb(&mut self, counts: &BTreeMap<RowKey, Vec<u64>>) -> Result<(), LearningError> {
        for (key, add) in counts {
            let alpha = self.alpha.get_mut(key).ok_or(LearningError::MissingRow(*key))?;
            let seen = self.counts.entry(*key).or_insert_with(|| alloc::vec![0; add.len()]);
            for ((a, s), &n) in alpha.iter_mut().zip(seen.iter_mut()).zip(add) {
                *a += n as f64;
                *s += n;
            }
        }
        Ok(())
    }

    /// Times each row has been visited.
    pub fn exposure(&self, key: &RowKey) -> u64 {
        self.counts.get(key).map_or(0, |c| c.iter().sum())
    }

    /// A copy of `model` with every learnable row replaced by its posterior
    /// mean.
    pub fn posterior_model(&self, model: &PlotModel) -> PlotModel {
        let mut out = model.clone();
        for (key, _) in row_layout(model) {
            let Some(mean) = self.mean(&key) else { continue };
            match key {
                RowKey::Abort { phase } => out.transition.params_mut(phase).abort = mean[0],
                RowKey::Stay { phase } => out.transition.params_mut(phase).stay = mean[0],
                RowKey::Jump { phase } => out.transition.params_mut(phase).jump = mean,
                RowKey::Task { task, phase, row } => {
                    let cpt = &mut out.tasks[task].cpt;
                    let table = match phase {
                        None => &mut cpt.base,
                        Some(j) => cpt.phases.get_mut(&j).expect("layout comes from the model"),
                    };
                    table.row_mut(row).copy_from_slice(&mean);
                }
                RowKey::Channel { channel, row } => {
                    out.channels[channel].cpt.row_mut(row).copy_from_slice(&mean);
                }
            }
        }
        out
    }
}

fn row_of(slices: &[Slice], k: usize, parents: impl Iterator<Item = crate::model::Parent>, model: &PlotModel) -> usize {
    mixed_radix_index(
        parents
            .map(|p| (value(slices, k, p.vertex, p.lagged).expect("ancestral"), model.vertex_states(p.vertex).len())),
    )
}

/// Counts harvested from one ancestral incident.
fn incident_counts(
    slices: &[Slice],
    model: &PlotModel,
    index: usize,
    into: &mut BTreeMap<RowKey, Vec<u64>>,
) -> Result<(), LearningError> {
    let mut bump = |key: RowKey, width: usize, at: usize| {
        into.entry(key).or_insert_with(|| alloc::vec![0; width])[at] += 1;
    };
    for k in 0..slices.len() {
        let s = &slices[k];
        if s.t == 0 {
            continue;
        }
        if let (Some(j), Some(i)) = (s.phase, value(slices, k, VertexRef::Phase, true)) {
            let reach = model.phases.reach(i);
            let impossible =
                || LearningError::Impossible { incident: index, t: s.t, vertex: crate::model::PHASE_VERTEX.into() };
            if i == 0 {
                if j != 0 {
                    return Err(impossible());
                }
            } else if !model.transition.overrides.contains_key(&(s.t, i)) {
                if j == 0 {
                    bump(RowKey::Abort { phase: i }, 2, 0);
                } else if j == i {
                    bump(RowKey::Abort { phase: i }, 2, 1);
                    if !reach.is_empty() {
                        bump(RowKey::Stay { phase: i }, 2, 0);
                    }
                } else {
                    let pos = reach.iter().position(|&x| x == j).ok_or_else(impossible)?;
                    bump(RowKey::Abort { phase: i }, 2, 1);
                    bump(RowKey::Stay { phase: i }, 2, 1);
                    if reach.len() > 1 {
                        bump(RowKey::Jump { phase: i }, reach.len(), pos);
                    }
                }
            }
        }
        for (i, task) in model.tasks.iter().enumerate() {
            let (Some(x), Some(w)) = (s.tasks[i], s.phase) else { continue };
            let row = row_of(slices, k, task.row_parents(), model);
            let phase = task.cpt.phases.contains_key(&w).then_some(w);
            bump(RowKey::Task { task: i, phase, row }, task.states.len(), x);
        }
        for (c, channel) in model.channels.iter().enumerate() {
            let Some(z) = s.channels[c] else { continue };
            let row = row_of(slices, k, channel.row_parents(), model);
            bump(RowKey::Channel { channel: c, row }, channel.states.len(), z);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearningUpdate {
    pub posterior: DirichletSet,
    pub counts: BTreeMap<RowKey, Vec<u64>>,
}

impl LearningUpdate {
    pub fn updated_rows(&self) -> Vec<RowKey> {
        self.counts.iter().filter(|(_, c)| c.iter().any(|&n| n > 0)).map(|(k, _)| *k).collect()
    }
}

/// Conjugate update from completed incidents. All incidents are checked
/// first; if any is non-ancestral the whole batch is rejected.
pub fn update_from_incidents(
    priors: &DirichletSet,
    incidents: &[CompletedIncident],
    model: &PlotModel,
) -> Result<LearningUpdate, LearningError> {
    let mut resolved = Vec::with_capacity(incidents.len());
    let mut rejected = Vec::new();
    for (n, incident) in incidents.iter().enumerate() {
        let slices = resolve(incident, model, n)?;
        if let Some((t, vertex)) = first_violation(&slices, model) {
            rejected.push(Rejection { incident: n, t, vertex });
        }
        resolved.push(slices);
    }
    if !rejected.is_empty() {
        return Err(LearningError::Rejected(rejected));
    }
    let mut counts = BTreeMap::new();
    for (n, slices) in resolved.iter().enumerate() {
        incident_counts(slices, model, n, &mut counts)?;
    }
    let mut posterior = priors.clone();
    posterior.absorb(&counts)?;
    Ok(LearningUpdate { posterior, counts })
}

/// One draw from a task CPT with the phase held at `w_0` and the other
/// parents fixed by design.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignedSample {
    pub task: String,
    /// Row parents by reference name (`"x"` or `"x@t-1"`).
    #[serde(default)]
    pub parents: BTreeMap<String, String>,
    pub state: String,
    #[serde(default = "one")]
    pub count: u64,
}

fn one() -> u64 {
    1
}

/// Updates only the inactive-phase task rows the samples address.
///
/// On the academic side a sample addressing a secure table is refused.
pub fn update_from_designed_samples(
    priors: &DirichletSet,
    samples: &[DesignedSample],
    model: &PlotModel,
    side: Side,
) -> Result<LearningUpdate, LearningError> {
    let mut counts: BTreeMap<RowKey, Vec<u64>> = BTreeMap::new();
    for (n, sample) in samples.iter().enumerate() {
        let bad = |message: String| LearningError::BadSample { sample: n, message };
        let i = model.task_index(&sample.task).ok_or_else(|| bad(alloc::format!("unknown task `{}`", sample.task)))?;
        let task = &model.tasks[i];
        if side == Side::A && task.partition == Partition::Secure {
            return Err(LearningError::SecureTable { sample: n, task: task.name.clone() });
        }
        let mut used = BTreeSet::new();
        let mut digits = Vec::new();
        for p in task.row_parents() {
            let name = model.parent_name(p);
            let value = sample.parents.get(&name).ok_or_else(|| bad(alloc::format!("parent `{name}` not given")))?;
            let states = model.vertex_states(p.vertex);
            let v = states
                .iter()
                .position(|s| s == value)
                .ok_or_else(|| bad(alloc::format!("`{name}` has no state `{value}`")))?;
            digits.push((v, states.len()));
            used.insert(name);
        }
        if let Some(extra) = sample.parents.keys().find(|k| !used.contains(*k)) {
            return Err(bad(alloc::format!("`{extra}` is not a parent of `{}`", task.name)));
        }
        let x = task
            .states
            .iter()
            .position(|s| *s == sample.state)
            .ok_or_else(|| bad(alloc::format!("`{}` has no state `{}`", task.name, sample.state)))?;
        let key = RowKey::Task { task: i, phase: None, row: mixed_radix_index(digits) };
        counts.entry(key).or_insert_with(|| alloc::vec![0; task.states.len()])[x] += sample.count;
    }
    let mut posterior = priors.clone();
    posterior.absorb(&counts)?;
    Ok(LearningUpdate { posterior, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::Revealed;
    use crate::model::ModelBuilder;

    fn toy() -> PlotModel {
        ModelBuilder::new("toy", &["w0", "w1"])
            .phase("w1", 0.2, 1.0, &[])
            .task("a", 2, &["W"], vec![vec![0.9, 0.1]])
            .task_phase("a", "w1", vec![vec![0.3, 0.7]])
            .build()
            .unwrap()
    }

    fn slice(t: u32, phase: &str, a: &str) -> ObservationRecord {
        ObservationRecord {
            t,
            channels: BTreeMap::new(),
            revealed: Some(Revealed { phase: Some(phase.into()), tasks: [("a".into(), a.into())].into() }),
        }
    }

    #[test]
    fn counts_add_to_prior() {
        let model = toy();
        let incident = CompletedIncident {
            records: vec![
                slice(0, "w1", "0"),
                slice(1, "w1", "1"),
                slice(2, "w1", "1"),
                slice(3, "w1", "0"),
                slice(4, "w1", "1"),
            ],
            ..Default::default()
        };
        let prior = DirichletSet::flat(&model);
        let up = update_from_incidents(&prior, &[incident], &model).unwrap();
        let key = RowKey::Task { task: 0, phase: Some(1), row: 0 };
        assert_eq!(up.posterior.alpha[&key], [2.0, 4.0]);
        assert_eq!(up.posterior.alpha[&RowKey::Abort { phase: 1 }], [1.0, 5.0]);
        assert!(!up.posterior.alpha.contains_key(&RowKey::Stay { phase: 1 }));
    }

    #[test]
    fn empty_incident_is_ancestral() {
        let a = check_ancestral(&CompletedIncident::default(), &toy()).unwrap();
        assert!(a.ancestral);
    }

    #[test]
    fn task_without_phase_is_not_ancestral() {
        let mut r = slice(1, "w1", "1");
        r.revealed.as_mut().unwrap().phase = None;
        let incident = CompletedIncident { records: vec![slice(0, "w1", "0"), r], ..Default::default() };
        let a = check_ancestral(&incident, &toy()).unwrap();
        assert_eq!(a.violator, Some((1, "a".into())));
    }
}
