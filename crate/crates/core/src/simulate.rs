//! Seeded generation of synthetic incidents.
//!
//! Each slice consumes a fixed number of uniforms (one for the phase, one
//! per task, two per channel) whatever the model's tables say, so two runs
//! with the same seed but different interventions share their random
//! draws slice by slice.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::inference::{ObservationRecord, Revealed};
use crate::interventions::{apply_decision_id, InterventionError};
use crate::learning::CompletedIncident;
use crate::model::{mixed_radix_index, ConfigError, PlotModel, VertexRef};

/// Stride between per-incident seeds in a batch.
pub const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedDecision {
    pub decision: String,
    /// First slice the decision applies to.
    pub start: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub seed: u64,
    /// Number of slices after the initial one; the model's horizon if unset.
    #[serde(default)]
    pub horizon: Option<u32>,
    /// Category key written into the log; the model's own if unset.
    #[serde(default)]
    pub category: Option<String>,
    #[serde(default)]
    pub intervention: Option<ForcedDecision>,
    /// Emit the latent values (and a `t = 0` record) alongside intensities.
    #[serde(default)]
    pub court_report: bool,
    /// Phase at slice 0; the first active phase if unset.
    #[serde(default)]
    pub initial_phase: Option<String>,
    /// Probability that any single intensity reading is dropped.
    #[serde(default)]
    pub missing_rate: f64,
}

impl SimulationConfig {
    pub fn new(seed: u64) -> Self {
        SimulationConfig {
            seed,
            horizon: None,
            category: None,
            intervention: None,
            court_report: false,
            initial_phase: None,
            missing_rate: 0.0,
        }
    }

    pub fn horizon(mut self, horizon: u32) -> Self {
        self.horizon = Some(horizon);
        self
    }

    pub fn court_report(mut self) -> Self {
        self.court_report = true;
        self
    }

    pub fn force(mut self, decision: impl Into<String>, start: u32) -> Self {
        self.intervention = Some(ForcedDecision { decision: decision.into(), start });
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimulationError {
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown initial phase `{0}`")]
    UnknownPhase(String),
    #[error("missing rate {0} is not a probability")]
    MissingRate(f64),
    #[error("a batch needs at least one incident")]
    EmptyBatch,
}

/// Latent values at one slice, as state indices.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSlice {
    pub phase: usize,
    pub tasks: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncidentLog {
    pub id: String,
    pub category: String,
    pub seed: u64,
    pub records: Vec<ObservationRecord>,
    /// The sampled `(W_t, θ_t)` for `t = 0..=T`, kept whether or not it is
    /// revealed in the records.
    #[serde(skip)]
    pub trajectory: Vec<LatentSlice>,
}

impl IncidentLog {
    pub fn to_incident(&self) -> CompletedIncident {
        CompletedIncident { id: self.id.clone(), category: self.category.clone(), records: self.records.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Archive {
    pub master_seed: u64,
    pub incidents: Vec<IncidentLog>,
}

impl Archive {
    pub fn completed(&self) -> Vec<CompletedIncident> {
        self.incidents.iter().map(IncidentLog::to_incident).collect()
    }
}

/// Index of the first cumulative bucket above `u`, skipping zero-mass
/// states at the end.
fn draw(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (k, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = k;
            if u < acc {
                return k;
            }
        }
    }
    last
}

pub fn simulate_incident(model: &PlotModel, config: &SimulationConfig) -> Result<IncidentLog, SimulationError> {
    if !(0.0..=1.0).contains(&config.missing_rate) {
        return Err(SimulationError::MissingRate(config.missing_rate));
    }
    let model = match &config.intervention {
        Some(f) => apply_decision_id(model, &f.decision, f.start)?,
        None => model.clone(),
    };
    let start = match &config.initial_phase {
        Some(label) => model.phases.index_of(label).ok_or_else(|| SimulationError::UnknownPhase(label.clone()))?,
        None => 1.min(model.phase_count() - 1),
    };
    let horizon = config.horizon.unwrap_or(model.horizon);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let n = model.tasks.len();

    let mut phase = start;
    let mut tasks = alloc::vec![0usize; n];
    let mut channels = alloc::vec![0usize; model.channels.len()];
    let mut trajectory = alloc::vec![LatentSlice { phase, tasks: tasks.clone() }];
    let mut records = Vec::with_capacity(horizon as usize + 1);
    let reveal = |phase: usize, tasks: &[usize]| Revealed {
        phase: Some(model.phases.label(phase).into()),
        tasks: model.tasks.iter().zip(tasks).map(|(x, &s)| (x.name.clone(), x.states[s].clone())).collect(),
    };
    if config.court_report {
        records.push(ObservationRecord { t: 0, channels: BTreeMap::new(), revealed: Some(reveal(phase, &tasks)) });
    }

    for t in 1..=horizon {
        let matrix = model.transition_matrix(t)?;
        let prev_tasks = core::mem::take(&mut tasks);
        let prev_channels = channels.clone();
        phase = draw(matrix.row(phase), rng.random::<f64>());
        for (i, task) in model.tasks.iter().enumerate() {
            let row = mixed_radix_index(task.row_parents().map(|p| {
                let VertexRef::Task(k) = p.vertex else { unreachable!("task rows are indexed by tasks only") };
                (if p.lagged { prev_tasks[k] } else { tasks[k] }, model.tasks[k].states.len())
            }));
            let u = rng.random::<f64>();
            tasks.push(draw(model.task_cpt_at(i, t).row(phase, row), u));
        }
        let mut record = ObservationRecord::new(t);
        for (c, channel) in model.channels.iter().enumerate() {
            let row = mixed_radix_index(channel.row_parents().map(|p| match (p.vertex, p.lagged) {
                (VertexRef::Task(k), _) => (tasks[k], model.tasks[k].states.len()),
                (VertexRef::Channel(k), _) => (prev_channels[k], model.channels[k].states.len()),
                (VertexRef::Phase, _) => unreachable!("intensities never read the phase"),
            }));
            let u = rng.random::<f64>();
            let keep = rng.random::<f64>() >= config.missing_rate;
            channels[c] = draw(model.channel_cpt_at(c, t).row(row), u);
            let value = keep.then(|| channel.states[channels[c]].clone());
            record.channels.insert(channel.name.clone(), value);
        }
        if config.court_report {
            record.revealed = Some(reveal(phase, &tasks));
        }
        records.push(record);
        trajectory.push(LatentSlice { phase, tasks: tasks.clone() });
    }
    Ok(IncidentLog {
        id: format!("{:016x}", config.seed),
        category: config.category.clone().unwrap_or_else(|| model.category.key.clone()),
        seed: config.seed,
        records,
        trajectory,
    })
}

/// `n` incidents with seeds `master + i * SEED_STRIDE` (wrapping).
pub fn simulate_batch(model: &PlotModel, n: usize, template: &SimulationConfig) -> Result<Archive, SimulationError> {
    if n == 0 {
        return Err(SimulationError::EmptyBatch);
    }
    let incidents = (0..n as u64)
        .map(|i| {
            let config =
                SimulationConfig { seed: template.seed.wrapping_add(i.wrapping_mul(SEED_STRIDE)), ..template.clone() };
            simulate_incident(model, &config)
        })
        .collect::<Result<_, _>>()?;
    Ok(Archive { master_seed: template.seed, incidents })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelBuilder;

    fn chain() -> PlotModel {
        ModelBuilder::new("chain", &["w0", "w1", "w2", "w3"])
            .phase("w1", 0.0, 0.0, &[("w2", 1.0)])
            .phase("w2", 0.0, 0.0, &[("w3", 1.0)])
            .phase("w3", 0.0, 1.0, &[])
            .build()
            .unwrap()
    }

    #[test]
    fn deterministic_chain_advances_each_step() {
        let log = simulate_incident(&chain(), &SimulationConfig::new(3).horizon(4)).unwrap();
        let phases: Vec<usize> = log.trajectory.iter().map(|s| s.phase).collect();
        assert_eq!(phases, [1, 2, 3, 3, 3]);
    }

    #[test]
    fn same_seed_same_log() {
        let c = SimulationConfig::new(11).horizon(6).court_report();
        assert_eq!(simulate_incident(&chain(), &c).unwrap(), simulate_incident(&chain(), &c).unwrap());
    }

    #[test]
    fn batch_of_one_is_a_single_incident() {
        let c = SimulationConfig::new(5).horizon(3);
        let batch = simulate_batch(&chain(), 1, &c).unwrap();
        assert_eq!(batch.incidents[0], simulate_incident(&chain(), &c).unwrap());
    }
}
