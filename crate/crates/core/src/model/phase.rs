use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Ordered phase labels `w_0..w_m` plus the one-step reachability sets.
///
/// `w_0` is the inactive phase: absorbing, with an empty reach set.
/// `reach[i]` lists the active phases other than `i` that phase `i` can
/// jump to when it neither aborts nor stays.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseSpace {
    labels: Vec<String>,
    reach: Vec<Vec<usize>>,
}

impl PhaseSpace {
    /// `reach` must have one entry per label; entries are not checked here,
    /// see `validate_model`.
    pub fn new(labels: Vec<String>, reach: Vec<Vec<usize>>) -> Self {
        assert_eq!(labels.len(), reach.len(), "one reach set per phase");
        PhaseSpace { labels, reach }
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Number of active phases `m`.
    pub fn active(&self) -> usize {
        self.labels.len().saturating_sub(1)
    }

    pub fn reach(&self, i: usize) -> &[usize] {
        &self.reach[i]
    }
}

/// Parameters of one active phase's row: abort `q'`, stay `q`, and the jump
/// distribution `p^W` aligned with the phase's reach set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseParams {
    pub abort: f64,
    pub stay: f64,
    pub jump: Vec<f64>,
}

impl PhaseParams {
    pub fn new(abort: f64, stay: f64, jump: Vec<f64>) -> Self {
        PhaseParams { abort, stay, jump }
    }
}

/// Phase-transition parameters. Homogeneous in time unless `overrides`
/// carries entries keyed by `(t, phase)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionParams {
    /// `phases[i - 1]` holds the parameters of active phase `i`.
    pub phases: Vec<PhaseParams>,
    pub overrides: BTreeMap<(u32, usize), PhaseParams>,
}

impl TransitionParams {
    pub fn homogeneous(phases: Vec<PhaseParams>) -> Self {
        TransitionParams { phases, overrides: BTreeMap::new() }
    }

    pub fn is_homogeneous(&self) -> bool {
        self.overrides.is_empty()
    }

    /// Parameters for leaving active phase `i` into slice `t`.
    pub fn params(&self, t: u32, i: usize) -> &PhaseParams {
        self.overrides.get(&(t, i)).unwrap_or(&self.phases[i - 1])
    }

    pub fn params_mut(&mut self, i: usize) -> &mut PhaseParams {
        &mut self.phases[i - 1]
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("phase {phase}: jump probability to phase {target} is undefined")]
    UndefinedJump { phase: String, target: String },
    #[error("transition parameters cover {found} active phases, expected {expected}")]
    PhaseCount { expected: usize, found: usize },
}

/// Dense row-stochastic `(m+1) x (m+1)` matrix, row = previous phase.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    size: usize,
    values: Vec<f64>,
}

impl TransitionMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.size..(i + 1) * self.size]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.size)
    }
}

/// Builds `p_t^W(w_j | w_i)`:
///
/// ```text
/// row 0:  1 at j = 0, 0 elsewhere
/// row i:  q'               j = 0
///         (1 - q') q        j = i
///         (1 - q)(1 - q') p j in E_i
///         0                 otherwise
/// ```
pub fn build_transition_matrix(
    space: &PhaseSpace,
    params: &TransitionParams,
    t: u32,
) -> Result<TransitionMatrix, ConfigError> {
    if params.phases.len() != space.active() {
        return Err(ConfigError::PhaseCount { expected: space.active(), found: params.phases.len() });
    }
    matrix_from(space, |i| params.params(t, i))
}

pub(crate) fn matrix_from<'a>(
    space: &PhaseSpace,
    params: impl Fn(usize) -> &'a PhaseParams,
) -> Result<TransitionMatrix, ConfigError> {
    let n = space.len();
    let mut values = alloc::vec![0.0; n * n];
    if n == 0 {
        return Ok(TransitionMatrix { size: 0, values });
    }
    values[0] = 1.0;
    for i in 1..n {
        let p = params(i);
        let row = &mut values[i * n..(i + 1) * n];
        row[0] = p.abort;
        row[i] = (1.0 - p.abort) * p.stay;
        let leave = (1.0 - p.stay) * (1.0 - p.abort);
        for (k, &j) in space.reach(i).iter().enumerate() {
            let jump = p.jump.get(k).copied().ok_or_else(|| ConfigError::UndefinedJump {
                phase: space.label(i).into(),
                target: space.label(j).into(),
            })?;
            row[j] = leave * jump;
        }
    }
    Ok(TransitionMatrix { size: n, values })
}
