use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::utility::{AttributeKind, UtilitySpec};
use super::{apply_intervention_at, Decision, InterventionError, DO_NOTHING};
use crate::factor::{eliminate, Factor};
use crate::inference::{latent_step, too_large, BeliefState, InferenceError};
use crate::model::PlotModel;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SeuError {
    #[error(transparent)]
    Intervention(#[from] InterventionError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("utility `{id}`: {message}")]
    InvalidUtility { id: String, message: String },
    #[error("utility `{id}` is undefined for attribute values {values:?}")]
    UndefinedUtility { id: String, values: Vec<f64> },
    #[error("the do-nothing decision must be among the candidates")]
    MissingDoNothing,
    #[error("horizon must be at least 1")]
    ZeroHorizon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredDecision {
    pub id: String,
    pub score: f64,
}

/// Attribute extractor resolved against a model.
enum Extractor {
    Reached(Vec<bool>),
    FirstReach(Vec<bool>),
    Occupancy(Vec<bool>),
    TaskSteps(usize, usize),
    FinalIn(Vec<bool>),
    Cost,
}

const NEVER: i64 = -1;

impl Extractor {
    fn compile(model: &PlotModel, kind: &AttributeKind) -> Self {
        let mask = |phases: &[String]| {
            let mut m = alloc::vec![false; model.phase_count()];
            for p in phases {
                if let Some(j) = model.phases.index_of(p) {
                    m[j] = true;
                }
            }
            m
        };
        match kind {
            AttributeKind::Reached { phases } => Extractor::Reached(mask(phases)),
            AttributeKind::FirstReach { phases } => Extractor::FirstReach(mask(phases)),
            AttributeKind::Occupancy { phases } => Extractor::Occupancy(mask(phases)),
            AttributeKind::FinalIn { phases } => Extractor::FinalIn(mask(phases)),
            AttributeKind::TaskSteps { task, state } => {
                let i = model.task_index(task).unwrap_or(0);
                let s = model.tasks.get(i).and_then(|x| x.states.iter().position(|y| y == state)).unwrap_or(0);
                Extractor::TaskSteps(i, s)
            }
            AttributeKind::Cost => Extractor::Cost,
        }
    }

    fn start(&self) -> i64 {
        match self {
            Extractor::FirstReach(_) => NEVER,
            _ => 0,
        }
    }

    /// Running value after visiting state `(w, θ)` at slice `t`.
    fn visit(&self, acc: i64, w: usize, tasks: &[usize], t: u32) -> i64 {
        match self {
            Extractor::Reached(m) => acc.max(i64::from(m[w])),
            Extractor::FirstReach(m) if acc == NEVER && m[w] => i64::from(t),
            Extractor::FirstReach(_) => acc,
            Extractor::Occupancy(m) => acc + i64::from(m[w]),
            Extractor::TaskSteps(i, s) => acc + i64::from(tasks[*i] == *s),
            Extractor::FinalIn(_) | Extractor::Cost => 0,
        }
    }

    fn finish(&self, acc: i64, w: usize, end: u32, cost: f64) -> f64 {
        match self {
            Extractor::FirstReach(_) if acc == NEVER => f64::from(end + 1),
            Extractor::FinalIn(m) => f64::from(u8::from(m[w])),
            Extractor::Cost => cost,
            _ => acc as f64,
        }
    }
}

/// Decodes cell indices of the `(W, θ)` table into phase and task states.
struct Cells {
    phase: Vec<usize>,
    tasks: Vec<Vec<usize>>,
}

impl Cells {
    fn new(cards: &[usize]) -> Self {
        let size: usize = cards.iter().product();
        let mut phase = Vec::with_capacity(size);
        let mut tasks = Vec::with_capacity(size);
        let mut digits = alloc::vec![0usize; cards.len()];
        for _ in 0..size {
            phase.push(digits[0]);
            tasks.push(digits[1..].to_vec());
            for d in (0..digits.len()).rev() {
                digits[d] += 1;
                if digits[d] < cards[d] {
                    break;
                }
                digits[d] = 0;
            }
        }
        Cells { phase, tasks }
    }
}

/// Subjective expected utility `Ū(d) = Σ_a U(a) p_d(a)` over slices
/// `t..=t+horizon`, where `t` is the belief's slice.
///
/// The belief is pushed exactly through the intervened model while the
/// attribute accumulators ride along as an extra variable, so `p_d(a)` is
/// exact rather than sampled.
pub fn seu(
    model: &PlotModel,
    belief: &BeliefState,
    decision: &Decision,
    utility: &UtilitySpec,
    horizon: u32,
) -> Result<f64, SeuError> {
    if horizon == 0 {
        return Err(SeuError::ZeroHorizon);
    }
    utility.check(model)?;
    if !decision.cost.is_finite() {
        return Err(SeuError::InvalidUtility { id: utility.id.clone(), message: "decision cost is not finite".into() });
    }
    let intervened = apply_intervention_at(model, decision, belief.t)?;
    let joint = belief.marginalized();
    joint.check_model(model)?;
    let extractors: Vec<Extractor> = utility.attributes.iter().map(|a| Extractor::compile(model, &a.kind)).collect();
    let cells = Cells::new(&joint.cards);
    let size = joint.cells.len();
    let cap = belief.cap;

    // keys[k] holds the accumulator tuple, mass[k] its distribution over cells.
    let mut keys: Vec<Vec<i64>> = Vec::new();
    let mut mass: Vec<Vec<f64>> = Vec::new();
    let bucket = |keys: &mut Vec<Vec<i64>>, index: &mut BTreeMap<Vec<i64>, usize>, key: Vec<i64>| {
        *index.entry(key.clone()).or_insert_with(|| {
            keys.push(key);
            keys.len() - 1
        })
    };
    let mut index = BTreeMap::new();
    let start: Vec<i64> = extractors.iter().map(Extractor::start).collect();
    for (s, &p) in joint.cells.iter().enumerate() {
        if p > 0.0 {
            let key = visit(&extractors, &start, &cells, s, belief.t);
            let k = bucket(&mut keys, &mut index, key);
            if k == mass.len() {
                mass.push(alloc::vec![0.0; size]);
            }
            mass[k][s] += p;
        }
    }

    const KEY: usize = usize::MAX;
    for step in 1..=horizon {
        let t = belief.t + step;
        let cells_needed = keys.len().saturating_mul(size);
        if cells_needed > cap {
            return Err(InferenceError::CapExceeded { cells: cells_needed, cap }.into());
        }
        let (mut factors, prev, cur) = latent_step(&intervened, t)?;
        let mut vars = alloc::vec![KEY];
        vars.extend(&prev);
        let mut cards = alloc::vec![keys.len()];
        cards.extend(&joint.cards);
        factors.push(Factor::new(vars, cards, mass.concat()));
        let mut keep = alloc::vec![KEY];
        keep.extend(&cur);
        let mut f = eliminate(factors, &keep, cap).map_err(too_large(cap))?.factor;
        let total = f.total();
        f.scale(1.0 / total);

        let old_keys = core::mem::take(&mut keys);
        let mut next_index = BTreeMap::new();
        let mut next_mass: Vec<Vec<f64>> = Vec::new();
        for (k, row) in f.values.chunks(size).enumerate() {
            for (s, &p) in row.iter().enumerate() {
                if p > 0.0 {
                    let key = visit(&extractors, &old_keys[k], &cells, s, t);
                    let j = bucket(&mut keys, &mut next_index, key);
                    if j == next_mass.len() {
                        next_mass.push(alloc::vec![0.0; size]);
                    }
                    next_mass[j][s] += p;
                }
            }
        }
        mass = next_mass;
    }

    let end = belief.t + horizon;
    let mut total = 0.0;
    let mut values = alloc::vec![0.0; extractors.len()];
    for (key, row) in keys.iter().zip(&mass) {
        for (s, &p) in row.iter().enumerate() {
            if p > 0.0 {
                for (a, e) in extractors.iter().enumerate() {
                    values[a] = e.finish(key[a], cells.phase[s], end, decision.cost);
                }
                total += p * utility.evaluate(&values)?;
            }
        }
    }
    Ok(total)
}

fn visit(extractors: &[Extractor], acc: &[i64], cells: &Cells, s: usize, t: u32) -> Vec<i64> {
    extractors.iter().zip(acc).map(|(e, &a)| e.visit(a, cells.phase[s], &cells.tasks[s], t)).collect()
}

/// Scores every decision and sorts by descending `Ū`, ties broken by id.
pub fn rank_decisions(
    model: &PlotModel,
    belief: &BeliefState,
    decisions: &[Decision],
    utility: &UtilitySpec,
    horizon: u32,
) -> Result<Vec<ScoredDecision>, SeuError> {
    if !decisions.iter().any(|d| d.id == DO_NOTHING) {
        return Err(SeuError::MissingDoNothing);
    }
    let mut out = decisions
        .iter()
        .map(|d| Ok(ScoredDecision { id: d.id.clone(), score: seu(model, belief, d, utility, horizon)? }))
        .collect::<Result<Vec<_>, SeuError>>()?;
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    Ok(out)
}
