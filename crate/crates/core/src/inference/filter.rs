use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use super::{too_large, BeliefState, InferenceError, ObservationRecord};
use crate::factor::{eliminate, Factor};
use crate::model::{PlotModel, VertexRef};

/// Variable ids for one step: slice `t-1` first, then slice `t`.
#[derive(Clone, Copy)]
struct Ids {
    tasks: usize,
    channels: usize,
}

impl Ids {
    fn of(model: &PlotModel) -> Self {
        Ids { tasks: model.tasks.len(), channels: model.channels.len() }
    }

    fn offset(self) -> usize {
        1 + self.tasks + self.channels
    }

    fn phase(self, lagged: bool) -> usize {
        if lagged {
            0
        } else {
            self.offset()
        }
    }

    fn task(self, i: usize, lagged: bool) -> usize {
        self.phase(lagged) + 1 + i
    }

    fn channel(self, c: usize, lagged: bool) -> usize {
        self.phase(lagged) + 1 + self.tasks + c
    }

    fn vertex(self, v: VertexRef, lagged: bool) -> usize {
        match v {
            VertexRef::Phase => self.phase(lagged),
            VertexRef::Task(i) => self.task(i, lagged),
            VertexRef::Channel(c) => self.channel(c, lagged),
        }
    }

    /// Ids of a belief's axes.
    fn state(self, latent: &[(usize, usize)], lagged: bool) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..=self.tasks).map(|k| self.phase(lagged) + k).collect();
        ids.extend(latent.iter().map(|&(c, _)| self.channel(c, lagged)));
        ids
    }
}

struct Step {
    factors: Vec<Factor>,
    latent: Vec<(usize, usize)>,
    observed: BTreeMap<usize, usize>,
}

/// Conditional tables linking slice `t-1` (described by `prev`) to slice
/// `t`. With `obs = None` intensities are left out entirely.
fn step_factors(
    model: &PlotModel,
    t: u32,
    prev: &BeliefState,
    obs: Option<&[Option<usize>]>,
) -> Result<Step, InferenceError> {
    let ids = Ids::of(model);
    let m = model.phase_count();
    let matrix = model.transition_matrix(t)?;
    let mut factors = Vec::with_capacity(1 + model.tasks.len() + model.channels.len());
    factors.push(Factor::new(
        alloc::vec![ids.phase(true), ids.phase(false)],
        alloc::vec![m, m],
        matrix.rows().flatten().copied().collect(),
    ));
    for (i, task) in model.tasks.iter().enumerate() {
        let cpt = model.task_cpt_at(i, t);
        let mut vars = alloc::vec![ids.phase(false)];
        let mut cards = alloc::vec![m];
        for p in task.row_parents() {
            vars.push(ids.vertex(p.vertex, p.lagged));
            cards.push(model.vertex_states(p.vertex).len());
        }
        vars.push(ids.task(i, false));
        cards.push(task.states.len());
        let mut values = Vec::with_capacity(cards.iter().product());
        for w in 0..m {
            values.extend_from_slice(cpt.table(w).values());
        }
        factors.push(Factor::new(vars, cards, values));
    }

    let mut latent = Vec::new();
    let mut observed = BTreeMap::new();
    if let Some(obs) = obs {
        let lag_parents = model.lag_parent_channels();
        for (c, channel) in model.channels.iter().enumerate() {
            let needed = lag_parents.contains(&c);
            match obs[c] {
                Some(z) if needed => {
                    observed.insert(c, z);
                }
                None if needed => latent.push((c, channel.states.len())),
                // Missing and read by nobody: the table sums to one.
                None => continue,
                Some(_) => {}
            }
            let mut vars = Vec::new();
            let mut cards = Vec::new();
            for p in channel.row_parents() {
                vars.push(ids.vertex(p.vertex, p.lagged));
                cards.push(model.vertex_states(p.vertex).len());
            }
            vars.push(ids.channel(c, false));
            cards.push(channel.states.len());
            let mut f = Factor::new(vars, cards, model.channel_cpt_at(c, t).values().to_vec());
            for p in channel.row_parents().filter(|p| p.lagged) {
                if let VertexRef::Channel(k) = p.vertex {
                    if let Some(&z) = prev.observed.get(&k) {
                        f = f.restrict(ids.channel(k, true), z);
                    }
                }
            }
            if let Some(z) = obs[c] {
                f = f.restrict(ids.channel(c, false), z);
            }
            factors.push(f);
        }
    }
    Ok(Step { factors, latent, observed })
}

/// Phase and task tables for one step without intensities, with the ids of
/// the `(W, θ)` axes in slice `t-1` and slice `t`.
pub(crate) fn latent_step(model: &PlotModel, t: u32) -> Result<(Vec<Factor>, Vec<usize>, Vec<usize>), InferenceError> {
    let ids = Ids::of(model);
    let probe = BeliefState {
        t: t - 1,
        cards: Vec::new(),
        latent: Vec::new(),
        observed: BTreeMap::new(),
        cells: Vec::new(),
        log_likelihood: 0.0,
        cap: 0,
    };
    let factors = step_factors(model, t, &probe, None)?.factors;
    Ok((factors, ids.state(&[], true), ids.state(&[], false)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub belief: BeliefState,
    /// `log p(z_t | z_{1:t-1})`.
    pub log_evidence: f64,
}

impl StepResult {
    pub fn evidence(&self) -> f64 {
        libm::exp(self.log_evidence)
    }
}

/// One exact forward step: `p(W_t, θ_t | z_{1:t})` from the belief at `t-1`.
pub fn filter_step(
    belief: &BeliefState,
    model: &PlotModel,
    obs: &ObservationRecord,
) -> Result<StepResult, InferenceError> {
    if obs.t != belief.t + 1 {
        return Err(InferenceError::TimeMismatch { expected_prev: belief.t, found: obs.t });
    }
    belief.check_model(model)?;
    let values = obs.resolve(model)?;
    let ids = Ids::of(model);
    let step = step_factors(model, obs.t, belief, Some(&values))?;
    let mut factors = step.factors;
    factors.push(belief.factor(&ids.state(&belief.latent, true)));
    let keep = ids.state(&step.latent, false);
    let out = eliminate(factors, &keep, belief.cap).map_err(too_large(belief.cap))?;
    let mut f = out.factor;
    let total = f.total();
    if !(total > 0.0 && total.is_finite()) {
        return Err(InferenceError::Inconsistent { t: obs.t });
    }
    f.scale(1.0 / total);
    let log_evidence = out.log_scale + libm::log(total);
    Ok(StepResult {
        belief: BeliefState {
            t: obs.t,
            cards: belief.cards.clone(),
            latent: step.latent,
            observed: step.observed,
            cells: f.values,
            log_likelihood: belief.log_likelihood + log_evidence,
            cap: belief.cap,
        },
        log_evidence,
    })
}

/// Filters a whole log from `prior`. A record at `t = 0` (the initial slice
/// of a court report) carries no intensities and is skipped.
pub fn filter_log(
    model: &PlotModel,
    prior: &BeliefState,
    log: &[ObservationRecord],
) -> Result<Vec<StepResult>, InferenceError> {
    let mut out: Vec<StepResult> = Vec::with_capacity(log.len());
    for obs in log.iter().filter(|o| !(o.t == 0 && prior.t == 0)) {
        let current = out.last().map_or(prior, |s| &s.belief);
        let step = filter_step(current, model, obs)?;
        out.push(step);
    }
    Ok(out)
}

/// Joint `(W, θ)` distributions for slices `t+1..=t+k`, absorbing no evidence.
pub fn predict_joint(belief: &BeliefState, model: &PlotModel, k: u32) -> Result<Vec<Vec<f64>>, InferenceError> {
    if k == 0 {
        return Err(InferenceError::ZeroHorizon);
    }
    belief.check_model(model)?;
    let ids = Ids::of(model);
    let mut current = belief.marginalized();
    let mut out = Vec::with_capacity(k as usize);
    for s in 1..=k {
        let t = belief.t + s;
        let mut factors = step_factors(model, t, &current, None)?.factors;
        factors.push(current.factor(&ids.state(&[], true)));
        let f = eliminate(factors, &ids.state(&[], false), belief.cap).map_err(too_large(belief.cap))?.factor;
        let total = f.total();
        current.cells = f.values.iter().map(|x| x / total).collect();
        current.t = t;
        out.push(current.cells.clone());
    }
    Ok(out)
}

/// Phase marginals for slices `t+1..=t+k`.
pub fn predict(belief: &BeliefState, model: &PlotModel, k: u32) -> Result<Vec<Vec<f64>>, InferenceError> {
    let phases = model.phase_count();
    Ok(predict_joint(belief, model, k)?
        .into_iter()
        .map(|joint| {
            let inner = joint.len() / phases;
            joint.chunks(inner).map(|c| c.iter().sum()).collect()
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Smoothed {
    pub filtered: Vec<StepResult>,
    /// `p(W_t, θ_t | z_{1:T})` for each filtered slice.
    pub joint: Vec<Vec<f64>>,
    /// `p(W_t | z_{1:T})`.
    pub phase: Vec<Vec<f64>>,
}

/// Forward-backward over a complete log.
pub fn smooth(model: &PlotModel, prior: &BeliefState, log: &[ObservationRecord]) -> Result<Smoothed, InferenceError> {
    let filtered = filter_log(model, prior, log)?;
    let ids = Ids::of(model);
    let records: Vec<&ObservationRecord> = log.iter().filter(|o| !(o.t == 0 && prior.t == 0)).collect();
    let n = filtered.len();
    let mut joint = alloc::vec![Vec::new(); n];
    let mut phase = alloc::vec![Vec::new(); n];
    // β over the axes of the belief at the current slice, prev-slice ids.
    let mut beta = Factor::scalar(1.0);
    for k in (0..n).rev() {
        let alpha = &filtered[k].belief;
        let gamma =
            alpha.factor(&ids.state(&alpha.latent, true)).product(&beta, alpha.cap).map_err(too_large(alpha.cap))?;
        let total = gamma.total();
        let smoothed = BeliefState { cells: gamma.values.iter().map(|x| x / total).collect(), ..alpha.clone() };
        joint[k] = smoothed.joint();
        phase[k] = smoothed.phase_marginal();
        if k == 0 {
            break;
        }
        let before = &filtered[k - 1].belief;
        let values = records[k].resolve(model)?;
        let step = step_factors(model, records[k].t, before, Some(&values))?;
        let shift = ids.offset();
        let mut factors = step.factors;
        factors.push(beta.rename(|v| v + shift));
        let keep = ids.state(&before.latent, true);
        let mut next = eliminate(factors, &keep, alpha.cap).map_err(too_large(alpha.cap))?.factor;
        let m = next.max();
        if m > 0.0 {
            next.scale(1.0 / m);
        }
        beta = next;
    }
    Ok(Smoothed { filtered, joint, phase })
}
