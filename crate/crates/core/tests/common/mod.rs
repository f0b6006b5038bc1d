//! Shared test support: a random plot-model generator and brute-force
//! oracles that enumerate trajectories directly from the CPTs.
#![allow(dead_code)]

use std::collections::BTreeMap;

use plotnet_core::inference::{ObservationRecord, Prior};
use plotnet_core::model::{ModelBuilder, PlotModel, VertexRef};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};

pub fn rng(seed: u64) -> SmallRng {
    SmallRng::seed_from_u64(seed)
}

/// Random probability vector with entries bounded away from zero.
pub fn positive_row(rng: &mut SmallRng, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

pub fn rows(rng: &mut SmallRng, n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| positive_row(rng, k)).collect()
}

#[derive(Clone, Copy, Debug)]
pub struct Limits {
    pub active: usize,
    pub tasks: usize,
}

pub const FULL: Limits = Limits { active: 4, tasks: 5 };

/// A valid random plot model with binary tasks and binary intensities.
pub fn random_model(rng: &mut SmallRng, limits: Limits) -> PlotModel {
    let m = rng.random_range(1..=limits.active);
    let n = rng.random_range(0..=limits.tasks);
    let labels: Vec<String> = (0..=m).map(|j| format!("w{j}")).collect();
    let mut b = ModelBuilder::with_labels("random", labels.clone());

    for i in 1..=m {
        let targets: Vec<usize> = (1..=m).filter(|&j| j != i && rng.random_bool(0.5)).collect();
        let abort = if rng.random_bool(0.2) { 0.0 } else { rng.random_range(0.0..0.3) };
        let stay = if targets.is_empty() { 1.0 } else { rng.random_range(0.0..0.9) };
        let jump = positive_row(rng, targets.len());
        let pairs: Vec<(&str, f64)> = targets.iter().zip(&jump).map(|(&j, &p)| (labels[j].as_str(), p)).collect();
        b = b.phase(&labels[i], abort, stay, &pairs);
    }

    let names: Vec<String> = (0..n).map(|i| format!("t{i}")).collect();
    let sets: Vec<Vec<usize>> =
        (0..=m).map(|j| if j == 0 { vec![] } else { (0..n).filter(|_| rng.random_bool(0.4)).collect() }).collect();
    for i in 0..n {
        let mut parents = vec!["W".to_string()];
        for k in 0..i {
            let mandatory = sets.iter().any(|s| s.contains(&k) && s.contains(&i));
            if mandatory || rng.random_bool(0.3) {
                parents.push(names[k].clone());
            }
        }
        for k in 0..n {
            if rng.random_bool(0.25) {
                parents.push(format!("{}@t-1", names[k]));
            }
        }
        let row_count = 1 << (parents.len() - 1);
        let refs: Vec<&str> = parents.iter().map(String::as_str).collect();
        b = b.task(&names[i], 2, &refs, rows(rng, row_count, 2));
        for (j, set) in sets.iter().enumerate() {
            if set.contains(&i) {
                b = b.task_phase(&names[i], &labels[j], rows(rng, row_count, 2));
            }
        }
    }

    let mut channels: Vec<String> = Vec::new();
    for i in 0..n {
        if !rng.random_bool(0.75) {
            continue;
        }
        let name = format!("z{i}");
        let mut parents = vec![names[i].clone()];
        for earlier in &channels {
            if rng.random_bool(0.3) {
                parents.push(format!("{earlier}@t-1"));
            }
        }
        let refs: Vec<&str> = parents.iter().map(String::as_str).collect();
        b = b.channel(&name, 2, &refs, rows(rng, 1 << parents.len(), 2));
        channels.push(name);
    }
    let model = b.build().expect("generated model builds");
    let report = model.validate();
    assert!(report.is_valid(), "generated model is invalid: {report:?}");
    model
}

/// Random observation log over `t = 1..=horizon`, each reading missing with
/// probability `missing`.
pub fn random_log(rng: &mut SmallRng, model: &PlotModel, horizon: u32, missing: f64) -> Vec<ObservationRecord> {
    (1..=horizon)
        .map(|t| {
            let mut r = ObservationRecord::new(t);
            for c in &model.channels {
                if rng.random_bool(missing) {
                    r = r.missing(&c.name);
                } else {
                    let s = rng.random_range(0..c.states.len());
                    r = r.with(&c.name, &c.states[s]);
                }
            }
            r
        })
        .collect()
}

pub fn random_prior(rng: &mut SmallRng, model: &PlotModel, dense: bool) -> Prior {
    let size = model.phase_count() * model.task_cards().iter().product::<usize>();
    if dense {
        Prior::Joint(positive_row(rng, size))
    } else {
        let mut v = vec![0.0; size];
        v[rng.random_range(0..size)] = 1.0;
        Prior::Joint(v)
    }
}

pub fn prior_cells(model: &PlotModel, prior: &Prior) -> Vec<f64> {
    let size = model.phase_count() * model.task_cards().iter().product::<usize>();
    match prior {
        Prior::Inactive => {
            let mut v = vec![0.0; size];
            v[0] = 1.0;
            v
        }
        Prior::Uniform => vec![1.0 / size as f64; size],
        Prior::Joint(v) => v.clone(),
    }
}

/// Appendix-style transition entry computed from the raw parameters.
pub fn transition(model: &PlotModel, t: u32, i: usize, j: usize) -> f64 {
    if i == 0 {
        return if j == 0 { 1.0 } else { 0.0 };
    }
    let p = model.phase_params_at(t, i);
    let reach = model.phases.reach(i);
    if j == 0 {
        p.abort
    } else if j == i {
        (1.0 - p.abort) * p.stay
    } else if let Some(k) = reach.iter().position(|&x| x == j) {
        let jump = if reach.len() == 1 { 1.0 } else { p.jump[k] };
        (1.0 - p.stay) * (1.0 - p.abort) * jump
    } else {
        0.0
    }
}

fn radix(digits: impl Iterator<Item = (usize, usize)>) -> usize {
    digits.fold(0, |acc, (v, c)| acc * c + v)
}

pub fn task_prob(model: &PlotModel, t: u32, i: usize, w: usize, prev: &[usize], cur: &[usize]) -> f64 {
    let task = &model.tasks[i];
    let row = radix(task.parents.iter().filter_map(|p| match p.vertex {
        VertexRef::Task(k) => Some((if p.lagged { prev[k] } else { cur[k] }, model.tasks[k].states.len())),
        _ => None,
    }));
    let cpt = model.task_cpt_at(i, t);
    let table = cpt.phases.get(&w).unwrap_or(&cpt.base);
    table.row(row)[cur[i]]
}

pub fn channel_prob(model: &PlotModel, t: u32, c: usize, tasks: &[usize], prev: &[usize], z: usize) -> f64 {
    let ch = &model.channels[c];
    let row = radix(ch.parents.iter().filter_map(|p| match (p.vertex, p.lagged) {
        (VertexRef::Task(k), false) => Some((tasks[k], model.tasks[k].states.len())),
        (VertexRef::Channel(k), true) => Some((prev[k], model.channels[k].states.len())),
        _ => None,
    }));
    model.channel_cpt_at(c, t).row(row)[z]
}

/// Decodes a `(W, θ)` cell index, `W` slowest.
pub fn decode(model: &PlotModel, cell: usize) -> (usize, Vec<usize>) {
    let cards = model.task_cards();
    let mut tasks = vec![0; cards.len()];
    let mut rest = cell;
    for k in (0..cards.len()).rev() {
        tasks[k] = rest % cards[k];
        rest /= cards[k];
    }
    (rest, tasks)
}

pub fn encode(model: &PlotModel, w: usize, tasks: &[usize]) -> usize {
    radix(std::iter::once((w, model.phase_count())).chain(tasks.iter().copied().zip(model.task_cards())))
}

/// Results of brute-force enumeration over every trajectory consistent
/// with a log.
#[derive(Debug, Clone)]
pub struct Enumerated {
    /// `p(W_t, θ_t | z_{1:t})`, one table per record.
    pub filtered: Vec<Vec<f64>>,
    /// `p(W_t, θ_t | z_{1:T})`.
    pub smoothed: Vec<Vec<f64>>,
    /// `p(z_{1:t})` for each prefix.
    pub evidence: Vec<f64>,
    pub paths: usize,
}

struct Walk<'a> {
    model: &'a PlotModel,
    obs: Vec<Vec<Option<usize>>>,
    t0: u32,
    prefix: Vec<Vec<f64>>,
    full: Vec<Vec<f64>>,
    stack: Vec<usize>,
    paths: usize,
}

impl Walk<'_> {
    /// Extends the trajectory from slice `k` (0-based record index) with
    /// latent state `(w, tasks)` and intensities `z` at slice `k`.
    fn step(&mut self, k: usize, w: usize, tasks: &[usize], z: &[usize], weight: f64) {
        if k == self.obs.len() {
            self.paths += 1;
            for (j, &cell) in self.stack.iter().enumerate() {
                self.full[j][cell] += weight;
            }
            return;
        }
        let model = self.model;
        let t = self.t0 + 1 + k as u32;
        let n = model.tasks.len();
        for w2 in 0..model.phase_count() {
            let pw = transition(model, t, w, w2);
            if pw == 0.0 {
                continue;
            }
            let combos: usize = model.task_cards().iter().product();
            for combo in 0..combos {
                let (_, next) = decode(model, combo);
                let mut p = pw;
                for i in 0..n {
                    p *= task_prob(model, t, i, w2, tasks, &next);
                }
                if p == 0.0 {
                    continue;
                }
                self.channels(k, 0, w2, &next, z, &mut vec![0; model.channels.len()], p * weight);
            }
        }
    }

    fn channels(
        &mut self,
        k: usize,
        c: usize,
        w: usize,
        tasks: &[usize],
        prev: &[usize],
        cur: &mut Vec<usize>,
        weight: f64,
    ) {
        let model = self.model;
        let t = self.t0 + 1 + k as u32;
        if c == model.channels.len() {
            let cell = encode(model, w, tasks);
            self.prefix[k][cell] += weight;
            self.stack.push(cell);
            let z = cur.clone();
            self.step(k + 1, w, tasks, &z, weight);
            self.stack.pop();
            return;
        }
        let values: Vec<usize> = match self.obs[k][c] {
            Some(v) => vec![v],
            None => (0..model.channels[c].states.len()).collect(),
        };
        for v in values {
            let p = channel_prob(model, t, c, tasks, prev, v);
            if p == 0.0 {
                continue;
            }
            cur[c] = v;
            self.channels(k, c + 1, w, tasks, prev, cur, weight * p);
        }
    }
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

/// Enumerates every trajectory from a joint `(W, θ)` table at slice `t0`
/// with intensities `z0` at that slice.
pub fn enumerate_from(
    model: &PlotModel,
    start: &[f64],
    t0: u32,
    z0: &[usize],
    log: &[ObservationRecord],
) -> Enumerated {
    let size = start.len();
    let obs: Vec<Vec<Option<usize>>> = log.iter().map(|r| r.resolve(model).expect("log fits model")).collect();
    let mut walk = Walk {
        model,
        obs,
        t0,
        prefix: vec![vec![0.0; size]; log.len()],
        full: vec![vec![0.0; size]; log.len()],
        stack: Vec::new(),
        paths: 0,
    };
    for (cell, &p) in start.iter().enumerate() {
        if p > 0.0 {
            let (w, tasks) = decode(model, cell);
            walk.step(0, w, &tasks, z0, p);
        }
    }
    Enumerated {
        evidence: walk.prefix.iter().map(|v| v.iter().sum()).collect(),
        filtered: walk.prefix.iter().map(|v| normalize(v)).collect(),
        smoothed: walk.full.iter().map(|v| normalize(v)).collect(),
        paths: walk.paths,
    }
}

/// Enumeration from a prior at slice 0, where intensities sit in state 0.
pub fn enumerate(model: &PlotModel, prior: &Prior, log: &[ObservationRecord]) -> Enumerated {
    enumerate_from(model, &prior_cells(model, prior), 0, &vec![0; model.channels.len()], log)
}

/// Upper bound on the number of trajectories `enumerate` visits.
pub fn enumeration_cost(model: &PlotModel, prior: &Prior, log: &[ObservationRecord]) -> f64 {
    let start = prior_cells(model, prior).iter().filter(|&&p| p > 0.0).count() as f64;
    let latent = (model.phase_count() * model.task_cards().iter().product::<usize>()) as f64;
    log.iter()
        .map(|r| {
            let missing =
                model.channels.iter().filter(|c| r.channels.get(&c.name).map_or(true, Option::is_none)).count();
            latent * f64::from(1u32 << missing)
        })
        .fold(start, |a, b| a * b)
}

/// Every latent path `(W_s, θ_s)` for `s = t0..=t0+h` with its probability.
pub fn latent_paths(
    model: &PlotModel,
    start: &[f64],
    t0: u32,
    h: u32,
    mut visit: impl FnMut(&[(usize, Vec<usize>)], f64),
) {
    fn rec(
        model: &PlotModel,
        t: u32,
        end: u32,
        path: &mut Vec<(usize, Vec<usize>)>,
        p: f64,
        visit: &mut dyn FnMut(&[(usize, Vec<usize>)], f64),
    ) {
        if t > end {
            visit(path, p);
            return;
        }
        let (w, tasks) = path.last().cloned().expect("non-empty path");
        let combos: usize = model.task_cards().iter().product();
        for w2 in 0..model.phase_count() {
            let pw = transition(model, t, w, w2);
            if pw == 0.0 {
                continue;
            }
            for combo in 0..combos {
                let (_, next) = decode(model, combo);
                let mut q = pw;
                for i in 0..model.tasks.len() {
                    q *= task_prob(model, t, i, w2, &tasks, &next);
                }
                if q == 0.0 {
                    continue;
                }
                path.push((w2, next));
                rec(model, t + 1, end, path, p * q, visit);
                path.pop();
            }
        }
    }
    for (cell, &p) in start.iter().enumerate() {
        if p > 0.0 {
            let mut path = vec![decode(model, cell)];
            rec(model, t0 + 1, t0 + h, &mut path, p, &mut visit);
        }
    }
}

pub fn linf(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn names(model: &PlotModel) -> BTreeMap<String, usize> {
    model.tasks.iter().enumerate().map(|(i, t)| (t.name.clone(), i)).collect()
}
