mod common;

use common::*;
use plotnet_core::inference::{
    filter_log, filter_mixture, filter_step, init_belief, init_belief_capped, predict, predict_joint, smooth,
    InferenceError, MixtureBelief, ObservationRecord, Prior,
};
use plotnet_core::model::ModelBuilder;
use rand::Rng;

const BUDGET: f64 = 2e5;

#[test]
fn filtering_and_smoothing_match_enumeration_on_random_models() {
    let mut largest = 0;
    for seed in 0..120u64 {
        let mut rng = rng(seed);
        let model = random_model(&mut rng, FULL);
        let dense = rng.random_bool(0.5);
        let prior = random_prior(&mut rng, &model, dense);
        let missing = if rng.random_bool(0.5) { 0.3 } else { 0.0 };
        let horizon = rng.random_range(1..=5);
        let mut log = random_log(&mut rng, &model, horizon, missing);
        while log.len() > 1 && enumeration_cost(&model, &prior, &log) > BUDGET {
            log.pop();
        }
        let oracle = enumerate(&model, &prior, &log);
        largest = largest.max(oracle.paths);

        let b0 = init_belief(&model, &prior).unwrap();
        let steps = filter_log(&model, &b0, &log).unwrap();
        let smoothed = smooth(&model, &b0, &log).unwrap();
        for (k, step) in steps.iter().enumerate() {
            let err = linf(&step.belief.joint(), &oracle.filtered[k]);
            assert!(err < 1e-9, "seed {seed}, t={}: filtered error {err}", k + 1);
            let err = linf(&smoothed.joint[k], &oracle.smoothed[k]);
            assert!(err < 1e-9, "seed {seed}, t={}: smoothed error {err}", k + 1);
            let ll = oracle.evidence[k].ln();
            assert!((step.belief.log_likelihood - ll).abs() < 1e-9 * ll.abs().max(1.0), "seed {seed}: log-likelihood");
        }
    }
    assert!(largest > 1000, "oracle never exercised a non-trivial model");
}

#[test]
fn predict_equals_filtering_missing_records() {
    for seed in 200..240u64 {
        let mut rng = rng(seed);
        let model = random_model(&mut rng, Limits { active: 3, tasks: 3 });
        let prior = random_prior(&mut rng, &model, true);
        let log = random_log(&mut rng, &model, 2, 0.2);
        let b = filter_log(&model, &init_belief(&model, &prior).unwrap(), &log).unwrap().pop().unwrap().belief;
        let k = rng.random_range(1..=3);
        let blanks: Vec<ObservationRecord> = (1..=k).map(|s| ObservationRecord::new(b.t + s)).collect();
        let filtered = filter_log(&model, &b, &blanks).unwrap();
        let predicted = predict_joint(&b, &model, k).unwrap();
        for (f, p) in filtered.iter().zip(&predicted) {
            assert!(linf(&f.belief.joint(), p) < 1e-12, "seed {seed}");
            assert!(f.log_evidence.abs() < 1e-12);
        }
        let phases = predict(&b, &model, k).unwrap();
        for (p, joint) in phases.iter().zip(&predicted) {
            let inner = joint.len() / model.phase_count();
            for (w, x) in p.iter().enumerate() {
                let s: f64 = joint[w * inner..(w + 1) * inner].iter().sum();
                assert!((x - s).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn log_likelihood_never_increases() {
    for seed in 300..330u64 {
        let mut rng = rng(seed);
        let model = random_model(&mut rng, Limits { active: 3, tasks: 3 });
        let log = random_log(&mut rng, &model, 6, 0.3);
        let steps = filter_log(&model, &init_belief(&model, &Prior::Uniform).unwrap(), &log).unwrap();
        let mut last = 0.0;
        for s in &steps {
            assert!(s.log_evidence <= 1e-12);
            assert!(s.belief.log_likelihood <= last + 1e-12);
            last = s.belief.log_likelihood;
        }
    }
}

fn two_channel_model(z_rows: Vec<Vec<f64>>) -> plotnet_core::PlotModel {
    ModelBuilder::new("toy", &["w0", "w1"])
        .phase("w1", 0.0, 1.0, &[])
        .task("a", 2, &["W"], vec![vec![1.0, 0.0]])
        .task_phase("a", "w1", vec![vec![1.0, 0.0]])
        .channel("z", 2, &["a"], z_rows)
        .build()
        .unwrap()
}

#[test]
fn impossible_evidence_is_reported() {
    let model = two_channel_model(vec![vec![1.0, 0.0], vec![0.5, 0.5]]);
    let b0 = init_belief(&model, &Prior::Inactive).unwrap();
    let err = filter_step(&b0, &model, &ObservationRecord::new(1).with("z", "1")).unwrap_err();
    assert_eq!(err, InferenceError::Inconsistent { t: 1 });
}

#[test]
fn records_must_be_consecutive() {
    let model = two_channel_model(vec![vec![0.8, 0.2], vec![0.5, 0.5]]);
    let b0 = init_belief(&model, &Prior::Inactive).unwrap();
    let err = filter_step(&b0, &model, &ObservationRecord::new(2)).unwrap_err();
    assert_eq!(err, InferenceError::TimeMismatch { expected_prev: 0, found: 2 });
    let err = filter_step(&b0, &model, &ObservationRecord::new(1).with("nope", "0")).unwrap_err();
    assert_eq!(err, InferenceError::UnknownChannel("nope".into()));
}

#[test]
fn cell_cap_is_enforced() {
    let model = two_channel_model(vec![vec![0.8, 0.2], vec![0.5, 0.5]]);
    let err = init_belief_capped(&model, &Prior::Uniform, 3).unwrap_err();
    assert_eq!(err, InferenceError::CapExceeded { cells: 4, cap: 3 });
}

#[test]
fn mixture_weights_follow_the_likelihood_ratio() {
    let m1 = two_channel_model(vec![vec![0.8, 0.2], vec![0.5, 0.5]]);
    let m2 = two_channel_model(vec![vec![0.6, 0.4], vec![0.5, 0.5]]);
    let b = init_belief(&m1, &Prior::Inactive).unwrap();
    let mix = MixtureBelief::new(vec!["s1".into(), "s2".into()], vec![0.5, 0.5], vec![b.clone(), b]).unwrap();
    let step = filter_mixture(&mix, &[&m1, &m2], &ObservationRecord::new(1).with("z", "1")).unwrap();
    assert!((step.belief.weights[0] - 1.0 / 3.0).abs() < 1e-12);
    assert!((step.belief.weights[1] - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn mixture_matches_per_category_enumeration() {
    let mut rng = rng(77);
    let base = loop {
        let m = random_model(&mut rng, Limits { active: 2, tasks: 2 });
        if !m.channels.is_empty() {
            break m;
        }
    };
    // Three categories share the graph but not the intensity tables.
    let models: Vec<_> = (0..3)
        .map(|_| {
            let mut m = base.clone();
            for c in &mut m.channels {
                for r in c.cpt.rows_mut() {
                    r.copy_from_slice(&positive_row(&mut rng, 2));
                }
            }
            m
        })
        .collect();
    let log = random_log(&mut rng, &base, 4, 0.2);
    let prior = Prior::Uniform;
    let weights = vec![0.2, 0.5, 0.3];
    let beliefs = models.iter().map(|m| init_belief(m, &prior).unwrap()).collect();
    let mut mix = MixtureBelief::new(vec!["a".into(), "b".into(), "c".into()], weights.clone(), beliefs).unwrap();
    let refs: Vec<&plotnet_core::PlotModel> = models.iter().collect();
    for (k, r) in log.iter().enumerate() {
        mix = filter_mixture(&mix, &refs, r).unwrap().belief;
        let ev: Vec<f64> = models.iter().map(|m| enumerate(m, &prior, &log[..=k]).evidence[k]).collect();
        let total: f64 = ev.iter().zip(&weights).map(|(e, w)| e * w).sum();
        for c in 0..3 {
            assert!((mix.weights[c] - weights[c] * ev[c] / total).abs() < 1e-12);
        }
    }
}
