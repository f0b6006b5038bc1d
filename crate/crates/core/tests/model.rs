mod common;

use common::*;
use plotnet_core::model::{ModelBuilder, RawParams, ViolationKind};
use proptest::prelude::*;

/// Reach sets, abort, stay and raw jump weights for `m` active phases.
fn phase_draw() -> impl Strategy<Value = Vec<(Vec<bool>, f64, f64, Vec<f64>, bool)>> {
    (1usize..=6).prop_flat_map(|m| {
        prop::collection::vec(
            (
                prop::collection::vec(any::<bool>(), m),
                0.0..1.0f64,
                0.0..1.0f64,
                prop::collection::vec(0.01..1.0f64, m),
                any::<bool>(),
            ),
            m,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn transition_matrix_properties(draw in phase_draw()) {
        let m = draw.len();
        let labels: Vec<String> = (0..=m).map(|j| format!("w{j}")).collect();
        let mut b = ModelBuilder::with_labels("p", labels.clone());
        let mut reach_sets = Vec::new();
        for (k, (mask, abort, stay, weights, implicit)) in draw.iter().enumerate() {
            let i = k + 1;
            let reach: Vec<usize> = (1..=m).filter(|&j| j != i && mask[j - 1]).collect();
            let stay = if reach.is_empty() { 1.0 } else { *stay };
            let total: f64 = reach.iter().map(|&j| weights[j - 1]).sum();
            let jump = if reach.len() == 1 && *implicit {
                None
            } else {
                Some(reach.iter().map(|&j| (labels[j].clone(), weights[j - 1] / total)).collect())
            };
            let targets: Vec<&str> = reach.iter().map(|&j| labels[j].as_str()).collect();
            b = b.reach(&labels[i], &targets).params(&labels[i], RawParams { abort: *abort, stay, jump });
            reach_sets.push(reach);
        }
        let model = b.build().unwrap();
        prop_assert!(model.validate().is_valid(), "{:?}", model.validate());
        let matrix = model.transition_matrix(1).unwrap();

        prop_assert_eq!(matrix.row(0)[0], 1.0);
        prop_assert!(matrix.row(0)[1..].iter().all(|&x| x == 0.0));
        for i in 1..=m {
            let row = matrix.row(i);
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12);
            let reach = &reach_sets[i - 1];
            for (j, &x) in row.iter().enumerate() {
                let allowed = j == 0 || j == i || reach.contains(&j);
                if !allowed {
                    prop_assert_eq!(x, 0.0, "({}, {})", i, j);
                }
                prop_assert!((x - transition(&model, 1, i, j)).abs() <= 1e-15);
            }
            let (_, abort, stay, _, _) = draw[i - 1];
            if reach.len() == 1 {
                let expected = (1.0 - stay) * (1.0 - abort);
                prop_assert!((row[reach[0]] - expected).abs() <= 1e-15);
            }
        }
    }
}

#[test]
fn random_models_are_valid_and_duplicate_rows_outside_task_sets() {
    let mut rng = rng(17);
    for _ in 0..300 {
        let model = random_model(&mut rng, FULL);
        let first = model.validate();
        assert!(first.is_valid());
        assert_eq!(model.validate(), first);
        for (i, task) in model.tasks.iter().enumerate() {
            for j in 1..model.phase_count() {
                if model.task_sets[j].contains(&i) {
                    continue;
                }
                for r in 0..task.cpt.base.row_count() {
                    let a: Vec<u64> = task.cpt.row(j, r).iter().map(|x| x.to_bits()).collect();
                    let b: Vec<u64> = task.cpt.row(0, r).iter().map(|x| x.to_bits()).collect();
                    assert_eq!(a, b);
                }
            }
        }
    }
}

#[test]
fn empty_reach_needs_certain_stay() {
    let model = ModelBuilder::new("m", &["w0", "w1"]).phase("w1", 0.1, 0.5, &[]).build().unwrap();
    assert!(model.validate().of_kind(ViolationKind::TransitionRow).next().is_some());
}

#[test]
fn frozen_suspect_gets_identity_rows() {
    let model = ModelBuilder::new("m", &["w0", "w1", "w2"])
        .phase("w1", 0.0, 1.0, &[("w2", 1.0)])
        .phase("w2", 0.0, 1.0, &[])
        .build()
        .unwrap();
    let matrix = model.transition_matrix(3).unwrap();
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(matrix.get(i, j), f64::from(u8::from(i == j)));
        }
    }
}

#[test]
fn phase_table_outside_the_task_set_is_rejected() {
    let model = ModelBuilder::new("m", &["w0", "w1", "w2"])
        .phase("w1", 0.0, 0.5, &[("w2", 1.0)])
        .phase("w2", 0.0, 1.0, &[])
        .task("a", 2, &["W"], vec![vec![0.5, 0.5]])
        .task_phase_table("a", "w2", vec![vec![0.1, 0.9]])
        .build()
        .unwrap();
    assert!(!model.validate().is_valid());
}

#[test]
fn tasks_sharing_a_phase_need_an_edge() {
    let model = ModelBuilder::new("m", &["w0", "w1"])
        .phase("w1", 0.0, 1.0, &[])
        .task("a", 2, &["W"], vec![vec![0.5, 0.5]])
        .task("b", 2, &["W"], vec![vec![0.5, 0.5]])
        .task_phase("a", "w1", vec![vec![0.1, 0.9]])
        .task_phase("b", "w1", vec![vec![0.1, 0.9]])
        .build()
        .unwrap();
    assert!(model.validate().of_kind(ViolationKind::MandatoryParent).next().is_some());
}

#[test]
fn unrolled_random_models_are_acyclic() {
    let mut rng = rng(3);
    for _ in 0..100 {
        let model = random_model(&mut rng, FULL);
        let g = model.slice_graph();
        let width = g.vertices.len() / 2;
        assert!(g.founders().iter().take(width).eq((0..width).collect::<Vec<_>>().iter()));
        assert!(g.unroll(4).is_acyclic());
    }
}
