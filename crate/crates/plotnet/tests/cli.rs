mod support;

use std::path::Path;
use std::process::Output;

use plotnet::format::{load_model, read_log, PriorsDocument};
use plotnet_core::inference::{filter_log, init_belief, Prior};
use plotnet_core::learning::{update_from_incidents, DirichletSet};
use serde_json::{json, Value};
use support::{bin, fixture};

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn run_json(args: &[&str]) -> (bool, Value) {
    let out = bin().arg("--json").args(args).output().unwrap();
    let text = String::from_utf8(out.stdout).unwrap();
    (out.status.success(), serde_json::from_str(&text).unwrap_or_else(|e| panic!("{e}: {text}")))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn validate_reports_errors_with_exit_status() {
    let vehicle = fixture("vehicle_attack.json");
    let (ok, doc) = run_json(&["validate", s(&vehicle)]);
    assert!(ok);
    assert_eq!(doc["valid"], true);
    assert_eq!(doc["phases"], 6);

    let dir = tempfile::tempdir().unwrap();
    let mut broken: Value = serde_json::from_str(&std::fs::read_to_string(&vehicle).unwrap()).unwrap();
    broken["transition"]["phases"]["travelling"]["stay"] = json!(0.5);
    let path = dir.path().join("broken.json");
    std::fs::write(&path, broken.to_string()).unwrap();
    let (ok, err) = run_json(&["validate", s(&path)]);
    assert!(!ok);
    assert_eq!(err["error"]["code"], "invalid_model");
    assert!(!err["error"]["details"].as_array().unwrap().is_empty());
    let out = run(&["validate", s(&path)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn simulation_is_reproducible_from_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture("vehicle_attack.json");
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = run(&["simulate", "--model", s(&model), "--seed", "7", "--count", "3", "--out", s(&out)]);
        assert!(status.status.success());
    }
    let manifest = std::fs::read_to_string(dir.path().join("a/manifest.json")).unwrap();
    assert_eq!(manifest, std::fs::read_to_string(dir.path().join("b/manifest.json")).unwrap());
    let m: Value = serde_json::from_str(&manifest).unwrap();
    for e in m["incidents"].as_array().unwrap() {
        let f = e["file"].as_str().unwrap();
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        assert_eq!(a, std::fs::read(dir.path().join("b").join(f)).unwrap());
    }
    let other = dir.path().join("c");
    run(&["simulate", "--model", s(&model), "--seed", "8", "--count", "3", "--out", s(&other)]);
    assert_ne!(manifest, std::fs::read_to_string(other.join("manifest.json")).unwrap());
}

#[test]
fn filter_matches_the_engine_and_score_reads_service_state() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = fixture("vehicle_attack.json");
    let out = dir.path().join("sim");
    run(&["simulate", "--model", s(&model_path), "--seed", "3", "--horizon", "6", "--out", s(&out)]);
    let log = std::fs::read_dir(&out)
        .unwrap()
        .flatten()
        .map(|e| e.path())
        .find(|p| p.extension().unwrap() == "jsonl")
        .unwrap();

    let (ok, views) = run_json(&["filter", "--model", s(&model_path), "--log", s(&log), "--prior", "uniform"]);
    assert!(ok);
    let model = load_model(&model_path).unwrap().model;
    let records = read_log(&log).unwrap();
    let steps = filter_log(&model, &init_belief(&model, &Prior::Uniform).unwrap(), &records).unwrap();
    let views = views.as_array().unwrap();
    assert_eq!(views.len(), steps.len() + 1);
    for (v, step) in views[1..].iter().zip(&steps) {
        let got: Vec<f64> = serde_json::from_value(v["phase_marginal"].clone()).unwrap();
        assert_eq!(got, step.belief.phase_marginal());
    }

    let (ok, smoothed) = run_json(&["smooth", "--model", s(&model_path), "--log", s(&log)]);
    assert!(ok);
    assert_eq!(smoothed["slices"].as_array().unwrap().len(), records.len());

    let (ok, direct) =
        run_json(&["score", "--model", s(&model_path), "--log", s(&log), "--utility", "harm", "--horizon", "3"]);
    assert!(ok, "{direct}");

    // The same records through the service, then scored offline from the
    // exported state.
    let lib = support::two_fixture_library(dir.path());
    let server = support::Server::start(&dir.path().join("data"), Some(&lib));
    let (_, created) = server.post("/sessions", &json!({ "entry": "vehicle_attack" }));
    let id = created["session"].as_str().unwrap().to_string();
    for r in &records {
        assert_eq!(server.post(&format!("/sessions/{id}/observations"), &serde_json::to_value(r).unwrap()).0, 200);
    }
    let query = json!({ "utility": "harm", "horizon": 3 });
    let (_, live) = server.post(&format!("/sessions/{id}/what-if"), &query);
    let (_, state) = server.get(&format!("/sessions/{id}/state"));
    let state_path = dir.path().join("state.json");
    std::fs::write(&state_path, state.to_string()).unwrap();
    let (ok, offline) = run_json(&["score", "--state", s(&state_path), "--utility", "harm", "--horizon", "3"]);
    assert!(ok, "{offline}");
    assert_eq!(offline, live);
    assert_eq!(offline["ranking"], direct["ranking"]);
}

#[test]
fn learn_writes_posterior_hyperparameters() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = fixture("toy.json");
    let archive = dir.path().join("archive");
    let sim = run(&[
        "simulate",
        "--model",
        s(&model_path),
        "--seed",
        "1",
        "--count",
        "40",
        "--court-report",
        "--out",
        s(&archive),
    ]);
    assert!(sim.status.success());
    let priors = dir.path().join("priors.json");
    let learned = dir.path().join("learned.json");
    let (ok, doc) = run_json(&[
        "learn",
        "--model",
        s(&model_path),
        "--archive",
        s(&archive),
        "--out",
        s(&priors),
        "--model-out",
        s(&learned),
    ]);
    assert!(ok, "{doc}");
    assert_eq!(doc["incidents"], 40);

    let model = load_model(&model_path).unwrap().model;
    let incidents = plotnet::format::load_archive(&archive).unwrap();
    let want = update_from_incidents(&DirichletSet::flat(&model), &incidents, &model).unwrap();
    let got: PriorsDocument = serde_json::from_str(&std::fs::read_to_string(&priors).unwrap()).unwrap();
    assert_eq!(got.to_set(&model).unwrap(), want.posterior);
    assert!(load_model(&learned).is_ok());

    // Feeding the posterior back in continues the update.
    let (ok, _) = run_json(&["learn", "--model", s(&model_path), "--archive", s(&archive), "--priors", s(&priors)]);
    assert!(ok);
    let (ok, err) = run_json(&["learn", "--model", s(&fixture("vehicle_attack.json")), "--archive", s(&archive)]);
    assert!(!ok);
    assert!(err["error"]["code"].is_string());
}

#[test]
fn library_commands() {
    let dir = tempfile::tempdir().unwrap();
    let lib = support::two_fixture_library(dir.path());
    let copy = dir.path().join("copy");
    let (ok, receipt) = run_json(&["lib-add", "--library", s(&copy), "--model", s(&fixture("vehicle_attack.json"))]);
    assert!(ok, "{receipt}");
    let (ok, d) = run_json(&["lib-diff", s(&lib), s(&copy)]);
    assert!(ok);
    assert_eq!(d["entries_removed"], json!(["knife_attack"]));

    let draft = dir.path().join("draft.json");
    let (ok, seeded) =
        run_json(&["lib-seed", "--library", s(&lib), "--graph", s(&fixture("knife_attack.json")), "--out", s(&draft)]);
    assert!(ok, "{seeded}");
    assert!(seeded["prefilled"].as_array().unwrap().iter().any(|v| v == "relations"));

    let export = dir.path().join("export.json");
    let (ok, err) = run_json(&["lib-sanitize", "--library", s(&lib), "--out", s(&export)]);
    assert!(!ok, "{err}");
    let dummies = dir.path().join("dummies.json");
    let model = load_model(&fixture("vehicle_attack.json")).unwrap().model;
    let knife = load_model(&fixture("knife_attack.json")).unwrap().model;
    let mut map = serde_json::Map::new();
    for m in [&model, &knife] {
        for c in m.channels.iter().filter(|c| c.partition == plotnet_core::model::Partition::Secure) {
            let w = c.states.len();
            let rows = vec![vec![1.0 / w as f64; w]; c.cpt.row_count()];
            map.insert(format!("{}/{}", m.id, c.name), json!({ "kind": "table", "rows": rows }));
        }
    }
    std::fs::write(&dummies, Value::Object(map).to_string()).unwrap();
    let (ok, manifest) =
        run_json(&["lib-sanitize", "--library", s(&lib), "--dummies", s(&dummies), "--out", s(&export)]);
    assert!(ok, "{manifest}");
    let text = std::fs::read_to_string(&export).unwrap();
    assert!(!text.contains("\"secure\""));
}
