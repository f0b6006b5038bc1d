use std::collections::BTreeSet;
use std::path::PathBuf;

use plotnet::format::{
    load_archive, load_library_dir, load_model, parse_log, read_library, read_model, render_log, save_archive,
    save_library_dir, write_library, write_model, FormatError, PriorsDocument,
};
use plotnet_core::interventions::Replacement;
use plotnet_core::learning::DirichletSet;
use plotnet_core::library::{Library, NoveltyDeclaration, Side};
use plotnet_core::model::Partition;
use plotnet_core::simulate::{simulate_batch, SimulationConfig};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

const FIXTURES: [&str; 5] =
    ["vehicle_attack.json", "knife_attack.json", "four_task.json", "toy.json", "toy_forced.json"];

#[test]
fn fixtures_load_without_rescaling() {
    for name in FIXTURES {
        let loaded = load_model(&fixture(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(loaded.renormalized.is_empty(), "{name}: {:?}", loaded.renormalized);
        assert!(loaded.model.validate().is_valid());
    }
}

#[test]
fn canonical_form_is_a_fixed_point() {
    for name in FIXTURES {
        let model = load_model(&fixture(name)).unwrap().model;
        let text = write_model(&model);
        let again = read_model(&text, name).unwrap().model;
        assert_eq!(again, model, "{name}");
        assert_eq!(write_model(&again), text, "{name}");
    }
}

#[test]
fn four_task_graph_matches_the_drawing() {
    let model = load_model(&fixture("four_task.json")).unwrap().model;
    let edges: BTreeSet<(String, String)> = model.slice_graph().named_edges().into_iter().collect();
    let expected: BTreeSet<(String, String)> = [
        ("W@t-1", "W"),
        ("W", "theta1"),
        ("W", "theta2"),
        ("W", "theta3"),
        ("W", "theta4"),
        ("theta1@t-1", "theta1"),
        ("theta2@t-1", "theta2"),
        ("theta3@t-1", "theta3"),
        ("theta4@t-1", "theta4"),
        ("theta1", "theta2"),
        ("theta3", "theta4"),
        ("theta1", "z1"),
        ("theta2", "z2"),
        ("theta3", "z3"),
        ("theta4", "z4"),
        ("z1@t-1", "z2"),
        ("z3@t-1", "z4"),
    ]
    .into_iter()
    .map(|(a, b)| (a.to_string(), b.to_string()))
    .collect();
    assert_eq!(edges, expected);
    assert!(model.slice_graph().unroll(4).is_acyclic());
}

#[test]
fn unknown_fields_and_bad_tables_are_rejected() {
    let text = std::fs::read_to_string(fixture("toy.json")).unwrap();
    let extra = text.replacen("\"format\"", "\"colour\": 1,\n  \"format\"", 1);
    assert!(matches!(read_model(&extra, "x"), Err(FormatError::Json { .. })));

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["cpts"]["z1"]["rows"][0] = serde_json::json!([0.5, 0.6]);
    let err = read_model(&doc.to_string(), "x").unwrap_err();
    assert!(matches!(err, FormatError::Invalid { .. }), "{err}");

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["cpts"]["z1"]["rows"][0] = serde_json::json!([0.5, 0.5000000001]);
    let loaded = read_model(&doc.to_string(), "x").unwrap();
    assert_eq!(loaded.renormalized.len(), 1);

    let mut doc: serde_json::Value = serde_json::from_str(&text).unwrap();
    doc["format"] = "plot-model/9".into();
    assert!(matches!(read_model(&doc.to_string(), "x"), Err(FormatError::WrongFormat { .. })));
}

#[test]
fn logs_and_archives_round_trip() {
    let model = load_model(&fixture("vehicle_attack.json")).unwrap().model;
    let archive = simulate_batch(&model, 4, &SimulationConfig::new(5).court_report()).unwrap();
    let text = render_log(&archive.incidents[0].records);
    assert_eq!(parse_log(&text, "log").unwrap(), archive.incidents[0].records);

    let dir = tempfile::tempdir().unwrap();
    save_archive(dir.path(), &model.id, &archive).unwrap();
    let loaded = load_archive(dir.path()).unwrap();
    assert_eq!(loaded, archive.completed());
}

#[test]
fn priors_round_trip_by_name() {
    let model = load_model(&fixture("vehicle_attack.json")).unwrap().model;
    let mut set = DirichletSet::symmetric(&model, 0.5);
    let key = *set.alpha.keys().nth(3).unwrap();
    set.alpha.get_mut(&key).unwrap()[0] = 7.25;
    set.counts.get_mut(&key).unwrap()[0] = 3;
    let doc = PriorsDocument::from_set(&model, &set);
    let text = serde_json::to_string(&doc).unwrap();
    let back: PriorsDocument = serde_json::from_str(&text).unwrap();
    assert_eq!(back.to_set(&model).unwrap(), set);

    let mut short = doc.clone();
    short.rows.pop();
    assert!(short.to_set(&model).is_err());
}

fn two_fixture_library() -> Library {
    let mut lib = Library::new(Side::B);
    for name in ["vehicle_attack.json", "knife_attack.json"] {
        lib.add_entry(load_model(&fixture(name)).unwrap().model, &NoveltyDeclaration::new()).unwrap();
    }
    lib
}

#[test]
fn library_documents_round_trip_byte_for_byte() {
    let mut lib = two_fixture_library();
    lib.register_dummy("knife_attack/street_cctv", Replacement::Table { rows: vec![vec![0.5, 0.5]; 2] }).unwrap();
    let text = write_library(&lib);
    let back = read_library(&text, "lib").unwrap();
    assert_eq!(back, lib);
    assert_eq!(write_library(&back), text);

    let dir = tempfile::tempdir().unwrap();
    save_library_dir(dir.path(), &lib).unwrap();
    assert_eq!(load_library_dir(dir.path()).unwrap(), lib);
    let mut smaller = lib.clone();
    smaller.entries.pop();
    smaller.dummies.clear();
    save_library_dir(dir.path(), &smaller).unwrap();
    assert!(!dir.path().join("entries/knife_attack.json").exists());
    assert_eq!(load_library_dir(dir.path()).unwrap(), smaller);
}

#[test]
fn shared_tables_of_the_two_fixtures() {
    let lib = two_fixture_library();
    let knife_new = &lib.entries[1].novelty;
    let open: Vec<&str> = knife_new[&Partition::Open].iter().map(String::as_str).collect();
    assert!(!open.contains(&"relations") && !open.contains(&"map_queries"));
    assert!(open.contains(&"practice"));
    let shared = lib.shared_structure();
    for v in ["relations", "withdrawal", "site_visit", "map_search", "social_media", "phone_contacts", "cctv_site"] {
        assert!(shared.tables.contains(v), "{v}");
    }
}
