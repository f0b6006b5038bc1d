mod support;

use std::io::{BufRead, BufReader};
use std::time::Duration;

use reqwest::Method;
use serde_json::{json, Value};
use support::Server;

fn server() -> (tempfile::TempDir, Server) {
    let dir = tempfile::tempdir().unwrap();
    let lib = support::two_fixture_library(dir.path());
    let server = Server::start(&dir.path().join("data"), Some(&lib));
    (dir, server)
}

fn record(t: u32, social: &str) -> Value {
    json!({ "t": t, "channels": { "social_media": social } })
}

#[test]
fn every_route_needs_the_token() {
    let (_dir, server) = server();
    for path in ["/health", "/sessions", "/library"] {
        let resp = server.client().get(format!("{}{path}", server.base)).send().unwrap();
        assert_eq!(resp.status().as_u16(), 401, "{path}");
        let body: Value = resp.json().unwrap();
        assert_eq!(body["error"]["code"], "unauthorized");
        let wrong = server.client().get(format!("{}{path}", server.base)).bearer_auth("nope").send().unwrap();
        assert_eq!(wrong.status().as_u16(), 401);
    }
    assert_eq!(server.get("/health"), (200, json!({ "status": "ok" })));
}

#[test]
fn bodies_are_parsed_strictly() {
    let (_dir, server) = server();
    let (status, body) = server.post("/sessions", &json!({ "entry": "vehicle_attack", "colour": "red" }));
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], "invalid_body");
    let resp = server
        .client()
        .post(format!("{}/sessions", server.base))
        .bearer_auth(support::TOKEN)
        .body("{not json")
        .send()
        .unwrap();
    assert_eq!(resp.status().as_u16(), 400);
    assert_eq!(server.post("/sessions", &json!({ "entry": "nope" })).0, 404);
    assert_eq!(server.get("/sessions/s999999").0, 404);
}

#[test]
fn session_lifecycle_over_http() {
    let (_dir, server) = server();
    let (status, created) = server.post("/sessions", &json!({ "entry": "vehicle_attack", "prior": "entered" }));
    assert_eq!(status, 201);
    let id = created["session"].as_str().unwrap().to_string();
    assert_eq!(created["t"], 0);
    assert_eq!(created["phases"][1], "recruited");
    assert_eq!(created["phase_marginal"][1], 1.0);

    let (status, view) = server.post(&format!("/sessions/{id}/observations"), &record(1, "elevated"));
    assert_eq!(status, 200, "{view}");
    assert_eq!(view["t"], 1);
    let (status, err) = server.post(&format!("/sessions/{id}/observations"), &record(1, "elevated"));
    assert_eq!(status, 409);
    assert_eq!(err["error"]["code"], "duplicate_observation");
    assert_eq!(err["belief"]["state_hash"], view["state_hash"]);

    let query = json!({ "utility": "harm", "horizon": 3 });
    let (status, scored) = server.post(&format!("/sessions/{id}/what-if"), &query);
    assert_eq!(status, 200, "{scored}");
    assert_eq!(scored["state_hash"], view["state_hash"]);
    assert_eq!(scored["ranking"].as_array().unwrap().len(), 3);
    assert_eq!(server.get(&format!("/sessions/{id}/belief")).1["state_hash"], view["state_hash"]);

    let (_, summary) = server.get(&format!("/sessions/{id}"));
    assert_eq!(summary["observations"], 1);
    assert_eq!(summary["decisions"][0], "do_nothing");
    let (_, list) = server.get("/sessions");
    assert_eq!(list.as_array().unwrap().len(), 1);

    let (status, audit) = server.get(&format!("/sessions/{id}/audit"));
    assert_eq!(status, 200);
    assert_eq!(audit["consistent"], true);
    assert_eq!(audit["events"], 4);

    let incident = json!({
        "id": "case-1",
        "category": "lone_actor",
        "records": [
            { "t": 0, "channels": {}, "revealed": { "phase": "recruited", "tasks": {
                "relations": "idle", "withdrawal": "idle", "course": "idle", "accomplice": "idle",
                "site_visit": "idle", "map_search": "idle", "hgv": "none", "drive": "idle" } } },
        ]
    });
    let (status, receipt) = server.post(&format!("/sessions/{id}/close"), &incident);
    assert_eq!(status, 200, "{receipt}");
    assert_eq!(receipt["entry"], "vehicle_attack");
    let (status, priors) = server.get("/library/priors/vehicle_attack");
    assert_eq!(status, 200);
    assert_eq!(priors["format"], "plot-priors/1");
    assert_eq!(server.post(&format!("/sessions/{id}/observations"), &record(2, "quiet")).0, 409);
}

#[test]
fn library_routes() {
    let (_dir, server) = server();
    let (_, index) = server.get("/library");
    let ids: Vec<&str> = index["entries"].as_array().unwrap().iter().map(|e| e["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["vehicle_attack", "knife_attack"]);

    let (status, doc) = server.get("/library/entries/knife_attack");
    assert_eq!(status, 200);
    assert_eq!(doc["format"], "plot-model/1");
    let (status, err) = server.get("/library/export");
    assert_eq!(status, 422, "secure tables without dummies cannot be exported: {err}");

    let dup = json!({ "model": doc });
    assert_eq!(server.post("/library/entries", &dup).0, 422);
    let (status, _) = server.request(Method::DELETE, "/library/entries/knife_attack", None);
    assert_eq!(status, 204);
    assert_eq!(server.get("/library/entries/knife_attack").0, 404);
    let (status, receipt) = server.post("/library/entries", &dup);
    assert_eq!(status, 201, "{receipt}");
    assert_eq!(receipt["id"], "knife_attack");
    let (status, _) = server.request(Method::PUT, "/library/entries/knife_attack", Some(&dup));
    assert_eq!(status, 200);
    let (status, _) = server.request(Method::PUT, "/library/entries/vehicle_attack", Some(&dup));
    assert_eq!(status, 400, "id mismatch");
}

#[test]
fn stream_sends_the_current_belief_then_updates() {
    let (_dir, server) = server();
    let (_, created) = server.post("/sessions", &json!({ "entry": "vehicle_attack" }));
    let id = created["session"].as_str().unwrap().to_string();
    let client = reqwest::blocking::Client::builder().timeout(Duration::from_secs(10)).build().unwrap();
    let resp = client.get(format!("{}/sessions/{id}/stream", server.base)).bearer_auth(support::TOKEN).send().unwrap();
    assert_eq!(resp.status().as_u16(), 200);
    let mut lines = BufReader::new(resp).lines();
    let mut next_data = || -> Value {
        loop {
            let line = lines.next().unwrap().unwrap();
            if let Some(data) = line.strip_prefix("data:") {
                return serde_json::from_str(data.trim()).unwrap();
            }
        }
    };
    let first = next_data();
    assert_eq!(first["t"], 0);
    assert_eq!(first["state_hash"], created["state_hash"]);
    let (_, posted) = server.post(&format!("/sessions/{id}/observations"), &record(1, "quiet"));
    let update = next_data();
    assert_eq!(update, posted);
}
