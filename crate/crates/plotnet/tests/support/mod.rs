//! Runs the `plotnet` binary as a service on an ephemeral port.
#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};

use reqwest::blocking::Client;
use reqwest::Method;
use serde_json::Value;

pub const TOKEN: &str = "test-token";

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_plotnet"))
}

pub struct Server {
    child: Child,
    pub base: String,
    client: Client,
}

impl Server {
    /// Starts on `data`, seeding the library from `library` if given.
    pub fn start(data: &Path, library: Option<&Path>) -> Server {
        let mut cmd = bin();
        cmd.args(["serve", "--addr", "127.0.0.1:0", "--data"]).arg(data).env("PLOTNET_TOKEN", TOKEN);
        if let Some(lib) = library {
            cmd.arg("--library").arg(lib);
        }
        let mut child = cmd.stdout(Stdio::piped()).stderr(Stdio::inherit()).spawn().expect("service starts");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).expect("service prints its address");
        let base = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected banner {line:?}"));
        Server { child, base: format!("{base}/v1"), client: Client::new() }
    }

    pub fn request(&self, method: Method, path: &str, body: Option<&Value>) -> (u16, Value) {
        let mut req = self.client.request(method, format!("{}{path}", self.base)).bearer_auth(TOKEN);
        if let Some(b) = body {
            req = req.json(b);
        }
        let resp = req.send().expect("request reaches the service");
        let status = resp.status().as_u16();
        let text = resp.text().unwrap();
        (status, if text.is_empty() { Value::Null } else { serde_json::from_str(&text).expect("JSON response") })
    }

    pub fn get(&self, path: &str) -> (u16, Value) {
        self.request(Method::GET, path, None)
    }

    pub fn post(&self, path: &str, body: &Value) -> (u16, Value) {
        self.request(Method::POST, path, Some(body))
    }

    pub fn client(&self) -> &Client {
        &self.client
    }

    /// SIGKILL, no chance to flush anything.
    pub fn kill(mut self) {
        self.child.kill().unwrap();
        self.child.wait().unwrap();
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// A library directory holding the vehicle and knife fixtures.
pub fn two_fixture_library(dir: &Path) -> PathBuf {
    let lib = dir.join("library");
    for f in ["vehicle_attack.json", "knife_attack.json"] {
        let out = bin().args(["lib-add", "--library"]).arg(&lib).arg("--model").arg(fixture(f)).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    lib
}
