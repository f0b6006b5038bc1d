//! The session service: library, priors and sessions persisted under one
//! data directory.
//!
//! ```text
//! <data>/library/index.json, entries/<id>.json
//! <data>/priors/<entry>.json
//! <data>/sessions/<id>/events.jsonl   append-only, one EventLine per line
//! <data>/sessions/<id>/snapshot.json  belief and history after some seq
//! ```
//!
//! Each event is flushed to disk before the request that caused it is
//! answered. On start every session is restored from its latest snapshot
//! plus the events after it.

mod http;

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use plotnet_core::inference::{InferenceError, MixtureBelief, ObservationRecord};
use plotnet_core::learning::{CompletedIncident, DirichletSet, LearningError};
use plotnet_core::library::{Library, LibraryError, Side};

use crate::api::{
    AuditReport, BeliefView, CloseReceipt, CreateSession, EntryReceipt, EntryRequest, ErrorBody, ErrorDetail,
    SessionState, SessionSummary, WhatIfQuery, WhatIfResult,
};
use crate::format::{
    load_library_dir, read_json, save_library_dir, to_canonical, write_atomic, FormatError, LibraryIndex,
    ModelDocument, PriorsDocument, SanitizedDocument,
};
use crate::session::{created_event, EventLine, Session, SessionError, SessionEvent};

pub use http::{router, serve};

/// Observations between belief snapshots.
pub const SNAPSHOT_EVERY: u64 = 8;

/// A failed request: HTTP status, stable code and message.
#[derive(Debug)]
pub struct ApiError {
    pub status: u16,
    pub body: ErrorBody,
}

impl ApiError {
    pub fn new(status: u16, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody {
                error: ErrorDetail { code: code.into(), message: message.into(), details: None },
                belief: None,
            },
        }
    }

    fn with_belief(mut self, view: BeliefView) -> Self {
        self.body.belief = Some(view);
        self
    }

    fn with_details(mut self, details: impl Serialize) -> Self {
        self.body.error.details = serde_json::to_value(details).ok();
        self
    }

    pub fn not_found(what: impl Into<String>) -> Self {
        ApiError::new(404, "not_found", what)
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        ApiError::new(400, "bad_request", message)
    }

    pub fn internal(message: impl std::fmt::Display) -> Self {
        ApiError::new(500, "internal", message.to_string())
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::Duplicate { .. } => ApiError::new(409, "duplicate_observation", message),
            SessionError::Gap { .. } => ApiError::new(409, "out_of_order", message),
            SessionError::Closed => ApiError::new(409, "session_closed", message),
            SessionError::BadRequest(_) => ApiError::bad_request(message),
            SessionError::UnknownDecision(_) | SessionError::UnknownUtility(_) => ApiError::not_found(message),
            SessionError::Inference(
                InferenceError::Inconsistent { t } | InferenceError::AllCategoriesInconsistent { t },
            ) => ApiError::new(422, "inconsistent_evidence", message).with_details(serde_json::json!({ "t": t })),
            SessionError::Inference(_) | SessionError::Seu(_) => ApiError::new(422, "invalid_query", message),
            SessionError::Learning(LearningError::Rejected(r)) => {
                ApiError::new(422, "non_ancestral", message).with_details(r)
            }
            SessionError::Learning(_) => ApiError::new(422, "invalid_incident", message),
            SessionError::Library(LibraryError::UnknownEntry(_)) => ApiError::not_found(message),
            SessionError::Library(_) => ApiError::new(422, "library", message),
            SessionError::Format(e) => e.into(),
        }
    }
}

impl From<FormatError> for ApiError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io { .. } => ApiError::internal(e),
            FormatError::Invalid { ref report, .. } => {
                let violations = report.violations.clone();
                ApiError::new(422, "invalid_model", e.to_string()).with_details(violations)
            }
            _ => ApiError::new(422, "invalid_document", e.to_string()),
        }
    }
}

impl From<LibraryError> for ApiError {
    fn from(e: LibraryError) -> Self {
        SessionError::from(e).into()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    closed: bool,
    records: Vec<ObservationRecord>,
    belief: MixtureBelief,
    log_likelihood: f64,
    #[serde(default)]
    last_log_evidence: Option<f64>,
}

struct Slot {
    session: Session,
    log: File,
    dir: PathBuf,
    seq: u64,
    /// Observations since the last snapshot.
    pending: u64,
}

impl Slot {
    fn append(&mut self, event: SessionEvent) -> Result<(), ApiError> {
        self.seq += 1;
        let line = serde_json::to_string(&EventLine { seq: self.seq, event }).map_err(ApiError::internal)?;
        self.log
            .write_all(format!("{line}\n").as_bytes())
            .and_then(|_| self.log.sync_data())
            .map_err(ApiError::internal)
    }

    fn snapshot(&mut self) -> Result<(), ApiError> {
        let s = &self.session;
        let snap = Snapshot {
            seq: self.seq,
            closed: s.closed,
            records: s.records.clone(),
            belief: s.belief.clone(),
            log_likelihood: s.log_likelihood,
            last_log_evidence: s.last_log_evidence,
        };
        write_atomic(&self.dir.join("snapshot.json"), &to_canonical(&snap))?;
        self.pending = 0;
        Ok(())
    }
}

struct SessionHandle {
    slot: Mutex<Slot>,
    updates: broadcast::Sender<BeliefView>,
}

pub struct Service {
    data: PathBuf,
    token: String,
    library: RwLock<Library>,
    sessions: Mutex<BTreeMap<String, Arc<SessionHandle>>>,
    /// Serializes session creation so ids stay dense.
    create: Mutex<u64>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

fn read_events(path: &Path) -> Result<Vec<EventLine>, FormatError> {
    let text = fs::read_to_string(path).map_err(FormatError::io(path))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<EventLine>(line) {
            Ok(e) => out.push(e),
            // A torn final line is a write that was never acknowledged.
            Err(_) if n + 1 == text.lines().count() && !text.ends_with('\n') => break,
            Err(source) => return Err(FormatError::Json { context: format!("{}:{}", path.display(), n + 1), source }),
        }
    }
    Ok(out)
}

/// Cuts an unterminated final line left by a crash mid-append, so the next
/// append starts on a fresh line.
fn repair_tail(path: &Path) -> Result<(), ApiError> {
    let text = fs::read(path).map_err(ApiError::internal)?;
    if text.last().is_some_and(|&b| b != b'\n') {
        let keep = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let file = OpenOptions::new().write(true).open(path).map_err(ApiError::internal)?;
        file.set_len(keep as u64).and_then(|_| file.sync_data()).map_err(ApiError::internal)?;
    }
    Ok(())
}

fn restore(dir: &Path) -> Result<(Session, u64, u64), ApiError> {
    repair_tail(&dir.join("events.jsonl"))?;
    let events = read_events(&dir.join("events.jsonl"))?;
    let first = events.first().ok_or_else(|| ApiError::internal(format!("{}: empty event log", dir.display())))?;
    let mut session = Session::start(&first.event)?;
    let mut from = 1;
    let snap_path = dir.join("snapshot.json");
    if snap_path.exists() {
        let snap: Snapshot = read_json(&snap_path)?;
        if snap.seq <= events.last().map_or(0, |e| e.seq) {
            session.belief = snap.belief;
            session.records = snap.records;
            session.closed = snap.closed;
            session.log_likelihood = snap.log_likelihood;
            session.last_log_evidence = snap.last_log_evidence;
            from = snap.seq + 1;
        }
    }
    let mut pending = 0;
    for line in events.iter().filter(|e| e.seq >= from && e.seq > 1) {
        session.apply(&line.event)?;
        pending += u64::from(matches!(line.event, SessionEvent::Observed { .. }));
    }
    Ok((session, events.last().map_or(0, |e| e.seq), pending))
}

impl Service {
    /// Opens or initializes a data directory. `seed` provides the library
    /// when the directory has none yet.
    pub fn open(data: &Path, token: &str, side: Side, seed: Option<Library>) -> Result<Service, ApiError> {
        fs::create_dir_all(data.join("sessions")).map_err(ApiError::internal)?;
        let lib_dir = data.join("library");
        let library = if lib_dir.join("index.json").exists() {
            load_library_dir(&lib_dir)?
        } else {
            let lib = seed.unwrap_or_else(|| Library::new(side));
            save_library_dir(&lib_dir, &lib)?;
            lib
        };
        let mut sessions = BTreeMap::new();
        let mut max_id = 0;
        let mut dirs: Vec<PathBuf> = fs::read_dir(data.join("sessions"))
            .map_err(ApiError::internal)?
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.join("events.jsonl").exists())
            .collect();
        dirs.sort();
        for dir in dirs {
            let (session, seq, pending) = restore(&dir)?;
            if let Some(n) = session.id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                max_id = max_id.max(n);
            }
            let log = OpenOptions::new().append(true).open(dir.join("events.jsonl")).map_err(ApiError::internal)?;
            let id = session.id.clone();
            let (updates, _) = broadcast::channel(64);
            let slot = Slot { session, log, dir, seq, pending };
            sessions.insert(id, Arc::new(SessionHandle { slot: Mutex::new(slot), updates }));
        }
        Ok(Service {
            data: data.into(),
            token: token.into(),
            library: RwLock::new(library),
            sessions: Mutex::new(sessions),
            create: Mutex::new(max_id),
        })
    }

    pub fn token(&self) -> &str {
        &self.token
    }

    fn handle(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        lock(&self.sessions).get(id).cloned().ok_or_else(|| ApiError::not_found(format!("no session `{id}`")))
    }

    fn read_library(&self) -> std::sync::RwLockReadGuard<'_, Library> {
        self.library.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write_library(&self) -> std::sync::RwLockWriteGuard<'_, Library> {
        self.library.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn create_session(&self, request: &CreateSession) -> Result<BeliefView, ApiError> {
        let mut counter = lock(&self.create);
        let id = format!("s{:06}", *counter + 1);
        let event = created_event(&id, request, &self.read_library())?;
        let session = Session::start(&event)?;
        let dir = self.data.join("sessions").join(&id);
        fs::create_dir_all(&dir).map_err(ApiError::internal)?;
        let log = OpenOptions::new()
            .create_new(true)
            .append(true)
            .open(dir.join("events.jsonl"))
            .map_err(ApiError::internal)?;
        let view = session.view();
        let mut slot = Slot { session, log, dir, seq: 0, pending: 0 };
        slot.append(event)?;
        *counter += 1;
        let (updates, _) = broadcast::channel(64);
        lock(&self.sessions).insert(id, Arc::new(SessionHandle { slot: Mutex::new(slot), updates }));
        Ok(view)
    }

    pub fn list_sessions(&self) -> Vec<SessionSummary> {
        let handles: Vec<Arc<SessionHandle>> = lock(&self.sessions).values().cloned().collect();
        handles.iter().map(|h| lock(&h.slot).session.summary()).collect()
    }

    pub fn summary(&self, id: &str) -> Result<SessionSummary, ApiError> {
        Ok(lock(&self.handle(id)?.slot).session.summary())
    }

    pub fn belief(&self, id: &str) -> Result<BeliefView, ApiError> {
        Ok(lock(&self.handle(id)?.slot).session.view())
    }

    pub fn state(&self, id: &str) -> Result<SessionState, ApiError> {
        Ok(lock(&self.handle(id)?.slot).session.state())
    }

    /// Rejected observations are audited and answered with the unchanged
    /// belief.
    pub fn observe(&self, id: &str, record: &ObservationRecord) -> Result<BeliefView, ApiError> {
        let handle = self.handle(id)?;
        let mut slot = lock(&handle.slot);
        if let Err(e) = slot.session.observe(record) {
            let reason = e.to_string();
            let view = slot.session.view();
            slot.append(SessionEvent::Rejected { record: record.clone(), reason })?;
            return Err(ApiError::from(e).with_belief(view));
        }
        slot.append(SessionEvent::Observed { record: record.clone() })?;
        slot.pending += 1;
        if slot.pending >= SNAPSHOT_EVERY {
            slot.snapshot()?;
        }
        let view = slot.session.view();
        let _ = handle.updates.send(view.clone());
        Ok(view)
    }

    pub fn what_if(&self, id: &str, query: &WhatIfQuery) -> Result<WhatIfResult, ApiError> {
        let handle = self.handle(id)?;
        let mut slot = lock(&handle.slot);
        let result = slot.session.what_if(query)?;
        slot.append(SessionEvent::Queried { query: query.clone(), ranking: result.ranking.clone() })?;
        Ok(result)
    }

    fn priors_path(&self, entry: &str) -> PathBuf {
        self.data.join("priors").join(format!("{entry}.json"))
    }

    /// Current hyperparameters of an entry; symmetric 1 until the first
    /// close.
    pub fn priors(&self, entry: &str) -> Result<PriorsDocument, ApiError> {
        let lib = self.read_library();
        let model = &lib.entry(entry).ok_or_else(|| ApiError::not_found(format!("no entry `{entry}`")))?.model;
        let path = self.priors_path(entry);
        if path.exists() {
            let doc: PriorsDocument = read_json(&path)?;
            doc.to_set(model)?;
            Ok(doc)
        } else {
            Ok(PriorsDocument::from_set(model, &DirichletSet::flat(model)))
        }
    }

    /// Applies the incident to the entry's hyperparameters and closes the
    /// session. A non-ancestral incident leaves everything as it was.
    pub fn close(&self, id: &str, incident: &CompletedIncident) -> Result<CloseReceipt, ApiError> {
        let handle = self.handle(id)?;
        let mut slot = lock(&handle.slot);
        let entry = slot.session.entry.clone();
        // Library writer lock: one learning update at a time.
        let lib = self.write_library();
        let model = lib.entry(&entry).map(|e| e.model.clone());
        let path = self.priors_path(&entry);
        let priors = match &model {
            Some(m) if path.exists() => read_json::<PriorsDocument>(&path)?.to_set(m)?,
            _ => DirichletSet::flat(&slot.session.models[0]),
        };
        let update = match slot.session.close_update(&priors, incident) {
            Ok(u) => u,
            Err(e) => {
                if !matches!(e, SessionError::Closed) {
                    slot.append(SessionEvent::CloseRejected { incident: incident.clone(), reason: e.to_string() })?;
                }
                return Err(e.into());
            }
        };
        let layout_model = &slot.session.models[0];
        let touched = update.updated_rows();
        let doc = PriorsDocument::from_set(layout_model, &update.posterior);
        let mut rows = Vec::new();
        for key in &touched {
            let mut row = PriorsDocument::from_set(
                layout_model,
                &DirichletSet {
                    alpha: BTreeMap::from([(*key, update.posterior.alpha[key].clone())]),
                    counts: BTreeMap::from([(*key, update.counts[key].clone())]),
                },
            )
            .rows;
            rows.append(&mut row);
        }
        if model.is_some() {
            write_atomic(&path, &to_canonical(&doc))?;
        }
        drop(lib);
        slot.append(SessionEvent::Closed { incident: incident.clone(), rows: rows.len() })?;
        slot.session.closed = true;
        slot.snapshot()?;
        Ok(CloseReceipt { session: id.into(), entry, updated_rows: rows })
    }

    /// Replays the whole event log, ignoring snapshots, and compares the
    /// result with the live state.
    pub fn audit(&self, id: &str) -> Result<AuditReport, ApiError> {
        let handle = self.handle(id)?;
        let slot = lock(&handle.slot);
        let events = read_events(&slot.dir.join("events.jsonl"))?;
        let replayed = Session::replay(events.iter().map(|e| &e.event))?;
        let live_hash = crate::api::state_hash(&slot.session.belief);
        let replayed_hash = crate::api::state_hash(&replayed.belief);
        Ok(AuditReport {
            session: id.into(),
            events: events.len() as u64,
            consistent: replayed == slot.session && live_hash == replayed_hash,
            live_hash,
            replayed_hash,
        })
    }

    pub fn subscribe(&self, id: &str) -> Result<(BeliefView, broadcast::Receiver<BeliefView>), ApiError> {
        let handle = self.handle(id)?;
        let slot = lock(&handle.slot);
        Ok((slot.session.view(), handle.updates.subscribe()))
    }

    pub fn library_index(&self) -> LibraryIndex {
        let lib = self.read_library();
        LibraryIndex {
            format: crate::format::LIBRARY_FORMAT.into(),
            side: lib.side,
            iteration: lib.iteration,
            entries: lib
                .entries
                .iter()
                .map(|e| crate::format::IndexEntry { id: e.model.id.clone(), novelty: e.novelty.clone() })
                .collect(),
            overlays: lib.overlays.clone(),
            dummies: lib.dummies.clone(),
        }
    }

    pub fn library_entry(&self, id: &str) -> Result<ModelDocument, ApiError> {
        let lib = self.read_library();
        let entry = lib.entry(id).ok_or_else(|| ApiError::not_found(format!("no entry `{id}`")))?;
        Ok(ModelDocument::from_model(&entry.model))
    }

    fn commit_library(&self, lib: &mut Library, next: Library) -> Result<(), ApiError> {
        save_library_dir(&self.data.join("library"), &next)?;
        *lib = next;
        Ok(())
    }

    pub fn add_entry(&self, request: &EntryRequest) -> Result<EntryReceipt, ApiError> {
        let model = request.model.to_model()?.model;
        let mut lib = self.write_library();
        let mut next = lib.clone();
        let id = model.id.clone();
        let novelty = next.add_entry(model, &request.declaration)?;
        self.commit_library(&mut lib, next)?;
        Ok(EntryReceipt { id, novelty })
    }

    /// Replaces or removes one entry by rebuilding the library from the
    /// remaining entries in order. Novelty is recomputed for every entry
    /// after it; overlays and dummies of a removed entry are dropped, and
    /// the priors of a changed entry reset.
    fn rebuild(&self, id: &str, replacement: Option<&EntryRequest>) -> Result<Option<EntryReceipt>, ApiError> {
        let new_model = replacement.map(|r| r.model.to_model()).transpose()?.map(|l| l.model);
        if let Some(m) = &new_model {
            if m.id != id {
                return Err(ApiError::bad_request(format!("model id `{}` does not match entry `{id}`", m.id)));
            }
        }
        let mut lib = self.write_library();
        if lib.entry(id).is_none() {
            return Err(ApiError::not_found(format!("no entry `{id}`")));
        }
        let mut next = Library::new(lib.side);
        next.iteration = lib.iteration;
        let mut receipt = None;
        for e in &lib.entries {
            if e.model.id != id {
                next.add_entry(e.model.clone(), &Default::default())?;
            } else if let (Some(m), Some(r)) = (&new_model, replacement) {
                let novelty = next.add_entry(m.clone(), &r.declaration)?;
                receipt = Some(EntryReceipt { id: id.into(), novelty });
            }
        }
        for o in &lib.overlays {
            if next.entry(&o.entry).is_some() {
                next.add_overlay(o.clone())?;
            }
        }
        for (key, table) in &lib.dummies {
            if next.entry(key.split('/').next().unwrap_or_default()).is_some() {
                next.register_dummy(key.clone(), table.clone())?;
            }
        }
        self.commit_library(&mut lib, next)?;
        let priors = self.priors_path(id);
        if priors.exists() {
            fs::remove_file(&priors).map_err(ApiError::internal)?;
        }
        Ok(receipt)
    }

    pub fn replace_entry(&self, id: &str, request: &EntryRequest) -> Result<EntryReceipt, ApiError> {
        Ok(self.rebuild(id, Some(request))?.expect("replacement yields a receipt"))
    }

    pub fn remove_entry(&self, id: &str) -> Result<(), ApiError> {
        self.rebuild(id, None).map(|_| ())
    }

    pub fn export(&self) -> Result<SanitizedDocument, ApiError> {
        let export = self.read_library().sanitize_export()?;
        Ok(SanitizedDocument {
            library: crate::format::LibraryDocument::from_library(&export.library),
            manifest: export.manifest,
        })
    }
}
