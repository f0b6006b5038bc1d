use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use plotnet_core::inference::ObservationRecord;
use plotnet_core::learning::CompletedIncident;
use plotnet_core::simulate::{Archive, IncidentLog};

use super::{check_format, parse, read_json, to_canonical, write_atomic, FormatError};

pub const ARCHIVE_FORMAT: &str = "plot-archive/1";

/// One record per line; blank lines are skipped.
pub fn parse_log(text: &str, context: &str) -> Result<Vec<ObservationRecord>, FormatError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| parse(l, &format!("{context}:{}", n + 1)))
        .collect()
}

pub fn render_log(records: &[ObservationRecord]) -> String {
    records.iter().map(|r| serde_json::to_string(r).expect("records serialize") + "\n").collect()
}

pub fn read_log(path: &Path) -> Result<Vec<ObservationRecord>, FormatError> {
    let text = fs::read_to_string(path).map_err(FormatError::io(path))?;
    parse_log(&text, &path.display().to_string())
}

pub fn write_log(path: &Path, records: &[ObservationRecord]) -> Result<(), FormatError> {
    write_atomic(path, &render_log(records))
}

/// `manifest.json` of an archive directory; each incident's records sit
/// next to it in `<id>.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveManifest {
    pub format: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub incidents: Vec<ArchiveEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveEntry {
    pub id: String,
    #[serde(default)]
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub file: String,
}

pub fn save_archive(dir: &Path, model: &str, archive: &Archive) -> Result<(), FormatError> {
    let mut incidents = Vec::with_capacity(archive.incidents.len());
    for IncidentLog { id, category, seed, records, .. } in &archive.incidents {
        let file = format!("{id}.jsonl");
        write_log(&dir.join(&file), records)?;
        incidents.push(ArchiveEntry { id: id.clone(), category: category.clone(), seed: Some(*seed), file });
    }
    let manifest = ArchiveManifest {
        format: ARCHIVE_FORMAT.into(),
        model: Some(model.into()),
        master_seed: Some(archive.master_seed),
        incidents,
    };
    write_atomic(&dir.join("manifest.json"), &to_canonical(&manifest))
}

/// Reads either an archive directory or a single JSONL log, the latter as
/// one incident named after the file.
pub fn load_archive(path: &Path) -> Result<Vec<CompletedIncident>, FormatError> {
    if !path.is_dir() {
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![CompletedIncident { id, category: String::new(), records: read_log(path)? }]);
    }
    let manifest: ArchiveManifest = read_json(&path.join("manifest.json"))?;
    check_format(ARCHIVE_FORMAT, &manifest.format)?;
    manifest
        .incidents
        .into_iter()
        .map(|e| {
            if e.file.contains('/') || e.file.contains('\\') || e.file.starts_with('.') {
                return Err(FormatError::Content(format!("archive file name `{}` leaves the directory", e.file)));
            }
            Ok(CompletedIncident { id: e.id, category: e.category, records: read_log(&path.join(&e.file))? })
        })
        .collect()
}
