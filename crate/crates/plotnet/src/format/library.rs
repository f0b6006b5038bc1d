use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use plotnet_core::interventions::Replacement;
use plotnet_core::library::{CategoryOverlay, Library, LibraryEntry, ManifestLine, Novelty, SanitizedExport, Side};

use super::{check_format, parse, read_json, to_canonical, write_atomic, FormatError, ModelDocument};

pub const LIBRARY_FORMAT: &str = "plot-library/1";

/// A whole library in one canonical document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryDocument {
    pub format: String,
    pub side: Side,
    #[serde(default)]
    pub iteration: u32,
    pub entries: Vec<EntryDocument>,
    #[serde(default)]
    pub overlays: Vec<CategoryOverlay>,
    #[serde(default)]
    pub dummies: BTreeMap<String, Replacement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntryDocument {
    pub novelty: Novelty,
    pub model: ModelDocument,
}

/// `index.json` of a library directory; entry models live in
/// `entries/<id>.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryIndex {
    pub format: String,
    pub side: Side,
    #[serde(default)]
    pub iteration: u32,
    pub entries: Vec<IndexEntry>,
    #[serde(default)]
    pub overlays: Vec<CategoryOverlay>,
    #[serde(default)]
    pub dummies: BTreeMap<String, Replacement>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub id: String,
    pub novelty: Novelty,
}

/// A sanitized export and the manifest of what was done to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SanitizedDocument {
    pub library: LibraryDocument,
    pub manifest: Vec<ManifestLine>,
}

impl LibraryDocument {
    pub fn from_library(lib: &Library) -> LibraryDocument {
        LibraryDocument {
            format: LIBRARY_FORMAT.into(),
            side: lib.side,
            iteration: lib.iteration,
            entries: lib
                .entries
                .iter()
                .map(|e| EntryDocument { novelty: e.novelty.clone(), model: ModelDocument::from_model(&e.model) })
                .collect(),
            overlays: lib.overlays.clone(),
            dummies: lib.dummies.clone(),
        }
    }

    /// Every entry model is validated; novelty is taken as recorded.
    pub fn to_library(&self) -> Result<Library, FormatError> {
        check_format(LIBRARY_FORMAT, &self.format)?;
        let mut entries: Vec<LibraryEntry> = Vec::with_capacity(self.entries.len());
        for e in &self.entries {
            let model = e.model.to_model()?.model;
            if entries.iter().any(|x| x.model.id == model.id) {
                return Err(FormatError::Content(format!("entry `{}` appears twice", model.id)));
            }
            entries.push(LibraryEntry { model, novelty: e.novelty.clone() });
        }
        let lib = Library {
            side: self.side,
            iteration: self.iteration,
            entries,
            overlays: self.overlays.clone(),
            dummies: self.dummies.clone(),
        };
        for o in &lib.overlays {
            if lib.entry(&o.entry).is_none() {
                return Err(FormatError::Content(format!("overlay for unknown entry `{}`", o.entry)));
            }
        }
        for key in lib.dummies.keys() {
            let entry = key.split('/').next().unwrap_or_default();
            if lib.entry(entry).is_none() {
                return Err(FormatError::Content(format!("dummy `{key}` names an unknown entry")));
            }
        }
        Ok(lib)
    }
}

pub fn read_library(text: &str, context: &str) -> Result<Library, FormatError> {
    parse::<LibraryDocument>(text, context)?.to_library()
}

pub fn write_library(lib: &Library) -> String {
    to_canonical(&LibraryDocument::from_library(lib))
}

pub fn export_document(export: &SanitizedExport) -> String {
    to_canonical(&SanitizedDocument {
        library: LibraryDocument::from_library(&export.library),
        manifest: export.manifest.clone(),
    })
}

fn entry_path(dir: &Path, id: &str) -> Result<std::path::PathBuf, FormatError> {
    if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
        return Err(FormatError::Content(format!("`{id}` cannot be used as a file name")));
    }
    Ok(dir.join("entries").join(format!("{id}.json")))
}

/// Reads a library directory, or a single library document.
pub fn load_library_dir(path: &Path) -> Result<Library, FormatError> {
    if !path.is_dir() {
        let text = fs::read_to_string(path).map_err(FormatError::io(path))?;
        return read_library(&text, &path.display().to_string());
    }
    let index: LibraryIndex = read_json(&path.join("index.json"))?;
    check_format(LIBRARY_FORMAT, &index.format)?;
    let mut entries = Vec::with_capacity(index.entries.len());
    for e in &index.entries {
        let model: ModelDocument = read_json(&entry_path(path, &e.id)?)?;
        if model.id != e.id {
            return Err(FormatError::Content(format!("entries/{}.json holds model `{}`", e.id, model.id)));
        }
        entries.push(EntryDocument { novelty: e.novelty.clone(), model });
    }
    LibraryDocument {
        format: index.format,
        side: index.side,
        iteration: index.iteration,
        entries,
        overlays: index.overlays,
        dummies: index.dummies,
    }
    .to_library()
}

/// Writes entries first and the index last, then removes entry files no
/// longer listed.
pub fn save_library_dir(path: &Path, lib: &Library) -> Result<(), FormatError> {
    let doc = LibraryDocument::from_library(lib);
    let mut keep = Vec::new();
    for e in &doc.entries {
        let file = entry_path(path, &e.model.id)?;
        write_atomic(&file, &to_canonical(&e.model))?;
        keep.push(file);
    }
    let index = LibraryIndex {
        format: doc.format,
        side: doc.side,
        iteration: doc.iteration,
        entries: doc.entries.into_iter().map(|e| IndexEntry { id: e.model.id, novelty: e.novelty }).collect(),
        overlays: doc.overlays,
        dummies: doc.dummies,
    };
    write_atomic(&path.join("index.json"), &to_canonical(&index))?;
    let dir = path.join("entries");
    if let Ok(listing) = fs::read_dir(&dir) {
        for f in listing.flatten() {
            let p = f.path();
            if p.extension().is_some_and(|x| x == "json") && !keep.contains(&p) {
                fs::remove_file(&p).map_err(FormatError::io(&p))?;
            }
        }
    }
    Ok(())
}
