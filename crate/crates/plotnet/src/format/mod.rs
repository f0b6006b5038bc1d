//! On-disk documents: models, logs, archives, priors and libraries.
//!
//! Every document is JSON with a `format` tag and rejects unknown fields.
//! Writers emit a canonical form (sorted maps, shortest round-trip floats,
//! two-space indentation) so that equal values give equal bytes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use plotnet_core::model::{BuildError, ValidationReport};

mod library;
mod model;
mod priors;
mod records;

pub use library::{
    export_document, load_library_dir, read_library, save_library_dir, write_library, EntryDocument, IndexEntry,
    LibraryDocument, LibraryIndex, SanitizedDocument, LIBRARY_FORMAT,
};
pub use model::{
    load_model, read_model, save_model, write_model, CptDocument, LoadedModel, MetaDocument, ModelDocument,
    OverrideDocument, PhaseDocument, TransitionDocument, VertexDocument, MODEL_FORMAT,
};
pub use priors::{PriorRow, PriorsDocument, PRIORS_FORMAT};
pub use records::{
    load_archive, parse_log, read_log, render_log, save_archive, write_log, ArchiveEntry, ArchiveManifest,
    ARCHIVE_FORMAT,
};

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{context}: {source}")]
    Json { context: String, source: serde_json::Error },
    #[error("expected a `{expected}` document, found `{found}`")]
    WrongFormat { expected: &'static str, found: String },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("model `{id}` is invalid:\n{report}")]
    Invalid { id: String, report: ValidationReport },
    #[error("{0}")]
    Content(String),
}

impl FormatError {
    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> FormatError + '_ {
        move |source| FormatError::Io { path: path.to_path_buf(), source }
    }
}

pub fn check_format(expected: &'static str, found: &str) -> Result<(), FormatError> {
    if found == expected {
        Ok(())
    } else {
        Err(FormatError::WrongFormat { expected, found: found.into() })
    }
}

/// Canonical pretty JSON with a trailing newline.
pub fn to_canonical<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("documents serialize");
    s.push('\n');
    s
}

pub fn parse<T: DeserializeOwned>(text: &str, context: &str) -> Result<T, FormatError> {
    serde_json::from_str(text).map_err(|source| FormatError::Json { context: context.into(), source })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, FormatError> {
    let text = fs::read_to_string(path).map_err(FormatError::io(path))?;
    parse(&text, &path.display().to_string())
}

/// Writes through a temporary file and a rename, so readers never see a
/// half-written document.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), FormatError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(FormatError::io(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(FormatError::io(&tmp))?;
    fs::rename(&tmp, path).map_err(FormatError::io(path))
}
