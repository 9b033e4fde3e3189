//! Line-delimited record files.
//!
//! Every persisted record type is written one JSON object per line, with a
//! trailing `schema_version` field appended by [`Versioned`]. Writes go
//! through a temporary file in the destination directory and are renamed into
//! place, so a failed write never leaves a partial file behind.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Current version of every line-record schema in this crate.
pub const SCHEMA_VERSION: u32 = 1;

/// A record plus its schema version, flattened into one JSON object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    #[serde(flatten)]
    pub record: T,
    pub schema_version: u32,
}

impl<T> Versioned<T> {
    pub fn new(record: T) -> Self {
        Self {
            record,
            schema_version: SCHEMA_VERSION,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: field `{field}`: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("failed to encode record: {0}")]
    Encode(#[from] serde_json::Error),
}

/// Serialize one record as a single JSON line (no trailing newline).
pub fn encode_line<T: Serialize>(record: &T) -> Result<String, serde_json::Error> {
    serde_json::to_string(&Versioned::new(record))
}

/// Decode one line, reporting the offending field path on failure.
pub fn decode_line<T: DeserializeOwned>(text: &str) -> Result<T, (String, String)> {
    let record = |m: String| ("<record>".to_owned(), m);
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| record(e.to_string()))?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| record("expected a JSON object".into()))?;
    match obj.remove("schema_version").map(|v| v.as_u64()) {
        Some(Some(v)) if v == u64::from(SCHEMA_VERSION) => {}
        Some(Some(v)) => {
            return Err((
                "schema_version".to_owned(),
                format!("unsupported schema version {v} (expected {SCHEMA_VERSION})"),
            ))
        }
        Some(None) => return Err(("schema_version".to_owned(), "expected an integer".into())),
        None => return Err(("schema_version".to_owned(), "missing field".into())),
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<record>".to_owned() } else { path };
        (field, e.into_inner().to_string())
    })
}

/// Write `records` to `path`, one per line. Returns the number written.
pub fn write_records<T: Serialize>(path: &Path, records: &[T]) -> Result<usize, LineError> {
    let mut buf = Vec::new();
    for record in records {
        buf.extend_from_slice(encode_line(record)?.as_bytes());
        buf.push(b'\n');
    }
    write_atomic(path, &buf)?;
    Ok(records.len())
}

/// Replace `path` with `bytes` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), LineError> {
    let io_err = |source| LineError::Io {
        path: path.to_owned(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        w.write_all(bytes).map_err(io_err)?;
        w.flush().map_err(io_err)?;
    }
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

/// Read every record in `path`, failing on the first malformed line.
pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, LineError> {
    let text = fs::read_to_string(path).map_err(|source| LineError::Io {
        path: path.to_owned(),
        source,
    })?;
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            decode_line(line).map_err(|(field, message)| LineError::Malformed {
                path: path.to_owned(),
                line: i + 1,
                field,
                message,
            })
        })
        .collect()
}

/// Read a file holding exactly one record.
pub fn read_single<T: DeserializeOwned>(path: &Path) -> Result<T, LineError> {
    let mut records: Vec<T> = read_records(path)?;
    if records.len() != 1 {
        return Err(LineError::Malformed {
            path: path.to_owned(),
            line: records.len().min(2),
            field: "<file>".to_owned(),
            message: format!("expected exactly one record, found {}", records.len()),
        });
    }
    Ok(records.remove(0))
}
