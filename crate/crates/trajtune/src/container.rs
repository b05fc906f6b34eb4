//! JSONL container formats and crash-consistent file IO.
//!
//! Every corpus artifact in the pipeline is a JSONL file: one JSON object per
//! line, UTF-8, no outer array. Readers report the offending line number on
//! parse failure; writers always go through a temp file and rename, so a
//! crashed run never leaves a half-written artifact behind.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::trajectory::{DropReason, ToolSchema};

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

impl ContainerError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ContainerError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One turn of a raw source conversation. Roles are uninterpreted strings at
/// this layer; ingest decides what they mean.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTurn {
    pub role: String,
    pub content: String,
}

impl RawTurn {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        Self {
            role: role.to_string(),
            content: content.into(),
        }
    }
}

/// One raw corpus record as shipped by upstream agent datasets. The
/// `conversations` list may alternate user/assistant turns or hold a single
/// assistant blob containing the whole transcript; ingest handles both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub source: String,
    #[serde(default)]
    pub system: String,
    #[serde(default)]
    pub tools: Vec<ToolSchema>,
    pub conversations: Vec<RawTurn>,
}

/// Sidecar log entry for a record excluded during ingest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropLogEntry {
    pub id: String,
    #[serde(flatten)]
    pub reason: DropReason,
}

/// Reads a whole JSONL file into memory. Blank lines are skipped.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ContainerError> {
    let file = File::open(path).map_err(|e| ContainerError::io(path, e))?;
    let reader = BufReader::new(file);
    let mut items = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| ContainerError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|source| ContainerError::Parse {
            path: path.to_path_buf(),
            line: idx + 1,
            source,
        })?;
        items.push(item);
    }
    Ok(items)
}

/// Writes items as JSONL via a temp file in the same directory, then renames
/// into place. The destination either keeps its old content or holds the
/// complete new content; no partial states survive.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), ContainerError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|source| ContainerError::Parse {
            path: path.to_path_buf(),
            line: 0,
            source,
        })?;
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

/// Atomically replaces `path` with `bytes` (temp file + rename).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), ContainerError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let file_name = path
        .file_name()
        .and_then(|n| n.to_str())
        .unwrap_or("artifact");
    let tmp = match dir {
        Some(dir) => dir.join(format!(".{file_name}.tmp")),
        None => PathBuf::from(format!(".{file_name}.tmp")),
    };
    {
        let file = File::create(&tmp).map_err(|e| ContainerError::io(&tmp, e))?;
        let mut writer = BufWriter::new(file);
        writer
            .write_all(bytes)
            .and_then(|_| writer.flush())
            .map_err(|e| ContainerError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| ContainerError::io(path, e))
}
