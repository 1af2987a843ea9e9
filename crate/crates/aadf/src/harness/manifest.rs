//! Dataset manifests: JSONL, one entry per line, UTF-8. Paths are relative
//! to the manifest file's directory.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::priors::FaceBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSplit {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: String,
    pub label: u8,
    /// Face box in source coordinates; field name "box" on the wire.
    #[serde(rename = "box", skip_serializing_if = "Option::is_none", default)]
    pub box_: Option<FaceBox>,
    pub split: DataSplit,
}

impl ManifestEntry {
    pub fn new(
        id: impl Into<String>,
        path: impl Into<String>,
        label: u8,
        box_: Option<FaceBox>,
        split: DataSplit,
    ) -> Self {
        Self {
            id: id.into(),
            path: path.into(),
            label,
            box_,
            split,
        }
    }
}

pub fn write_manifest(entries: &[ManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for entry in entries {
        let line = serde_json::to_string(entry)
            .map_err(|e| Error::Manifest(format!("serialize entry '{}': {e}", entry.id)))?;
        writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut entries = Vec::new();
    let mut ids = std::collections::BTreeSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line)
            .map_err(|e| Error::Manifest(format!("line {}: {e}", lineno + 1)))?;
        if entry.label > 1 {
            return Err(Error::Manifest(format!(
                "entry '{}': label must be 0 or 1",
                entry.id
            )));
        }
        if !ids.insert(entry.id.clone()) {
            return Err(Error::Manifest(format!("duplicate id '{}'", entry.id)));
        }
        entries.push(entry);
    }
    Ok(entries)
}
