use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CASSETTE_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CassetteError {
    #[error("cassette {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cassette {path}: {detail}")]
    Format { path: String, detail: String },
    #[error("cassette schema version {found} not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("duplicate fingerprint {0}")]
    Duplicate(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fingerprint: String,
    pub response: String,
    pub latency_ms: u64,
    /// Free-form provenance note, e.g. which scene produced the request.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub schema_version: u32,
    #[serde(default)]
    pub entries: Vec<CassetteEntry>,
}

impl Default for Cassette {
    fn default() -> Self {
        Self { schema_version: CASSETTE_SCHEMA_VERSION, entries: Vec::new() }
    }
}

impl Cassette {
    pub fn get(&self, fingerprint: &str) -> Option<&CassetteEntry> {
        self.entries.iter().find(|e| e.fingerprint == fingerprint)
    }

    /// Appends an entry; a second entry for the same fingerprint is rejected.
    pub fn push(&mut self, entry: CassetteEntry) -> Result<(), CassetteError> {
        if self.get(&entry.fingerprint).is_some() {
            return Err(CassetteError::Duplicate(entry.fingerprint));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn validate(&self) -> Result<(), CassetteError> {
        if self.schema_version != CASSETTE_SCHEMA_VERSION {
            return Err(CassetteError::Version { found: self.schema_version, expected: CASSETTE_SCHEMA_VERSION });
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.fingerprint.as_str()) {
                return Err(CassetteError::Duplicate(e.fingerprint.clone()));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CassetteError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CassetteError::Format { path: path.display().to_string(), detail: e.to_string() })?;
        std::fs::write(path, text + "\n")
            .map_err(|source| CassetteError::Io { path: path.display().to_string(), source })
    }
}

/// Reads and validates a cassette. A zero-length file is an empty cassette.
pub fn load_cassette(path: &Path) -> Result<Cassette, CassetteError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| CassetteError::Io { path: path.display().to_string(), source })?;
    if text.trim().is_empty() {
        return Ok(Cassette::default());
    }
    let cassette: Cassette = serde_json::from_str(&text)
        .map_err(|e| CassetteError::Format { path: path.display().to_string(), detail: e.to_string() })?;
    cassette.validate()?;
    Ok(cassette)
}
