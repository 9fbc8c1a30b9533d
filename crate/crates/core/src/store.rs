//! Per-spot reference records on disk.
//!
//! Layout: `{store_dir}/{spot_id}.json`, one UTF-8 JSON document per spot.
//! Writes go to a temporary file in the same directory and are renamed into
//! place, so readers never observe a partial record.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{AnswererDescriptor, EmbedderDescriptor};
use crate::metric::{BatteryHash, EmbeddingVector};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid reference record: {0}")]
    Schema(String),
    #[error("invalid spot id {0:?}")]
    InvalidSpotId(String),
    #[error("no reference stored for spot {0:?}")]
    UnknownSpot(String),
    #[error(
        "reference for spot {spot_id:?} was built with a different battery \
         (stored {stored}, expected {expected})"
    )]
    BatteryMismatch {
        spot_id: String,
        stored: BatteryHash,
        expected: BatteryHash,
    },
    #[error("corrupt reference file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("reference file {path} has schema version {found}, this build reads {SCHEMA_VERSION}")]
    UnsupportedVersion { path: PathBuf, found: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEntry {
    pub question: String,
    pub answer: String,
    pub vector: EmbeddingVector,
}

/// Answers and embeddings of the single reference image of one spot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub schema_version: u32,
    pub spot_id: String,
    pub battery_hash: BatteryHash,
    pub embedder: EmbedderDescriptor,
    pub answerer: AnswererDescriptor,
    pub created_at: DateTime<Utc>,
    pub entries: Vec<ReferenceEntry>,
}

impl ReferenceRecord {
    pub fn validate(&self) -> Result<(), StoreError> {
        validate_spot_id(&self.spot_id)?;
        if self.schema_version != SCHEMA_VERSION {
            return Err(StoreError::Schema(format!(
                "schema_version {} is not {SCHEMA_VERSION}",
                self.schema_version
            )));
        }
        if self.entries.is_empty() {
            return Err(StoreError::Schema("record has no entries".into()));
        }
        let computed = BatteryHash::of_texts(self.entries.iter().map(|e| e.question.as_str()));
        if computed != self.battery_hash {
            return Err(StoreError::Schema(format!(
                "battery_hash {} does not match the {} stored questions (hash {computed})",
                self.battery_hash,
                self.entries.len()
            )));
        }
        for (i, e) in self.entries.iter().enumerate() {
            if e.answer.trim().is_empty() {
                return Err(StoreError::Schema(format!("entry {i} has an empty answer")));
            }
            if e.vector.dimension() != self.embedder.dimension {
                return Err(StoreError::Schema(format!(
                    "entry {i} has dimension {}, embedder declares {}",
                    e.vector.dimension(),
                    self.embedder.dimension
                )));
            }
        }
        Ok(())
    }

    pub fn vectors(&self) -> Vec<EmbeddingVector> {
        self.entries.iter().map(|e| e.vector.clone()).collect()
    }
}

/// Spot ids become file names, so they are restricted to a portable set.
pub fn validate_spot_id(spot_id: &str) -> Result<(), StoreError> {
    let ok = !spot_id.is_empty()
        && !spot_id.starts_with('.')
        && spot_id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(StoreError::InvalidSpotId(spot_id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SaveOutcome {
    pub path: PathBuf,
    /// A previous record for the spot was overwritten.
    pub replaced: bool,
}

/// All stored references, keyed by spot id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SpotCatalog {
    pub spots: BTreeMap<String, ReferenceRecord>,
}

impl SpotCatalog {
    pub fn len(&self) -> usize {
        self.spots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spots.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct ReferenceStore {
    dir: PathBuf,
}

impl ReferenceStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, spot_id: &str) -> Result<PathBuf, StoreError> {
        validate_spot_id(spot_id)?;
        Ok(self.dir.join(format!("{spot_id}.json")))
    }

    pub fn save(&self, record: &ReferenceRecord) -> Result<SaveOutcome, StoreError> {
        record.validate()?;
        let path = self.path_for(&record.spot_id)?;
        let io_err = |path: &Path| {
            let path = path.to_path_buf();
            move |source| StoreError::Io { path, source }
        };
        fs::create_dir_all(&self.dir).map_err(io_err(&self.dir))?;
        let mut json = serde_json::to_vec_pretty(record)
            .map_err(|e| StoreError::Schema(format!("cannot serialize record: {e}")))?;
        json.push(b'\n');

        let replaced = path.exists();
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io_err(&self.dir))?;
        tmp.write_all(&json).map_err(io_err(tmp.path()))?;
        tmp.as_file().sync_all().map_err(io_err(tmp.path()))?;
        tmp.persist(&path).map_err(|e| StoreError::Io {
            path: path.clone(),
            source: e.error,
        })?;
        Ok(SaveOutcome { path, replaced })
    }

    /// Loads a spot's record, refusing one built with a different battery.
    pub fn load(
        &self,
        spot_id: &str,
        expected_battery_hash: &BatteryHash,
    ) -> Result<ReferenceRecord, StoreError> {
        let record = self.load_any(spot_id)?;
        if &record.battery_hash != expected_battery_hash {
            return Err(StoreError::BatteryMismatch {
                spot_id: spot_id.to_string(),
                stored: record.battery_hash,
                expected: expected_battery_hash.clone(),
            });
        }
        Ok(record)
    }

    /// Loads a spot's record without checking its battery.
    pub fn load_any(&self, spot_id: &str) -> Result<ReferenceRecord, StoreError> {
        let path = self.path_for(spot_id)?;
        let text = match fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(StoreError::UnknownSpot(spot_id.to_string()))
            }
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        let record = parse_record(&path, &text)?;
        if record.spot_id != spot_id {
            return Err(StoreError::Corrupt {
                path,
                reason: format!("file holds spot {:?}", record.spot_id),
            });
        }
        Ok(record)
    }

    pub fn list(&self) -> Result<SpotCatalog, StoreError> {
        let mut catalog = SpotCatalog::default();
        let read = match fs::read_dir(&self.dir) {
            Ok(read) => read,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(catalog),
            Err(source) => {
                return Err(StoreError::Io {
                    path: self.dir.clone(),
                    source,
                })
            }
        };
        for entry in read {
            let entry = entry.map_err(|source| StoreError::Io {
                path: self.dir.clone(),
                source,
            })?;
            let path = entry.path();
            let Some(spot_id) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".json"))
            else {
                continue;
            };
            if validate_spot_id(spot_id).is_err() {
                continue;
            }
            let record = self.load_any(spot_id)?;
            catalog.spots.insert(record.spot_id.clone(), record);
        }
        Ok(catalog)
    }
}

fn parse_record(path: &Path, text: &str) -> Result<ReferenceRecord, StoreError> {
    let corrupt = |reason: String| StoreError::Corrupt {
        path: path.to_path_buf(),
        reason,
    };
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| corrupt(e.to_string()))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| corrupt("missing schema_version".into()))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(StoreError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: u32::try_from(version).unwrap_or(u32::MAX),
        });
    }
    let record: ReferenceRecord =
        serde_json::from_value(value).map_err(|e| corrupt(e.to_string()))?;
    record.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(record)
}
