//! Deterministic in-process backends.

use std::collections::HashMap;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    check_texts, Answerer, AnswererDescriptor, BackendError, Embedder, EmbedderDescriptor,
    SceneImageRef, TaskMode,
};
use crate::metric::EmbeddingVector;

/// Hash-seeded pseudo-random embedder.
///
/// Each text seeds a ChaCha20 stream from `sha256(seed || text)`; `d` draws
/// uniform in `[-1, 1)`, then the vector is L2-normalized. Distinct texts get
/// near-orthogonal vectors for large `d`. Individual texts can be pinned to
/// fixed vectors.
#[derive(Debug, Clone)]
pub struct MockEmbedder {
    descriptor: EmbedderDescriptor,
    seed: u64,
    pinned: HashMap<String, EmbeddingVector>,
}

impl MockEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Self {
        Self {
            descriptor: EmbedderDescriptor {
                name: "mock-hash-embedder".into(),
                dimension: dimension.max(1),
                endpoint: None,
            },
            seed,
            pinned: HashMap::new(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.descriptor.name = name.into();
        self
    }

    /// Fixes the vector returned for `text`.
    pub fn pin(
        &mut self,
        text: impl Into<String>,
        vector: EmbeddingVector,
    ) -> Result<(), BackendError> {
        if vector.dimension() != self.descriptor.dimension {
            return Err(BackendError::Dimension {
                index: 0,
                expected: self.descriptor.dimension,
                found: vector.dimension(),
            });
        }
        self.pinned.insert(text.into(), vector);
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The vector for one text.
    pub fn vector_for(&self, text: &str) -> EmbeddingVector {
        if let Some(v) = self.pinned.get(text) {
            return v.clone();
        }
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(text.as_bytes());
        let mut key = [0u8; 32];
        key.copy_from_slice(&hasher.finalize());
        let mut rng = ChaCha20Rng::from_seed(key);
        loop {
            let raw: Vec<f64> = (0..self.descriptor.dimension)
                .map(|_| {
                    // 53 random mantissa bits mapped onto [-1, 1)
                    let unit = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                    2.0 * unit - 1.0
                })
                .collect();
            // an all-zero draw is astronomically unlikely but would not normalize
            if let Ok(v) = EmbeddingVector::normalized(raw) {
                return v;
            }
        }
    }
}

impl Embedder for MockEmbedder {
    fn descriptor(&self) -> &EmbedderDescriptor {
        &self.descriptor
    }

    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        check_texts(texts, "text")?;
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

/// Scripted answers keyed on `(image locator, question)`, as read from a
/// scenario file. A locator with no entry of its own falls back to the entry
/// for its file name.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "Scenario::default_answer")]
    pub default_answer: String,
    /// When set, an image absent from `answers` is unresolvable instead of
    /// answered with the default.
    #[serde(default)]
    pub strict_images: bool,
    /// image locator → question → answer
    #[serde(default)]
    pub answers: HashMap<String, HashMap<String, String>>,
}

impl Scenario {
    fn default_answer() -> String {
        "unknown".into()
    }

    pub fn from_json_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            BackendError::InvalidRequest(format!("cannot read scenario {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text).map_err(|e| {
            BackendError::InvalidRequest(format!("invalid scenario {}: {e}", path.display()))
        })
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedAnswerer {
    descriptor: AnswererDescriptor,
    scenario: Scenario,
}

impl ScriptedAnswerer {
    pub fn new(default_answer: impl Into<String>) -> Self {
        Self::from_scenario(Scenario {
            default_answer: default_answer.into(),
            ..Scenario::default()
        })
    }

    pub fn from_scenario(scenario: Scenario) -> Self {
        Self {
            descriptor: AnswererDescriptor {
                name: "scripted-answerer".into(),
                endpoint: None,
                task_mode: TaskMode::Ic,
            },
            scenario,
        }
    }

    pub fn with_descriptor(mut self, descriptor: AnswererDescriptor) -> Self {
        self.descriptor = descriptor;
        self
    }

    pub fn insert(
        &mut self,
        locator: impl Into<String>,
        question: impl Into<String>,
        answer: impl Into<String>,
    ) -> &mut Self {
        self.scenario
            .answers
            .entry(locator.into())
            .or_default()
            .insert(question.into(), answer.into());
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }
}

impl Answerer for ScriptedAnswerer {
    fn descriptor(&self) -> &AnswererDescriptor {
        &self.descriptor
    }

    fn answer_questions(
        &self,
        image: &SceneImageRef,
        questions: &[String],
    ) -> Result<Vec<String>, BackendError> {
        check_texts(questions, "question")?;
        let table = self.scenario.answers.get(&image.locator).or_else(|| {
            Path::new(&image.locator)
                .file_name()
                .and_then(|name| name.to_str())
                .and_then(|name| self.scenario.answers.get(name))
        });
        if table.is_none() && self.scenario.strict_images {
            return Err(BackendError::UnresolvableImage {
                locator: image.locator.clone(),
                reason: "image not present in scenario".into(),
            });
        }
        if self.scenario.default_answer.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "scenario default answer is empty".into(),
            ));
        }
        Ok(questions
            .iter()
            .map(|q| {
                table
                    .and_then(|t| t.get(q))
                    .unwrap_or(&self.scenario.default_answer)
                    .clone()
            })
            .collect())
    }
}
