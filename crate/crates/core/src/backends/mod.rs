//! Interfaces to the two external models: a text embedder and an image
//! question answerer.
//!
//! [`mock`] holds deterministic in-process implementations; [`http`] holds
//! clients for the JSON wire protocol.

pub mod http;
pub mod mock;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::EmbeddingVector;

pub use http::{HttpAnswerer, HttpEmbedder, HttpOptions, RetryPolicy};
pub use mock::{MockEmbedder, Scenario, ScriptedAnswerer};

/// Embedding dimension of the sentence embedder the engine was designed around.
pub const DEFAULT_DIMENSION: usize = 768;

#[derive(Debug, Error)]
pub enum BackendError {
    /// Connection, timeout or server-side failure. Safe to retry.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("vector {index} has dimension {found}, backend declares {expected}")]
    Dimension {
        index: usize,
        expected: usize,
        found: usize,
    },
    #[error("cannot resolve image {locator:?}: {reason}")]
    UnresolvableImage { locator: String, reason: String },
    #[error("short response: {found} results for {expected} inputs")]
    ShortResponse { expected: usize, found: usize },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderDescriptor {
    pub name: String,
    pub dimension: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl EmbedderDescriptor {
    pub fn new(name: impl Into<String>, dimension: usize) -> Result<Self, BackendError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "embedder name is empty".into(),
            ));
        }
        if dimension == 0 {
            return Err(BackendError::InvalidRequest(
                "embedder dimension must be at least 1".into(),
            ));
        }
        Ok(Self {
            name,
            dimension,
            endpoint: None,
        })
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = Some(endpoint.into());
        self
    }
}

/// Upstream task mode. Recorded as metadata only; the interface is
/// `(image, question) -> text` either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TaskMode {
    /// Image captioning conditioned on the question as a prompt.
    #[default]
    #[serde(rename = "IC")]
    Ic,
    #[serde(rename = "VQA")]
    Vqa,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswererDescriptor {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default)]
    pub task_mode: TaskMode,
}

impl AnswererDescriptor {
    pub fn new(name: impl Into<String>, task_mode: TaskMode) -> Result<Self, BackendError> {
        let name = name.into();
        if name.trim().is_empty() {
            return Err(BackendError::InvalidRequest(
                "answerer name is empty".into(),
            ));
        }
        Ok(Self {
            name,
            endpoint: None,
            task_mode,
        })
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = Some(endpoint.into());
        self
    }
}

/// A captured image at a patrol spot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneImageRef {
    /// File path, or an opaque handle the answerer understands.
    pub locator: String,
    pub captured_at: DateTime<Utc>,
    pub spot_id: String,
}

impl SceneImageRef {
    pub fn new(
        locator: impl Into<String>,
        captured_at: DateTime<Utc>,
        spot_id: impl Into<String>,
    ) -> Result<Self, BackendError> {
        let locator = locator.into();
        if locator.is_empty() {
            return Err(BackendError::InvalidRequest(
                "image locator is empty".into(),
            ));
        }
        Ok(Self {
            locator,
            captured_at,
            spot_id: spot_id.into(),
        })
    }
}

pub trait Embedder: Send + Sync {
    fn descriptor(&self) -> &EmbedderDescriptor;

    /// One vector per input text, in order, each of the descriptor's dimension.
    fn embed_texts(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;
}

pub trait Answerer: Send + Sync {
    fn descriptor(&self) -> &AnswererDescriptor;

    /// One answer per question, in order.
    fn answer_questions(
        &self,
        image: &SceneImageRef,
        questions: &[String],
    ) -> Result<Vec<String>, BackendError>;
}

pub(crate) fn check_texts(texts: &[String], what: &str) -> Result<(), BackendError> {
    if texts.is_empty() {
        return Err(BackendError::InvalidRequest(format!(
            "no {what} in request"
        )));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(BackendError::InvalidRequest(format!("{what} {i} is empty")));
    }
    Ok(())
}

/// Checks a response length against the request length.
pub(crate) fn check_cardinality(expected: usize, found: usize) -> Result<(), BackendError> {
    match found.cmp(&expected) {
        std::cmp::Ordering::Equal => Ok(()),
        std::cmp::Ordering::Less => Err(BackendError::ShortResponse { expected, found }),
        std::cmp::Ordering::Greater => Err(BackendError::Malformed(format!(
            "{found} results for {expected} inputs"
        ))),
    }
}

/// Embeds `texts` and checks cardinality and dimension of the result.
pub fn embed_checked(
    embedder: &dyn Embedder,
    texts: &[String],
) -> Result<Vec<EmbeddingVector>, BackendError> {
    let vectors = embedder.embed_texts(texts)?;
    check_cardinality(texts.len(), vectors.len())?;
    let expected = embedder.descriptor().dimension;
    if let Some((index, v)) = vectors
        .iter()
        .enumerate()
        .find(|(_, v)| v.dimension() != expected)
    {
        return Err(BackendError::Dimension {
            index,
            expected,
            found: v.dimension(),
        });
    }
    Ok(vectors)
}

/// Runs `op` over `items` split into batches of `batch_size` (a single batch
/// when `None`), with at most `parallelism` batches in flight.
///
/// Results come back in input order. The first failing batch (by position)
/// is returned as the error and no new batches start after any failure.
pub fn run_batched<T, R, E, F>(
    items: &[T],
    batch_size: Option<usize>,
    parallelism: usize,
    op: F,
) -> Result<Vec<R>, E>
where
    T: Sync,
    R: Send,
    E: Send,
    F: Fn(&[T]) -> Result<Vec<R>, E> + Sync,
{
    let size = batch_size.filter(|&b| b > 0).unwrap_or(items.len()).max(1);
    let batches: Vec<&[T]> = items.chunks(size).collect();
    if batches.len() <= 1 || parallelism <= 1 {
        let mut out = Vec::with_capacity(items.len());
        for batch in batches {
            out.extend(op(batch)?);
        }
        return Ok(out);
    }

    let next = AtomicUsize::new(0);
    let failed = AtomicBool::new(false);
    type Slot<R, E> = Option<Result<Vec<R>, E>>;
    let slots: Mutex<Vec<Slot<R, E>>> = Mutex::new((0..batches.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..parallelism.min(batches.len()) {
            scope.spawn(|| loop {
                if failed.load(Ordering::Acquire) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::AcqRel);
                let Some(batch) = batches.get(i) else { break };
                let result = op(batch);
                if result.is_err() {
                    failed.store(true, Ordering::Release);
                }
                slots.lock().unwrap()[i] = Some(result);
            });
        }
    });

    let mut out = Vec::with_capacity(items.len());
    for slot in slots.into_inner().unwrap() {
        match slot {
            Some(result) => out.extend(result?),
            // only reachable after a failure stopped the workers
            None => continue,
        }
    }
    Ok(out)
}
