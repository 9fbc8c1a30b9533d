//! Numeric core: cosine distance, the question relevance matrix, the two
//! weighting schemes, Scene Distance and the QoQ battery-quality score.
//!
//! Everything here is a pure function over immutable inputs.
//!
//! Relevance weights are normalized to unit L1 norm, so both weighting
//! schemes produce weights that sum to one and Scene Distances computed
//! under either scheme live on the same `[0, 2]` scale.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Errors raised by the metric layer.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedding has zero norm")]
    ZeroNorm,
    #[error("embedding has a non-finite entry at index {index}")]
    NonFinite { index: usize },
    #[error("embedding is empty")]
    EmptyEmbedding,
    #[error("question battery is empty")]
    EmptyBattery,
    #[error("question {index} has empty text")]
    EmptyQuestion { index: usize },
    #[error("weights need at least one question")]
    NoQuestions,
    #[error("relevance weighting needs at least 2 questions, got {0}")]
    TooFewQuestions(usize),
    #[error("degenerate battery: every question embeds identically, relevance matrix is all zero")]
    DegenerateBattery,
    #[error("{list} has {found} entries, expected {expected}")]
    LengthMismatch {
        list: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid relevance matrix: {0}")]
    InvalidMatrix(String),
    #[error("question index {index} out of range for a battery of {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("duplicate question index {0} in subset")]
    DuplicateIndex(usize),
}

/// A finite, nonzero embedding vector.
///
/// The squared norm is cached at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm_sq: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, MetricError> {
        if values.is_empty() {
            return Err(MetricError::EmptyEmbedding);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(MetricError::NonFinite { index });
        }
        let norm_sq: f64 = values.iter().map(|v| v * v).sum();
        if !norm_sq.is_finite() || norm_sq <= 0.0 {
            return Err(MetricError::ZeroNorm);
        }
        Ok(Self { values, norm_sq })
    }

    /// Builds a vector and rescales it to unit Euclidean norm.
    pub fn normalized(values: Vec<f64>) -> Result<Self, MetricError> {
        let raw = Self::new(values)?;
        let norm = raw.norm();
        Self::new(raw.values.into_iter().map(|v| v / norm).collect())
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = MetricError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        Self::new(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// Cosine distance `1 - p·q / (‖p‖‖q‖)`, clamped to `[0, 2]`.
///
/// The denominator is evaluated as `sqrt(‖p‖²‖q‖²)` so that `p == q`
/// yields exactly zero.
pub fn cosine_distance(p: &EmbeddingVector, q: &EmbeddingVector) -> Result<f64, MetricError> {
    if p.dimension() != q.dimension() {
        return Err(MetricError::DimensionMismatch {
            left: p.dimension(),
            right: q.dimension(),
        });
    }
    let dot: f64 = p.values.iter().zip(&q.values).map(|(a, b)| a * b).sum();
    let similarity = dot / (p.norm_sq * q.norm_sq).sqrt();
    Ok((1.0 - similarity).clamp(0.0, 2.0))
}

/// Content digest over an ordered list of question texts (hex SHA-256).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BatteryHash(String);

impl BatteryHash {
    const DOMAIN: &'static [u8] = b"scenediff-battery-v1\0";

    pub fn of_texts<I, S>(texts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut hasher = Sha256::new();
        hasher.update(Self::DOMAIN);
        for text in texts {
            let bytes = text.as_ref().as_bytes();
            // length prefix keeps ["ab", "c"] and ["a", "bc"] apart
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        }
        BatteryHash(hex::encode(hasher.finalize()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BatteryHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<String> for BatteryHash {
    fn from(s: String) -> Self {
        BatteryHash(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Question {
    pub text: String,
    pub embedding: EmbeddingVector,
}

/// Ordered, identity-hashed list of questions with their embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct QuestionBattery {
    questions: Vec<Question>,
    hash: BatteryHash,
}

impl QuestionBattery {
    pub fn new(questions: Vec<Question>) -> Result<Self, MetricError> {
        let first = questions.first().ok_or(MetricError::EmptyBattery)?;
        let dim = first.embedding.dimension();
        for (index, q) in questions.iter().enumerate() {
            if q.text.trim().is_empty() {
                return Err(MetricError::EmptyQuestion { index });
            }
            if q.embedding.dimension() != dim {
                return Err(MetricError::DimensionMismatch {
                    left: dim,
                    right: q.embedding.dimension(),
                });
            }
        }
        let hash = BatteryHash::of_texts(questions.iter().map(|q| q.text.as_str()));
        Ok(Self { questions, hash })
    }

    pub fn from_parts(
        texts: Vec<String>,
        embeddings: Vec<EmbeddingVector>,
    ) -> Result<Self, MetricError> {
        if texts.len() != embeddings.len() {
            return Err(MetricError::LengthMismatch {
                list: "question embeddings",
                expected: texts.len(),
                found: embeddings.len(),
            });
        }
        Self::new(
            texts
                .into_iter()
                .zip(embeddings)
                .map(|(text, embedding)| Question { text, embedding })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.questions.len()
    }

    /// Always false; a battery holds at least one question.
    pub fn is_empty(&self) -> bool {
        self.questions.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.questions[0].embedding.dimension()
    }

    pub fn questions(&self) -> &[Question] {
        &self.questions
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.questions.iter().map(|q| q.text.as_str())
    }

    pub fn hash(&self) -> &BatteryHash {
        &self.hash
    }

    /// Sub-battery holding the questions at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self, MetricError> {
        check_indices(indices, self.len())?;
        Self::new(indices.iter().map(|&i| self.questions[i].clone()).collect())
    }
}

fn check_indices(indices: &[usize], len: usize) -> Result<(), MetricError> {
    let mut seen = vec![false; len];
    for &index in indices {
        if index >= len {
            return Err(MetricError::IndexOutOfRange { index, len });
        }
        if std::mem::replace(&mut seen[index], true) {
            return Err(MetricError::DuplicateIndex(index));
        }
    }
    Ok(())
}

/// Symmetric, zero-diagonal matrix of pairwise question cosine distances.
///
/// [`RelevanceMatrix::from_rows`] accepts any finite nonnegative entries, so
/// rescaled or hand-built matrices can be weighted too.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceMatrix {
    size: usize,
    entries: Vec<f64>,
}

impl RelevanceMatrix {
    /// Validates a dense row-major matrix.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, MetricError> {
        let size = rows.len();
        if size == 0 {
            return Err(MetricError::EmptyBattery);
        }
        let mut entries = Vec::with_capacity(size * size);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != size {
                return Err(MetricError::InvalidMatrix(format!(
                    "row {i} has {} entries, expected {size}",
                    row.len()
                )));
            }
            entries.extend_from_slice(row);
        }
        let matrix = Self { size, entries };
        for i in 0..size {
            if matrix.get(i, i) != 0.0 {
                return Err(MetricError::InvalidMatrix(format!(
                    "diagonal entry {i} is nonzero"
                )));
            }
            for j in 0..size {
                let v = matrix.get(i, j);
                if !(v.is_finite() && v >= 0.0) {
                    return Err(MetricError::InvalidMatrix(format!(
                        "entry ({i}, {j}) = {v} is not a finite nonnegative number"
                    )));
                }
                if v != matrix.get(j, i) {
                    return Err(MetricError::InvalidMatrix(format!(
                        "entries ({i}, {j}) and ({j}, {i}) differ"
                    )));
                }
            }
        }
        Ok(matrix)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.size + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.size..(i + 1) * self.size]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks_exact(self.size)
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    /// Principal submatrix over `indices`, in the given order.
    pub fn submatrix(&self, indices: &[usize]) -> Result<Self, MetricError> {
        check_indices(indices, self.size)?;
        if indices.is_empty() {
            return Err(MetricError::EmptyBattery);
        }
        let size = indices.len();
        let mut entries = Vec::with_capacity(size * size);
        for &i in indices {
            entries.extend(indices.iter().map(|&j| self.get(i, j)));
        }
        Ok(Self { size, entries })
    }
}

/// Pairwise question distances; the diagonal is set to zero, not computed,
/// and the lower triangle mirrors the upper.
pub fn build_relevance_matrix(battery: &QuestionBattery) -> Result<RelevanceMatrix, MetricError> {
    let embeddings: Vec<&EmbeddingVector> =
        battery.questions().iter().map(|q| &q.embedding).collect();
    relevance_matrix_from_embeddings(&embeddings)
}

pub fn relevance_matrix_from_embeddings(
    embeddings: &[&EmbeddingVector],
) -> Result<RelevanceMatrix, MetricError> {
    let size = embeddings.len();
    if size == 0 {
        return Err(MetricError::EmptyBattery);
    }
    let mut entries = vec![0.0; size * size];
    for i in 0..size {
        for j in (i + 1)..size {
            let d = cosine_distance(embeddings[i], embeddings[j])?;
            entries[i * size + j] = d;
            entries[j * size + i] = d;
        }
    }
    Ok(RelevanceMatrix { size, entries })
}

/// Weighting scheme for combining per-question distances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// Every question weighs `1/m`.
    Uniform,
    /// Weight proportional to summed distance from the other questions.
    #[default]
    Relevance,
}

impl fmt::Display for Weighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Weighting::Uniform => "uniform",
            Weighting::Relevance => "relevance",
        })
    }
}

impl FromStr for Weighting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(Weighting::Uniform),
            "relevance" => Ok(Weighting::Relevance),
            other => Err(format!(
                "unknown weighting {other:?}, expected uniform or relevance"
            )),
        }
    }
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    weights: Vec<f64>,
    scheme: Weighting,
}

impl WeightVector {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn scheme(&self) -> Weighting {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn uniform_weights(m: usize) -> Result<WeightVector, MetricError> {
    if m == 0 {
        return Err(MetricError::NoQuestions);
    }
    Ok(WeightVector {
        weights: vec![1.0 / m as f64; m],
        scheme: Weighting::Uniform,
    })
}

/// Relevance matrices whose entries sum to at most this are treated as
/// all-zero; anything smaller is round-off between parallel embeddings.
pub const DEGENERATE_TOTAL: f64 = 1e-12;

/// Row sums of the relevance matrix, L1-normalized.
pub fn relevance_weights(m_rel: &RelevanceMatrix) -> Result<WeightVector, MetricError> {
    if m_rel.size() < 2 {
        return Err(MetricError::TooFewQuestions(m_rel.size()));
    }
    let sums = m_rel.row_sums();
    let total: f64 = sums.iter().sum();
    if total.is_nan() || total <= DEGENERATE_TOTAL {
        return Err(MetricError::DegenerateBattery);
    }
    Ok(WeightVector {
        weights: sums.into_iter().map(|s| s / total).collect(),
        scheme: Weighting::Relevance,
    })
}

pub fn weights_for(
    scheme: Weighting,
    m_rel: &RelevanceMatrix,
) -> Result<WeightVector, MetricError> {
    match scheme {
        Weighting::Uniform => uniform_weights(m_rel.size()),
        Weighting::Relevance => relevance_weights(m_rel),
    }
}

/// Per-question answer distances and their weighted sum.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneDistance {
    pub per_question: Vec<f64>,
    pub value: f64,
}

pub fn scene_distance(
    current: &[EmbeddingVector],
    reference: &[EmbeddingVector],
    weights: &WeightVector,
) -> Result<SceneDistance, MetricError> {
    let m = weights.len();
    for (list, found) in [
        ("current answers", current.len()),
        ("reference answers", reference.len()),
    ] {
        if found != m {
            return Err(MetricError::LengthMismatch {
                list,
                expected: m,
                found,
            });
        }
    }
    let per_question = current
        .iter()
        .zip(reference)
        .map(|(a, r)| cosine_distance(a, r))
        .collect::<Result<Vec<_>, _>>()?;
    let value = weighted_sum(&per_question, weights.weights());
    Ok(SceneDistance {
        per_question,
        value,
    })
}

pub(crate) fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(d, w)| d * w).sum()
}

/// Sum of every relevance-matrix entry.
pub fn qoq(m_rel: &RelevanceMatrix) -> f64 {
    m_rel.entries.iter().sum()
}
