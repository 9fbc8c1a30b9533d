//! End-to-end patrol flow: ask the battery about an image, embed the
//! answers, compare against the spot's stored reference and report.

use std::path::PathBuf;
use std::sync::Arc;

use chrono::{DateTime, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::backends::{
    embed_checked, run_batched, Answerer, AnswererDescriptor, BackendError, Embedder,
    EmbedderDescriptor, SceneImageRef,
};
use crate::metric::{
    build_relevance_matrix, qoq, scene_distance, weights_for, BatteryHash, EmbeddingVector,
    MetricError, QuestionBattery, RelevanceMatrix, WeightVector, Weighting,
};
use crate::store::{ReferenceEntry, ReferenceRecord, ReferenceStore, StoreError, SCHEMA_VERSION};

pub const DEFAULT_PARALLELISM: usize = 4;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("spot {spot_id:?}: backend failure: {source}")]
    Backend {
        spot_id: String,
        #[source]
        source: BackendError,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(
        "spot {spot_id:?}: reference embedded with {stored:?} (dimension {stored_dimension}), \
         current embedder is {current:?} (dimension {current_dimension})"
    )]
    EmbedderMismatch {
        spot_id: String,
        stored: String,
        stored_dimension: usize,
        current: String,
        current_dimension: usize,
    },
    #[error("invalid patrol configuration: {0}")]
    InvalidConfig(String),
}

/// Embeds question texts and assembles a battery.
pub fn embed_battery(
    texts: Vec<String>,
    embedder: &dyn Embedder,
) -> Result<QuestionBattery, PipelineError> {
    if texts.is_empty() {
        return Err(MetricError::EmptyBattery.into());
    }
    let vectors = embed_checked(embedder, &texts).map_err(|source| PipelineError::Backend {
        spot_id: String::new(),
        source,
    })?;
    Ok(QuestionBattery::from_parts(texts, vectors)?)
}

#[derive(Debug, Clone)]
pub struct PatrolConfig {
    pub battery: QuestionBattery,
    pub weighting: Weighting,
    /// `changed` iff SD is strictly greater than this.
    pub threshold: Option<f64>,
    pub store_dir: PathBuf,
    /// Max backend requests in flight for one call.
    pub parallelism: usize,
    /// Max questions per backend request; `None` sends the whole battery at once.
    pub batch_size: Option<usize>,
}

impl PatrolConfig {
    pub fn new(battery: QuestionBattery, store_dir: impl Into<PathBuf>) -> Self {
        Self {
            battery,
            weighting: Weighting::Relevance,
            threshold: None,
            store_dir: store_dir.into(),
            parallelism: DEFAULT_PARALLELISM,
            batch_size: None,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if let Some(t) = self.threshold {
            if !(t > 0.0 && t <= 2.0) {
                return Err(PipelineError::InvalidConfig(format!(
                    "threshold {t} outside (0, 2]"
                )));
            }
        }
        if self.parallelism == 0 {
            return Err(PipelineError::InvalidConfig(
                "parallelism must be at least 1".into(),
            ));
        }
        if self.batch_size == Some(0) {
            return Err(PipelineError::InvalidConfig(
                "batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Contributor {
    pub question: String,
    pub reference_answer: String,
    pub current_answer: String,
    /// `w_k · D_c(a_k, a_ref_k)`
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangeVerdict {
    pub scene_distance: f64,
    pub threshold: f64,
    pub changed: bool,
    /// Every question, largest contribution first; ties keep battery order.
    pub top_contributors: Vec<Contributor>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub reference_created_at: DateTime<Utc>,
    pub current_image: String,
    pub current_captured_at: DateTime<Utc>,
    pub embedder: EmbedderDescriptor,
    pub answerer: AnswererDescriptor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneDistanceReport {
    pub spot_id: String,
    pub battery_hash: BatteryHash,
    pub questions: Vec<String>,
    pub reference_answers: Vec<String>,
    pub current_answers: Vec<String>,
    pub per_question_distances: Vec<f64>,
    pub weights: WeightVector,
    pub scene_distance: f64,
    pub qoq: f64,
    pub provenance: Provenance,
    pub verdict: Option<ChangeVerdict>,
}

impl SceneDistanceReport {
    pub fn contributions(&self) -> Vec<f64> {
        self.per_question_distances
            .iter()
            .zip(self.weights.weights())
            .map(|(d, w)| d * w)
            .collect()
    }

    /// The machine-readable report document.
    pub fn to_document(&self) -> ReportDocument<'_> {
        ReportDocument {
            spot_id: &self.spot_id,
            battery_hash: &self.battery_hash,
            weighting: self.weights.scheme(),
            sd: self.scene_distance,
            qoq: self.qoq,
            per_question: (0..self.questions.len())
                .map(|k| QuestionRow {
                    question: &self.questions[k],
                    d: self.per_question_distances[k],
                    w: self.weights.weights()[k],
                    contribution: self.per_question_distances[k] * self.weights.weights()[k],
                    reference_answer: &self.reference_answers[k],
                    current_answer: &self.current_answers[k],
                })
                .collect(),
            verdict: self.verdict.as_ref().map(|v| VerdictDoc {
                threshold: v.threshold,
                changed: v.changed,
            }),
            provenance: &self.provenance,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct ReportDocument<'a> {
    pub spot_id: &'a str,
    pub battery_hash: &'a BatteryHash,
    pub weighting: Weighting,
    pub sd: f64,
    pub qoq: f64,
    pub per_question: Vec<QuestionRow<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerdictDoc>,
    pub provenance: &'a Provenance,
}

#[derive(Debug, Serialize)]
pub struct QuestionRow<'a> {
    pub question: &'a str,
    pub d: f64,
    pub w: f64,
    pub contribution: f64,
    pub reference_answer: &'a str,
    pub current_answer: &'a str,
}

#[derive(Debug, Serialize)]
pub struct VerdictDoc {
    pub threshold: f64,
    pub changed: bool,
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub record: ReferenceRecord,
    pub path: PathBuf,
    pub replaced: bool,
}

/// Current-image answers and embeddings alongside the stored reference.
#[derive(Debug, Clone)]
pub struct AnswerPair {
    pub reference: ReferenceRecord,
    pub current_answers: Vec<String>,
    pub current_vectors: Vec<EmbeddingVector>,
}

pub struct PatrolPipeline {
    config: PatrolConfig,
    embedder: Arc<dyn Embedder>,
    answerer: Arc<dyn Answerer>,
    store: ReferenceStore,
    relevance: RelevanceMatrix,
}

impl PatrolPipeline {
    pub fn new(
        config: PatrolConfig,
        embedder: Arc<dyn Embedder>,
        answerer: Arc<dyn Answerer>,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        if config.battery.dimension() != embedder.descriptor().dimension {
            return Err(PipelineError::InvalidConfig(format!(
                "battery embeddings have dimension {}, embedder {}",
                config.battery.dimension(),
                embedder.descriptor().dimension
            )));
        }
        let relevance = build_relevance_matrix(&config.battery)?;
        let store = ReferenceStore::new(config.store_dir.clone());
        Ok(Self {
            config,
            embedder,
            answerer,
            store,
            relevance,
        })
    }

    pub fn config(&self) -> &PatrolConfig {
        &self.config
    }

    pub fn store(&self) -> &ReferenceStore {
        &self.store
    }

    pub fn relevance_matrix(&self) -> &RelevanceMatrix {
        &self.relevance
    }

    fn backend_err(spot_id: &str) -> impl Fn(BackendError) -> PipelineError + '_ {
        move |source| PipelineError::Backend {
            spot_id: spot_id.to_string(),
            source,
        }
    }

    /// Answers every battery question about `image` and embeds the answers.
    /// Any backend failure aborts the whole call.
    fn ask_and_embed(
        &self,
        spot_id: &str,
        image: &SceneImageRef,
    ) -> Result<(Vec<String>, Vec<EmbeddingVector>), PipelineError> {
        let questions: Vec<String> = self.config.battery.texts().map(str::to_string).collect();
        let answers = run_batched(
            &questions,
            self.config.batch_size,
            self.config.parallelism,
            |batch| {
                let out = self.answerer.answer_questions(image, batch)?;
                crate::backends::check_cardinality(batch.len(), out.len())?;
                Ok(out)
            },
        )
        .map_err(Self::backend_err(spot_id))?;
        let vectors = run_batched(
            &answers,
            self.config.batch_size,
            self.config.parallelism,
            |batch| embed_checked(self.embedder.as_ref(), batch),
        )
        .map_err(Self::backend_err(spot_id))?;
        Ok((answers, vectors))
    }

    pub fn register_reference(
        &self,
        spot_id: &str,
        image: &SceneImageRef,
    ) -> Result<Registration, PipelineError> {
        crate::store::validate_spot_id(spot_id)?;
        let (answers, vectors) = self.ask_and_embed(spot_id, image)?;
        let record = ReferenceRecord {
            schema_version: SCHEMA_VERSION,
            spot_id: spot_id.to_string(),
            battery_hash: self.config.battery.hash().clone(),
            embedder: self.embedder.descriptor().clone(),
            answerer: self.answerer.descriptor().clone(),
            created_at: Utc::now(),
            entries: self
                .config
                .battery
                .texts()
                .zip(answers)
                .zip(vectors)
                .map(|((question, answer), vector)| ReferenceEntry {
                    question: question.to_string(),
                    answer,
                    vector,
                })
                .collect(),
        };
        let saved = self.store.save(&record)?;
        Ok(Registration {
            record,
            path: saved.path,
            replaced: saved.replaced,
        })
    }

    /// Loads the spot's reference and gathers the current image's answers.
    pub fn collect_answers(
        &self,
        spot_id: &str,
        image: &SceneImageRef,
    ) -> Result<AnswerPair, PipelineError> {
        let reference = self.store.load(spot_id, self.config.battery.hash())?;
        let current = self.embedder.descriptor();
        if reference.embedder.name != current.name
            || reference.embedder.dimension != current.dimension
        {
            return Err(PipelineError::EmbedderMismatch {
                spot_id: spot_id.to_string(),
                stored: reference.embedder.name.clone(),
                stored_dimension: reference.embedder.dimension,
                current: current.name.clone(),
                current_dimension: current.dimension,
            });
        }
        let (current_answers, current_vectors) = self.ask_and_embed(spot_id, image)?;
        Ok(AnswerPair {
            reference,
            current_answers,
            current_vectors,
        })
    }

    pub fn score_scene(
        &self,
        spot_id: &str,
        image: &SceneImageRef,
    ) -> Result<SceneDistanceReport, PipelineError> {
        let pair = self.collect_answers(spot_id, image)?;
        let weights = weights_for(self.config.weighting, &self.relevance)?;
        let sd = scene_distance(&pair.current_vectors, &pair.reference.vectors(), &weights)?;

        let mut report = SceneDistanceReport {
            spot_id: spot_id.to_string(),
            battery_hash: self.config.battery.hash().clone(),
            questions: self.config.battery.texts().map(str::to_string).collect(),
            reference_answers: pair
                .reference
                .entries
                .iter()
                .map(|e| e.answer.clone())
                .collect(),
            current_answers: pair.current_answers,
            per_question_distances: sd.per_question,
            weights,
            scene_distance: sd.value,
            qoq: qoq(&self.relevance),
            provenance: Provenance {
                reference_created_at: pair.reference.created_at,
                current_image: image.locator.clone(),
                current_captured_at: image.captured_at,
                embedder: self.embedder.descriptor().clone(),
                answerer: self.answerer.descriptor().clone(),
            },
            verdict: None,
        };
        report.verdict = self.config.threshold.map(|t| verdict(&report, t));
        Ok(report)
    }
}

fn verdict(report: &SceneDistanceReport, threshold: f64) -> ChangeVerdict {
    let mut top_contributors: Vec<Contributor> = report
        .contributions()
        .into_iter()
        .enumerate()
        .map(|(k, contribution)| Contributor {
            question: report.questions[k].clone(),
            reference_answer: report.reference_answers[k].clone(),
            current_answer: report.current_answers[k].clone(),
            contribution,
        })
        .collect();
    // stable sort keeps battery order among equal contributions
    top_contributors.sort_by(|a, b| b.contribution.total_cmp(&a.contribution));
    ChangeVerdict {
        scene_distance: report.scene_distance,
        threshold,
        changed: report.scene_distance > threshold,
        top_contributors,
    }
}
