//! Semantic scene-change scoring.
//!
//! A fixed battery of questions is asked about a reference image and a
//! current image. The answers are embedded, compared question by question
//! with cosine distance, and aggregated into a single Scene Distance. Weights
//! either treat every question equally or favour questions whose meaning is
//! far from the rest of the battery, so near-duplicate phrasings do not
//! dominate the score.
//!
//! ```
//! use scenediff::metric::{
//!     build_relevance_matrix, qoq, relevance_weights, scene_distance, EmbeddingVector,
//!     QuestionBattery,
//! };
//!
//! let v = |x: &[f64]| EmbeddingVector::new(x.to_vec()).unwrap();
//! let battery = QuestionBattery::from_parts(
//!     vec!["what is on it?".into(), "what is on the table?".into(), "how many people?".into()],
//!     vec![v(&[1.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])],
//! )
//! .unwrap();
//! let m_rel = build_relevance_matrix(&battery).unwrap();
//! assert_eq!(qoq(&m_rel), 4.0);
//!
//! let w = relevance_weights(&m_rel).unwrap();
//! assert_eq!(w.weights(), &[0.25, 0.25, 0.5]);
//!
//! let reference = vec![v(&[1.0, 0.0]), v(&[1.0, 0.0]), v(&[1.0, 0.0])];
//! let current = vec![v(&[1.0, 0.0]), v(&[1.0, 0.0]), v(&[0.0, 1.0])];
//! let sd = scene_distance(&current, &reference, &w).unwrap();
//! assert_eq!(sd.value, 0.5);
//! ```

pub mod analysis;
pub mod backends;
pub mod metric;
pub mod pipeline;
pub mod store;

pub use metric::{EmbeddingVector, QuestionBattery, RelevanceMatrix, WeightVector, Weighting};
