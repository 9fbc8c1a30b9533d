//! Question-subset experiments and battery selection.
//!
//! [`run_subset_experiment`] samples many fixed-size question subsets from a
//! pool, scores each under both weighting schemes and reports the variance of
//! the Scene Distance per QoQ bin. [`greedy_select_battery`] picks a subset
//! with high QoQ.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::metric::{
    build_relevance_matrix, cosine_distance, qoq, relevance_weights, weighted_sum, EmbeddingVector,
    MetricError, QuestionBattery, RelevanceMatrix,
};

pub const DEFAULT_SUBSET_SIZE: usize = 10;
pub const DEFAULT_NUM_SETS: usize = 10_000;
pub const DEFAULT_BIN_DIVISIONS: usize = 20;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("subset size {k} must be in 1..={pool}")]
    SubsetSize { k: usize, pool: usize },
    #[error("number of sets must be at least 1")]
    NoSets,
    #[error("bin width must be a positive finite number, got {0}")]
    BinWidth(f64),
    #[error("bin divisions must be at least 1")]
    BinDivisions,
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// How QoQ bins are sized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BinWidth {
    /// Observed QoQ range divided into this many equal bins.
    Divisions(usize),
    Fixed(f64),
}

impl Default for BinWidth {
    fn default() -> Self {
        BinWidth::Divisions(DEFAULT_BIN_DIVISIONS)
    }
}

#[derive(Debug, Clone)]
pub struct SubsetExperimentSpec {
    pub pool: QuestionBattery,
    pub subset_size: usize,
    pub num_sets: usize,
    pub bin_width: BinWidth,
    pub rng_seed: u64,
}

impl SubsetExperimentSpec {
    pub fn new(pool: QuestionBattery) -> Self {
        Self {
            pool,
            subset_size: DEFAULT_SUBSET_SIZE,
            num_sets: DEFAULT_NUM_SETS,
            bin_width: BinWidth::default(),
            rng_seed: 0,
        }
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        if self.subset_size == 0 || self.subset_size > self.pool.len() {
            return Err(AnalysisError::SubsetSize {
                k: self.subset_size,
                pool: self.pool.len(),
            });
        }
        if self.num_sets == 0 {
            return Err(AnalysisError::NoSets);
        }
        match self.bin_width {
            BinWidth::Fixed(w) if !(w > 0.0 && w.is_finite()) => Err(AnalysisError::BinWidth(w)),
            BinWidth::Divisions(0) => Err(AnalysisError::BinDivisions),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetRow {
    pub set_id: usize,
    /// Pool indices, ascending.
    pub indices: Vec<usize>,
    pub qoq: f64,
    pub sd_uniform: f64,
    /// `None` when the subset is degenerate (all-zero relevance matrix).
    pub sd_relevance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceBin {
    pub qoq_lo: f64,
    pub qoq_hi: f64,
    pub count: usize,
    /// Population variance; `None` for an empty bin.
    pub variance_uniform: Option<f64>,
    /// Population variance over non-degenerate rows.
    pub variance_relevance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentDiagnostics {
    pub degenerate_rows: usize,
    pub qoq_min: f64,
    pub qoq_max: f64,
    pub bin_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedVarianceResult {
    pub bins: Vec<VarianceBin>,
    pub rows: Vec<SubsetRow>,
    pub diagnostics: ExperimentDiagnostics,
}

impl BinnedVarianceResult {
    pub fn occupied_bins(&self) -> impl Iterator<Item = &VarianceBin> {
        self.bins.iter().filter(|b| b.count > 0)
    }
}

/// Draws `num_sets` subsets, each sampled without replacement.
pub fn sample_subsets(pool_size: usize, k: usize, num_sets: usize, seed: u64) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..num_sets)
        .map(|_| {
            let mut idx = rand::seq::index::sample(&mut rng, pool_size, k).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect()
}

/// `answers` are aligned with the pool: `current[i]` and `reference[i]`
/// answer pool question `i`.
pub fn run_subset_experiment(
    spec: &SubsetExperimentSpec,
    current: &[EmbeddingVector],
    reference: &[EmbeddingVector],
) -> Result<BinnedVarianceResult, AnalysisError> {
    spec.validate()?;
    let m = spec.pool.len();
    for (list, found) in [
        ("current answers", current.len()),
        ("reference answers", reference.len()),
    ] {
        if found != m {
            return Err(MetricError::LengthMismatch {
                list,
                expected: m,
                found,
            }
            .into());
        }
    }
    let pool_matrix = build_relevance_matrix(&spec.pool)?;
    let distances = current
        .iter()
        .zip(reference)
        .map(|(a, r)| cosine_distance(a, r))
        .collect::<Result<Vec<_>, _>>()?;

    let subsets = sample_subsets(m, spec.subset_size, spec.num_sets, spec.rng_seed);
    let rows = subsets
        .into_par_iter()
        .enumerate()
        .map(|(set_id, indices)| score_subset(set_id, indices, &pool_matrix, &distances))
        .collect::<Result<Vec<_>, _>>()?;

    Ok(bin_rows(rows, spec.bin_width))
}

fn score_subset(
    set_id: usize,
    indices: Vec<usize>,
    pool_matrix: &RelevanceMatrix,
    distances: &[f64],
) -> Result<SubsetRow, MetricError> {
    let sub = pool_matrix.submatrix(&indices)?;
    let d: Vec<f64> = indices.iter().map(|&i| distances[i]).collect();
    let sd_uniform = d.iter().sum::<f64>() / d.len() as f64;
    let sd_relevance = match relevance_weights(&sub) {
        Ok(w) => Some(weighted_sum(&d, w.weights())),
        Err(MetricError::DegenerateBattery | MetricError::TooFewQuestions(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SubsetRow {
        set_id,
        indices,
        qoq: qoq(&sub),
        sd_uniform,
        sd_relevance,
    })
}

/// Groups rows into QoQ bins anchored at the smallest observed QoQ.
/// The top edge of the last bin is inclusive.
pub fn bin_rows(mut rows: Vec<SubsetRow>, width: BinWidth) -> BinnedVarianceResult {
    rows.sort_by_key(|r| r.set_id);
    let qoq_min = rows.iter().map(|r| r.qoq).fold(f64::INFINITY, f64::min);
    let qoq_max = rows.iter().map(|r| r.qoq).fold(f64::NEG_INFINITY, f64::max);
    let range = qoq_max - qoq_min;
    let (bin_width, count) = match width {
        BinWidth::Fixed(w) => (w, ((range / w).floor() as usize + 1).max(1)),
        BinWidth::Divisions(n) if range > 0.0 => (range / n as f64, n),
        // all rows share one QoQ
        BinWidth::Divisions(_) => (1.0, 1),
    };

    let mut members: Vec<Vec<&SubsetRow>> = vec![Vec::new(); count];
    for row in &rows {
        let slot = (((row.qoq - qoq_min) / bin_width).floor() as usize).min(count - 1);
        members[slot].push(row);
    }
    let bins = members
        .iter()
        .enumerate()
        .map(|(i, rows)| VarianceBin {
            qoq_lo: qoq_min + i as f64 * bin_width,
            qoq_hi: qoq_min + (i + 1) as f64 * bin_width,
            count: rows.len(),
            variance_uniform: population_variance(rows.iter().map(|r| r.sd_uniform)),
            variance_relevance: population_variance(rows.iter().filter_map(|r| r.sd_relevance)),
        })
        .collect();
    let degenerate_rows = rows.iter().filter(|r| r.sd_relevance.is_none()).count();
    BinnedVarianceResult {
        bins,
        rows,
        diagnostics: ExperimentDiagnostics {
            degenerate_rows,
            qoq_min,
            qoq_max,
            bin_width,
        },
    }
}

/// Two-pass population variance; `None` for no values.
pub fn population_variance(values: impl Iterator<Item = f64> + Clone) -> Option<f64> {
    let n = values.clone().count();
    if n == 0 {
        return None;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    Some(values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64)
}

/// Greedy QoQ maximization over a relevance matrix.
///
/// Starts from the most distant pair, then repeatedly adds the question with
/// the largest summed distance to those already chosen. Ties go to the lower
/// index. Returns ascending indices.
pub fn greedy_select_indices(
    m_rel: &RelevanceMatrix,
    k: usize,
) -> Result<Vec<usize>, AnalysisError> {
    let m = m_rel.size();
    if k == 0 || k > m {
        return Err(AnalysisError::SubsetSize { k, pool: m });
    }
    if k == 1 {
        return Ok(vec![0]);
    }
    let mut best = (0, 1, f64::NEG_INFINITY);
    for i in 0..m {
        for j in (i + 1)..m {
            if m_rel.get(i, j) > best.2 {
                best = (i, j, m_rel.get(i, j));
            }
        }
    }
    let mut chosen = vec![best.0, best.1];
    let mut in_set = vec![false; m];
    in_set[best.0] = true;
    in_set[best.1] = true;
    // gain[c] = summed distance from c to the chosen set
    let mut gain: Vec<f64> = (0..m)
        .map(|c| m_rel.get(c, best.0) + m_rel.get(c, best.1))
        .collect();
    while chosen.len() < k {
        let mut pick: Option<usize> = None;
        for c in (0..m).filter(|&c| !in_set[c]) {
            if pick.map_or(true, |p| gain[c] > gain[p]) {
                pick = Some(c);
            }
        }
        let c = pick.expect("k <= m leaves a candidate");
        in_set[c] = true;
        chosen.push(c);
        for (o, g) in gain.iter_mut().enumerate() {
            *g += m_rel.get(o, c);
        }
    }
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn greedy_select_battery(
    pool: &QuestionBattery,
    k: usize,
) -> Result<QuestionBattery, AnalysisError> {
    let indices = greedy_select_indices(&build_relevance_matrix(pool)?, k)?;
    Ok(pool.subset(&indices)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentFiles {
    pub subsets: PathBuf,
    pub bins: PathBuf,
}

pub const SUBSETS_CSV: &str = "subsets.csv";
pub const BINS_CSV: &str = "bins.csv";

/// Writes `subsets.csv` (one row per sampled set) and `bins.csv` (occupied
/// bins only) into `out_dir`.
pub fn emit_experiment_csv(
    result: &BinnedVarianceResult,
    out_dir: &Path,
) -> Result<ExperimentFiles, AnalysisError> {
    fs::create_dir_all(out_dir).map_err(|source| AnalysisError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let files = ExperimentFiles {
        subsets: out_dir.join(SUBSETS_CSV),
        bins: out_dir.join(BINS_CSV),
    };
    let csv_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| AnalysisError::Csv { path, source }
    };

    let mut w = csv::Writer::from_path(&files.subsets).map_err(csv_err(&files.subsets))?;
    w.write_record(["set_id", "indices", "qoq", "sd_uniform", "sd_relevance"])
        .map_err(csv_err(&files.subsets))?;
    for r in &result.rows {
        let indices = r
            .indices
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(";");
        w.write_record([
            r.set_id.to_string(),
            indices,
            r.qoq.to_string(),
            r.sd_uniform.to_string(),
            r.sd_relevance.map(|v| v.to_string()).unwrap_or_default(),
        ])
        .map_err(csv_err(&files.subsets))?;
    }
    w.flush().map_err(|source| AnalysisError::Io {
        path: files.subsets.clone(),
        source,
    })?;

    let mut w = csv::Writer::from_path(&files.bins).map_err(csv_err(&files.bins))?;
    w.write_record(["qoq_lo", "qoq_hi", "count", "var_uniform", "var_relevance"])
        .map_err(csv_err(&files.bins))?;
    for b in result.occupied_bins() {
        let fmt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([
            b.qoq_lo.to_string(),
            b.qoq_hi.to_string(),
            b.count.to_string(),
            fmt(b.variance_uniform),
            fmt(b.variance_relevance),
        ])
        .map_err(csv_err(&files.bins))?;
    }
    w.flush().map_err(|source| AnalysisError::Io {
        path: files.bins.clone(),
        source,
    })?;
    Ok(files)
}
