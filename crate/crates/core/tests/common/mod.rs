//! Naive reference implementations and synthetic fixtures shared by the
//! integration tests. Nothing here calls into the library's metric code.

#![allow(dead_code)]

use rand::Rng;
use rand_distr::StandardNormal;
use scenediff::backends::MockEmbedder;
use scenediff::EmbeddingVector;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// `1 - a.b / (|a| |b|)`, clamped to `[0, 2]`.
pub fn naive_cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = 1.0 - dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt());
    d.clamp(0.0, 2.0)
}

pub fn naive_matrix(vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let m = vectors.len();
    let mut out = vec![vec![0.0; m]; m];
    for i in 0..m {
        for j in 0..m {
            if i != j {
                out[i][j] = naive_cosine(&vectors[i], &vectors[j]);
            }
        }
    }
    out
}

pub fn naive_qoq(matrix: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for row in matrix {
        for v in row {
            s += v;
        }
    }
    s
}

pub fn naive_relevance_weights(matrix: &[Vec<f64>]) -> Vec<f64> {
    let total = naive_qoq(matrix);
    matrix
        .iter()
        .map(|row| {
            let mut r = 0.0;
            for v in row {
                r += v;
            }
            r / total
        })
        .collect()
}

pub fn naive_sd(current: &[Vec<f64>], reference: &[Vec<f64>], weights: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..weights.len() {
        s += weights[k] * naive_cosine(&current[k], &reference[k]);
    }
    s
}

pub fn naive_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Best QoQ over all k-subsets of a matrix, with one maximizing subset.
pub fn exhaustive_best_qoq(matrix: &[Vec<f64>], k: usize) -> (f64, Vec<usize>) {
    fn walk(
        matrix: &[Vec<f64>],
        k: usize,
        start: usize,
        chosen: &mut Vec<usize>,
        best: &mut (f64, Vec<usize>),
    ) {
        if chosen.len() == k {
            let mut s = 0.0;
            for &i in chosen.iter() {
                for &j in chosen.iter() {
                    s += matrix[i][j];
                }
            }
            if s > best.0 {
                *best = (s, chosen.clone());
            }
            return;
        }
        for i in start..matrix.len() {
            chosen.push(i);
            walk(matrix, k, i + 1, chosen, best);
            chosen.pop();
        }
    }
    let mut best = (f64::NEG_INFINITY, Vec::new());
    walk(matrix, k, 0, &mut Vec::new(), &mut best);
    best
}

pub fn subset_qoq(matrix: &[Vec<f64>], indices: &[usize]) -> f64 {
    let mut s = 0.0;
    for &i in indices {
        for &j in indices {
            s += matrix[i][j];
        }
    }
    s
}

pub fn random_raw(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if dot(&v, &v) > 1e-6 {
            return v;
        }
    }
}

pub fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn ev(v: Vec<f64>) -> EmbeddingVector {
    EmbeddingVector::new(v).expect("valid test vector")
}

/// A unit vector at cosine distance `t` from unit vector `r`, built from the
/// component of `noise` orthogonal to `r`.
pub fn at_distance(r: &[f64], noise: &[f64], t: f64) -> Vec<f64> {
    let proj = dot(noise, r);
    let u = unit(noise.iter().zip(r).map(|(n, ri)| n - proj * ri).collect());
    let c = 1.0 - t;
    let s = (1.0 - c * c).max(0.0).sqrt();
    r.iter().zip(&u).map(|(ri, ui)| c * ri + s * ui).collect()
}

/// Synthetic pool for the variance experiment: paraphrase families plus
/// distinct singleton questions, with answer pairs whose divergence is set
/// per family.
pub struct VariancePool {
    pub texts: Vec<String>,
    pub questions: Vec<Vec<f64>>,
    pub reference: Vec<Vec<f64>>,
    pub current: Vec<Vec<f64>>,
}

pub fn variance_pool(dim: usize, seed: u64) -> VariancePool {
    use rand::SeedableRng;
    let mock = MockEmbedder::new(dim, seed);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let levels = [0.1, 0.5, 0.9, 1.3];
    let mut texts = Vec::new();
    let mut questions = Vec::new();
    let mut targets = Vec::new();
    for (f, level) in levels.iter().enumerate() {
        let base = mock.vector_for(&format!("family {f}: what is on the table?"));
        for j in 0..5 {
            let text = format!("family {f} paraphrase {j}: what is on the table?");
            let jitter = mock.vector_for(&format!("{text} #jitter"));
            let q = base
                .values()
                .iter()
                .zip(jitter.values())
                .map(|(b, n)| b + 0.15 * n)
                .collect();
            questions.push(unit(q));
            texts.push(text);
            targets.push(level + rng.sample::<f64, _>(StandardNormal) * 0.02);
        }
    }
    for s in 0..5 {
        let text = format!("distinct question {s}: is the light on?");
        questions.push(mock.vector_for(&text).into_values());
        texts.push(text);
        targets.push(0.7 + rng.sample::<f64, _>(StandardNormal) * 0.02);
    }
    let mut reference = Vec::new();
    let mut current = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        let r = mock
            .vector_for(&format!("reference answer {i}"))
            .into_values();
        let n = mock
            .vector_for(&format!("current answer {i}"))
            .into_values();
        current.push(at_distance(&r, &n, *t));
        reference.push(r);
    }
    VariancePool {
        texts,
        questions,
        reference,
        current,
    }
}
