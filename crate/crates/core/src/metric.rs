//! Cosine similarity over a batch and online hard-pair mining.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::matrix::{dot, norm, Matrix};
use crate::par;

/// Rows below this L2 norm cannot be normalized.
pub const MIN_NORM: f64 = 1e-12;

/// Default mining margin.
pub const DEFAULT_LAMBDA: f64 = 0.2;

/// Maps string labels to dense ids in first-appearance order.
pub fn label_ids<S: AsRef<str>>(labels: &[S]) -> Vec<usize> {
    let mut ids = HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = ids.len();
            *ids.entry(l.as_ref()).or_insert(next)
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct SimilarityBundle {
    /// `B x d`, rows of unit L2 norm.
    pub unit_embeddings: Matrix,
    /// L2 norms of the raw rows, kept for the backward pass.
    pub norms: Vec<f64>,
    /// `B x B` cosine similarities.
    pub sim: Matrix,
    pub labels: Vec<usize>,
}

impl SimilarityBundle {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Unit-sphere Euclidean distance `sqrt(2 - 2 S_ij)`.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        sphere_distance(self.sim[(i, j)])
    }

    /// Builds a bundle from an explicit similarity matrix. Used to evaluate
    /// losses at chosen similarity values; the embeddings are left empty.
    pub fn from_similarity(sim: Matrix, labels: Vec<usize>) -> Result<Self> {
        let b = labels.len();
        sim.expect_shape(b, b, "similarity matrix")?;
        Ok(Self {
            unit_embeddings: Matrix::zeros(b, 0),
            norms: vec![1.0; b],
            sim,
            labels,
        })
    }
}

pub fn sphere_distance(s: f64) -> f64 {
    (2.0 - 2.0 * s).max(0.0).sqrt()
}

pub fn normalize_rows(embeddings: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut unit = embeddings.clone();
    let mut norms = Vec::with_capacity(embeddings.rows());
    for i in 0..embeddings.rows() {
        let n = norm(embeddings.row(i));
        if !(n >= MIN_NORM) {
            return Err(Error::ZeroVector { row: i });
        }
        unit.row_mut(i).iter_mut().for_each(|v| *v /= n);
        norms.push(n);
    }
    Ok((unit, norms))
}

pub fn similarity_matrix(embeddings: &Matrix, labels: &[usize]) -> Result<SimilarityBundle> {
    let b = embeddings.rows();
    if b < 2 {
        return Err(Error::InvalidArgument(format!(
            "similarity needs a batch of at least 2, got {b}"
        )));
    }
    if labels.len() != b {
        return Err(Error::ShapeMismatch {
            expected: format!("{b} labels"),
            actual: format!("{} labels", labels.len()),
        });
    }
    let (unit, norms) = normalize_rows(embeddings)?;
    let rows = par::map_range(b, |i| {
        (0..b)
            .map(|j| dot(unit.row(i), unit.row(j)))
            .collect::<Vec<_>>()
    });
    let sim = Matrix::from_vec(b, b, rows.concat())?;
    Ok(SimilarityBundle {
        unit_embeddings: unit,
        norms,
        sim,
        labels: labels.to_vec(),
    })
}

/// Per-anchor positive and negative index sets, each sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct MinedPairs {
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
    pub lambda: f64,
}

impl MinedPairs {
    pub fn empty(b: usize) -> Self {
        Self {
            positives: vec![Vec::new(); b],
            negatives: vec![Vec::new(); b],
            lambda: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// Total number of directed positive pairs.
    pub fn positive_count(&self) -> usize {
        self.positives.iter().map(Vec::len).sum()
    }

    pub fn negative_count(&self) -> usize {
        self.negatives.iter().map(Vec::len).sum()
    }
}

/// Every same-label `j != i` is a positive, every other-label `j` a negative.
pub fn all_pairs(labels: &[usize]) -> MinedPairs {
    let b = labels.len();
    let mut out = MinedPairs::empty(b);
    for i in 0..b {
        for j in 0..b {
            if j == i {
                continue;
            }
            if labels[j] == labels[i] {
                out.positives[i].push(j);
            } else {
                out.negatives[i].push(j);
            }
        }
    }
    out
}

/// Keeps the triplets `(a, p, n)` with `D(a,p) + lambda > D(a,n)`; each such
/// triplet contributes `p` to the positives and `n` to the negatives of `a`.
///
/// For a fixed anchor, `p` is selected iff `D(a,p) + lambda > min_n D(a,n)` and
/// `n` is selected iff `max_p D(a,p) + lambda > D(a,n)`, so the cubic triplet
/// enumeration collapses to two linear scans per anchor.
pub fn mine_with_distance<F>(labels: &[usize], lambda: f64, dist: F) -> MinedPairs
where
    F: Fn(usize, usize) -> f64 + Sync + Send,
{
    let b = labels.len();
    let per_anchor = par::map_range(b, |a| {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for j in 0..b {
            if j == a {
                continue;
            }
            let d = dist(a, j);
            if labels[j] == labels[a] {
                pos.push((j, d));
            } else {
                neg.push((j, d));
            }
        }
        if pos.is_empty() || neg.is_empty() {
            return (Vec::new(), Vec::new());
        }
        let closest_neg = neg.iter().map(|&(_, d)| d).fold(f64::INFINITY, f64::min);
        let farthest_pos = pos
            .iter()
            .map(|&(_, d)| d)
            .fold(f64::NEG_INFINITY, f64::max);
        let p: Vec<usize> = pos
            .iter()
            .filter(|&&(_, d)| d + lambda > closest_neg)
            .map(|&(j, _)| j)
            .collect();
        let n: Vec<usize> = neg
            .iter()
            .filter(|&&(_, d)| farthest_pos + lambda > d)
            .map(|&(j, _)| j)
            .collect();
        (p, n)
    });
    let (positives, negatives) = per_anchor.into_iter().unzip();
    MinedPairs {
        positives,
        negatives,
        lambda,
    }
}

/// Hard-triplet mining on the unit sphere, distances from `sqrt(2 - 2S)`.
pub fn mine_hard_pairs(bundle: &SimilarityBundle, lambda: f64) -> Result<MinedPairs> {
    check_lambda(lambda)?;
    Ok(mine_with_distance(&bundle.labels, lambda, |i, j| {
        bundle.distance(i, j)
    }))
}

/// Hard-triplet mining with plain Euclidean distances between the given rows
/// (raw encoder outputs for the unnormalized ablation).
pub fn mine_hard_pairs_euclidean(
    points: &Matrix,
    labels: &[usize],
    lambda: f64,
) -> Result<MinedPairs> {
    check_lambda(lambda)?;
    if points.rows() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} labels", points.rows()),
            actual: format!("{} labels", labels.len()),
        });
    }
    Ok(mine_with_distance(labels, lambda, |i, j| {
        points
            .row(i)
            .iter()
            .zip(points.row(j))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidArgument(format!(
            "mining margin must be >= 0, got {lambda}"
        )));
    }
    Ok(())
}
