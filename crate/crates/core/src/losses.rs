//! Pairwise metric-learning objectives over a batch similarity matrix.
//!
//! Every loss reads the cosine similarity matrix `S` and the mined index sets,
//! produces a scalar and `dL/dS`, and [`embedding_grad`] carries that gradient
//! back through `S = U U^T` and the row normalization to the raw embeddings.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::metric::{MinedPairs, SimilarityBundle};
use crate::par;

/// Distances below this are treated as coincident points; the derivative of
/// `sqrt(2 - 2S)` is taken as zero there.
const MIN_DISTANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    MultiSimilarity,
    Cosine,
    Triplet,
    Nca,
    LiftedStructure,
    InfoNce,
    Circle,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::MultiSimilarity,
        LossKind::Cosine,
        LossKind::Triplet,
        LossKind::Nca,
        LossKind::LiftedStructure,
        LossKind::InfoNce,
        LossKind::Circle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::MultiSimilarity => "multi_similarity",
            LossKind::Cosine => "cosine",
            LossKind::Triplet => "triplet",
            LossKind::Nca => "nca",
            LossKind::LiftedStructure => "lifted_structure",
            LossKind::InfoNce => "infonce",
            LossKind::Circle => "circle",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::UnknownLossKind(s.to_string()))
    }
}

/// Hyper-parameters for all objectives; each kind reads only its own fields.
///
/// | kind | fields |
/// |------|--------|
/// | multi_similarity | `alpha`, `beta`, `epsilon` |
/// | cosine | `margin` |
/// | triplet | `margin` |
/// | nca | `scale` |
/// | lifted_structure | `alpha` |
/// | infonce | `tau` |
/// | circle | `m`, `gamma` |
#[derive(Debug, Clone, PartialEq)]
pub struct LossParams {
    pub kind: LossKind,
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub margin: f64,
    pub scale: f64,
    pub tau: f64,
    pub m: f64,
    pub gamma: f64,
}

impl LossParams {
    /// Reference hyper-parameters for `kind`.
    pub fn defaults(kind: LossKind) -> Self {
        let (alpha, margin) = match kind {
            LossKind::LiftedStructure => (0.5, 0.2),
            LossKind::Cosine => (2.0, 0.0),
            _ => (2.0, 0.2),
        };
        Self {
            kind,
            alpha,
            beta: 50.0,
            epsilon: 0.5,
            margin,
            scale: 20.0,
            tau: 0.07,
            m: 0.25,
            gamma: 256.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| {
            Err(Error::InvalidArgument(format!(
                "{} loss: {what}",
                self.kind
            )))
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match self.kind {
            LossKind::MultiSimilarity => {
                if !positive(self.alpha) || !positive(self.beta) {
                    return bad("alpha and beta must be > 0");
                }
                if !self.epsilon.is_finite() {
                    return bad("epsilon must be finite");
                }
            }
            LossKind::Cosine => {
                if !(-1.0..=1.0).contains(&self.margin) {
                    return bad("margin must lie in [-1, 1]");
                }
            }
            LossKind::Triplet => {
                if !(self.margin.is_finite() && self.margin >= 0.0) {
                    return bad("margin must be >= 0");
                }
            }
            LossKind::Nca => {
                if !positive(self.scale) {
                    return bad("scale must be > 0");
                }
            }
            LossKind::LiftedStructure => {
                if !self.alpha.is_finite() {
                    return bad("alpha must be finite");
                }
            }
            LossKind::InfoNce => {
                if !positive(self.tau) {
                    return bad("tau must be > 0");
                }
            }
            LossKind::Circle => {
                if !self.m.is_finite() || !positive(self.gamma) {
                    return bad("m must be finite and gamma > 0");
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    /// `B x d` gradient with respect to the raw (unnormalized) embeddings.
    pub grad_embeddings: Matrix,
}

/// A loss with its parameters bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Loss {
    pub params: LossParams,
}

/// Looks a loss up by name, with reference defaults filled in.
pub fn loss_registry(kind: &str) -> Result<Loss> {
    let kind: LossKind = kind.parse()?;
    Ok(Loss {
        params: LossParams::defaults(kind),
    })
}

impl Loss {
    pub fn new(params: LossParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    /// Loss value and `dL/dS`.
    pub fn similarity_grad(
        &self,
        bundle: &SimilarityBundle,
        pairs: &MinedPairs,
    ) -> Result<(f64, Matrix)> {
        let b = bundle.len();
        if pairs.len() != b {
            return Err(Error::ShapeMismatch {
                expected: format!("mined sets for {b} anchors"),
                actual: format!("{}", pairs.len()),
            });
        }
        let p = &self.params;
        Ok(match p.kind {
            LossKind::MultiSimilarity => ms(bundle, pairs, p.alpha, p.beta, p.epsilon),
            LossKind::Cosine => cosine(bundle, pairs, p.margin),
            LossKind::Triplet => triplet(bundle, pairs, p.margin),
            LossKind::Nca => nca(bundle, pairs, p.scale),
            LossKind::LiftedStructure => lifted(bundle, pairs, p.alpha),
            LossKind::InfoNce => infonce(bundle, pairs, p.tau),
            LossKind::Circle => circle(bundle, pairs, p.m, p.gamma),
        })
    }

    pub fn compute(&self, bundle: &SimilarityBundle, pairs: &MinedPairs) -> Result<LossOutput> {
        let (value, grad_sim) = self.similarity_grad(bundle, pairs)?;
        Ok(LossOutput {
            value,
            grad_embeddings: embedding_grad(bundle, &grad_sim),
        })
    }
}

pub fn ms_loss(bundle: &SimilarityBundle, pairs: &MinedPairs, params: &LossParams) -> Result<LossOutput> {
    with_kind(params, LossKind::MultiSimilarity).compute(bundle, pairs)
}

pub fn cosine_loss(bundle: &SimilarityBundle, pairs: &MinedPairs, params: &LossParams) -> Result<LossOutput> {
    with_kind(params, LossKind::Cosine).compute(bundle, pairs)
}

pub fn triplet_loss(bundle: &SimilarityBundle, pairs: &MinedPairs, params: &LossParams) -> Result<LossOutput> {
    with_kind(params, LossKind::Triplet).compute(bundle, pairs)
}

pub fn nca_loss(bundle: &SimilarityBundle, pairs: &MinedPairs, params: &LossParams) -> Result<LossOutput> {
    with_kind(params, LossKind::Nca).compute(bundle, pairs)
}

pub fn lifted_structure_loss(bundle: &SimilarityBundle, pairs: &MinedPairs, params: &LossParams) -> Result<LossOutput> {
    with_kind(params, LossKind::LiftedStructure).compute(bundle, pairs)
}

pub fn infonce_loss(bundle: &SimilarityBundle, pairs: &MinedPairs, params: &LossParams) -> Result<LossOutput> {
    with_kind(params, LossKind::InfoNce).compute(bundle, pairs)
}

pub fn circle_loss(bundle: &SimilarityBundle, pairs: &MinedPairs, params: &LossParams) -> Result<LossOutput> {
    with_kind(params, LossKind::Circle).compute(bundle, pairs)
}

fn with_kind(params: &LossParams, kind: LossKind) -> Loss {
    Loss {
        params: LossParams {
            kind,
            ..params.clone()
        },
    }
}

/// Back-propagates `dL/dS` to the raw embeddings.
///
/// `dL/dU = (G + G^T) U`, then through `u = x / |x|`:
/// `dL/dx = (g - u (u . g)) / |x|`.
pub fn embedding_grad(bundle: &SimilarityBundle, grad_sim: &Matrix) -> Matrix {
    let b = bundle.len();
    let u = &bundle.unit_embeddings;
    let d = u.cols();
    let rows = par::map_range(b, |i| {
        let mut gu = vec![0.0; d];
        for j in 0..b {
            let w = grad_sim[(i, j)] + grad_sim[(j, i)];
            if w != 0.0 {
                for (acc, v) in gu.iter_mut().zip(u.row(j)) {
                    *acc += w * v;
                }
            }
        }
        let ui = u.row(i);
        let radial = dot(ui, &gu);
        gu.iter()
            .zip(ui)
            .map(|(g, uk)| (g - uk * radial) / bundle.norms[i])
            .collect::<Vec<_>>()
    });
    Matrix::from_vec(b, d, rows.concat()).expect("row lengths are d")
}

/// `log(1 + sum exp(x))` with the weights `exp(x_k) / (1 + sum exp(x))`.
fn log1p_sum_exp(xs: &[f64]) -> (f64, Vec<f64>) {
    let shift = xs.iter().copied().fold(0.0, f64::max);
    let base = (-shift).exp();
    let exps: Vec<f64> = xs.iter().map(|x| (x - shift).exp()).collect();
    let total = base + exps.iter().sum::<f64>();
    (
        total.ln() + shift,
        exps.into_iter().map(|e| e / total).collect(),
    )
}

/// `log(sum exp(x))` and its softmax.
fn log_sum_exp(xs: &[f64]) -> (f64, Vec<f64>) {
    let shift = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - shift).exp()).collect();
    let total: f64 = exps.iter().sum();
    (
        total.ln() + shift,
        exps.into_iter().map(|e| e / total).collect(),
    )
}

/// `d sqrt(2 - 2S) / dS = -1 / D`.
fn distance_slope(d: f64) -> f64 {
    if d < MIN_DISTANCE {
        0.0
    } else {
        -1.0 / d
    }
}

/// Per-anchor value and sparse `(column, dL/dS_ij)` entries.
type AnchorTerm = (f64, Vec<(usize, f64)>);

/// Sums anchor terms in index order into a value and a dense `dL/dS`.
fn assemble(b: usize, terms: Vec<AnchorTerm>) -> (f64, Matrix) {
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, b);
    for (i, (v, entries)) in terms.into_iter().enumerate() {
        value += v;
        for (j, g) in entries {
            grad[(i, j)] += g;
        }
    }
    (value, grad)
}

fn ms(bundle: &SimilarityBundle, pairs: &MinedPairs, alpha: f64, beta: f64, eps: f64) -> (f64, Matrix) {
    let b = bundle.len();
    let scale = 1.0 / b as f64;
    let s = &bundle.sim;
    let terms = par::map_range(b, |i| {
        let mut value = 0.0;
        let mut entries = Vec::new();
        let neg = &pairs.negatives[i];
        if !neg.is_empty() {
            let xs: Vec<f64> = neg.iter().map(|&n| alpha * (s[(i, n)] - eps)).collect();
            let (lse, w) = log1p_sum_exp(&xs);
            value += lse / alpha;
            entries.extend(neg.iter().zip(w).map(|(&n, w)| (n, scale * w)));
        }
        let pos = &pairs.positives[i];
        if !pos.is_empty() {
            let xs: Vec<f64> = pos.iter().map(|&p| -beta * (s[(i, p)] - eps)).collect();
            let (lse, w) = log1p_sum_exp(&xs);
            value += lse / beta;
            entries.extend(pos.iter().zip(w).map(|(&p, w)| (p, -scale * w)));
        }
        (value * scale, entries)
    });
    assemble(b, terms)
}

fn cosine(bundle: &SimilarityBundle, pairs: &MinedPairs, margin: f64) -> (f64, Matrix) {
    let b = bundle.len();
    let n_pos = pairs.positive_count();
    let n_neg = pairs.negative_count();
    let wp = if n_pos > 0 { 1.0 / n_pos as f64 } else { 0.0 };
    let wn = if n_neg > 0 { 1.0 / n_neg as f64 } else { 0.0 };
    let s = &bundle.sim;
    let terms = par::map_range(b, |i| {
        let mut pos_sum = 0.0;
        let mut neg_sum = 0.0;
        let mut entries = Vec::new();
        for &p in &pairs.positives[i] {
            pos_sum += 1.0 - s[(i, p)];
            entries.push((p, -wp));
        }
        for &n in &pairs.negatives[i] {
            let h = s[(i, n)] - margin;
            if h > 0.0 {
                neg_sum += h;
                entries.push((n, wn));
            }
        }
        (pos_sum * wp + neg_sum * wn, entries)
    });
    assemble(b, terms)
}

fn triplet(bundle: &SimilarityBundle, pairs: &MinedPairs, margin: f64) -> (f64, Matrix) {
    let b = bundle.len();
    let count: usize = (0..b)
        .map(|a| pairs.positives[a].len() * pairs.negatives[a].len())
        .sum();
    if count == 0 {
        return (0.0, Matrix::zeros(b, b));
    }
    let w = 1.0 / count as f64;
    let terms = par::map_range(b, |a| {
        let mut value = 0.0;
        let mut grad_d: Vec<(usize, f64)> = Vec::new();
        for &p in &pairs.positives[a] {
            let dap = bundle.distance(a, p);
            for &n in &pairs.negatives[a] {
                let dan = bundle.distance(a, n);
                let h = dap - dan + margin;
                if h > 0.0 {
                    value += h;
                    grad_d.push((p, w));
                    grad_d.push((n, -w));
                }
            }
        }
        let entries = grad_d
            .into_iter()
            .map(|(j, g)| (j, g * distance_slope(bundle.distance(a, j))))
            .collect();
        (value * w, entries)
    });
    assemble(b, terms)
}

fn nca(bundle: &SimilarityBundle, pairs: &MinedPairs, scale: f64) -> (f64, Matrix) {
    let b = bundle.len();
    let inv_b = 1.0 / b as f64;
    let s = &bundle.sim;
    let terms = par::map_range(b, |i| {
        let pos = &pairs.positives[i];
        if pos.is_empty() {
            return (0.0, Vec::new());
        }
        let neg = &pairs.negatives[i];
        let zp: Vec<f64> = pos.iter().map(|&p| scale * s[(i, p)]).collect();
        let zall: Vec<f64> = pos
            .iter()
            .chain(neg)
            .map(|&j| scale * s[(i, j)])
            .collect();
        let (lse_p, soft_p) = log_sum_exp(&zp);
        let (lse_all, soft_all) = log_sum_exp(&zall);
        let mut entries = Vec::with_capacity(zall.len());
        for (k, &p) in pos.iter().enumerate() {
            entries.push((p, -inv_b * scale * (soft_p[k] - soft_all[k])));
        }
        for (k, &n) in neg.iter().enumerate() {
            entries.push((n, inv_b * scale * soft_all[pos.len() + k]));
        }
        (-(lse_p - lse_all) * inv_b, entries)
    });
    assemble(b, terms)
}

fn lifted(bundle: &SimilarityBundle, pairs: &MinedPairs, alpha: f64) -> (f64, Matrix) {
    let b = bundle.len();
    let mut unordered = Vec::new();
    for i in 0..b {
        for j in i + 1..b {
            if pairs.positives[i].binary_search(&j).is_ok()
                || pairs.positives[j].binary_search(&i).is_ok()
            {
                unordered.push((i, j));
            }
        }
    }
    if unordered.is_empty() {
        return (0.0, Matrix::zeros(b, b));
    }
    let denom = unordered.len() as f64;
    // each pair yields J_+^2 and its dL/dS entries as (row, col, grad)
    let per_pair = par::map_range(unordered.len(), |k| {
        let (i, j) = unordered[k];
        let ni = &pairs.negatives[i];
        let nj = &pairs.negatives[j];
        if ni.is_empty() && nj.is_empty() {
            return (0.0, Vec::new());
        }
        let edges: Vec<(usize, usize)> = ni
            .iter()
            .map(|&n| (i, n))
            .chain(nj.iter().map(|&n| (j, n)))
            .collect();
        let xs: Vec<f64> = edges
            .iter()
            .map(|&(a, n)| alpha - bundle.distance(a, n))
            .collect();
        let (lse, w) = log_sum_exp(&xs);
        let dij = bundle.distance(i, j);
        let big_j = dij + lse;
        if big_j <= 0.0 {
            return (0.0, Vec::new());
        }
        let outer = big_j / denom;
        let mut entries = vec![(i, j, outer * distance_slope(dij))];
        for (&(a, n), wk) in edges.iter().zip(w) {
            entries.push((a, n, -outer * wk * distance_slope(bundle.distance(a, n))));
        }
        (big_j * big_j, entries)
    });
    let mut value = 0.0;
    let mut grad = Matrix::zeros(b, b);
    for (v, entries) in per_pair {
        value += v;
        for (r, c, g) in entries {
            grad[(r, c)] += g;
        }
    }
    (value / (2.0 * denom), grad)
}

fn infonce(bundle: &SimilarityBundle, pairs: &MinedPairs, tau: f64) -> (f64, Matrix) {
    let b = bundle.len();
    let count: usize = (0..b)
        .filter(|&i| !pairs.negatives[i].is_empty())
        .map(|i| pairs.positives[i].len())
        .sum();
    if count == 0 {
        return (0.0, Matrix::zeros(b, b));
    }
    let w = 1.0 / count as f64;
    let s = &bundle.sim;
    let terms = par::map_range(b, |i| {
        let neg = &pairs.negatives[i];
        if neg.is_empty() {
            return (0.0, Vec::new());
        }
        let neg_logits: Vec<f64> = neg.iter().map(|&n| s[(i, n)] / tau).collect();
        let mut value = 0.0;
        let mut entries = Vec::new();
        for &p in &pairs.positives[i] {
            let zp = s[(i, p)] / tau;
            let mut logits = Vec::with_capacity(neg.len() + 1);
            logits.push(zp);
            logits.extend_from_slice(&neg_logits);
            let (lse, soft) = log_sum_exp(&logits);
            value += lse - zp;
            entries.push((p, w * (soft[0] - 1.0) / tau));
            for (&n, sn) in neg.iter().zip(&soft[1..]) {
                entries.push((n, w * sn / tau));
            }
        }
        (value * w, entries)
    });
    assemble(b, terms)
}

fn circle(bundle: &SimilarityBundle, pairs: &MinedPairs, m: f64, gamma: f64) -> (f64, Matrix) {
    let b = bundle.len();
    let inv_b = 1.0 / b as f64;
    let s = &bundle.sim;
    let (delta_p, delta_n) = (1.0 - m, m);
    let terms = par::map_range(b, |i| {
        let pos = &pairs.positives[i];
        let neg = &pairs.negatives[i];
        if pos.is_empty() || neg.is_empty() {
            return (0.0, Vec::new());
        }
        // x_n = gamma a_n (S_in - delta_n), a_n = [S_in + m]_+
        let xn: Vec<f64> = neg
            .iter()
            .map(|&n| {
                let sn = s[(i, n)];
                gamma * (sn + m).max(0.0) * (sn - delta_n)
            })
            .collect();
        // y_p = -gamma a_p (S_ip - delta_p), a_p = [1 + m - S_ip]_+
        let yp: Vec<f64> = pos
            .iter()
            .map(|&p| {
                let sp = s[(i, p)];
                -gamma * (1.0 + m - sp).max(0.0) * (sp - delta_p)
            })
            .collect();
        let (ln, wn) = log_sum_exp(&xn);
        let (lp, wp) = log_sum_exp(&yp);
        let t = ln + lp;
        let value = if t > 0.0 {
            t + (-t).exp().ln_1p()
        } else {
            t.exp().ln_1p()
        };
        let sigma = 1.0 / (1.0 + (-t).exp());
        let mut entries = Vec::with_capacity(pos.len() + neg.len());
        for ((&n, w), _) in neg.iter().zip(&wn).zip(&xn) {
            let sn = s[(i, n)];
            let a = (sn + m).max(0.0);
            let da = if sn + m > 0.0 { 1.0 } else { 0.0 };
            let dx = gamma * (da * (sn - delta_n) + a);
            entries.push((n, inv_b * sigma * w * dx));
        }
        for (&p, w) in pos.iter().zip(&wp) {
            let sp = s[(i, p)];
            let a = (1.0 + m - sp).max(0.0);
            let da = if 1.0 + m - sp > 0.0 { -1.0 } else { 0.0 };
            let dy = -gamma * (da * (sp - delta_p) + a);
            entries.push((p, inv_b * sigma * w * dy));
        }
        (value * inv_b, entries)
    });
    assemble(b, terms)
}
