//! Candidate-free linking by exact cosine nearest-neighbour search over every
//! dictionary name.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::matrix::{dot, Matrix};
use crate::metric::normalize_rows;
use crate::ontology::{lines, write_lines, MentionSet, Ontology};
use crate::par;

#[derive(Debug, Clone, PartialEq)]
pub struct LinkIndex {
    /// `N x d`, one unit-norm row per dictionary record.
    pub unit_embeddings: Matrix,
    pub names: Vec<String>,
    pub cuis: Vec<String>,
}

impl LinkIndex {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub row: usize,
    pub name: String,
    pub cui: String,
    pub similarity: f64,
}

/// Top-k dictionary names, similarity non-increasing, ties by row index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub ranked: Vec<Candidate>,
}

pub fn build_index(model: &EncoderModel, ontology: &Ontology, batch_size: usize) -> Result<LinkIndex> {
    if ontology.is_empty() {
        return Err(Error::InvalidArgument("cannot index an empty ontology".into()));
    }
    if batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
    }
    let names: Vec<String> = ontology.records().iter().map(|r| r.name.clone()).collect();
    let cuis: Vec<String> = ontology.records().iter().map(|r| r.cui.clone()).collect();
    let d = model.dim();
    let mut data = Vec::with_capacity(names.len() * d);
    for (chunk_no, chunk) in names.chunks(batch_size).enumerate() {
        let out = model.encode(chunk)?;
        let (unit, _) = normalize_rows(&out).map_err(|e| match e {
            Error::ZeroVector { row } => Error::ZeroVector {
                row: chunk_no * batch_size + row,
            },
            other => other,
        })?;
        data.extend_from_slice(unit.as_slice());
    }
    Ok(LinkIndex {
        unit_embeddings: Matrix::from_vec(names.len(), d, data)?,
        names,
        cuis,
    })
}

/// Orders `(row, sim)` by similarity descending, then row ascending.
fn rank_order(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then(a.0.cmp(&b.0))
}

/// Top-`k` rows for an already unit-normalized query vector.
pub fn topk_vector(index: &LinkIndex, query: &[f64], k: usize) -> Result<Prediction> {
    let n = index.len();
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!(
            "k must lie in 1..={n}, got {k}"
        )));
    }
    let mut scored: Vec<(usize, f64)> =
        par::map_range(n, |i| (i, dot(index.unit_embeddings.row(i), query)));
    if k < n {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    Ok(Prediction {
        ranked: scored
            .into_iter()
            .map(|(row, similarity)| Candidate {
                row,
                name: index.names[row].clone(),
                cui: index.cuis[row].clone(),
                similarity,
            })
            .collect(),
    })
}

fn encode_unit(model: &EncoderModel, texts: &[String]) -> Result<Matrix> {
    let out = model.encode(texts)?;
    normalize_rows(&out).map(|(u, _)| u)
}

/// Encodes `query` and returns its `k` nearest dictionary names.
pub fn topk(index: &LinkIndex, query: &str, model: &EncoderModel, k: usize) -> Result<Prediction> {
    let q = encode_unit(model, &[crate::ontology::normalize_name(query)])?;
    topk_vector(index, q.row(0), k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KAccuracy {
    pub k: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MentionHit {
    pub mention: String,
    pub gold: Vec<String>,
    /// One flag per requested k.
    pub hit: Vec<bool>,
    pub top: Vec<Candidate>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub acc_at_1: f64,
    pub acc_at_5: f64,
    pub by_k: Vec<KAccuracy>,
    pub mentions: Vec<MentionHit>,
}

impl EvalReport {
    pub fn accuracy_at(&self, k: usize) -> Option<f64> {
        self.by_k.iter().find(|a| a.k == k).map(|a| a.accuracy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Acc@k over `mentions`: a hit when any of the top-k names carries a gold
/// concept. `k` larger than the dictionary ranks the whole dictionary.
pub fn evaluate(
    index: &LinkIndex,
    mentions: &MentionSet,
    model: &EncoderModel,
    ks: &[usize],
) -> Result<EvalReport> {
    if mentions.is_empty() {
        return Err(Error::EmptyMentionSet);
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument("ks must be non-empty and >= 1".into()));
    }
    let mut all_ks: Vec<usize> = ks.to_vec();
    all_ks.extend([1, 5]);
    let depth = all_ks.iter().copied().max().unwrap().min(index.len());
    let texts: Vec<String> = mentions.mentions.iter().map(|m| m.text.clone()).collect();
    let queries = encode_unit(model, &texts)?;
    let predictions = par::map_range(mentions.len(), |i| topk_vector(index, queries.row(i), depth));

    let hit_at = |pred: &Prediction, gold: &std::collections::BTreeSet<String>, k: usize| {
        pred.ranked.iter().take(k).any(|c| gold.contains(&c.cui))
    };
    let mut counts = vec![0usize; all_ks.len()];
    let mut records = Vec::with_capacity(mentions.len());
    for (m, pred) in mentions.mentions.iter().zip(predictions) {
        let pred = pred?;
        for (c, &k) in counts.iter_mut().zip(&all_ks) {
            *c += usize::from(hit_at(&pred, &m.gold, k));
        }
        records.push(MentionHit {
            mention: m.text.clone(),
            gold: m.gold.iter().cloned().collect(),
            hit: ks.iter().map(|&k| hit_at(&pred, &m.gold, k)).collect(),
            top: pred.ranked.into_iter().take(ks.iter().copied().max().unwrap()).collect(),
        });
    }
    let total = mentions.len() as f64;
    let acc: Vec<f64> = counts.iter().map(|&c| c as f64 / total).collect();
    let n_req = ks.len();
    Ok(EvalReport {
        acc_at_1: acc[n_req],
        acc_at_5: acc[n_req + 1],
        by_k: ks
            .iter()
            .zip(&acc)
            .map(|(&k, &accuracy)| KAccuracy { k, accuracy })
            .collect(),
        mentions: records,
    })
}

/// `name<TAB>cui<TAB>v1,...,vd`, 17 significant digits per value.
pub fn export_embeddings(index: &LinkIndex, path: &Path) -> Result<()> {
    write_lines(
        path,
        (0..index.len()).map(|i| {
            let values: Vec<String> = index
                .unit_embeddings
                .row(i)
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect();
            format!("{}\t{}\t{}", index.names[i], index.cuis[i], values.join(","))
        }),
    )
}

/// Reads an exported embedding file back into an index.
pub fn read_embeddings(path: &Path) -> Result<LinkIndex> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |line: usize, reason: String| Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut names = Vec::new();
    let mut cuis = Vec::new();
    let mut rows = Vec::new();
    for (lineno, line) in lines(&text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(malformed(lineno, format!("expected 3 columns, found {}", cols.len())));
        }
        let row = cols[2]
            .split(',')
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(lineno, e.to_string()))?;
        names.push(cols[0].to_string());
        cuis.push(cols[1].to_string());
        rows.push(row);
    }
    Ok(LinkIndex {
        unit_embeddings: Matrix::from_rows(&rows)?,
        names,
        cuis,
    })
}
