//! Offline positive-pair generation and pair-structured batching.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ontology::{lines, write_lines, MentionSet, Ontology};

/// Default per-concept pair cap.
pub const DEFAULT_PAIR_CAP: usize = 50;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PositivePair {
    pub name1: String,
    pub name2: String,
    pub cui: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairList {
    pub pairs: Vec<PositivePair>,
    /// Seed used for trimming, `None` for lists read back from disk.
    pub seed: Option<u64>,
}

impl PairList {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// `names[2k]` and `names[2k + 1]` always share a label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MiniBatch {
    pub names: Vec<String>,
    pub labels: Vec<String>,
}

impl MiniBatch {
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

fn choose2(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Maps a linear index in `0..C(n,2)` to the lexicographic pair `(i, j)`, `i < j`.
fn unrank_pair(mut k: usize, n: usize) -> (usize, usize) {
    for i in 0..n {
        let row = n - i - 1;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
    }
    unreachable!("pair rank out of range")
}

/// Picks `min(total, cap)` sorted indices out of `0..total`.
fn trim(total: usize, cap: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if total <= cap {
        return (0..total).collect();
    }
    let mut picked = index::sample(rng, total, cap).into_vec();
    picked.sort_unstable();
    picked
}

/// All synonym pairs of every concept, trimmed uniformly to `cap` per concept.
pub fn generate_pairs(ontology: &Ontology, cap: usize, seed: u64) -> Result<PairList> {
    if cap == 0 {
        return Err(Error::InvalidArgument("pair cap must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = ontology.records();
    let mut pairs = Vec::new();
    for (cui, names) in ontology.concepts() {
        let n = names.len();
        for k in trim(choose2(n), cap, &mut rng) {
            let (i, j) = unrank_pair(k, n);
            pairs.push(PositivePair {
                name1: records[names[i]].name.clone(),
                name2: records[names[j]].name.clone(),
                cui: cui.to_string(),
            });
        }
    }
    Ok(PairList {
        pairs,
        seed: Some(seed),
    })
}

/// Pairs every mention with every dictionary synonym of each of its gold
/// concepts, skipping self-pairs, then trims each concept to `cap`.
pub fn generate_finetune_pairs(
    mentions: &MentionSet,
    ontology: &Ontology,
    cap: usize,
    seed: u64,
) -> Result<PairList> {
    if cap == 0 {
        return Err(Error::InvalidArgument("pair cap must be >= 1".into()));
    }
    let records = ontology.records();
    let mut order: Vec<&str> = Vec::new();
    let mut by_cui: HashMap<&str, Vec<PositivePair>> = HashMap::new();
    for (mi, mention) in mentions.mentions.iter().enumerate() {
        for cui in &mention.gold {
            let names = ontology
                .names_of(cui)
                .ok_or_else(|| Error::UnknownConcept {
                    mention_index: mi,
                    cui: cui.clone(),
                })?;
            let bucket = by_cui.entry(cui.as_str()).or_insert_with(|| {
                order.push(cui.as_str());
                Vec::new()
            });
            for &ni in names {
                let synonym = &records[ni].name;
                if *synonym == mention.text {
                    continue;
                }
                bucket.push(PositivePair {
                    name1: mention.text.clone(),
                    name2: synonym.clone(),
                    cui: cui.clone(),
                });
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for cui in order {
        let bucket = by_cui.remove(cui).unwrap_or_default();
        for k in trim(bucket.len(), cap, &mut rng) {
            pairs.push(bucket[k].clone());
        }
    }
    Ok(PairList {
        pairs,
        seed: Some(seed),
    })
}

/// Shuffles the pairs under `epoch_seed` and yields batches of
/// `2 * batch_pairs` names. A trailing chunk is kept if it holds at least two
/// pairs.
pub fn batch_iter(
    pairs: &PairList,
    batch_pairs: usize,
    epoch_seed: u64,
) -> Result<impl Iterator<Item = MiniBatch> + '_> {
    if batch_pairs < 2 {
        return Err(Error::InvalidArgument("batch_pairs must be >= 2".into()));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed));
    let chunks: Vec<Vec<usize>> = order
        .chunks(batch_pairs)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect();
    Ok(chunks.into_iter().map(move |chunk| {
        let mut names = Vec::with_capacity(chunk.len() * 2);
        let mut labels = Vec::with_capacity(chunk.len() * 2);
        for i in chunk {
            let p = &pairs.pairs[i];
            names.push(p.name1.clone());
            names.push(p.name2.clone());
            labels.push(p.cui.clone());
            labels.push(p.cui.clone());
        }
        MiniBatch { names, labels }
    }))
}

/// Number of batches [`batch_iter`] yields for `n_pairs` pairs.
pub fn batches_per_epoch(n_pairs: usize, batch_pairs: usize) -> usize {
    n_pairs / batch_pairs + usize::from(n_pairs % batch_pairs >= 2)
}

pub fn write_pairs(pairs: &PairList, path: &Path) -> Result<()> {
    write_lines(
        path,
        pairs
            .pairs
            .iter()
            .map(|p| format!("{}\t{}\t{}", p.name1, p.name2, p.cui)),
    )
}

pub fn read_pairs(path: &Path) -> Result<PairList> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pairs = Vec::new();
    for (lineno, line) in lines(&text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 || cols.iter().any(|c| c.is_empty()) {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: lineno,
                reason: format!(
                    "expected 3 non-empty tab-separated columns, found {}",
                    cols.len()
                ),
            });
        }
        pairs.push(PositivePair {
            name1: cols[0].to_string(),
            name2: cols[1].to_string(),
            cui: cols[2].to_string(),
        });
    }
    Ok(PairList { pairs, seed: None })
}
