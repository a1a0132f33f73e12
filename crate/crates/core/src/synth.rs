//! Synthetic synonym dictionaries for desk-scale benchmarks.
//!
//! Each concept gets a random letter-string base name; its synonyms are
//! seeded edit perturbations of the base (substitutions, insertions,
//! deletions, word truncations). Some synonyms per concept are held out as
//! test mentions and one extra perturbation per concept is emitted as a
//! training mention.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ontology::{MentionSet, Ontology};

const MAX_ATTEMPTS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub n_concepts: usize,
    pub synonyms_per_concept: usize,
    pub edit_ops: usize,
    pub holdout_per_concept: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_concepts: 200,
            synonyms_per_concept: 6,
            edit_ops: 3,
            holdout_per_concept: 1,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_concepts == 0 {
            return Err(Error::InvalidArgument("synth: n_concepts must be >= 1".into()));
        }
        if !(self.synonyms_per_concept > self.holdout_per_concept && self.holdout_per_concept >= 1) {
            return Err(Error::InvalidArgument(
                "synth: need synonyms_per_concept > holdout_per_concept >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticData {
    pub dictionary: Ontology,
    pub train_mentions: MentionSet,
    pub test_mentions: MentionSet,
}

fn random_letter(rng: &mut ChaCha8Rng) -> char {
    (b'a' + rng.gen_range(0..26u8)) as char
}

fn base_name(rng: &mut ChaCha8Rng) -> Vec<char> {
    let words = rng.gen_range(1..=2);
    let mut out = Vec::new();
    for w in 0..words {
        if w > 0 {
            out.push(' ');
        }
        let len = rng.gen_range(5..=10);
        out.extend((0..len).map(|_| random_letter(rng)));
    }
    out
}

/// Letter positions (never spaces).
fn letter_positions(name: &[char]) -> Vec<usize> {
    (0..name.len()).filter(|&i| name[i] != ' ').collect()
}

fn perturb(base: &[char], ops: usize, rng: &mut ChaCha8Rng) -> Vec<char> {
    let mut name = base.to_vec();
    for _ in 0..ops {
        let letters = letter_positions(&name);
        match rng.gen_range(0..4) {
            0 => {
                let i = letters[rng.gen_range(0..letters.len())];
                name[i] = random_letter(rng);
            }
            1 => {
                let i = rng.gen_range(0..=name.len());
                name.insert(i, random_letter(rng));
            }
            2 => {
                // keep every word at least two letters long
                let candidates: Vec<usize> = letters
                    .into_iter()
                    .filter(|&i| word_len_at(&name, i) > 2)
                    .collect();
                if !candidates.is_empty() {
                    name.remove(candidates[rng.gen_range(0..candidates.len())]);
                }
            }
            _ => {
                // truncate one word to an abbreviation of at least 3 letters
                let words = word_spans(&name);
                let long: Vec<(usize, usize)> =
                    words.into_iter().filter(|(s, e)| e - s >= 5).collect();
                if !long.is_empty() {
                    let (s, e) = long[rng.gen_range(0..long.len())];
                    let keep = rng.gen_range(3..e - s);
                    name.drain(s + keep..e);
                }
            }
        }
    }
    name
}

fn word_spans(name: &[char]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, &c) in name.iter().enumerate() {
        match (c == ' ', start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                spans.push((s, i));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push((s, name.len()));
    }
    spans
}

fn word_len_at(name: &[char], i: usize) -> usize {
    word_spans(name)
        .into_iter()
        .find(|&(s, e)| s <= i && i < e)
        .map_or(0, |(s, e)| e - s)
}

/// Generates the dictionary and mention sets described by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut used: HashSet<String> = HashSet::new();
    let mut fresh = |rng: &mut ChaCha8Rng, make: &dyn Fn(&mut ChaCha8Rng) -> Vec<char>| -> Result<String> {
        for _ in 0..MAX_ATTEMPTS {
            let s: String = make(rng).into_iter().collect();
            if used.insert(s.clone()) {
                return Ok(s);
            }
        }
        Err(Error::InvalidArgument(
            "synth: could not generate enough distinct names; lower n_concepts or raise edit_ops".into(),
        ))
    };

    let keep = spec.synonyms_per_concept - spec.holdout_per_concept;
    let mut dict_rows = Vec::new();
    let mut train = MentionSet::default();
    let mut test = MentionSet::default();
    for c in 0..spec.n_concepts {
        let cui = format!("S{c:06}");
        let base: Vec<char> = fresh(&mut rng, &base_name)?.chars().collect();
        let mut synonyms = vec![base.iter().collect::<String>()];
        for _ in 1..spec.synonyms_per_concept {
            synonyms.push(fresh(&mut rng, &|r| perturb(&base, spec.edit_ops, r))?);
        }
        let extra = fresh(&mut rng, &|r| perturb(&base, spec.edit_ops, r))?;
        for s in &synonyms[..keep] {
            dict_rows.push((cui.clone(), s.clone()));
        }
        for s in &synonyms[keep..] {
            test.push(s, [cui.clone()]);
        }
        train.push(&extra, [cui.clone()]);
    }
    Ok(SyntheticData {
        dictionary: Ontology::from_records(dict_rows),
        train_mentions: train,
        test_mentions: test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_follow_spec() {
        let data = generate(&SyntheticSpec::default()).unwrap();
        assert_eq!(data.dictionary.len(), 1000);
        assert_eq!(data.dictionary.num_concepts(), 200);
        assert_eq!(data.test_mentions.len(), 200);
        assert_eq!(data.train_mentions.len(), 200);
        for m in data.test_mentions.mentions.iter().chain(&data.train_mentions.mentions) {
            assert!(m.gold.iter().all(|g| data.dictionary.contains_concept(g)));
        }
    }

    #[test]
    fn seeded_regeneration() {
        let spec = SyntheticSpec { n_concepts: 20, seed: 4, ..SyntheticSpec::default() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SyntheticSpec { seed: 5, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn held_out_names_are_not_in_dictionary() {
        let data = generate(&SyntheticSpec { n_concepts: 50, ..SyntheticSpec::default() }).unwrap();
        let names: HashSet<&str> = data.dictionary.records().iter().map(|r| r.name.as_str()).collect();
        assert!(data.test_mentions.mentions.iter().all(|m| !names.contains(m.text.as_str())));
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = SyntheticSpec { synonyms_per_concept: 2, holdout_per_concept: 2, ..SyntheticSpec::default() };
        assert!(generate(&bad).is_err());
        let bad = SyntheticSpec { holdout_per_concept: 0, ..SyntheticSpec::default() };
        assert!(generate(&bad).is_err());
    }

    #[test]
    fn perturbations_keep_words_nonempty() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..500 {
            let base = base_name(&mut rng);
            let p = perturb(&base, 6, &mut rng);
            let s: String = p.into_iter().collect();
            assert_eq!(crate::ontology::normalize_name(&s), s);
            assert!(!s.is_empty());
        }
    }
}
