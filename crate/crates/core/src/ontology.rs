//! Synonym dictionaries and mention sets.
//!
//! Both are read from headerless UTF-8 TSV files:
//!
//! * dictionary: `cui<TAB>name`
//! * mentions: `mention<TAB>cui(|cui)*`
//!
//! Names and mentions go through [`normalize_name`] on the way in.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Lowercases (Unicode) and collapses whitespace runs to single spaces.
pub fn normalize_name(raw: &str) -> String {
    let lower = raw.to_lowercase();
    let mut out = String::with_capacity(lower.len());
    for word in lower.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SynonymRecord {
    pub cui: String,
    pub name: String,
}

/// A deduplicated `(cui, name)` dictionary in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ontology {
    records: Vec<SynonymRecord>,
    /// Concepts in first-appearance order with the indices of their names.
    concepts: Vec<(String, Vec<usize>)>,
    concept_index: HashMap<String, usize>,
}

impl Ontology {
    /// Builds an ontology from raw `(cui, name)` pairs. Names are normalized,
    /// empty names and exact duplicates are dropped.
    pub fn from_records<I, C, N>(raw: I) -> Self
    where
        I: IntoIterator<Item = (C, N)>,
        C: AsRef<str>,
        N: AsRef<str>,
    {
        let mut ontology = Ontology {
            records: Vec::new(),
            concepts: Vec::new(),
            concept_index: HashMap::new(),
        };
        let mut seen = HashSet::new();
        for (cui, name) in raw {
            ontology.push(cui.as_ref(), name.as_ref(), &mut seen);
        }
        ontology
    }

    fn push(&mut self, cui: &str, raw_name: &str, seen: &mut HashSet<(String, String)>) {
        let name = normalize_name(raw_name);
        let cui = cui.trim();
        if name.is_empty() || cui.is_empty() {
            return;
        }
        if !seen.insert((cui.to_string(), name.clone())) {
            return;
        }
        let idx = self.records.len();
        self.records.push(SynonymRecord {
            cui: cui.to_string(),
            name,
        });
        let slot = *self
            .concept_index
            .entry(cui.to_string())
            .or_insert_with(|| {
                self.concepts.push((cui.to_string(), Vec::new()));
                self.concepts.len() - 1
            });
        self.concepts[slot].1.push(idx);
    }

    pub fn records(&self) -> &[SynonymRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Record indices of the names of `cui`, if the concept exists.
    pub fn names_of(&self, cui: &str) -> Option<&[usize]> {
        self.concept_index
            .get(cui)
            .map(|&i| self.concepts[i].1.as_slice())
    }

    pub fn contains_concept(&self, cui: &str) -> bool {
        self.concept_index.contains_key(cui)
    }

    /// `(cui, name indices)` in first-appearance order.
    pub fn concepts(&self) -> impl Iterator<Item = (&str, &[usize])> {
        self.concepts
            .iter()
            .map(|(c, idx)| (c.as_str(), idx.as_slice()))
    }

    pub fn num_concepts(&self) -> usize {
        self.concepts.len()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_lines(
            path,
            self.records
                .iter()
                .map(|r| format!("{}\t{}", r.cui, r.name)),
        )
    }
}

/// Reads a `cui<TAB>name` dictionary.
pub fn load_dictionary(path: &Path) -> Result<Ontology> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (lineno, line) in lines(&text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: lineno,
                reason: format!("expected 2 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].trim().is_empty() {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: lineno,
                reason: "empty concept identifier".into(),
            });
        }
        rows.push((cols[0], cols[1]));
    }
    let ontology = Ontology::from_records(rows);
    if ontology.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    Ok(ontology)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mention {
    pub text: String,
    pub gold: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MentionSet {
    pub mentions: Vec<Mention>,
}

impl MentionSet {
    pub fn len(&self) -> usize {
        self.mentions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mentions.is_empty()
    }

    pub fn push(&mut self, text: &str, gold: impl IntoIterator<Item = impl Into<String>>) {
        self.mentions.push(Mention {
            text: normalize_name(text),
            gold: gold.into_iter().map(Into::into).collect(),
        });
    }
}

/// Reads a `mention<TAB>cui|cui|...` file.
pub fn load_mentions(path: &Path) -> Result<MentionSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut set = MentionSet::default();
    for (lineno, line) in lines(&text) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: lineno,
                reason: format!("expected 2 tab-separated columns, found {}", cols.len()),
            });
        }
        let mention = normalize_name(cols[0]);
        if mention.is_empty() {
            return Err(Error::MalformedLine {
                path: path.to_path_buf(),
                line: lineno,
                reason: "empty mention".into(),
            });
        }
        let gold: BTreeSet<String> = cols[1]
            .split('|')
            .map(str::trim)
            .filter(|c| !c.is_empty())
            .map(String::from)
            .collect();
        if gold.is_empty() {
            return Err(Error::EmptyGoldSet {
                path: path.to_path_buf(),
                line: lineno,
            });
        }
        set.mentions.push(Mention {
            text: mention,
            gold,
        });
    }
    Ok(set)
}

pub fn write_mentions(set: &MentionSet, path: &Path) -> Result<()> {
    write_lines(
        path,
        set.mentions.iter().map(|m| {
            let gold: Vec<&str> = m.gold.iter().map(String::as_str).collect();
            format!("{}\t{}", m.text, gold.join("|"))
        }),
    )
}

/// Non-blank lines with 1-based line numbers and trailing `\r` removed.
pub(crate) fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
        .filter(|(_, l)| !l.trim().is_empty())
}

pub(crate) fn write_lines<I>(path: &Path, lines: I) -> Result<()>
where
    I: IntoIterator<Item = String>,
{
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
