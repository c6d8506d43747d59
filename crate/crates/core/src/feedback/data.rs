//! Training pairs for the feedback classifier, derived from QA records whose
//! context is split into supporting evidence and distractors.
//!
//! Three categories are produced: the full supporting chain (label 1),
//! distractors only (label 0), and a leading part of the chain mixed with
//! distractors (label 0).

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::FeedbackError;
use crate::evidence::{EvidencePool, EvidenceUnit};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldRecord {
    #[serde(default)]
    pub id: String,
    pub question: String,
    #[serde(default)]
    pub answers: Vec<String>,
    /// Key entities of the question, when the source annotates them.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<String>>,
    pub supporting: Vec<String>,
    #[serde(default)]
    pub distractors: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Sufficient,
    Insufficient,
    Partial,
}

impl Category {
    pub fn label(self) -> u8 {
        u8::from(self == Category::Sufficient)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub question: String,
    pub context: String,
    pub label: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<Category>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entities: Option<Vec<String>>,
}

/// Requested number of examples per category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub sufficient: usize,
    pub insufficient: usize,
    pub partial: usize,
}

impl std::str::FromStr for Counts {
    type Err = String;

    /// `sufficient,insufficient,partial`, e.g. `500,250,250`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(format!("expected three comma-separated counts, got {s:?}"));
        };
        let parse = |v: &str| v.parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
        Ok(Self {
            sufficient: parse(a)?,
            insufficient: parse(b)?,
            partial: parse(c)?,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub records_used: usize,
    pub skipped_no_distractors: usize,
    pub skipped_no_support: usize,
    pub sufficient: usize,
    pub insufficient: usize,
    pub partial: usize,
    pub positive_rate: f64,
}

struct Sampler<'a> {
    rng: ChaCha8Rng,
    records: Vec<&'a GoldRecord>,
}

fn ordered_subset<'s>(rng: &mut ChaCha8Rng, items: &'s [String], k: usize) -> Vec<&'s str> {
    let mut picked = index::sample(rng, items.len(), k.min(items.len())).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| items[i].as_str()).collect()
}

impl Sampler<'_> {
    fn example(&mut self, record: &GoldRecord, category: Category) -> TrainingExample {
        let parts: Vec<&str> = match category {
            Category::Sufficient => record.supporting.iter().map(String::as_str).collect(),
            Category::Insufficient => {
                let k = self.rng.random_range(1..=record.supporting.len().max(1));
                ordered_subset(&mut self.rng, &record.distractors, k)
            }
            Category::Partial => {
                let s = record.supporting.len();
                let keep = self.rng.random_range(1..s);
                let mut parts: Vec<&str> = record.supporting[..keep].iter().map(String::as_str).collect();
                parts.extend(ordered_subset(&mut self.rng, &record.distractors, s - keep));
                parts
            }
        };
        TrainingExample {
            question: record.question.clone(),
            context: parts.iter().map(|p| p.trim()).collect::<Vec<_>>().join(" "),
            label: category.label(),
            category: Some(category),
            entities: record.entities.clone(),
        }
    }
}

/// Build a shuffled, seeded dataset from gold records.
///
/// With `counts = None`, every usable record yields one sufficient example
/// and one negative (partial when it has two or more supporting sentences and
/// a coin flip says so, insufficient otherwise), giving an exact 50/50 split.
/// With explicit counts, records are drawn with replacement.
pub fn generate_training_data(
    gold: &[GoldRecord],
    counts: Option<Counts>,
    seed: u64,
) -> Result<(Vec<TrainingExample>, GenerationReport), FeedbackError> {
    let mut report = GenerationReport::default();
    let mut usable = Vec::new();
    for r in gold {
        if r.supporting.iter().all(|s| s.trim().is_empty()) {
            report.skipped_no_support += 1;
        } else if r.distractors.iter().all(|s| s.trim().is_empty()) {
            report.skipped_no_distractors += 1;
        } else {
            usable.push(r);
        }
    }
    if usable.is_empty() {
        return Err(FeedbackError::Data("no record has both supporting evidence and distractors".into()));
    }
    report.records_used = usable.len();

    let mut sampler = Sampler {
        rng: ChaCha8Rng::seed_from_u64(seed),
        records: usable,
    };
    let partial_capable: Vec<&GoldRecord> = sampler
        .records
        .iter()
        .copied()
        .filter(|r| r.supporting.len() >= 2)
        .collect();

    let mut out = Vec::new();
    match counts {
        None => {
            for r in sampler.records.clone() {
                out.push(sampler.example(r, Category::Sufficient));
                let partial = r.supporting.len() >= 2 && sampler.rng.random_bool(0.5);
                let cat = if partial { Category::Partial } else { Category::Insufficient };
                out.push(sampler.example(r, cat));
            }
        }
        Some(c) => {
            if c.partial > 0 && partial_capable.is_empty() {
                return Err(FeedbackError::Data(
                    "partial examples need a record with at least two supporting sentences".into(),
                ));
            }
            for (cat, n) in [
                (Category::Sufficient, c.sufficient),
                (Category::Insufficient, c.insufficient),
                (Category::Partial, c.partial),
            ] {
                let pool = if cat == Category::Partial {
                    partial_capable.clone()
                } else {
                    sampler.records.clone()
                };
                for _ in 0..n {
                    let r = *pool.choose(&mut sampler.rng).expect("non-empty");
                    out.push(sampler.example(r, cat));
                }
            }
        }
    }
    out.shuffle(&mut sampler.rng);

    for ex in &out {
        match ex.category {
            Some(Category::Sufficient) => report.sufficient += 1,
            Some(Category::Insufficient) => report.insufficient += 1,
            Some(Category::Partial) => report.partial += 1,
            None => {}
        }
    }
    report.positive_rate = if out.is_empty() {
        0.0
    } else {
        report.sufficient as f64 / out.len() as f64
    };
    Ok((out, report))
}

/// Split prose into sentences at `.`, `!` or `?` followed by whitespace.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((_, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        if let Some(&(j, next)) = chars.peek() {
            if next.is_whitespace() {
                let s = text[start..j].trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                start = j;
            }
        }
    }
    let tail = text[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Evidence pool holding one unit per context sentence.
pub fn context_pool(context: &str) -> EvidencePool {
    let mut pool = EvidencePool::new();
    pool.add_units(split_sentences(context).into_iter().map(|text| EvidenceUnit {
        id: 0,
        text,
        iteration: 0,
        source_query: String::new(),
        source_doc_ids: Vec::new(),
    }));
    pool
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, FeedbackError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| FeedbackError::Data(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| FeedbackError::Data(format!("line {}: {e}", i + 1)))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| FeedbackError::Data(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<(), FeedbackError> {
    let path = path.as_ref();
    let mut file = File::create(path).map_err(|e| FeedbackError::Data(format!("{}: {e}", path.display())))?;
    let mut buf = String::new();
    for row in rows {
        buf.push_str(&serde_json::to_string(row).map_err(|e| FeedbackError::Data(e.to_string()))?);
        buf.push('\n');
    }
    file.write_all(buf.as_bytes())
        .map_err(|e| FeedbackError::Data(format!("{}: {e}", path.display())))
}
