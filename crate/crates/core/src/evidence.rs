//! The dynamic evidence pool: curated sentences accumulated across retrieval
//! rounds, deduplicated on normalized text and 3-token shingle overlap.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::bm25::RetrievedPassage;
use crate::llm::{ChatModel, ChatRequest, LlmError, Slots, TemplateName, TemplateSet};
use crate::text::{contains_tokens, tokenize};

/// Shingle Jaccard at or above this drops a unit as a near-duplicate.
pub const NEAR_DUPLICATE_JACCARD: f64 = 0.9;
const SHINGLE: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum EvidenceError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("curation output has no \"Evidence:\" section\n--- raw ---\n{raw}")]
    CurationFormat { raw: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceUnit {
    /// Assigned by the pool on insertion; batch-local before that.
    pub id: u64,
    pub text: String,
    pub iteration: u32,
    pub source_query: String,
    pub source_doc_ids: Vec<String>,
}

#[derive(Debug, Clone)]
struct Entry {
    unit: EvidenceUnit,
    tokens: Vec<String>,
    shingles: BTreeSet<String>,
}

#[derive(Debug, Clone, Default)]
pub struct EvidencePool {
    entries: Vec<Entry>,
    norm_index: HashSet<String>,
}

impl PartialEq for EvidencePool {
    fn eq(&self, other: &Self) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.unit == b.unit)
    }
}

pub fn shingles(tokens: &[String]) -> BTreeSet<String> {
    if tokens.len() < SHINGLE {
        return std::iter::once(tokens.join(" ")).collect();
    }
    tokens.windows(SHINGLE).map(|w| w.join(" ")).collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        return 0.0;
    }
    inter as f64 / union as f64
}

impl EvidencePool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append units that are neither exact (normalized) nor near duplicates of
    /// anything already pooled, including earlier units of the same batch.
    /// Units with no tokens are dropped. Returns how many were appended.
    pub fn add_units(&mut self, units: impl IntoIterator<Item = EvidenceUnit>) -> usize {
        let mut added = 0;
        for mut unit in units {
            let tokens = tokenize(&unit.text);
            if tokens.is_empty() {
                continue;
            }
            let norm = tokens.join(" ");
            if self.norm_index.contains(&norm) {
                continue;
            }
            let sh = shingles(&tokens);
            if self
                .entries
                .iter()
                .any(|e| jaccard(&e.shingles, &sh) >= NEAR_DUPLICATE_JACCARD)
            {
                continue;
            }
            unit.id = self.entries.len() as u64;
            unit.text = unit.text.trim().to_string();
            self.norm_index.insert(norm);
            self.entries.push(Entry {
                unit,
                tokens,
                shingles: sh,
            });
            added += 1;
        }
        added
    }

    /// Units whose normalized text contains the normalized entity on token
    /// boundaries. Each unit counts at most once.
    pub fn occurrence_count(&self, entity: &str) -> usize {
        let needle = tokenize(entity);
        if needle.is_empty() {
            return 0;
        }
        self.entries
            .iter()
            .filter(|e| contains_tokens(&e.tokens, &needle))
            .count()
    }

    /// Number of evidence units.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn render(&self) -> String {
        let texts: Vec<&str> = self.entries.iter().map(|e| e.unit.text.as_str()).collect();
        texts.join("\n")
    }

    pub fn units(&self) -> impl ExactSizeIterator<Item = &EvidenceUnit> {
        self.entries.iter().map(|e| &e.unit)
    }

    pub fn snapshot(&self) -> Vec<EvidenceUnit> {
        self.units().cloned().collect()
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("units serialize")
    }
}

pub fn pool_length(pool: &EvidencePool) -> usize {
    pool.len()
}

/// Render retrieved passages for the curation prompt.
pub fn format_passages(passages: &[RetrievedPassage]) -> String {
    passages
        .iter()
        .map(|p| format!("[{}] {}\n{}", p.rank, p.title, p.text.trim()))
        .collect::<Vec<_>>()
        .join("\n\n")
}

/// Parse curator output: the lines after the last `Evidence:` marker, one
/// fact per line, bullets stripped. `Evidence: none` yields nothing.
pub fn parse_curation(raw: &str) -> Result<Vec<String>, EvidenceError> {
    let lines: Vec<&str> = raw.lines().collect();
    let marker = lines
        .iter()
        .rposition(|l| {
            let t = l.trim_start().trim_start_matches(['*', '#']).trim_start();
            t.len() >= 9 && t[..9].eq_ignore_ascii_case("evidence:")
        })
        .ok_or_else(|| EvidenceError::CurationFormat { raw: raw.to_string() })?;

    let head = lines[marker].trim_start().trim_start_matches(['*', '#']).trim_start();
    let inline = head[9..].trim().trim_start_matches('*').trim();
    let mut facts = Vec::new();
    if inline.eq_ignore_ascii_case("none") || inline.eq_ignore_ascii_case("none.") {
        return Ok(facts);
    }
    let push = |facts: &mut Vec<String>, line: &str| {
        let fact = strip_bullet(line);
        if !fact.is_empty() && !fact.eq_ignore_ascii_case("none") {
            facts.push(fact.to_string());
        }
    };
    push(&mut facts, inline);
    for line in &lines[marker + 1..] {
        push(&mut facts, line);
    }
    Ok(facts)
}

fn strip_bullet(line: &str) -> &str {
    let t = line.trim();
    for b in ["- ", "* ", "• "] {
        if let Some(rest) = t.strip_prefix(b) {
            return rest.trim();
        }
    }
    let digits = t.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix(". ").or_else(|| rest.strip_prefix(") ")) {
            return r.trim();
        }
    }
    t
}

/// Ask the curator to distill `passages` into evidence sentences. No call is
/// made when there is nothing to curate.
pub fn curate(
    question: &str,
    query: &str,
    passages: &[RetrievedPassage],
    llm: &dyn ChatModel,
    templates: &TemplateSet,
    iteration: u32,
) -> Result<Vec<EvidenceUnit>, EvidenceError> {
    if passages.is_empty() {
        return Ok(Vec::new());
    }
    let mut slots = Slots::new();
    slots.insert("question", question.to_string());
    slots.insert("query", query.to_string());
    slots.insert("passages", format_passages(passages));
    let prompt = templates
        .get(TemplateName::Curate)
        .render(&slots)
        .map_err(LlmError::from)?;
    let raw = llm.complete(&ChatRequest::new(TemplateName::Curate, prompt))?.text;
    let doc_ids: Vec<String> = passages.iter().map(|p| p.doc_id.clone()).collect();
    Ok(parse_curation(&raw)?
        .into_iter()
        .enumerate()
        .map(|(i, text)| EvidenceUnit {
            id: i as u64,
            text,
            iteration,
            source_query: query.to_string(),
            source_doc_ids: doc_ids.clone(),
        })
        .collect())
}
