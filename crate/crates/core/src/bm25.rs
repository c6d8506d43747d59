//! Okapi BM25 over an in-memory inverted index.
//!
//! Documents are stored sorted by id, so two corpora holding the same
//! documents in different orders build identical indexes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::text::tokenize;

pub const INDEX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum IndexError {
    #[error("cannot build an index from an empty corpus")]
    EmptyCorpus,
    #[error("corpus contains no tokens")]
    NoTokens,
    #[error("invalid BM25 parameters k1={k1}, b={b}")]
    InvalidParams { k1: f64, b: f64 },
    #[error("unsupported index version {found} (expected {INDEX_FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    fn validate(&self) -> Result<(), IndexError> {
        let ok = self.k1.is_finite() && self.k1 > 0.0 && (0.0..=1.0).contains(&self.b);
        if ok {
            Ok(())
        } else {
            Err(IndexError::InvalidParams { k1: self.k1, b: self.b })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Position in the id-sorted document table.
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    version: u32,
    params: Bm25Params,
    docs: Vec<Document>,
    doc_lengths: Vec<u32>,
    total_length: u64,
    postings: BTreeMap<String, Vec<Posting>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedPassage {
    pub doc_id: String,
    pub rank: usize,
    pub score: f64,
    pub title: String,
    pub text: String,
}

/// Inverse document frequency with the `+1` inside the logarithm, which keeps
/// it positive even when a term occurs in every document.
pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

impl Bm25Index {
    pub fn build(corpus: &Corpus, params: Bm25Params) -> Result<Self, IndexError> {
        params.validate()?;
        if corpus.is_empty() {
            return Err(IndexError::EmptyCorpus);
        }
        let mut docs = corpus.documents().to_vec();
        docs.sort_by(|a, b| a.id.cmp(&b.id));

        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(docs.len());
        for (pos, doc) in docs.iter().enumerate() {
            let tokens = tokenize(&doc.text);
            doc_lengths.push(tokens.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: pos as u32,
                    tf: count,
                });
            }
        }
        let total_length: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        if total_length == 0 {
            return Err(IndexError::NoTokens);
        }
        Ok(Self {
            version: INDEX_FORMAT_VERSION,
            params,
            docs,
            doc_lengths,
            total_length,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_count(&self) -> usize {
        self.docs.len()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.total_length as f64 / self.docs.len() as f64
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn doc_length(&self, doc_id: &str) -> Option<u32> {
        self.position(doc_id).map(|p| self.doc_lengths[p])
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Ids of the documents listed under `term`, with their term frequencies.
    pub fn term_postings(&self, term: &str) -> Vec<(&str, u32)> {
        self.postings(term)
            .iter()
            .map(|p| (self.docs[p.doc as usize].id.as_str(), p.tf))
            .collect()
    }

    fn position(&self, doc_id: &str) -> Option<usize> {
        self.docs.binary_search_by(|d| d.id.as_str().cmp(doc_id)).ok()
    }

    /// Top-`k` documents for `query`. Repeated query terms count once; terms
    /// missing from the index contribute nothing. Ties go to the smaller id.
    pub fn retrieve(&self, query: &str, k: usize) -> Vec<RetrievedPassage> {
        if k == 0 {
            return Vec::new();
        }
        let mut terms = tokenize(query);
        let mut seen = std::collections::HashSet::new();
        terms.retain(|t| seen.insert(t.clone()));

        let n = self.docs.len();
        let avgdl = self.avg_doc_length();
        let Bm25Params { k1, b } = self.params;
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for term in &terms {
            let list = self.postings(term);
            if list.is_empty() {
                continue;
            }
            let w = idf(n, list.len());
            for p in list {
                let tf = f64::from(p.tf);
                let dl = f64::from(self.doc_lengths[p.doc as usize]);
                let norm = k1 * (1.0 - b + b * dl / avgdl);
                *scores.entry(p.doc).or_insert(0.0) += w * tf * (k1 + 1.0) / (tf + norm);
            }
        }

        let mut ranked: Vec<(u32, f64)> = scores.into_iter().collect();
        // doc positions follow id order, so the secondary key is the id tie-break
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        ranked
            .into_iter()
            .enumerate()
            .map(|(i, (pos, score))| {
                let doc = &self.docs[pos as usize];
                RetrievedPassage {
                    doc_id: doc.id.clone(),
                    rank: i + 1,
                    score,
                    title: doc.title.clone(),
                    text: doc.text.clone(),
                }
            })
            .collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), IndexError> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, IndexError> {
        let raw = fs::read_to_string(path)?;
        Self::from_json(&raw)
    }

    pub fn from_json(raw: &str) -> Result<Self, IndexError> {
        #[derive(Deserialize)]
        struct Probe {
            version: u32,
        }
        let probe: Probe = serde_json::from_str(raw)?;
        if probe.version != INDEX_FORMAT_VERSION {
            return Err(IndexError::Version { found: probe.version });
        }
        let index: Self = serde_json::from_str(raw)?;
        index.check()?;
        Ok(index)
    }

    fn check(&self) -> Result<(), IndexError> {
        self.params.validate()?;
        if self.docs.is_empty() {
            return Err(IndexError::Corrupt("no documents".into()));
        }
        if self.doc_lengths.len() != self.docs.len() {
            return Err(IndexError::Corrupt("doc_lengths size mismatch".into()));
        }
        if !self.docs.windows(2).all(|w| w[0].id < w[1].id) {
            return Err(IndexError::Corrupt("documents not sorted by unique id".into()));
        }
        let total: u64 = self.doc_lengths.iter().map(|&l| u64::from(l)).sum();
        if total != self.total_length || total == 0 {
            return Err(IndexError::Corrupt("total length mismatch".into()));
        }
        let n = self.docs.len() as u32;
        if self
            .postings
            .values()
            .flatten()
            .any(|p| p.doc >= n || p.tf == 0)
        {
            return Err(IndexError::Corrupt("posting refers to unknown document".into()));
        }
        Ok(())
    }
}
