//! Corpus ingestion from JSON Lines.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate document id {0:?}")]
    DuplicateId(String),
    #[error("corpus is empty")]
    Empty,
}

/// One retrievable passage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub title: String,
    pub text: String,
}

/// Documents with unique, non-empty ids, in file order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Corpus {
    docs: Vec<Document>,
}

impl Corpus {
    pub fn new(docs: Vec<Document>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::with_capacity(docs.len());
        for (i, doc) in docs.iter().enumerate() {
            validate(doc, i + 1)?;
            if !seen.insert(doc.id.as_str()) {
                return Err(CorpusError::DuplicateId(doc.id.clone()));
            }
        }
        Ok(Self { docs })
    }

    pub fn documents(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn into_documents(self) -> Vec<Document> {
        self.docs
    }
}

fn validate(doc: &Document, line: usize) -> Result<(), CorpusError> {
    if doc.id.is_empty() {
        return Err(CorpusError::Malformed {
            line,
            message: "empty \"id\"".into(),
        });
    }
    if doc.text.trim().is_empty() {
        return Err(CorpusError::Malformed {
            line,
            message: format!("document {:?} has empty \"text\"", doc.id),
        });
    }
    Ok(())
}

/// Read a corpus file: one `{"id", "title", "text"}` object per line.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn ingest_corpus(path: impl AsRef<Path>) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_corpus(BufReader::new(file))
}

pub fn read_corpus(reader: impl BufRead) -> Result<Corpus, CorpusError> {
    let mut docs = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| CorpusError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Document = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        validate(&doc, lineno)?;
        if !seen.insert(doc.id.clone()) {
            return Err(CorpusError::DuplicateId(doc.id));
        }
        docs.push(doc);
    }
    Ok(Corpus { docs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Corpus, CorpusError> {
        read_corpus(s.as_bytes())
    }

    #[test]
    fn reads_well_formed_lines() {
        let src = r#"{"id":"d1","title":"A","text":"alpha"}
{"id":"d2","title":"B","text":"beta"}

{"id":"d3","title":"C","text":"gamma"}
"#;
        let corpus = parse(src).unwrap();
        assert_eq!(corpus.len(), 3);
        assert_eq!(corpus.documents()[2].id, "d3");
    }

    #[test]
    fn rejects_duplicate_ids() {
        let src = r#"{"id":"d1","title":"A","text":"alpha"}
{"id":"d1","title":"B","text":"beta"}"#;
        match parse(src) {
            Err(CorpusError::DuplicateId(id)) => assert_eq!(id, "d1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_text_names_line() {
        let src = r#"{"id":"d1","title":"A","text":"alpha"}
{"id":"d2","title":"B"}"#;
        match parse(src) {
            Err(CorpusError::Malformed { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("text"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn not_json_names_line() {
        let err = parse("{oops").unwrap_err();
        assert!(err.to_string().starts_with("line 1:"), "{err}");
    }

    #[test]
    fn empty_text_rejected() {
        let err = parse(r#"{"id":"d1","title":"A","text":"  "}"#).unwrap_err();
        assert!(matches!(err, CorpusError::Malformed { line: 1, .. }));
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            ingest_corpus("/nonexistent/corpus.jsonl"),
            Err(CorpusError::Io { .. })
        ));
    }
}
