//! Batch evaluation: run every configured mode over a QA set and report
//! exact match, accuracy and mean retrieval steps.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pipeline::{run_question, Deps, Mode, PipelineConfig};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("evaluation set is empty")]
    Empty,
    #[error("{0}")]
    Setup(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub question: String,
    pub answers: Vec<String>,
}

pub fn read_eval_set(path: impl AsRef<Path>) -> Result<Vec<EvalRecord>, EvalError> {
    let path = path.as_ref();
    let io = |source| EvalError::Io {
        path: path.display().to_string(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io)?);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| EvalError::Malformed { line: i + 1, message };
        let r: EvalRecord = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        if r.answers.is_empty() || r.answers.iter().any(|a| a.trim().is_empty()) {
            return Err(malformed(format!("record {:?} needs non-empty gold answers", r.id)));
        }
        records.push(r);
    }
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(records)
}

/// Lowercase, drop punctuation, collapse whitespace, drop one leading article.
pub fn normalize_answer(s: &str) -> String {
    let cleaned: String = s
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    let mut words: Vec<&str> = cleaned.split_whitespace().collect();
    if words.len() > 1 && matches!(words[0], "a" | "an" | "the") {
        words.remove(0);
    }
    words.join(" ")
}

pub fn exact_match(pred: &str, golds: &[String]) -> u8 {
    let p = normalize_answer(pred);
    u8::from(golds.iter().any(|g| normalize_answer(g) == p))
}

/// 1 when some gold answer occurs on word boundaries inside the raw answer.
pub fn accuracy(raw: &str, golds: &[String]) -> u8 {
    let hay = format!(" {} ", normalize_answer(raw));
    u8::from(golds.iter().any(|g| {
        let g = normalize_answer(g);
        !g.is_empty() && hay.contains(&format!(" {g} "))
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub id: String,
    pub mode: Mode,
    pub em: u8,
    pub acc: u8,
    pub r_step: usize,
    pub extracted_answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub em: f64,
    pub acc: f64,
    pub avg_r_step: f64,
    pub n: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_mode: BTreeMap<Mode, ModeSummary>,
    pub rows: Vec<EvalRow>,
}

/// Trace document of one (question, mode) run: a full result, or the partial
/// trace of a failed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub id: String,
    pub mode: Mode,
    pub json: String,
}

pub struct Evaluation {
    pub report: EvalReport,
    pub traces: Vec<RunTrace>,
}

pub fn summarize(rows: &[EvalRow]) -> BTreeMap<Mode, ModeSummary> {
    let mut acc: BTreeMap<Mode, (usize, usize, usize, usize, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry(r.mode).or_default();
        e.0 += usize::from(r.em);
        e.1 += usize::from(r.acc);
        e.2 += r.r_step;
        e.3 += 1;
        e.4 += usize::from(r.error.is_some());
    }
    acc.into_iter()
        .map(|(mode, (em, a, steps, n, failures))| {
            let n_f = n as f64;
            (
                mode,
                ModeSummary {
                    em: em as f64 / n_f,
                    acc: a as f64 / n_f,
                    avg_r_step: steps as f64 / n_f,
                    n,
                    failures,
                },
            )
        })
        .collect()
}

fn run_one(record: &EvalRecord, deps: Deps<'_>, config: &PipelineConfig) -> (EvalRow, RunTrace) {
    let (row, json) = match run_question(&record.question, deps, config) {
        Ok(result) => (
            EvalRow {
                id: record.id.clone(),
                mode: config.mode,
                em: exact_match(&result.extracted_answer, &record.answers),
                acc: accuracy(&result.raw_answer, &record.answers),
                r_step: result.r_step,
                extracted_answer: result.extracted_answer.clone(),
                error: None,
            },
            result.to_json(),
        ),
        Err(e) => {
            log::warn!("{}: {e}", record.id);
            (
                EvalRow {
                    id: record.id.clone(),
                    mode: config.mode,
                    em: 0,
                    acc: 0,
                    r_step: e.traces.len(),
                    extracted_answer: String::new(),
                    error: Some(e.to_string()),
                },
                e.partial_json(),
            )
        }
    };
    let trace = RunTrace {
        id: record.id.clone(),
        mode: config.mode,
        json,
    };
    (row, trace)
}

/// Run every config over every record. Rows come out grouped by config, in
/// dataset order, regardless of `parallel`.
pub fn evaluate(
    dataset: &[EvalRecord],
    deps: Deps<'_>,
    configs: &[PipelineConfig],
    parallel: usize,
) -> Result<Evaluation, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Empty);
    }
    for c in configs {
        c.validate().map_err(EvalError::Setup)?;
    }
    let jobs: Vec<(&PipelineConfig, &EvalRecord)> =
        configs.iter().flat_map(|c| dataset.iter().map(move |r| (c, r))).collect();
    let outcomes: Vec<(EvalRow, RunTrace)> = if parallel > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| EvalError::Setup(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(|(c, r)| run_one(r, deps, c)).collect())
    } else {
        jobs.iter().map(|(c, r)| run_one(r, deps, c)).collect()
    };
    let (rows, traces): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    Ok(Evaluation {
        report: EvalReport {
            per_mode: summarize(&rows),
            rows,
        },
        traces,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Per-question rows as CSV: `id,mode,em,acc,r_step`.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["id", "mode", "em", "acc", "r_step"]).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.id.as_str(),
                r.mode.as_str(),
                &r.em.to_string(),
                &r.acc.to_string(),
                &r.r_step.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 rows")
    }

    /// Fixed-width summary table for terminals.
    pub fn summary_table(&self) -> String {
        let mut out = format!("{:<8} {:>5} {:>7} {:>7} {:>10}\n", "mode", "n", "EM", "ACC", "avg R-Step");
        for (mode, s) in &self.per_mode {
            out.push_str(&format!(
                "{:<8} {:>5} {:>7.3} {:>7.3} {:>10.3}\n",
                mode.as_str(),
                s.n,
                s.em,
                s.acc,
                s.avg_r_step
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golds(g: &[&str]) -> Vec<String> {
        g.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn em_rules() {
        assert_eq!(exact_match("Nipper", &golds(&["Nipper"])), 1);
        assert_eq!(exact_match("The Nipper.", &golds(&["nipper"])), 1);
        assert_eq!(exact_match("Zofia Wajda", &golds(&["Małgorzata Braunek"])), 0);
        assert_eq!(exact_match("  small   world ", &golds(&["Small World"])), 1);
        assert_eq!(exact_match("The Who", &golds(&["who"])), 1);
    }

    #[test]
    fn acc_rules() {
        assert_eq!(accuracy("The dog's name is Nipper", &golds(&["Nipper"])), 1);
        assert_eq!(accuracy("unknown", &golds(&["Nipper"])), 0);
        assert_eq!(accuracy("Nippers are dogs", &golds(&["Nipper"])), 0);
        let raw = "Braunek is his mother. So the answer is Małgorzata Braunek.";
        assert_eq!(accuracy(raw, &golds(&["Małgorzata Braunek"])), 1);
    }

    fn row(mode: Mode, r_step: usize, em: u8) -> EvalRow {
        EvalRow {
            id: String::new(),
            mode,
            em,
            acc: em,
            r_step,
            extracted_answer: String::new(),
            error: None,
        }
    }

    #[test]
    fn averages() {
        let rows: Vec<EvalRow> = [1, 2, 3, 2].into_iter().map(|s| row(Mode::Rfm, s, 1)).collect();
        assert_eq!(summarize(&rows)[&Mode::Rfm].avg_r_step, 2.0);
        let none = summarize(&[row(Mode::None, 0, 0)]);
        assert_eq!(none[&Mode::None].avg_r_step, 0.0);
        assert_eq!(none[&Mode::None].em, 0.0);
    }

    #[test]
    fn csv_shape() {
        let report = EvalReport {
            per_mode: BTreeMap::new(),
            rows: vec![EvalRow {
                id: "q,1".into(),
                ..row(Mode::Fixed, 3, 1)
            }],
        };
        assert_eq!(report.to_csv(), "id,mode,em,acc,r_step\n\"q,1\",fixed,1,1,3\n");
    }
}
