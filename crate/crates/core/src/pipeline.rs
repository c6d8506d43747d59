//! Per-question orchestration: retrieve, curate, update the pool, ask the
//! feedback net whether to stop, otherwise analyse gaps and build the next
//! query. Finishes with one answer-generation call.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::bm25::Bm25Index;
use crate::evidence::{curate, EvidenceError, EvidencePool, EvidenceUnit};
use crate::feedback::{features, FeatureVector, FeedbackDecision, FeedbackError, FeedbackNet, RelevanceScorer};
use crate::gaps::{
    analyze_question, resolve_placeholders, synthesize_query, CoverageReport, EntityCoverage, GapError, GapList,
    QuestionAnalysis,
};
use crate::llm::{ChatModel, ChatRequest, LlmError, Slots, TemplateName, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Answer from the question alone.
    None,
    /// One retrieval with the question, then answer.
    Vanilla,
    /// Gap-driven follow-up queries for the full budget, no stopping rule.
    Fixed,
    /// Gap-driven follow-up queries gated by the feedback net.
    Rfm,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::None, Mode::Vanilla, Mode::Fixed, Mode::Rfm];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Vanilla => "vanilla",
            Mode::Fixed => "fixed",
            Mode::Rfm => "rfm",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown mode {s:?}; expected one of none, vanilla, fixed, rfm"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub max_iterations: usize,
    pub top_k: usize,
    pub theta: f64,
    /// Overrides the decision threshold stored with the feedback net.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub few_shot: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Rfm,
            max_iterations: 3,
            top_k: 5,
            theta: 0.1,
            tau: None,
            few_shot: 4,
        }
    }
}

impl PipelineConfig {
    pub fn with_mode(mode: Mode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_iterations == 0 {
            return Err("max_iterations must be at least 1".into());
        }
        if self.top_k == 0 {
            return Err("top_k must be at least 1".into());
        }
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(format!("theta must lie in (0, 1), got {}", self.theta));
        }
        if let Some(tau) = self.tau {
            if !(0.0..=1.0).contains(&tau) {
                return Err(format!("tau must lie in [0, 1], got {tau}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub doc_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: u32,
    pub query: String,
    pub retrieved: Vec<RetrievedRef>,
    pub curated: Vec<String>,
    pub evidence_added: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<FeedbackDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<Vec<EntityCoverage>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaps: Option<GapList>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub next_query: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub question: String,
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<QuestionAnalysis>,
    pub raw_answer: String,
    pub extracted_answer: String,
    pub r_step: usize,
    pub traces: Vec<IterationTrace>,
    pub evidence: Vec<EvidenceUnit>,
}

impl RunResult {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("run result serializes");
        s.push('\n');
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Evidence(#[from] EvidenceError),
    #[error(transparent)]
    Gap(#[from] GapError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error(transparent)]
    Llm(#[from] LlmError),
}

/// A failed run, with whatever iterations completed before the failure.
#[derive(Debug, thiserror::Error)]
#[error("{mode} run failed after {} iteration(s)", traces.len())]
pub struct PipelineError {
    pub question: String,
    pub mode: Mode,
    #[source]
    pub source: StageError,
    pub analysis: Option<QuestionAnalysis>,
    pub traces: Vec<IterationTrace>,
}

impl PipelineError {
    /// The partial trace document written when a run aborts.
    pub fn partial_json(&self) -> String {
        let value = serde_json::json!({
            "question": self.question,
            "mode": self.mode,
            "analysis": self.analysis,
            "error": self.source.to_string(),
            "r_step": self.traces.len(),
            "traces": self.traces,
        });
        let mut s = serde_json::to_string_pretty(&value).expect("partial trace serializes");
        s.push('\n');
        s
    }
}

/// Shared, read-only collaborators of a run. `curator` serves curation,
/// triple extraction and placeholder resolution; `answerer` the final answer.
#[derive(Clone, Copy)]
pub struct Deps<'a> {
    pub index: &'a Bm25Index,
    pub curator: &'a dyn ChatModel,
    pub answerer: &'a dyn ChatModel,
    pub scorer: Option<&'a dyn RelevanceScorer>,
    pub net: Option<&'a FeedbackNet>,
    pub templates: &'a TemplateSet,
}

/// Render the final-answer prompt with `few_shot` exemplars and call `llm` once.
pub fn generate_answer(
    q0: &str,
    pool: &EvidencePool,
    llm: &dyn ChatModel,
    templates: &TemplateSet,
    few_shot: usize,
) -> Result<String, LlmError> {
    let template = templates.get(TemplateName::FinalAnswer);
    let mut slots = Slots::new();
    slots.insert("examples", template.examples_block(few_shot)?);
    slots.insert(
        "evidence",
        if pool.is_empty() { "none".to_string() } else { pool.render() },
    );
    slots.insert("question", q0.to_string());
    let prompt = template.render(&slots)?;
    Ok(llm.complete(&ChatRequest::new(TemplateName::FinalAnswer, prompt))?.text)
}

fn marker() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)answer\s+is\b|answer\s*:").expect("valid regex"))
}

/// Text after the last "answer is" / "Answer:" marker up to the end of that
/// line, without trailing punctuation; the last non-empty line otherwise.
pub fn extract_answer(raw: &str) -> String {
    let tail = match marker().find_iter(raw).last() {
        Some(m) => {
            let rest = raw[m.end()..].trim_start();
            let rest = rest.strip_prefix(':').unwrap_or(rest);
            rest.lines().next().unwrap_or("")
        }
        None => raw.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or(""),
    };
    tail.trim()
        .trim_end_matches(|c: char| matches!(c, '.' | ',' | ';' | ':' | '!' | '?') || c.is_whitespace())
        .to_string()
}

struct Run<'a> {
    q0: &'a str,
    config: &'a PipelineConfig,
    deps: Deps<'a>,
    pool: EvidencePool,
    analysis: Option<QuestionAnalysis>,
    traces: Vec<IterationTrace>,
    resolved: Vec<String>,
}

impl Run<'_> {
    fn retrieve_and_curate(&mut self, iteration: u32, query: &str) -> Result<IterationTrace, StageError> {
        let passages = self.deps.index.retrieve(query, self.config.top_k);
        let units = curate(self.q0, query, &passages, self.deps.curator, self.deps.templates, iteration)?;
        let curated = units.iter().map(|u| u.text.clone()).collect();
        let evidence_added = self.pool.add_units(units);
        Ok(IterationTrace {
            iteration,
            query: query.to_string(),
            retrieved: passages
                .into_iter()
                .map(|p| RetrievedRef {
                    doc_id: p.doc_id,
                    score: p.score,
                })
                .collect(),
            curated,
            evidence_added,
            features: None,
            decision: None,
            coverage: None,
            gaps: None,
            next_query: None,
        })
    }

    /// Entities and triples from the question. A question without entities
    /// disables gap analysis and the feedback gate for the whole run.
    fn analyse(&mut self) -> Result<(), StageError> {
        match analyze_question(self.q0, self.deps.curator, self.deps.templates) {
            Ok(a) => {
                self.analysis = Some(a);
                Ok(())
            }
            Err(GapError::Degenerate) => {
                log::warn!("no entities in {:?}; falling back to the question as every query", self.q0);
                Ok(())
            }
            Err(e) => Err(e.into()),
        }
    }

    fn next_query(&mut self, trace: &mut IterationTrace) -> Result<String, StageError> {
        let Some(analysis) = &self.analysis else {
            return Ok(self.q0.to_string());
        };
        let report = CoverageReport::compute(analysis, &self.pool, self.config.theta);
        let entity_gaps = report.gaps();
        let mut known = analysis.entities.clone();
        known.extend(entity_gaps.iter().cloned());
        known.extend(self.resolved.iter().cloned());
        let new = resolve_placeholders(&analysis.triples, &self.pool, self.deps.curator, self.deps.templates, &known)?;
        self.resolved.extend(new.iter().cloned());
        let gaps = GapList::new(entity_gaps, new);
        let query = if gaps.is_empty() {
            let weakest = report.least_covered().unwrap_or_default();
            format!("{} {}", self.q0, weakest).trim().to_string()
        } else {
            synthesize_query(&gaps)
        };
        trace.coverage = Some(report.per_entity);
        trace.gaps = Some(gaps);
        Ok(query)
    }

    fn iterate(&mut self) -> Result<(), StageError> {
        let mode = self.config.mode;
        let budget = match mode {
            Mode::None => 0,
            Mode::Vanilla => 1,
            Mode::Fixed | Mode::Rfm => self.config.max_iterations,
        };
        let mut query = self.q0.to_string();
        for s in 0..budget {
            let mut trace = self.retrieve_and_curate(s as u32, &query)?;
            if s == 0 && matches!(mode, Mode::Fixed | Mode::Rfm) {
                if let Err(e) = self.analyse() {
                    self.traces.push(trace);
                    return Err(e);
                }
            }
            let step = self.gate_and_plan(&mut trace, s + 1 == budget);
            self.traces.push(trace);
            match step? {
                Some(next) => query = next,
                None => break,
            }
        }
        Ok(())
    }

    /// `None` when the run should stop after this iteration.
    fn gate_and_plan(&mut self, trace: &mut IterationTrace, last: bool) -> Result<Option<String>, StageError> {
        if self.config.mode == Mode::Rfm {
            if let Some(analysis) = &self.analysis {
                let (scorer, net) = rfm_deps(&self.deps)?;
                let fv = features(analysis, scorer, self.q0, &self.pool)?;
                let mut decision = net.forward(fv)?;
                if let Some(tau) = self.config.tau {
                    decision.sufficient = decision.probability >= tau;
                }
                let stop = decision.sufficient;
                trace.features = Some(fv);
                trace.decision = Some(decision);
                if stop {
                    return Ok(None);
                }
            }
        }
        if last {
            return Ok(None);
        }
        let next = self.next_query(trace)?;
        trace.next_query = Some(next.clone());
        Ok(Some(next))
    }
}

fn rfm_deps<'a>(deps: &Deps<'a>) -> Result<(&'a dyn RelevanceScorer, &'a FeedbackNet), StageError> {
    match (deps.scorer, deps.net) {
        (Some(s), Some(n)) => Ok((s, n)),
        _ => Err(StageError::Config("rfm mode needs a relevance scorer and a feedback net".into())),
    }
}

/// Answer one question under `config`.
// The error carries the partial run, so it is as large as a result.
#[allow(clippy::result_large_err)]
pub fn run_question(q0: &str, deps: Deps<'_>, config: &PipelineConfig) -> Result<RunResult, PipelineError> {
    let mut run = Run {
        q0,
        config,
        deps,
        pool: EvidencePool::new(),
        analysis: None,
        traces: Vec::new(),
        resolved: Vec::new(),
    };
    let outcome = config
        .validate()
        .map_err(StageError::Config)
        .and_then(|()| {
            if config.mode == Mode::Rfm {
                rfm_deps(&deps)?;
            }
            run.iterate()
        })
        .and_then(|()| {
            generate_answer(q0, &run.pool, deps.answerer, deps.templates, config.few_shot).map_err(StageError::from)
        });
    match outcome {
        Ok(raw_answer) => Ok(RunResult {
            question: q0.to_string(),
            mode: config.mode,
            analysis: run.analysis,
            extracted_answer: extract_answer(&raw_answer),
            raw_answer,
            r_step: run.traces.len(),
            traces: run.traces,
            evidence: run.pool.snapshot(),
        }),
        Err(source) => Err(PipelineError {
            question: q0.to_string(),
            mode: config.mode,
            source,
            analysis: run.analysis,
            traces: run.traces,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extraction_rules() {
        assert_eq!(extract_answer("The dog is famous, so the answer is Nipper."), "Nipper");
        assert_eq!(extract_answer("Answer: Małgorzata Braunek"), "Małgorzata Braunek");
        assert_eq!(extract_answer("Yes"), "Yes");
        assert_eq!(extract_answer(""), "");
        assert_eq!(extract_answer("the answer is: Paris!\n\n"), "Paris");
        assert_eq!(extract_answer("Answer: X. So THE ANSWER IS Y."), "Y");
        assert_eq!(extract_answer("Reasoning.\nNo marker here\n  \n"), "No marker here");
    }

    #[test]
    fn mode_parsing() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert_eq!("RFM".parse::<Mode>().unwrap(), Mode::Rfm);
        assert!("wo-rfm".parse::<Mode>().is_err());
    }

    #[test]
    fn config_validation() {
        assert!(PipelineConfig::default().validate().is_ok());
        let zero = PipelineConfig {
            max_iterations: 0,
            ..PipelineConfig::default()
        };
        assert!(zero.validate().is_err());
        let k = PipelineConfig {
            top_k: 0,
            ..PipelineConfig::default()
        };
        assert!(k.validate().is_err());
        let cfg: PipelineConfig = serde_json::from_str(r#"{"mode":"fixed"}"#).unwrap();
        assert_eq!(cfg, PipelineConfig::with_mode(Mode::Fixed));
    }
}
