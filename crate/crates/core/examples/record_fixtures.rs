//! Regenerates the offline fixture bundle in `fixtures/`.
//!
//! The hand-written `rules.json` and `score_rules.json` stand in for the chat
//! model and the relevance scorer. Every mode is run over `eval.jsonl` through
//! recording wrappers, and the exchanges are saved as replay transcripts
//! together with the BM25 index and a small trained feedback net.
//!
//!     cargo run --example record_fixtures [-- <fixtures dir>]

use std::path::PathBuf;

use anyhow::{ensure, Context, Result};
use evidence_rag::bm25::{Bm25Index, Bm25Params};
use evidence_rag::corpus::ingest_corpus;
use evidence_rag::eval::{evaluate, read_eval_set};
use evidence_rag::feedback::{corner_dataset_at, train_on_features, FeedbackNet, Hyper, RecordingScorer, RuleScorer};
use evidence_rag::llm::{RecordingClient, RuleClient, TemplateSet};
use evidence_rag::pipeline::{Deps, Mode, PipelineConfig};

/// Stop once the semantic score is high, provided the entities are not absent.
const CORNER: (f64, f64) = (0.3, 0.6);

fn main() -> Result<()> {
    env_logger::init();
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures"));

    let corpus = ingest_corpus(dir.join("corpus.jsonl"))?;
    let index = Bm25Index::build(&corpus, Bm25Params::default())?;
    index.save(dir.join("index.json"))?;

    let data = corner_dataset_at(2000, 0.0, 11, CORNER);
    let (train, val) = data.split_at(1800);
    let (net, report) = train_on_features(FeedbackNet::seeded((16, 8), 11), train, val, &Hyper::default())?;
    eprintln!(
        "feedback net: train acc {:.3}, val acc {:.3}",
        report.train_accuracy,
        report.val_accuracy.unwrap_or_default()
    );
    net.save(dir.join("feedback_net.json"))?;

    let llm = RecordingClient::new(RuleClient::load(dir.join("rules.json")).context("rules.json")?);
    let scorer = RecordingScorer::new(RuleScorer::load(dir.join("score_rules.json")).context("score_rules.json")?);
    let templates = TemplateSet::default();
    let deps = Deps {
        index: &index,
        curator: &llm,
        answerer: &llm,
        scorer: Some(&scorer),
        net: Some(&net),
        templates: &templates,
    };
    let dataset = read_eval_set(dir.join("eval.jsonl"))?;
    let configs: Vec<PipelineConfig> = Mode::ALL.into_iter().map(PipelineConfig::with_mode).collect();
    let evaluation = evaluate(&dataset, deps, &configs, 1)?;
    for row in &evaluation.report.rows {
        ensure!(row.error.is_none(), "{} / {}: {:?}", row.id, row.mode, row.error);
        eprintln!("{:<7} {:<8} r_step {}  {}", row.id, row.mode, row.r_step, row.extracted_answer);
    }

    llm.transcript().save(dir.join("transcript.json"))?;
    scorer.transcript().save(dir.join("scores.json"))?;
    eprint!("{}", evaluation.report.summary_table());
    Ok(())
}
