//! Score all four modes on the bundled evaluation set, in parallel, and write
//! the CSV report to stdout.
//!
//!     cargo run --example eval_modes

use anyhow::Result;
use evidence_rag::bm25::Bm25Index;
use evidence_rag::eval::{evaluate, read_eval_set};
use evidence_rag::feedback::{FeedbackNet, ReplayScorer, ScoreTranscript};
use evidence_rag::llm::{ReplayClient, TemplateSet, Transcript};
use evidence_rag::pipeline::{Deps, Mode, PipelineConfig};

fn main() -> Result<()> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let index = Bm25Index::load(format!("{fixtures}/index.json"))?;
    let llm = ReplayClient::strict(Transcript::load(format!("{fixtures}/transcript.json"))?);
    let scorer = ReplayScorer::new(ScoreTranscript::load(format!("{fixtures}/scores.json"))?);
    let net = FeedbackNet::load(format!("{fixtures}/feedback_net.json"))?;
    let templates = TemplateSet::default();
    let deps = Deps {
        index: &index,
        curator: &llm,
        answerer: &llm,
        scorer: Some(&scorer),
        net: Some(&net),
        templates: &templates,
    };
    let dataset = read_eval_set(format!("{fixtures}/eval.jsonl"))?;
    let configs: Vec<_> = Mode::ALL.into_iter().map(PipelineConfig::with_mode).collect();
    let report = evaluate(&dataset, deps, &configs, 4)?.report;
    print!("{}\n{}", report.summary_table(), report.to_csv());
    Ok(())
}
