//! Ask one question against a live OpenAI-compatible endpoint.
//!
//!     LLM_ENDPOINT=http://localhost:8000/v1/chat/completions \
//!         cargo run --example live_chat -- "question" [model]
//!
//! Uses the bundled corpus, the lexical relevance scorer (or SCORER_ENDPOINT)
//! and the bundled feedback net.

use anyhow::{Context, Result};
use evidence_rag::bm25::Bm25Index;
use evidence_rag::feedback::{FeedbackNet, LexicalScorer, RelevanceScorer, RemoteScorer};
use evidence_rag::llm::{LiveClient, TemplateSet};
use evidence_rag::pipeline::{run_question, Deps, Mode, PipelineConfig};

fn main() -> Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let question = args.next().context("usage: live_chat <question> [model]")?;
    let model = args.next().unwrap_or_else(|| "default".into());

    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let index = Bm25Index::load(format!("{fixtures}/index.json"))?;
    let net = FeedbackNet::load(format!("{fixtures}/feedback_net.json"))?;
    let llm = LiveClient::from_env(model)?;
    let scorer: Box<dyn RelevanceScorer> = match RemoteScorer::from_env() {
        Some(s) => Box::new(s),
        None => Box::new(LexicalScorer),
    };
    let templates = TemplateSet::default();
    let deps = Deps {
        index: &index,
        curator: &llm,
        answerer: &llm,
        scorer: Some(scorer.as_ref()),
        net: Some(&net),
        templates: &templates,
    };
    match run_question(&question, deps, &PipelineConfig::with_mode(Mode::Rfm)) {
        Ok(r) => println!("{} (after {} retrievals)", r.extracted_answer, r.r_step),
        Err(e) => {
            eprintln!("{e}: {}", e.source);
            eprintln!("{}", e.partial_json());
            std::process::exit(1);
        }
    }
    Ok(())
}
