//! Both bundled case studies in every mode, replayed from the recorded
//! transcripts, with the per-iteration trace of the feedback loop.
//!
//!     cargo run --example case_studies

use anyhow::Result;
use evidence_rag::bm25::Bm25Index;
use evidence_rag::feedback::{FeedbackNet, ReplayScorer, ScoreTranscript};
use evidence_rag::llm::{ReplayClient, TemplateSet, Transcript};
use evidence_rag::pipeline::{run_question, Deps, Mode, PipelineConfig};

const QUESTIONS: [&str; 2] = [
    "Who is the mother of the director of film Polish-Russian War?",
    "what is the name of the rca victor dog?",
];

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

    for q in QUESTIONS {
        println!("\n{q}");
        for mode in Mode::ALL {
            let r = run_question(q, deps, &PipelineConfig::with_mode(mode))?;
            println!("  {:<8} r_step {}  -> {}", mode.as_str(), r.r_step, r.extracted_answer);
        }
        let r = run_question(q, deps, &PipelineConfig::with_mode(Mode::Rfm))?;
        for t in &r.traces {
            let fv = t.features.unwrap_or_default();
            let d = t.decision.as_ref().map(|d| d.sufficient).unwrap_or_default();
            println!(
                "    #{} {:?}: +{} units, s_f {:.2} g_f {:.2}, sufficient {d}",
                t.iteration, t.query, t.evidence_added, fv.s_f, fv.g_f
            );
            if let Some(next) = &t.next_query {
                println!("       next query {next:?}");
            }
        }
    }
    Ok(())
}
