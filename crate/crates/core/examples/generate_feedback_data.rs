//! Build labelled (question, context) examples from gold records, then
//! featurize them with the lexical scorer.
//!
//!     cargo run --example generate_feedback_data [-- out.jsonl]

use anyhow::Result;
use evidence_rag::feedback::train::example_features;
use evidence_rag::feedback::{generate_training_data, read_jsonl, write_jsonl, GoldRecord, LexicalScorer};

fn main() -> Result<()> {
    let gold: Vec<GoldRecord> = read_jsonl(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/gold_sample.jsonl"))?;
    let (examples, report) = generate_training_data(&gold, None, 42)?;
    println!(
        "{} records -> {} sufficient, {} insufficient, {} partial",
        report.records_used, report.sufficient, report.insufficient, report.partial
    );
    for ex in &examples {
        let entities = ex.entities.clone().unwrap_or_default();
        let fv = example_features(ex, &LexicalScorer, &entities)?;
        let category = ex.category.map(|c| format!("{c:?}")).unwrap_or_default();
        println!("[{}] {:<13} s_f {:.2} g_f {:.2}  {}", ex.label, category, fv.s_f, fv.g_f, ex.question);
    }
    if let Some(out) = std::env::args().nth(1) {
        write_jsonl(&out, &examples)?;
        println!("wrote {out}");
    }
    Ok(())
}
