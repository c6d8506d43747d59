//! Question analysis, coverage and gap-driven query synthesis on the first
//! case study, with the chat model served from the bundled rules.
//!
//!     cargo run --example gap_analysis

use anyhow::Result;
use evidence_rag::bm25::Bm25Index;
use evidence_rag::evidence::{curate, EvidencePool};
use evidence_rag::gaps::{analyze_question, resolve_placeholders, synthesize_query, CoverageReport, GapList};
use evidence_rag::llm::{RuleClient, TemplateSet};

const QUESTION: &str = "Who is the mother of the director of film Polish-Russian War?";

fn main() -> Result<()> {
    let fixtures = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures");
    let index = Bm25Index::load(format!("{fixtures}/index.json"))?;
    let llm = RuleClient::load(format!("{fixtures}/rules.json"))?;
    let templates = TemplateSet::default();

    let analysis = analyze_question(QUESTION, &llm, &templates)?;
    println!("entities: {:?}", analysis.entities);
    for t in &analysis.triples {
        println!("triple:   {t}");
    }

    let mut pool = EvidencePool::new();
    let passages = index.retrieve(QUESTION, 5);
    pool.add_units(curate(QUESTION, QUESTION, &passages, &llm, &templates, 0)?);
    println!("\nevidence after one retrieval:\n{}", pool.render());

    let report = CoverageReport::compute(&analysis, &pool, 0.1);
    for c in &report.per_entity {
        println!("coverage {:<22} {:.2}", c.entity, c.coverage);
    }
    let mut known = analysis.entities.clone();
    known.extend(report.gaps());
    let resolutions = resolve_placeholders(&analysis.triples, &pool, &llm, &templates, &known)?;
    let gaps = GapList::new(report.gaps(), resolutions);
    println!("\ngaps {:?}, resolved {:?}", gaps.entity_gaps, gaps.resolutions);
    println!("next query: {}", synthesize_query(&gaps));
    Ok(())
}
