//! Accumulate evidence across iterations: exact and near duplicates are
//! dropped, and entity counts follow token boundaries.
//!
//!     cargo run --example evidence_pool

use evidence_rag::evidence::{EvidencePool, EvidenceUnit};

fn unit(text: &str, iteration: u32) -> EvidenceUnit {
    EvidenceUnit {
        id: 0,
        text: text.into(),
        iteration,
        source_query: format!("query {iteration}"),
        source_doc_ids: vec![],
    }
}

fn main() {
    let mut pool = EvidencePool::new();
    let added = pool.add_units([
        unit("Nipper was a dog from Bristol who sat beside a gramophone in the famous painting.", 0),
        unit("nipper was a dog from BRISTOL who sat beside a gramophone in the famous painting", 0),
    ]);
    println!("first batch: {added} added");

    let added = pool.add_units([
        unit("Nipper was a dog from Bristol who sat beside a gramophone in the famous painting too.", 1),
        unit("The painting became the trademark of RCA Victor.", 1),
    ]);
    println!("second batch: {added} added (the near copy is dropped)");

    for entity in ["Nipper", "RCA Victor", "Victor Records", "nip"] {
        println!("{entity:>15}: in {} of {} units", pool.occurrence_count(entity), pool.len());
    }
    println!("\n{}", pool.render());
}
