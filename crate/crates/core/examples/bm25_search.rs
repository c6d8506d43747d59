//! Build a BM25 index over the bundled corpus and run a few queries.
//!
//!     cargo run --example bm25_search [-- "query text"]

use anyhow::Result;
use evidence_rag::bm25::{Bm25Index, Bm25Params};
use evidence_rag::corpus::ingest_corpus;

fn main() -> Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/corpus.jsonl");
    let index = Bm25Index::build(&ingest_corpus(path)?, Bm25Params::default())?;
    println!("{} documents, avg length {:.1}", index.doc_count(), index.avg_doc_length());

    let queries: Vec<String> = match std::env::args().nth(1) {
        Some(q) => vec![q],
        None => vec!["Xawery Żuławski mother".into(), "the dog on the RCA Victor logo".into(), "zeppelin".into()],
    };
    for q in &queries {
        println!("\n> {q}");
        let hits = index.retrieve(q, 3);
        if hits.is_empty() {
            println!("  (no document shares a term with the query)");
        }
        for hit in hits {
            println!("  {}. {:<20} {:.3}", hit.rank, hit.doc_id, hit.score);
        }
    }
    Ok(())
}
