pub mod bm25;
pub mod corpus;
pub mod eval;
pub mod evidence;
pub mod feedback;
pub mod gaps;
pub mod llm;
pub mod pipeline;
pub mod text;
