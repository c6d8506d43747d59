//! The retrieval-feedback model: sufficiency features, the classifier that
//! consumes them, its training loop and its training-data generator.

pub mod data;
pub mod net;
pub mod scorer;
pub mod synthetic;
pub mod train;

pub use data::{context_pool, generate_training_data, read_jsonl, split_sentences, write_jsonl, Category, Counts, GenerationReport, GoldRecord, TrainingExample};
pub use net::{cross_entropy, logistic, FeedbackDecision, FeedbackNet, Gradients, DEFAULT_HIDDEN, DEFAULT_TAU};
pub use scorer::{lexical_fallback_score, LexicalScorer, RelevanceScorer, RemoteScorer, ReplayScorer, RecordingScorer, RuleScorer, ScoreRule, ScoreTranscript, ScorerError};
pub use train::{train, train_on_features, EntitySource, Hyper, TrainReport};
pub use synthetic::{corner_dataset, corner_dataset_at};

use serde::{Deserialize, Serialize};

use crate::evidence::EvidencePool;
use crate::gaps::{entity_coverage, QuestionAnalysis};

#[derive(Debug, thiserror::Error)]
pub enum FeedbackError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("feature out of range: {0}")]
    FeatureRange(String),
    #[error("invalid network shape {0}")]
    Shape(String),
    #[error("model file: {0}")]
    Model(String),
    #[error("analysis has no entities")]
    NoEntities,
    #[error(transparent)]
    Scorer(#[from] ScorerError),
    #[error("training data: {0}")]
    Data(String),
}

/// Syntactic coverage and semantic relevance, both in `[0, 1]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub s_f: f64,
    pub g_f: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; 2] {
        [self.s_f, self.g_f]
    }

    pub fn validate(&self) -> Result<(), FeedbackError> {
        for (name, v) in [("s_f", self.s_f), ("g_f", self.g_f)] {
            if !v.is_finite() {
                return Err(FeedbackError::NonFinite(name.into()));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(FeedbackError::FeatureRange(format!("{name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Mean entity coverage over the entities extracted from the question.
pub fn syntactic_feature(analysis: &QuestionAnalysis, pool: &EvidencePool) -> Result<f64, FeedbackError> {
    syntactic_feature_for(&analysis.entities, pool)
}

pub fn syntactic_feature_for(entities: &[String], pool: &EvidencePool) -> Result<f64, FeedbackError> {
    if entities.is_empty() {
        return Err(FeedbackError::NoEntities);
    }
    let total: f64 = entities.iter().map(|e| entity_coverage(pool, e)).sum();
    Ok(total / entities.len() as f64)
}

/// Relevance of the rendered pool to the original question; zero for an
/// empty pool without consulting the scorer.
pub fn semantic_feature(scorer: &dyn RelevanceScorer, q0: &str, pool: &EvidencePool) -> Result<f64, FeedbackError> {
    if pool.is_empty() {
        return Ok(0.0);
    }
    Ok(scorer.score(q0, &pool.render())?)
}

pub fn features(
    analysis: &QuestionAnalysis,
    scorer: &dyn RelevanceScorer,
    q0: &str,
    pool: &EvidencePool,
) -> Result<FeatureVector, FeedbackError> {
    let fv = FeatureVector {
        s_f: syntactic_feature(analysis, pool)?,
        g_f: semantic_feature(scorer, q0, pool)?,
    };
    fv.validate()?;
    Ok(fv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evidence::EvidenceUnit;

    fn pool(texts: &[&str]) -> EvidencePool {
        let mut p = EvidencePool::new();
        p.add_units(texts.iter().map(|t| EvidenceUnit {
            id: 0,
            text: t.to_string(),
            iteration: 0,
            source_query: String::new(),
            source_doc_ids: vec![],
        }));
        p
    }

    fn analysis(entities: &[&str]) -> QuestionAnalysis {
        QuestionAnalysis {
            entities: entities.iter().map(|s| s.to_string()).collect(),
            triples: vec![],
        }
    }

    #[test]
    fn mean_of_coverages() {
        // Alpha in both units (1.0), Beta in one of two (0.5)
        let p = pool(&["Alpha and Beta.", "Alpha alone."]);
        assert_eq!(syntactic_feature(&analysis(&["Alpha", "Beta"]), &p).unwrap(), 0.75);
    }

    #[test]
    fn empty_pool_and_full_coverage() {
        assert_eq!(syntactic_feature(&analysis(&["A", "B"]), &EvidencePool::new()).unwrap(), 0.0);
        assert_eq!(syntactic_feature(&analysis(&["Alpha"]), &pool(&["Alpha."])).unwrap(), 1.0);
    }

    #[test]
    fn zero_entities_is_an_error() {
        assert!(matches!(
            syntactic_feature(&analysis(&[]), &pool(&["x"])),
            Err(FeedbackError::NoEntities)
        ));
    }

    struct Panicking;
    impl RelevanceScorer for Panicking {
        fn score(&self, _: &str, _: &str) -> Result<f64, ScorerError> {
            panic!("scorer must not be called")
        }
    }

    #[test]
    fn semantic_feature_guards_empty_pool() {
        assert_eq!(semantic_feature(&Panicking, "q", &EvidencePool::new()).unwrap(), 0.0);
    }

    #[test]
    fn semantic_feature_lexical_extremes() {
        let q = "what is the name of the rca victor dog";
        assert_eq!(semantic_feature(&LexicalScorer, q, &pool(&[q])).unwrap(), 1.0);
        assert_eq!(semantic_feature(&LexicalScorer, q, &pool(&["Bristol harbour"])).unwrap(), 0.0);
    }
}
