//! Mini-batch gradient descent on the cross-entropy loss.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{context_pool, TrainingExample};
use super::{syntactic_feature_for, FeatureVector, FeedbackError, FeedbackNet, RelevanceScorer};
use crate::gaps::analyze_question;
use crate::llm::{ChatModel, TemplateSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Share of examples held out for validation by [`train`].
    pub val_fraction: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Self {
            lr: 0.05,
            epochs: 200,
            batch_size: 32,
            seed: 0,
            val_fraction: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full training-set loss after each epoch.
    pub epoch_losses: Vec<f64>,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
    pub val_loss: Option<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub positives: usize,
    pub warnings: Vec<String>,
}

/// Where the question entities for the syntactic feature come from.
pub enum EntitySource<'a> {
    /// Use `TrainingExample::entities`; missing entities are an error.
    Stored,
    /// Stored entities when present, otherwise run question analysis.
    Extract {
        llm: &'a dyn ChatModel,
        templates: &'a TemplateSet,
    },
}

pub fn accuracy(net: &FeedbackNet, data: &[(FeatureVector, u8)]) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let correct = data
        .iter()
        .filter(|(x, y)| {
            let p = super::logistic(net.logit(x.as_array()));
            (p >= net.tau) == (*y == 1)
        })
        .count();
    correct as f64 / data.len() as f64
}

fn as_batch(data: &[(FeatureVector, u8)]) -> Vec<([f64; 2], f64)> {
    data.iter().map(|(x, y)| (x.as_array(), f64::from(*y))).collect()
}

/// Fit on precomputed features. Deterministic for a given `hyper.seed`.
pub fn train_on_features(
    mut net: FeedbackNet,
    train: &[(FeatureVector, u8)],
    val: &[(FeatureVector, u8)],
    hyper: &Hyper,
) -> Result<(FeedbackNet, TrainReport), FeedbackError> {
    net.validate()?;
    if train.is_empty() {
        return Err(FeedbackError::Data("no training examples".into()));
    }
    if hyper.batch_size == 0 || !(hyper.lr.is_finite() && hyper.lr > 0.0) {
        return Err(FeedbackError::Data("batch size and learning rate must be positive".into()));
    }
    for (x, y) in train.iter().chain(val) {
        x.validate()?;
        if *y > 1 {
            return Err(FeedbackError::Data(format!("label {y} is not 0 or 1")));
        }
    }
    let mut warnings = Vec::new();
    let positives = train.iter().filter(|(_, y)| *y == 1).count();
    if positives == 0 || positives == train.len() {
        warnings.push(format!(
            "training set has a single class ({positives} positive of {})",
            train.len()
        ));
        log::warn!("{}", warnings.last().unwrap());
    }

    let samples = as_batch(train);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    let mut batch = Vec::with_capacity(hyper.batch_size);
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hyper.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| samples[i]));
            let (loss, grads) = net.loss_and_gradients(&batch);
            if !loss.is_finite() {
                return Err(FeedbackError::NonFinite("training loss".into()));
            }
            net.step(&grads, hyper.lr);
        }
        let loss = net.loss(&samples);
        if !loss.is_finite() {
            return Err(FeedbackError::NonFinite("training loss".into()));
        }
        epoch_losses.push(loss);
    }

    let final_loss = epoch_losses.last().copied().unwrap_or_else(|| net.loss(&samples));
    let report = TrainReport {
        final_loss,
        train_accuracy: accuracy(&net, train),
        val_accuracy: (!val.is_empty()).then(|| accuracy(&net, val)),
        val_loss: (!val.is_empty()).then(|| net.loss(&as_batch(val))),
        n_train: train.len(),
        n_val: val.len(),
        positives,
        warnings,
        epoch_losses,
    };
    Ok((net, report))
}

/// Features for one (question, context) pair. The context is split into
/// sentences to form the evidence pool.
pub fn example_features(
    example: &TrainingExample,
    scorer: &dyn RelevanceScorer,
    entities: &[String],
) -> Result<FeatureVector, FeedbackError> {
    let pool = context_pool(&example.context);
    let fv = FeatureVector {
        s_f: syntactic_feature_for(entities, &pool)?,
        g_f: super::semantic_feature(scorer, &example.question, &pool)?,
    };
    fv.validate()?;
    Ok(fv)
}

/// Compute features for every example, hold out `hyper.val_fraction` of them
/// (seeded shuffle) and fit.
pub fn train(
    net: FeedbackNet,
    data: &[TrainingExample],
    scorer: &dyn RelevanceScorer,
    source: EntitySource<'_>,
    hyper: &Hyper,
) -> Result<(FeedbackNet, TrainReport), FeedbackError> {
    let mut analyses: HashMap<&str, Vec<String>> = HashMap::new();
    let mut featurized = Vec::with_capacity(data.len());
    for ex in data {
        let entities = match (&ex.entities, &source) {
            (Some(e), _) => e.clone(),
            (None, EntitySource::Stored) => {
                return Err(FeedbackError::Data(format!(
                    "example for {:?} has no stored entities",
                    ex.question
                )))
            }
            (None, EntitySource::Extract { llm, templates }) => {
                if let Some(e) = analyses.get(ex.question.as_str()) {
                    e.clone()
                } else {
                    let a = analyze_question(&ex.question, *llm, templates)
                        .map_err(|e| FeedbackError::Data(e.to_string()))?;
                    analyses.insert(&ex.question, a.entities.clone());
                    a.entities
                }
            }
        };
        featurized.push((example_features(ex, scorer, &entities)?, ex.label));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed ^ 0x5eed_5711);
    featurized.shuffle(&mut rng);
    let n_val = ((featurized.len() as f64) * hyper.val_fraction.clamp(0.0, 0.5)).round() as usize;
    let n_val = n_val.min(featurized.len().saturating_sub(1));
    let (val, train) = featurized.split_at(n_val);
    train_on_features(net, train, val, hyper)
}
