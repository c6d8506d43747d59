//! Two-hidden-layer feed-forward classifier over the sufficiency features,
//! with hand-written backpropagation.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{FeatureVector, FeedbackError};

pub const MODEL_FORMAT_VERSION: u32 = 1;
pub const INPUTS: usize = 2;
pub const DEFAULT_HIDDEN: (usize, usize) = (16, 8);
pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackDecision {
    pub logit: f64,
    pub probability: f64,
    pub sufficient: bool,
}

pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of one example computed from the logit, stable for
/// large |z|.
pub fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

/// Mean cross-entropy over predicted probabilities. A certain, correct
/// prediction contributes exactly zero.
pub fn cross_entropy(probabilities: &[f64], labels: &[f64]) -> f64 {
    assert_eq!(probabilities.len(), labels.len());
    if probabilities.is_empty() {
        return 0.0;
    }
    let sum: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let mut term = 0.0;
            if y != 0.0 {
                term += y * p.ln();
            }
            if y != 1.0 {
                term += (1.0 - y) * (1.0 - p).ln();
            }
            term
        })
        .sum();
    -sum / probabilities.len() as f64
}

/// Dense layer, weights row-major `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weights: vec![vec![0.0; inputs]; outputs],
            biases: vec![0.0; outputs],
        }
    }

    fn he_uniform(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let limit = (6.0 / inputs as f64).sqrt();
        Self {
            weights: (0..outputs)
                .map(|_| (0..inputs).map(|_| rng.random_range(-limit..limit)).collect())
                .collect(),
            biases: vec![0.01; outputs],
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.biases.len()
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().flatten().copied().chain(self.biases.iter().copied())
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weights.iter_mut().flatten().chain(self.biases.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackNet {
    pub layers: [Layer; 3],
    pub tau: f64,
}

/// Parameter gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: [Layer; 3],
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }
}

struct Trace {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    logit: f64,
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    dims: [usize; 4],
    hidden_activation: String,
    output_activation: String,
    tau: f64,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl FeedbackNet {
    pub fn zeros(hidden: (usize, usize)) -> Self {
        Self {
            layers: [
                Layer::zeros(INPUTS, hidden.0),
                Layer::zeros(hidden.0, hidden.1),
                Layer::zeros(hidden.1, 1),
            ],
            tau: DEFAULT_TAU,
        }
    }

    /// He-uniform weights from a seeded generator.
    pub fn seeded(hidden: (usize, usize), seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            layers: [
                Layer::he_uniform(INPUTS, hidden.0, &mut rng),
                Layer::he_uniform(hidden.0, hidden.1, &mut rng),
                Layer::he_uniform(hidden.1, 1, &mut rng),
            ],
            tau: DEFAULT_TAU,
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn dims(&self) -> [usize; 4] {
        [
            self.layers[0].inputs(),
            self.layers[0].outputs(),
            self.layers[1].outputs(),
            self.layers[2].outputs(),
        ]
    }

    pub fn validate(&self) -> Result<(), FeedbackError> {
        let [i, h1, h2, o] = self.dims();
        let chained = i == INPUTS
            && o == 1
            && h1 > 0
            && h2 > 0
            && self.layers[1].inputs() == h1
            && self.layers[2].inputs() == h2
            && self.layers.iter().all(|l| l.weights.iter().all(|r| r.len() == l.inputs()));
        if !chained {
            return Err(FeedbackError::Shape(format!("{:?}", self.dims())));
        }
        if !self.layers.iter().all(|l| l.params().all(f64::is_finite)) || !self.tau.is_finite() {
            return Err(FeedbackError::NonFinite("network parameters".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(FeedbackError::Shape(format!("tau {} outside (0, 1)", self.tau)));
        }
        Ok(())
    }

    fn trace(&self, x: [f64; 2]) -> Trace {
        let z1 = self.layers[0].apply(&x);
        let a1 = relu(z1.clone());
        let z2 = self.layers[1].apply(&a1);
        let a2 = relu(z2.clone());
        let logit = self.layers[2].apply(&a2)[0];
        Trace { z1, a1, z2, a2, logit }
    }

    pub fn logit(&self, x: [f64; 2]) -> f64 {
        self.trace(x).logit
    }

    pub fn forward(&self, features: FeatureVector) -> Result<FeedbackDecision, FeedbackError> {
        self.validate()?;
        features.validate()?;
        let logit = self.logit(features.as_array());
        if !logit.is_finite() {
            return Err(FeedbackError::NonFinite("logit".into()));
        }
        let probability = logistic(logit);
        Ok(FeedbackDecision {
            logit,
            probability,
            sufficient: probability >= self.tau,
        })
    }

    /// Mean cross-entropy over the batch and its gradient.
    pub fn loss_and_gradients(&self, batch: &[([f64; 2], f64)]) -> (f64, Gradients) {
        let mut grads = Gradients {
            layers: [
                Layer::zeros(self.layers[0].inputs(), self.layers[0].outputs()),
                Layer::zeros(self.layers[1].inputs(), self.layers[1].outputs()),
                Layer::zeros(self.layers[2].inputs(), 1),
            ],
        };
        if batch.is_empty() {
            return (0.0, grads);
        }
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for &(x, y) in batch {
            let t = self.trace(x);
            loss += bce_with_logit(t.logit, y);

            let d_logit = (logistic(t.logit) - y) * scale;
            let out = &mut grads.layers[2];
            out.biases[0] += d_logit;
            for (g, a) in out.weights[0].iter_mut().zip(&t.a2) {
                *g += d_logit * a;
            }

            let d_z2: Vec<f64> = (0..t.z2.len())
                .map(|j| if t.z2[j] > 0.0 { d_logit * self.layers[2].weights[0][j] } else { 0.0 })
                .collect();
            let mid = &mut grads.layers[1];
            for (j, dz) in d_z2.iter().enumerate() {
                mid.biases[j] += dz;
                for (g, a) in mid.weights[j].iter_mut().zip(&t.a1) {
                    *g += dz * a;
                }
            }

            let d_z1: Vec<f64> = (0..t.z1.len())
                .map(|i| {
                    if t.z1[i] <= 0.0 {
                        return 0.0;
                    }
                    d_z2.iter()
                        .enumerate()
                        .map(|(j, dz)| dz * self.layers[1].weights[j][i])
                        .sum()
                })
                .collect();
            let first = &mut grads.layers[0];
            for (i, dz) in d_z1.iter().enumerate() {
                first.biases[i] += dz;
                for (g, v) in first.weights[i].iter_mut().zip(&x) {
                    *g += dz * v;
                }
            }
        }
        (loss * scale, grads)
    }

    pub fn loss(&self, batch: &[([f64; 2], f64)]) -> f64 {
        if batch.is_empty() {
            return 0.0;
        }
        batch.iter().map(|&(x, y)| bce_with_logit(self.logit(x), y)).sum::<f64>() / batch.len() as f64
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn set_params(&mut self, values: &[f64]) {
        let mut it = values.iter();
        for p in self.layers.iter_mut().flat_map(|l| l.params_mut()) {
            *p = *it.next().expect("parameter vector too short");
        }
        assert!(it.next().is_none(), "parameter vector too long");
    }

    pub fn step(&mut self, grads: &Gradients, lr: f64) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, d) in layer.params_mut().zip(g.params()) {
                *p -= lr * d;
            }
        }
    }

    pub fn to_json(&self) -> String {
        let file = ModelFile {
            version: MODEL_FORMAT_VERSION,
            dims: self.dims(),
            hidden_activation: "relu".into(),
            output_activation: "logistic".into(),
            tau: self.tau,
            weights: self.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: self.layers.iter().map(|l| l.biases.clone()).collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(raw: &str) -> Result<Self, FeedbackError> {
        let file: ModelFile = serde_json::from_str(raw).map_err(|e| FeedbackError::Model(e.to_string()))?;
        if file.version != MODEL_FORMAT_VERSION {
            return Err(FeedbackError::Model(format!("unsupported model version {}", file.version)));
        }
        if file.hidden_activation != "relu" || file.output_activation != "logistic" {
            return Err(FeedbackError::Model("unsupported activations".into()));
        }
        if file.weights.len() != 3 || file.biases.len() != 3 {
            return Err(FeedbackError::Model("expected three layers".into()));
        }
        let mut layers = file
            .weights
            .into_iter()
            .zip(file.biases)
            .map(|(weights, biases)| Layer { weights, biases });
        let net = Self {
            layers: [layers.next().unwrap(), layers.next().unwrap(), layers.next().unwrap()],
            tau: file.tau,
        };
        net.validate()?;
        if net.dims() != file.dims {
            return Err(FeedbackError::Model(format!(
                "declared dims {:?} do not match weights {:?}",
                file.dims,
                net.dims()
            )));
        }
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FeedbackError> {
        fs::write(path, self.to_json()).map_err(|e| FeedbackError::Model(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FeedbackError> {
        let raw = fs::read_to_string(path).map_err(|e| FeedbackError::Model(e.to_string()))?;
        Self::from_json(&raw)
    }
}
