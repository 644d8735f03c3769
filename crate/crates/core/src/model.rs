//! Trainable-model abstraction, the shared softmax classifier, and the
//! synthetic task generator.

use std::collections::hash_map::DefaultHasher;
use std::f64::consts::FRAC_PI_2;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::{FlatGradient, LayoutId};

/// Flat parameter vector θ tagged with its flattening layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    theta: Vec<f64>,
    layout: LayoutId,
}

impl ModelState {
    pub fn new(theta: Vec<f64>, layout: LayoutId) -> Result<Self> {
        if let Some(v) = theta.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite parameter {v}")));
        }
        Ok(Self { theta, layout })
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn layout(&self) -> LayoutId {
        self.layout
    }

    /// θ − lr·g as a new state.
    pub fn sgd_step(&self, g: &FlatGradient, lr: f64) -> Result<ModelState> {
        if g.layout() != self.layout {
            return Err(Error::Domain(format!(
                "gradient layout {:?} does not match parameters {:?}",
                g.layout(),
                self.layout
            )));
        }
        if !(lr.is_finite() && lr > 0.0) {
            return Err(Error::Domain(format!(
                "learning rate must be > 0, got {lr}"
            )));
        }
        let theta = self
            .theta
            .iter()
            .zip(g.values())
            .map(|(t, g)| t - lr * g)
            .collect();
        ModelState::new(theta, self.layout)
    }

    /// Hash of the exact parameter bits. Used to check that evaluation paths
    /// leave θ untouched.
    pub fn bit_hash(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.layout.hash(&mut h);
        for v in &self.theta {
            v.to_bits().hash(&mut h);
        }
        h.finish()
    }
}

/// One labeled example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

/// Labeled examples for one task (training or dev).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    task_id: String,
    examples: Vec<Example>,
}

impl TaskDataset {
    pub fn new(task_id: impl Into<String>, examples: Vec<Example>) -> Result<Self> {
        let task_id = task_id.into();
        let Some(first) = examples.first() else {
            return Err(Error::Domain(format!("task {task_id} has no examples")));
        };
        let dim = first.features.len();
        if let Some(i) = examples.iter().position(|e| e.features.len() != dim) {
            return Err(Error::Domain(format!(
                "task {task_id}: example {i} has dimension {}, expected {dim}",
                examples[i].features.len()
            )));
        }
        Ok(Self { task_id, examples })
    }

    pub fn task_id(&self) -> &str {
        &self.task_id
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.examples[0].features.len()
    }

    /// Uniform draw of `size` examples with replacement.
    pub fn sample_batch<R: Rng + ?Sized>(&self, rng: &mut R, size: usize) -> Vec<&Example> {
        (0..size)
            .map(|_| &self.examples[rng.random_range(0..self.examples.len())])
            .collect()
    }

    pub fn all(&self) -> Vec<&Example> {
        self.examples.iter().collect()
    }
}

/// Anything trainable by the data-weighting loop: a loss and its exact
/// gradient over a flat parameter vector.
pub trait Model: Sync {
    fn layout(&self) -> LayoutId;

    fn num_params(&self) -> usize;

    fn init_state(&self) -> ModelState {
        ModelState {
            theta: vec![0.0; self.num_params()],
            layout: self.layout(),
        }
    }

    fn loss(&self, state: &ModelState, batch: &[&Example]) -> Result<f64>;

    fn grad(&self, state: &ModelState, batch: &[&Example]) -> Result<FlatGradient>;
}

/// Multinomial logistic regression shared by every task.
///
/// Layout: the C×d weight matrix row-major, then the C biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftmaxClassifier {
    feature_dim: usize,
    n_classes: usize,
}

/// Structured view of the classifier parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierParams {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl SoftmaxClassifier {
    pub fn new(feature_dim: usize, n_classes: usize) -> Result<Self> {
        if feature_dim == 0 || n_classes < 2 {
            return Err(Error::Domain(format!(
                "classifier needs d >= 1 and C >= 2, got d={feature_dim}, C={n_classes}"
            )));
        }
        Ok(Self {
            feature_dim,
            n_classes,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn flatten(&self, params: &ClassifierParams) -> Result<ModelState> {
        if params.weights.len() != self.n_classes
            || params.bias.len() != self.n_classes
            || params.weights.iter().any(|r| r.len() != self.feature_dim)
        {
            return Err(Error::Domain(
                "parameter shapes do not match classifier".into(),
            ));
        }
        let mut theta: Vec<f64> = params.weights.iter().flatten().copied().collect();
        theta.extend_from_slice(&params.bias);
        ModelState::new(theta, self.layout())
    }

    pub fn unflatten(&self, state: &ModelState) -> Result<ClassifierParams> {
        self.check_state(state)?;
        let (w, b) = state.theta.split_at(self.n_classes * self.feature_dim);
        Ok(ClassifierParams {
            weights: w.chunks(self.feature_dim).map(<[f64]>::to_vec).collect(),
            bias: b.to_vec(),
        })
    }

    /// Class scores for one input.
    pub fn logits(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let d = self.feature_dim;
        let bias = &theta[self.n_classes * d..];
        (0..self.n_classes)
            .map(|c| {
                let row = &theta[c * d..(c + 1) * d];
                row.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + bias[c]
            })
            .collect()
    }

    pub fn predict(&self, state: &ModelState, x: &[f64]) -> usize {
        argmax(&self.logits(&state.theta, x))
    }

    pub fn accuracy(&self, state: &ModelState, examples: &[Example]) -> f64 {
        let hits = examples
            .iter()
            .filter(|e| self.predict(state, &e.features) == e.label)
            .count();
        hits as f64 / examples.len() as f64
    }

    fn check_state(&self, state: &ModelState) -> Result<()> {
        if state.layout != self.layout() || state.theta.len() != self.num_params() {
            return Err(Error::Domain(format!(
                "state with layout {:?} and {} parameters does not fit {self:?}",
                state.layout,
                state.theta.len()
            )));
        }
        Ok(())
    }

    fn check_batch(&self, batch: &[&Example]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::Domain("empty batch".into()));
        }
        for e in batch {
            if e.features.len() != self.feature_dim {
                return Err(Error::Domain(format!(
                    "example has dimension {}, classifier expects {}",
                    e.features.len(),
                    self.feature_dim
                )));
            }
            if e.label >= self.n_classes {
                return Err(Error::Domain(format!(
                    "label {} out of range for {} classes",
                    e.label, self.n_classes
                )));
            }
        }
        Ok(())
    }
}

impl Model for SoftmaxClassifier {
    fn layout(&self) -> LayoutId {
        LayoutId::new("softmax-linear", &[self.feature_dim, self.n_classes])
    }

    fn num_params(&self) -> usize {
        self.n_classes * (self.feature_dim + 1)
    }

    fn loss(&self, state: &ModelState, batch: &[&Example]) -> Result<f64> {
        self.check_state(state)?;
        self.check_batch(batch)?;
        let total: f64 = batch
            .iter()
            .map(|e| {
                let z = self.logits(&state.theta, &e.features);
                log_sum_exp(&z) - z[e.label]
            })
            .sum();
        Ok((total / batch.len() as f64).max(0.0))
    }

    fn grad(&self, state: &ModelState, batch: &[&Example]) -> Result<FlatGradient> {
        self.check_state(state)?;
        self.check_batch(batch)?;
        let d = self.feature_dim;
        let bias_at = self.n_classes * d;
        let mut g = vec![0.0; self.num_params()];
        for e in batch {
            let z = self.logits(&state.theta, &e.features);
            let lse = log_sum_exp(&z);
            for (c, zc) in z.iter().enumerate() {
                // ∂ℓ/∂z_c = softmax_c − [c = y]
                let delta = (zc - lse).exp() - if c == e.label { 1.0 } else { 0.0 };
                for (gw, x) in g[c * d..(c + 1) * d].iter_mut().zip(&e.features) {
                    *gw += delta * x;
                }
                g[bias_at + c] += delta;
            }
        }
        let scale = 1.0 / batch.len() as f64;
        g.iter_mut().for_each(|v| *v *= scale);
        FlatGradient::new(g, self.layout())
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn argmax(z: &[f64]) -> usize {
    z.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
            if v > best.1 {
                (i, v)
            } else {
                best
            }
        })
        .0
}

/// Recipe for one synthetic classification task.
///
/// Labels come from argmax over C linear scores whose weight rows are the
/// shared reference rows rotated by `alpha` in each coordinate plane
/// (0,1), (2,3), ... . `alpha = 0` reproduces the reference task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: String,
    pub n_examples: usize,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default = "default_n_classes")]
    pub n_classes: usize,
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub label_noise: f64,
    pub seed: u64,
    /// Seed of the shared reference boundary. Tasks of one suite share it.
    #[serde(default)]
    pub reference_seed: u64,
}

fn default_feature_dim() -> usize {
    8
}

fn default_n_classes() -> usize {
    4
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_examples == 0 {
            return Err(Error::Domain(format!(
                "task {}: n_examples must be >= 1",
                self.task_id
            )));
        }
        if self.feature_dim == 0 || self.n_classes < 2 {
            return Err(Error::Domain(format!(
                "task {}: need feature_dim >= 1 and n_classes >= 2",
                self.task_id
            )));
        }
        if !(0.0..=FRAC_PI_2 + 1e-12).contains(&self.alpha) {
            return Err(Error::Domain(format!(
                "task {}: alpha {} outside [0, pi/2]",
                self.task_id, self.alpha
            )));
        }
        if !(0.0..0.5).contains(&self.label_noise) {
            return Err(Error::Domain(format!(
                "task {}: label noise {} outside [0, 0.5)",
                self.task_id, self.label_noise
            )));
        }
        Ok(())
    }

    /// Reference weight rows (C×d standard Gaussian).
    pub fn reference_weights(&self) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.reference_seed);
        (0..self.n_classes)
            .map(|_| {
                (0..self.feature_dim)
                    .map(|_| rng.sample(StandardNormal))
                    .collect()
            })
            .collect()
    }

    /// Ground-truth rows for this task: reference rows rotated by alpha.
    pub fn task_weights(&self) -> Vec<Vec<f64>> {
        let (s, c) = self.alpha.sin_cos();
        self.reference_weights()
            .into_iter()
            .map(|mut w| {
                for k in (0..self.feature_dim.saturating_sub(1)).step_by(2) {
                    let (a, b) = (w[k], w[k + 1]);
                    w[k] = c * a - s * b;
                    w[k + 1] = s * a + c * b;
                }
                w
            })
            .collect()
    }
}

/// Draws a dataset from `spec`. Deterministic in `spec.seed`.
pub fn generate_task(spec: &TaskSpec) -> Result<TaskDataset> {
    spec.validate()?;
    let weights = spec.task_weights();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let examples = (0..spec.n_examples)
        .map(|_| {
            let x: Vec<f64> = (0..spec.feature_dim)
                .map(|_| rng.sample(StandardNormal))
                .collect();
            let scores: Vec<f64> = weights
                .iter()
                .map(|w| w.iter().zip(&x).map(|(w, x)| w * x).sum())
                .collect();
            let mut label = argmax(&scores);
            if spec.label_noise > 0.0 && rng.random::<f64>() < spec.label_noise {
                // uniform over the other classes
                let shift = rng.random_range(1..spec.n_classes);
                label = (label + shift) % spec.n_classes;
            }
            Example { features: x, label }
        })
        .collect();
    TaskDataset::new(spec.task_id.clone(), examples)
}
