//! Softmax data scorer over training datasets.
//!
//! The scorer holds one logit per dataset. Its softmax is the sampling
//! distribution, and it is moved by REINFORCE ascent on per-dataset rewards.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::reward::RewardVector;

pub const DEFAULT_SCORER_STEP_SIZE: f64 = 0.1;

/// Probability vector over datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub const SUM_TOLERANCE: f64 = 1e-9;

    /// Validates that `probs` is non-empty, non-negative and sums to one.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Domain("distribution over zero datasets".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidState(format!("invalid probability {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::InvalidState(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { probs })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Domain("distribution over zero datasets".into()));
        }
        Ok(Self {
            probs: vec![1.0 / n as f64; n],
        })
    }

    /// Normalizes log-weights with the max-subtraction trick.
    pub(crate) fn from_log_weights(logits: &[f64]) -> Result<Self> {
        if logits.is_empty() {
            return Err(Error::Domain("distribution over zero datasets".into()));
        }
        if let Some(v) = logits.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite log-weight {v}")));
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        Ok(Self {
            probs: exps.into_iter().map(|e| e / denom).collect(),
        })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Largest absolute per-entry difference.
    pub fn max_abs_diff(&self, other: &Distribution) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Learned scorer parameters ψ plus the REINFORCE step size.
#[derive(Debug, Clone, PartialEq)]
pub struct ScorerState {
    psi: Vec<f64>,
    step_size: f64,
    /// Subtract the mean reward before updating. Off by default.
    pub mean_baseline: bool,
}

impl ScorerState {
    pub fn new(psi: Vec<f64>, step_size: f64) -> Result<Self> {
        if psi.is_empty() {
            return Err(Error::InvalidState(
                "scorer needs at least one dataset".into(),
            ));
        }
        if let Some(v) = psi.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidState(format!("non-finite psi entry {v}")));
        }
        // Zero is allowed: it freezes the scorer.
        if !(step_size.is_finite() && step_size >= 0.0) {
            return Err(Error::InvalidState(format!(
                "invalid scorer step size {step_size}"
            )));
        }
        Ok(Self {
            psi,
            step_size,
            mean_baseline: false,
        })
    }

    /// ψ = ln(size), so the initial distribution is proportional to dataset size.
    pub fn init_proportional(sizes: &[u64]) -> Result<Self> {
        Self::init_proportional_with_step(sizes, DEFAULT_SCORER_STEP_SIZE)
    }

    pub fn init_proportional_with_step(sizes: &[u64], step_size: f64) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Domain("no dataset sizes given".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Domain(format!("dataset {i} has size 0")));
        }
        Self::new(sizes.iter().map(|&s| (s as f64).ln()).collect(), step_size)
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn n(&self) -> usize {
        self.psi.len()
    }

    pub fn softmax_distribution(&self) -> Result<Distribution> {
        Distribution::from_log_weights(&self.psi)
    }

    /// ∇_ψ log P(i; ψ) = e_i − softmax(ψ).
    pub fn log_prob_grad(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.n() {
            return Err(Error::Domain(format!(
                "dataset index {i} out of range for {} datasets",
                self.n()
            )));
        }
        let dist = self.softmax_distribution()?;
        let mut g: Vec<f64> = dist.probs.iter().map(|p| -p).collect();
        g[i] += 1.0;
        Ok(g)
    }

    /// Gradient-ascent step ψ ← ψ + η Σ_i R_i ∇_ψ log P(i; ψ). Returns the new state.
    pub fn reinforce_update(&self, rewards: &RewardVector) -> Result<ScorerState> {
        self.reinforce_update_raw(rewards.rewards())
    }

    pub fn reinforce_update_raw(&self, rewards: &[f64]) -> Result<ScorerState> {
        if rewards.len() != self.n() {
            return Err(Error::Domain(format!(
                "reward vector has length {}, scorer has {} datasets",
                rewards.len(),
                self.n()
            )));
        }
        if let Some((i, r)) = rewards.iter().enumerate().find(|(_, r)| !r.is_finite()) {
            return Err(Error::InvalidReward(format!("reward {r} for dataset {i}")));
        }
        let baseline = if self.mean_baseline {
            rewards.iter().sum::<f64>() / rewards.len() as f64
        } else {
            0.0
        };
        let probs = self.softmax_distribution()?.probs;
        // Σ_i R_i (e_i − p) = R − (Σ R) p
        let total: f64 = rewards.iter().map(|r| r - baseline).sum();
        let psi = self
            .psi
            .iter()
            .zip(rewards)
            .zip(&probs)
            .map(|((psi, r), p)| psi + self.step_size * ((r - baseline) - total * p))
            .collect();
        let mut next = ScorerState::new(psi, self.step_size)?;
        next.mean_baseline = self.mean_baseline;
        Ok(next)
    }

    /// One ψ value per line, round-trippable decimal.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for v in &self.psi {
            writeln!(out, "{v}").expect("writing to String");
        }
        out
    }

    pub fn from_text(text: &str, step_size: f64) -> Result<Self> {
        let psi = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(lineno, l)| {
                l.trim().parse::<f64>().map_err(|e| {
                    Error::Parse(format!("psi line {}: {e}: {:?}", lineno + 1, l.trim()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(psi, step_size)
    }
}
