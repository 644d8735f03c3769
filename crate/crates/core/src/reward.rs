//! Gradient-alignment rewards for the data scorer.
//!
//! A dataset is rewarded when a training step on it moves the model along
//! the dev-loss descent direction. Three estimators are provided:
//!
//! * [`RewardMode::Standard`]: cosine between the training gradient and the
//!   *summed* dev gradient, measured after a hypothetical step on the
//!   training batch.
//! * [`RewardMode::Stabilized`]: mean over dev sets of the per-set cosine,
//!   which has lower variance when the dev gradients are noisy.
//! * [`RewardMode::MovingAverage`]: replaces the fresh training gradient by
//!   a per-dataset exponential moving average of the gradients seen during
//!   training. Stores one flat gradient per dataset.

use std::fmt;
use std::fs::OpenOptions;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelState, TaskDataset};

/// Norm below which a gradient counts as zero for cosine purposes.
pub const DEGENERATE_NORM: f64 = 1e-12;

pub const DEFAULT_DEV_BATCH_SIZE: usize = 32;

/// Weight kept on the old average per observation (new observation gets 0.1).
pub const DEFAULT_MOVING_AVERAGE_DECAY: f64 = 0.9;

/// Identifies a parameter flattening order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayoutId(u64);

impl LayoutId {
    /// FNV-1a over the tag and dimensions; stable across platforms.
    pub fn new(tag: &str, dims: &[usize]) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        tag.bytes().for_each(&mut eat);
        for d in dims {
            (*d as u64).to_le_bytes().into_iter().for_each(&mut eat);
        }
        LayoutId(h)
    }

    pub fn raw(&self) -> u64 {
        self.0
    }
}

/// All partial derivatives of a model, flattened in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatGradient {
    values: Vec<f64>,
    layout: LayoutId,
}

impl FlatGradient {
    pub fn new(values: Vec<f64>, layout: LayoutId) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Numerical {
                task: "<gradient>".into(),
                detail: format!("non-finite gradient entry {v}"),
            });
        }
        Ok(Self { values, layout })
    }

    pub fn zeros(len: usize, layout: LayoutId) -> Self {
        Self {
            values: vec![0.0; len],
            layout,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn layout(&self) -> LayoutId {
        self.layout
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn check_layout(&self, other: &FlatGradient) -> Result<()> {
        if self.layout != other.layout || self.values.len() != other.values.len() {
            return Err(Error::Domain(format!(
                "gradient layouts differ: {:?}/{} vs {:?}/{}",
                self.layout,
                self.values.len(),
                other.layout,
                other.values.len()
            )));
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &FlatGradient) -> Result<()> {
        self.check_layout(other)?;
        self.values
            .iter_mut()
            .zip(&other.values)
            .for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn scaled(&self, c: f64) -> FlatGradient {
        FlatGradient {
            values: self.values.iter().map(|v| v * c).collect(),
            layout: self.layout,
        }
    }
}

/// Cosine similarity plus a flag for the zero-norm convention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub value: f64,
    /// One of the operands had norm below [`DEGENERATE_NORM`]; `value` is 0.
    pub degenerate: bool,
}

pub fn cosine(a: &FlatGradient, b: &FlatGradient) -> Result<Alignment> {
    a.check_layout(b)?;
    let (na, nb) = (a.norm(), b.norm());
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        return Ok(Alignment {
            value: 0.0,
            degenerate: true,
        });
    }
    let dot: f64 = a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum();
    Ok(Alignment {
        value: (dot / (na * nb)).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    Standard,
    Stabilized,
    MovingAverage,
}

impl RewardMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RewardMode::Standard => "standard",
            RewardMode::Stabilized => "stabilized",
            RewardMode::MovingAverage => "moving_average",
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "standard" => Ok(RewardMode::Standard),
            "stabilized" => Ok(RewardMode::Stabilized),
            "moving_average" => Ok(RewardMode::MovingAverage),
            other => Err(Error::Parse(format!("unknown reward mode {other:?}"))),
        }
    }
}

/// Per-dataset rewards for one scorer update.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    rewards: Vec<f64>,
    degenerate: Vec<bool>,
    mode: RewardMode,
    update_index: usize,
}

impl RewardVector {
    pub fn new(
        rewards: Vec<f64>,
        degenerate: Vec<bool>,
        mode: RewardMode,
        update_index: usize,
    ) -> Result<Self> {
        if rewards.len() != degenerate.len() {
            return Err(Error::Domain(
                "reward and flag vectors differ in length".into(),
            ));
        }
        if let Some(r) = rewards
            .iter()
            .find(|r| !(r.is_finite() && (-1.0..=1.0).contains(*r)))
        {
            return Err(Error::InvalidReward(format!("reward {r} outside [-1, 1]")));
        }
        Ok(Self {
            rewards,
            degenerate,
            mode,
            update_index,
        })
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn degenerate(&self) -> &[bool] {
        &self.degenerate
    }

    pub fn mode(&self) -> RewardMode {
        self.mode
    }

    pub fn update_index(&self) -> usize {
        self.update_index
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Combines one training gradient with the dev gradients of the active sets.
///
/// Standard: cos(Σ_j g_j, g_train). Stabilized: (1/m) Σ_j cos(g_j, g_train).
pub fn alignment_reward(
    mode: RewardMode,
    train_grad: &FlatGradient,
    dev_grads: &[FlatGradient],
) -> Result<Alignment> {
    if dev_grads.is_empty() {
        return Err(Error::Domain("no dev gradients to align with".into()));
    }
    match mode {
        RewardMode::Standard | RewardMode::MovingAverage => {
            let mut sum = FlatGradient::zeros(train_grad.values.len(), train_grad.layout);
            for g in dev_grads {
                sum.add_assign(g)?;
            }
            cosine(&sum, train_grad)
        }
        RewardMode::Stabilized => {
            let mut total = 0.0;
            let mut degenerate = false;
            for g in dev_grads {
                let a = cosine(g, train_grad)?;
                total += a.value;
                degenerate |= a.degenerate;
            }
            Ok(Alignment {
                value: (total / dev_grads.len() as f64).clamp(-1.0, 1.0),
                degenerate,
            })
        }
    }
}

/// Batch sizes and step size used while estimating rewards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    /// Learning rate of the hypothetical step θ' = θ − lr·g_train.
    pub lr: f64,
    pub train_batch_size: usize,
    pub dev_batch_size: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            train_batch_size: 32,
            dev_batch_size: DEFAULT_DEV_BATCH_SIZE,
        }
    }
}

fn checked_grad<M: Model>(
    model: &M,
    state: &ModelState,
    data: &TaskDataset,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<FlatGradient> {
    let batch = data.sample_batch(rng, batch_size);
    model.grad(state, &batch).map_err(|e| match e {
        Error::Numerical { detail, .. } => Error::Numerical {
            task: data.task_id().to_string(),
            detail,
        },
        other => other,
    })
}

fn check_inputs(train_len: usize, dev: &[TaskDataset], active_dev: &[usize]) -> Result<()> {
    if train_len == 0 {
        return Err(Error::Domain("no training datasets".into()));
    }
    if dev.is_empty() || active_dev.is_empty() {
        return Err(Error::Domain("no active dev sets".into()));
    }
    if let Some(&j) = active_dev.iter().find(|&&j| j >= dev.len()) {
        return Err(Error::Domain(format!("active dev index {j} out of range")));
    }
    Ok(())
}

/// Step-ahead reward estimation, one round per training dataset.
///
/// For each dataset: sample a batch, take its gradient at θ, form
/// θ' = θ − lr·g_train, sample one batch from every active dev set and take
/// the dev gradients at θ'. The rounds are independent and run in parallel;
/// each gets its own random stream derived from `rng`, so results do not
/// depend on scheduling. `state` is only read.
#[allow(clippy::too_many_arguments)]
pub fn estimate_rewards<M: Model, R: Rng + ?Sized>(
    model: &M,
    state: &ModelState,
    train: &[TaskDataset],
    dev: &[TaskDataset],
    active_dev: &[usize],
    mode: RewardMode,
    config: &RewardConfig,
    update_index: usize,
    rng: &mut R,
) -> Result<RewardVector> {
    if mode == RewardMode::MovingAverage {
        return Err(Error::Usage(
            "moving-average rewards need the stored averages; use estimate_rewards_moving_average"
                .into(),
        ));
    }
    check_inputs(train.len(), dev, active_dev)?;
    let seeds: Vec<u64> = (0..train.len()).map(|_| rng.random()).collect();

    let per_task: Vec<Alignment> = train
        .par_iter()
        .zip(seeds)
        .map(|(data, seed)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g_train = checked_grad(model, state, data, config.train_batch_size, &mut rng)?;
            let ahead = state.sgd_step(&g_train, config.lr)?;
            let dev_grads = active_dev
                .iter()
                .map(|&j| checked_grad(model, &ahead, &dev[j], config.dev_batch_size, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            alignment_reward(mode, &g_train, &dev_grads)
        })
        .collect::<Result<_>>()?;

    RewardVector::new(
        per_task.iter().map(|a| a.value).collect(),
        per_task.iter().map(|a| a.degenerate).collect(),
        mode,
        update_index,
    )
}

/// Per-dataset exponential moving averages of training gradients.
///
/// Memory is one flat gradient per dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MovingAverageState {
    decay: f64,
    averages: Vec<FlatGradient>,
    observations: Vec<u64>,
}

impl MovingAverageState {
    /// Zero-initialized averages. `decay` is the weight kept on the old value.
    pub fn new(n: usize, num_params: usize, layout: LayoutId, decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&decay) {
            return Err(Error::Domain(format!(
                "moving-average decay {decay} outside [0, 1)"
            )));
        }
        Ok(Self {
            decay,
            averages: vec![FlatGradient::zeros(num_params, layout); n],
            observations: vec![0; n],
        })
    }

    /// Rebuilds stored averages, e.g. from a checkpoint.
    pub fn from_parts(
        decay: f64,
        averages: &[Vec<f64>],
        observations: &[u64],
        layout: LayoutId,
    ) -> Result<Self> {
        if averages.len() != observations.len() {
            return Err(Error::Domain(
                "average and observation counts differ".into(),
            ));
        }
        let mut state = Self::new(averages.len(), 0, layout, decay)?;
        state.averages = averages
            .iter()
            .map(|v| FlatGradient::new(v.clone(), layout))
            .collect::<Result<_>>()?;
        state.observations = observations.to_vec();
        Ok(state)
    }

    /// avg_i ← decay·avg_i + (1 − decay)·g
    pub fn observe(&mut self, dataset: usize, g: &FlatGradient) -> Result<()> {
        let avg = self
            .averages
            .get_mut(dataset)
            .ok_or_else(|| Error::Domain(format!("dataset index {dataset} out of range")))?;
        avg.check_layout(g)?;
        let keep = self.decay;
        avg.values
            .iter_mut()
            .zip(&g.values)
            .for_each(|(a, g)| *a = keep * *a + (1.0 - keep) * g);
        self.observations[dataset] += 1;
        Ok(())
    }

    pub fn average(&self, dataset: usize) -> Option<&FlatGradient> {
        self.averages.get(dataset)
    }

    pub fn observations(&self) -> &[u64] {
        &self.observations
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }
}

/// Rewards from stored gradient averages against dev gradients at θ.
#[allow(clippy::too_many_arguments)]
pub fn estimate_rewards_moving_average<M: Model, R: Rng + ?Sized>(
    averages: &MovingAverageState,
    model: &M,
    state: &ModelState,
    dev: &[TaskDataset],
    active_dev: &[usize],
    config: &RewardConfig,
    update_index: usize,
    rng: &mut R,
) -> Result<RewardVector> {
    check_inputs(averages.averages.len(), dev, active_dev)?;
    let mut stream = ChaCha8Rng::seed_from_u64(rng.random());
    let dev_grads = active_dev
        .iter()
        .map(|&j| checked_grad(model, state, &dev[j], config.dev_batch_size, &mut stream))
        .collect::<Result<Vec<_>>>()?;
    let per_task = averages
        .averages
        .iter()
        .map(|avg| alignment_reward(RewardMode::MovingAverage, avg, &dev_grads))
        .collect::<Result<Vec<_>>>()?;
    RewardVector::new(
        per_task.iter().map(|a| a.value).collect(),
        per_task.iter().map(|a| a.degenerate).collect(),
        RewardMode::MovingAverage,
        update_index,
    )
}

/// Empirical reward variance for one reward mode.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceSummary {
    pub mode: RewardMode,
    /// Number of reward vectors summarized.
    pub updates: usize,
    /// Sample variance over updates, per dataset.
    pub per_dataset: Vec<f64>,
    /// Mean of the per-dataset variances.
    pub pooled: f64,
}

/// Sample variance of `values` (n − 1 denominator). `None` for fewer than two.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    Some(values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

/// Variance summaries for each mode with at least two recorded vectors of
/// consistent length. Modes with less history are omitted.
pub fn reward_variance_report(history: &[RewardVector]) -> Vec<VarianceSummary> {
    let mut out = Vec::new();
    for mode in [
        RewardMode::Standard,
        RewardMode::Stabilized,
        RewardMode::MovingAverage,
    ] {
        let rows: Vec<&RewardVector> = history.iter().filter(|r| r.mode == mode).collect();
        let Some(first) = rows.first() else { continue };
        let n = first.len();
        if rows.len() < 2 || rows.iter().any(|r| r.len() != n) {
            continue;
        }
        let per_dataset: Vec<f64> = (0..n)
            .map(|i| {
                let col: Vec<f64> = rows.iter().map(|r| r.rewards[i]).collect();
                sample_variance(&col).unwrap_or(0.0)
            })
            .collect();
        let pooled = per_dataset.iter().sum::<f64>() / n as f64;
        out.push(VarianceSummary {
            mode,
            updates: rows.len(),
            per_dataset,
            pooled,
        });
    }
    out
}

/// One row of `rewards.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub update_index: usize,
    pub dataset_id: String,
    pub reward: f64,
    pub mode: RewardMode,
}

impl RewardRow {
    pub fn from_vector(rewards: &RewardVector, dataset_ids: &[String]) -> Vec<RewardRow> {
        rewards
            .rewards
            .iter()
            .zip(dataset_ids)
            .map(|(&reward, id)| RewardRow {
                update_index: rewards.update_index,
                dataset_id: id.clone(),
                reward,
                mode: rewards.mode,
            })
            .collect()
    }
}

/// Appends one update's rewards to `path`, writing the header if the file is new.
pub fn append_rewards_csv(
    path: &Path,
    rewards: &RewardVector,
    dataset_ids: &[String],
) -> Result<()> {
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new()
        .has_headers(fresh)
        .from_writer(file);
    for row in RewardRow::from_vector(rewards, dataset_ids) {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Example;
    use proptest::prelude::*;

    fn layout() -> LayoutId {
        LayoutId::new("test", &[2])
    }

    fn g(v: &[f64]) -> FlatGradient {
        FlatGradient::new(v.to_vec(), LayoutId::new("test", &[v.len()])).unwrap()
    }

    /// Model whose gradient at any θ is the mean feature vector of the batch,
    /// so tests can inject exact gradients through one-example datasets.
    pub(crate) struct FeatureGradient {
        pub dim: usize,
    }

    impl Model for FeatureGradient {
        fn layout(&self) -> LayoutId {
            LayoutId::new("test", &[self.dim])
        }

        fn num_params(&self) -> usize {
            self.dim
        }

        fn loss(&self, state: &ModelState, _batch: &[&Example]) -> Result<f64> {
            Ok(state.theta().iter().map(|t| t * t).sum())
        }

        fn grad(&self, _state: &ModelState, batch: &[&Example]) -> Result<FlatGradient> {
            let mut v = vec![0.0; self.dim];
            for e in batch {
                v.iter_mut().zip(&e.features).for_each(|(a, b)| *a += b);
            }
            let n = batch.len() as f64;
            FlatGradient::new(v.into_iter().map(|x| x / n).collect(), self.layout())
        }
    }

    fn constant_set(id: &str, v: &[f64]) -> TaskDataset {
        TaskDataset::new(
            id,
            vec![Example {
                features: v.to_vec(),
                label: 0,
            }],
        )
        .unwrap()
    }

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine(&g(&[1.0, 0.0]), &g(&[1.0, 0.0])).unwrap().value, 1.0);
        assert_eq!(cosine(&g(&[1.0, 0.0]), &g(&[0.0, 1.0])).unwrap().value, 0.0);
        assert!((cosine(&g(&[1.0, 2.0]), &g(&[-1.0, -2.0])).unwrap().value + 1.0).abs() < 1e-15);
        let z = cosine(&g(&[0.0, 0.0]), &g(&[1.0, 0.0])).unwrap();
        assert_eq!(
            z,
            Alignment {
                value: 0.0,
                degenerate: true
            }
        );
        let other = FlatGradient::new(vec![1.0, 0.0], LayoutId::new("other", &[2])).unwrap();
        assert!(matches!(
            cosine(&g(&[1.0, 0.0]), &other),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn layout_id_is_stable() {
        assert_eq!(layout(), LayoutId::new("test", &[2]));
        assert_ne!(layout(), LayoutId::new("test", &[3]));
    }

    #[test]
    fn worked_two_dimensional_example() {
        let model = FeatureGradient { dim: 2 };
        let state = model.init_state();
        let train = [constant_set("a", &[1.0, 0.0])];
        let dev = [
            constant_set("d1", &[1.0, 0.0]),
            constant_set("d2", &[0.0, 1.0]),
        ];
        let cfg = RewardConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let std = estimate_rewards(
            &model,
            &state,
            &train,
            &dev,
            &[0, 1],
            RewardMode::Standard,
            &cfg,
            0,
            &mut rng,
        )
        .unwrap();
        let stab = estimate_rewards(
            &model,
            &state,
            &train,
            &dev,
            &[0, 1],
            RewardMode::Stabilized,
            &cfg,
            0,
            &mut rng,
        )
        .unwrap();
        assert!((std.rewards()[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((stab.rewards()[0] - 0.5).abs() < 1e-12);

        // restricting to the first dev set
        let only = estimate_rewards(
            &model,
            &state,
            &train,
            &dev,
            &[1],
            RewardMode::Standard,
            &cfg,
            0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(only.rewards()[0], 0.0);
    }

    #[test]
    fn orthogonal_train_gradient_gets_zero() {
        let model = FeatureGradient { dim: 3 };
        let state = model.init_state();
        let train = [constant_set("a", &[0.0, 0.0, 2.0])];
        let dev = [
            constant_set("d1", &[1.0, 0.0, 0.0]),
            constant_set("d2", &[0.0, -3.0, 0.0]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for mode in [RewardMode::Standard, RewardMode::Stabilized] {
            let r = estimate_rewards(
                &model,
                &state,
                &train,
                &dev,
                &[0, 1],
                mode,
                &RewardConfig::default(),
                0,
                &mut rng,
            )
            .unwrap();
            assert_eq!(r.rewards(), &[0.0]);
        }
    }

    #[test]
    fn empty_active_set_and_moving_average_mode_rejected() {
        let model = FeatureGradient { dim: 2 };
        let state = model.init_state();
        let train = [constant_set("a", &[1.0, 0.0])];
        let dev = [constant_set("d", &[1.0, 0.0])];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = RewardConfig::default();
        assert!(estimate_rewards(
            &model,
            &state,
            &train,
            &dev,
            &[],
            RewardMode::Standard,
            &cfg,
            0,
            &mut rng
        )
        .is_err());
        assert!(estimate_rewards(
            &model,
            &state,
            &[],
            &dev,
            &[0],
            RewardMode::Standard,
            &cfg,
            0,
            &mut rng
        )
        .is_err());
        assert!(matches!(
            estimate_rewards(
                &model,
                &state,
                &train,
                &dev,
                &[0],
                RewardMode::MovingAverage,
                &cfg,
                0,
                &mut rng
            ),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn moving_average_ema_matches_scalar_oracle() {
        let mut ma = MovingAverageState::new(2, 2, layout(), 0.5).unwrap();
        ma.observe(0, &g(&[4.0, -2.0])).unwrap();
        ma.observe(0, &g(&[1.0, 6.0])).unwrap();
        // zero init: 0.5·(0.5·0 + 0.5·g1) + 0.5·g2 = 0.25·g1 + 0.5·g2
        let want = [0.25 * 4.0 + 0.5 * 1.0, 0.25 * -2.0 + 0.5 * 6.0];
        assert_eq!(ma.average(0).unwrap().values(), &want);
        assert_eq!(ma.observations(), &[2, 0]);
        assert!(MovingAverageState::new(1, 1, layout(), 1.0).is_err());
    }

    #[test]
    fn moving_average_rewards() {
        let model = FeatureGradient { dim: 2 };
        let state = model.init_state();
        let dev = [
            constant_set("d1", &[1.0, 0.0]),
            constant_set("d2", &[0.0, 1.0]),
        ];
        let mut ma = MovingAverageState::new(2, 2, model.layout(), 0.0).unwrap();
        let fresh = g(&[3.0, 1.0]);
        ma.observe(0, &fresh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = estimate_rewards_moving_average(
            &ma,
            &model,
            &state,
            &dev,
            &[0, 1],
            &RewardConfig::default(),
            4,
            &mut rng,
        )
        .unwrap();
        let direct = cosine(&g(&[1.0, 1.0]), &fresh).unwrap().value;
        assert!((r.rewards()[0] - direct).abs() < 1e-15);
        // never observed: zero average
        assert_eq!(r.rewards()[1], 0.0);
        assert_eq!(r.degenerate(), &[false, true]);
        assert_eq!(r.mode(), RewardMode::MovingAverage);
        assert_eq!(r.update_index(), 4);
    }

    #[test]
    fn variance_report_edge_cases() {
        let v = |r: f64, mode| RewardVector::new(vec![r, 0.5], vec![false; 2], mode, 0).unwrap();
        assert!(reward_variance_report(&[v(0.1, RewardMode::Standard)]).is_empty());
        let constant = [
            v(0.3, RewardMode::Standard),
            v(0.3, RewardMode::Standard),
            v(0.3, RewardMode::Standard),
        ];
        let rep = reward_variance_report(&constant);
        assert_eq!(rep.len(), 1);
        assert_eq!(rep[0].pooled, 0.0);
        let mixed = [
            v(0.0, RewardMode::Stabilized),
            v(1.0, RewardMode::Stabilized),
        ];
        let rep = reward_variance_report(&mixed);
        assert_eq!(rep[0].per_dataset, vec![0.5, 0.0]);
        assert_eq!(rep[0].pooled, 0.25);
    }

    #[test]
    fn reward_vector_rejects_out_of_range() {
        assert!(RewardVector::new(vec![1.5], vec![false], RewardMode::Standard, 0).is_err());
        assert!(RewardVector::new(vec![f64::NAN], vec![false], RewardMode::Standard, 0).is_err());
    }

    #[test]
    fn rewards_csv_appends_with_single_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rewards.csv");
        let ids = vec!["a".to_string(), "b".to_string()];
        for k in 0..3 {
            let r = RewardVector::new(
                vec![0.1 * k as f64, -0.2],
                vec![false; 2],
                RewardMode::Stabilized,
                k,
            )
            .unwrap();
            append_rewards_csv(&path, &r, &ids).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "update_index,dataset_id,reward,mode"
        );
        assert_eq!(text.lines().count(), 7);
        let rows: Vec<RewardRow> = csv::Reader::from_path(&path)
            .unwrap()
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .unwrap();
        assert_eq!(rows[5].update_index, 2);
        assert_eq!(rows[5].dataset_id, "b");
    }

    fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, n)
    }

    proptest! {
        #[test]
        fn rewards_are_bounded(
            (train, devs) in (1usize..6).prop_flat_map(|d| (vec_strategy(d), proptest::collection::vec(vec_strategy(d), 1..6)))
        ) {
            let t = g(&train);
            let ds: Vec<FlatGradient> = devs.iter().map(|d| g(d)).collect();
            for mode in [RewardMode::Standard, RewardMode::Stabilized] {
                let a = alignment_reward(mode, &t, &ds).unwrap();
                prop_assert!((-1.0..=1.0).contains(&a.value));
            }
        }

        #[test]
        fn single_dev_set_modes_agree(train in vec_strategy(4), dev in vec_strategy(4)) {
            let (t, d) = (g(&train), [g(&dev)]);
            let a = alignment_reward(RewardMode::Standard, &t, &d).unwrap();
            let b = alignment_reward(RewardMode::Stabilized, &t, &d).unwrap();
            prop_assert!((a.value - b.value).abs() < 1e-12);
        }

        #[test]
        fn cosine_terms_are_scale_invariant(
            train in vec_strategy(4),
            devs in proptest::collection::vec(vec_strategy(4), 2..5),
            c in 0.01f64..100.0,
        ) {
            let t = g(&train);
            let ds: Vec<FlatGradient> = devs.iter().map(|d| g(d)).collect();
            for mode in [RewardMode::Standard, RewardMode::Stabilized] {
                let base = alignment_reward(mode, &t, &ds).unwrap().value;
                let scaled_train = alignment_reward(mode, &t.scaled(c), &ds).unwrap().value;
                prop_assert!((base - scaled_train).abs() < 1e-9);
                let all_dev: Vec<FlatGradient> = ds.iter().map(|d| d.scaled(c)).collect();
                prop_assert!((base - alignment_reward(mode, &t, &all_dev).unwrap().value).abs() < 1e-9);
            }
            // Rescaling a single dev set leaves its own Stabilized term alone.
            let single = cosine(&ds[0], &t).unwrap().value;
            prop_assert!((single - cosine(&ds[0].scaled(c), &t).unwrap().value).abs() < 1e-9);
        }
    }

    #[test]
    fn rescaling_one_dev_set_moves_standard_but_not_stabilized() {
        let t = g(&[1.0, 0.2]);
        let ds = [g(&[1.0, 0.0]), g(&[0.0, 1.0])];
        let scaled = [g(&[1.0, 0.0]), g(&[0.0, 5.0])];
        let std_a = alignment_reward(RewardMode::Standard, &t, &ds)
            .unwrap()
            .value;
        let std_b = alignment_reward(RewardMode::Standard, &t, &scaled)
            .unwrap()
            .value;
        assert!((std_a - std_b).abs() > 1e-3);
        let st_a = alignment_reward(RewardMode::Stabilized, &t, &ds)
            .unwrap()
            .value;
        let st_b = alignment_reward(RewardMode::Stabilized, &t, &scaled)
            .unwrap()
            .value;
        assert!((st_a - st_b).abs() < 1e-12);
    }
}
