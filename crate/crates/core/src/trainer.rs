//! The outer training loop: sample data under the current distribution,
//! train θ, estimate rewards, update ψ.
//!
//! Fixed heuristic policies run through the same loop with the scorer
//! disabled, so baselines and learned runs differ only in where the
//! sampling distribution comes from.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::{Checkpoint, RngState};
use crate::dev_aggregation::{aggregate_dev_loss, select_active_sets, DevAggregation};
use crate::error::{Error, Result};
use crate::model::{Model, ModelState, TaskDataset};
use crate::policies::{heuristic_distribution, sample_dataset, CorpusStats, PolicyKind};
use crate::reward::{
    estimate_rewards, estimate_rewards_moving_average, MovingAverageState, RewardConfig,
    RewardMode, RewardVector, DEFAULT_DEV_BATCH_SIZE, DEFAULT_MOVING_AVERAGE_DECAY,
};
use crate::scorer::{Distribution, ScorerState, DEFAULT_SCORER_STEP_SIZE};

/// Everything that defines one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub policy: PolicyKind,
    pub aggregation: DevAggregation,
    /// Scorer updates run under Regular aggregation before switching.
    pub warmup_updates: usize,
    /// Training examples drawn between scorer updates (M).
    pub examples_per_update: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub scorer_step_size: f64,
    pub total_steps: usize,
    pub seed: u64,
    pub dev_batch_size: usize,
    /// Keep the first post-warmup Low/High subset instead of re-selecting.
    pub freeze_subset: bool,
    /// Subtract the mean reward in REINFORCE updates.
    pub mean_baseline: bool,
    pub moving_average_decay: f64,
    /// Stop after this many scorer updates without improvement of the
    /// aggregated dev loss. `None` disables early stopping.
    pub early_stopping_patience: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            policy: PolicyKind::Learned(RewardMode::Stabilized),
            aggregation: DevAggregation::Regular,
            warmup_updates: 0,
            examples_per_update: 2000,
            batch_size: 32,
            lr: 0.1,
            scorer_step_size: DEFAULT_SCORER_STEP_SIZE,
            total_steps: 5000,
            seed: 0,
            dev_batch_size: DEFAULT_DEV_BATCH_SIZE,
            freeze_subset: false,
            mean_baseline: false,
            moving_average_decay: DEFAULT_MOVING_AVERAGE_DECAY,
            early_stopping_patience: None,
        }
    }
}

impl RunConfig {
    /// Training steps between scorer updates: ⌈M / batch_size⌉.
    pub fn steps_per_update(&self) -> usize {
        self.examples_per_update.div_ceil(self.batch_size.max(1))
    }

    /// Number of complete scorer-update phases within `total_steps`.
    pub fn total_updates(&self) -> usize {
        self.total_steps / self.steps_per_update().max(1)
    }

    /// Checks the config against the number of dev sets before any training.
    pub fn validate(&self, n_dev: usize) -> Result<()> {
        let positive = [
            ("examples_per_update", self.examples_per_update),
            ("batch_size", self.batch_size),
            ("total_steps", self.total_steps),
            ("dev_batch_size", self.dev_batch_size),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("{name} must be >= 1")));
            }
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.scorer_step_size.is_finite() && self.scorer_step_size >= 0.0) {
            return Err(Error::config(format!(
                "scorer_step_size must be >= 0, got {}",
                self.scorer_step_size
            )));
        }
        if let PolicyKind::Temperature(t) = self.policy {
            if !(t.is_finite() && t > 0.0) {
                return Err(Error::config(format!("temperature must be > 0, got {t}")));
            }
        }
        if !(0.0..1.0).contains(&self.moving_average_decay) {
            return Err(Error::config("moving_average_decay must lie in [0, 1)"));
        }
        self.aggregation
            .validate(n_dev)
            .map_err(|e| Error::config(e.to_string()))?;
        if self.aggregation != DevAggregation::Regular && self.warmup_updates > self.total_updates()
        {
            return Err(Error::config(format!(
                "warmup_updates {} exceeds the {} scorer updates of this run",
                self.warmup_updates,
                self.total_updates()
            )));
        }
        Ok(())
    }
}

/// Aggregation in force at each scorer update (1-based), in order.
pub fn priority_switch(config: &RunConfig, total_updates: usize) -> Vec<DevAggregation> {
    (1..=total_updates)
        .map(|u| aggregation_at(config, u))
        .collect()
}

fn aggregation_at(config: &RunConfig, update_index: usize) -> DevAggregation {
    if update_index <= config.warmup_updates {
        DevAggregation::Regular
    } else {
        config.aggregation
    }
}

/// Full-dev-set evaluation of one task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevEval {
    pub loss: f64,
    pub perplexity: f64,
}

const EVAL_CHUNK: usize = 256;

/// Mean dev loss over every example of each dev set (no sampling), with
/// perplexity exp(loss).
pub fn evaluate<M: Model>(
    model: &M,
    state: &ModelState,
    devsets: &[TaskDataset],
) -> Result<Vec<DevEval>> {
    devsets
        .iter()
        .map(|d| {
            let mut total = 0.0;
            for chunk in d.examples().chunks(EVAL_CHUNK) {
                let refs: Vec<_> = chunk.iter().collect();
                total += model.loss(state, &refs)? * chunk.len() as f64;
            }
            let loss = total / d.len() as f64;
            if !loss.is_finite() {
                return Err(Error::Numerical {
                    task: d.task_id().to_string(),
                    detail: format!("dev loss {loss}"),
                });
            }
            Ok(DevEval {
                loss,
                perplexity: loss.exp(),
            })
        })
        .collect()
}

/// Log row written at step 0 and at the end of every training phase.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub step: usize,
    /// 0 for the initial row, then the 1-based scorer-update count.
    pub update_index: usize,
    pub dev: Vec<DevEval>,
    /// Sampling distribution in force from this step on.
    pub distribution: Vec<f64>,
    /// Batches drawn per dataset during the phase ending here.
    pub usage_counts: Vec<u64>,
    pub rewards: Option<RewardVector>,
    pub aggregation: DevAggregation,
    pub active: Vec<usize>,
    /// θ hash was identical before and after reward estimation.
    pub theta_preserved: bool,
}

impl UpdateRecord {
    pub fn dev_losses(&self) -> Vec<f64> {
        self.dev.iter().map(|d| d.loss).collect()
    }
}

/// Time series of one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub task_ids: Vec<String>,
    pub dev_ids: Vec<String>,
    records: Vec<UpdateRecord>,
}

impl MetricsLog {
    pub fn new(task_ids: Vec<String>, dev_ids: Vec<String>) -> Self {
        Self {
            task_ids,
            dev_ids,
            records: Vec::new(),
        }
    }

    pub fn push(&mut self, record: UpdateRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.step <= last.step {
                return Err(Error::InvalidState(format!(
                    "log step {} does not follow {}",
                    record.step, last.step
                )));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[UpdateRecord] {
        &self.records
    }

    pub fn last(&self) -> Option<&UpdateRecord> {
        self.records.last()
    }

    pub fn reward_history(&self) -> Vec<RewardVector> {
        self.records
            .iter()
            .filter_map(|r| r.rewards.clone())
            .collect()
    }

    /// Aggregations actually applied at each scorer update.
    pub fn aggregation_schedule(&self) -> Vec<DevAggregation> {
        self.records
            .iter()
            .filter(|r| r.update_index > 0)
            .map(|r| r.aggregation)
            .collect()
    }

    pub fn final_dev_losses(&self) -> Vec<f64> {
        self.last()
            .map(UpdateRecord::dev_losses)
            .unwrap_or_default()
    }

    /// Arithmetic mean over tasks of the final dev perplexities.
    pub fn mean_final_perplexity(&self) -> f64 {
        let Some(last) = self.last() else {
            return f64::NAN;
        };
        last.dev.iter().map(|d| d.perplexity).sum::<f64>() / last.dev.len() as f64
    }
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model_state: ModelState,
    /// Final scorer for learned policies.
    pub scorer: Option<ScorerState>,
    pub log: MetricsLog,
    pub steps_done: usize,
    pub stopped_early: bool,
}

/// Mutable loop state; everything a checkpoint needs to resume exactly.
struct LoopState {
    theta: ModelState,
    scorer: Option<ScorerState>,
    moving_average: Option<MovingAverageState>,
    rng: ChaCha8Rng,
    step: usize,
    update_index: usize,
    frozen_active: Option<Vec<usize>>,
    best_aggregate: f64,
    stale_updates: usize,
}

impl LoopState {
    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            step: self.step,
            update_index: self.update_index,
            theta: self.theta.theta().to_vec(),
            psi: self.scorer.as_ref().map(|s| s.psi().to_vec()),
            rng: RngState::capture(&self.rng),
            moving_average: self.moving_average.as_ref().map(|m| {
                (0..m.observations().len())
                    .map(|i| m.average(i).expect("index in range").values().to_vec())
                    .collect()
            }),
            moving_average_observations: self
                .moving_average
                .as_ref()
                .map(|m| m.observations().to_vec()),
            frozen_active: self.frozen_active.clone(),
            best_aggregate: self.best_aggregate,
            stale_updates: self.stale_updates,
        }
    }
}

/// Hooks the caller can attach to a run.
pub trait TrainObserver {
    /// Called for every log row, in order, before it is appended.
    fn on_record(&mut self, _record: &UpdateRecord) -> Result<()> {
        Ok(())
    }

    /// Called after each row with a checkpoint of the loop state.
    fn on_checkpoint(&mut self, _checkpoint: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

/// Runs the full loop with no observer.
pub fn train<M: Model>(
    config: &RunConfig,
    model: &M,
    tasks: &[TaskDataset],
    devsets: &[TaskDataset],
) -> Result<TrainOutcome> {
    train_with(config, model, tasks, devsets, None, &mut ())
}

/// Runs the loop, optionally resuming from `resume`, reporting each row
/// and checkpoint to `observer`.
pub fn train_with<M: Model, O: TrainObserver + ?Sized>(
    config: &RunConfig,
    model: &M,
    tasks: &[TaskDataset],
    devsets: &[TaskDataset],
    resume: Option<&Checkpoint>,
    observer: &mut O,
) -> Result<TrainOutcome> {
    if tasks.is_empty() {
        return Err(Error::config("at least one training task is required"));
    }
    if devsets.is_empty() {
        return Err(Error::config("at least one dev set is required"));
    }
    config.validate(devsets.len())?;

    let n = tasks.len();
    let sizes: Vec<u64> = tasks.iter().map(|t| t.len() as u64).collect();
    let stats = CorpusStats::new(sizes.clone())?;
    let fixed = match config.policy {
        PolicyKind::Learned(_) => None,
        kind => Some(heuristic_distribution(kind, &stats)?),
    };
    let reward_cfg = RewardConfig {
        lr: config.lr,
        train_batch_size: config.batch_size,
        dev_batch_size: config.dev_batch_size,
    };

    let mut st = match resume {
        None => {
            let scorer = match config.policy {
                PolicyKind::Learned(_) => {
                    let mut s =
                        ScorerState::init_proportional_with_step(&sizes, config.scorer_step_size)?;
                    s.mean_baseline = config.mean_baseline;
                    Some(s)
                }
                _ => None,
            };
            let moving_average = match config.policy {
                PolicyKind::Learned(RewardMode::MovingAverage) => Some(MovingAverageState::new(
                    n,
                    model.num_params(),
                    model.layout(),
                    config.moving_average_decay,
                )?),
                _ => None,
            };
            LoopState {
                theta: model.init_state(),
                scorer,
                moving_average,
                rng: ChaCha8Rng::seed_from_u64(config.seed),
                step: 0,
                update_index: 0,
                frozen_active: None,
                best_aggregate: f64::INFINITY,
                stale_updates: 0,
            }
        }
        Some(ck) => restore(ck, config, model, n)?,
    };

    let current_distribution = |st: &LoopState| -> Result<Distribution> {
        match (&fixed, &st.scorer) {
            (Some(d), _) => Ok(d.clone()),
            (None, Some(s)) => s.softmax_distribution(),
            (None, None) => unreachable!("learned policy always has a scorer"),
        }
    };

    let mut log = MetricsLog::new(
        tasks.iter().map(|t| t.task_id().to_string()).collect(),
        devsets.iter().map(|t| t.task_id().to_string()).collect(),
    );
    if resume.is_none() {
        let record = UpdateRecord {
            step: 0,
            update_index: 0,
            dev: evaluate(model, &st.theta, devsets)?,
            distribution: current_distribution(&st)?.probs().to_vec(),
            usage_counts: vec![0; n],
            rewards: None,
            aggregation: aggregation_at(config, 1),
            active: (0..devsets.len()).collect(),
            theta_preserved: true,
        };
        observer.on_record(&record)?;
        log.push(record)?;
        observer.on_checkpoint(&st.checkpoint())?;
    }

    let steps_per_update = config.steps_per_update();
    let mut stopped_early = false;
    while st.step < config.total_steps {
        let dist = current_distribution(&st)?;
        let phase = steps_per_update.min(config.total_steps - st.step);
        let mut counts = vec![0u64; n];
        for _ in 0..phase {
            let i = sample_dataset(&dist, &mut st.rng);
            let batch = tasks[i].sample_batch(&mut st.rng, config.batch_size);
            let g = model
                .grad(&st.theta, &batch)
                .map_err(|e| name_task(e, &tasks[i]))?;
            if let Some(ma) = st.moving_average.as_mut() {
                ma.observe(i, &g)?;
            }
            st.theta = st
                .theta
                .sgd_step(&g, config.lr)
                .map_err(|e| name_task(e, &tasks[i]))?;
            counts[i] += 1;
            st.step += 1;
        }

        let dev = evaluate(model, &st.theta, devsets)?;
        let losses: Vec<f64> = dev.iter().map(|d| d.loss).collect();

        if phase < steps_per_update {
            // trailing partial phase: log, no scorer update
            let record = UpdateRecord {
                step: st.step,
                update_index: st.update_index,
                dev,
                distribution: dist.probs().to_vec(),
                usage_counts: counts,
                rewards: None,
                aggregation: aggregation_at(config, st.update_index.max(1)),
                active: (0..devsets.len()).collect(),
                theta_preserved: true,
            };
            observer.on_record(&record)?;
            log.push(record)?;
            observer.on_checkpoint(&st.checkpoint())?;
            break;
        }

        st.update_index += 1;
        let agg = aggregation_at(config, st.update_index);
        let active = match (&st.frozen_active, agg) {
            (Some(frozen), DevAggregation::Low(_) | DevAggregation::High(_)) => frozen.clone(),
            _ => {
                let a = select_active_sets(&losses, agg)?;
                if config.freeze_subset && agg != DevAggregation::Regular {
                    st.frozen_active = Some(a.clone());
                }
                a
            }
        };

        let mut rewards = None;
        let mut theta_preserved = true;
        if let (Some(scorer), PolicyKind::Learned(mode)) = (&st.scorer, config.policy) {
            let before = st.theta.bit_hash();
            let rv = match mode {
                RewardMode::MovingAverage => estimate_rewards_moving_average(
                    st.moving_average.as_ref().expect("moving-average state"),
                    model,
                    &st.theta,
                    devsets,
                    &active,
                    &reward_cfg,
                    st.update_index,
                    &mut st.rng,
                )?,
                _ => estimate_rewards(
                    model,
                    &st.theta,
                    tasks,
                    devsets,
                    &active,
                    mode,
                    &reward_cfg,
                    st.update_index,
                    &mut st.rng,
                )?,
            };
            theta_preserved = st.theta.bit_hash() == before;
            if !theta_preserved {
                return Err(Error::InvalidState("reward estimation modified θ".into()));
            }
            st.scorer = Some(scorer.reinforce_update(&rv)?);
            rewards = Some(rv);
        }

        let aggregate = aggregate_dev_loss(&losses, DevAggregation::Regular)?;
        let record = UpdateRecord {
            step: st.step,
            update_index: st.update_index,
            dev,
            distribution: current_distribution(&st)?.probs().to_vec(),
            usage_counts: counts,
            rewards,
            aggregation: agg,
            active,
            theta_preserved,
        };
        observer.on_record(&record)?;
        log.push(record)?;

        if aggregate < st.best_aggregate {
            st.best_aggregate = aggregate;
            st.stale_updates = 0;
        } else {
            st.stale_updates += 1;
        }
        observer.on_checkpoint(&st.checkpoint())?;
        if let Some(patience) = config.early_stopping_patience {
            if st.stale_updates >= patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model_state: st.theta,
        scorer: st.scorer,
        log,
        steps_done: st.step,
        stopped_early,
    })
}

fn name_task(e: Error, task: &TaskDataset) -> Error {
    match e {
        Error::Numerical { detail, .. } => Error::Numerical {
            task: task.task_id().to_string(),
            detail,
        },
        other => other,
    }
}

fn restore<M: Model>(
    ck: &Checkpoint,
    config: &RunConfig,
    model: &M,
    n: usize,
) -> Result<LoopState> {
    let theta = ModelState::new(ck.theta.clone(), model.layout())?;
    if theta.theta().len() != model.num_params() {
        return Err(Error::config("checkpoint θ does not match the model"));
    }
    let scorer = match (config.policy, &ck.psi) {
        (PolicyKind::Learned(_), Some(psi)) if psi.len() == n => {
            let mut s = ScorerState::new(psi.clone(), config.scorer_step_size)?;
            s.mean_baseline = config.mean_baseline;
            Some(s)
        }
        (PolicyKind::Learned(_), _) => {
            return Err(Error::config(
                "checkpoint lacks a matching scorer for a learned policy",
            ))
        }
        _ => None,
    };
    let moving_average = match config.policy {
        PolicyKind::Learned(RewardMode::MovingAverage) => {
            let mut ma = MovingAverageState::new(
                n,
                model.num_params(),
                model.layout(),
                config.moving_average_decay,
            )?;
            if let (Some(avgs), Some(obs)) = (&ck.moving_average, &ck.moving_average_observations) {
                ma = MovingAverageState::from_parts(
                    config.moving_average_decay,
                    avgs,
                    obs,
                    model.layout(),
                )?;
            }
            Some(ma)
        }
        _ => None,
    };
    Ok(LoopState {
        theta,
        scorer,
        moving_average,
        rng: ck.rng.restore(),
        step: ck.step,
        update_index: ck.update_index,
        frozen_active: ck.frozen_active.clone(),
        best_aggregate: ck.best_aggregate,
        stale_updates: ck.stale_updates,
    })
}
