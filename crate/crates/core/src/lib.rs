//! Learned data-source weighting for multi-task training.
//!
//! A softmax scorer over the training datasets decides which dataset each
//! minibatch comes from. Every few hundred steps the scorer is moved by
//! REINFORCE, rewarding datasets whose gradient points the same way as the
//! gradient of the held-out dev objective. Fixed heuristics (uniform,
//! proportional, temperature) run through the same loop for comparison.
//!
//! The crate ships a toy multi-task problem (a shared softmax classifier and
//! rotated synthetic tasks) that is small enough to run full experiments in
//! seconds. See the `examples/` directory for one runnable program per
//! capability.

pub mod checkpoint;
pub mod dev_aggregation;
pub mod error;
pub mod harness;
pub mod model;
pub mod policies;
pub mod reward;
pub mod scorer;
pub mod suite;
pub mod trainer;

pub use dev_aggregation::{aggregate_dev_loss, select_active_sets, DevAggregation};
pub use error::{Error, Result};
pub use model::{
    generate_task, Example, Model, ModelState, SoftmaxClassifier, TaskDataset, TaskSpec,
};
pub use policies::{heuristic_distribution, sample_dataset, CorpusStats, PolicyKind};
pub use reward::{
    cosine, estimate_rewards, estimate_rewards_moving_average, reward_variance_report,
    FlatGradient, LayoutId, MovingAverageState, RewardConfig, RewardMode, RewardVector,
};
pub use scorer::{Distribution, ScorerState};
pub use trainer::{
    evaluate, priority_switch, train, train_with, MetricsLog, RunConfig, TrainOutcome,
};
