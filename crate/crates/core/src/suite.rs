//! Task suites: a list of task recipes plus how their dev sets are drawn.
//!
//! Suites serialize to TOML so an experiment can be rebuilt from its
//! manifest alone.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{generate_task, SoftmaxClassifier, TaskDataset, TaskSpec};

/// Where dev examples come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevSource {
    /// Each task's dev set follows that task's own boundary.
    #[default]
    PerTask,
    /// Every dev set follows the reference boundary (alpha = 0).
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSuite {
    pub name: String,
    #[serde(default = "default_dev_size")]
    pub dev_size: usize,
    #[serde(default)]
    pub dev_source: DevSource,
    /// Label noise of the dev sets. Unset means each dev set copies its
    /// task's training noise.
    #[serde(default)]
    pub dev_label_noise: Option<f64>,
    pub tasks: Vec<TaskSpec>,
}

fn default_dev_size() -> usize {
    500
}

const DEV_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

impl TaskSuite {
    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.tasks.first() else {
            return Err(Error::config(format!("suite {} has no tasks", self.name)));
        };
        if self.dev_size == 0 {
            return Err(Error::config("dev_size must be >= 1"));
        }
        let mut ids = std::collections::HashSet::new();
        for t in &self.tasks {
            t.validate().map_err(|e| Error::config(e.to_string()))?;
            if !ids.insert(t.task_id.as_str()) {
                return Err(Error::config(format!("duplicate task id {}", t.task_id)));
            }
            if t.feature_dim != first.feature_dim
                || t.n_classes != first.n_classes
                || t.reference_seed != first.reference_seed
            {
                return Err(Error::config(format!(
                    "task {} disagrees with {} on dimension, classes or reference seed",
                    t.task_id, first.task_id
                )));
            }
        }
        if let Some(noise) = self.dev_label_noise {
            if !(0.0..0.5).contains(&noise) {
                return Err(Error::config(format!(
                    "dev_label_noise {noise} outside [0, 0.5)"
                )));
            }
        }
        Ok(())
    }

    /// The classifier every task of this suite trains.
    pub fn classifier(&self) -> Result<SoftmaxClassifier> {
        self.validate()?;
        SoftmaxClassifier::new(self.tasks[0].feature_dim, self.tasks[0].n_classes)
    }

    pub fn dev_spec(&self, task: &TaskSpec) -> TaskSpec {
        TaskSpec {
            task_id: task.task_id.clone(),
            n_examples: self.dev_size,
            alpha: match self.dev_source {
                DevSource::PerTask => task.alpha,
                DevSource::Reference => 0.0,
            },
            label_noise: self.dev_label_noise.unwrap_or(task.label_noise),
            seed: task.seed ^ DEV_SEED_SALT,
            ..task.clone()
        }
    }

    /// Generates (training sets, dev sets), one of each per task.
    pub fn build(&self) -> Result<(Vec<TaskDataset>, Vec<TaskDataset>)> {
        self.validate()?;
        let train = self
            .tasks
            .iter()
            .map(generate_task)
            .collect::<Result<Vec<_>>>()?;
        let dev = self
            .tasks
            .iter()
            .map(|t| generate_task(&self.dev_spec(t)))
            .collect::<Result<Vec<_>>>()?;
        Ok((train, dev))
    }

    pub fn task_ids(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.task_id.clone()).collect()
    }

    /// Same suite with every seed derived from `seed`.
    pub fn reseeded(&self, seed: u64) -> TaskSuite {
        let mut out = self.clone();
        for (i, t) in out.tasks.iter_mut().enumerate() {
            t.seed = seed.wrapping_mul(1_000_003).wrapping_add(i as u64 + 1);
            t.reference_seed = seed;
        }
        out
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let suite: TaskSuite = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        suite.validate()?;
        Ok(suite)
    }

    /// Names accepted by [`TaskSuite::builtin`].
    pub const BUILTIN: [&'static str; 4] =
        ["alignment-pair", "low-high-resource", "related", "diverse"];

    pub fn builtin(name: &str, seed: u64) -> Result<TaskSuite> {
        match name {
            "alignment-pair" => Ok(Self::alignment_pair(seed)),
            "low-high-resource" => Ok(Self::low_high_resource(seed)),
            "related" => Ok(Self::related(seed)),
            "diverse" => Ok(Self::diverse(seed)),
            other => Err(Error::config(format!(
                "unknown suite {other:?}; expected one of {}",
                Self::BUILTIN.join(", ")
            ))),
        }
    }

    /// Two equal-size tasks: one matching the reference boundary, one
    /// rotated by π/2. Dev sets follow the reference.
    pub fn alignment_pair(seed: u64) -> TaskSuite {
        let task = |id: &str, alpha| TaskSpec {
            task_id: id.into(),
            n_examples: 2000,
            feature_dim: 8,
            n_classes: 4,
            alpha,
            label_noise: 0.1,
            seed: 0,
            reference_seed: 0,
        };
        TaskSuite {
            name: "alignment-pair".into(),
            dev_size: 500,
            dev_source: DevSource::Reference,
            dev_label_noise: None,
            tasks: vec![task("aligned", 0.0), task("adversarial", FRAC_PI_2)],
        }
        .reseeded(seed)
    }

    /// Two small closely related tasks next to two large ones.
    pub fn low_high_resource(seed: u64) -> TaskSuite {
        let task = |id: &str, n, alpha| TaskSpec {
            task_id: id.into(),
            n_examples: n,
            feature_dim: 8,
            n_classes: 4,
            alpha,
            label_noise: 0.1,
            seed: 0,
            reference_seed: 0,
        };
        TaskSuite {
            name: "low-high-resource".into(),
            dev_size: 500,
            dev_source: DevSource::PerTask,
            dev_label_noise: None,
            tasks: vec![
                task("lrl-0", 500, 0.1),
                task("lrl-1", 500, 0.1),
                task("hrl-0", 20_000, 0.6),
                task("hrl-1", 20_000, 0.8),
            ],
        }
        .reseeded(seed)
    }

    /// Eight tasks with sizes from 200 to 20000 and small rotations
    /// (0 to 0.35 rad). Training labels get noisier as tasks get smaller
    /// (0.35 down to 0); dev sets are clean.
    pub fn related(seed: u64) -> TaskSuite {
        let alphas: Vec<f64> = (0..8).map(|i| 0.05 * i as f64).collect();
        Self::graded("related", &alphas, seed)
    }

    /// Like [`TaskSuite::related`] but with rotations spread over [0, π/2].
    pub fn diverse(seed: u64) -> TaskSuite {
        let alphas: Vec<f64> = (0..8).map(|i| FRAC_PI_2 * i as f64 / 7.0).collect();
        Self::graded("diverse", &alphas, seed)
    }

    fn graded(name: &str, alphas: &[f64], seed: u64) -> TaskSuite {
        const SIZES: [usize; 8] = [200, 400, 800, 1600, 3200, 6400, 12_800, 20_000];
        const NOISE: [f64; 8] = [0.35, 0.3, 0.25, 0.2, 0.15, 0.1, 0.05, 0.0];
        let tasks = alphas
            .iter()
            .zip(SIZES.into_iter().zip(NOISE))
            .enumerate()
            .map(|(i, (&alpha, (n, label_noise)))| TaskSpec {
                task_id: format!("task-{i}"),
                n_examples: n,
                feature_dim: 8,
                n_classes: 4,
                alpha,
                label_noise,
                seed: 0,
                reference_seed: 0,
            })
            .collect();
        TaskSuite {
            name: name.into(),
            dev_size: 500,
            dev_source: DevSource::PerTask,
            dev_label_noise: Some(0.0),
            tasks,
        }
        .reseeded(seed)
    }
}

/// Converts a TOML error into a config error carrying the 1-based line.
pub(crate) fn toml_error(text: &str, e: toml::de::Error) -> Error {
    let line = e
        .span()
        .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1);
    Error::Config {
        path: None,
        line,
        message: e.message().to_string(),
    }
}
