//! Experiment plumbing: manifests, CSV artifacts, resumable runs, run
//! comparison and tidy plotting data.
//!
//! An experiment directory looks like
//!
//! ```text
//! <output_dir>/
//!   manifest.toml   resolved manifest
//!   suite.toml      the task suite that was trained on
//!   summary.csv     run, task_id, dev_loss, dev_ppl (one "mean" row per run)
//!   <run>/
//!     run.toml      resolved run settings
//!     metrics.csv   step, task_id, dev_loss, dev_ppl
//!     usage.csv     step, task_id, sampling_prob
//!     rewards.csv   update_index, dataset_id, reward, mode
//!     checkpoint.txt
//!     complete      present once the run has finished
//! ```

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dev_aggregation::DevAggregation;
use crate::error::{Error, Result};
use crate::model::TaskDataset;
use crate::policies::PolicyKind;
use crate::reward::{reward_variance_report, sample_variance, RewardRow, RewardVector};
use crate::suite::{toml_error, TaskSuite};
use crate::trainer::{train_with, RunConfig, TrainObserver, UpdateRecord};

/// Environment variable that prefixes relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "MULTIDDS_OUTPUT_ROOT";

/// Task id used for the per-run mean rows of `summary.csv`.
pub const MEAN_ROW: &str = "mean";

/// Run settings where every field is optional. Layers (defaults, manifest
/// defaults, run section, command-line flags) are combined with
/// [`RunSettings::overlay`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    pub name: Option<String>,
    pub policy: Option<String>,
    pub aggregation: Option<String>,
    pub warmup_updates: Option<usize>,
    pub examples_per_update: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr: Option<f64>,
    pub scorer_step_size: Option<f64>,
    pub total_steps: Option<usize>,
    pub seed: Option<u64>,
    pub dev_batch_size: Option<usize>,
    pub freeze_subset: Option<bool>,
    pub mean_baseline: Option<bool>,
    pub moving_average_decay: Option<f64>,
    pub early_stopping_patience: Option<usize>,
}

impl RunSettings {
    /// Fields set in `top` replace those in `self`.
    pub fn overlay(&self, top: &RunSettings) -> RunSettings {
        RunSettings {
            name: top.name.clone().or_else(|| self.name.clone()),
            policy: top.policy.clone().or_else(|| self.policy.clone()),
            aggregation: top.aggregation.clone().or_else(|| self.aggregation.clone()),
            warmup_updates: top.warmup_updates.or(self.warmup_updates),
            examples_per_update: top.examples_per_update.or(self.examples_per_update),
            batch_size: top.batch_size.or(self.batch_size),
            lr: top.lr.or(self.lr),
            scorer_step_size: top.scorer_step_size.or(self.scorer_step_size),
            total_steps: top.total_steps.or(self.total_steps),
            seed: top.seed.or(self.seed),
            dev_batch_size: top.dev_batch_size.or(self.dev_batch_size),
            freeze_subset: top.freeze_subset.or(self.freeze_subset),
            mean_baseline: top.mean_baseline.or(self.mean_baseline),
            moving_average_decay: top.moving_average_decay.or(self.moving_average_decay),
            early_stopping_patience: top.early_stopping_patience.or(self.early_stopping_patience),
        }
    }

    /// `base` with every set field replaced.
    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig> {
        let mut c = base.clone();
        if let Some(p) = &self.policy {
            c.policy = p
                .parse::<PolicyKind>()
                .map_err(|e| Error::config(e.to_string()))?;
        }
        if let Some(a) = &self.aggregation {
            c.aggregation = a
                .parse::<DevAggregation>()
                .map_err(|e| Error::config(e.to_string()))?;
        }
        c.warmup_updates = self.warmup_updates.unwrap_or(c.warmup_updates);
        c.examples_per_update = self.examples_per_update.unwrap_or(c.examples_per_update);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.lr = self.lr.unwrap_or(c.lr);
        c.scorer_step_size = self.scorer_step_size.unwrap_or(c.scorer_step_size);
        c.total_steps = self.total_steps.unwrap_or(c.total_steps);
        c.seed = self.seed.unwrap_or(c.seed);
        c.dev_batch_size = self.dev_batch_size.unwrap_or(c.dev_batch_size);
        c.freeze_subset = self.freeze_subset.unwrap_or(c.freeze_subset);
        c.mean_baseline = self.mean_baseline.unwrap_or(c.mean_baseline);
        c.moving_average_decay = self.moving_average_decay.unwrap_or(c.moving_average_decay);
        if self.early_stopping_patience.is_some() {
            c.early_stopping_patience = self.early_stopping_patience;
        }
        Ok(c)
    }

    /// Fully specified settings for `config`.
    pub fn from_config(name: &str, config: &RunConfig) -> RunSettings {
        RunSettings {
            name: Some(name.to_string()),
            policy: Some(config.policy.to_string()),
            aggregation: Some(config.aggregation.to_string()),
            warmup_updates: Some(config.warmup_updates),
            examples_per_update: Some(config.examples_per_update),
            batch_size: Some(config.batch_size),
            lr: Some(config.lr),
            scorer_step_size: Some(config.scorer_step_size),
            total_steps: Some(config.total_steps),
            seed: Some(config.seed),
            dev_batch_size: Some(config.dev_batch_size),
            freeze_subset: Some(config.freeze_subset),
            mean_baseline: Some(config.mean_baseline),
            moving_average_decay: Some(config.moving_average_decay),
            early_stopping_patience: config.early_stopping_patience,
        }
    }
}

/// A suite given by builtin name or spelled out in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SuiteRef {
    Builtin {
        builtin: String,
        #[serde(default)]
        seed: u64,
    },
    Inline(TaskSuite),
}

impl SuiteRef {
    pub fn resolve(&self) -> Result<TaskSuite> {
        let suite = match self {
            SuiteRef::Builtin { builtin, seed } => TaskSuite::builtin(builtin, *seed)?,
            SuiteRef::Inline(s) => s.clone(),
        };
        suite.validate()?;
        Ok(suite)
    }
}

/// One experiment: a suite and the runs to train on it.
///
/// ```toml
/// name = "related"
/// output_dir = "related"
///
/// [suite]
/// builtin = "related"
/// seed = 0
///
/// [defaults]
/// total_steps = 10000
///
/// [[runs]]
/// name = "multidds-s"
/// policy = "multidds-s"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub name: String,
    pub output_dir: PathBuf,
    pub suite: SuiteRef,
    #[serde(default)]
    pub defaults: RunSettings,
    pub runs: Vec<RunSettings>,
}

impl ExperimentManifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: ExperimentManifest = toml::from_str(text).map_err(|e| toml_error(text, e))?;
        m.validate()?;
        Ok(m)
    }

    /// Reads and validates a manifest; errors carry the file path.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config { line, message, .. } => Error::Config {
                path: Some(path.to_path_buf()),
                line,
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.resolved_runs(&RunSettings::default()).map(|_| ())
    }

    /// (name, config) for every run, with `overrides` applied last.
    pub fn resolved_runs(&self, overrides: &RunSettings) -> Result<Vec<(String, RunConfig)>> {
        if self.defaults.name.is_some() {
            return Err(Error::config("[defaults] must not set a run name"));
        }
        if self.runs.is_empty() {
            return Err(Error::config(format!(
                "experiment {} has no runs",
                self.name
            )));
        }
        let suite = self.suite.resolve()?;
        let mut seen = HashSet::new();
        let mut out = Vec::with_capacity(self.runs.len());
        for (i, run) in self.runs.iter().enumerate() {
            let name = run
                .name
                .clone()
                .ok_or_else(|| Error::config(format!("run #{} has no name", i + 1)))?;
            if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                return Err(Error::config(format!(
                    "run name {name:?} is not a valid directory name"
                )));
            }
            if !seen.insert(name.clone()) {
                return Err(Error::config(format!("duplicate run name {name:?}")));
            }
            let settings = self.defaults.overlay(run).overlay(overrides);
            let config = settings
                .apply(&RunConfig::default())
                .map_err(|e| prefix_config(e, &name))?;
            config
                .validate(suite.tasks.len())
                .map_err(|e| prefix_config(e, &name))?;
            out.push((name, config));
        }
        Ok(out)
    }

    /// `output_dir`, placed under `$MULTIDDS_OUTPUT_ROOT` when relative and
    /// the variable is set.
    pub fn output_path(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }
}

fn prefix_config(e: Error, run: &str) -> Error {
    match e {
        Error::Config {
            path,
            line,
            message,
        } => Error::Config {
            path,
            line,
            message: format!("run {run}: {message}"),
        },
        other => other,
    }
}

/// Applies [`OUTPUT_ROOT_ENV`] to a relative path.
pub fn resolve_output(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() && !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub task_id: String,
    pub dev_loss: f64,
    pub dev_ppl: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageRow {
    pub step: usize,
    pub task_id: String,
    pub sampling_prob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub run: String,
    pub task_id: String,
    pub dev_loss: f64,
    pub dev_ppl: f64,
}

/// Reads every row of a CSV file with a header.
pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// Writes `rows` to `path` with a header, replacing any existing file.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn remove_if_present(path: &Path) -> Result<()> {
    match fs::remove_file(path) {
        Err(e) if e.kind() != std::io::ErrorKind::NotFound => Err(Error::io(path, e)),
        _ => Ok(()),
    }
}

/// Appends rows to a CSV, writing the header only for a new or empty file.
struct CsvAppender {
    path: PathBuf,
    w: csv::Writer<File>,
}

impl CsvAppender {
    fn open(path: PathBuf) -> Result<Self> {
        let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let w = csv::WriterBuilder::new()
            .has_headers(fresh)
            .from_writer(file);
        Ok(Self { path, w })
    }

    fn write<T: Serialize>(&mut self, row: T) -> Result<()> {
        self.w.serialize(row).map_err(Error::from)
    }

    fn flush(&mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Streams log rows to the run's CSVs and keeps its checkpoint current.
struct RunWriter {
    task_ids: Vec<String>,
    dev_ids: Vec<String>,
    metrics: CsvAppender,
    usage: CsvAppender,
    rewards: CsvAppender,
    checkpoint: PathBuf,
}

impl TrainObserver for RunWriter {
    fn on_record(&mut self, record: &UpdateRecord) -> Result<()> {
        for (id, d) in self.dev_ids.iter().zip(&record.dev) {
            self.metrics.write(MetricsRow {
                step: record.step,
                task_id: id.clone(),
                dev_loss: d.loss,
                dev_ppl: d.perplexity,
            })?;
        }
        for (id, &p) in self.task_ids.iter().zip(&record.distribution) {
            self.usage.write(UsageRow {
                step: record.step,
                task_id: id.clone(),
                sampling_prob: p,
            })?;
        }
        if let Some(rv) = &record.rewards {
            for row in RewardRow::from_vector(rv, &self.task_ids) {
                self.rewards.write(row)?;
            }
        }
        self.metrics.flush()?;
        self.usage.flush()?;
        self.rewards.flush()
    }

    fn on_checkpoint(&mut self, checkpoint: &Checkpoint) -> Result<()> {
        checkpoint.save(&self.checkpoint)
    }
}

/// Drops rows past a checkpoint so appending resumes cleanly.
fn truncate_csv<T: Serialize + DeserializeOwned>(
    path: &Path,
    keep: impl Fn(&T) -> bool,
) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let rows: Vec<T> = read_csv(path)?;
    let kept: Vec<T> = rows.into_iter().filter(|r| keep(r)).collect();
    if kept.is_empty() {
        return remove_if_present(path);
    }
    write_csv(path, &kept)
}

const RUN_SETTINGS: &str = "run.toml";
const CHECKPOINT: &str = "checkpoint.txt";
const COMPLETE: &str = "complete";

/// How [`run_experiment`] treats existing output.
#[derive(Debug, Clone, Default)]
pub struct ExperimentOptions {
    /// Skip finished runs and continue partial ones from their checkpoint.
    /// Otherwise every run starts over.
    pub resume: bool,
    /// Applied on top of every run's settings.
    pub overrides: RunSettings,
    /// Replaces the manifest's output directory.
    pub output_dir: Option<PathBuf>,
}

/// Final numbers of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub name: String,
    pub config: RunConfig,
    pub final_rows: Vec<MetricsRow>,
    pub mean_dev_loss: f64,
    pub mean_dev_ppl: f64,
    /// The run was already complete and was not retrained.
    pub reused: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub output_dir: PathBuf,
    pub runs: Vec<RunResult>,
}

/// Trains every run of `manifest` (in parallel) and writes the artifacts
/// described in the module docs.
pub fn run_experiment(
    manifest: &ExperimentManifest,
    options: &ExperimentOptions,
) -> Result<ExperimentReport> {
    let runs = manifest.resolved_runs(&options.overrides)?;
    let suite = manifest.suite.resolve()?;
    let out = options
        .output_dir
        .as_deref()
        .map(resolve_output)
        .unwrap_or_else(|| manifest.output_path());
    create_dir(&out)?;

    let mut resolved = manifest.clone();
    resolved.output_dir = out.clone();
    resolved.runs = runs
        .iter()
        .map(|(name, c)| RunSettings::from_config(name, c))
        .collect();
    resolved.defaults = RunSettings::default();
    write_text(&out.join("manifest.toml"), &resolved.to_toml()?)?;
    write_text(&out.join("suite.toml"), &suite.to_toml()?)?;

    let model = suite.classifier()?;
    let (train, dev) = suite.build()?;
    let results = runs
        .par_iter()
        .map(|(name, config)| {
            run_one(
                &model,
                &train,
                &dev,
                name,
                config,
                &out.join(name),
                options.resume,
            )
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let mut summary = Vec::new();
    for r in &results {
        for m in &r.final_rows {
            summary.push(SummaryRow {
                run: r.name.clone(),
                task_id: m.task_id.clone(),
                dev_loss: m.dev_loss,
                dev_ppl: m.dev_ppl,
            });
        }
        summary.push(SummaryRow {
            run: r.name.clone(),
            task_id: MEAN_ROW.into(),
            dev_loss: r.mean_dev_loss,
            dev_ppl: r.mean_dev_ppl,
        });
    }
    write_csv(&out.join("summary.csv"), &summary)?;
    Ok(ExperimentReport {
        output_dir: out,
        runs: results,
    })
}

fn run_one(
    model: &crate::model::SoftmaxClassifier,
    train: &[TaskDataset],
    dev: &[TaskDataset],
    name: &str,
    config: &RunConfig,
    dir: &Path,
    resume: bool,
) -> Result<RunResult> {
    create_dir(dir)?;
    let settings = RunSettings::from_config(name, config).to_toml_string()?;
    let settings_path = dir.join(RUN_SETTINGS);
    let metrics_path = dir.join("metrics.csv");
    let usage_path = dir.join("usage.csv");
    let rewards_path = dir.join("rewards.csv");
    let checkpoint_path = dir.join(CHECKPOINT);

    let mut checkpoint = None;
    let mut reused = false;
    if resume && settings_path.exists() {
        let previous =
            fs::read_to_string(&settings_path).map_err(|e| Error::io(&settings_path, e))?;
        if previous != settings {
            return Err(Error::Config {
                path: Some(settings_path),
                line: None,
                message: format!(
                    "run {name} was started with different settings; rerun without resume"
                ),
            });
        }
        if dir.join(COMPLETE).exists() {
            reused = true;
        } else if checkpoint_path.exists() {
            let ck = Checkpoint::load(&checkpoint_path)?;
            truncate_csv::<MetricsRow>(&metrics_path, |r| r.step <= ck.step)?;
            truncate_csv::<UsageRow>(&usage_path, |r| r.step <= ck.step)?;
            truncate_csv::<RewardRow>(&rewards_path, |r| r.update_index <= ck.update_index)?;
            checkpoint = Some(ck);
        }
    }

    if !reused {
        if checkpoint.is_none() {
            for p in [
                &metrics_path,
                &usage_path,
                &rewards_path,
                &checkpoint_path,
                &dir.join(COMPLETE),
            ] {
                remove_if_present(p)?;
            }
            write_text(&settings_path, &settings)?;
        }
        let mut writer = RunWriter {
            task_ids: train.iter().map(|t| t.task_id().to_string()).collect(),
            dev_ids: dev.iter().map(|t| t.task_id().to_string()).collect(),
            metrics: CsvAppender::open(metrics_path.clone())?,
            usage: CsvAppender::open(usage_path)?,
            rewards: CsvAppender::open(rewards_path)?,
            checkpoint: checkpoint_path,
        };
        train_with(config, model, train, dev, checkpoint.as_ref(), &mut writer).map_err(
            |e| match e {
                Error::Config {
                    path,
                    line,
                    message,
                } => Error::Config {
                    path,
                    line,
                    message: format!("run {name}: {message}"),
                },
                other => other,
            },
        )?;
        write_text(&dir.join(COMPLETE), "")?;
    }

    let rows: Vec<MetricsRow> = read_csv(&metrics_path)?;
    let last = rows
        .iter()
        .map(|r| r.step)
        .max()
        .ok_or_else(|| Error::InvalidState(format!("run {name} logged no metrics")))?;
    let final_rows: Vec<MetricsRow> = rows.into_iter().filter(|r| r.step == last).collect();
    let k = final_rows.len() as f64;
    Ok(RunResult {
        name: name.to_string(),
        config: config.clone(),
        mean_dev_loss: final_rows.iter().map(|r| r.dev_loss).sum::<f64>() / k,
        mean_dev_ppl: final_rows.iter().map(|r| r.dev_ppl).sum::<f64>() / k,
        final_rows,
        reused,
    })
}

impl RunSettings {
    fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }
}

/// One run's mean final perplexity under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub run: String,
    pub seed: u64,
    pub mean_dev_ppl: f64,
}

/// Mean and sample variance of a run's mean perplexity across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummaryRow {
    pub run: String,
    pub seeds: usize,
    pub mean_dev_ppl: f64,
    /// 0 with a single seed.
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub output_dir: PathBuf,
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummaryRow>,
}

/// Runs the whole experiment once per seed (overriding each run's seed;
/// the task suite stays fixed) under `<output>/seed-<s>/`, then writes
/// `sweep.csv` and `sweep_summary.csv`.
pub fn sweep(
    manifest: &ExperimentManifest,
    seeds: &[u64],
    options: &ExperimentOptions,
) -> Result<SweepReport> {
    if seeds.is_empty() {
        return Err(Error::Usage("sweep needs at least one seed".into()));
    }
    if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
        return Err(Error::Usage("sweep seeds must be distinct".into()));
    }
    let out = options
        .output_dir
        .as_deref()
        .map(resolve_output)
        .unwrap_or_else(|| manifest.output_path());
    create_dir(&out)?;
    let reports = seeds
        .par_iter()
        .map(|&seed| {
            let opts = ExperimentOptions {
                resume: options.resume,
                overrides: options.overrides.overlay(&RunSettings {
                    seed: Some(seed),
                    ..RunSettings::default()
                }),
                output_dir: Some(out.join(format!("seed-{seed}"))),
            };
            run_experiment(manifest, &opts).map(|r| (seed, r))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    let rows: Vec<SweepRow> = reports
        .iter()
        .flat_map(|(seed, r)| {
            r.runs.iter().map(move |run| SweepRow {
                run: run.name.clone(),
                seed: *seed,
                mean_dev_ppl: run.mean_dev_ppl,
            })
        })
        .collect();
    let names: Vec<String> = reports[0].1.runs.iter().map(|r| r.name.clone()).collect();
    let summary: Vec<SweepSummaryRow> = names
        .iter()
        .map(|name| {
            let vals: Vec<f64> = rows
                .iter()
                .filter(|r| &r.run == name)
                .map(|r| r.mean_dev_ppl)
                .collect();
            SweepSummaryRow {
                run: name.clone(),
                seeds: vals.len(),
                mean_dev_ppl: vals.iter().sum::<f64>() / vals.len() as f64,
                variance: sample_variance(&vals).unwrap_or(0.0),
            }
        })
        .collect();
    write_csv(&out.join("sweep.csv"), &rows)?;
    write_csv(&out.join("sweep_summary.csv"), &summary)?;
    Ok(SweepReport {
        output_dir: out,
        rows,
        summary,
    })
}

/// One (run, task) line of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub run: String,
    pub task_id: String,
    pub dev_loss: f64,
    pub dev_ppl: f64,
    /// Difference to the baseline run on the same task.
    pub delta_loss: f64,
    pub delta_ppl: f64,
    /// Lowest perplexity on this task (first run wins ties).
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub baseline: String,
    pub runs: Vec<String>,
    pub tasks: Vec<String>,
    /// Grouped by task (ending with the mean), runs in input order.
    pub rows: Vec<ComparisonRow>,
}

/// Compares every run found in the given `summary.csv` files against
/// `baseline` (default: the first run). Runs whose names collide across
/// files are qualified with their file's directory name. The mean row is
/// recomputed from the per-task rows.
pub fn compare_runs(summaries: &[PathBuf], baseline: Option<&str>) -> Result<Comparison> {
    let mut per_file = Vec::new();
    for path in summaries {
        let rows: Vec<SummaryRow> = read_csv(path)?;
        let label = path
            .parent()
            .and_then(Path::file_name)
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        per_file.push((label, rows));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for (_, rows) in &per_file {
        let names: HashSet<&String> = rows.iter().map(|r| &r.run).collect();
        for n in names {
            *counts.entry(n.clone()).or_default() += 1;
        }
    }

    let mut tasks: Option<Vec<String>> = None;
    let mut runs: Vec<String> = Vec::new();
    let mut values: HashMap<String, BTreeMap<String, (f64, f64)>> = HashMap::new();
    for ((label, rows), path) in per_file.iter().zip(summaries) {
        let mut order: Vec<String> = Vec::new();
        let mut file_runs: HashMap<String, BTreeMap<String, (f64, f64)>> = HashMap::new();
        for r in rows.iter().filter(|r| r.task_id != MEAN_ROW) {
            let name = if counts[&r.run] > 1 {
                format!("{label}/{}", r.run)
            } else {
                r.run.clone()
            };
            if !file_runs.contains_key(&name) {
                order.push(name.clone());
            }
            let entry = file_runs.entry(name.clone()).or_default();
            if entry
                .insert(r.task_id.clone(), (r.dev_loss, r.dev_ppl))
                .is_some()
            {
                return Err(Error::Usage(format!(
                    "{} lists task {} twice for run {}",
                    path.display(),
                    r.task_id,
                    r.run
                )));
            }
        }
        for name in order {
            let map = file_runs.remove(&name).expect("collected above");
            let ids: Vec<String> = map.keys().cloned().collect();
            match &tasks {
                None => tasks = Some(ids),
                Some(t) if *t != ids => {
                    return Err(Error::Usage(format!(
                        "run {name} in {} covers tasks {ids:?}, expected {t:?}",
                        path.display()
                    )))
                }
                _ => {}
            }
            if values.insert(name.clone(), map).is_some() {
                return Err(Error::Usage(format!("run {name} appears twice")));
            }
            runs.push(name);
        }
    }
    if runs.len() < 2 {
        return Err(Error::Usage("comparison needs at least two runs".into()));
    }
    let tasks = tasks.unwrap_or_default();
    let baseline = match baseline {
        Some(b) if values.contains_key(b) => b.to_string(),
        Some(b) => {
            return Err(Error::Usage(format!(
                "baseline run {b:?} not found; runs: {runs:?}"
            )))
        }
        None => runs[0].clone(),
    };

    let k = tasks.len() as f64;
    let metric = |run: &str, task: &str| -> (f64, f64) {
        let m = &values[run];
        if task == MEAN_ROW {
            let (l, p) = m.values().fold((0.0, 0.0), |(a, b), (l, p)| (a + l, b + p));
            (l / k, p / k)
        } else {
            m[task]
        }
    };
    let mut rows = Vec::new();
    for task in tasks.iter().map(String::as_str).chain([MEAN_ROW]) {
        let (base_loss, base_ppl) = metric(&baseline, task);
        let best = runs
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, r)| {
                let p = metric(r, task).1;
                if p < acc.1 {
                    (i, p)
                } else {
                    acc
                }
            })
            .0;
        for (i, run) in runs.iter().enumerate() {
            let (loss, ppl) = metric(run, task);
            rows.push(ComparisonRow {
                run: run.clone(),
                task_id: task.to_string(),
                dev_loss: loss,
                dev_ppl: ppl,
                delta_loss: loss - base_loss,
                delta_ppl: ppl - base_ppl,
                best: i == best,
            });
        }
    }
    Ok(Comparison {
        baseline,
        runs,
        tasks,
        rows,
    })
}

impl Comparison {
    /// Fixed-width table, one block per task; `*` marks the best run.
    pub fn to_text(&self) -> String {
        let width = self.runs.iter().map(String::len).max().unwrap_or(3).max(3);
        let mut out = String::new();
        let _ = writeln!(out, "baseline: {}", self.baseline);
        let mut current = "";
        for r in &self.rows {
            if r.task_id != current {
                current = &r.task_id;
                let _ = writeln!(out, "\n{current}");
                let _ = writeln!(
                    out,
                    "  {:<width$}  {:>10}  {:>10}  {:>10}",
                    "run", "dev_ppl", "delta_ppl", "dev_loss"
                );
            }
            let _ = writeln!(
                out,
                "{} {:<width$}  {:>10.4}  {:>+10.4}  {:>10.4}",
                if r.best { '*' } else { ' ' },
                r.run,
                r.dev_ppl,
                r.delta_ppl,
                r.dev_loss
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.rows)
    }
}

/// Tidy sampling-probability series across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageSeriesRow {
    pub run: String,
    pub step: usize,
    pub task_id: String,
    pub sampling_prob: f64,
}

/// Trailing-window reward variance. `dataset_id` is `pooled` for the mean
/// over datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVarianceRow {
    pub run: String,
    pub mode: String,
    pub update_index: usize,
    pub dataset_id: String,
    pub variance: f64,
}

/// Whole-run reward variance per mode and dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardVarianceSummaryRow {
    pub run: String,
    pub mode: String,
    pub updates: usize,
    pub dataset_id: String,
    pub variance: f64,
}

/// L1 distance between two runs' sampling distributions at a shared step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub run_a: String,
    pub run_b: String,
    pub step: usize,
    pub l1_distance: f64,
}

pub const POOLED: &str = "pooled";

/// Paths written by [`emit_figures_data`].
#[derive(Debug, Clone, PartialEq)]
pub struct FiguresReport {
    pub usage: PathBuf,
    pub reward_variance: PathBuf,
    pub reward_variance_summary: PathBuf,
    pub trajectories: PathBuf,
}

/// Expands experiment directories into their run directories (those with a
/// `usage.csv`), sorted by name. Run directories pass through unchanged.
pub fn discover_runs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join("usage.csv").exists() {
            out.push(p.clone());
            continue;
        }
        let entries = fs::read_dir(p).map_err(|e| Error::io(p, e))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|d| d.join("usage.csv").exists())
            .collect();
        if found.is_empty() {
            return Err(Error::Usage(format!("{} holds no run output", p.display())));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

/// Writes tidy plotting tables for the runs in `run_dirs` into `out_dir`:
/// `usage_over_time.csv`, `reward_variance.csv` (trailing window of
/// `window` updates), `reward_variance_summary.csv` and
/// `trajectory_distance.csv` (every pair of runs).
pub fn emit_figures_data(
    run_dirs: &[PathBuf],
    out_dir: &Path,
    window: usize,
) -> Result<FiguresReport> {
    if window < 2 {
        return Err(Error::Usage("variance window must be >= 2".into()));
    }
    create_dir(out_dir)?;
    let label = |p: &Path| -> String {
        p.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| p.display().to_string())
    };

    let mut usage = Vec::new();
    let mut variance = Vec::new();
    let mut summary = Vec::new();
    let mut dists: Vec<(String, BTreeMap<usize, Vec<f64>>)> = Vec::new();
    for dir in run_dirs {
        let run = label(dir);
        let rows: Vec<UsageRow> = read_csv(&dir.join("usage.csv"))?;
        let mut by_step: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for r in &rows {
            by_step.entry(r.step).or_default().push(r.sampling_prob);
            usage.push(UsageSeriesRow {
                run: run.clone(),
                step: r.step,
                task_id: r.task_id.clone(),
                sampling_prob: r.sampling_prob,
            });
        }
        dists.push((run.clone(), by_step));

        let rewards_path = dir.join("rewards.csv");
        let rewards: Vec<RewardRow> = if rewards_path.exists() {
            read_csv(&rewards_path)?
        } else {
            Vec::new()
        };
        let history = reward_vectors(&rewards)?;
        let ids: Vec<String> = {
            let mut seen = Vec::new();
            for r in &rewards {
                if !seen.contains(&r.dataset_id) {
                    seen.push(r.dataset_id.clone());
                }
            }
            seen
        };
        for end in 1..history.len() {
            let start = (end + 1).saturating_sub(window);
            let slice = &history[start..=end];
            let mode = slice[0].mode();
            if slice.iter().any(|v| v.mode() != mode) {
                continue;
            }
            let per: Vec<f64> = (0..ids.len())
                .map(|i| {
                    let col: Vec<f64> = slice.iter().map(|v| v.rewards()[i]).collect();
                    sample_variance(&col).unwrap_or(0.0)
                })
                .collect();
            let update_index = history[end].update_index();
            for (id, v) in ids.iter().zip(&per) {
                variance.push(RewardVarianceRow {
                    run: run.clone(),
                    mode: mode.to_string(),
                    update_index,
                    dataset_id: id.clone(),
                    variance: *v,
                });
            }
            variance.push(RewardVarianceRow {
                run: run.clone(),
                mode: mode.to_string(),
                update_index,
                dataset_id: POOLED.into(),
                variance: per.iter().sum::<f64>() / per.len().max(1) as f64,
            });
        }
        for s in reward_variance_report(&history) {
            for (id, v) in ids.iter().zip(&s.per_dataset) {
                summary.push(RewardVarianceSummaryRow {
                    run: run.clone(),
                    mode: s.mode.to_string(),
                    updates: s.updates,
                    dataset_id: id.clone(),
                    variance: *v,
                });
            }
            summary.push(RewardVarianceSummaryRow {
                run: run.clone(),
                mode: s.mode.to_string(),
                updates: s.updates,
                dataset_id: POOLED.into(),
                variance: s.pooled,
            });
        }
    }

    let mut trajectories = Vec::new();
    for (i, (a, da)) in dists.iter().enumerate() {
        for (b, db) in &dists[i + 1..] {
            for (step, pa) in da {
                if let Some(pb) = db.get(step) {
                    if pa.len() == pb.len() {
                        trajectories.push(TrajectoryRow {
                            run_a: a.clone(),
                            run_b: b.clone(),
                            step: *step,
                            l1_distance: pa.iter().zip(pb).map(|(x, y)| (x - y).abs()).sum(),
                        });
                    }
                }
            }
        }
    }

    let report = FiguresReport {
        usage: out_dir.join("usage_over_time.csv"),
        reward_variance: out_dir.join("reward_variance.csv"),
        reward_variance_summary: out_dir.join("reward_variance_summary.csv"),
        trajectories: out_dir.join("trajectory_distance.csv"),
    };
    write_csv(&report.usage, &usage)?;
    write_csv(&report.reward_variance, &variance)?;
    write_csv(&report.reward_variance_summary, &summary)?;
    write_csv(&report.trajectories, &trajectories)?;
    Ok(report)
}

/// Regroups `rewards.csv` rows into one vector per update.
fn reward_vectors(rows: &[RewardRow]) -> Result<Vec<RewardVector>> {
    let mut grouped: BTreeMap<usize, Vec<&RewardRow>> = BTreeMap::new();
    for r in rows {
        grouped.entry(r.update_index).or_default().push(r);
    }
    grouped
        .into_iter()
        .map(|(u, rs)| {
            RewardVector::new(
                rs.iter().map(|r| r.reward).collect(),
                vec![false; rs.len()],
                rs[0].mode,
                u,
            )
        })
        .collect()
}

/// Header and rows of one dataset CSV.
fn dataset_rows(data: &TaskDataset) -> (Vec<String>, Vec<Vec<String>>) {
    let d = data.feature_dim();
    let mut header: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    header.push("label".into());
    let rows = data
        .examples()
        .iter()
        .map(|e| {
            let mut r: Vec<String> = e.features.iter().map(f64::to_string).collect();
            r.push(e.label.to_string());
            r
        })
        .collect();
    (header, rows)
}

/// Writes `suite.toml` plus `<task>.train.csv` and `<task>.dev.csv`
/// (columns x0..x{d-1}, label) into `out_dir`.
pub fn generate_tasks(suite: &TaskSuite, out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let (train, dev) = suite.build()?;
    let suite_path = out_dir.join("suite.toml");
    write_text(&suite_path, &suite.to_toml()?)?;
    let mut written = vec![suite_path];
    for (kind, sets) in [("train", &train), ("dev", &dev)] {
        for data in sets.iter() {
            let path = out_dir.join(format!("{}.{kind}.csv", data.task_id()));
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let mut w = csv::Writer::from_writer(file);
            let (header, rows) = dataset_rows(data);
            w.write_record(&header)?;
            for r in rows {
                w.write_record(&r)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_manifest(policies: &[&str]) -> ExperimentManifest {
        let runs = policies
            .iter()
            .map(|p| RunSettings {
                name: Some(p.replace(':', "-")),
                policy: Some(p.to_string()),
                ..RunSettings::default()
            })
            .collect();
        ExperimentManifest {
            name: "test".into(),
            output_dir: PathBuf::from("unused"),
            suite: SuiteRef::Builtin {
                builtin: "low-high-resource".into(),
                seed: 1,
            },
            defaults: RunSettings {
                total_steps: Some(90),
                examples_per_update: Some(640),
                ..RunSettings::default()
            },
            runs,
        }
    }

    fn opts(dir: &Path) -> ExperimentOptions {
        ExperimentOptions {
            output_dir: Some(dir.to_path_buf()),
            ..ExperimentOptions::default()
        }
    }

    const FIVE: [&str; 5] = [
        "uniform",
        "temperature:5",
        "proportional",
        "multidds",
        "multidds-s",
    ];

    #[test]
    fn manifest_parses_and_layers_settings() {
        let text = r#"
name = "x"
output_dir = "out"

[suite]
builtin = "related"
seed = 2

[defaults]
total_steps = 100
lr = 0.05

[[runs]]
name = "a"
policy = "uniform"

[[runs]]
name = "b"
policy = "multidds"
lr = 0.2
"#;
        let m = ExperimentManifest::from_toml(text).unwrap();
        let runs = m
            .resolved_runs(&RunSettings {
                total_steps: Some(7),
                ..RunSettings::default()
            })
            .unwrap();
        assert_eq!(runs[0].1.lr, 0.05);
        assert_eq!(runs[1].1.lr, 0.2);
        assert!(runs.iter().all(|(_, c)| c.total_steps == 7));
        assert_eq!(
            runs[1].1.policy,
            PolicyKind::Learned(crate::reward::RewardMode::Standard)
        );
        assert_eq!(
            ExperimentManifest::from_toml(&m.to_toml().unwrap()).unwrap(),
            m
        );
    }

    #[test]
    fn manifest_errors_are_config_errors_with_lines() {
        let bad_key = "name = \"x\"\noutput_dir = \"o\"\n[suite]\nbuiltin = \"related\"\n[[runs]]\nname = \"a\"\nlearning_rate = 1\n";
        match ExperimentManifest::from_toml(bad_key) {
            Err(Error::Config { line: Some(l), .. }) => assert_eq!(l, 7),
            other => panic!("unexpected {other:?}"),
        }
        let dup = "name = \"x\"\noutput_dir = \"o\"\n[suite]\nbuiltin = \"related\"\n[[runs]]\nname = \"a\"\n[[runs]]\nname = \"a\"\n";
        assert_eq!(
            ExperimentManifest::from_toml(dup).unwrap_err().exit_code(),
            2
        );
        let bad_policy = "name = \"x\"\noutput_dir = \"o\"\n[suite]\nbuiltin = \"related\"\n[[runs]]\nname = \"a\"\npolicy = \"best\"\n";
        assert_eq!(
            ExperimentManifest::from_toml(bad_policy)
                .unwrap_err()
                .exit_code(),
            2
        );
        let bad_suite = "name = \"x\"\noutput_dir = \"o\"\n[suite]\nbuiltin = \"nope\"\n[[runs]]\nname = \"a\"\n";
        assert_eq!(
            ExperimentManifest::from_toml(bad_suite)
                .unwrap_err()
                .exit_code(),
            2
        );
    }

    #[test]
    fn summary_has_one_row_per_run_and_task_plus_means() {
        let dir = tempfile::tempdir().unwrap();
        let m = small_manifest(&FIVE);
        let report = run_experiment(&m, &opts(dir.path())).unwrap();
        let rows: Vec<SummaryRow> = read_csv(&dir.path().join("summary.csv")).unwrap();
        assert_eq!(rows.len(), 5 * 4 + 5);
        assert_eq!(rows.iter().filter(|r| r.task_id == MEAN_ROW).count(), 5);
        for task in ["lrl-0", "lrl-1", "hrl-0", "hrl-1"] {
            assert_eq!(rows.iter().filter(|r| r.task_id == task).count(), 5);
        }
        assert_eq!(report.runs.len(), 5);
        let metrics: Vec<MetricsRow> =
            read_csv(&dir.path().join("multidds-s/metrics.csv")).unwrap();
        // rows at step 0, 20, 40, 60, 80 and the trailing partial phase at 90
        assert_eq!(metrics.len(), 6 * 4);
        let rewards: Vec<RewardRow> = read_csv(&dir.path().join("multidds-s/rewards.csv")).unwrap();
        assert_eq!(rewards.len(), 4 * 4);
        assert!(
            !dir.path().join("uniform/rewards.csv").exists()
                || read_csv::<RewardRow>(&dir.path().join("uniform/rewards.csv"))
                    .unwrap()
                    .is_empty()
        );
    }

    #[test]
    fn rerun_is_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let m = small_manifest(&["multidds", "temperature:5"]);
        run_experiment(&m, &opts(a.path())).unwrap();
        run_experiment(&m, &opts(b.path())).unwrap();
        for f in [
            "summary.csv",
            "multidds/metrics.csv",
            "multidds/usage.csv",
            "multidds/rewards.csv",
        ] {
            let x = fs::read(a.path().join(f)).unwrap();
            let y = fs::read(b.path().join(f)).unwrap();
            assert_eq!(x, y, "{f}");
        }
    }

    #[test]
    fn interrupted_run_resumes_to_identical_output() {
        let full = tempfile::tempdir().unwrap();
        let m = small_manifest(&["multidds-s"]);
        run_experiment(&m, &opts(full.path())).unwrap();

        // simulate a crash after the third row: keep the checkpoint from a
        // shorter run and add a stray row past it
        let part = tempfile::tempdir().unwrap();
        let short = ExperimentOptions {
            overrides: RunSettings {
                total_steps: Some(40),
                ..RunSettings::default()
            },
            ..opts(part.path())
        };
        run_experiment(&m, &short).unwrap();
        let run = part.path().join("multidds-s");
        fs::remove_file(run.join(COMPLETE)).unwrap();
        fs::copy(
            full.path().join("multidds-s/run.toml"),
            run.join(RUN_SETTINGS),
        )
        .unwrap();
        let mut f = OpenOptions::new()
            .append(true)
            .open(run.join("metrics.csv"))
            .unwrap();
        use std::io::Write;
        writeln!(f, "60,lrl-0,9.0,9.0").unwrap();

        let resumed = ExperimentOptions {
            resume: true,
            ..opts(part.path())
        };
        let report = run_experiment(&m, &resumed).unwrap();
        assert!(!report.runs[0].reused);
        for f in [
            "summary.csv",
            "multidds-s/metrics.csv",
            "multidds-s/usage.csv",
            "multidds-s/rewards.csv",
        ] {
            assert_eq!(
                fs::read_to_string(full.path().join(f)).unwrap(),
                fs::read_to_string(part.path().join(f)).unwrap(),
                "{f}"
            );
        }
        let again = run_experiment(&m, &resumed).unwrap();
        assert!(again.runs[0].reused);
    }

    #[test]
    fn resume_refuses_changed_settings() {
        let dir = tempfile::tempdir().unwrap();
        let m = small_manifest(&["multidds"]);
        run_experiment(&m, &opts(dir.path())).unwrap();
        let changed = ExperimentOptions {
            resume: true,
            overrides: RunSettings {
                lr: Some(0.3),
                ..RunSettings::default()
            },
            ..opts(dir.path())
        };
        assert_eq!(run_experiment(&m, &changed).unwrap_err().exit_code(), 2);
    }

    fn summary_file(dir: &Path, rows: &[(&str, &str, f64)]) -> PathBuf {
        let rows: Vec<SummaryRow> = rows
            .iter()
            .map(|&(run, task, ppl)| SummaryRow {
                run: run.into(),
                task_id: task.into(),
                dev_loss: ppl.ln(),
                dev_ppl: ppl,
            })
            .collect();
        let p = dir.join("summary.csv");
        write_csv(&p, &rows).unwrap();
        p
    }

    #[test]
    fn compare_identical_runs_gives_zero_deltas() {
        let dir = tempfile::tempdir().unwrap();
        let p = summary_file(
            dir.path(),
            &[
                ("a", "t0", 2.0),
                ("a", "t1", 3.0),
                ("b", "t0", 2.0),
                ("b", "t1", 3.0),
            ],
        );
        let c = compare_runs(&[p], None).unwrap();
        assert_eq!(c.rows.len(), 6);
        assert!(c
            .rows
            .iter()
            .all(|r| r.delta_ppl == 0.0 && r.delta_loss == 0.0));
        assert!(c.to_text().contains("baseline: a"));
    }

    #[test]
    fn compare_single_task_difference() {
        let dir = tempfile::tempdir().unwrap();
        let p = summary_file(
            dir.path(),
            &[
                ("a", "t0", 2.0),
                ("a", "t1", 3.0),
                ("b", "t0", 2.0),
                ("b", "t1", 2.5),
            ],
        );
        let c = compare_runs(&[p], Some("a")).unwrap();
        let nonzero: Vec<&ComparisonRow> = c
            .rows
            .iter()
            .filter(|r| r.task_id != MEAN_ROW && r.delta_ppl != 0.0)
            .collect();
        assert_eq!(nonzero.len(), 1);
        assert_eq!(
            (nonzero[0].run.as_str(), nonzero[0].task_id.as_str()),
            ("b", "t1")
        );
        assert!((nonzero[0].delta_ppl + 0.5).abs() < 1e-12);
        let mean_b = c
            .rows
            .iter()
            .find(|r| r.task_id == MEAN_ROW && r.run == "b")
            .unwrap();
        assert!((mean_b.delta_ppl - ((2.0 + 2.5) / 2.0 - (2.0 + 3.0) / 2.0)).abs() < 1e-9);
        assert!(mean_b.best);
    }

    #[test]
    fn compare_qualifies_colliding_names_and_rejects_mismatched_suites() {
        let root = tempfile::tempdir().unwrap();
        let (d0, d1, d2) = (
            root.path().join("s0"),
            root.path().join("s1"),
            root.path().join("s2"),
        );
        for d in [&d0, &d1, &d2] {
            fs::create_dir(d).unwrap();
        }
        let p0 = summary_file(&d0, &[("a", "t0", 2.0), ("a", "t1", 3.0)]);
        let p1 = summary_file(&d1, &[("a", "t0", 1.0), ("a", "t1", 3.0)]);
        let c = compare_runs(&[p0.clone(), p1], None).unwrap();
        assert_eq!(c.runs, vec!["s0/a".to_string(), "s1/a".to_string()]);
        let p2 = summary_file(&d2, &[("b", "t0", 2.0), ("b", "t9", 3.0)]);
        assert_eq!(
            compare_runs(&[p0.clone(), p2], None)
                .unwrap_err()
                .exit_code(),
            2
        );
        assert!(compare_runs(&[p0], None).is_err());
    }

    #[test]
    fn figures_tables_hold_their_invariants() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = small_manifest(&["multidds", "multidds-s", "proportional"]);
        m.runs.push(RunSettings {
            name: Some("frozen".into()),
            policy: Some("multidds-s".into()),
            scorer_step_size: Some(0.0),
            ..RunSettings::default()
        });
        m.defaults.total_steps = Some(200);
        run_experiment(&m, &opts(dir.path())).unwrap();
        let runs = discover_runs(&[dir.path().to_path_buf()]).unwrap();
        assert_eq!(runs.len(), 4);
        let fig = dir.path().join("figures");
        let report = emit_figures_data(&runs, &fig, 3).unwrap();

        let usage: Vec<UsageSeriesRow> = read_csv(&report.usage).unwrap();
        let mut sums: BTreeMap<(String, usize), f64> = BTreeMap::new();
        for r in &usage {
            *sums.entry((r.run.clone(), r.step)).or_default() += r.sampling_prob;
        }
        assert!(sums.values().all(|s| (s - 1.0).abs() < 1e-9));

        let var: Vec<RewardVarianceRow> = read_csv(&report.reward_variance).unwrap();
        assert!(!var.is_empty());
        assert!(var.iter().all(|r| r.variance >= 0.0));
        let summary: Vec<RewardVarianceSummaryRow> =
            read_csv(&report.reward_variance_summary).unwrap();
        assert!(summary.iter().any(|r| r.mode == "standard"));
        assert!(summary.iter().any(|r| r.mode == "stabilized"));

        let frozen: Vec<&UsageSeriesRow> = usage.iter().filter(|r| r.run == "frozen").collect();
        let first = &frozen[..4];
        for chunk in frozen.chunks(4) {
            for (a, b) in chunk.iter().zip(first) {
                assert_eq!(a.sampling_prob, b.sampling_prob);
            }
        }
        let traj: Vec<TrajectoryRow> = read_csv(&report.trajectories).unwrap();
        let fp: Vec<f64> = traj
            .iter()
            .filter(|t| t.run_a == "frozen" && t.run_b == "proportional")
            .map(|t| t.l1_distance)
            .collect();
        assert!(fp.len() > 2 && fp.iter().all(|d| *d < 1e-12));
    }

    #[test]
    fn generated_task_files_round_trip_shape() {
        let dir = tempfile::tempdir().unwrap();
        let suite = TaskSuite::alignment_pair(0);
        let files = generate_tasks(&suite, dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        let back = TaskSuite::from_toml(&fs::read_to_string(&files[0]).unwrap()).unwrap();
        assert_eq!(back, suite);
        let mut r = csv::Reader::from_path(dir.path().join("aligned.train.csv")).unwrap();
        assert_eq!(r.headers().unwrap().len(), 9);
        assert_eq!(r.records().count(), 2000);
    }
}
