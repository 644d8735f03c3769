//! Command-line front end for the experiment harness.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use multidds::harness::{
    compare_runs, discover_runs, emit_figures_data, generate_tasks, run_experiment, sweep,
    ExperimentManifest, ExperimentOptions, RunSettings, SuiteRef,
};
use multidds::suite::TaskSuite;
use multidds::{Error, Result};

#[derive(Parser)]
#[command(
    name = "multidds",
    version,
    about = "Learned data-source weighting for multi-task training"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a task suite manifest and its generated train/dev CSVs.
    GenerateTasks {
        #[command(flatten)]
        suite: SuiteArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every run of a manifest, or a single run on a suite.
    Train {
        #[command(flatten)]
        source: SourceArgs,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Train a manifest once per seed and summarize across seeds.
    Sweep {
        /// Experiment manifest (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated run seeds.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        resume: bool,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Per-task and mean deltas between runs of one or more summary.csv files.
    Compare {
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
        /// Run the deltas are taken against (default: the first run).
        #[arg(long)]
        baseline: Option<String>,
        /// Also write the comparison as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Tidy plotting tables from run or experiment directories.
    Figures {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Updates in the trailing reward-variance window.
        #[arg(long, default_value_t = 10)]
        window: usize,
    },
}

#[derive(Args)]
struct SuiteArgs {
    /// Builtin suite name or path to a suite TOML file.
    #[arg(long, default_value = "related")]
    suite: String,
    /// Seed for builtin suites.
    #[arg(long, default_value_t = 0)]
    suite_seed: u64,
}

#[derive(Args)]
struct SourceArgs {
    /// Experiment manifest (TOML). Without it a single run is trained on --suite.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    suite: SuiteArgs,
    /// Output directory (overrides the manifest's).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue partial runs from their checkpoints and skip finished ones.
    #[arg(long)]
    resume: bool,
}

/// Mirrors the run settings; anything given here overrides the manifest.
#[derive(Args, Default)]
struct RunFlags {
    /// Run name when training without a manifest.
    #[arg(long)]
    name: Option<String>,
    /// uniform, proportional, temperature:<t>, multidds, multidds-s or multidds-ma.
    #[arg(long)]
    policy: Option<String>,
    /// regular, low:<k> or high:<k>.
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    warmup_updates: Option<usize>,
    #[arg(long)]
    examples_per_update: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    scorer_step_size: Option<f64>,
    #[arg(long)]
    total_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dev_batch_size: Option<usize>,
    #[arg(long)]
    freeze_subset: Option<bool>,
    #[arg(long)]
    mean_baseline: Option<bool>,
    #[arg(long)]
    moving_average_decay: Option<f64>,
    #[arg(long)]
    early_stopping_patience: Option<usize>,
}

impl RunFlags {
    fn settings(&self) -> RunSettings {
        RunSettings {
            name: None,
            policy: self.policy.clone(),
            aggregation: self.aggregation.clone(),
            warmup_updates: self.warmup_updates,
            examples_per_update: self.examples_per_update,
            batch_size: self.batch_size,
            lr: self.lr,
            scorer_step_size: self.scorer_step_size,
            total_steps: self.total_steps,
            seed: self.seed,
            dev_batch_size: self.dev_batch_size,
            freeze_subset: self.freeze_subset,
            mean_baseline: self.mean_baseline,
            moving_average_decay: self.moving_average_decay,
            early_stopping_patience: self.early_stopping_patience,
        }
    }
}

fn load_suite(args: &SuiteArgs) -> Result<SuiteRef> {
    let path = Path::new(&args.suite);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let suite = TaskSuite::from_toml(&text).map_err(|e| match e {
            Error::Config { line, message, .. } => Error::Config {
                path: Some(path.to_path_buf()),
                line,
                message,
            },
            other => other,
        })?;
        Ok(SuiteRef::Inline(suite))
    } else {
        TaskSuite::builtin(&args.suite, args.suite_seed)?;
        Ok(SuiteRef::Builtin {
            builtin: args.suite.clone(),
            seed: args.suite_seed,
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenerateTasks { suite, out } => {
            let suite = load_suite(&suite)?.resolve()?;
            let files = generate_tasks(&suite, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
        Command::Train { source, run } => {
            let manifest = match &source.config {
                Some(path) => ExperimentManifest::load(path)?,
                None => {
                    let policy = run.policy.clone().unwrap_or_else(|| "multidds-s".into());
                    let name = run.name.clone().unwrap_or_else(|| policy.replace(':', "-"));
                    ExperimentManifest {
                        name: name.clone(),
                        output_dir: PathBuf::from("runs"),
                        suite: load_suite(&source.suite)?,
                        defaults: RunSettings::default(),
                        runs: vec![RunSettings {
                            name: Some(name),
                            policy: Some(policy),
                            ..RunSettings::default()
                        }],
                    }
                }
            };
            let options = ExperimentOptions {
                resume: source.resume,
                overrides: run.settings(),
                output_dir: source.out,
            };
            let report = run_experiment(&manifest, &options)?;
            for r in &report.runs {
                println!(
                    "{:<20} mean dev ppl {:.4}  mean dev loss {:.4}",
                    r.name, r.mean_dev_ppl, r.mean_dev_loss
                );
            }
            println!("artifacts in {}", report.output_dir.display());
        }
        Command::Sweep {
            config,
            seeds,
            out,
            resume,
            run,
        } => {
            let manifest = ExperimentManifest::load(&config)?;
            let options = ExperimentOptions {
                resume,
                overrides: run.settings(),
                output_dir: out,
            };
            let report = sweep(&manifest, &seeds, &options)?;
            for s in &report.summary {
                println!(
                    "{:<20} mean dev ppl {:.4}  variance {:.3e}  ({} seeds)",
                    s.run, s.mean_dev_ppl, s.variance, s.seeds
                );
            }
            println!("artifacts in {}", report.output_dir.display());
        }
        Command::Compare {
            summaries,
            baseline,
            csv,
        } => {
            let c = compare_runs(&summaries, baseline.as_deref())?;
            print!("{}", c.to_text());
            if let Some(path) = csv {
                c.write_csv(&path)?;
            }
        }
        Command::Figures { runs, out, window } => {
            let dirs = discover_runs(&runs)?;
            let report = emit_figures_data(&dirs, &out, window)?;
            for p in [
                &report.usage,
                &report.reward_variance,
                &report.reward_variance_summary,
                &report.trajectories,
            ] {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
