//! Interrupting a run and resuming it from a saved checkpoint.
//!
//! Run with `cargo run --release --example checkpoint_resume`.

use multidds::checkpoint::Checkpoint;
use multidds::suite::TaskSuite;
use multidds::trainer::{train_with, TrainObserver};
use multidds::{train, RunConfig};

/// Keeps the checkpoint written after the third scorer update.
struct StopAt {
    update: usize,
    saved: Option<Checkpoint>,
}

impl TrainObserver for StopAt {
    fn on_checkpoint(&mut self, checkpoint: &Checkpoint) -> multidds::Result<()> {
        if checkpoint.update_index == self.update && self.saved.is_none() {
            self.saved = Some(checkpoint.clone());
        }
        Ok(())
    }
}

fn main() -> multidds::Result<()> {
    let suite = TaskSuite::related(0);
    let (tasks, dev) = suite.build()?;
    let model = suite.classifier()?;
    let config = RunConfig {
        policy: "multidds".parse()?,
        total_steps: 1000,
        ..RunConfig::default()
    };

    let full = train(&config, &model, &tasks, &dev)?;

    let mut observer = StopAt {
        update: 3,
        saved: None,
    };
    train_with(&config, &model, &tasks, &dev, None, &mut observer)?;
    let checkpoint = observer.saved.expect("run reaches update 3");

    let dir = std::env::temp_dir().join("multidds-checkpoint-example");
    std::fs::create_dir_all(&dir).map_err(|e| multidds::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    let path = dir.join("run.ckpt");
    checkpoint.save(&path)?;
    let resumed = train_with(
        &config,
        &model,
        &tasks,
        &dev,
        Some(&Checkpoint::load(&path)?),
        &mut (),
    )?;

    println!("resumed from step {} ({})", checkpoint.step, path.display());
    println!(
        "full run final θ hash    {:016x}",
        full.model_state.bit_hash()
    );
    println!(
        "resumed run final θ hash {:016x}",
        resumed.model_state.bit_hash()
    );
    assert_eq!(full.model_state, resumed.model_state);
    Ok(())
}
