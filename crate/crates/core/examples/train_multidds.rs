//! Training with a learned sampling distribution on a suite with two small
//! related tasks and two large distant ones.
//!
//! Run with `cargo run --release --example train_multidds`.

use multidds::suite::TaskSuite;
use multidds::{train, RunConfig};

fn main() -> multidds::Result<()> {
    let suite = TaskSuite::low_high_resource(0);
    let (tasks, dev) = suite.build()?;
    let model = suite.classifier()?;

    for policy in ["proportional", "temperature:5", "multidds", "multidds-s"] {
        let config = RunConfig {
            policy: policy.parse()?,
            total_steps: 6000,
            ..RunConfig::default()
        };
        let out = train(&config, &model, &tasks, &dev)?;
        let first = &out.log.records()[0].distribution;
        let last = &out.log.last().expect("at least one row").distribution;
        println!("{policy}");
        println!("  sampling {:.3?} -> {:.3?}", first, last);
        println!("  final dev losses {:.3?}", out.log.final_dev_losses());
        println!(
            "  mean dev perplexity {:.4}",
            out.log.mean_final_perplexity()
        );
    }
    Ok(())
}
