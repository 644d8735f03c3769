//! Steering training towards the worst or best tasks by changing how dev
//! losses are aggregated after a warmup.
//!
//! Run with `cargo run --release --example priorities`.

use multidds::suite::TaskSuite;
use multidds::{aggregate_dev_loss, train, DevAggregation, RunConfig};

fn main() -> multidds::Result<()> {
    let suite = TaskSuite::diverse(0);
    let (tasks, dev) = suite.build()?;
    let model = suite.classifier()?;

    println!(
        "{:<10} {:>14} {:>14} {:>10}",
        "objective", "worst-4 loss", "best-4 loss", "mean loss"
    );
    for aggregation in [
        DevAggregation::Regular,
        DevAggregation::Low(4),
        DevAggregation::High(4),
    ] {
        let config = RunConfig {
            aggregation,
            warmup_updates: 5,
            total_steps: 10_000,
            ..RunConfig::default()
        };
        let out = train(&config, &model, &tasks, &dev)?;
        let losses = out.log.final_dev_losses();
        println!(
            "{:<10} {:>14.4} {:>14.4} {:>10.4}",
            aggregation.to_string(),
            aggregate_dev_loss(&losses, DevAggregation::Low(4))?,
            aggregate_dev_loss(&losses, DevAggregation::High(4))?,
            aggregate_dev_loss(&losses, DevAggregation::Regular)?
        );
    }
    Ok(())
}
