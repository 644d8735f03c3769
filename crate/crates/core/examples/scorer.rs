//! The softmax data scorer: proportional initialization and REINFORCE updates.
//!
//! Run with `cargo run --example scorer`.

use multidds::{RewardMode, RewardVector, ScorerState};

fn main() -> multidds::Result<()> {
    let sizes = [5_940, 182_000, 46_000, 10_000];
    let mut scorer = ScorerState::init_proportional(&sizes)?;
    println!(
        "initial distribution {:.4?}",
        scorer.softmax_distribution()?.probs()
    );

    // dataset 0 keeps aligning with the dev objective, dataset 1 keeps opposing it
    let rewards = RewardVector::new(
        vec![0.6, -0.4, 0.1, 0.0],
        vec![false; 4],
        RewardMode::Stabilized,
        1,
    )?;
    for update in 1..=20 {
        scorer = scorer.reinforce_update(&rewards)?;
        if update % 5 == 0 {
            println!(
                "after {update:>2} updates   {:.4?}",
                scorer.softmax_distribution()?.probs()
            );
        }
    }

    let with_baseline = {
        let mut s = ScorerState::init_proportional(&sizes)?;
        s.mean_baseline = true;
        s.reinforce_update(&rewards)?
    };
    println!(
        "one update with mean baseline {:.4?}",
        with_baseline.softmax_distribution()?.probs()
    );
    println!("d log p_0 / d psi = {:.4?}", scorer.log_prob_grad(0)?);
    Ok(())
}
