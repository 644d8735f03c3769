//! Gradient-alignment rewards for each training dataset, in all three modes.
//!
//! Run with `cargo run --example reward_estimation`.

use multidds::suite::TaskSuite;
use multidds::{
    estimate_rewards, estimate_rewards_moving_average, Model, MovingAverageState, RewardConfig,
    RewardMode,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> multidds::Result<()> {
    // one task shares the dev boundary, the other is rotated by 90 degrees
    let suite = TaskSuite::alignment_pair(0);
    let (train, dev) = suite.build()?;
    let model = suite.classifier()?;
    let cfg = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    // a few plain SGD steps on both tasks so gradients are informative
    let mut state = model.init_state();
    for step in 0..200 {
        let batch = train[step % 2].sample_batch(&mut rng, 32);
        state = state.sgd_step(&model.grad(&state, &batch)?, 0.1)?;
    }

    let active: Vec<usize> = (0..dev.len()).collect();
    for mode in [RewardMode::Standard, RewardMode::Stabilized] {
        let rv = estimate_rewards(
            &model, &state, &train, &dev, &active, mode, &cfg, 1, &mut rng,
        )?;
        println!("{:<10} rewards {:.3?}", mode.as_str(), rv.rewards());
    }

    let mut ma = MovingAverageState::new(train.len(), model.num_params(), model.layout(), 0.9)?;
    for step in 0..50 {
        let i = step % 2;
        let batch = train[i].sample_batch(&mut rng, 32);
        ma.observe(i, &model.grad(&state, &batch)?)?;
    }
    let rv =
        estimate_rewards_moving_average(&ma, &model, &state, &dev, &active, &cfg, 1, &mut rng)?;
    println!("{:<10} rewards {:.3?}", rv.mode().as_str(), rv.rewards());
    Ok(())
}
