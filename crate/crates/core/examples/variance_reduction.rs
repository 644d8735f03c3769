//! Monte-Carlo comparison of reward variance: cosine of the summed dev
//! gradient versus the mean of per-dev-set cosines.
//!
//! Run with `cargo run --example variance_reduction`.

use multidds::reward::{alignment_reward, sample_variance};
use multidds::{FlatGradient, LayoutId, RewardMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> multidds::Result<()> {
    const DIM: usize = 8;
    let layout = LayoutId::new("monte-carlo", &[DIM]);
    let train = FlatGradient::new(
        (0..DIM).map(|i| [0.6, 0.8, 0.0][i.min(2)]).collect(),
        layout,
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    println!(
        "{:>5} {:>6} {:>12} {:>12}",
        "m", "sigma", "standard", "stabilized"
    );
    for m in [1, 2, 4, 8] {
        for sigma in [0.1, 0.5, 2.0] {
            let noise = Normal::new(0.0, sigma).expect("positive sigma");
            let (mut standard, mut stabilized) = (Vec::new(), Vec::new());
            for _ in 0..1000 {
                let devs = (0..m)
                    .map(|_| {
                        let g = (0..DIM)
                            .map(|i| (i == 0) as u8 as f64 + noise.sample(&mut rng))
                            .collect();
                        FlatGradient::new(g, layout)
                    })
                    .collect::<multidds::Result<Vec<_>>>()?;
                standard.push(alignment_reward(RewardMode::Standard, &train, &devs)?.value);
                stabilized.push(alignment_reward(RewardMode::Stabilized, &train, &devs)?.value);
            }
            println!(
                "{m:>5} {sigma:>6} {:>12.3e} {:>12.3e}",
                sample_variance(&standard).unwrap_or(0.0),
                sample_variance(&stabilized).unwrap_or(0.0)
            );
        }
    }
    Ok(())
}
