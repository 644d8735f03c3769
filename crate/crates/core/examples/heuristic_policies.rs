//! Fixed sampling heuristics and drawing datasets from a distribution.
//!
//! Run with `cargo run --example heuristic_policies`.

use multidds::{heuristic_distribution, sample_dataset, CorpusStats, PolicyKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> multidds::Result<()> {
    let stats = CorpusStats::new(vec![5_940, 182_000, 500, 20_000])?;
    for policy in [
        "uniform",
        "proportional",
        "temperature:2",
        "temperature:5",
        "temperature:100",
    ] {
        let kind: PolicyKind = policy.parse()?;
        let dist = heuristic_distribution(kind, &stats)?;
        println!("{policy:<16} {:.4?}", dist.probs());
    }

    let dist = heuristic_distribution(PolicyKind::Temperature(5.0), &stats)?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = [0usize; 4];
    for _ in 0..10_000 {
        counts[sample_dataset(&dist, &mut rng)] += 1;
    }
    println!("10000 draws under temperature:5 -> {counts:?}");
    Ok(())
}
