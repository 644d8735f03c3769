//! Fixed heuristic sampling distributions and the shared sampling primitive.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::reward::RewardMode;
use crate::scorer::Distribution;

/// How datasets are weighted during training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolicyKind {
    Uniform,
    Proportional,
    /// q_i^{1/τ}, τ > 0.
    Temperature(f64),
    /// Distribution comes from the learned scorer; the payload picks the reward.
    Learned(RewardMode),
}

impl PolicyKind {
    pub fn temperature(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Domain(format!(
                "temperature must be finite and > 0, got {tau}"
            )));
        }
        Ok(PolicyKind::Temperature(tau))
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, PolicyKind::Learned(_))
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Uniform => f.write_str("uniform"),
            PolicyKind::Proportional => f.write_str("proportional"),
            PolicyKind::Temperature(t) => write!(f, "temperature:{t}"),
            PolicyKind::Learned(RewardMode::Standard) => f.write_str("multidds"),
            PolicyKind::Learned(RewardMode::Stabilized) => f.write_str("multidds-s"),
            PolicyKind::Learned(RewardMode::MovingAverage) => f.write_str("multidds-ma"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s.to_ascii_lowercase().as_str() {
            "uniform" => Ok(PolicyKind::Uniform),
            "proportional" => Ok(PolicyKind::Proportional),
            "multidds" => Ok(PolicyKind::Learned(RewardMode::Standard)),
            "multidds-s" => Ok(PolicyKind::Learned(RewardMode::Stabilized)),
            "multidds-ma" => Ok(PolicyKind::Learned(RewardMode::MovingAverage)),
            other => {
                let tau = other
                    .strip_prefix("temperature:")
                    .ok_or_else(|| Error::Parse(format!("unknown policy {s:?}")))?;
                let tau: f64 = tau
                    .trim()
                    .parse()
                    .map_err(|e| Error::Parse(format!("bad temperature in {s:?}: {e}")))?;
                PolicyKind::temperature(tau)
            }
        }
    }
}

/// Training-set sizes |D_train^i|.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusStats {
    sizes: Vec<u64>,
}

impl CorpusStats {
    pub fn new(sizes: Vec<u64>) -> Result<Self> {
        if sizes.is_empty() {
            return Err(Error::Domain("corpus has no datasets".into()));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Domain(format!("dataset {i} has size 0")));
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[u64] {
        &self.sizes
    }
}

/// Distribution for the fixed (non-learned) policies.
///
/// Temperature weights are formed as exp(ln(q_i)/τ) and normalized with the
/// max trick, so extreme size ratios neither underflow nor produce NaN.
pub fn heuristic_distribution(kind: PolicyKind, stats: &CorpusStats) -> Result<Distribution> {
    let sizes = stats.sizes();
    match kind {
        PolicyKind::Uniform => Distribution::uniform(sizes.len()),
        PolicyKind::Proportional => {
            let total: f64 = sizes.iter().map(|&s| s as f64).sum();
            Distribution::new(sizes.iter().map(|&s| s as f64 / total).collect())
                .or_else(|_| Distribution::from_log_weights(&log_sizes(sizes)))
        }
        PolicyKind::Temperature(tau) => {
            if !(tau.is_finite() && tau > 0.0) {
                return Err(Error::Domain(format!("invalid temperature {tau}")));
            }
            if tau == 1.0 {
                return heuristic_distribution(PolicyKind::Proportional, stats);
            }
            let total_ln = sizes.iter().map(|&s| s as f64).sum::<f64>().ln();
            let logits: Vec<f64> = log_sizes(sizes)
                .into_iter()
                .map(|ln_s| (ln_s - total_ln) / tau)
                .collect();
            Distribution::from_log_weights(&logits)
        }
        PolicyKind::Learned(_) => Err(Error::Usage(
            "learned distributions come from the scorer, not a heuristic".into(),
        )),
    }
}

fn log_sizes(sizes: &[u64]) -> Vec<f64> {
    sizes.iter().map(|&s| (s as f64).ln()).collect()
}

/// Inverse-CDF draw of a dataset index.
///
/// A single-dataset distribution returns 0 without consuming a draw, so a
/// one-task mixture follows exactly the plain single-task random stream.
pub fn sample_dataset<R: Rng + ?Sized>(dist: &Distribution, rng: &mut R) -> usize {
    let probs = dist.probs();
    if probs.len() == 1 {
        return 0;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u above the final cumulative sum; take the last
    // index with positive mass.
    probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(probs.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn stats(s: &[u64]) -> CorpusStats {
        CorpusStats::new(s.to_vec()).unwrap()
    }

    #[test]
    fn parse_round_trip() {
        for s in [
            "uniform",
            "proportional",
            "temperature:5",
            "multidds",
            "multidds-s",
            "multidds-ma",
        ] {
            let k: PolicyKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert_eq!(
            "temperature:0.5".parse::<PolicyKind>().unwrap(),
            PolicyKind::Temperature(0.5)
        );
        assert!("temperature:0".parse::<PolicyKind>().is_err());
        assert!("temperature:-1".parse::<PolicyKind>().is_err());
        assert!("temperature:inf".parse::<PolicyKind>().is_err());
        assert!("greedy".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn temperature_examples() {
        let s = stats(&[100, 300]);
        let t1 = heuristic_distribution(PolicyKind::Temperature(1.0), &s).unwrap();
        let prop = heuristic_distribution(PolicyKind::Proportional, &s).unwrap();
        assert_eq!(t1, prop);
        assert!((prop.probs()[0] - 0.25).abs() < 1e-15);

        let hot = heuristic_distribution(PolicyKind::Temperature(1e6), &stats(&[1, 999])).unwrap();
        assert!((hot.probs()[0] - 0.5).abs() < 1e-3);

        let t5 =
            heuristic_distribution(PolicyKind::Temperature(5.0), &stats(&[5940, 182_000])).unwrap();
        // Frozen from an independent evaluation of q_i^{0.2} / Σ q_k^{0.2}.
        assert!(
            (t5.probs()[0] - 0.335_266_713_9).abs() < 1e-9,
            "{:?}",
            t5.probs()
        );
        assert!((t5.probs()[1] - 0.664_733_286_1).abs() < 1e-9);
    }

    #[test]
    fn learned_is_a_usage_error() {
        let err = heuristic_distribution(PolicyKind::Learned(RewardMode::Standard), &stats(&[1]));
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn zero_size_rejected() {
        assert!(CorpusStats::new(vec![4, 0]).is_err());
        assert!(CorpusStats::new(vec![]).is_err());
    }

    #[test]
    fn degenerate_distribution_always_first() {
        let d = Distribution::new(vec![1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| sample_dataset(&d, &mut rng) == 0));
        let d = Distribution::new(vec![0.0, 1.0, 0.0]).unwrap();
        assert!((0..1000).all(|_| sample_dataset(&d, &mut rng) == 1));
    }

    #[test]
    fn fair_coin_frequency() {
        let d = Distribution::uniform(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let zeros = (0..10_000)
            .filter(|_| sample_dataset(&d, &mut rng) == 0)
            .count();
        let freq = zeros as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&freq), "{freq}");
    }

    #[test]
    fn same_seed_same_draws() {
        let d = Distribution::new(vec![0.2, 0.3, 0.5]).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200)
                .map(|_| sample_dataset(&d, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
        assert_ne!(draw(9), draw(10));
    }

    fn sizes_strategy() -> impl Strategy<Value = Vec<u64>> {
        proptest::collection::vec(1u64..=1_000_000, 2..12)
    }

    proptest! {
        #[test]
        fn heuristics_are_valid(sizes in sizes_strategy(), tau in 0.05f64..1e9) {
            let s = CorpusStats::new(sizes).unwrap();
            for kind in [PolicyKind::Uniform, PolicyKind::Proportional, PolicyKind::Temperature(tau)] {
                let d = heuristic_distribution(kind, &s).unwrap();
                prop_assert!(Distribution::new(d.probs().to_vec()).is_ok());
            }
        }

        #[test]
        fn hotter_is_closer_to_uniform(sizes in sizes_strategy(), t1 in 0.1f64..20.0, gap in 0.1f64..20.0) {
            prop_assume!(sizes.iter().any(|&s| s != sizes[0]));
            let s = CorpusStats::new(sizes).unwrap();
            let u = heuristic_distribution(PolicyKind::Uniform, &s).unwrap();
            let a = heuristic_distribution(PolicyKind::Temperature(t1), &s).unwrap();
            let b = heuristic_distribution(PolicyKind::Temperature(t1 + gap), &s).unwrap();
            prop_assert!(b.max_abs_diff(&u) < a.max_abs_diff(&u));
        }

        #[test]
        fn huge_temperature_is_uniform(sizes in sizes_strategy()) {
            let s = CorpusStats::new(sizes).unwrap();
            let u = heuristic_distribution(PolicyKind::Uniform, &s).unwrap();
            let t = heuristic_distribution(PolicyKind::Temperature(1e9), &s).unwrap();
            prop_assert!(t.max_abs_diff(&u) < 1e-6);
        }
    }
}
