//! How per-task dev losses combine into the outer objective.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DevAggregation {
    /// Mean over every dev set.
    #[default]
    Regular,
    /// Mean over the k dev sets with the largest loss.
    Low(usize),
    /// Mean over the k dev sets with the smallest loss.
    High(usize),
}

impl DevAggregation {
    /// Low or High with k = ⌈m/2⌉.
    pub fn low_default(m: usize) -> Self {
        DevAggregation::Low(m.div_ceil(2))
    }

    pub fn high_default(m: usize) -> Self {
        DevAggregation::High(m.div_ceil(2))
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        match *self {
            DevAggregation::Regular => Ok(()),
            DevAggregation::Low(k) | DevAggregation::High(k) => {
                if k == 0 || k > m {
                    Err(Error::Domain(format!(
                        "{self} needs 1 <= k <= {m} (number of dev sets)"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for DevAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DevAggregation::Regular => f.write_str("regular"),
            DevAggregation::Low(k) => write!(f, "low:{k}"),
            DevAggregation::High(k) => write!(f, "high:{k}"),
        }
    }
}

impl FromStr for DevAggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "regular" {
            return Ok(DevAggregation::Regular);
        }
        let (kind, k) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("unknown aggregation {s:?}")))?;
        let k: usize = k
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("bad k in {s:?}: {e}")))?;
        if k == 0 {
            return Err(Error::Parse(format!("k must be positive in {s:?}")));
        }
        match kind {
            "low" => Ok(DevAggregation::Low(k)),
            "high" => Ok(DevAggregation::High(k)),
            _ => Err(Error::Parse(format!("unknown aggregation {s:?}"))),
        }
    }
}

/// Indices of the dev sets that enter the objective, in ascending order.
///
/// Ties in loss go to the lower index.
pub fn select_active_sets(dev_losses: &[f64], agg: DevAggregation) -> Result<Vec<usize>> {
    if let Some(v) = dev_losses.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite dev loss {v}")));
    }
    let m = dev_losses.len();
    agg.validate(m)?;
    let mut order: Vec<usize> = (0..m).collect();
    let k = match agg {
        DevAggregation::Regular => return Ok(order),
        DevAggregation::Low(k) => {
            order.sort_by(|&a, &b| dev_losses[b].total_cmp(&dev_losses[a]).then(a.cmp(&b)));
            k
        }
        DevAggregation::High(k) => {
            order.sort_by(|&a, &b| dev_losses[a].total_cmp(&dev_losses[b]).then(a.cmp(&b)));
            k
        }
    };
    order.truncate(k);
    order.sort_unstable();
    Ok(order)
}

pub fn aggregate_dev_loss(dev_losses: &[f64], agg: DevAggregation) -> Result<f64> {
    let active = select_active_sets(dev_losses, agg)?;
    if active.is_empty() {
        return Err(Error::Domain("no dev losses to aggregate".into()));
    }
    Ok(active.iter().map(|&i| dev_losses[i]).sum::<f64>() / active.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const LOSSES: [f64; 4] = [5.0, 2.0, 9.0, 3.0];

    #[test]
    fn selection_examples() {
        assert_eq!(
            select_active_sets(&LOSSES, DevAggregation::Low(2)).unwrap(),
            vec![0, 2]
        );
        assert_eq!(
            select_active_sets(&LOSSES, DevAggregation::High(2)).unwrap(),
            vec![1, 3]
        );
        assert_eq!(
            select_active_sets(&LOSSES, DevAggregation::Regular).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert!(matches!(
            select_active_sets(&LOSSES, DevAggregation::Low(5)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn ties_prefer_lower_index() {
        let l = [1.0, 1.0, 1.0];
        assert_eq!(
            select_active_sets(&l, DevAggregation::Low(2)).unwrap(),
            vec![0, 1]
        );
        assert_eq!(
            select_active_sets(&l, DevAggregation::High(1)).unwrap(),
            vec![0]
        );
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(
            aggregate_dev_loss(&[2.0, 4.0], DevAggregation::Regular).unwrap(),
            3.0
        );
        assert_eq!(
            aggregate_dev_loss(&LOSSES, DevAggregation::Low(2)).unwrap(),
            7.0
        );
        for agg in [
            DevAggregation::Regular,
            DevAggregation::Low(2),
            DevAggregation::High(3),
        ] {
            assert_eq!(aggregate_dev_loss(&[1.25; 4], agg).unwrap(), 1.25);
        }
    }

    #[test]
    fn parse_and_defaults() {
        assert_eq!(
            "regular".parse::<DevAggregation>().unwrap(),
            DevAggregation::Regular
        );
        assert_eq!(
            "low:4".parse::<DevAggregation>().unwrap(),
            DevAggregation::Low(4)
        );
        assert_eq!(
            "high:1".parse::<DevAggregation>().unwrap(),
            DevAggregation::High(1)
        );
        assert!("low:0".parse::<DevAggregation>().is_err());
        assert!("middle:2".parse::<DevAggregation>().is_err());
        assert_eq!(DevAggregation::low_default(8), DevAggregation::Low(4));
        assert_eq!(DevAggregation::high_default(5), DevAggregation::High(3));
        assert_eq!(DevAggregation::Low(3).to_string(), "low:3");
    }

    proptest! {
        #[test]
        fn ordering_of_aggregates(
            (losses, k) in (1usize..10).prop_flat_map(|m| (proptest::collection::vec(0.0f64..10.0, m), 1..=m))
        ) {
            let m = losses.len();
            let regular = aggregate_dev_loss(&losses, DevAggregation::Regular).unwrap();
            let mean = losses.iter().sum::<f64>() / m as f64;
            prop_assert_eq!(regular, mean);
            let low = aggregate_dev_loss(&losses, DevAggregation::Low(k)).unwrap();
            let high = aggregate_dev_loss(&losses, DevAggregation::High(k)).unwrap();
            prop_assert!(low >= regular - 1e-12 && regular >= high - 1e-12);
            let low_m = aggregate_dev_loss(&losses, DevAggregation::Low(m)).unwrap();
            let high_m = aggregate_dev_loss(&losses, DevAggregation::High(m)).unwrap();
            prop_assert!((low_m - regular).abs() < 1e-12 && (high_m - regular).abs() < 1e-12);
        }
    }
}
