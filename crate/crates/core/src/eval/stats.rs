//! Robust aggregate statistics over episode returns.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 2000;
pub const DEFAULT_LEVEL: f64 = 0.95;

fn nonempty(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::contract("statistic of an empty list"));
    }
    Ok(())
}

pub fn mean(values: &[f64]) -> Result<f64> {
    nonempty(values)?;
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Interquartile mean: sort, drop `⌊n/4⌋` values from each end, average the rest.
pub fn iqm(values: &[f64]) -> Result<f64> {
    nonempty(values)?;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(iqm_sorted(&sorted))
}

fn iqm_sorted(sorted: &[f64]) -> f64 {
    let cut = sorted.len() / 4;
    let kept = &sorted[cut..sorted.len() - cut];
    kept.iter().sum::<f64>() / kept.len() as f64
}

/// Percentile-bootstrap confidence interval for the IQM.
///
/// The interval is widened to contain the point IQM when the percentiles of a
/// skewed resample distribution would exclude it.
pub fn bootstrap_ci(values: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    nonempty(values)?;
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::contract(
            "bootstrap needs 0 < level < 1 and resamples >= 1",
        ));
    }
    let point = iqm(values)?;
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sample = vec![0.0; n];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for s in sample.iter_mut() {
                *s = values[rng.random_range(0..n)];
            }
            sample.sort_by(f64::total_cmp);
            iqm_sorted(&sample)
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let tail = (1.0 - level) / 2.0;
    let low = quantile_sorted(&stats, tail);
    let high = quantile_sorted(&stats, 1.0 - tail);
    Ok((low.min(point), high.max(point)))
}

/// Linear-interpolated quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `100·(value − baseline)/baseline`, or 0 when the baseline is 0.
pub fn percent_change(value: f64, baseline: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        100.0 * (value - baseline) / baseline
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn oracle_iqm(values: &[f64]) -> f64 {
        let mut v = values.to_vec();
        // Insertion sort keeps the oracle independent of the library sort.
        for i in 1..v.len() {
            let mut j = i;
            while j > 0 && v[j - 1] > v[j] {
                v.swap(j - 1, j);
                j -= 1;
            }
        }
        let q = v.len() / 4;
        let mid: Vec<f64> = v[q..v.len() - q].to_vec();
        mid.iter().sum::<f64>() / mid.len() as f64
    }

    #[test]
    fn one_to_eight() {
        let v: Vec<f64> = (1..=8).map(f64::from).collect();
        assert_eq!(iqm(&v).unwrap(), 4.5);
    }

    #[test]
    fn short_lists_use_plain_mean() {
        assert_eq!(iqm(&[1.0, 2.0, 6.0]).unwrap(), 3.0);
        assert_eq!(iqm(&[2.5; 7]).unwrap(), 2.5);
        assert!(iqm(&[]).is_err());
        assert!(bootstrap_ci(&[], 0.95, 10, 0).is_err());
    }

    #[test]
    fn matches_brute_force_on_random_lists() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let len = rng.random_range(1..120);
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(-5.0..5.0)).collect();
            assert!((iqm(&v).unwrap() - oracle_iqm(&v)).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_list_has_degenerate_interval() {
        let (lo, hi) = bootstrap_ci(&[0.7; 50], 0.95, 2000, 1).unwrap();
        assert!((lo - 0.7).abs() < 1e-12 && (hi - 0.7).abs() < 1e-12);
        assert_eq!(bootstrap_ci(&[2.0; 50], 0.95, 2000, 1).unwrap(), (2.0, 2.0));
    }

    #[test]
    fn bootstrap_is_seeded() {
        let v: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
        assert_eq!(
            bootstrap_ci(&v, 0.95, 500, 4).unwrap(),
            bootstrap_ci(&v, 0.95, 500, 4).unwrap()
        );
    }

    #[test]
    fn interval_contains_point_estimate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..100 {
            let len = rng.random_range(1..80);
            let v: Vec<f64> = (0..len).map(|_| rng.random_range(0.0..1.0)).collect();
            let (lo, hi) = bootstrap_ci(&v, 0.95, 300, seed).unwrap();
            let p = iqm(&v).unwrap();
            assert!(lo <= p && p <= hi);
        }
    }

    #[test]
    fn more_samples_narrow_the_interval() {
        let dist = Normal::new(0.0, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let width = |n: usize, seed: u64, rng: &mut ChaCha8Rng| {
            let v: Vec<f64> = (0..n).map(|_| dist.sample(rng)).collect();
            let (lo, hi) = bootstrap_ci(&v, 0.95, 400, seed).unwrap();
            hi - lo
        };
        let (mut small, mut large) = (0.0, 0.0);
        for t in 0..50 {
            small += width(20, t, &mut rng);
            large += width(500, t, &mut rng);
        }
        assert!(small >= large, "{small} < {large}");
    }

    #[test]
    fn percent_change_examples() {
        assert!((percent_change(0.4, 1.0) + 60.0).abs() < 1e-12);
        assert_eq!(percent_change(0.4, 0.0), 0.0);
    }

    proptest! {
        #[test]
        fn iqm_within_range(v in prop::collection::vec(-1e6f64..1e6, 1..200)) {
            let m = iqm(&v).unwrap();
            let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-6 && m <= hi + 1e-6);
        }
    }
}
