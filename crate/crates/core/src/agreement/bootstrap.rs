use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::spearman;
use crate::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const MIN_RESAMPLES: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    /// `spearman(gold, pred_b) - spearman(gold, pred_a)` on the full sample.
    pub delta: f64,
    /// One-sided: share of usable resamples whose delta is `<= 0`.
    pub p_value: f64,
    pub resamples: usize,
    /// Resamples dropped because a resampled vector was constant.
    pub skipped: usize,
    pub seed: u64,
}

/// Paired bootstrap test of whether `pred_b` correlates better with `gold`
/// than `pred_a` does. Instances are resampled with replacement and the same
/// indices are used for both systems.
pub fn bootstrap_significance(
    gold: &[f64],
    pred_a: &[f64],
    pred_b: &[f64],
    resamples: usize,
    seed: u64,
) -> Result<Significance> {
    if gold.len() != pred_a.len() || gold.len() != pred_b.len() {
        return Err(Error::Precondition(
            "gold and predictions differ in length".into(),
        ));
    }
    if resamples < MIN_RESAMPLES {
        return Err(Error::Precondition(format!(
            "need at least {MIN_RESAMPLES} resamples, got {resamples}"
        )));
    }
    let delta = spearman(gold, pred_b)? - spearman(gold, pred_a)?;

    let n = gold.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut g, mut a, mut b) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    let mut not_better = 0usize;
    let mut skipped = 0usize;
    for _ in 0..resamples {
        for i in 0..n {
            let j = rng.random_range(0..n);
            g[i] = gold[j];
            a[i] = pred_a[j];
            b[i] = pred_b[j];
        }
        match (spearman(&g, &b), spearman(&g, &a)) {
            (Ok(rb), Ok(ra)) => {
                if rb - ra <= 0.0 {
                    not_better += 1;
                }
            }
            (Err(Error::Undefined(_)), _) | (_, Err(Error::Undefined(_))) => skipped += 1,
            (Err(e), _) | (_, Err(e)) => return Err(e),
        }
    }
    let used = resamples - skipped;
    if used == 0 {
        return Err(Error::Undefined(
            "every bootstrap resample was degenerate".into(),
        ));
    }
    Ok(Significance {
        delta,
        p_value: not_better as f64 / used as f64,
        resamples,
        skipped,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gold(n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| ((i * 7) % 5 + 1) as f64 + i as f64 * 0.01)
            .collect()
    }

    #[test]
    fn identical_systems_never_significant() {
        let g = gold(40);
        let p: Vec<f64> = g.iter().map(|v| v * 2.0 + (v * 3.0).sin()).collect();
        let s = bootstrap_significance(&g, &p, &p, 1000, 7).unwrap();
        assert_eq!(s.delta, 0.0);
        assert!(s.p_value >= 0.5);
    }

    #[test]
    fn extreme_separation() {
        let g = gold(50);
        let reversed: Vec<f64> = g.iter().map(|v| -v).collect();
        let s = bootstrap_significance(&g, &reversed, &g, 2000, 11).unwrap();
        assert!((s.delta - 2.0).abs() < 1e-12);
        assert!(s.p_value < 0.001);
    }

    #[test]
    fn seeded_determinism_and_preconditions() {
        let g = gold(30);
        let a: Vec<f64> = g
            .iter()
            .enumerate()
            .map(|(i, v)| v + (i % 3) as f64)
            .collect();
        let s1 = bootstrap_significance(&g, &a, &g, 1000, 3).unwrap();
        let s2 = bootstrap_significance(&g, &a, &g, 1000, 3).unwrap();
        assert_eq!(s1, s2);
        assert!(bootstrap_significance(&g, &a, &g, 999, 3).is_err());
        assert!(bootstrap_significance(&g, &a[..5], &g, 1000, 3).is_err());
    }

    #[test]
    fn degenerate_resamples_are_counted() {
        // two instances: about half the resamples repeat one index
        let s = bootstrap_significance(&[1.0, 2.0], &[2.0, 1.0], &[1.0, 2.0], 1000, 5).unwrap();
        assert!(s.skipped > 300 && s.skipped < 700, "{}", s.skipped);
        assert_eq!(s.p_value, 0.0);
    }
}
