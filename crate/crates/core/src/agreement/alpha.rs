use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphaMetric {
    Ordinal,
    Nominal,
}

/// Krippendorff's alpha over a raters x units matrix (`None` = missing).
///
/// Built on the coincidence matrix: only units with at least two observed
/// values are pairable, and each contributes its ordered value pairs weighted
/// by `1 / (m_u - 1)`. The ordinal difference between values `c <= k` is
/// `(sum_{g=c..=k} n_g - (n_c + n_k) / 2)^2` over the pairable marginals.
pub fn krippendorff_alpha(matrix: &[Vec<Option<i64>>], metric: AlphaMetric) -> Result<f64> {
    let units = matrix.first().map_or(0, Vec::len);
    if matrix.iter().any(|row| row.len() != units) {
        return Err(Error::Precondition("ragged rating matrix".into()));
    }

    // coincidences keyed by (value, value)
    let mut coincidence: BTreeMap<(i64, i64), f64> = BTreeMap::new();
    let mut unit_values = Vec::with_capacity(matrix.len());
    for u in 0..units {
        unit_values.clear();
        unit_values.extend(matrix.iter().filter_map(|row| row[u]));
        let m = unit_values.len();
        if m < 2 {
            continue;
        }
        let weight = 1.0 / (m - 1) as f64;
        for (i, &c) in unit_values.iter().enumerate() {
            for (j, &k) in unit_values.iter().enumerate() {
                if i != j {
                    *coincidence.entry((c, k)).or_default() += weight;
                }
            }
        }
    }

    let mut marginals: BTreeMap<i64, f64> = BTreeMap::new();
    for (&(c, _), &o) in &coincidence {
        *marginals.entry(c).or_default() += o;
    }
    let n: f64 = marginals.values().sum();
    if n < 2.0 {
        return Err(Error::Precondition("fewer than two pairable values".into()));
    }

    let values: Vec<i64> = marginals.keys().copied().collect();
    let counts: Vec<f64> = marginals.values().copied().collect();
    let index = |v: i64| {
        values
            .binary_search(&v)
            .expect("value present in marginals")
    };
    // prefix[i] = sum of counts[..i]
    let mut prefix = vec![0.0; counts.len() + 1];
    for (i, c) in counts.iter().enumerate() {
        prefix[i + 1] = prefix[i] + c;
    }
    let delta = |a: usize, b: usize| -> f64 {
        if a == b {
            return 0.0;
        }
        match metric {
            AlphaMetric::Nominal => 1.0,
            AlphaMetric::Ordinal => {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let span = prefix[hi + 1] - prefix[lo] - (counts[lo] + counts[hi]) / 2.0;
                span * span
            }
        }
    };

    let observed: f64 = coincidence
        .iter()
        .map(|(&(c, k), &o)| o * delta(index(c), index(k)))
        .sum();
    let mut expected = 0.0;
    for a in 0..values.len() {
        for b in 0..values.len() {
            expected += counts[a] * counts[b] * delta(a, b);
        }
    }
    expected /= n - 1.0;
    if expected == 0.0 {
        return Err(Error::Undefined("no variation in pairable values".into()));
    }
    Ok(1.0 - observed / expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[Option<i64>]]) -> Vec<Vec<Option<i64>>> {
        rows.iter().map(|r| r.to_vec()).collect()
    }

    #[test]
    fn unanimous_units_give_one() {
        let row = [Some(1), Some(3), Some(5), Some(3)];
        let matrix = m(&[&row, &row, &row, &row, &row]);
        assert_eq!(
            krippendorff_alpha(&matrix, AlphaMetric::Ordinal).unwrap(),
            1.0
        );
    }

    #[test]
    fn errors() {
        let flat = m(&[&[Some(2), Some(2)], &[Some(2), Some(2)]]);
        assert!(matches!(
            krippendorff_alpha(&flat, AlphaMetric::Ordinal),
            Err(Error::Undefined(_))
        ));
        let lonely = m(&[&[Some(2), None], &[None, Some(3)]]);
        assert!(matches!(
            krippendorff_alpha(&lonely, AlphaMetric::Ordinal),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn nominal_two_raters_textbook() {
        // Two raters, units (1,1) (1,2) (2,2) (2,2): o11=2, o12=o21=1, o22=4, n=8
        // D_o = 2, D_e = (n1 n2 * 2) / 7 = 2*3*5/7 = 30/7 -> alpha = 1 - 14/30
        let matrix = m(&[
            &[Some(1), Some(1), Some(2), Some(2)],
            &[Some(1), Some(2), Some(2), Some(2)],
        ]);
        let a = krippendorff_alpha(&matrix, AlphaMetric::Nominal).unwrap();
        assert!((a - (1.0 - 14.0 / 30.0)).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn permutation_invariant(
            cells in prop::collection::vec(prop::collection::vec(prop::option::weighted(0.8, 1i64..=5), 6), 3),
            rot in 0usize..6,
        ) {
            if let Ok(a) = krippendorff_alpha(&cells, AlphaMetric::Ordinal) {
                prop_assert!(a <= 1.0 + 1e-12);
                let mut rows = cells.clone();
                rows.reverse();
                prop_assert!((krippendorff_alpha(&rows, AlphaMetric::Ordinal).unwrap() - a).abs() < 1e-12);
                let cols: Vec<Vec<_>> = cells.iter().map(|r| { let mut r = r.clone(); r.rotate_left(rot); r }).collect();
                prop_assert!((krippendorff_alpha(&cols, AlphaMetric::Ordinal).unwrap() - a).abs() < 1e-12);
            }
        }
    }
}
