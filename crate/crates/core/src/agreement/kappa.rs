use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{MAX_LABEL, MIN_LABEL};
use crate::{Error, Result};

const K: usize = (MAX_LABEL - MIN_LABEL + 1) as usize;

/// Counts of label co-occurrence; rows are the first source, columns the
/// second. `cells[i][j]` counts positions with `a = i + 1`, `b = j + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<u8>,
    pub cells: [[u64; K]; K],
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.cells.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..K).map(|i| self.cells[i][i]).sum()
    }

    pub fn transpose(&self) -> ConfusionMatrix {
        let mut cells = [[0; K]; K];
        for (i, row) in self.cells.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                cells[j][i] = v;
            }
        }
        ConfusionMatrix {
            labels: self.labels.clone(),
            cells,
        }
    }

    /// Grid with the first source down the rows and the second across.
    pub fn render_text(&self, row_title: &str, col_title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "rows: {row_title}; columns: {col_title}");
        let _ = write!(out, "{:>6}", "");
        for l in &self.labels {
            let _ = write!(out, "{l:>8}");
        }
        let _ = writeln!(out);
        for (l, row) in self.labels.iter().zip(&self.cells) {
            let _ = write!(out, "{l:>6}");
            for v in row {
                let _ = write!(out, "{v:>8}");
            }
            let _ = writeln!(out);
        }
        out
    }
}

fn check_labels(a: &[u8], b: &[u8]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Precondition(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if let Some(bad) = a
        .iter()
        .chain(b)
        .find(|l| !(MIN_LABEL..=MAX_LABEL).contains(*l))
    {
        return Err(Error::Validation(format!(
            "label {bad} outside [{MIN_LABEL},{MAX_LABEL}]"
        )));
    }
    Ok(())
}

pub fn confusion(a: &[u8], b: &[u8]) -> Result<ConfusionMatrix> {
    check_labels(a, b)?;
    let mut cells = [[0u64; K]; K];
    for (&x, &y) in a.iter().zip(b) {
        cells[(x - MIN_LABEL) as usize][(y - MIN_LABEL) as usize] += 1;
    }
    Ok(ConfusionMatrix {
        labels: (MIN_LABEL..=MAX_LABEL).collect(),
        cells,
    })
}

/// Cohen's kappa with marginal-product chance agreement.
pub fn cohen_kappa(a: &[u8], b: &[u8]) -> Result<f64> {
    check_labels(a, b)?;
    if a.is_empty() {
        return Err(Error::Precondition("kappa needs at least one item".into()));
    }
    let m = confusion(a, b)?;
    let n = a.len() as f64;
    let observed = m.trace() as f64 / n;
    let expected: f64 = (0..K)
        .map(|i| {
            let row: u64 = m.cells[i].iter().sum();
            let col: u64 = m.cells.iter().map(|r| r[i]).sum();
            (row as f64 / n) * (col as f64 / n)
        })
        .sum();
    if expected >= 1.0 {
        return Err(Error::Undefined(
            "chance agreement is 1; both raters use a single identical label".into(),
        ));
    }
    Ok((observed - expected) / (1.0 - expected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kappa_examples() {
        assert_eq!(cohen_kappa(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap(), 1.0);
        assert_eq!(cohen_kappa(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap(), -1.0);
        assert!(matches!(
            cohen_kappa(&[3, 3], &[3, 3]),
            Err(Error::Undefined(_))
        ));
        assert!(cohen_kappa(&[1, 6], &[1, 2]).is_err());
        assert!(cohen_kappa(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let m = confusion(&[1], &[5]).unwrap();
        assert_eq!(m.cells[0][4], 1);
        assert_eq!(m.total(), 1);
        let m = confusion(&[1, 2, 3, 3], &[1, 2, 3, 3]).unwrap();
        assert_eq!(m.trace(), 4);
        assert!(confusion(&[0], &[1]).is_err());
        assert!(m.render_text("gold", "re-annotated").lines().count() == 7);
    }

    proptest! {
        #[test]
        fn symmetry(pairs in prop::collection::vec((1u8..=5, 1u8..=5), 1..40)) {
            let a: Vec<u8> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<u8> = pairs.iter().map(|p| p.1).collect();
            let m = confusion(&a, &b).unwrap();
            prop_assert_eq!(m.total(), a.len() as u64);
            prop_assert_eq!(&m, &confusion(&b, &a).unwrap().transpose());
            match (cohen_kappa(&a, &b), cohen_kappa(&b, &a)) {
                (Ok(x), Ok(y)) => {
                    prop_assert!((x - y).abs() < 1e-12);
                    prop_assert!(x <= 1.0 + 1e-12);
                    prop_assert_eq!(x == 1.0, a == b);
                }
                (Err(_), Err(_)) => {}
                other => prop_assert!(false, "asymmetric result {:?}", other),
            }
        }
    }
}
