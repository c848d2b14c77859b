//! Agreement and correlation statistics for ordinal 1..5 ratings.

mod alpha;
mod bootstrap;
mod kappa;
mod rank;

use serde::{Deserialize, Serialize};

pub use alpha::{krippendorff_alpha, AlphaMetric};
pub use bootstrap::{bootstrap_significance, Significance, DEFAULT_RESAMPLES};
pub use kappa::{cohen_kappa, confusion, ConfusionMatrix};
pub use rank::{average_ranks, pearson, spearman};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub n: usize,
    pub spearman: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confusion: Option<ConfusionMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub significance: Option<Significance>,
}

/// Full comparison of two label vectors: Spearman, kappa, two-rater ordinal
/// alpha and the confusion matrix. Kappa and alpha are `None` when undefined
/// for the given labels.
pub fn compare_labels(a: &[u8], b: &[u8]) -> crate::Result<AgreementReport> {
    let to_f = |v: &[u8]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let spearman = spearman(&to_f(a), &to_f(b))?;
    let kappa = match cohen_kappa(a, b) {
        Ok(k) => Some(k),
        Err(crate::Error::Undefined(_)) => None,
        Err(e) => return Err(e),
    };
    let matrix = vec![
        a.iter().map(|&x| Some(x as i64)).collect::<Vec<_>>(),
        b.iter().map(|&x| Some(x as i64)).collect(),
    ];
    let alpha = krippendorff_alpha(&matrix, AlphaMetric::Ordinal).ok();
    Ok(AgreementReport {
        n: a.len(),
        spearman,
        kappa,
        alpha,
        confusion: Some(confusion(a, b)?),
        significance: None,
    })
}
