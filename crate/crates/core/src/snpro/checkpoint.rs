//! Self-describing JSON checkpoints.

use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::model::{ProjectionModel, Variant};
use super::train::TrainConfig;
use crate::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "cstscrub-snpro-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub variant: Variant,
    pub input_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<TrainConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w1: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b1: Option<Vec<f64>>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl Checkpoint {
    pub fn from_model(model: &ProjectionModel, config: Option<&TrainConfig>) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            variant: model.variant,
            input_dim: model.input_dim,
            hidden: model.hidden,
            out_dim: model.out_dim,
            dropout: model.dropout,
            seed: model.seed,
            config: config.cloned(),
            w1: model.w1.as_ref().map(|w| w.iter().copied().collect()),
            b1: model.b1.as_ref().map(|b| b.to_vec()),
            w2: model.w2.iter().copied().collect(),
            b2: model.b2.to_vec(),
        }
    }

    pub fn into_model(self) -> Result<ProjectionModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Validation(format!(
                "unsupported checkpoint format {:?}",
                self.format
            )));
        }
        let shape_err =
            |what: &str| Error::Validation(format!("checkpoint: {what} has the wrong size"));
        let (w1, b1, w2_in) = match self.variant {
            Variant::Nonlinear => {
                let w1 = self.w1.ok_or_else(|| shape_err("w1"))?;
                let b1 = self.b1.ok_or_else(|| shape_err("b1"))?;
                let w1 = Array2::from_shape_vec((self.hidden, self.input_dim), w1)
                    .map_err(|_| shape_err("w1"))?;
                if b1.len() != self.hidden {
                    return Err(shape_err("b1"));
                }
                (Some(w1), Some(Array1::from(b1)), self.hidden)
            }
            Variant::Linear => {
                if self.w1.is_some() || self.b1.is_some() {
                    return Err(Error::Validation(
                        "checkpoint: linear model carries hidden weights".into(),
                    ));
                }
                (None, None, self.input_dim)
            }
        };
        let w2 =
            Array2::from_shape_vec((self.out_dim, w2_in), self.w2).map_err(|_| shape_err("w2"))?;
        if self.b2.len() != self.out_dim {
            return Err(shape_err("b2"));
        }
        Ok(ProjectionModel {
            variant: self.variant,
            input_dim: self.input_dim,
            hidden: self.hidden,
            out_dim: self.out_dim,
            dropout: self.dropout,
            seed: self.seed,
            w1,
            b1,
            w2,
            b2: Array1::from(self.b2),
        })
    }
}

pub fn save_checkpoint(
    path: &Path,
    model: &ProjectionModel,
    config: Option<&TrainConfig>,
) -> Result<()> {
    let json = serde_json::to_vec(&Checkpoint::from_model(model, config))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(ProjectionModel, Option<TrainConfig>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ckpt: Checkpoint = serde_json::from_slice(&bytes)?;
    let config = ckpt.config.clone();
    Ok((ckpt.into_model()?, config))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for variant in [Variant::Nonlinear, Variant::Linear] {
            let m = ProjectionModel::new(variant, 7, 9, 4, 0.15, 21);
            let p = dir.path().join("m.json");
            let cfg = TrainConfig::default();
            save_checkpoint(&p, &m, Some(&cfg)).unwrap();
            let (back, c) = load_checkpoint(&p).unwrap();
            assert_eq!(back, m);
            assert_eq!(c, Some(cfg));
        }
    }

    #[test]
    fn truncated_weights_rejected() {
        let m = ProjectionModel::new(Variant::Linear, 3, 0, 2, 0.0, 1);
        let mut c = Checkpoint::from_model(&m, None);
        c.w2.pop();
        assert!(c.into_model().is_err());
    }
}
