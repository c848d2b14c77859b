//! Mini-batch training with Adam, early stopping and a finite-difference
//! gradient check.

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::embeddings::PairSet;
use super::model::{stream_rng, Mode, ProjectionModel, Variant};
use crate::agreement::spearman;
use crate::{Error, Result};

const SHUFFLE_STREAM: u64 = 1;
const DROPOUT_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub hidden: usize,
    pub out_dim: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Nonlinear,
            batch_size: 512,
            learning_rate: 1e-3,
            dropout: 0.15,
            hidden: 1024,
            out_dim: 512,
            epochs: 100,
            patience: 5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("batch_size", self.batch_size),
            ("out_dim", self.out_dim),
            ("patience", self.patience),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!(
                    "train config: {name} must be positive"
                )));
            }
        }
        if self.variant == Variant::Nonlinear && self.hidden == 0 {
            return Err(Error::Config(
                "train config: hidden must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(
                "train config: learning_rate must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(
                "train config: dropout must lie in [0, 1)".into(),
            ));
        }
        Ok(())
    }

    pub fn init_model(&self, input_dim: usize) -> ProjectionModel {
        ProjectionModel::new(
            self.variant,
            input_dim,
            self.hidden,
            self.out_dim,
            self.dropout,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    /// `None` when the validation predictions are constant.
    pub val_spearman: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ProjectionModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_spearman: Option<f64>,
}

struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    fn new(model: &ProjectionModel) -> Self {
        let shapes: Vec<usize> = model.param_slices().iter().map(|s| s.len()).collect();
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    fn step(&mut self, model: &mut ProjectionModel, grads: &[&[f64]], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (k, params) in model.param_slices_mut().into_iter().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], grads[k]);
            for i in 0..params.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / c1;
                let vhat = v[i] / c2;
                params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Spearman correlation between eval-mode predictions and gold labels.
pub fn evaluate(model: &ProjectionModel, set: &PairSet) -> Result<f64> {
    let preds = model.predict_pairs(set)?;
    spearman(&preds, &set.labels)
}

/// Trains a fresh model on `train`, keeping the parameters with the best
/// validation Spearman. Zero epochs returns the initialised model.
pub fn train(train_set: &PairSet, val: &PairSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Precondition("training set is empty".into()));
    }
    if !val.is_empty() && val.dim() != train_set.dim() {
        return Err(Error::Precondition(format!(
            "validation dimension {} differs from training dimension {}",
            val.dim(),
            train_set.dim()
        )));
    }
    let mut model = cfg.init_model(train_set.dim());
    let mut batch = cfg.batch_size;
    if train_set.len() < batch {
        log::warn!(
            "batch size {} exceeds the {} training records; clamping",
            batch,
            train_set.len()
        );
        batch = train_set.len();
    }

    let mut shuffle_rng = stream_rng(cfg.seed, SHUFFLE_STREAM);
    let mut dropout_rng = stream_rng(cfg.seed, DROPOUT_STREAM);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, ProjectionModel)> = None;
    let mut stale = 0;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(batch).enumerate() {
            let left = train_set.left.select(ndarray::Axis(0), chunk);
            let right = train_set.right.select(ndarray::Axis(0), chunk);
            let labels: Vec<f64> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let (loss, grads) = model.loss_and_gradients(
                left.view(),
                right.view(),
                &labels,
                Mode::Train(&mut dropout_rng),
            )?;
            if !loss.is_finite() {
                return Err(Error::Training(format!(
                    "non-finite loss at epoch {epoch}, batch {b} (batch size {}, learning rate {})",
                    chunk.len(),
                    cfg.learning_rate
                )));
            }
            total += loss * chunk.len() as f64;
            adam.step(&mut model, &grads.slices(), cfg.learning_rate);
        }
        let loss = total / train_set.len() as f64;

        let val_spearman = if val.is_empty() {
            None
        } else {
            evaluate(&model, val).ok()
        };
        log::debug!("epoch {epoch}: loss {loss:.6}, val spearman {val_spearman:?}");
        history.push(EpochRecord {
            epoch,
            loss,
            val_spearman,
        });

        let score = val_spearman.unwrap_or(f64::NEG_INFINITY);
        match &best {
            Some((b, _, _)) if score <= *b => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((score, epoch, model.clone()));
                stale = 0;
            }
        }
    }

    Ok(match best {
        Some((score, epoch, m)) => TrainOutcome {
            model: m,
            history,
            best_epoch: Some(epoch),
            best_val_spearman: score.is_finite().then_some(score),
        },
        None => TrainOutcome {
            model,
            history,
            best_epoch: None,
            best_val_spearman: None,
        },
    })
}

/// Largest relative error between analytic gradients and central finite
/// differences over every parameter, with dropout disabled. Gradients smaller
/// than `1e-6` in magnitude are compared against `1e-6`.
pub fn gradient_check(
    model: &ProjectionModel,
    left: ArrayView2<'_, f64>,
    right: ArrayView2<'_, f64>,
    labels: &[f64],
    epsilon: f64,
) -> Result<f64> {
    let (_, analytic) = model.loss_and_gradients(left, right, labels, Mode::Eval)?;
    let analytic: Vec<Vec<f64>> = analytic.slices().iter().map(|s| s.to_vec()).collect();
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, grad) in analytic.iter().enumerate() {
        for (i, &a) in grad.iter().enumerate() {
            let original = probe.param_slices()[k][i];
            probe.param_slices_mut()[k][i] = original + epsilon;
            let (up, _) = probe.loss_and_gradients(left, right, labels, Mode::Eval)?;
            probe.param_slices_mut()[k][i] = original - epsilon;
            let (down, _) = probe.loss_and_gradients(left, right, labels, Mode::Eval)?;
            probe.param_slices_mut()[k][i] = original;
            let numeric = (up - down) / (2.0 * epsilon);
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::snpro::embeddings::EmbeddingRecord;
    use ndarray::{Array1, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    fn random_labels(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(1..=5) as f64).collect()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for variant in [Variant::Nonlinear, Variant::Linear] {
            let mut m = ProjectionModel::new(variant, 8, 5, 3, 0.0, 17);
            for p in m.param_slices_mut() {
                p.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
            }
            let l = random_matrix(6, 8, &mut rng);
            let r = random_matrix(6, 8, &mut rng);
            let y = random_labels(6, &mut rng);
            let err = gradient_check(&m, l.view(), r.view(), &y, 1e-5).unwrap();
            assert!(err < 1e-4, "{variant:?}: {err}");
        }
    }

    #[test]
    fn perfect_fit_is_stationary() {
        let mut m = ProjectionModel::new(Variant::Linear, 2, 0, 2, 0.0, 0);
        m.w2 = Array2::eye(2);
        m.b2 = Array1::zeros(2);
        // identical inputs -> cosine 1 -> label 5; orthogonal -> cosine 0 -> label 3
        let l = ndarray::array![[1.0, 0.0], [1.0, 0.0]];
        let r = ndarray::array![[2.0, 0.0], [0.0, 1.0]];
        let (loss, g) = m
            .loss_and_gradients(l.view(), r.view(), &[5.0, 3.0], Mode::Eval)
            .unwrap();
        assert!(loss < 1e-20);
        for s in g.slices() {
            assert!(s.iter().all(|v| v.abs() < 1e-8));
        }
    }

    fn planted(n: usize, d: usize, seed: u64) -> PairSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let hidden = random_matrix(d, d, &mut rng);
        let mut records = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let a: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let za = hidden.dot(&Array1::from(a.clone()));
            let zb = hidden.dot(&Array1::from(b.clone()));
            let c = crate::snpro::cosine(za.view(), zb.view()).unwrap();
            labels.push(3.0 + 2.0 * c);
            records.push(EmbeddingRecord {
                id: i.to_string(),
                e_s1c: a,
                e_s2c: b,
                e_c: vec![0.0; d],
            });
        }
        PairSet::from_records(&records, &labels).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            hidden: 16,
            out_dim: 8,
            epochs: 3,
            dropout: 0.1,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let set = planted(40, 4, 1);
        let cfg = TrainConfig {
            epochs: 0,
            ..small_cfg()
        };
        let out = train(&set, &set, &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.model, cfg.init_model(4));
    }

    #[test]
    fn training_is_deterministic() {
        let set = planted(100, 6, 2);
        let (tr, va) = (
            set.select(&(0..80).collect::<Vec<_>>()),
            set.select(&(80..100).collect::<Vec<_>>()),
        );
        let a = train(&tr, &va, &small_cfg()).unwrap();
        let b = train(&tr, &va, &small_cfg()).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
        assert!(!a.history.is_empty());
    }

    #[test]
    fn oversized_batch_is_clamped() {
        let set = planted(10, 3, 5);
        let cfg = TrainConfig {
            batch_size: 512,
            ..small_cfg()
        };
        assert_eq!(train(&set, &set, &cfg).unwrap().history.len(), 3);
    }

    #[test]
    fn full_batch_loss_does_not_increase() {
        let set = planted(64, 5, 9);
        let cfg = TrainConfig {
            batch_size: 64,
            learning_rate: 1e-4,
            dropout: 0.0,
            epochs: 20,
            patience: 100,
            ..small_cfg()
        };
        let out = train(&set, &set, &cfg).unwrap();
        for w in out.history.windows(2) {
            assert!(w[1].loss <= w[0].loss + 1e-12, "{:?}", out.history);
        }
    }

    #[test]
    fn random_model_is_uncorrelated_with_random_labels() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let l = random_matrix(1000, 8, &mut rng);
        let r = random_matrix(1000, 8, &mut rng);
        let set = PairSet {
            ids: (0..1000).map(|i| i.to_string()).collect(),
            left: l,
            right: r,
            labels: random_labels(1000, &mut rng),
        };
        let m = ProjectionModel::new(Variant::Nonlinear, 8, 32, 16, 0.0, 8);
        assert!(evaluate(&m, &set).unwrap().abs() < 0.1);
    }

    #[test]
    fn bad_config_rejected() {
        let set = planted(10, 3, 5);
        for cfg in [
            TrainConfig {
                dropout: 1.0,
                ..small_cfg()
            },
            TrainConfig {
                batch_size: 0,
                ..small_cfg()
            },
            TrainConfig {
                learning_rate: -1.0,
                ..small_cfg()
            },
        ] {
            assert!(matches!(train(&set, &set, &cfg), Err(Error::Config(_))));
        }
    }

    #[test]
    fn diverging_run_aborts() {
        let set = planted(20, 3, 5);
        let mut bad = set.clone();
        bad.left[[0, 0]] = 1e308;
        bad.right[[0, 0]] = -1e308;
        let cfg = TrainConfig {
            dropout: 0.0,
            ..small_cfg()
        };
        assert!(train(&bad, &set, &cfg).is_err());
    }
}
