//! Weight-shared projection head with hand-written backpropagation.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::embeddings::PairSet;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// `W2 · dropout(relu(W1 · e + b1)) + b2`
    Nonlinear,
    /// `W2 · e + b2`
    Linear,
}

pub enum Mode<'a> {
    Eval,
    /// Inverted dropout driven by the given generator.
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    fn reborrow(&mut self) -> Mode<'_> {
        match self {
            Mode::Eval => Mode::Eval,
            Mode::Train(rng) => Mode::Train(&mut **rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    pub variant: Variant,
    pub input_dim: usize,
    pub hidden: usize,
    pub out_dim: usize,
    pub dropout: f64,
    pub seed: u64,
    /// `hidden x input_dim`, nonlinear only.
    pub w1: Option<Array2<f64>>,
    pub b1: Option<Array1<f64>>,
    /// `out_dim x (hidden | input_dim)`.
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

fn uniform_fan_in(rows: usize, cols: usize, rng: &mut impl Rng) -> Array2<f64> {
    let bound = 1.0 / (cols as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-bound..bound))
}

/// Intermediate values kept for the backward pass.
struct Activations {
    pre: Option<Array2<f64>>,
    mask: Option<Array2<f64>>,
    hidden_out: Option<Array2<f64>>,
    out: Array2<f64>,
}

/// Parameter gradients, laid out like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Option<Array2<f64>>,
    pub b1: Option<Array1<f64>>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    fn zeros_like(m: &ProjectionModel) -> Self {
        Gradients {
            w1: m.w1.as_ref().map(|w| Array2::zeros(w.raw_dim())),
            b1: m.b1.as_ref().map(|b| Array1::zeros(b.raw_dim())),
            w2: Array2::zeros(m.w2.raw_dim()),
            b2: Array1::zeros(m.b2.raw_dim()),
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::with_capacity(4);
        if let (Some(w1), Some(b1)) = (&self.w1, &self.b1) {
            v.push(w1.as_slice().expect("standard layout"));
            v.push(b1.as_slice().expect("standard layout"));
        }
        v.push(self.w2.as_slice().expect("standard layout"));
        v.push(self.b2.as_slice().expect("standard layout"));
        v
    }
}

impl ProjectionModel {
    /// Fan-in uniform weights, zero biases.
    pub fn new(
        variant: Variant,
        input_dim: usize,
        hidden: usize,
        out_dim: usize,
        dropout: f64,
        seed: u64,
    ) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64_stream(seed, 0);
        let (w1, b1, w2_in) = match variant {
            Variant::Nonlinear => (
                Some(uniform_fan_in(hidden, input_dim, &mut rng)),
                Some(Array1::zeros(hidden)),
                hidden,
            ),
            Variant::Linear => (None, None, input_dim),
        };
        ProjectionModel {
            variant,
            input_dim,
            hidden: if variant == Variant::Linear {
                0
            } else {
                hidden
            },
            out_dim,
            dropout,
            seed,
            w1,
            b1,
            w2: uniform_fan_in(out_dim, w2_in, &mut rng),
            b2: Array1::zeros(out_dim),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = Vec::with_capacity(4);
        if let (Some(w1), Some(b1)) = (&self.w1, &self.b1) {
            v.push(w1.as_slice().expect("standard layout"));
            v.push(b1.as_slice().expect("standard layout"));
        }
        v.push(self.w2.as_slice().expect("standard layout"));
        v.push(self.b2.as_slice().expect("standard layout"));
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = Vec::with_capacity(4);
        if let (Some(w1), Some(b1)) = (&mut self.w1, &mut self.b1) {
            v.push(w1.as_slice_mut().expect("standard layout"));
            v.push(b1.as_slice_mut().expect("standard layout"));
        }
        v.push(self.w2.as_slice_mut().expect("standard layout"));
        v.push(self.b2.as_slice_mut().expect("standard layout"));
        v
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::Precondition(format!(
                "input dimension {} does not match model dimension {}",
                x.ncols(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite input to projection".into()));
        }
        Ok(())
    }

    fn forward_batch_cached(&self, x: ArrayView2<'_, f64>, mode: Mode<'_>) -> Activations {
        match (&self.w1, &self.b1) {
            (Some(w1), Some(b1)) => {
                let pre = x.dot(&w1.t()) + b1;
                let mut h = pre.mapv(|v| v.max(0.0));
                let mask = match mode {
                    Mode::Train(rng) if self.dropout > 0.0 => {
                        let keep = 1.0 - self.dropout;
                        let scale = 1.0 / keep;
                        let mask = Array2::from_shape_simple_fn(h.raw_dim(), || {
                            if rng.random::<f64>() < keep {
                                scale
                            } else {
                                0.0
                            }
                        });
                        h *= &mask;
                        Some(mask)
                    }
                    _ => None,
                };
                let out = h.dot(&self.w2.t()) + &self.b2;
                Activations {
                    pre: Some(pre),
                    mask,
                    hidden_out: Some(h),
                    out,
                }
            }
            _ => Activations {
                pre: None,
                mask: None,
                hidden_out: None,
                out: x.dot(&self.w2.t()) + &self.b2,
            },
        }
    }

    /// Projects each row of `x`.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>, mode: Mode<'_>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.forward_batch_cached(x, mode).out)
    }

    pub fn forward(&self, e: &[f64], mode: Mode<'_>) -> Result<Array1<f64>> {
        let x = ArrayView2::from_shape((1, e.len()), e).expect("row vector");
        Ok(self.forward_batch(x, mode)?.row(0).to_owned())
    }

    /// Accumulates parameter gradients for upstream gradient `dout`.
    fn backward(
        &self,
        x: ArrayView2<'_, f64>,
        acts: &Activations,
        dout: &Array2<f64>,
        grads: &mut Gradients,
    ) {
        grads.b2 += &dout.sum_axis(Axis(0));
        match (&acts.hidden_out, &acts.pre) {
            (Some(h), Some(pre)) => {
                grads.w2 += &dout.t().dot(h);
                let mut dh = dout.dot(&self.w2);
                if let Some(mask) = &acts.mask {
                    dh *= mask;
                }
                Zip::from(&mut dh).and(pre).for_each(|g, &p| {
                    if p <= 0.0 {
                        *g = 0.0;
                    }
                });
                if let Some(gw1) = grads.w1.as_mut() {
                    *gw1 += &dh.t().dot(&x);
                }
                if let Some(gb1) = grads.b1.as_mut() {
                    *gb1 += &dh.sum_axis(Axis(0));
                }
            }
            _ => {
                grads.w2 += &dout.t().dot(&x);
            }
        }
    }

    /// Cosine similarity of the eval-mode projections; a zero-norm projection
    /// scores 0.
    pub fn predict_similarity(&self, e1: &[f64], e2: &[f64]) -> Result<f64> {
        let z1 = self.forward(e1, Mode::Eval)?;
        let z2 = self.forward(e2, Mode::Eval)?;
        Ok(cosine(z1.view(), z2.view()).unwrap_or_else(|| {
            log::warn!("zero-norm projection; similarity defined as 0");
            0.0
        }))
    }

    pub fn predict_pairs(&self, set: &PairSet) -> Result<Vec<f64>> {
        let z1 = self.forward_batch(set.left.view(), Mode::Eval)?;
        let z2 = self.forward_batch(set.right.view(), Mode::Eval)?;
        Ok(z1
            .outer_iter()
            .zip(z2.outer_iter())
            .map(|(a, b)| cosine(a, b).unwrap_or(0.0))
            .collect())
    }

    /// Mean squared error between cosine scores and `(y - 3) / 2`, with
    /// gradients for every parameter. `mode` controls dropout; both sides of
    /// a pair draw independent masks.
    pub fn loss_and_gradients(
        &self,
        left: ArrayView2<'_, f64>,
        right: ArrayView2<'_, f64>,
        labels: &[f64],
        mut mode: Mode<'_>,
    ) -> Result<(f64, Gradients)> {
        self.check_input(left)?;
        self.check_input(right)?;
        let n = labels.len();
        if left.nrows() != n || right.nrows() != n || n == 0 {
            return Err(Error::Precondition(
                "batch shapes do not match labels".into(),
            ));
        }
        let acts1 = self.forward_batch_cached(left, mode.reborrow());
        let acts2 = self.forward_batch_cached(right, mode.reborrow());
        let (z1, z2) = (&acts1.out, &acts2.out);

        let mut loss = 0.0;
        let mut d1 = Array2::zeros(z1.raw_dim());
        let mut d2 = Array2::zeros(z2.raw_dim());
        for (i, &label) in labels.iter().enumerate() {
            let (a, b) = (z1.row(i), z2.row(i));
            let target = target_similarity(label);
            let na = a.dot(&a).sqrt();
            let nb = b.dot(&b).sqrt();
            if na == 0.0 || nb == 0.0 {
                loss += target * target;
                continue;
            }
            let s = a.dot(&b) / (na * nb);
            let r = s - target;
            loss += r * r;
            let g = 2.0 * r / n as f64;
            // ds/da = b/(|a||b|) - s a/|a|^2
            let inv = 1.0 / (na * nb);
            d1.row_mut(i)
                .assign(&((&b * inv - &a * (s / (na * na))) * g));
            d2.row_mut(i)
                .assign(&((&a * inv - &b * (s / (nb * nb))) * g));
        }
        loss /= n as f64;

        let mut grads = Gradients::zeros_like(self);
        self.backward(left, &acts1, &d1, &mut grads);
        self.backward(right, &acts2, &d2, &mut grads);
        Ok((loss, grads))
    }
}

/// Gold rating on 1..5 mapped onto the cosine range.
pub fn target_similarity(label: f64) -> f64 {
    (label - 3.0) / 2.0
}

pub fn cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
    }
}

trait SeedStream {
    fn seed_from_u64_stream(seed: u64, stream: u64) -> Self;
}

impl SeedStream for rand_chacha::ChaCha8Rng {
    fn seed_from_u64_stream(seed: u64, stream: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng
    }
}

/// Independent generator for one purpose (init, shuffling, dropout).
pub(crate) fn stream_rng(seed: u64, stream: u64) -> rand_chacha::ChaCha8Rng {
    rand_chacha::ChaCha8Rng::seed_from_u64_stream(seed, stream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_at_origin_is_bias() {
        let mut m = ProjectionModel::new(Variant::Linear, 4, 0, 3, 0.0, 1);
        m.b2 = Array1::from(vec![0.5, -1.0, 2.0]);
        let z = m.forward(&[0.0; 4], Mode::Eval).unwrap();
        assert_eq!(z, m.b2);
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let m = ProjectionModel::new(Variant::Nonlinear, 6, 10, 4, 0.0, 3);
        let e = [0.3, -0.2, 1.0, 0.5, -0.7, 0.1];
        let mut rng = stream_rng(9, 2);
        assert_eq!(
            m.forward(&e, Mode::Train(&mut rng)).unwrap(),
            m.forward(&e, Mode::Eval).unwrap()
        );
    }

    #[test]
    fn seeded_train_mode_repeats() {
        let m = ProjectionModel::new(Variant::Nonlinear, 6, 32, 4, 0.5, 3);
        let e = [0.3, -0.2, 1.0, 0.5, -0.7, 0.1];
        let a = m.forward(&e, Mode::Train(&mut stream_rng(5, 2))).unwrap();
        let b = m.forward(&e, Mode::Train(&mut stream_rng(5, 2))).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, m.forward(&e, Mode::Eval).unwrap());
    }

    #[test]
    fn non_finite_input_rejected() {
        let m = ProjectionModel::new(Variant::Linear, 2, 0, 2, 0.0, 0);
        assert!(m.forward(&[f64::INFINITY, 0.0], Mode::Eval).is_err());
        assert!(m.forward(&[1.0], Mode::Eval).is_err());
    }

    #[test]
    fn similarity_properties() {
        let m = ProjectionModel::new(Variant::Nonlinear, 5, 16, 8, 0.1, 11);
        let e1 = [0.2, 0.4, -0.1, 0.9, -0.3];
        let e2 = [-0.5, 0.1, 0.3, 0.2, 0.8];
        assert_abs_diff_eq!(
            m.predict_similarity(&e1, &e1).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let s = m.predict_similarity(&e1, &e2).unwrap();
        assert_eq!(s, m.predict_similarity(&e2, &e1).unwrap());
        let z1 = m.forward(&e1, Mode::Eval).unwrap();
        let z2 = m.forward(&e2, Mode::Eval).unwrap();
        let direct = z1.dot(&z2) / (z1.dot(&z1).sqrt() * z2.dot(&z2).sqrt());
        assert_abs_diff_eq!(s, direct, epsilon = 1e-12);
    }

    #[test]
    fn orthogonal_projections_score_zero() {
        let mut m = ProjectionModel::new(Variant::Linear, 2, 0, 2, 0.0, 0);
        m.w2 = Array2::eye(2);
        assert_eq!(m.predict_similarity(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(m.predict_similarity(&[0.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
    }
}
