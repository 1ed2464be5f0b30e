//! Fully connected ReLU network with an explicit backward pass.
//!
//! Batches are column-major: an input batch is `in_dim × batch`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out × in`
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: DMatrix::zeros(output, input),
            bias: DVector::zeros(output),
        }
    }

    /// Orthogonal weights scaled by `gain`, zero bias.
    pub fn orthogonal(input: usize, output: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let tall = output >= input;
        let (r, c) = if tall { (output, input) } else { (input, output) };
        let g = DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal));
        let qr = g.qr();
        let mut q = qr.q();
        // Sign fix so the distribution is uniform over orthogonal matrices.
        let rd = qr.r().diagonal();
        for j in 0..c {
            if rd[j] < 0.0 {
                q.column_mut(j).neg_mut();
            }
        }
        let w = if tall { q } else { q.transpose() };
        Self {
            weight: w * gain,
            bias: DVector::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

/// Activations saved by [`Mlp::forward_batch`] for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpCache {
    /// Input of each layer (post-ReLU output of the previous one).
    inputs: Vec<DMatrix<f64>>,
    /// Pre-activation of each hidden layer.
    pre: Vec<DMatrix<f64>>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`; hidden layers use gain √2.
    pub fn orthogonal(sizes: &[usize], output_gain: f64, rng: &mut impl Rng) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n {
                    output_gain
                } else {
                    std::f64::consts::SQRT_2
                };
                Dense::orthogonal(sizes[i], sizes[i + 1], gain, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        Self {
            layers: sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.input_dim(), l.output_dim()))
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(Dense::output_dim));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Single-sample forward pass. Caller guarantees `x.len() == input_dim()`.
    pub fn forward(&self, x: &[f64]) -> DVector<f64> {
        let mut a = DVector::from_column_slice(x);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &a + &layer.bias;
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        a
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> (DMatrix<f64>, MlpCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = &layer.weight * &a;
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            inputs.push(a);
            if i < last {
                pre.push(z.clone());
                z.apply(|v| *v = v.max(0.0));
            }
            a = z;
        }
        (a, MlpCache { inputs, pre })
    }

    /// Parameter gradients given `d loss / d output` (`out × batch`).
    /// The ReLU derivative at exactly zero is taken as zero.
    pub fn backward(&self, cache: &MlpCache, grad_out: &DMatrix<f64>) -> Mlp {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut dz = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &cache.inputs[i];
            let dw = &dz * input.transpose();
            let db = DVector::from_iterator(dz.nrows(), dz.row_iter().map(|r| r.sum()));
            grads.push(Dense {
                weight: dw,
                bias: db,
            });
            if i > 0 {
                let mut da = layer.weight.transpose() * &dz;
                da.zip_apply(&cache.pre[i - 1], |g, z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
                dz = da;
            }
        }
        grads.reverse();
        Mlp { layers: grads }
    }

    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn add_scaled(&mut self, other: &Mlp, scale: f64) {
        for (a, b) in self.params_mut().zip(other.params()) {
            *a += scale * b;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.params().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|v| v.is_finite())
    }
}
