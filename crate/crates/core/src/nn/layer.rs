//! Affine layers with optional binary connectivity masks, plus leaky ReLU.
//!
//! Masked weights are kept at exactly zero: the mask is applied when a layer
//! is built and on every parameter write, so the stored weight matrix always
//! equals `weights ⊙ mask` and the forward pass can use it directly. Backward
//! passes re-apply the mask to weight gradients, which keeps masked entries
//! pinned at zero under any optimizer.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::unit_uniform;

#[derive(Debug, Clone)]
pub struct AffineLayer {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `[out_dim × in_dim]`, masked entries always zero.
    weights: Vec<f64>,
    biases: Vec<f64>,
    /// Binary mask, same layout as `weights`; `None` means all-ones.
    mask: Option<Vec<f64>>,
}

/// Inputs retained by `forward` for the matching backward pass.
#[derive(Debug, Clone)]
pub struct AffineCache {
    input: Matrix,
}

impl AffineCache {
    pub fn input(&self) -> &Matrix {
        &self.input
    }
}

#[derive(Debug, Clone)]
pub struct AffineGrads {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub input: Matrix,
}

impl AffineLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        AffineLayer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
            mask: None,
        }
    }

    /// Fan-balanced uniform init in ±√(6/(in+out)); biases zero. The mask, if
    /// any, is applied after initialization.
    pub fn init(in_dim: usize, out_dim: usize, mask: Option<Vec<f64>>, rng: &mut ChaCha20Rng) -> Result<Self> {
        if let Some(m) = &mask {
            if m.len() != in_dim * out_dim {
                return Err(Error::shape(
                    "AffineLayer::init",
                    format!("mask len {} vs {}x{}", m.len(), out_dim, in_dim),
                ));
            }
            if m.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidArgument("mask entries must be 0 or 1".into()));
            }
        }
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut weights: Vec<f64> = (0..in_dim * out_dim)
            .map(|_| (2.0 * unit_uniform(rng) - 1.0) * limit)
            .collect();
        if let Some(m) = &mask {
            for (w, &mv) in weights.iter_mut().zip(m) {
                *w *= mv;
            }
        }
        Ok(AffineLayer {
            in_dim,
            out_dim,
            weights,
            biases: vec![0.0; out_dim],
            mask,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn mask(&self) -> Option<&[f64]> {
        self.mask.as_deref()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.weights);
        out.extend_from_slice(&self.biases);
    }

    /// Reads `param_count()` values; masked weight slots are forced to zero
    /// so the stored-masked invariant survives arbitrary writes.
    pub fn read_params(&mut self, src: &[f64]) {
        let nw = self.weights.len();
        let nb = self.biases.len();
        self.weights.copy_from_slice(&src[..nw]);
        self.biases.copy_from_slice(&src[nw..nw + nb]);
        if let Some(m) = &self.mask {
            for (w, &mv) in self.weights.iter_mut().zip(m) {
                *w *= mv;
            }
        }
    }

    /// `output = input · (weights ⊙ mask)ᵀ + biases`, broadcast over the batch.
    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, AffineCache)> {
        let output = self.apply(input)?;
        Ok((
            output,
            AffineCache {
                input: input.clone(),
            },
        ))
    }

    /// Like `forward` but takes ownership of the input, so chained layers do
    /// not copy activations into their caches.
    pub fn forward_owned(&self, input: Matrix) -> Result<(Matrix, AffineCache)> {
        let output = self.apply(&input)?;
        Ok((output, AffineCache { input }))
    }

    /// The affine map alone, no cache.
    pub fn apply(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim {
            return Err(Error::shape(
                "affine_forward",
                format!("input width {} vs layer in_dim {}", input.cols(), self.in_dim),
            ));
        }
        let batch = input.rows();
        let n = self.in_dim;
        let split = n - n % 4;
        let mut output = Matrix::zeros(batch, self.out_dim);
        for b in 0..batch {
            let x = input.row(b);
            let out = output.row_mut(b);
            for o in 0..self.out_dim {
                let w = &self.weights[o * n..(o + 1) * n];
                // Four independent accumulators keep the dot product off the
                // FP-add latency chain.
                let (mut a0, mut a1, mut a2, mut a3) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
                let mut i = 0;
                while i < split {
                    a0 += x[i] * w[i];
                    a1 += x[i + 1] * w[i + 1];
                    a2 += x[i + 2] * w[i + 2];
                    a3 += x[i + 3] * w[i + 3];
                    i += 4;
                }
                let mut acc = (a0 + a1) + (a2 + a3) + self.biases[o];
                while i < n {
                    acc += x[i] * w[i];
                    i += 1;
                }
                out[o] = acc;
            }
        }
        Ok(output)
    }

    /// Exact gradients of the forward map; weight gradients are already
    /// masked (zero wherever the mask is zero).
    pub fn backward(&self, cache: &AffineCache, grad_output: &Matrix) -> Result<AffineGrads> {
        let batch = cache.input.rows();
        if grad_output.rows() != batch || grad_output.cols() != self.out_dim {
            return Err(Error::shape(
                "affine_backward",
                format!(
                    "grad_output {}x{} vs expected {}x{}",
                    grad_output.rows(),
                    grad_output.cols(),
                    batch,
                    self.out_dim
                ),
            ));
        }
        let mut grad_w = vec![0.0; self.weights.len()];
        let mut grad_b = vec![0.0; self.out_dim];
        let mut grad_in = Matrix::zeros(batch, self.in_dim);
        for b in 0..batch {
            let x = cache.input.row(b);
            let go = grad_output.row(b);
            let gi = grad_in.row_mut(b);
            for o in 0..self.out_dim {
                let g = go[o];
                grad_b[o] += g;
                let row = o * self.in_dim;
                let w = &self.weights[row..row + self.in_dim];
                let gw = &mut grad_w[row..row + self.in_dim];
                for i in 0..self.in_dim {
                    gw[i] += x[i] * g;
                    gi[i] += w[i] * g;
                }
            }
        }
        if let Some(m) = &self.mask {
            for (g, &mv) in grad_w.iter_mut().zip(m) {
                *g *= mv;
            }
        }
        Ok(AffineGrads {
            weights: grad_w,
            biases: grad_b,
            input: grad_in,
        })
    }

    #[cfg(test)]
    pub(crate) fn set_weights(&mut self, w: Vec<f64>) {
        assert_eq!(w.len(), self.weights.len());
        self.weights = w;
        if let Some(m) = &self.mask {
            for (w, &mv) in self.weights.iter_mut().zip(m) {
                *w *= mv;
            }
        }
    }

    #[cfg(test)]
    pub(crate) fn set_biases(&mut self, b: Vec<f64>) {
        assert_eq!(b.len(), self.biases.len());
        self.biases = b;
    }
}

/// Leaky ReLU: `x` where `x > 0`, else `slope·x`.
pub fn leaky_relu(input: &Matrix, slope: f64) -> Matrix {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v <= 0.0 {
            *v *= slope;
        }
    }
    out
}

/// Gradient of leaky ReLU given the pre-activation input; the subgradient at
/// exactly zero is the slope.
pub fn leaky_relu_backward(pre_activation: &Matrix, grad_output: &Matrix, slope: f64) -> Matrix {
    let mut out = grad_output.clone();
    for (g, &a) in out.data_mut().iter_mut().zip(pre_activation.data()) {
        if a <= 0.0 {
            *g *= slope;
        }
    }
    out
}
