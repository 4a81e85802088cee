//! Plain feedforward network: affine layers with leaky-ReLU hidden
//! activations and a linear output layer.

use rand_chacha::ChaCha20Rng;

use crate::error::Result;
use crate::matrix::Matrix;
use crate::nn::layer::{leaky_relu, leaky_relu_backward, AffineCache, AffineLayer};

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<AffineLayer>,
    slope: f64,
}

pub struct MlpCache {
    affine: Vec<AffineCache>,
    /// Pre-activation outputs of each hidden layer.
    pre_activations: Vec<Matrix>,
}

impl Mlp {
    /// `sizes` runs input → hidden… → output; every consecutive pair becomes
    /// a layer, all but the last followed by leaky ReLU.
    pub fn init(sizes: &[usize], rng: &mut ChaCha20Rng) -> Result<Self> {
        let mut layers = Vec::with_capacity(sizes.len().saturating_sub(1));
        for w in sizes.windows(2) {
            layers.push(AffineLayer::init(w[0], w[1], None, rng)?);
        }
        Ok(Mlp {
            layers,
            slope: LEAKY_SLOPE,
        })
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, MlpCache)> {
        let mut affine = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len().saturating_sub(1));
        let mut cur = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, cache) = layer.forward(&cur)?;
            affine.push(cache);
            if i + 1 < self.layers.len() {
                cur = leaky_relu(&out, self.slope);
                pre_activations.push(out);
            } else {
                cur = out;
            }
        }
        Ok((
            cur,
            MlpCache {
                affine,
                pre_activations,
            },
        ))
    }

    /// Returns flat parameter gradients (canonical order) and the gradient
    /// with respect to the network input.
    pub fn backward(&self, cache: &MlpCache, grad_output: &Matrix) -> Result<(Vec<f64>, Matrix)> {
        let mut per_layer: Vec<(Vec<f64>, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        let mut grad = grad_output.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let grads = layer.backward(&cache.affine[i], &grad)?;
            grad = grads.input;
            if i > 0 {
                grad = leaky_relu_backward(&cache.pre_activations[i - 1], &grad, self.slope);
            }
            per_layer.push((grads.weights, grads.biases));
        }
        per_layer.reverse();
        let mut flat = Vec::with_capacity(self.param_count());
        for (w, b) in per_layer {
            flat.extend_from_slice(&w);
            flat.extend_from_slice(&b);
        }
        Ok((flat, grad))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }

    pub fn write_params(&self, out: &mut Vec<f64>) {
        for layer in &self.layers {
            layer.write_params(out);
        }
    }

    pub fn read_params(&mut self, mut src: &[f64]) {
        for layer in &mut self.layers {
            let n = layer.param_count();
            layer.read_params(&src[..n]);
            src = &src[n..];
        }
    }

    pub fn param_groups(&self, prefix: &str) -> Vec<(String, usize)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, l)| {
                let w = l.param_count() - l.out_dim();
                vec![
                    (format!("{prefix}.layer{i}.weights"), w),
                    (format!("{prefix}.layer{i}.biases"), l.out_dim()),
                ]
            })
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim())
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.in_dim())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn forward_shapes_and_determinism() {
        let mut rng = rng_from_seed(2);
        let mlp = Mlp::init(&[3, 8, 8, 2], &mut rng).unwrap();
        let x = Matrix::from_rows(&[vec![0.1, -0.4, 0.9], vec![1.0, 0.0, -1.0]]).unwrap();
        let (out, _) = mlp.forward(&x).unwrap();
        assert_eq!(out.rows(), 2);
        assert_eq!(out.cols(), 2);

        let mut rng2 = rng_from_seed(2);
        let mlp2 = Mlp::init(&[3, 8, 8, 2], &mut rng2).unwrap();
        let (out2, _) = mlp2.forward(&x).unwrap();
        assert_eq!(out.data(), out2.data());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = rng_from_seed(4);
        let mut mlp = Mlp::init(&[2, 5, 3], &mut rng).unwrap();
        let x = Matrix::from_rows(&[vec![0.6, -1.2], vec![0.2, 0.4]]).unwrap();
        let loss = |m: &Mlp| -> f64 {
            let (out, _) = m.forward(&x).unwrap();
            out.data().iter().map(|v| v * v).sum::<f64>()
        };
        let (out, cache) = mlp.forward(&x).unwrap();
        let mut go = out.clone();
        for v in go.data_mut() {
            *v *= 2.0;
        }
        let (analytic, _) = mlp.backward(&cache, &go).unwrap();
        let mut flat = Vec::new();
        mlp.write_params(&mut flat);
        let h = 1e-6;
        for i in 0..flat.len() {
            let orig = flat[i];
            flat[i] = orig + h;
            mlp.read_params(&flat);
            let up = loss(&mlp);
            flat[i] = orig - h;
            mlp.read_params(&flat);
            let down = loss(&mlp);
            flat[i] = orig;
            mlp.read_params(&flat);
            let numeric = (up - down) / (2.0 * h);
            let rel = (analytic[i] - numeric).abs() / analytic[i].abs().max(numeric.abs()).max(1e-8);
            assert!(rel <= 1e-4, "param {i}: analytic {} numeric {}", analytic[i], numeric);
        }
    }
}
