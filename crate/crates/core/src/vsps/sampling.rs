//! Volume-sorted sampling: draw latent points, map them back through the
//! flow, and keep them ordered by descending absolute Jacobian determinant
//! (largest |det ∂f/∂y| first, i.e. highest conditional density first).

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::matrix::Matrix;
use crate::rng::{derive_seed, rng_from_seed, standard_normal_vector};

/// Stream tag for per-point sampling seeds.
const POINT_SAMPLES: u64 = 10;

/// Deterministic seed for the sampler at one data point.
pub fn point_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, POINT_SAMPLES, index as u64)
}

/// Response-space samples for one input, sorted by descending |Jacobian|.
#[derive(Debug, Clone)]
pub struct SortedSamples {
    /// `[M × d]`, row m is the rank-(m+1) sample.
    samples: Matrix,
    /// Non-increasing; `jacobians[m] = exp(log|det ∂f/∂y|)` at row m.
    jacobians: Vec<f64>,
    x: Vec<f64>,
}

impl SortedSamples {
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    pub fn sample(&self, rank: usize) -> &[f64] {
        self.samples.row(rank)
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn jacobians(&self) -> &[f64] {
        &self.jacobians
    }

    pub fn input(&self) -> &[f64] {
        &self.x
    }

    /// The top-k rows as a standalone center matrix.
    pub fn top(&self, k: usize) -> Matrix {
        let idx: Vec<usize> = (0..k.min(self.len())).collect();
        self.samples.select_rows(&idx)
    }
}

/// Stable descending sort by Jacobian; ties keep draw order. Exposed so the
/// ordering contract is testable on hand-built inputs.
pub fn sort_by_jacobian(samples: Vec<Vec<f64>>, jacobians: Vec<f64>, x: Vec<f64>) -> Result<SortedSamples> {
    if samples.len() != jacobians.len() {
        return Err(Error::shape("sort_by_jacobian", "samples/jacobians length mismatch"));
    }
    if jacobians.iter().any(|j| !j.is_finite() || *j <= 0.0) {
        return Err(Error::NonFinite("jacobian determinant".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| jacobians[b].partial_cmp(&jacobians[a]).expect("finite jacobians"));
    let sorted_rows: Vec<Vec<f64>> = order.iter().map(|&i| samples[i].clone()).collect();
    let sorted_jac: Vec<f64> = order.iter().map(|&i| jacobians[i]).collect();
    Ok(SortedSamples {
        samples: Matrix::from_rows(&sorted_rows)?,
        jacobians: sorted_jac,
        x,
    })
}

/// Draws `m` latent vectors from N(0, I_d), maps them through the inverse
/// flow in one batch, and returns them volume-sorted.
pub fn sample_sorted(x: &[f64], m: usize, flow: &FlowModel, seed: u64) -> Result<SortedSamples> {
    if m < 1 {
        return Err(Error::InvalidArgument("sample count M must be at least 1".into()));
    }
    let d = flow.response_dim();
    let mut rng = rng_from_seed(seed);
    let mut z = Matrix::zeros(m, d);
    for b in 0..m {
        z.row_mut(b).copy_from_slice(&standard_normal_vector(&mut rng, d));
    }
    let (y, log_abs_det) = flow.inverse_batch(&z, x)?;
    let samples: Vec<Vec<f64>> = (0..m).map(|b| y.row(b).to_vec()).collect();
    let jacobians: Vec<f64> = log_abs_det.iter().map(|ld| ld.exp()).collect();
    sort_by_jacobian(samples, jacobians, x.to_vec())
}
