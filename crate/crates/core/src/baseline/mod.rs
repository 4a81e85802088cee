//! Naïve QR baseline: one quantile-regression network per response
//! dimension, conformalized jointly with a max-over-dimensions score, giving
//! axis-aligned box regions.

use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics::{Region, VolumeGrid};
use crate::nn::{train, LossModel, Mlp, TrainConfig, TrainHistory};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::vsps::conformal_quantile;

/// Pinball loss and its gradient with respect to the prediction:
/// `τ(t−p)` when `t ≥ p`, else `(1−τ)(p−t)`.
pub fn pinball_loss(prediction: f64, target: f64, tau: f64) -> (f64, f64) {
    if target >= prediction {
        (tau * (target - prediction), -tau)
    } else {
        ((1.0 - tau) * (prediction - target), 1.0 - tau)
    }
}

/// One response dimension: a network emitting (lower, upper) quantile
/// estimates at (α/2, 1−α/2), trained on the summed pinball losses.
#[derive(Debug, Clone)]
pub struct QuantileDimModel {
    mlp: Mlp,
    tau_lo: f64,
    tau_hi: f64,
}

impl QuantileDimModel {
    pub fn init(p: usize, hidden_sizes: &[usize], alpha: f64, rng: &mut ChaCha20Rng) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden_sizes.len() + 2);
        sizes.push(p);
        sizes.extend_from_slice(hidden_sizes);
        sizes.push(2);
        Ok(QuantileDimModel {
            mlp: Mlp::init(&sizes, rng)?,
            tau_lo: alpha / 2.0,
            tau_hi: 1.0 - alpha / 2.0,
        })
    }

    /// (lower, upper) for each row of `x`; crossing pairs are swapped.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<(f64, f64)>> {
        let (out, _) = self.mlp.forward(x)?;
        Ok((0..out.rows())
            .map(|b| {
                let (lo, hi) = (out.get(b, 0), out.get(b, 1));
                if lo <= hi {
                    (lo, hi)
                } else {
                    (hi, lo)
                }
            })
            .collect())
    }
}

impl LossModel for QuantileDimModel {
    fn param_count(&self) -> usize {
        self.mlp.param_count()
    }

    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.mlp.write_params(&mut out);
        out
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape("QuantileDimModel::set_params", "length mismatch"));
        }
        self.mlp.read_params(params);
        Ok(())
    }

    fn loss(&self, x: &Matrix, y: &Matrix) -> Result<f64> {
        let (out, _) = self.mlp.forward(x)?;
        let mut total = 0.0;
        for b in 0..x.rows() {
            let t = y.get(b, 0);
            total += pinball_loss(out.get(b, 0), t, self.tau_lo).0;
            total += pinball_loss(out.get(b, 1), t, self.tau_hi).0;
        }
        Ok(total / x.rows() as f64)
    }

    fn loss_and_grad(&self, x: &Matrix, y: &Matrix) -> Result<(f64, Vec<f64>)> {
        let (out, cache) = self.mlp.forward(x)?;
        let batch = x.rows();
        let inv = 1.0 / batch as f64;
        let mut total = 0.0;
        let mut grad_out = Matrix::zeros(batch, 2);
        for b in 0..batch {
            let t = y.get(b, 0);
            let (l_lo, g_lo) = pinball_loss(out.get(b, 0), t, self.tau_lo);
            let (l_hi, g_hi) = pinball_loss(out.get(b, 1), t, self.tau_hi);
            total += l_lo + l_hi;
            grad_out.set(b, 0, g_lo * inv);
            grad_out.set(b, 1, g_hi * inv);
        }
        let (grads, _) = self.mlp.backward(&cache, &grad_out)?;
        Ok((total * inv, grads))
    }

    fn param_groups(&self) -> Vec<(String, usize)> {
        self.mlp.param_groups("quantile_net")
    }
}

/// Per-dimension quantile networks plus the architecture they share.
#[derive(Debug, Clone)]
pub struct QuantileNet {
    dims: Vec<QuantileDimModel>,
}

impl QuantileNet {
    pub fn response_dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dim_model(&self, j: usize) -> &QuantileDimModel {
        &self.dims[j]
    }

    pub fn dim_model_mut(&mut self, j: usize) -> &mut QuantileDimModel {
        &mut self.dims[j]
    }

    /// Per-dimension (lower, upper) bounds for one input row.
    pub fn intervals(&self, x: &[f64]) -> Result<Vec<(f64, f64)>> {
        let xm = Matrix::from_flat(1, x.len(), x.to_vec())?;
        self.dims.iter().map(|m| Ok(m.predict(&xm)?[0])).collect()
    }

    pub fn params(&self) -> Vec<f64> {
        self.dims.iter().flat_map(|m| m.params()).collect()
    }
}

/// Trains one network per response dimension on pinball losses at
/// (α/2, 1−α/2) with early stopping on validation pinball loss.
pub fn train_naive_qr(
    train_x: &Matrix,
    train_y: &Matrix,
    val_x: &Matrix,
    val_y: &Matrix,
    alpha: f64,
    hidden_sizes: &[usize],
    config: &TrainConfig,
) -> Result<(QuantileNet, Vec<TrainHistory>)> {
    let d = train_y.cols();
    let mut dims = Vec::with_capacity(d);
    let mut histories = Vec::with_capacity(d);
    for j in 0..d {
        let mut rng = rng_from_seed(derive_seed(config.seed, stream::QUANTILE_NET, j as u64));
        let mut model = QuantileDimModel::init(train_x.cols(), hidden_sizes, alpha, &mut rng)?;
        let ty = Matrix::from_flat(train_y.rows(), 1, train_y.column(j))?;
        let vy = Matrix::from_flat(val_y.rows(), 1, val_y.column(j))?;
        let cfg = TrainConfig {
            seed: derive_seed(config.seed, stream::TRAIN_SHUFFLE, j as u64),
            ..config.clone()
        };
        histories.push(train(&mut model, train_x, &ty, val_x, &vy, &cfg)?);
        dims.push(model);
    }
    Ok((QuantileNet { dims }, histories))
}

/// Axis-aligned box after conformal inflation. Membership is coordinatewise
/// and boundary inclusive, which matches the max-score semantics exactly: a
/// box whose bounds cross after a very negative γ contains nothing.
#[derive(Debug, Clone)]
pub struct BoxRegion {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Region for BoxRegion {
    fn contains(&self, y: &[f64]) -> bool {
        self.lower
            .iter()
            .zip(&self.upper)
            .zip(y)
            .all(|((lo, hi), v)| *lo <= *v && *v <= *hi)
    }

    fn bounding_box(&self) -> Option<Vec<(f64, f64)>> {
        if self.lower.iter().zip(&self.upper).all(|(lo, hi)| lo.is_finite() && hi.is_finite()) {
            Some(self.lower.iter().zip(&self.upper).map(|(&lo, &hi)| (lo, hi)).collect())
        } else {
            None
        }
    }
}

/// Joint CQR score: `E_i = max_j max(lower_j − y_j, y_j − upper_j)`. The
/// calibrated γ_QR is its conformal quantile and may be negative (boxes
/// shrink).
pub fn conformalize_qr(model: &QuantileNet, cal_x: &Matrix, cal_y: &Matrix, alpha: f64) -> Result<f64> {
    if cal_x.rows() == 0 {
        return Err(Error::InvalidArgument("calibration set is empty".into()));
    }
    let mut scores = Vec::with_capacity(cal_x.rows());
    for i in 0..cal_x.rows() {
        let intervals = model.intervals(cal_x.row(i))?;
        let y = cal_y.row(i);
        let mut score = f64::NEG_INFINITY;
        for (j, (lo, hi)) in intervals.iter().enumerate() {
            score = score.max(lo - y[j]).max(y[j] - hi);
        }
        scores.push(score);
    }
    conformal_quantile(&scores, alpha)
}

/// Predicted box at `x`: per-dimension bounds inflated by γ_QR.
pub fn qr_region(x: &[f64], model: &QuantileNet, gamma_qr: f64) -> Result<BoxRegion> {
    let intervals = model.intervals(x)?;
    Ok(BoxRegion {
        lower: intervals.iter().map(|(lo, _)| lo - gamma_qr).collect(),
        upper: intervals.iter().map(|(_, hi)| hi + gamma_qr).collect(),
    })
}

pub fn box_contains(region: &BoxRegion, y: &[f64]) -> bool {
    region.contains(y)
}

pub fn box_volume(region: &BoxRegion, grid: &VolumeGrid) -> (usize, f64) {
    grid.count_contained(region)
}
