//! Split-conformal calibration of the ball radius.
//!
//! Every calibration point is scored against samples drawn from its own
//! conditional, with a per-point seed derived from (master seed, point
//! index); the radius is then a single order statistic of those scores.
//! Scoring each point against its own draws keeps the scores exchangeable
//! with a test point scored the same way, which is what the coverage
//! guarantee needs.

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::matrix::Matrix;
use crate::vsps::sampling::{point_seed, sample_sorted, SortedSamples};

/// `d(y, top-k)` for every k at once: position k−1 holds the minimum
/// distance from `y` to the first k sorted samples.
pub fn prefix_min_distances(samples: &SortedSamples, y: &[f64]) -> Vec<f64> {
    let m = samples.len();
    let mut out = Vec::with_capacity(m);
    let mut running = f64::INFINITY;
    for rank in 0..m {
        let row = samples.sample(rank);
        let mut sq = 0.0;
        for (a, b) in row.iter().zip(y) {
            let diff = a - b;
            sq += diff * diff;
        }
        running = running.min(sq.sqrt());
        out.push(running);
    }
    out
}

/// Non-conformity scores d_i(k) for every calibration point and every
/// k = 1..=m in one pass; row i column k−1 is point i's distance to the
/// nearest of its own top-k samples.
pub fn calibration_score_matrix(
    flow: &FlowModel,
    cal_x: &Matrix,
    cal_y: &Matrix,
    m: usize,
    master_seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if cal_x.rows() == 0 {
        return Err(Error::InvalidArgument("calibration set is empty".into()));
    }
    if cal_x.rows() != cal_y.rows() {
        return Err(Error::shape("calibration_score_matrix", "x/y row mismatch"));
    }
    let mut rows = Vec::with_capacity(cal_x.rows());
    for i in 0..cal_x.rows() {
        let samples = sample_sorted(cal_x.row(i), m, flow, point_seed(master_seed, i))?;
        rows.push(prefix_min_distances(&samples, cal_y.row(i)));
    }
    Ok(rows)
}

/// Scores for one fixed k (distance to the nearest of the point's own top-k
/// samples). `k` must not exceed `m`.
pub fn calibration_scores(
    flow: &FlowModel,
    k: usize,
    cal_x: &Matrix,
    cal_y: &Matrix,
    m: usize,
    master_seed: u64,
) -> Result<Vec<f64>> {
    if k < 1 || k > m {
        return Err(Error::InvalidArgument(format!("k = {k} out of range 1..={m}")));
    }
    let matrix = calibration_score_matrix(flow, cal_x, cal_y, m, master_seed)?;
    Ok(matrix.into_iter().map(|row| row[k - 1]).collect())
}

/// 1-based order-statistic index ⌈(1−α)(N+1)⌉.
///
/// The product is computed in floating point; a 1e-9 backoff keeps values
/// that are integers up to representation error from ceiling one slot high.
pub fn quantile_index(n: usize, alpha: f64) -> usize {
    let raw = (1.0 - alpha) * (n as f64 + 1.0);
    ((raw - 1e-9).ceil() as usize).max(1)
}

/// The conformal radius: the ⌈(1−α)(N+1)⌉-th smallest score, or +∞ when the
/// index exceeds N (the sample is too small for the requested coverage).
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("empty score list".into()));
    }
    if alpha <= 0.0 || alpha >= 1.0 {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside (0, 1)")));
    }
    let k = quantile_index(scores.len(), alpha);
    if k > scores.len() {
        return Ok(f64::INFINITY);
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    Ok(sorted[k - 1])
}

/// Radius calibration outcome for one (flow, k, α).
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub gamma: f64,
    pub scores: Vec<f64>,
    pub quantile_index: usize,
}

/// Runs the full radius calibration: per-point scores at `k`, then the
/// conformal order statistic.
pub fn calibrate(
    flow: &FlowModel,
    k: usize,
    cal_x: &Matrix,
    cal_y: &Matrix,
    m: usize,
    alpha: f64,
    master_seed: u64,
) -> Result<CalibrationResult> {
    let scores = calibration_scores(flow, k, cal_x, cal_y, m, master_seed)?;
    let gamma = conformal_quantile(&scores, alpha)?;
    Ok(CalibrationResult {
        gamma,
        quantile_index: quantile_index(scores.len(), alpha),
        scores,
    })
}
