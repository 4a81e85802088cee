//! Optimal-K selection: calibrate a radius for every K = 1..M, measure the
//! average region volume on held-out points, and keep the K with the
//! smallest average (ties go to the smaller K).
//!
//! Each held-out point's M samples are drawn once; prefix minima over the
//! volume-sorted centers give every K's region membership in the same grid
//! sweep, so the search costs no extra flow evaluations.

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::matrix::Matrix;
use crate::metrics::VolumeGrid;
use crate::rng::{derive_seed, stream};
use crate::vsps::calibrate::{calibration_score_matrix, conformal_quantile};
use crate::vsps::sampling::{point_seed, sample_sorted};

#[derive(Debug, Clone)]
pub struct KSelection {
    pub k_star: usize,
    /// Calibrated radius per K (index K−1).
    pub gammas: Vec<f64>,
    /// Mean region volume per K (index K−1), in grid volume units.
    pub sizes: Vec<f64>,
}

/// Picks K* for a frozen flow.
///
/// `size_x` are the inputs whose average region volume is minimized;
/// `(sel_cal_x, sel_cal_y)` is the selection-calibration set that prices
/// γ(K). Sampling seeds derive from `master_seed` per point.
#[allow(clippy::too_many_arguments)]
pub fn select_k(
    flow: &FlowModel,
    size_x: &Matrix,
    sel_cal_x: &Matrix,
    sel_cal_y: &Matrix,
    alpha: f64,
    m: usize,
    grid: &VolumeGrid,
    master_seed: u64,
) -> Result<KSelection> {
    if size_x.rows() == 0 {
        return Err(Error::InvalidArgument("size-evaluation set is empty".into()));
    }
    if m < 1 {
        return Err(Error::InvalidArgument("sample count M must be at least 1".into()));
    }

    let sel_cal_seed = derive_seed(master_seed, stream::SELECTION_CAL, 0);
    let size_seed = derive_seed(master_seed, stream::SIZE_EVAL, 0);

    let scores = calibration_score_matrix(flow, sel_cal_x, sel_cal_y, m, sel_cal_seed)?;
    let mut gammas = Vec::with_capacity(m);
    for k in 1..=m {
        let column: Vec<f64> = scores.iter().map(|row| row[k - 1]).collect();
        gammas.push(conformal_quantile(&column, alpha)?);
    }

    // γ(K) is infinite exactly when ⌈(1−α)(N+1)⌉ > N, which does not depend
    // on K: either every radius is finite or none is.
    if gammas[0].is_infinite() {
        let full = grid.total_points() as f64 * grid.cell_volume();
        return Ok(KSelection {
            k_star: m,
            gammas,
            sizes: vec![full; m],
        });
    }

    let n_val = size_x.rows();
    let d = grid.dim();
    let mut counts = vec![0u64; m];
    for i in 0..n_val {
        let samples = sample_sorted(size_x.row(i), m, flow, point_seed(size_seed, i))?;
        let centers = samples.samples();
        // Points beyond γ(1) (the largest radius, since γ is non-increasing
        // in K) of every center are outside every K's region.
        let mut clip = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for rank in 0..m {
            for (j, &v) in centers.row(rank).iter().enumerate() {
                clip[j].0 = clip[j].0.min(v - gammas[0]);
                clip[j].1 = clip[j].1.max(v + gammas[0]);
            }
        }
        // Squared distances with a guard band around each γ²; only
        // near-boundary comparisons fall back to the exact sqrt test.
        let gamma_sq: Vec<(f64, f64, f64)> = gammas
            .iter()
            .map(|g| {
                let sq = g * g;
                (sq * (1.0 - 1e-9), sq * (1.0 + 1e-9), *g)
            })
            .collect();
        grid.for_each_point_clipped(Some(&clip), |point| {
            let mut running_sq = f64::INFINITY;
            for rank in 0..m {
                let mut sq = 0.0;
                for (a, b) in centers.row(rank).iter().zip(point) {
                    let diff = a - b;
                    sq += diff * diff;
                }
                running_sq = running_sq.min(sq);
                let (lo, hi, gamma) = gamma_sq[rank];
                let inside = if running_sq <= lo {
                    true
                } else if running_sq >= hi {
                    false
                } else {
                    running_sq.sqrt() <= gamma
                };
                if inside {
                    counts[rank] += 1;
                }
            }
        });
    }

    let scale = grid.cell_volume() / n_val as f64;
    let sizes: Vec<f64> = counts.iter().map(|&c| c as f64 * scale).collect();
    let mut k_star = 1;
    for k in 2..=m {
        if sizes[k - 1] < sizes[k_star - 1] {
            k_star = k;
        }
    }
    Ok(KSelection {
        k_star,
        gammas,
        sizes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Region;
    use crate::nn::{train, LossModel, TrainConfig};
    use crate::rng::{normal_pair, rng_from_seed, unit_uniform};
    use crate::vsps::calibrate::quantile_index;
    use crate::vsps::region::BallUnionRegion;

    #[test]
    fn single_candidate_returns_one() {
        let flow = FlowModel::new(1, 1, &[4], 1, 0).unwrap();
        let grid = VolumeGrid::lattice(&[(-3.0, 3.0)], 61).unwrap();
        let x = Matrix::from_rows(&[vec![0.0], vec![0.5]]).unwrap();
        let y = Matrix::from_rows(&[vec![0.1], vec![-0.2]]).unwrap();
        let sel = select_k(&flow, &x, &x, &y, 0.5, 1, &grid, 3).unwrap();
        assert_eq!(sel.k_star, 1);
    }

    #[test]
    fn all_infinite_gammas_return_m() {
        // Three calibration points at α = 0.1: the quantile index is 4 > 3.
        let flow = FlowModel::new(1, 1, &[4], 1, 0).unwrap();
        let grid = VolumeGrid::lattice(&[(-3.0, 3.0)], 61).unwrap();
        let x = Matrix::from_rows(&[vec![0.0], vec![0.5], vec![1.0]]).unwrap();
        let y = Matrix::from_rows(&[vec![0.1], vec![-0.2], vec![0.4]]).unwrap();
        assert!(quantile_index(3, 0.1) > 3);
        let sel = select_k(&flow, &x, &x, &y, 0.1, 4, &grid, 3).unwrap();
        assert_eq!(sel.k_star, 4);
        assert!(sel.gammas.iter().all(|g| g.is_infinite()));
    }

    #[test]
    fn near_collapsed_flow_ties_break_to_k_one() {
        // Force every log-scale to the lower clamp: samples collapse to a
        // cluster of diameter ~e^-7, far below the grid cell size, so every
        // K yields the same counts and the tie-break picks K = 1.
        let mut flow = FlowModel::new(2, 1, &[4], 1, 0).unwrap();
        let mut params = vec![0.0; flow.param_count()];
        let n = params.len();
        // s-head biases are the last two parameters of the single block;
        // the inverse map scales draws by e^s, so s = −7 collapses them.
        params[n - 2] = -40.0;
        params[n - 1] = -40.0;
        flow.set_params(&params).unwrap();
        let mut rng = rng_from_seed(8);
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|_| {
                let (a, b) = normal_pair(&mut rng);
                vec![a, b]
            })
            .collect();
        let y = Matrix::from_rows(&rows).unwrap();
        let x = Matrix::zeros(40, 1);
        let grid = VolumeGrid::lattice(&[(-2.0, 2.0), (-2.0, 2.0)], 9).unwrap();
        let sel = select_k(&flow, &x, &x, &y, 0.2, 5, &grid, 11).unwrap();
        let first = sel.sizes[0];
        for s in &sel.sizes {
            assert_eq!(*s, first, "sizes {:?}", sel.sizes);
        }
        assert_eq!(sel.k_star, 1);
    }

    /// Brute-force oracle: recompute γ(K) by full sort and Size_K by direct
    /// per-region grid counting, then compare the argmin.
    #[test]
    fn bimodal_m2_matches_brute_force_oracle() {
        // Unconditional, well-separated 2-d mixture.
        let mut rng = rng_from_seed(21);
        let gen = |rng: &mut rand_chacha::ChaCha20Rng| -> (Vec<f64>, Vec<f64>) {
            let sign = if unit_uniform(rng) < 0.5 { -1.0 } else { 1.0 };
            let (e1, e2) = normal_pair(rng);
            (vec![unit_uniform(rng)], vec![sign * 1.5 + 0.25 * e1, 0.25 * e2])
        };
        let n = 600;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let (x, y) = gen(&mut rng);
            xs.push(x);
            ys.push(y);
        }
        let x = Matrix::from_rows(&xs).unwrap();
        let y = Matrix::from_rows(&ys).unwrap();
        let train_x = x.select_rows(&(0..400).collect::<Vec<_>>());
        let train_y = y.select_rows(&(0..400).collect::<Vec<_>>());
        let val_x = x.select_rows(&(400..500).collect::<Vec<_>>());
        let val_y = y.select_rows(&(400..500).collect::<Vec<_>>());
        let cal_x = x.select_rows(&(500..600).collect::<Vec<_>>());
        let cal_y = y.select_rows(&(500..600).collect::<Vec<_>>());

        let mut flow = FlowModel::new(2, 1, &[24, 24], 4, 5).unwrap();
        let cfg = TrainConfig {
            batch_size: 128,
            max_epochs: 120,
            patience: 15,
            learning_rate: 1e-2,
            seed: 2,
        };
        train(&mut flow, &train_x, &train_y, &val_x, &val_y, &cfg).unwrap();

        let grid = VolumeGrid::from_responses(y.iter_rows(), 2, 60, 10_000, 0).unwrap();
        let m = 2;
        let alpha = 0.1;
        let master = 9001;
        let sel = select_k(&flow, &val_x, &cal_x, &cal_y, alpha, m, &grid, master).unwrap();

        // Oracle side.
        let sel_cal_seed = derive_seed(master, stream::SELECTION_CAL, 0);
        let size_seed = derive_seed(master, stream::SIZE_EVAL, 0);
        let mut oracle_sizes = Vec::new();
        for k in 1..=m {
            let mut scores = Vec::new();
            for i in 0..cal_x.rows() {
                let s = sample_sorted(cal_x.row(i), m, &flow, point_seed(sel_cal_seed, i)).unwrap();
                let mut best = f64::INFINITY;
                for rank in 0..k {
                    let dist: f64 = s
                        .sample(rank)
                        .iter()
                        .zip(cal_y.row(i))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt();
                    best = best.min(dist);
                }
                scores.push(best);
            }
            scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let qi = quantile_index(scores.len(), alpha);
            let gamma = if qi > scores.len() { f64::INFINITY } else { scores[qi - 1] };
            assert!((gamma - sel.gammas[k - 1]).abs() < 1e-12);

            let mut total = 0.0;
            for i in 0..val_x.rows() {
                let s = sample_sorted(val_x.row(i), m, &flow, point_seed(size_seed, i)).unwrap();
                let region = BallUnionRegion::new(s.top(k), gamma).unwrap();
                let mut count = 0usize;
                grid.for_each_point(|pt| {
                    if region.contains(pt) {
                        count += 1;
                    }
                });
                total += count as f64 * grid.cell_volume();
            }
            oracle_sizes.push(total / val_x.rows() as f64);
        }
        let oracle_k = if oracle_sizes[1] < oracle_sizes[0] { 2 } else { 1 };
        assert_eq!(sel.k_star, oracle_k, "sizes {:?} vs oracle {:?}", sel.sizes, oracle_sizes);
        for (a, b) in sel.sizes.iter().zip(&oracle_sizes) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
