//! The `check` subcommand: a battery of invariant and oracle checks runnable
//! from a shipped binary, one pass/fail line each.

use vsps_core::baseline::QuantileDimModel;
use vsps_core::data::{apply_stats, fit_stats, generate_synthetic, split, PAPER_FRACTIONS};
use vsps_core::flow::FlowModel;
use vsps_core::metrics::{Region, VolumeGrid};
use vsps_core::nn::{adam_step, gradient_check, AdamState};
use vsps_core::rng::{derive_seed, rng_from_seed, standard_normal_vector, unit_uniform};
use vsps_core::vsps::{
    calibrate, calibration_score_matrix, conformal_quantile, point_seed, predict_region, quantile_index,
    BallUnionRegion,
};
use vsps_core::Matrix;

type CheckResult = Result<String, String>;

pub struct Check {
    pub name: &'static str,
    run: fn() -> CheckResult,
}

pub fn all_checks() -> Vec<Check> {
    vec![
        Check { name: "quantile-oracle", run: quantile_oracle },
        Check { name: "geometry-disk", run: geometry_disk },
        Check { name: "geometry-additivity", run: geometry_additivity },
        Check { name: "gamma-nesting", run: gamma_nesting },
        Check { name: "flow-round-trip", run: flow_round_trip },
        Check { name: "flow-jacobian-fd", run: flow_jacobian_fd },
        Check { name: "made-autoregressive-scan", run: made_scan },
        Check { name: "gradient-check-flow", run: gradient_flow },
        Check { name: "gradient-check-quantile", run: gradient_quantile },
        Check { name: "adam-first-step", run: adam_first_step },
        Check { name: "split-disjoint-exhaustive", run: split_check },
        Check { name: "standardization-round-trip", run: standardization_round_trip },
        Check { name: "scores-monotone-in-k", run: scores_monotone },
        Check { name: "conformal-coverage-mc", run: coverage_mc },
    ]
}

/// Runs every check, printing one line each; returns true iff all passed.
pub fn run_all() -> bool {
    let mut ok = true;
    for check in all_checks() {
        match (check.run)() {
            Ok(detail) => println!("PASS {} ({detail})", check.name),
            Err(detail) => {
                ok = false;
                println!("FAIL {} ({detail})", check.name);
            }
        }
    }
    ok
}

fn quantile_oracle() -> CheckResult {
    let mut state = 0x5EED_1234u64;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        state
    };
    for trial in 0..1000 {
        let n = 1 + (next() % 50) as usize;
        let alpha = [0.05, 0.1, 0.2][(next() % 3) as usize];
        let scores: Vec<f64> = (0..n).map(|_| (next() % 100_000) as f64 / 1000.0).collect();
        let got = conformal_quantile(&scores, alpha).map_err(|e| e.to_string())?;
        let mut sorted = scores.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let k = quantile_index(n, alpha);
        let expected = if k > n { f64::INFINITY } else { sorted[k - 1] };
        if got != expected {
            return Err(format!("trial {trial}: got {got}, brute force {expected}"));
        }
    }
    Ok("1000 random score sets match the brute-force order statistic".into())
}

fn geometry_disk() -> CheckResult {
    let grid = VolumeGrid::lattice(&[(-2.0, 2.0), (-2.0, 2.0)], 401).map_err(|e| e.to_string())?;
    let disk = BallUnionRegion::new(Matrix::from_rows(&[vec![0.0, 0.0]]).unwrap(), 1.0).unwrap();
    let (_, volume) = grid.count_contained(&disk);
    let rel = (volume - std::f64::consts::PI).abs() / std::f64::consts::PI;
    if rel < 0.05 {
        Ok(format!("unit-disk volume {volume:.4} vs π, rel err {rel:.4}"))
    } else {
        Err(format!("unit-disk volume {volume:.4} off by {rel:.4}"))
    }
}

fn geometry_additivity() -> CheckResult {
    let grid = VolumeGrid::lattice(&[(-2.0, 2.0), (-2.0, 2.0)], 401).map_err(|e| e.to_string())?;
    let a = BallUnionRegion::new(Matrix::from_rows(&[vec![-1.0, 0.0]]).unwrap(), 0.3).unwrap();
    let b = BallUnionRegion::new(Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(), 0.3).unwrap();
    let ab = BallUnionRegion::new(Matrix::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap(), 0.3).unwrap();
    let (ca, _) = grid.count_contained(&a);
    let (cb, _) = grid.count_contained(&b);
    let (cab, _) = grid.count_contained(&ab);
    if cab == ca + cb {
        Ok(format!("disjoint union count {cab} = {ca} + {cb}"))
    } else {
        Err(format!("union count {cab} ≠ {ca} + {cb}"))
    }
}

fn gamma_nesting() -> CheckResult {
    let mut rng = rng_from_seed(77);
    let grid = VolumeGrid::lattice(&[(-3.0, 3.0), (-3.0, 3.0)], 31).map_err(|e| e.to_string())?;
    for trial in 0..100 {
        let k = 1 + trial % 3;
        let centers: Vec<Vec<f64>> = (0..k).map(|_| standard_normal_vector(&mut rng, 2)).collect();
        let g1 = unit_uniform(&mut rng);
        let g2 = g1 + unit_uniform(&mut rng);
        let small = BallUnionRegion::new(Matrix::from_rows(&centers).unwrap(), g1).unwrap();
        let large = BallUnionRegion::new(Matrix::from_rows(&centers).unwrap(), g2).unwrap();
        let mut violated = false;
        grid.for_each_point(|p| {
            if small.contains(p) && !large.contains(p) {
                violated = true;
            }
        });
        if violated {
            return Err(format!("trial {trial}: smaller radius not nested"));
        }
    }
    Ok("100 random center sets nest under radius growth".into())
}

fn flow_round_trip() -> CheckResult {
    let model = FlowModel::new(2, 1, &[16, 16], 5, 3).map_err(|e| e.to_string())?;
    let mut rng = rng_from_seed(10);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let y = standard_normal_vector(&mut rng, 2);
        let x = standard_normal_vector(&mut rng, 1);
        let (z, _) = model.forward(&y, &x).map_err(|e| e.to_string())?;
        let (back, _) = model.inverse(&z, &x).map_err(|e| e.to_string())?;
        for (a, b) in y.iter().zip(&back) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst <= 1e-6 {
        Ok(format!("worst deviation {worst:.2e} over 1000 probes"))
    } else {
        Err(format!("worst deviation {worst:.2e} exceeds 1e-6"))
    }
}

fn flow_jacobian_fd() -> CheckResult {
    let model = FlowModel::new(2, 1, &[12, 12], 3, 5).map_err(|e| e.to_string())?;
    let mut rng = rng_from_seed(12);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let y = standard_normal_vector(&mut rng, 2);
        let x = standard_normal_vector(&mut rng, 1);
        let (_, ld) = model.forward(&y, &x).map_err(|e| e.to_string())?;
        let h = 1e-6;
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut yp = y.clone();
            yp[j] += h;
            let (zp, _) = model.forward(&yp, &x).map_err(|e| e.to_string())?;
            let mut ym = y.clone();
            ym[j] -= h;
            let (zm, _) = model.forward(&ym, &x).map_err(|e| e.to_string())?;
            for i in 0..2 {
                jac[i][j] = (zp[i] - zm[i]) / (2.0 * h);
            }
        }
        let det = (jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]).abs();
        worst = worst.max(((ld.exp() - det) / det).abs());
    }
    if worst <= 1e-4 {
        Ok(format!("worst relative determinant error {worst:.2e}"))
    } else {
        Err(format!("relative determinant error {worst:.2e} exceeds 1e-4"))
    }
}

fn made_scan() -> CheckResult {
    let mut rng = rng_from_seed(14);
    for d in 1..=4usize {
        let model = FlowModel::new(d, 1, &[10, 10], 3, 60 + d as u64).map_err(|e| e.to_string())?;
        for block in model.blocks() {
            let ordering = block.ordering();
            let y0 = standard_normal_vector(&mut rng, d);
            let x = standard_normal_vector(&mut rng, 1);
            let (mu0, s0) = block.heads(&y0, &x).map_err(|e| e.to_string())?;
            for j in 0..d {
                let mut y1 = y0.clone();
                y1[j] += 0.43;
                let (mu1, s1) = block.heads(&y1, &x).map_err(|e| e.to_string())?;
                for i in 0..d {
                    if ordering[j] >= ordering[i] && (mu0[i] != mu1[i] || s0[i] != s1[i]) {
                        return Err(format!("d={d}: head {i} depends on non-ancestor y[{j}]"));
                    }
                }
            }
        }
    }
    Ok("no head depends on a non-ancestor coordinate for d ≤ 4".into())
}

fn gradient_flow() -> CheckResult {
    let mut model = FlowModel::new(2, 1, &[8, 8], 1, 2).map_err(|e| e.to_string())?;
    let mut rng = rng_from_seed(16);
    let mut y = Matrix::zeros(4, 2);
    for b in 0..4 {
        y.row_mut(b).copy_from_slice(&standard_normal_vector(&mut rng, 2));
    }
    // Zero-init biases put hidden pre-activations exactly on the leaky kink
    // when a feature is exactly zero; finite differences straddle the kink
    // there, so the probe keeps x away from it.
    let x = Matrix::from_rows(&[vec![0.2], vec![-0.4], vec![0.35], vec![1.1]]).unwrap();
    let err = gradient_check(&mut model, &x, &y).map_err(|e| e.to_string())?;
    if err <= 1e-4 {
        Ok(format!("max relative error {err:.2e}"))
    } else {
        Err(format!("max relative error {err:.2e} exceeds 1e-4"))
    }
}

fn gradient_quantile() -> CheckResult {
    let mut rng = rng_from_seed(18);
    let mut model = QuantileDimModel::init(2, &[8, 8], 0.1, &mut rng).map_err(|e| e.to_string())?;
    let x = Matrix::from_rows(&[vec![0.3, -0.2], vec![0.8, 0.4], vec![-1.0, 0.0]]).unwrap();
    let y = Matrix::from_rows(&[vec![0.5], vec![-0.7], vec![0.1]]).unwrap();
    let err = gradient_check(&mut model, &x, &y).map_err(|e| e.to_string())?;
    if err <= 1e-4 {
        Ok(format!("max relative error {err:.2e}"))
    } else {
        Err(format!("max relative error {err:.2e} exceeds 1e-4"))
    }
}

fn adam_first_step() -> CheckResult {
    let mut params = vec![0.0];
    let mut state = AdamState::new(1, 0.1);
    adam_step(&mut params, &[1.0], &mut state).map_err(|e| e.to_string())?;
    let moved = -params[0];
    if (moved - 0.1).abs() < 1e-8 {
        Ok(format!("first step moved {moved:.9} ≈ η"))
    } else {
        Err(format!("first step moved {moved}, expected ≈ 0.1"))
    }
}

fn split_check() -> CheckResult {
    let ds = generate_synthetic(1000, 0).map_err(|e| e.to_string())?;
    let idx = split(&ds, &PAPER_FRACTIONS, 1).map_err(|e| e.to_string())?;
    if idx.train.len() != 384 || idx.calibration.len() != 256 || idx.validation.len() != 160 || idx.test.len() != 200 {
        return Err("split sizes off the 38.4/25.6/16/20 fractions".into());
    }
    let mut seen = vec![false; 1000];
    for part in idx.all() {
        for &i in part {
            if seen[i] {
                return Err(format!("index {i} in two parts"));
            }
            seen[i] = true;
        }
    }
    if !seen.iter().all(|&s| s) {
        return Err("split is not exhaustive".into());
    }
    Ok("sizes (384, 256, 160, 200), disjoint and exhaustive".into())
}

fn standardization_round_trip() -> CheckResult {
    let ds = generate_synthetic(500, 3).map_err(|e| e.to_string())?;
    let idx = split(&ds, &PAPER_FRACTIONS, 3).map_err(|e| e.to_string())?;
    let stats = fit_stats(&ds, &idx.train).map_err(|e| e.to_string())?;
    let std_ds = apply_stats(&ds, &stats).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for i in 0..ds.len() {
        let back = stats.destandardize_y(std_ds.y.row(i));
        for (a, b) in back.iter().zip(ds.y.row(i)) {
            worst = worst.max((a - b).abs());
        }
    }
    if worst <= 1e-10 {
        Ok(format!("worst reconstruction error {worst:.2e}"))
    } else {
        Err(format!("reconstruction error {worst:.2e} exceeds 1e-10"))
    }
}

fn scores_monotone() -> CheckResult {
    let flow = FlowModel::new(2, 1, &[10, 10], 3, 9).map_err(|e| e.to_string())?;
    let mut rng = rng_from_seed(22);
    let mut cal_x = Matrix::zeros(30, 1);
    let mut cal_y = Matrix::zeros(30, 2);
    for i in 0..30 {
        cal_x.set(i, 0, standard_normal_vector(&mut rng, 1)[0]);
        cal_y.row_mut(i).copy_from_slice(&standard_normal_vector(&mut rng, 2));
    }
    let matrix = calibration_score_matrix(&flow, &cal_x, &cal_y, 20, 5).map_err(|e| e.to_string())?;
    for (i, row) in matrix.iter().enumerate() {
        for w in row.windows(2) {
            if w[0] < w[1] {
                return Err(format!("point {i}: d_i(K) increased with K"));
            }
        }
    }
    Ok("d_i(K) non-increasing in K for all 30 points".into())
}

fn coverage_mc() -> CheckResult {
    // Untrained random flow, K* fixed up front, fresh calibration set and
    // test point each round: marginal coverage must sit near ⌈0.9·101⌉/101.
    let flow = FlowModel::new(2, 1, &[8, 8], 3, 33).map_err(|e| e.to_string())?;
    let m = 10;
    let k_star = 4;
    let alpha = 0.1;
    let rounds = 500;
    let n_cal = 100;
    let mut hits = 0usize;
    for round in 0..rounds {
        let master = derive_seed(909, 50, round as u64);
        let ds = generate_synthetic(n_cal + 1, derive_seed(master, 51, 0)).map_err(|e| e.to_string())?;
        let cal_idx: Vec<usize> = (0..n_cal).collect();
        let cal_x = ds.x.select_rows(&cal_idx);
        let cal_y = ds.y.select_rows(&cal_idx);
        let result = calibrate(&flow, k_star, &cal_x, &cal_y, m, alpha, derive_seed(master, 52, 0))
            .map_err(|e| e.to_string())?;
        let region = predict_region(
            ds.x.row(n_cal),
            &flow,
            k_star,
            result.gamma,
            m,
            point_seed(derive_seed(master, 53, 0), 0),
        )
        .map_err(|e| e.to_string())?;
        if region.contains(ds.y.row(n_cal)) {
            hits += 1;
        }
    }
    let coverage = hits as f64 / rounds as f64;
    let target = quantile_index(n_cal, alpha) as f64 / (n_cal + 1) as f64;
    let band = 3.0 * (target * (1.0 - target) / rounds as f64).sqrt();
    if (coverage - target).abs() <= band {
        Ok(format!("coverage {coverage:.4} within {band:.4} of {target:.4}"))
    } else {
        Err(format!("coverage {coverage:.4} outside {target:.4} ± {band:.4}"))
    }
}
