//! Data handling: the synthetic v-shape generator, CSV ingestion, the
//! four-way split, and train-fit standardization.

use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{normal_pair, rng_from_seed, unit_uniform};

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    Synthetic { n: usize, seed: u64 },
    Csv { path: String },
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Synthetic { n, seed } => write!(f, "synthetic(n={n}, seed={seed})"),
            Provenance::Csv { path } => write!(f, "csv({path})"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Matrix,
    pub y: Matrix,
    /// Discrete conditioning values for conditional coverage, when known.
    pub groups: Option<Vec<f64>>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(x: Matrix, y: Matrix, groups: Option<Vec<f64>>, provenance: Provenance) -> Result<Self> {
        if x.rows() != y.rows() {
            return Err(Error::shape("Dataset::new", format!("{} x rows vs {} y rows", x.rows(), y.rows())));
        }
        if let Some(g) = &groups {
            if g.len() != x.rows() {
                return Err(Error::shape("Dataset::new", "group labels do not match row count"));
            }
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Dataset {
            x,
            y,
            groups,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// V-shaped synthetic data: x uniform on {1.5, 2.0, 2.5}, latent
/// t ~ U(−1, 1), y₁ = t + 0.05ε₁, y₂ = x·|t| + 0.05ε₂. The conditional
/// support is a thin scaled V, non-convex in y, so axis-aligned boxes waste
/// most of their area; x is the group label.
pub fn generate_synthetic(n: usize, seed: u64) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::InvalidArgument("need at least one row".into()));
    }
    const LEVELS: [f64; 3] = [1.5, 2.0, 2.5];
    const NOISE: f64 = 0.05;
    let mut rng = rng_from_seed(seed);
    let mut x = Matrix::zeros(n, 1);
    let mut y = Matrix::zeros(n, 2);
    let mut groups = Vec::with_capacity(n);
    for i in 0..n {
        let level = LEVELS[rng.gen_range(0..LEVELS.len())];
        let t = 2.0 * unit_uniform(&mut rng) - 1.0;
        let (e1, e2) = normal_pair(&mut rng);
        x.set(i, 0, level);
        y.set(i, 0, t + NOISE * e1);
        y.set(i, 1, level * t.abs() + NOISE * e2);
        groups.push(level);
    }
    Dataset::new(x, y, Some(groups), Provenance::Synthetic { n, seed })
}

/// Reads `x0,…,x{p−1},y0,…,y{d−1}` rows; rows containing non-finite or
/// unparsable-as-finite values are dropped and counted.
#[derive(Debug)]
pub struct CsvLoad {
    pub dataset: Dataset,
    pub rejected_rows: usize,
}

pub fn load_csv(path: &Path, d: usize) -> Result<CsvLoad> {
    if d < 1 {
        return Err(Error::InvalidArgument("response dimension must be at least 1".into()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::Ingestion {
        path: path.display().to_string(),
        row: 0,
        column: 0,
        reason: e.to_string(),
    })?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Ingestion {
        path: path.display().to_string(),
        row: 0,
        column: 0,
        reason: "empty file".into(),
    })?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    if names.len() <= d {
        return Err(Error::Ingestion {
            path: path.display().to_string(),
            row: 0,
            column: names.len(),
            reason: format!("header has {} columns, need at least {} (p ≥ 1 plus d = {d})", names.len(), d + 1),
        });
    }
    let p = names.len() - d;
    for (j, name) in names.iter().enumerate() {
        let expected = if j < p {
            format!("x{j}")
        } else {
            format!("y{}", j - p)
        };
        if *name != expected {
            return Err(Error::Ingestion {
                path: path.display().to_string(),
                row: 0,
                column: j,
                reason: format!("expected header column '{expected}', found '{name}'"),
            });
        }
    }

    let mut x_rows = Vec::new();
    let mut y_rows = Vec::new();
    let mut rejected = 0usize;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != names.len() {
            return Err(Error::Ingestion {
                path: path.display().to_string(),
                row: line_no,
                column: cells.len(),
                reason: format!("row has {} cells, expected {}", cells.len(), names.len()),
            });
        }
        let mut values = Vec::with_capacity(cells.len());
        let mut finite = true;
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Ingestion {
                path: path.display().to_string(),
                row: line_no,
                column: j,
                reason: format!("cannot parse '{cell}' as a number"),
            })?;
            if !v.is_finite() {
                finite = false;
            }
            values.push(v);
        }
        if !finite {
            rejected += 1;
            continue;
        }
        x_rows.push(values[..p].to_vec());
        y_rows.push(values[p..].to_vec());
    }
    if x_rows.is_empty() {
        return Err(Error::Ingestion {
            path: path.display().to_string(),
            row: 0,
            column: 0,
            reason: "no usable data rows".into(),
        });
    }
    let dataset = Dataset::new(
        Matrix::from_rows(&x_rows)?,
        Matrix::from_rows(&y_rows)?,
        None,
        Provenance::Csv {
            path: path.display().to_string(),
        },
    )?;
    Ok(CsvLoad {
        dataset,
        rejected_rows: rejected,
    })
}

#[derive(Debug, Clone)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub calibration: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn all(&self) -> [&[usize]; 4] {
        [&self.train, &self.calibration, &self.validation, &self.test]
    }
}

/// The benchmark split fractions: train, calibration, validation, test.
pub const PAPER_FRACTIONS: [f64; 4] = [0.384, 0.256, 0.16, 0.2];

/// Random permutation then contiguous slices with largest-remainder
/// rounding; ties are broken by slot order (train, calibration,
/// validation, test).
pub fn split(dataset: &Dataset, fractions: &[f64; 4], seed: u64) -> Result<SplitIndices> {
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {total}, expected 1")));
    }
    let n = dataset.len();
    let mut sizes = [0usize; 4];
    let mut remainders: Vec<(usize, f64)> = Vec::with_capacity(4);
    let mut assigned = 0usize;
    for (slot, &f) in fractions.iter().enumerate() {
        let exact = f * n as f64;
        let base = exact.floor() as usize;
        sizes[slot] = base;
        assigned += base;
        remainders.push((slot, exact - base as f64));
    }
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    for k in 0..n - assigned {
        sizes[remainders[k % 4].0] += 1;
    }
    if sizes.contains(&0) {
        return Err(Error::Config(format!("split of n = {n} leaves an empty part: {sizes:?}")));
    }

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(seed);
    order.shuffle(&mut rng);
    let mut offset = 0usize;
    let mut take = |len: usize| {
        let part = order[offset..offset + len].to_vec();
        offset += len;
        part
    };
    Ok(SplitIndices {
        train: take(sizes[0]),
        calibration: take(sizes[1]),
        validation: take(sizes[2]),
        test: take(sizes[3]),
    })
}

#[derive(Debug, Clone)]
pub struct StandardizationStats {
    pub x_mean: Vec<f64>,
    pub x_std: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
}

const STD_FLOOR: f64 = 1e-12;

fn column_stats(m: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut mean = vec![0.0; m.cols()];
    for &i in rows {
        for (j, &v) in m.row(i).iter().enumerate() {
            mean[j] += v;
        }
    }
    for v in mean.iter_mut() {
        *v /= n;
    }
    let mut var = vec![0.0; m.cols()];
    for &i in rows {
        for (j, &v) in m.row(i).iter().enumerate() {
            let diff = v - mean[j];
            var[j] += diff * diff;
        }
    }
    let std = var.iter().map(|v| (v / n).sqrt().max(STD_FLOOR)).collect();
    (mean, std)
}

/// Column means and stddevs fit on the training rows only.
pub fn fit_stats(dataset: &Dataset, train_indices: &[usize]) -> Result<StandardizationStats> {
    if train_indices.is_empty() {
        return Err(Error::InvalidArgument("cannot fit stats on an empty training split".into()));
    }
    let (x_mean, x_std) = column_stats(&dataset.x, train_indices);
    let (y_mean, y_std) = column_stats(&dataset.y, train_indices);
    Ok(StandardizationStats {
        x_mean,
        x_std,
        y_mean,
        y_std,
    })
}

impl StandardizationStats {
    pub fn destandardize_y(&self, y_std: &[f64]) -> Vec<f64> {
        y_std
            .iter()
            .zip(self.y_mean.iter().zip(&self.y_std))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }
}

/// Standardizes every row with the given stats; group labels pass through.
pub fn apply_stats(dataset: &Dataset, stats: &StandardizationStats) -> Result<Dataset> {
    let mut x = dataset.x.clone();
    for i in 0..x.rows() {
        let row = x.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - stats.x_mean[j]) / stats.x_std[j];
        }
    }
    let mut y = dataset.y.clone();
    for i in 0..y.rows() {
        let row = y.row_mut(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = (*v - stats.y_mean[j]) / stats.y_std[j];
        }
    }
    Dataset::new(x, y, dataset.groups.clone(), dataset.provenance.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_is_deterministic() {
        let a = generate_synthetic(200, 5).unwrap();
        let b = generate_synthetic(200, 5).unwrap();
        assert_eq!(a.x.data(), b.x.data());
        assert_eq!(a.y.data(), b.y.data());
        let c = generate_synthetic(200, 6).unwrap();
        assert_ne!(a.y.data(), c.y.data());
    }

    #[test]
    fn larger_x_widens_the_second_response() {
        let ds = generate_synthetic(5000, 1).unwrap();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for i in 0..ds.len() {
            let level = ds.x.get(i, 0);
            let y2 = ds.y.get(i, 1);
            if level == 1.5 {
                lo.push(y2);
            } else if level == 2.5 {
                hi.push(y2);
            }
        }
        let sd = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            (v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64).sqrt()
        };
        assert!(sd(&hi) > sd(&lo), "sd(2.5) {} vs sd(1.5) {}", sd(&hi), sd(&lo));
    }

    #[test]
    fn v_shape_has_symmetric_arms() {
        // Linear correlation of (y1, y2) vanishes while |y1| predicts y2.
        let ds = generate_synthetic(5000, 2).unwrap();
        let y1: Vec<f64> = ds.y.column(0);
        let y2: Vec<f64> = ds.y.column(1);
        let corr = |a: &[f64], b: &[f64]| {
            let n = a.len() as f64;
            let ma = a.iter().sum::<f64>() / n;
            let mb = b.iter().sum::<f64>() / n;
            let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n;
            let sa = (a.iter().map(|x| (x - ma) * (x - ma)).sum::<f64>() / n).sqrt();
            let sb = (b.iter().map(|y| (y - mb) * (y - mb)).sum::<f64>() / n).sqrt();
            cov / (sa * sb)
        };
        let abs_y1: Vec<f64> = y1.iter().map(|v| v.abs()).collect();
        assert!(corr(&y1, &y2).abs() < 0.1);
        assert!(corr(&abs_y1, &y2) > 0.7);
    }

    fn write_temp(name: &str, contents: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("vsps_data_tests");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join(name);
        std::fs::write(&path, contents).unwrap();
        path
    }

    #[test]
    fn csv_round_trip_small_file() {
        let path = write_temp("ok.csv", "x0,x1,y0,y1\n1.0,2.0,3.0,4.0\n5,6,7,8\n");
        let load = load_csv(&path, 2).unwrap();
        assert_eq!(load.dataset.len(), 2);
        assert_eq!(load.dataset.x.row(1), &[5.0, 6.0]);
        assert_eq!(load.dataset.y.row(0), &[3.0, 4.0]);
        assert_eq!(load.rejected_rows, 0);
    }

    #[test]
    fn csv_header_errors_name_the_expected_column() {
        let path = write_temp("badheader.csv", "x0,y0,z1\n1,2,3\n");
        let err = load_csv(&path, 2).unwrap_err().to_string();
        assert!(err.contains("expected header column 'y1'"), "{err}");
    }

    #[test]
    fn csv_nan_rows_are_dropped_and_counted() {
        let path = write_temp("nan.csv", "x0,y0,y1\n1,2,3\n1,NaN,3\n4,5,6\n");
        let load = load_csv(&path, 2).unwrap();
        assert_eq!(load.dataset.len(), 2);
        assert_eq!(load.rejected_rows, 1);
    }

    #[test]
    fn csv_bad_cell_reports_position() {
        let path = write_temp("badcell.csv", "x0,y0,y1\n1,2,3\n1,abc,3\n");
        let err = load_csv(&path, 2).unwrap_err();
        match err {
            Error::Ingestion { row, column, .. } => {
                assert_eq!(row, 2);
                assert_eq!(column, 1);
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn paper_fractions_split_1000_exactly() {
        let ds = generate_synthetic(1000, 3).unwrap();
        let idx = split(&ds, &PAPER_FRACTIONS, 0).unwrap();
        assert_eq!(idx.train.len(), 384);
        assert_eq!(idx.calibration.len(), 256);
        assert_eq!(idx.validation.len(), 160);
        assert_eq!(idx.test.len(), 200);
    }

    #[test]
    fn splits_are_disjoint_and_exhaustive() {
        for n in [17usize, 100, 333] {
            let ds = generate_synthetic(n, 9).unwrap();
            let idx = split(&ds, &PAPER_FRACTIONS, 4).unwrap();
            let mut seen = vec![false; n];
            for part in idx.all() {
                for &i in part {
                    assert!(!seen[i], "index {i} appears twice");
                    seen[i] = true;
                }
            }
            assert!(seen.iter().all(|&s| s), "n = {n} not exhaustive");
        }
    }

    #[test]
    fn different_seeds_permute_differently() {
        let ds = generate_synthetic(500, 1).unwrap();
        let a = split(&ds, &PAPER_FRACTIONS, 1).unwrap();
        let b = split(&ds, &PAPER_FRACTIONS, 2).unwrap();
        assert_ne!(a.train, b.train);
    }

    #[test]
    fn tiny_datasets_fail_with_a_config_error() {
        let ds = generate_synthetic(2, 1).unwrap();
        assert!(split(&ds, &PAPER_FRACTIONS, 0).is_err());
    }

    #[test]
    fn standardization_centers_training_columns() {
        let ds = generate_synthetic(800, 4).unwrap();
        let idx = split(&ds, &PAPER_FRACTIONS, 7).unwrap();
        let stats = fit_stats(&ds, &idx.train).unwrap();
        let std_ds = apply_stats(&ds, &stats).unwrap();
        for j in 0..std_ds.y.cols() {
            let vals: Vec<f64> = idx.train.iter().map(|&i| std_ds.y.get(i, j)).collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() <= 1e-9, "mean {mean}");
            assert!((var.sqrt() - 1.0).abs() <= 1e-9, "std {}", var.sqrt());
        }
    }

    #[test]
    fn standardization_is_invertible() {
        let ds = generate_synthetic(300, 8).unwrap();
        let idx = split(&ds, &PAPER_FRACTIONS, 2).unwrap();
        let stats = fit_stats(&ds, &idx.train).unwrap();
        let std_ds = apply_stats(&ds, &stats).unwrap();
        for i in (0..ds.len()).step_by(17) {
            let back = stats.destandardize_y(std_ds.y.row(i));
            for (a, b) in back.iter().zip(ds.y.row(i)) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }
}
