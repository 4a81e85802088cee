//! Union-of-balls prediction regions: the top-K volume-sorted samples as
//! centers, one shared calibrated radius.

use crate::error::{Error, Result};
use crate::flow::FlowModel;
use crate::matrix::Matrix;
use crate::metrics::{Region, VolumeGrid};
use crate::vsps::sampling::sample_sorted;

#[derive(Debug, Clone)]
pub struct BallUnionRegion {
    /// `[K × d]` ball centers.
    centers: Matrix,
    /// Shared radius; may be +∞ when calibration had too few points.
    gamma: f64,
}

impl BallUnionRegion {
    pub fn new(centers: Matrix, gamma: f64) -> Result<Self> {
        if centers.rows() == 0 {
            return Err(Error::InvalidArgument("a region needs at least one center".into()));
        }
        if gamma < 0.0 || gamma.is_nan() {
            return Err(Error::InvalidArgument(format!("radius must be non-negative, got {gamma}")));
        }
        Ok(BallUnionRegion { centers, gamma })
    }

    pub fn k(&self) -> usize {
        self.centers.rows()
    }

    pub fn dim(&self) -> usize {
        self.centers.cols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn centers(&self) -> &Matrix {
        &self.centers
    }

    pub fn min_center_distance(&self, y: &[f64]) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.centers.rows() {
            let mut sq = 0.0;
            for (a, b) in self.centers.row(i).iter().zip(y) {
                let diff = a - b;
                sq += diff * diff;
            }
            best = best.min(sq);
        }
        best.sqrt()
    }
}

impl Region for BallUnionRegion {
    fn contains(&self, y: &[f64]) -> bool {
        if self.gamma.is_infinite() {
            return true;
        }
        // Squared-distance comparison with a guard band; only near-boundary
        // points pay for a sqrt, and the decision equals `min distance ≤ γ`.
        let gamma_sq = self.gamma * self.gamma;
        let definite_in = gamma_sq * (1.0 - 1e-9);
        let definite_out = gamma_sq * (1.0 + 1e-9);
        let mut min_sq = f64::INFINITY;
        for i in 0..self.centers.rows() {
            let mut sq = 0.0;
            for (a, b) in self.centers.row(i).iter().zip(y) {
                let diff = a - b;
                sq += diff * diff;
            }
            if sq <= definite_in {
                return true;
            }
            min_sq = min_sq.min(sq);
        }
        if min_sq >= definite_out {
            false
        } else {
            min_sq.sqrt() <= self.gamma
        }
    }

    fn bounding_box(&self) -> Option<Vec<(f64, f64)>> {
        if !self.gamma.is_finite() {
            return None;
        }
        let d = self.centers.cols();
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        for i in 0..self.centers.rows() {
            for (j, &v) in self.centers.row(i).iter().enumerate() {
                bounds[j].0 = bounds[j].0.min(v - self.gamma);
                bounds[j].1 = bounds[j].1.max(v + self.gamma);
            }
        }
        Some(bounds)
    }
}

/// Membership: nearest-center distance at most γ, boundary inclusive.
pub fn region_contains(region: &BallUnionRegion, y: &[f64]) -> bool {
    region.contains(y)
}

/// Grid occupancy of the region: `(count, count × cell volume)`.
pub fn region_volume(region: &BallUnionRegion, grid: &VolumeGrid) -> (usize, f64) {
    grid.count_contained(region)
}

/// Builds the prediction region for a test input: radius-γ balls around the
/// top-K* of M volume-sorted samples.
pub fn predict_region(
    x_test: &[f64],
    flow: &FlowModel,
    k_star: usize,
    gamma: f64,
    m: usize,
    seed: u64,
) -> Result<BallUnionRegion> {
    if k_star < 1 || k_star > m {
        return Err(Error::InvalidArgument(format!("K* = {k_star} out of range 1..={m}")));
    }
    let samples = sample_sorted(x_test, m, flow, seed)?;
    BallUnionRegion::new(samples.top(k_star), gamma)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LossModel;
    use crate::rng::{rng_from_seed, standard_normal_vector};

    fn region(centers: &[Vec<f64>], gamma: f64) -> BallUnionRegion {
        BallUnionRegion::new(Matrix::from_rows(centers).unwrap(), gamma).unwrap()
    }

    #[test]
    fn boundary_is_inclusive() {
        let r = region(&[vec![0.0, 0.0]], 1.0);
        assert!(r.contains(&[0.0, 1.0]));
        assert!(!r.contains(&[0.0, 1.0000001]));
    }

    #[test]
    fn union_semantics() {
        let r = region(&[vec![0.0, 0.0], vec![10.0, 0.0]], 1.0);
        assert!(r.contains(&[10.5, 0.0]));
        assert!(!r.contains(&[5.0, 0.0]));
    }

    #[test]
    fn infinite_gamma_contains_everything() {
        let r = region(&[vec![0.0]], f64::INFINITY);
        assert!(r.contains(&[1e12]));
    }

    #[test]
    fn zero_gamma_contains_exactly_the_centers() {
        let r = region(&[vec![0.25, -0.5]], 0.0);
        assert!(r.contains(&[0.25, -0.5]));
        assert!(!r.contains(&[0.25, -0.5 + 1e-9]));
    }

    #[test]
    fn identity_flow_top1_is_the_first_draw() {
        let mut flow = FlowModel::new(2, 1, &[6], 2, 0).unwrap();
        let zeros = vec![0.0; flow.param_count()];
        flow.set_params(&zeros).unwrap();
        let r = predict_region(&[0.3], &flow, 1, 0.5, 7, 1234).unwrap();
        let mut rng = rng_from_seed(1234);
        let first = standard_normal_vector(&mut rng, 2);
        assert_eq!(r.centers().row(0), first.as_slice());
        assert_eq!(r.k(), 1);
    }

    #[test]
    fn volume_of_unit_disk_and_disjoint_additivity() {
        let grid = VolumeGrid::lattice(&[(-2.0, 2.0), (-2.0, 2.0)], 401).unwrap();
        let disk = region(&[vec![0.0, 0.0]], 1.0);
        let (count, volume) = region_volume(&disk, &grid);
        let rel = (volume - std::f64::consts::PI).abs() / std::f64::consts::PI;
        assert!(rel < 0.05, "count {count} volume {volume}");

        let left = region(&[vec![-1.0, 0.0]], 0.3);
        let right = region(&[vec![1.0, 0.0]], 0.3);
        let both = region(&[vec![-1.0, 0.0], vec![1.0, 0.0]], 0.3);
        let (cl, _) = region_volume(&left, &grid);
        let (cr, _) = region_volume(&right, &grid);
        let (cb, _) = region_volume(&both, &grid);
        assert_eq!(cb, cl + cr);
    }

    #[test]
    fn doubling_gamma_at_least_quadruples_the_count() {
        let grid = VolumeGrid::lattice(&[(-4.0, 4.0), (-4.0, 4.0)], 401).unwrap();
        let small = region(&[vec![0.3, -0.2]], 0.5);
        let large = region(&[vec![0.3, -0.2]], 1.0);
        let (c_small, _) = region_volume(&small, &grid);
        let (c_large, _) = region_volume(&large, &grid);
        assert!(c_large >= 4 * c_small, "{c_large} vs 4×{c_small}");
    }

    #[test]
    fn zero_gamma_off_grid_counts_nothing() {
        let grid = VolumeGrid::lattice(&[(-1.0, 1.0), (-1.0, 1.0)], 21).unwrap();
        let r = region(&[vec![0.051, 0.049]], 0.0);
        assert_eq!(region_volume(&r, &grid).0, 0);
    }

    #[test]
    fn infinite_gamma_counts_the_whole_grid() {
        let grid = VolumeGrid::lattice(&[(-1.0, 1.0), (-1.0, 1.0)], 21).unwrap();
        let r = region(&[vec![0.0, 0.0]], f64::INFINITY);
        assert_eq!(region_volume(&r, &grid).0, grid.total_points());
    }

    #[test]
    fn gamma_nesting_on_random_regions() {
        let mut rng = rng_from_seed(404);
        let grid = VolumeGrid::lattice(&[(-3.0, 3.0), (-3.0, 3.0)], 41).unwrap();
        for trial in 0..100 {
            let k = 1 + trial % 4;
            let centers: Vec<Vec<f64>> = (0..k).map(|_| standard_normal_vector(&mut rng, 2)).collect();
            let g1 = standard_normal_vector(&mut rng, 1)[0].abs();
            let g2 = g1 + standard_normal_vector(&mut rng, 1)[0].abs();
            let small = region(&centers, g1);
            let large = region(&centers, g2);
            grid.for_each_point(|p| {
                if small.contains(p) {
                    assert!(large.contains(p), "nesting violated at {p:?}");
                }
            });
        }
    }
}
