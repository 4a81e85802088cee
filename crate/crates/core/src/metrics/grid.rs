//! Fixed evaluation grids for region size: a lattice for low dimensions and
//! uniform Monte-Carlo probes for d ≥ 4. The grid is built once per run and
//! shared by every method so sizes are comparable; the identity token makes
//! that sharing checkable in reports.

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, unit_uniform};

/// Anything with a membership test over response space.
pub trait Region {
    fn contains(&self, y: &[f64]) -> bool;

    /// Axis-aligned bounds certainly containing the region, when finite;
    /// lets lattice scans skip points that cannot be members.
    fn bounding_box(&self) -> Option<Vec<(f64, f64)>> {
        None
    }
}

#[derive(Debug, Clone)]
enum GridKind {
    Lattice { axes: Vec<Vec<f64>> },
    MonteCarlo { probes: Vec<f64>, n: usize },
}

#[derive(Debug, Clone)]
pub struct VolumeGrid {
    bounds: Vec<(f64, f64)>,
    kind: GridKind,
    /// Volume represented by one counted point: lattice cell volume, or
    /// box volume / probe count under Monte Carlo.
    cell_volume: f64,
    token: u64,
}

/// Dimension at and above which volume falls back to Monte-Carlo probing.
pub const MONTE_CARLO_DIM: usize = 4;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

impl VolumeGrid {
    pub fn lattice(bounds: &[(f64, f64)], points_per_dim: usize) -> Result<Self> {
        if points_per_dim < 2 {
            return Err(Error::InvalidArgument("grid needs at least 2 points per dimension".into()));
        }
        Self::validate_bounds(bounds)?;
        let mut cell_volume = 1.0;
        let mut axes = Vec::with_capacity(bounds.len());
        for &(lo, hi) in bounds {
            let step = (hi - lo) / (points_per_dim - 1) as f64;
            cell_volume *= step;
            axes.push((0..points_per_dim).map(|k| lo + step * k as f64).collect());
        }
        let token = Self::hash_params(bounds, &[points_per_dim as u64, 0, 0]);
        Ok(VolumeGrid {
            bounds: bounds.to_vec(),
            kind: GridKind::Lattice { axes },
            cell_volume,
            token,
        })
    }

    pub fn monte_carlo(bounds: &[(f64, f64)], n_probes: usize, seed: u64) -> Result<Self> {
        if n_probes < 2 {
            return Err(Error::InvalidArgument("need at least 2 Monte-Carlo probes".into()));
        }
        Self::validate_bounds(bounds)?;
        let d = bounds.len();
        let mut rng = rng_from_seed(seed);
        let mut probes = Vec::with_capacity(n_probes * d);
        for _ in 0..n_probes {
            for &(lo, hi) in bounds {
                probes.push(lo + (hi - lo) * unit_uniform(&mut rng));
            }
        }
        let box_volume: f64 = bounds.iter().map(|(lo, hi)| hi - lo).product();
        let token = Self::hash_params(bounds, &[1, n_probes as u64, seed]);
        Ok(VolumeGrid {
            bounds: bounds.to_vec(),
            kind: GridKind::MonteCarlo { probes, n: n_probes },
            cell_volume: box_volume / n_probes as f64,
            token,
        })
    }

    /// Grid over the bounding box of `rows` (each of width d), expanded by
    /// 10% per side; lattice below [`MONTE_CARLO_DIM`], Monte Carlo otherwise.
    pub fn from_responses<'a, I>(rows: I, d: usize, points_per_dim: usize, mc_probes: usize, mc_seed: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut bounds = vec![(f64::INFINITY, f64::NEG_INFINITY); d];
        let mut any = false;
        for row in rows {
            any = true;
            for (j, &v) in row.iter().enumerate() {
                bounds[j].0 = bounds[j].0.min(v);
                bounds[j].1 = bounds[j].1.max(v);
            }
        }
        if !any {
            return Err(Error::InvalidArgument("no rows to build a grid from".into()));
        }
        for b in bounds.iter_mut() {
            let range = (b.1 - b.0).max(1e-12);
            b.0 -= 0.1 * range;
            b.1 += 0.1 * range;
        }
        if d >= MONTE_CARLO_DIM {
            Self::monte_carlo(&bounds, mc_probes, mc_seed)
        } else {
            Self::lattice(&bounds, points_per_dim)
        }
    }

    fn validate_bounds(bounds: &[(f64, f64)]) -> Result<()> {
        if bounds.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one dimension".into()));
        }
        for &(lo, hi) in bounds {
            if !lo.is_finite() || !hi.is_finite() || hi <= lo {
                return Err(Error::InvalidArgument(format!("bad grid bounds ({lo}, {hi})")));
            }
        }
        Ok(())
    }

    fn hash_params(bounds: &[(f64, f64)], extra: &[u64]) -> u64 {
        let mut bytes = Vec::with_capacity(bounds.len() * 16 + extra.len() * 8);
        for &(lo, hi) in bounds {
            bytes.extend_from_slice(&lo.to_le_bytes());
            bytes.extend_from_slice(&hi.to_le_bytes());
        }
        for &e in extra {
            bytes.extend_from_slice(&e.to_le_bytes());
        }
        fnv1a(&bytes)
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_volume
    }

    /// Identity token: equal tokens mean size numbers are comparable.
    pub fn token(&self) -> u64 {
        self.token
    }

    pub fn is_monte_carlo(&self) -> bool {
        matches!(self.kind, GridKind::MonteCarlo { .. })
    }

    pub fn total_points(&self) -> usize {
        match &self.kind {
            GridKind::Lattice { axes } => axes.iter().map(|a| a.len()).product(),
            GridKind::MonteCarlo { n, .. } => *n,
        }
    }

    /// Visits every evaluation point, reusing one coordinate buffer.
    pub fn for_each_point<F: FnMut(&[f64])>(&self, f: F) {
        self.for_each_point_clipped(None, f)
    }

    /// Visits only evaluation points inside `clip` (when given); points a
    /// caller's membership test would reject anyway can be skipped this way.
    pub fn for_each_point_clipped<F: FnMut(&[f64])>(&self, clip: Option<&[(f64, f64)]>, mut f: F) {
        match &self.kind {
            GridKind::Lattice { axes } => {
                let d = axes.len();
                // Per-dimension index windows covering the clip box.
                let mut lo_idx = vec![0usize; d];
                let mut hi_idx: Vec<usize> = axes.iter().map(|a| a.len() - 1).collect();
                if let Some(clip) = clip {
                    for j in 0..d {
                        let step = (self.bounds[j].1 - self.bounds[j].0) / (axes[j].len() - 1) as f64;
                        let lo = ((clip[j].0 - self.bounds[j].0) / step - 1e-9).ceil();
                        let hi = ((clip[j].1 - self.bounds[j].0) / step + 1e-9).floor();
                        if hi < 0.0 || lo > (axes[j].len() - 1) as f64 || hi < lo {
                            return;
                        }
                        lo_idx[j] = lo.max(0.0) as usize;
                        hi_idx[j] = (hi as usize).min(axes[j].len() - 1);
                    }
                }
                let mut idx = lo_idx.clone();
                let mut point = vec![0.0; d];
                'outer: loop {
                    for j in 0..d {
                        point[j] = axes[j][idx[j]];
                    }
                    f(&point);
                    // Odometer increment, last dimension fastest.
                    let mut j = d;
                    loop {
                        if j == 0 {
                            break 'outer;
                        }
                        j -= 1;
                        idx[j] += 1;
                        if idx[j] <= hi_idx[j] {
                            break;
                        }
                        idx[j] = lo_idx[j];
                    }
                }
            }
            GridKind::MonteCarlo { probes, n } => {
                let d = self.bounds.len();
                for i in 0..*n {
                    let point = &probes[i * d..(i + 1) * d];
                    if let Some(clip) = clip {
                        if point.iter().zip(clip).any(|(v, (lo, hi))| v < lo || v > hi) {
                            continue;
                        }
                    }
                    f(point);
                }
            }
        }
    }

    /// Counts evaluation points inside `region`; volume is count × cell volume.
    pub fn count_contained<R: Region + ?Sized>(&self, region: &R) -> (usize, f64) {
        let bbox = region.bounding_box();
        let mut count = 0usize;
        self.for_each_point_clipped(bbox.as_deref(), |p| {
            if region.contains(p) {
                count += 1;
            }
        });
        (count, count as f64 * self.cell_volume)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Disk {
        center: [f64; 2],
        radius: f64,
    }

    impl Region for Disk {
        fn contains(&self, y: &[f64]) -> bool {
            let dx = y[0] - self.center[0];
            let dy = y[1] - self.center[1];
            (dx * dx + dy * dy).sqrt() <= self.radius
        }
    }

    #[test]
    fn lattice_counts_a_unit_disk_near_pi() {
        let grid = VolumeGrid::lattice(&[(-2.0, 2.0), (-2.0, 2.0)], 401).unwrap();
        let (_, volume) = grid.count_contained(&Disk {
            center: [0.0, 0.0],
            radius: 1.0,
        });
        let rel = (volume - std::f64::consts::PI).abs() / std::f64::consts::PI;
        assert!(rel < 0.05, "volume {volume}");
    }

    #[test]
    fn point_count_matches_axes() {
        let grid = VolumeGrid::lattice(&[(0.0, 1.0), (0.0, 1.0)], 11).unwrap();
        assert_eq!(grid.total_points(), 121);
        let mut seen = 0;
        grid.for_each_point(|_| seen += 1);
        assert_eq!(seen, 121);
    }

    #[test]
    fn monte_carlo_volume_of_half_box() {
        struct Half;
        impl Region for Half {
            fn contains(&self, y: &[f64]) -> bool {
                y[0] <= 0.5
            }
        }
        let grid = VolumeGrid::monte_carlo(&[(0.0, 1.0), (0.0, 1.0), (0.0, 1.0), (0.0, 1.0)], 50_000, 3).unwrap();
        let (_, volume) = grid.count_contained(&Half);
        assert!((volume - 0.5).abs() < 0.02, "volume {volume}");
    }

    #[test]
    fn clipped_iteration_visits_exactly_the_window() {
        let grid = VolumeGrid::lattice(&[(0.0, 1.0), (0.0, 1.0)], 11).unwrap();
        let mut points = Vec::new();
        grid.for_each_point_clipped(Some(&[(0.25, 0.65), (0.0, 0.1)]), |p| points.push(p.to_vec()));
        // x in {0.3,...,0.6} (indices 3..=6), y in {0.0, 0.1}.
        assert_eq!(points.len(), 4 * 2);
        for p in &points {
            assert!(p[0] >= 0.25 && p[0] <= 0.65);
            assert!(p[1] <= 0.1);
        }
        // A clip box outside the grid visits nothing.
        let mut n = 0;
        grid.for_each_point_clipped(Some(&[(2.0, 3.0), (0.0, 1.0)]), |_| n += 1);
        assert_eq!(n, 0);
    }

    #[test]
    fn clipped_count_equals_full_scan() {
        struct ClippedDisk;
        impl Region for ClippedDisk {
            fn contains(&self, y: &[f64]) -> bool {
                (y[0] * y[0] + y[1] * y[1]).sqrt() <= 0.8
            }
            fn bounding_box(&self) -> Option<Vec<(f64, f64)>> {
                Some(vec![(-0.8, 0.8), (-0.8, 0.8)])
            }
        }
        struct FullDisk;
        impl Region for FullDisk {
            fn contains(&self, y: &[f64]) -> bool {
                (y[0] * y[0] + y[1] * y[1]).sqrt() <= 0.8
            }
        }
        let grid = VolumeGrid::lattice(&[(-2.0, 2.0), (-2.0, 2.0)], 101).unwrap();
        assert_eq!(grid.count_contained(&ClippedDisk).0, grid.count_contained(&FullDisk).0);
    }

    #[test]
    fn tokens_separate_different_grids() {
        let a = VolumeGrid::lattice(&[(0.0, 1.0)], 10).unwrap();
        let b = VolumeGrid::lattice(&[(0.0, 1.0)], 11).unwrap();
        let c = VolumeGrid::lattice(&[(0.0, 1.0)], 10).unwrap();
        assert_ne!(a.token(), b.token());
        assert_eq!(a.token(), c.token());
    }
}
