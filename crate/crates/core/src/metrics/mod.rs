//! Coverage and size metrics with multi-seed mean/std aggregation.

mod grid;

pub use grid::{Region, VolumeGrid, MONTE_CARLO_DIM};

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Fraction of test points whose region contains the truth.
pub fn marginal_coverage(covered: &[bool]) -> Result<f64> {
    if covered.is_empty() {
        return Err(Error::InvalidArgument("no test points".into()));
    }
    Ok(covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64)
}

/// Mean grid count over per-test-point regions on a shared grid.
pub fn mean_region_size<R: Region>(regions: &[R], grid: &VolumeGrid) -> Result<f64> {
    if regions.is_empty() {
        return Err(Error::InvalidArgument("no regions".into()));
    }
    let total: usize = regions.iter().map(|r| grid.count_contained(r).0).sum();
    Ok(total as f64 / regions.len() as f64)
}

/// Coverage per distinct group label plus the minimum over groups. Groups
/// enter the minimum equally, regardless of size.
pub fn conditional_coverage(covered: &[bool], labels: &[f64]) -> Result<(Vec<(f64, f64)>, f64)> {
    if covered.len() != labels.len() {
        return Err(Error::shape("conditional_coverage", "labels/indicator length mismatch"));
    }
    if covered.is_empty() {
        return Err(Error::InvalidArgument("no test points".into()));
    }
    let mut groups: BTreeMap<u64, (usize, usize)> = BTreeMap::new();
    for (&c, &label) in covered.iter().zip(labels) {
        let entry = groups.entry(label.to_bits()).or_insert((0, 0));
        entry.0 += 1;
        if c {
            entry.1 += 1;
        }
    }
    let mut per_group: Vec<(f64, f64)> = groups
        .into_iter()
        .map(|(bits, (n, hits))| (f64::from_bits(bits), hits as f64 / n as f64))
        .collect();
    per_group.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite labels"));
    let min = per_group
        .iter()
        .map(|&(_, c)| c)
        .fold(f64::INFINITY, f64::min);
    Ok((per_group, min))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregateStat {
    pub mean: f64,
    /// Sample standard deviation (n−1 denominator); zero for a single value.
    pub std: f64,
}

/// Mean and sample standard deviation across seeds.
pub fn aggregate(values: &[f64]) -> Result<AggregateStat> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("nothing to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Ok(AggregateStat { mean, std })
}

/// Renders a fraction the way the tables do: ×100 with two decimals.
pub fn format_percent(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}
