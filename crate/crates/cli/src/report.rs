//! Report structures and the emitted artifacts: `report.json`,
//! `metrics.csv`, and the per-test-point `regions.csv` plot data.
//!
//! Everything outside the `timing` block is a pure function of the config,
//! so two runs of the same config produce byte-identical reports modulo
//! that block.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use vsps_core::metrics::VolumeGrid;

use crate::config::ExperimentConfig;
use crate::CliError;

/// JSON has no ±∞; a calibrated radius can be +∞ when the calibration set is
/// too small, so non-finite values are carried as strings.
pub mod json_f64 {
    use serde::de::Error as DeError;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        let value = serde_json::Value::deserialize(d)?;
        match value {
            serde_json::Value::Number(n) => n.as_f64().ok_or_else(|| D::Error::custom("bad number")),
            serde_json::Value::String(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(D::Error::custom(format!("bad float string '{other}'"))),
            },
            _ => Err(D::Error::custom("expected number or float string")),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl From<vsps_core::metrics::AggregateStat> for Stat {
    fn from(a: vsps_core::metrics::AggregateStat) -> Self {
        Stat {
            mean: a.mean,
            std: a.std,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridDescriptor {
    pub kind: String,
    pub bounds: Vec<(f64, f64)>,
    pub total_points: usize,
    pub cell_volume: f64,
    /// Identity token (hex): equal tokens mean comparable sizes.
    pub token: String,
}

impl GridDescriptor {
    pub fn from_grid(grid: &VolumeGrid) -> Self {
        GridDescriptor {
            kind: if grid.is_monte_carlo() { "monte_carlo" } else { "lattice" }.into(),
            bounds: grid.bounds().to_vec(),
            total_points: grid.total_points(),
            cell_volume: grid.cell_volume(),
            token: format!("{:016x}", grid.token()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodSeedReport {
    pub coverage: f64,
    /// Mean grid count over test points (the table's Size metric).
    pub size_count: f64,
    /// Mean count × cell volume.
    pub size_volume: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cond_coverage: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_star: Option<usize>,
    #[serde(with = "json_f64")]
    pub gamma: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    pub grid: GridDescriptor,
    pub methods: BTreeMap<String, MethodSeedReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodAggregate {
    pub coverage: Stat,
    pub size_count: Stat,
    pub size_volume: Stat,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cond_coverage: Option<Stat>,
}

/// The one block allowed to differ between identical runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timing {
    pub timestamp: String,
    pub total_seconds: f64,
    pub per_seed_seconds: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub config: ExperimentConfig,
    pub per_seed: Vec<SeedReport>,
    pub aggregates: BTreeMap<String, MethodAggregate>,
    pub timing: Timing,
}

impl Report {
    pub fn to_json(&self) -> Result<String, CliError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Human summary in the table convention: percent metrics ×100, two
    /// decimals, "mean (std)".
    pub fn render_table(&self) -> String {
        use vsps_core::metrics::format_percent;
        let mut out = String::new();
        out.push_str(&format!(
            "{:<10} {:>18} {:>20} {:>18}\n",
            "method", "coverage %", "size (grid points)", "cond. coverage %"
        ));
        for (name, agg) in &self.aggregates {
            let cov = format!("{} ({})", format_percent(agg.coverage.mean), format_percent(agg.coverage.std));
            let size = format!("{:.2} ({:.2})", agg.size_count.mean, agg.size_count.std);
            let cond = match &agg.cond_coverage {
                Some(c) => format!("{} ({})", format_percent(c.mean), format_percent(c.std)),
                None => "-".into(),
            };
            out.push_str(&format!("{name:<10} {cov:>18} {size:>20} {cond:>18}\n"));
        }
        out
    }
}

/// Region geometry serialized into one CSV cell as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RegionGeometry {
    Balls {
        k: usize,
        #[serde(with = "json_f64")]
        gamma: f64,
        centers: Vec<Vec<f64>>,
    },
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
}

impl RegionGeometry {
    pub fn contains(&self, y: &[f64]) -> bool {
        match self {
            RegionGeometry::Balls { gamma, centers, .. } => centers.iter().any(|c| {
                let sq: f64 = c.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                sq.sqrt() <= *gamma
            }),
            RegionGeometry::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .zip(y)
                .all(|((lo, hi), v)| lo <= v && v <= hi),
        }
    }
}

/// One `regions.csv` row: a test point, its truth, and the region that was
/// predicted for it.
#[derive(Debug, Clone)]
pub struct RegionRow {
    pub seed: u64,
    pub test_index: usize,
    pub method: &'static str,
    pub covered: bool,
    pub y: Vec<f64>,
    pub geometry: RegionGeometry,
}

pub struct ArtifactPaths {
    pub report: PathBuf,
    pub metrics: PathBuf,
    pub regions: PathBuf,
    pub flows: Vec<PathBuf>,
}

pub fn write_report_json(report: &Report, dir: &Path) -> Result<PathBuf, CliError> {
    let path = dir.join("report.json");
    fs::write(&path, report.to_json()?)?;
    Ok(path)
}

pub fn write_metrics_csv(report: &Report, dir: &Path) -> Result<PathBuf, CliError> {
    let path = dir.join("metrics.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record(["seed", "method", "metric", "value"])?;
    for seed_report in &report.per_seed {
        for (method, m) in &seed_report.methods {
            let seed = seed_report.seed.to_string();
            let mut rows: Vec<(&str, String)> = vec![
                ("coverage", m.coverage.to_string()),
                ("size_count", m.size_count.to_string()),
                ("size_volume", m.size_volume.to_string()),
                ("gamma", m.gamma.to_string()),
            ];
            if let Some(c) = m.cond_coverage {
                rows.push(("cond_coverage", c.to_string()));
            }
            if let Some(k) = m.k_star {
                rows.push(("k_star", k.to_string()));
            }
            for (metric, value) in rows {
                writer.write_record([seed.as_str(), method, metric, value.as_str()])?;
            }
        }
    }
    writer.flush()?;
    Ok(path)
}

/// Emits the plot data: one row per (test point, method) with the covered
/// flag, the true response, and the region geometry as a JSON cell.
pub fn emit_plot_data(rows: &[RegionRow], dir: &Path) -> Result<PathBuf, CliError> {
    let path = dir.join("regions.csv");
    let mut writer = csv::Writer::from_path(&path)?;
    writer.write_record(["seed", "test_index", "method", "covered", "y", "region"])?;
    for row in rows {
        writer.write_record([
            row.seed.to_string(),
            row.test_index.to_string(),
            row.method.to_string(),
            row.covered.to_string(),
            serde_json::to_string(&row.y)?,
            serde_json::to_string(&row.geometry)?,
        ])?;
    }
    writer.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometry_json_round_trips_including_infinity() {
        let g = RegionGeometry::Balls {
            k: 2,
            gamma: f64::INFINITY,
            centers: vec![vec![0.0, 1.0], vec![2.0, 3.0]],
        };
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.contains("\"inf\""), "{text}");
        let back: RegionGeometry = serde_json::from_str(&text).unwrap();
        assert!(back.contains(&[100.0, -50.0]));

        let b = RegionGeometry::Box {
            lower: vec![0.0, 0.0],
            upper: vec![1.0, 1.0],
        };
        let text = serde_json::to_string(&b).unwrap();
        let back: RegionGeometry = serde_json::from_str(&text).unwrap();
        assert!(back.contains(&[0.5, 1.0]));
        assert!(!back.contains(&[0.5, 1.1]));
    }
}
