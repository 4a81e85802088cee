//! Seeded multi-split experiment runs: for each seed, split and standardize
//! the data, train the configured methods, calibrate, evaluate on the test
//! split, and aggregate across seeds. Seeds run in parallel worker slots;
//! every random stream derives from the seed alone, so results do not depend
//! on the degree of parallelism.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use vsps_core::baseline::{conformalize_qr, qr_region, train_naive_qr, BoxRegion};
use vsps_core::data::{apply_stats, fit_stats, generate_synthetic, load_csv, split, Dataset, PAPER_FRACTIONS};
use vsps_core::flow::{fit_flow, save_flow, FlowModel};
use vsps_core::metrics::{aggregate, conditional_coverage, marginal_coverage, mean_region_size, Region, VolumeGrid};
use vsps_core::nn::TrainConfig;
use vsps_core::rng::{derive_seed, stream};
use vsps_core::vsps::{calibrate, point_seed, predict_region, select_k};
use vsps_core::Matrix;

use crate::config::{ExperimentConfig, Method};
use crate::report::{
    emit_plot_data, write_metrics_csv, write_report_json, ArtifactPaths, GridDescriptor, MethodAggregate,
    MethodSeedReport, RegionGeometry, RegionRow, Report, SeedReport, Stat, Timing,
};
use crate::CliError;

/// Extra stream tag for the Monte-Carlo grid (kept clear of core's tags).
const GRID_STREAM: u64 = 101;

struct MethodOutcome {
    report: MethodSeedReport,
    region_rows: Vec<RegionRow>,
}

struct SeedOutcome {
    seed: u64,
    grid: GridDescriptor,
    methods: BTreeMap<String, MethodOutcome>,
    flow: Option<FlowModel>,
    events: Vec<String>,
    seconds: f64,
}

pub struct RunOutput {
    pub report: Report,
    pub regions: Vec<RegionRow>,
    /// Deterministic, timing-free run log.
    pub events: Vec<String>,
    pub flows: Vec<(u64, FlowModel)>,
}

pub fn load_dataset(config: &ExperimentConfig) -> Result<Dataset, CliError> {
    match config.data.source.as_str() {
        "synthetic" => Ok(generate_synthetic(config.data.n, config.data.seed)?),
        "csv" => {
            let path = config.data.path.as_ref().expect("validated");
            let load = load_csv(Path::new(path), config.data.response_dim)?;
            if load.rejected_rows > 0 {
                log::warn!("{}: dropped {} rows with non-finite values", path, load.rejected_rows);
            }
            Ok(load.dataset)
        }
        other => Err(CliError::Config(format!("unknown data source '{other}'"))),
    }
}

fn check_split_feasibility(config: &ExperimentConfig, n: usize) -> Result<(), CliError> {
    let min_part = PAPER_FRACTIONS.iter().map(|f| (f * n as f64) as usize).min().unwrap_or(0);
    if min_part == 0 {
        return Err(CliError::Config(format!("dataset of {n} rows is too small for the split fractions")));
    }
    if config.runs_method(Method::Vsps) && !config.k_selection_uses_calibration_set {
        let val = (PAPER_FRACTIONS[2] * n as f64) as usize;
        if val < 2 {
            return Err(CliError::Config(
                "validation split must have at least 2 rows to halve for K selection".into(),
            ));
        }
    }
    Ok(())
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput, CliError> {
    config.validate()?;
    let dataset = load_dataset(config)?;
    check_split_feasibility(config, dataset.len())?;

    let started = Instant::now();
    let outcomes: Result<Vec<SeedOutcome>, CliError> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            run_seed(config, &dataset, seed).map_err(|e| CliError::Seed {
                seed,
                message: e.to_string(),
            })
        })
        .collect();
    let outcomes = outcomes?;
    let total_seconds = started.elapsed().as_secs_f64();

    let mut per_seed = Vec::with_capacity(outcomes.len());
    let mut regions = Vec::new();
    let mut events = Vec::new();
    let mut flows = Vec::new();
    let mut per_seed_seconds = Vec::with_capacity(outcomes.len());
    let mut metric_values: BTreeMap<String, Vec<MethodSeedReport>> = BTreeMap::new();

    for outcome in outcomes {
        let mut methods = BTreeMap::new();
        for (name, m) in outcome.methods {
            metric_values.entry(name.clone()).or_default().push(m.report.clone());
            regions.extend(m.region_rows);
            methods.insert(name, m.report);
        }
        events.extend(outcome.events);
        if let Some(flow) = outcome.flow {
            flows.push((outcome.seed, flow));
        }
        per_seed_seconds.push(outcome.seconds);
        per_seed.push(SeedReport {
            seed: outcome.seed,
            grid: outcome.grid,
            methods,
        });
    }

    let mut aggregates = BTreeMap::new();
    for (name, reports) in metric_values {
        let coverage: Vec<f64> = reports.iter().map(|r| r.coverage).collect();
        let size_count: Vec<f64> = reports.iter().map(|r| r.size_count).collect();
        let size_volume: Vec<f64> = reports.iter().map(|r| r.size_volume).collect();
        let cond: Vec<f64> = reports.iter().filter_map(|r| r.cond_coverage).collect();
        aggregates.insert(
            name,
            MethodAggregate {
                coverage: Stat::from(aggregate(&coverage)?),
                size_count: Stat::from(aggregate(&size_count)?),
                size_volume: Stat::from(aggregate(&size_volume)?),
                cond_coverage: if cond.len() == reports.len() {
                    Some(Stat::from(aggregate(&cond)?))
                } else {
                    None
                },
            },
        );
    }

    let report = Report {
        config: config.clone(),
        per_seed,
        aggregates,
        timing: Timing {
            timestamp: chrono::Utc::now().to_rfc3339(),
            total_seconds,
            per_seed_seconds,
        },
    };
    Ok(RunOutput {
        report,
        regions,
        events,
        flows,
    })
}

/// Writes report.json, metrics.csv, regions.csv, and one flow model file per
/// seed into `dir`.
pub fn write_artifacts(output: &RunOutput, dir: &Path) -> Result<ArtifactPaths, CliError> {
    std::fs::create_dir_all(dir)?;
    let report = write_report_json(&output.report, dir)?;
    let metrics = write_metrics_csv(&output.report, dir)?;
    let regions = emit_plot_data(&output.regions, dir)?;
    let mut flow_paths = Vec::new();
    for (seed, flow) in &output.flows {
        let path = dir.join(format!("flow_seed{seed}.vspsflow"));
        save_flow(flow, &path)?;
        flow_paths.push(path);
    }
    Ok(ArtifactPaths {
        report,
        metrics,
        regions,
        flows: flow_paths,
    })
}

struct SplitMatrices {
    train_x: Matrix,
    train_y: Matrix,
    cal_x: Matrix,
    cal_y: Matrix,
    val_x: Matrix,
    val_y: Matrix,
    test_x: Matrix,
    test_y: Matrix,
    test_labels: Option<Vec<f64>>,
}

fn split_matrices(dataset: &Dataset, seed: u64) -> Result<SplitMatrices, vsps_core::Error> {
    let indices = split(dataset, &PAPER_FRACTIONS, derive_seed(seed, stream::SPLIT, 0))?;
    let stats = fit_stats(dataset, &indices.train)?;
    let std_ds = apply_stats(dataset, &stats)?;
    let test_labels = std_ds
        .groups
        .as_ref()
        .map(|g| indices.test.iter().map(|&i| g[i]).collect());
    Ok(SplitMatrices {
        train_x: std_ds.x.select_rows(&indices.train),
        train_y: std_ds.y.select_rows(&indices.train),
        cal_x: std_ds.x.select_rows(&indices.calibration),
        cal_y: std_ds.y.select_rows(&indices.calibration),
        val_x: std_ds.x.select_rows(&indices.validation),
        val_y: std_ds.y.select_rows(&indices.validation),
        test_x: std_ds.x.select_rows(&indices.test),
        test_y: std_ds.y.select_rows(&indices.test),
        test_labels,
    })
}

fn run_seed(config: &ExperimentConfig, dataset: &Dataset, seed: u64) -> Result<SeedOutcome, CliError> {
    let t0 = Instant::now();
    let mut events = Vec::new();
    let parts = split_matrices(dataset, seed)?;

    // One grid per seed, shared by every method: bounds from the training
    // and calibration responses.
    let d = parts.train_y.cols();
    let grid_rows = parts.train_y.iter_rows().chain(parts.cal_y.iter_rows());
    let grid = VolumeGrid::from_responses(
        grid_rows,
        d,
        config.grid.points_per_dim,
        config.grid.mc_probes,
        derive_seed(seed, GRID_STREAM, 0),
    )?;

    let mut methods = BTreeMap::new();
    let mut flow_out = None;

    if config.runs_method(Method::Vsps) {
        let (outcome, flow) = run_vsps_method(config, &parts, &grid, seed, &mut events)?;
        methods.insert(Method::Vsps.name().to_string(), outcome);
        flow_out = Some(flow);
    }
    if config.runs_method(Method::NaiveQr) {
        let outcome = run_qr_method(config, &parts, &grid, seed, &mut events)?;
        methods.insert(Method::NaiveQr.name().to_string(), outcome);
    }

    Ok(SeedOutcome {
        seed,
        grid: GridDescriptor::from_grid(&grid),
        methods,
        flow: flow_out,
        events,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn run_vsps_method(
    config: &ExperimentConfig,
    parts: &SplitMatrices,
    grid: &VolumeGrid,
    seed: u64,
    events: &mut Vec<String>,
) -> Result<(MethodOutcome, FlowModel), CliError> {
    events.push(format!(
        "seed {seed}: training flow ({} blocks, hidden {:?})",
        config.flow.blocks, config.flow.hidden
    ));
    let train_config = TrainConfig {
        batch_size: config.train.batch_size,
        max_epochs: config.train.max_epochs,
        patience: config.train.patience,
        learning_rate: config.train.learning_rate,
        seed: derive_seed(seed, stream::FLOW_INIT, 1),
    };
    let (flow, history) = fit_flow(
        &parts.train_x,
        &parts.train_y,
        &parts.val_x,
        &parts.val_y,
        &config.flow.hidden,
        config.flow.blocks,
        derive_seed(seed, stream::FLOW_INIT, 0),
        &train_config,
    )?;
    events.push(format!(
        "seed {seed}: flow best val NLL {:.4} at epoch {} of {}",
        history.best_val_loss,
        history.best_epoch,
        history.epochs.len()
    ));

    // K* selection: by default γ(K) is priced on half the validation split
    // and sizes on the other half, leaving the calibration split untouched
    // until the final radius. The switch reproduces the literal algorithm.
    let selection = if config.k_selection_uses_calibration_set {
        select_k(
            &flow,
            &parts.val_x,
            &parts.cal_x,
            &parts.cal_y,
            config.alpha,
            config.m,
            grid,
            derive_seed(seed, stream::K_SELECTION, 0),
        )?
    } else {
        let n_val = parts.val_x.rows();
        let half = n_val / 2;
        let sel_idx: Vec<usize> = (0..half).collect();
        let size_idx: Vec<usize> = (half..n_val).collect();
        select_k(
            &flow,
            &parts.val_x.select_rows(&size_idx),
            &parts.val_x.select_rows(&sel_idx),
            &parts.val_y.select_rows(&sel_idx),
            config.alpha,
            config.m,
            grid,
            derive_seed(seed, stream::K_SELECTION, 0),
        )?
    };

    let calibration = calibrate(
        &flow,
        selection.k_star,
        &parts.cal_x,
        &parts.cal_y,
        config.m,
        config.alpha,
        derive_seed(seed, stream::CALIBRATION, 0),
    )?;
    events.push(format!(
        "seed {seed}: K* = {} of M = {}, gamma = {:.6}",
        selection.k_star, config.m, calibration.gamma
    ));
    if calibration.gamma.is_infinite() {
        events.push(format!(
            "seed {seed}: warning: gamma is infinite, alpha = {} is unattainable with N = {} calibration points",
            config.alpha,
            parts.cal_x.rows()
        ));
    }

    let test_master = derive_seed(seed, stream::TEST, 0);
    let n_test = parts.test_x.rows();
    let mut covered = Vec::with_capacity(n_test);
    let mut regions = Vec::with_capacity(n_test);
    let mut region_rows = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let region = predict_region(
            parts.test_x.row(i),
            &flow,
            selection.k_star,
            calibration.gamma,
            config.m,
            point_seed(test_master, i),
        )?;
        let hit = region.contains(parts.test_y.row(i));
        covered.push(hit);
        region_rows.push(RegionRow {
            seed,
            test_index: i,
            method: Method::Vsps.name(),
            covered: hit,
            y: parts.test_y.row(i).to_vec(),
            geometry: RegionGeometry::Balls {
                k: region.k(),
                gamma: region.gamma(),
                centers: (0..region.k()).map(|r| region.centers().row(r).to_vec()).collect(),
            },
        });
        regions.push(region);
    }

    let coverage = marginal_coverage(&covered)?;
    let size_count = mean_region_size(&regions, grid)?;
    let cond_coverage = match &parts.test_labels {
        Some(labels) => Some(conditional_coverage(&covered, labels)?.1),
        None => None,
    };
    let report = MethodSeedReport {
        coverage,
        size_count,
        size_volume: size_count * grid.cell_volume(),
        cond_coverage,
        k_star: Some(selection.k_star),
        gamma: calibration.gamma,
    };
    Ok((
        MethodOutcome {
            report,
            region_rows,
        },
        flow,
    ))
}

fn run_qr_method(
    config: &ExperimentConfig,
    parts: &SplitMatrices,
    grid: &VolumeGrid,
    seed: u64,
    events: &mut Vec<String>,
) -> Result<MethodOutcome, CliError> {
    events.push(format!(
        "seed {seed}: training quantile nets (d = {}, hidden {:?})",
        parts.train_y.cols(),
        config.flow.hidden
    ));
    let train_config = TrainConfig {
        batch_size: config.train.batch_size,
        max_epochs: config.train.max_epochs,
        patience: config.train.patience,
        learning_rate: config.train.learning_rate,
        seed: derive_seed(seed, stream::QUANTILE_NET, 0),
    };
    let (net, _histories) = train_naive_qr(
        &parts.train_x,
        &parts.train_y,
        &parts.val_x,
        &parts.val_y,
        config.alpha,
        &config.flow.hidden,
        &train_config,
    )?;
    let gamma_qr = conformalize_qr(&net, &parts.cal_x, &parts.cal_y, config.alpha)?;
    events.push(format!("seed {seed}: gamma_qr = {gamma_qr:.6}"));

    let n_test = parts.test_x.rows();
    let mut covered = Vec::with_capacity(n_test);
    let mut boxes: Vec<BoxRegion> = Vec::with_capacity(n_test);
    let mut region_rows = Vec::with_capacity(n_test);
    for i in 0..n_test {
        let region = qr_region(parts.test_x.row(i), &net, gamma_qr)?;
        let hit = region.contains(parts.test_y.row(i));
        covered.push(hit);
        region_rows.push(RegionRow {
            seed,
            test_index: i,
            method: Method::NaiveQr.name(),
            covered: hit,
            y: parts.test_y.row(i).to_vec(),
            geometry: RegionGeometry::Box {
                lower: region.lower.clone(),
                upper: region.upper.clone(),
            },
        });
        boxes.push(region);
    }

    let coverage = marginal_coverage(&covered)?;
    let size_count = mean_region_size(&boxes, grid)?;
    let cond_coverage = match &parts.test_labels {
        Some(labels) => Some(conditional_coverage(&covered, labels)?.1),
        None => None,
    };
    Ok(MethodOutcome {
        report: MethodSeedReport {
            coverage,
            size_count,
            size_volume: size_count * grid.cell_volume(),
            cond_coverage,
            k_star: None,
            gamma: gamma_qr,
        },
        region_rows,
    })
}
