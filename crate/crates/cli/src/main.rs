use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Arg, ArgAction, Command};

use vsps_cli::config::{load_config, OVERRIDE_KEYS};
use vsps_cli::experiment::{run_experiment, write_artifacts};
use vsps_cli::{selftest, CliError};
use vsps_core::flow::load_flow;
use vsps_core::rng::{rng_from_seed, standard_normal_vector};

fn cli() -> Command {
    let mut run = Command::new("run")
        .about("Run the full experiment: per-seed splits, training, calibration, metrics")
        .arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .help("TOML config file; defaults apply when omitted"),
        );
    for key in OVERRIDE_KEYS {
        run = run.arg(
            Arg::new(*key)
                .long(*key)
                .value_name("VALUE")
                .help("Override the config key of the same dotted name"),
        );
    }

    Command::new("vsps")
        .about("Volume-sorted prediction sets for multi-target regression")
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(run)
        .subcommand(
            Command::new("synthetic")
                .about("Emit a generated v-shape dataset as CSV")
                .arg(Arg::new("n").long("n").value_name("ROWS").default_value("2000"))
                .arg(Arg::new("seed").long("seed").value_name("SEED").default_value("0"))
                .arg(Arg::new("out").long("out").value_name("PATH").required(true)),
        )
        .subcommand(
            Command::new("inspect-flow")
                .about("Round-trip and log-det diagnostics for a saved flow model")
                .arg(Arg::new("model").long("model").value_name("PATH").required(true))
                .arg(Arg::new("probes").long("probes").value_name("N").default_value("200"))
                .arg(Arg::new("seed").long("seed").value_name("SEED").default_value("0")),
        )
        .subcommand(
            Command::new("check")
                .about("Run the invariant and oracle self-test battery")
                .arg(
                    Arg::new("quiet")
                        .long("quiet")
                        .action(ArgAction::SetTrue)
                        .help("Only print failures"),
                ),
        )
}

fn main() -> ExitCode {
    env_logger::init();
    let matches = cli().get_matches();
    let result = match matches.subcommand() {
        Some(("run", sub)) => cmd_run(sub),
        Some(("synthetic", sub)) => cmd_synthetic(sub),
        Some(("inspect-flow", sub)) => cmd_inspect_flow(sub),
        Some(("check", _)) => cmd_check(),
        _ => unreachable!("subcommand required"),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn cmd_run(matches: &clap::ArgMatches) -> Result<ExitCode, CliError> {
    let config_path = matches.get_one::<String>("config").map(PathBuf::from);
    let mut overrides = Vec::new();
    for key in OVERRIDE_KEYS {
        if let Some(value) = matches.get_one::<String>(key) {
            overrides.push((key.to_string(), value.clone()));
        }
    }
    let config = load_config(config_path.as_deref(), &overrides)?;
    let output = run_experiment(&config)?;
    for event in &output.events {
        log::info!("{event}");
    }
    let dir = PathBuf::from(&config.output_dir);
    let paths = write_artifacts(&output, &dir)?;
    print!("{}", output.report.render_table());
    println!();
    println!("report:  {}", paths.report.display());
    println!("metrics: {}", paths.metrics.display());
    println!("regions: {}", paths.regions.display());
    for flow in &paths.flows {
        println!("flow:    {}", flow.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_synthetic(matches: &clap::ArgMatches) -> Result<ExitCode, CliError> {
    let n: usize = parse_flag(matches, "n")?;
    let seed: u64 = parse_flag(matches, "seed")?;
    let out = PathBuf::from(matches.get_one::<String>("out").expect("required"));
    let dataset = vsps_core::data::generate_synthetic(n, seed)?;
    let mut text = String::new();
    let p = dataset.x.cols();
    let d = dataset.y.cols();
    let header: Vec<String> = (0..p)
        .map(|j| format!("x{j}"))
        .chain((0..d).map(|j| format!("y{j}")))
        .collect();
    text.push_str(&header.join(","));
    text.push('\n');
    for i in 0..dataset.len() {
        let row: Vec<String> = dataset
            .x
            .row(i)
            .iter()
            .chain(dataset.y.row(i))
            .map(|v| format!("{v}"))
            .collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(&out, text)?;
    println!("wrote {} rows to {}", n, out.display());
    Ok(ExitCode::SUCCESS)
}

fn parse_flag<T: std::str::FromStr>(matches: &clap::ArgMatches, key: &str) -> Result<T, CliError> {
    matches
        .get_one::<String>(key)
        .expect("has default")
        .parse()
        .map_err(|_| CliError::Config(format!("cannot parse --{key}")))
}

fn cmd_inspect_flow(matches: &clap::ArgMatches) -> Result<ExitCode, CliError> {
    let path = PathBuf::from(matches.get_one::<String>("model").expect("required"));
    let probes: usize = parse_flag(matches, "probes")?;
    let seed: u64 = parse_flag(matches, "seed")?;
    let model = load_flow(Path::new(&path))?;
    let d = model.response_dim();
    let p = model.feature_dim();
    println!(
        "model: d = {d}, p = {p}, blocks = {}, hidden = {:?}, seed = {}",
        model.n_blocks(),
        model.hidden_sizes(),
        model.seed()
    );

    let mut rng = rng_from_seed(seed);
    let mut worst_round_trip = 0.0f64;
    let mut worst_logdet = 0.0f64;
    let mut logdet_min = f64::INFINITY;
    let mut logdet_max = f64::NEG_INFINITY;
    for _ in 0..probes {
        let y = standard_normal_vector(&mut rng, d);
        let x = standard_normal_vector(&mut rng, p);
        let (z, ld) = model.forward(&y, &x)?;
        logdet_min = logdet_min.min(ld);
        logdet_max = logdet_max.max(ld);
        let (back, ld_inv) = model.inverse(&z, &x)?;
        for (a, b) in y.iter().zip(&back) {
            worst_round_trip = worst_round_trip.max((a - b).abs());
        }
        let (_, ld_back) = model.forward(&back, &x)?;
        worst_logdet = worst_logdet.max((ld_inv - ld_back).abs());
    }
    println!("round-trip max |f⁻¹(f(y)) − y|: {worst_round_trip:.3e} over {probes} probes");
    println!("inverse/forward log-det max gap: {worst_logdet:.3e}");
    println!("log-det range on probes: [{logdet_min:.4}, {logdet_max:.4}]");
    let ok = worst_round_trip <= 1e-6 && worst_logdet <= 1e-9;
    println!("{}", if ok { "PASS round-trip diagnostics" } else { "FAIL round-trip diagnostics" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_check() -> Result<ExitCode, CliError> {
    if selftest::run_all() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}
