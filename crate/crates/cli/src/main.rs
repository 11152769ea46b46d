mod overrides;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use log::{info, warn};
use serde::Serialize;
use thiserror::Error;
use toml::{Table, Value};

use wfp_fgs::dynamics::IntegratorConfig;
use wfp_fgs::harness::{
    self, dump_field, epsilon_independence_report, format_sig, ErrorKind, ExperimentConfig, ExperimentSpec,
    HarnessError, ReferenceChoice, GRID_DUMP_VERSION,
};
use wfp_fgs::params::validate_params;
use wfp_fgs::sampling::{
    ensemble_observable, evolve_ensemble, make_ensemble, read_snapshot, reconstruct, write_snapshot,
    EnsembleProvenance, PacketEnsemble, SamplingConfig, SNAPSHOT_VERSION,
};

#[derive(Debug, Parser)]
#[command(name = "wfp-fgs", version, about = "Frozen Gaussian sampling for the Wigner-Fokker-Planck equation")]
struct Cli {
    /// Experiment file (TOML).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set n_repeat=50` or `--set grid.dt=5e-4`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory (default: the config's `output_dir`, else `out`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    #[arg(long, global = true, env = "WFP_FGS_WORKERS", value_name = "N")]
    workers: Option<usize>,
    #[arg(long, short, global = true, conflicts_with = "verbose")]
    quiet: bool,
    #[arg(long, short, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample and evolve one ensemble (first M, first ε); writes a snapshot.
    Evolve,
    /// Reconstruct the Wigner function on the configured grid.
    Reconstruct {
        /// Use an existing snapshot instead of evolving.
        #[arg(long, value_name = "PATH")]
        snapshot: Option<PathBuf>,
    },
    /// Ensemble observables with their sample standard deviations.
    Observe {
        #[arg(long, value_name = "PATH")]
        snapshot: Option<PathBuf>,
    },
    /// RMSE convergence tables over the M × ε grid.
    Table,
    /// Finite-domain grid runs against a packet ensemble.
    Stability,
    /// Relaxation study over the steady-state checkpoints.
    SteadyState,
    /// Reference observables (moment or grid solver) for every ε.
    Reference,
    /// Check the config and report parameter warnings.
    Validate,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Reconstruct { .. } => "reconstruct",
            Command::Observe { .. } => "observe",
            Command::Table => "table",
            Command::Stability => "stability",
            Command::SteadyState => "steady-state",
            Command::Reference => "reference",
            Command::Validate => "validate",
        }
    }
}

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Io(_) => 3,
            CliError::Harness(e) => match e.kind() {
                ErrorKind::Validation => 1,
                ErrorKind::Numerical => 2,
                ErrorKind::Io => 3,
            },
        }
    }
}

impl From<wfp_fgs::sampling::SamplingError> for CliError {
    fn from(e: wfp_fgs::sampling::SamplingError) -> Self {
        CliError::Harness(e.into())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = if cli.quiet {
        log::LevelFilter::Error
    } else {
        match cli.verbose {
            0 => log::LevelFilter::Warn,
            1 => log::LevelFilter::Info,
            _ => log::LevelFilter::Debug,
        }
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

/// The config file with overrides, seed and workers applied.
fn resolve_config(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Io(std::io::Error::new(e.kind(), format!("cannot read config {}: {e}", path.display()))))?;
    let mut table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| CliError::Usage(format!("{}: {}", path.display(), e.message())))?;
    for o in &cli.overrides {
        overrides::apply_override(&mut table, o).map_err(CliError::Usage)?;
    }
    if let Some(seed) = cli.seed {
        let seed = i64::try_from(seed).map_err(|_| CliError::Usage("--seed must fit in a signed 64-bit TOML integer".into()))?;
        table.insert("seed".into(), Value::Integer(seed));
    }
    if let Some(w) = cli.workers {
        table.insert("workers".into(), Value::Integer(w as i64));
    }
    let mut cfg = ExperimentConfig::from_value(Value::Table(table))
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    cfg.output_dir = Some(out.clone());
    Ok((cfg, out))
}

fn run(cli: &Cli) -> Result<(), CliError> {
    let (cfg, out) = resolve_config(cli)?;
    let spec = ExperimentSpec::from_config(&cfg)?;
    if let Command::Validate = cli.command {
        return validate(&spec);
    }
    fs::create_dir_all(&out)?;
    let artifacts = match &cli.command {
        Command::Evolve => evolve(&spec, &out)?,
        Command::Reconstruct { snapshot } => {
            let ens = ensemble(&spec, snapshot.as_deref())?;
            let field = reconstruct(&ens, &spec.reconstruction_grid())?;
            vec![dump_field(&out, &format!("{}_field", spec.name), &field)?]
        }
        Command::Observe { snapshot } => observe(&spec, snapshot.as_deref(), &out)?,
        Command::Table => table(&spec, &out)?,
        Command::Stability => {
            let report = harness::stability_study(&spec)?;
            println!(
                "boundary fraction: small {} large {}; packet masses in [{}, {}]",
                format_sig(report.small.boundary_fraction),
                format_sig(report.large.boundary_fraction),
                format_sig(report.fgs_mass_min),
                format_sig(report.fgs_mass_max)
            );
            let mut a = report.artifacts.clone();
            a.push(write_toml(&out, &format!("{}_stability.toml", spec.name), &report)?);
            a
        }
        Command::SteadyState => {
            let report = harness::steady_state_study(&spec)?;
            let d: Vec<String> = report.differences.iter().map(|v| format_sig(*v)).collect();
            println!("differences [{}]; converged = {}", d.join(", "), report.converged);
            let mut a = report.artifacts.clone();
            a.push(write_toml(&out, &format!("{}_steady_state.toml", spec.name), &report)?);
            a
        }
        Command::Reference => reference(&spec, &out)?,
        Command::Validate => unreachable!(),
    };
    write_manifest(cli, &cfg, &out, &artifacts)?;
    Ok(())
}

fn validate(spec: &ExperimentSpec) -> Result<(), CliError> {
    let report = validate_params(&spec.params).map_err(HarnessError::from)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
        warn!("{w}");
    }
    println!(
        "{}: valid ({} potential, n = {}, {} warning(s))",
        spec.name,
        spec.potential.label(),
        spec.dim(),
        report.warnings.len()
    );
    Ok(())
}

fn ensemble(spec: &ExperimentSpec, snapshot: Option<&Path>) -> Result<PacketEnsemble, CliError> {
    let eps = spec.epsilons[0];
    let params = spec.params_at(eps)?;
    let scfg = SamplingConfig::new(spec.samples[0], spec.seed).with_workers(spec.workers);
    match snapshot {
        Some(p) => {
            let snap = read_snapshot(BufReader::new(File::open(p)?))?;
            let params = spec.params_at(snap.epsilon)?;
            let provenance = EnsembleProvenance {
                initial: spec.initial.clone(),
                sampling: SamplingConfig::new(snap.packets.len(), spec.seed).with_workers(spec.workers),
                potential: Some(spec.potential.label()),
            };
            Ok(PacketEnsemble::restore(snap, params, provenance)?)
        }
        None => {
            info!("sampling M = {} at eps = {eps}", scfg.num_samples);
            let ens = make_ensemble(&spec.initial, &params, &scfg)?;
            Ok(evolve_ensemble(&ens, &spec.potential, &IntegratorConfig::with_dt(spec.dt), spec.t_final)?)
        }
    }
}

fn evolve(spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ens = ensemble(spec, None)?;
    let masses = ens.masses();
    let (lo, hi) = masses
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &m| (a.min(m), b.max(m)));
    println!(
        "{} packets at t = {}; masses in [{}, {}]",
        ens.len(),
        format_sig(ens.time()),
        format_sig(lo),
        format_sig(hi)
    );
    let path = out.join(format!("{}.wfps", spec.name));
    let mut w = BufWriter::new(File::create(&path)?);
    write_snapshot(&mut w, &ens.to_snapshot())?;
    w.flush()?;
    Ok(vec![path])
}

fn observe(spec: &ExperimentSpec, snapshot: Option<&Path>, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let ens = ensemble(spec, snapshot)?;
    let mut csv = String::from("observable,eps,M,t,estimate,sample_std\n");
    for o in &spec.observables {
        let e = ensemble_observable(&ens, &o.observable)?;
        let std = if e.std_defined { format_sig(e.sample_std) } else { String::new() };
        csv.push_str(&format!(
            "{},{},{},{},{},{std}\n",
            o.name,
            format_sig(ens.epsilon()),
            ens.len(),
            format_sig(ens.time()),
            format_sig(e.estimate)
        ));
    }
    print!("{csv}");
    let path = out.join(format!("{}_observables.csv", spec.name));
    fs::write(&path, csv)?;
    Ok(vec![path])
}

fn table(spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let tables = harness::convergence_tables(spec)?;
    let mut artifacts = harness::write_tables(out, &spec.name, &tables)?;
    for t in &tables {
        let slopes: Vec<String> = t
            .slopes()
            .iter()
            .map(|s| s.map(format_sig).unwrap_or_else(|| "-".into()))
            .collect();
        println!("{}: slopes per eps [{}]", t.observable, slopes.join(", "));
    }
    if spec.epsilons.len() > 1 {
        let reports: Vec<_> = tables.iter().map(epsilon_independence_report).collect();
        let mut doc = Table::new();
        for r in &reports {
            let v = Value::try_from(r).map_err(|e| CliError::Usage(e.to_string()))?;
            doc.insert(r.observable.clone(), v);
        }
        let path = out.join(format!("{}_epsilon.toml", spec.name));
        fs::write(&path, doc.to_string())?;
        artifacts.push(path);
    }
    Ok(artifacts)
}

fn reference(spec: &ExperimentSpec, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    if spec.reference == ReferenceChoice::None {
        return Err(CliError::Usage("reference = \"none\" has no reference values".into()));
    }
    let mut csv = String::from("observable,eps,t,value\n");
    for &eps in &spec.epsilons {
        let values = harness::reference_values(spec, eps)?.expect("reference present");
        for (o, v) in spec.observables.iter().zip(values) {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                o.name,
                format_sig(eps),
                format_sig(spec.t_final),
                format_sig(v)
            ));
        }
    }
    print!("{csv}");
    let path = out.join(format!("{}_reference.csv", spec.name));
    fs::write(&path, csv)?;
    Ok(vec![path])
}

fn write_toml<T: Serialize>(dir: &Path, file: &str, value: &T) -> Result<PathBuf, CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Usage(e.to_string()))?;
    let path = dir.join(file);
    fs::write(&path, text)?;
    Ok(path)
}

fn write_manifest(cli: &Cli, cfg: &ExperimentConfig, out: &Path, artifacts: &[PathBuf]) -> Result<(), CliError> {
    let mut m = Table::new();
    m.insert("tool".into(), Value::String("wfp-fgs".into()));
    m.insert("version".into(), Value::String(env!("CARGO_PKG_VERSION").into()));
    m.insert("subcommand".into(), Value::String(cli.command.name().into()));
    if let Some(c) = &cli.config {
        m.insert("config".into(), Value::String(c.display().to_string()));
    }
    m.insert(
        "overrides".into(),
        Value::Array(cli.overrides.iter().cloned().map(Value::String).collect()),
    );
    m.insert("seed".into(), Value::String(cfg.seed.to_string()));
    let mut formats = Table::new();
    formats.insert("grid_dump".into(), Value::String(format!("WFG1 v{GRID_DUMP_VERSION}")));
    formats.insert("snapshot".into(), Value::String(format!("WFPS v{SNAPSHOT_VERSION}")));
    m.insert("formats".into(), Value::Table(formats));
    m.insert(
        "artifacts".into(),
        Value::Array(
            artifacts
                .iter()
                .map(|p| Value::String(p.strip_prefix(out).unwrap_or(p).display().to_string()))
                .collect(),
        ),
    );
    let resolved: Table = cfg
        .to_toml()
        .parse()
        .map_err(|e: toml::de::Error| CliError::Usage(e.to_string()))?;
    m.insert("resolved".into(), Value::Table(resolved));
    fs::write(out.join("run-manifest.toml"), m.to_string())?;
    Ok(())
}
