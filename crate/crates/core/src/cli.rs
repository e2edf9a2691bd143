//! Command-line front end: `run`, `sweep`, `oracle` and `dump-env`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::harness::{self, Aggregate, ExperimentConfig, RunOutput, SeedSummary, SweepCell};
use crate::oracles;

#[derive(Debug, Parser)]
#[command(name = "fmlsim", version, about = "Federated meta-learning over wireless networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train for the configured rounds and seeds; writes metrics.csv, summary.json, manifest.json.
    Run(RunArgs),
    /// Repeat a run over values of one parameter; writes sweep.csv, summary.json, manifest.json.
    Sweep(SweepArgs),
    /// Run reference-comparison suites; exits 1 if any case violates its tolerance.
    Oracle(OracleArgs),
    /// Write the sampled population and wireless environment of one seed as JSON.
    DumpEnv(DumpArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Override a field, e.g. `--set environment.eta1=2` or `--set n_k=10`; values are parsed as JSON.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// First seed (replaces the configured one).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds.
    #[arg(long)]
    pub repeats: Option<usize>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Parameter path or alias, e.g. `eta1`.
    #[arg(long)]
    pub param: String,
    /// Comma-separated values, each parsed as JSON.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    /// Suite name, or `all`.
    #[arg(long, default_value = "all")]
    pub suite: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Output file.
    #[arg(long)]
    pub out: PathBuf,
}

/// Configuration after overrides, with what produced it.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub path: PathBuf,
    pub file_sha256: String,
    pub overrides: Vec<(String, Value)>,
    pub config: ExperimentConfig,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `KEY=VALUE` with VALUE parsed as JSON, else taken as a string.
pub fn parse_override(raw: &str) -> Result<(String, Value)> {
    let (k, v) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{raw}' is not KEY=VALUE")))?;
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

pub fn load_config(args: &ConfigArgs) -> Result<LoadedConfig> {
    let bytes = fs::read(&args.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", args.config.display())))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| Error::Config(format!("{} is not UTF-8", args.config.display())))?;
    let mut config = ExperimentConfig::from_json(&text).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", args.config.display())),
        other => other,
    })?;
    let overrides = args.overrides.iter().map(|o| parse_override(o)).collect::<Result<Vec<_>>>()?;
    for (k, v) in &overrides {
        config = config.with_override(k, v.clone())?;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(r) = args.repeats {
        config.repeats = r;
    }
    config.validate()?;
    Ok(LoadedConfig {
        path: args.config.clone(),
        file_sha256: sha256_hex(&bytes),
        overrides,
        config,
    })
}

/// Contents of `summary.json` for `run`; its layout is published in `schema/summary.schema.json`.
#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub selection: String,
    pub allocation: Option<String>,
    pub rounds: usize,
    pub participants: usize,
    pub seeds: Vec<SeedSummary>,
    pub aggregate: Aggregate,
}

impl RunSummary {
    pub fn of(config: &ExperimentConfig, runs: &[RunOutput]) -> Self {
        let seeds: Vec<SeedSummary> = runs.iter().map(SeedSummary::of).collect();
        Self {
            name: config.name.clone(),
            selection: enum_label(&config.selection),
            allocation: config.allocation.map(|a| enum_label(&a)),
            rounds: config.rounds,
            participants: config.participants,
            aggregate: Aggregate::of(&seeds),
            seeds,
        }
    }
}

fn enum_label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_path: String,
    pub config_sha256: String,
    pub overrides: Vec<(String, Value)>,
    pub resolved_config: Value,
    pub seeds: Vec<u64>,
    pub outputs: Vec<(String, String)>,
}

/// Writes all files only after every one has been produced in memory.
fn write_outputs(dir: &Path, files: Vec<(String, Vec<u8>)>, loaded: &LoadedConfig, command: &str) -> Result<()> {
    let manifest = Manifest {
        tool: "fmlsim".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_path: loaded.path.display().to_string(),
        config_sha256: loaded.file_sha256.clone(),
        overrides: loaded.overrides.clone(),
        resolved_config: loaded.config.to_value(),
        seeds: loaded.config.seeds(),
        outputs: files.iter().map(|(n, b)| (n.clone(), sha256_hex(b))).collect(),
    };
    let manifest = serde_json::to_vec_pretty(&manifest)?;
    fs::create_dir_all(dir)?;
    for (name, bytes) in files.iter().chain(std::iter::once(&("manifest.json".to_string(), manifest))) {
        fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

pub fn cmd_run(args: &RunArgs) -> Result<Vec<RunOutput>> {
    let loaded = load_config(&args.config)?;
    let runs = harness::run(&loaded.config)?;
    let mut csv = Vec::new();
    harness::write_metrics_csv(&mut csv, &runs)?;
    let summary = serde_json::to_vec_pretty(&RunSummary::of(&loaded.config, &runs))?;
    write_outputs(
        &args.out,
        vec![("metrics.csv".into(), csv), ("summary.json".into(), summary)],
        &loaded,
        "run",
    )?;
    Ok(runs)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<Vec<SweepCell>> {
    let loaded = load_config(&args.config)?;
    let values: Vec<Value> = args
        .values
        .iter()
        .map(|v| serde_json::from_str(v.trim()).unwrap_or_else(|_| Value::String(v.trim().to_string())))
        .collect();
    let cells = harness::sweep(&loaded.config, &args.param, &values)?;
    let mut csv = Vec::new();
    harness::write_sweep_csv(&mut csv, &cells)?;
    let summary = serde_json::to_vec_pretty(&cells)?;
    write_outputs(
        &args.out,
        vec![("sweep.csv".into(), csv), ("summary.json".into(), summary)],
        &loaded,
        "sweep",
    )?;
    Ok(cells)
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<Vec<oracles::SuiteReport>> {
    let names: Vec<&str> = if args.suite == "all" {
        oracles::SUITES.to_vec()
    } else {
        vec![args.suite.as_str()]
    };
    if let Some(bad) = names.iter().find(|n| !oracles::SUITES.contains(n)) {
        return Err(Error::Config(format!(
            "unknown suite '{bad}' (known: all, {})",
            oracles::SUITES.join(", ")
        )));
    }
    names.into_iter().map(|n| oracles::run_suite(n, args.seed)).collect()
}

#[derive(Serialize)]
struct Dump<'a> {
    seed: u64,
    population: &'a crate::tasks::Population,
    environment: Option<&'a crate::wireless::Environment>,
}

pub fn cmd_dump_env(args: &DumpArgs) -> Result<()> {
    let loaded = load_config(&args.config)?;
    let mut cfg = loaded.config.clone();
    cfg.rounds = 1;
    let seed = cfg.seed;
    let population = harness::population_for(&cfg, seed)?;
    let environment = match cfg.allocation {
        Some(_) => harness::run_wireless(&cfg, seed)?.environment,
        None => None,
    };
    let bytes = serde_json::to_vec_pretty(&Dump {
        seed,
        population: &population,
        environment: environment.as_ref(),
    })?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(&args.out, bytes)?;
    Ok(())
}

/// Exit status for an error: 2 for configuration and input problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Io(_) | Error::Json(_) => 2,
        _ => 1,
    }
}

/// Parses `args`, runs the command and returns the process exit status.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => cmd_run(a).map(|runs| {
            let rows: usize = runs.iter().map(|r| r.rows.len()).sum();
            println!("wrote {rows} rows to {}", a.out.display());
            0
        }),
        Command::Sweep(a) => cmd_sweep(a).map(|cells| {
            println!("wrote {} cells to {}", cells.len(), a.out.display());
            0
        }),
        Command::Oracle(a) => cmd_oracle(a).map(|reports| {
            for r in &reports {
                println!("{r}");
            }
            if reports.iter().all(|r| r.passed()) { 0 } else { 1 }
        }),
        Command::DumpEnv(a) => cmd_dump_env(a).map(|_| {
            println!("wrote {}", a.out.display());
            0
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
