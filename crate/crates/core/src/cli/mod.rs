//! Command-line surface: JSON run configs, commands, and exit codes.
//!
//! Every command reads one JSON config (`--config`), writes into `--out`,
//! and maps failures to a fixed exit code: 2 for configuration errors,
//! 3 when the field solve does not converge, 4 for I/O.

pub mod suites;

use crate::dynamics::{run, FlowConfig};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::fields::{solve_vector_potential_with, PicardOptions};
use crate::io;
use crate::kernels::Softening;
use crate::sampling::{sample, InitialSpec};
use crate::stability::{dt_halving_study, uniqueness_experiment, OrderRow, PerturbSpec};
use crate::transport::w2_exact;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use suites::Suite;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NO_CONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Exit code for an error, looking through step wrappers.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        Error::NoConvergence { .. } | Error::BoundViolated { .. } => EXIT_NO_CONVERGENCE,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "rvd",
    version,
    about = "Relativistic Vlasov-Darwin particle simulator"
)]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config's top-level `seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads, 0 = all cores. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample an initial ensemble.
    Gen,
    /// Integrate the characteristic flow.
    Simulate,
    /// Solve for the vector potential at the particles.
    Fields,
    /// Exact W2 between two ensemble files.
    W2 {
        a: Option<PathBuf>,
        b: Option<PathBuf>,
    },
    /// Two-run stability experiment.
    Uniqueness,
    /// Run a verification suite.
    Verify { suite: Option<String> },
}

/// Initial data given either as a CSV file or as a sampling spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
}

impl SourceConfig {
    fn load(&self, base: &Path) -> Result<Ensemble> {
        match (&self.input, &self.initial) {
            (Some(path), None) => io::read_ensemble_csv(&io::resolve(base, path), 0.0),
            (None, Some(spec)) => sample(spec),
            _ => Err(Error::InvalidConfig(
                "exactly one of `input` and `initial` must be given".into(),
            )),
        }
    }
}

fn default_fp_tol() -> f64 {
    1e-10
}
fn default_fp_max_iter() -> usize {
    500
}
fn default_record_every() -> usize {
    1
}
fn default_levels() -> usize {
    3
}
fn default_damping() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    pub dt: f64,
    pub t_end: f64,
    pub eps: f64,
    #[serde(default = "default_fp_tol")]
    pub fp_tol: f64,
    #[serde(default = "default_fp_max_iter")]
    pub fp_max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
}

impl SimulateConfig {
    fn source(&self) -> SourceConfig {
        SourceConfig {
            input: self.input.clone(),
            initial: self.initial,
        }
    }

    pub fn flow(&self) -> Result<FlowConfig> {
        let cfg = FlowConfig {
            dt: self.dt,
            t_end: self.t_end,
            eps: Softening::new(self.eps)?,
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
            seed: self.seed,
            record_every: self.record_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    pub eps: f64,
    #[serde(default = "default_fp_tol")]
    pub tol: f64,
    #[serde(default = "default_fp_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default)]
    pub enforce_bound: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct W2Config {
    pub a: PathBuf,
    pub b: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniquenessConfig {
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    pub dt: f64,
    pub t_end: f64,
    pub eps: f64,
    #[serde(default = "default_fp_tol")]
    pub fp_tol: f64,
    #[serde(default = "default_fp_max_iter")]
    pub fp_max_iter: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    pub perturbation: PerturbSpec,
    /// Runs in the dt-halving order table (dt-halving only).
    #[serde(default = "default_levels")]
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub suite: Option<Suite>,
    #[serde(default)]
    pub seed: u64,
    /// Sample count for the kernels suite.
    #[serde(default)]
    pub samples: Option<usize>,
}

/// `{"rows": [...]}` written next to a dt-halving trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderTable {
    pub rows: Vec<OrderRow>,
}

/// Reads `path` as JSON, applies `--seed`, and deserializes strictly.
pub fn load_config<T: DeserializeOwned>(path: &Path, seed: Option<u64>) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed {
        match value.as_object_mut() {
            Some(obj) => {
                obj.insert("seed".into(), seed.into());
            }
            None => return Err(Error::InvalidConfig("config must be a JSON object".into())),
        }
    }
    serde_json::from_value(value)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
}

fn base_dir(config: &Path) -> PathBuf {
    config.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn require_config(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("--config is required".into()))
}

fn out_dir(cli: &Cli) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

/// Writes `<out>/ensemble.csv`.
pub fn cmd_gen(spec: &InitialSpec, out: &Path) -> Result<PathBuf> {
    let ens = sample(spec)?;
    let path = out.join("ensemble.csv");
    io::write_ensemble_csv(&path, &ens)?;
    Ok(path)
}

/// Writes the trajectory directory into `out`.
pub fn cmd_simulate(cfg: &SimulateConfig, base: &Path, out: &Path) -> Result<()> {
    let flow = cfg.flow()?;
    let f0 = cfg.source().load(base)?;
    let traj = run(&f0, &flow)?;
    io::write_trajectory(out, &traj)
}

/// Writes `potential.csv` and `potential.json` into `out`.
pub fn cmd_fields(cfg: &FieldsConfig, base: &Path, out: &Path) -> Result<()> {
    let source = SourceConfig {
        input: cfg.input.clone(),
        initial: cfg.initial,
    };
    let ens = source.load(base)?;
    let mut opts = PicardOptions::new(cfg.tol, cfg.max_iter).with_damping(cfg.damping);
    opts.enforce_bound = cfg.enforce_bound;
    let state = solve_vector_potential_with(&ens, Softening::new(cfg.eps)?, &opts, None)?;
    io::write_potential(
        &out.join("potential.csv"),
        &out.join("potential.json"),
        &ens,
        &state,
    )
}

/// Optimal plan between two ensemble files; writes `plan.csv` and
/// `plan.json` when `out` is given. Returns the summary JSON.
pub fn cmd_w2(a: &Path, b: &Path, out: Option<&Path>) -> Result<String> {
    let ea = io::read_ensemble_csv(a, 0.0)?;
    let eb = io::read_ensemble_csv(b, 0.0)?;
    let plan = w2_exact(&ea, &eb)?;
    if let Some(dir) = out {
        io::write_plan(&dir.join("plan.csv"), &dir.join("plan.json"), &plan)?;
    }
    serde_json::to_string(&plan.summary()).map_err(|e| Error::InvalidConfig(e.to_string()))
}

impl UniquenessConfig {
    /// Initial data and flow configuration, with `input` resolved against `base`.
    pub fn prepare(&self, base: &Path) -> Result<(Ensemble, FlowConfig)> {
        let sim = SimulateConfig {
            input: self.input.clone(),
            initial: self.initial,
            dt: self.dt,
            t_end: self.t_end,
            eps: self.eps,
            fp_tol: self.fp_tol,
            fp_max_iter: self.fp_max_iter,
            seed: self.seed,
            record_every: self.record_every,
        };
        let flow = sim.flow()?;
        Ok((sim.source().load(base)?, flow))
    }
}

/// Writes `trace.csv`, `trace.json`, and for dt-halving `order_table.json`.
pub fn cmd_uniqueness(cfg: &UniquenessConfig, base: &Path, out: &Path) -> Result<()> {
    let (f0, flow) = cfg.prepare(base)?;
    let trace = uniqueness_experiment(&f0, &flow, cfg.perturbation)?;
    io::write_trace(&out.join("trace.csv"), &out.join("trace.json"), &trace)?;
    if cfg.perturbation == PerturbSpec::DtHalving {
        let rows = dt_halving_study(&f0, &flow, cfg.levels)?;
        io::write_json(&out.join("order_table.json"), &OrderTable { rows })?;
    }
    Ok(())
}

/// Runs a suite and returns its JSON report and pass flag.
pub fn cmd_verify(suite: Suite, cfg: &VerifyConfig) -> Result<(serde_json::Value, bool)> {
    let seed = cfg.seed;
    let to_value = |v: std::result::Result<serde_json::Value, serde_json::Error>| {
        v.map_err(|e| Error::InvalidConfig(e.to_string()))
    };
    let (value, pass) = match suite {
        Suite::Kernels => {
            let r = suites::kernels_suite(cfg.samples.unwrap_or(100_000), seed)?;
            (to_value(serde_json::to_value(r))?, r.pass)
        }
        Suite::Identity => {
            let r = suites::identity_suite(0.05)?;
            (to_value(serde_json::to_value(r))?, r.pass)
        }
        Suite::Fields => {
            let r = suites::fields_suite(512, 0.05, 1000, seed)?;
            let pass = r.pass;
            (to_value(serde_json::to_value(r))?, pass)
        }
        Suite::Bounds => {
            let r = suites::bounds_suite(512, 0.05, 1000, seed)?;
            (to_value(serde_json::to_value(r))?, r.pass)
        }
        Suite::Transport => {
            let r = suites::transport_suite(20, 8, seed)?;
            let pass = r.pass;
            (to_value(serde_json::to_value(r))?, pass)
        }
    };
    let report = serde_json::json!({ "suite": suite, "pass": pass, "report": value });
    Ok((report, pass))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let out = out_dir(cli);
    match &cli.command {
        Command::Gen => {
            let path = require_config(cli)?;
            let spec: InitialSpec = load_config(path, cli.seed)?;
            let written = cmd_gen(&spec, &out)?;
            println!("{}", written.display());
        }
        Command::Simulate => {
            let path = require_config(cli)?;
            let cfg: SimulateConfig = load_config(path, cli.seed)?;
            cmd_simulate(&cfg, &base_dir(path), &out)?;
        }
        Command::Fields => {
            let path = require_config(cli)?;
            let cfg: FieldsConfig = load_config(path, cli.seed)?;
            cmd_fields(&cfg, &base_dir(path), &out)?;
        }
        Command::W2 { a, b } => {
            let (a, b) = match (a, b, &cli.config) {
                (Some(a), Some(b), _) => (a.clone(), b.clone()),
                (None, None, Some(path)) => {
                    let cfg: W2Config = load_config(path, None)?;
                    let base = base_dir(path);
                    (io::resolve(&base, &cfg.a), io::resolve(&base, &cfg.b))
                }
                _ => {
                    return Err(Error::InvalidConfig(
                        "give two ensemble files or --config".into(),
                    ))
                }
            };
            let summary = cmd_w2(&a, &b, cli.out.as_deref())?;
            println!("{summary}");
        }
        Command::Uniqueness => {
            let path = require_config(cli)?;
            let cfg: UniquenessConfig = load_config(path, cli.seed)?;
            cmd_uniqueness(&cfg, &base_dir(path), &out)?;
        }
        Command::Verify { suite } => {
            let cfg: VerifyConfig = match &cli.config {
                Some(path) => load_config(path, cli.seed)?,
                None => VerifyConfig {
                    suite: None,
                    seed: cli.seed.unwrap_or(0),
                    samples: None,
                },
            };
            let suite = match (suite, cfg.suite) {
                (Some(name), _) => name.parse()?,
                (None, Some(s)) => s,
                (None, None) => return Err(Error::InvalidConfig("no suite given".into())),
            };
            let (report, pass) = cmd_verify(suite, &cfg)?;
            if let Some(dir) = &cli.out {
                let name = serde_json::to_value(suite)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_owned))
                    .unwrap_or_default();
                io::write_json(&dir.join(format!("verify_{name}.json")), &report)?;
            }
            println!("{report}");
            if !pass {
                eprintln!("verification failed");
            }
        }
    }
    Ok(())
}

/// Parses arguments, runs the command, and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if cli.threads > 0 {
        // A second global init in the same process is harmless to ignore.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match dispatch(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
