//! Batch front end: TOML run configs in, CSV tables out.
//!
//! A config names a model and its parameters, plus task-specific tables:
//!
//! ```toml
//! orders = 2
//! channel = 0
//!
//! [model]
//! id = "two_spins_inverse"
//! gamma = 2.0
//!
//! [[sweep]]
//! param = "h"
//! min = 0.0
//! max = 2.0
//! steps = 60
//! ```
//!
//! Every table starts with `#` metadata lines followed by a CSV header.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::Deserialize;

use crate::cumulants::{cumulants_per_fixed_point, fano_paper, fano_standard};
use crate::gaussian::{gaussian_cumulants, riccati_theta, GaussianModel};
use crate::ldf::{theta_spectral_with, SpectralOptions};
use crate::liouville::{build_liouvillian, steady_states, LindbladModel};
use crate::models::{self, KerrParams, SqueezedPair};
use crate::trajectories::{derive_seeds, empirical_cumulants, run_batch, InitialState};
use crate::{c64, Error, Result};

/// Environment variable holding the default worker count.
pub const JOBS_ENV: &str = "FCS_JOBS";

#[derive(Debug, Parser)]
#[command(name = "fcs", version, about = "Full counting statistics of open quantum systems")]
pub struct Cli {
    #[command(subcommand)]
    pub task: Task,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    /// Output CSV path; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<std::path::PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the machine's parallelism.
    #[arg(long, global = true, env = JOBS_ENV)]
    pub jobs: Option<usize>,
    /// Overrides the highest cumulant order.
    #[arg(long, global = true)]
    pub order: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Task {
    /// Scaled cumulants at the configured parameters.
    Cumulants,
    /// Large-deviation function on an s grid.
    Theta,
    /// Monte Carlo estimates of the first two cumulants.
    Traj,
    /// Mean-field Kerr branches on an intensity sweep.
    Kerr,
    /// Cumulants over a grid of model parameters.
    Sweep,
}

impl Task {
    fn name(self) -> &'static str {
        match self {
            Task::Cumulants => "cumulants",
            Task::Theta => "theta",
            Task::Traj => "traj",
            Task::Kerr => "kerr",
            Task::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelId {
    TwoSpinsSame,
    TwoSpinsInverse,
    TwoSpinsGlobal,
    DecayingQubit,
    SqueezedPair,
    SqueezedPairGaussian,
    Kerr,
}

impl ModelId {
    pub fn name(self) -> &'static str {
        match self {
            ModelId::TwoSpinsSame => "two_spins_same",
            ModelId::TwoSpinsInverse => "two_spins_inverse",
            ModelId::TwoSpinsGlobal => "two_spins_global",
            ModelId::DecayingQubit => "decaying_qubit",
            ModelId::SqueezedPair => "squeezed_pair",
            ModelId::SqueezedPairGaussian => "squeezed_pair_gaussian",
            ModelId::Kerr => "kerr",
        }
    }

    // Parameter names with defaults; `None` marks a required parameter.
    fn schema(self) -> &'static [(&'static str, Option<f64>)] {
        match self {
            ModelId::TwoSpinsSame | ModelId::TwoSpinsInverse => &[("h", Some(0.0)), ("gamma", None)],
            ModelId::TwoSpinsGlobal | ModelId::DecayingQubit => &[("gamma", None)],
            ModelId::SqueezedPair => &[
                ("omega", None),
                ("g", None),
                ("gamma1", None),
                ("gamma2", None),
                ("cutoff", Some(0.0)),
            ],
            ModelId::SqueezedPairGaussian => &[("omega", None), ("g", None), ("gamma1", None), ("gamma2", None)],
            ModelId::Kerr => &[("delta", None), ("gamma", None), ("g", None), ("intensity", Some(0.0))],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct ModelSpec {
    pub id: ModelId,
    #[serde(flatten)]
    pub params: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub param: String,
    pub min: f64,
    pub max: f64,
    pub steps: usize,
}

impl SweepAxis {
    pub fn values(&self) -> Vec<f64> {
        let last = (self.steps - 1) as f64;
        (0..self.steps).map(|i| self.min + (self.max - self.min) * i as f64 / last).collect()
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaGrid {
    pub s_min: f64,
    pub s_max: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajSettings {
    pub trajectories: usize,
    pub horizon: f64,
    /// Real amplitudes of the initial pure state; the steady state when absent.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KerrSweep {
    pub i_min: f64,
    pub i_max: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Largest Liouville dimension any solve may build.
    pub dimension_cap: usize,
    /// Top-level Fock population targeted by the adaptive cutoff.
    pub population: f64,
    /// Largest imaginary part tolerated on a dominant eigenvalue.
    pub imag: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { dimension_cap: 4096, population: 1e-8, imag: 1e-8 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSpec,
    #[serde(default)]
    pub channel: usize,
    #[serde(default = "default_orders")]
    pub orders: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default)]
    pub theta: Option<ThetaGrid>,
    #[serde(default)]
    pub traj: Option<TrajSettings>,
    #[serde(default)]
    pub kerr: Option<KerrSweep>,
    #[serde(default)]
    pub tolerances: Tolerances,
}

fn default_orders() -> usize {
    2
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        let schema = self.model.id.schema();
        for key in self.model.params.keys() {
            if !schema.iter().any(|(name, _)| name == key) {
                return Err(config_err(format!("model {} has no parameter '{key}'", self.model.id.name())));
            }
        }
        for axis in &self.sweep {
            if !schema.iter().any(|(name, _)| *name == axis.param) {
                return Err(config_err(format!("sweep parameter '{}' not in model {}", axis.param, self.model.id.name())));
            }
            if axis.steps < 2 {
                return Err(config_err(format!("sweep over '{}' needs at least 2 steps", axis.param)));
            }
        }
        for (name, default) in schema {
            let swept = self.sweep.iter().any(|a| a.param == *name);
            if default.is_none() && !swept && !self.model.params.contains_key(*name) {
                return Err(config_err(format!("model {} requires '{name}'", self.model.id.name())));
            }
        }
        if self.orders == 0 {
            return Err(config_err("orders must be at least 1"));
        }
        Ok(())
    }

    // Base parameters with defaults filled in.
    fn base_params(&self) -> BTreeMap<String, f64> {
        let mut p: BTreeMap<String, f64> = self
            .model
            .id
            .schema()
            .iter()
            .filter_map(|(name, default)| default.map(|d| (name.to_string(), d)))
            .collect();
        p.extend(self.model.params.iter().map(|(k, v)| (k.clone(), *v)));
        p
    }
}

/// Command-line overrides applied on top of a config.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub order: Option<usize>,
}

enum Built {
    Lindblad(LindbladModel),
    Gaussian(GaussianModel),
    Kerr(KerrParams),
}

fn param(p: &BTreeMap<String, f64>, name: &str) -> Result<f64> {
    p.get(name).copied().ok_or_else(|| config_err(format!("missing parameter '{name}'")))
}

fn squeezed(p: &BTreeMap<String, f64>) -> Result<SqueezedPair> {
    Ok(SqueezedPair {
        omega: param(p, "omega")?,
        g: param(p, "g")?,
        gamma1: param(p, "gamma1")?,
        gamma2: param(p, "gamma2")?,
    })
}

fn build(id: ModelId, p: &BTreeMap<String, f64>, tol: &Tolerances) -> Result<Built> {
    let model = match id {
        ModelId::TwoSpinsSame => Built::Lindblad(models::two_spins_same(param(p, "h")?, param(p, "gamma")?)?),
        ModelId::TwoSpinsInverse => Built::Lindblad(models::two_spins_inverse(param(p, "h")?, param(p, "gamma")?)?),
        ModelId::TwoSpinsGlobal => Built::Lindblad(models::two_spins_global(param(p, "gamma")?)?),
        ModelId::DecayingQubit => Built::Lindblad(models::decaying_qubit(param(p, "gamma")?)?),
        ModelId::SqueezedPair => {
            let sp = squeezed(p)?;
            let requested = param(p, "cutoff")?;
            let cutoff = if requested > 0.0 {
                requested.round() as usize
            } else {
                models::adaptive_cutoff(sp, tol.population, tol.dimension_cap)?.0
            };
            Built::Lindblad(models::squeezed_pair(sp, cutoff)?)
        }
        ModelId::SqueezedPairGaussian => Built::Gaussian(models::squeezed_pair_gaussian(squeezed(p)?)?),
        ModelId::Kerr => Built::Kerr(KerrParams {
            delta: param(p, "delta")?,
            gamma: param(p, "gamma")?,
            g: param(p, "g")?,
            intensity: param(p, "intensity")?,
        }),
    };
    if let Built::Lindblad(m) = &model {
        if m.liouville_dim() > tol.dimension_cap {
            return Err(Error::DimensionCap { dim: m.liouville_dim(), cap: tol.dimension_cap });
        }
    }
    Ok(model)
}

/// One CSV cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Float(f64),
    Int(u64),
    Bool(bool),
}

impl Value {
    pub fn render(&self) -> String {
        match self {
            Value::Float(x) if x.is_nan() => "NaN".to_string(),
            Value::Float(x) => format!("{x:.16e}"),
            Value::Int(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
        }
    }
}

/// Result of one run: metadata, column names and rows in output order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub metadata: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Value>>,
}

impl Table {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for (k, v) in &self.metadata {
            writeln!(out, "# {k}: {v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Value::render)).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::Unstable(_) => 3,
        Error::NonConvergent { .. } | Error::NewtonNonConvergence { .. } | Error::ComplexDominantEigenvalue { .. } => 4,
        Error::DimensionCap { .. } => 5,
        _ => 1,
    }
}

fn fmt_params(p: &BTreeMap<String, f64>) -> String {
    p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ")
}

fn kappa_columns(orders: usize) -> Vec<String> {
    let mut cols: Vec<String> = (1..=orders).map(|n| format!("kappa_{n}")).collect();
    cols.extend(["fano_paper", "fano_standard", "phase_transition", "fixed_point"].map(String::from));
    cols
}

fn fano_cells(kappa: &[f64]) -> [Value; 2] {
    let pick = |f: fn(f64, f64) -> Result<f64>| match kappa {
        [k1, k2, ..] => f(*k1, *k2).unwrap_or(f64::NAN),
        _ => f64::NAN,
    };
    [Value::Float(pick(fano_paper)), Value::Float(pick(fano_standard))]
}

// Rows of the cumulant table for one parameter point (one per fixed point).
fn cumulant_rows(id: ModelId, p: &BTreeMap<String, f64>, cfg: &RunConfig, orders: usize) -> Result<Vec<Vec<Value>>> {
    let row = |kappa: &[f64], transition: bool, fixed: usize| {
        let mut r: Vec<Value> = kappa.iter().map(|k| Value::Float(*k)).collect();
        r.extend(fano_cells(kappa));
        r.push(Value::Bool(transition));
        r.push(Value::Int(fixed as u64));
        r
    };
    match build(id, p, &cfg.tolerances)? {
        Built::Lindblad(m) => {
            let fc = cumulants_per_fixed_point(&m, cfg.channel, orders)?;
            Ok(fc.results.iter().map(|r| row(&r.values, fc.first_order_transition, r.fixed_point_index)).collect())
        }
        Built::Gaussian(m) => Ok(vec![row(&gaussian_cumulants(&m, cfg.channel, orders)?, false, 0)]),
        Built::Kerr(_) => Err(config_err("the kerr model only supports the kerr task")),
    }
}

fn base_metadata(task: Task, cfg: &RunConfig, seed: u64) -> Vec<(String, String)> {
    let mut md = vec![
        ("fcs".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("task".to_string(), task.name().to_string()),
        ("model".to_string(), cfg.model.id.name().to_string()),
        ("parameters".to_string(), fmt_params(&cfg.base_params())),
        ("channel".to_string(), cfg.channel.to_string()),
        ("seed".to_string(), seed.to_string()),
    ];
    for axis in &cfg.sweep {
        md.push(("sweep".to_string(), format!("{} {}..{} steps={}", axis.param, axis.min, axis.max, axis.steps)));
    }
    md
}

/// Runs a task. Parallel sections use the current rayon pool; output order
/// never depends on scheduling.
pub fn run(task: Task, cfg: &RunConfig, opts: RunOptions) -> Result<Table> {
    let orders = opts.order.unwrap_or(cfg.orders);
    let seed = opts.seed.unwrap_or(cfg.seed);
    let metadata = base_metadata(task, cfg, seed);
    let base = cfg.base_params();
    let id = cfg.model.id;
    let (columns, rows) = match task {
        Task::Cumulants => (kappa_columns(orders), cumulant_rows(id, &base, cfg, orders)?),
        Task::Sweep => sweep(cfg, &base, orders)?,
        Task::Theta => theta(cfg, &base)?,
        Task::Traj => traj(cfg, &base, seed)?,
        Task::Kerr => kerr(cfg, &base)?,
    };
    Ok(Table { metadata, columns, rows })
}

fn sweep(cfg: &RunConfig, base: &BTreeMap<String, f64>, orders: usize) -> Result<(Vec<String>, Vec<Vec<Value>>)> {
    if cfg.sweep.is_empty() {
        return Err(config_err("sweep task needs at least one [[sweep]] axis"));
    }
    let axes: Vec<Vec<f64>> = cfg.sweep.iter().map(SweepAxis::values).collect();
    // Cartesian product, first axis outermost, so rows come out sorted.
    let mut cells: Vec<Vec<f64>> = vec![Vec::new()];
    for values in &axes {
        cells = cells
            .into_iter()
            .flat_map(|prefix| {
                values.iter().map(move |v| {
                    let mut c = prefix.clone();
                    c.push(*v);
                    c
                })
            })
            .collect();
    }
    let rows: Vec<Vec<Vec<Value>>> = cells
        .par_iter()
        .map(|coords| {
            let mut p = base.clone();
            for (axis, v) in cfg.sweep.iter().zip(coords) {
                p.insert(axis.param.clone(), *v);
            }
            let body = cumulant_rows(cfg.model.id, &p, cfg, orders)?;
            Ok(body
                .into_iter()
                .map(|r| coords.iter().map(|c| Value::Float(*c)).chain(r).collect())
                .collect())
        })
        .collect::<Result<_>>()?;
    let mut columns: Vec<String> = cfg.sweep.iter().map(|a| a.param.clone()).collect();
    columns.extend(kappa_columns(orders));
    Ok((columns, rows.into_iter().flatten().collect()))
}

fn theta(cfg: &RunConfig, base: &BTreeMap<String, f64>) -> Result<(Vec<String>, Vec<Vec<Value>>)> {
    let grid = cfg.theta.as_ref().ok_or_else(|| config_err("theta task needs a [theta] table"))?;
    if grid.steps < 2 {
        return Err(config_err("theta grid needs at least 2 steps"));
    }
    let s_values = SweepAxis { param: "s".into(), min: grid.s_min, max: grid.s_max, steps: grid.steps }.values();
    let opts = SpectralOptions { dimension_cap: cfg.tolerances.dimension_cap, imag_tol: cfg.tolerances.imag, ..SpectralOptions::default() };
    let model = build(cfg.model.id, base, &cfg.tolerances)?;
    let values: Vec<f64> = s_values
        .par_iter()
        .map(|&s| match &model {
            Built::Lindblad(m) => theta_spectral_with(m, cfg.channel, s, &opts),
            Built::Gaussian(m) => riccati_theta(m, cfg.channel, s),
            Built::Kerr(_) => Err(config_err("the kerr model only supports the kerr task")),
        })
        .collect::<Result<_>>()?;
    let rows = s_values.iter().zip(values).map(|(s, t)| vec![Value::Float(*s), Value::Float(t)]).collect();
    Ok((vec!["s".into(), "theta".into()], rows))
}

fn traj(cfg: &RunConfig, base: &BTreeMap<String, f64>, seed: u64) -> Result<(Vec<String>, Vec<Vec<Value>>)> {
    let settings = cfg.traj.as_ref().ok_or_else(|| config_err("traj task needs a [traj] table"))?;
    let Built::Lindblad(model) = build(cfg.model.id, base, &cfg.tolerances)? else {
        return Err(config_err("trajectories need a Lindblad model"));
    };
    let initial = match &settings.initial {
        Some(amps) => {
            let norm = amps.iter().map(|a| a * a).sum::<f64>().sqrt();
            if amps.len() != model.dim() || norm == 0.0 {
                return Err(config_err(format!("initial state needs {} non-zero amplitudes", model.dim())));
            }
            InitialState::Pure(amps.iter().map(|a| c64::new(a / norm, 0.0)).collect())
        }
        None => {
            let mut fixed = steady_states(&build_liouvillian(&model))?;
            if fixed.len() != 1 {
                return Err(config_err("degenerate steady state: give [traj] initial amplitudes"));
            }
            InitialState::Mixed(fixed.remove(0))
        }
    };
    let seeds = derive_seeds(seed, settings.trajectories);
    let batch = run_batch(&model, cfg.channel, &initial, settings.horizon, &seeds, cfg.model.id.name())?;
    let e = empirical_cumulants(&batch)?;
    let columns = ["trajectories", "horizon", "kappa1_hat", "se1", "kappa2_hat", "se2"].map(String::from).to_vec();
    let row = vec![
        Value::Int(settings.trajectories as u64),
        Value::Float(settings.horizon),
        Value::Float(e.kappa1_hat),
        Value::Float(e.se1),
        Value::Float(e.kappa2_hat),
        Value::Float(e.se2),
    ];
    Ok((columns, vec![row]))
}

fn kerr(cfg: &RunConfig, base: &BTreeMap<String, f64>) -> Result<(Vec<String>, Vec<Vec<Value>>)> {
    let sweep = cfg.kerr.as_ref().ok_or_else(|| config_err("kerr task needs a [kerr] table"))?;
    if sweep.steps < 2 {
        return Err(config_err("kerr sweep needs at least 2 steps"));
    }
    let Built::Kerr(params) = build(cfg.model.id, base, &cfg.tolerances)? else {
        return Err(config_err("kerr task needs the kerr model"));
    };
    let intensities = SweepAxis { param: "intensity".into(), min: sweep.i_min, max: sweep.i_max, steps: sweep.steps }.values();
    let rows = intensities
        .iter()
        .map(|&i| {
            let p = KerrParams { intensity: i, ..params };
            let roots = models::kerr_branches(p)?.roots.len();
            let k = models::kerr_kappa1(p)?;
            let lower = k.first().copied().unwrap_or(f64::NAN);
            let upper = if k.len() > 1 { k[k.len() - 1] } else { f64::NAN };
            Ok(vec![
                Value::Float(i),
                Value::Int(roots as u64),
                Value::Float(lower),
                Value::Float(upper),
                Value::Bool(k.len() > 1),
            ])
        })
        .collect::<Result<_>>()?;
    let columns = ["intensity", "roots", "kappa1_lower", "kappa1_upper", "phase_transition"].map(String::from).to_vec();
    Ok((columns, rows))
}

/// Entry point shared by the binary; returns the exit status.
pub fn main_with(cli: Cli) -> i32 {
    let result = (|| -> Result<()> {
        let path = cli.config.as_deref().ok_or_else(|| config_err("--config is required"))?;
        let cfg = RunConfig::load(path)?;
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(jobs) = cli.jobs {
            pool = pool.num_threads(jobs);
        }
        let pool = pool.build().map_err(|e| config_err(e.to_string()))?;
        let table = pool.install(|| run(cli.task, &cfg, RunOptions { seed: cli.seed, order: cli.order }))?;
        match &cli.out {
            Some(path) => table.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?)),
            None => table.write_csv(std::io::stdout().lock()),
        }
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("fcs: {e}");
            exit_code(&e)
        }
    }
}
