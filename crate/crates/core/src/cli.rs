//! `fwkit` command-line front end: JSON config in, CSV/JSON files and a
//! `manifest.json` out.
//!
//! Exit codes: 0 success, 1 I/O error, 2 configuration error, 3 numerical
//! failure (blow-up or non-convergence).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::circle::{circle_flow, curvature_decay_check, limit_cycle_period, torus_fixed_points};
use crate::error::{Error, Result};
use crate::fields::{build_field, sample_domain, DriftField, FieldSpec, Fourier, DEFAULT_HALF_WIDTH};
use crate::hje::{hje_evolve, stationary_rate_1d, track_minimum, Axis, GridFn, Scheme};
use crate::mechanics::{classify_equilibria, integrate_hamiltonian, phase_contour, PhasePoint};
use crate::mpp::{mpp_minimize, mpp_shoot_1d, MppResult};
use crate::neq::{entropy_production, reversal_residual, time_reversed_drift, ChainSettings, PiSource};
use crate::oracle::{ou_params, OuState};
use crate::ratefn::{cgf, legendre, rate_properties, sample_mean_rate, theta_grid, Sampling, Source};
use crate::simulate::{euler_maruyama, rate_sweep, EventRegion, EventRun};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "fwkit", version, about = "Small-noise large-deviation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration (a previous manifest.json is accepted too).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "fwkit-out")]
    out: PathBuf,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
enum Command {
    /// One Euler-Maruyama path.
    Simulate,
    /// Rare-event probabilities over a noise sweep.
    RateMc,
    /// Integrate Hamilton's equations.
    Hamilton,
    /// Energy level sets and equilibria of the 1-D Hamiltonian system.
    PhasePortrait,
    /// Most probable path between two points.
    Mpp,
    /// Evolve the Hamilton-Jacobi equation on a grid.
    Hje,
    /// Stationary rate function of a 1-D field.
    Stationary,
    /// Gaussian closed form for linear drift.
    Oracle,
    /// Legendre transform of a cumulant generating function.
    Legendre,
    /// Empirical rate function of sample means.
    Lln,
    /// Minimum/curvature flow on the circle.
    Circle,
    /// Fixed points of the torus Hamiltonian.
    Torus,
    /// Entropy production of the stationary state.
    Entropy,
    /// Time-reversed drift.
    Reverse,
    /// Lorentz-form residual along a Hamiltonian trajectory.
    Lorentz,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::RateMc => "rate-mc",
            Command::Hamilton => "hamilton",
            Command::PhasePortrait => "phase-portrait",
            Command::Mpp => "mpp",
            Command::Hje => "hje",
            Command::Stationary => "stationary",
            Command::Oracle => "oracle",
            Command::Legendre => "legendre",
            Command::Lln => "lln",
            Command::Circle => "circle",
            Command::Torus => "torus",
            Command::Entropy => "entropy",
            Command::Reverse => "reverse",
            Command::Lorentz => "lorentz",
        }
    }

    fn needs_field(self) -> bool {
        !matches!(
            self,
            Command::Oracle | Command::Legendre | Command::Lln | Command::Torus
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimBlock {
    #[serde(default)]
    pub eps: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_end: f64,
    pub x0: Vec<f64>,
    #[serde(default = "default_runs")]
    pub runs: u64,
    #[serde(default)]
    pub eps_list: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub event: Option<EventRegion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_action: Option<f64>,
}

fn default_dt() -> f64 {
    1e-3
}

fn default_runs() -> u64 {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonBlock {
    pub q0: Vec<f64>,
    pub p0: Vec<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseBlock {
    pub energies: Vec<f64>,
    pub q_min: f64,
    pub q_max: f64,
    #[serde(default = "default_points")]
    pub n: usize,
}

fn default_points() -> usize {
    401
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MppChoice {
    Shooting,
    Minimization,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MppBlock {
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub t_end: f64,
    pub method: MppChoice,
    #[serde(default = "default_knots")]
    pub knots: usize,
}

fn default_knots() -> usize {
    64
}

/// Initial data for `hje`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum U0Spec {
    /// `sum_d (x_d - mu_d)^2 / (2 sigma2)`.
    Quadratic { mu: Vec<f64>, sigma2: f64 },
    Zero,
    /// The stationary rate function of a 1-D field.
    Stationary,
    /// Explicit row-major values.
    Table { values: Vec<f64> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjeBlock {
    pub t_end: f64,
    #[serde(default)]
    pub eps_viscous: f64,
    #[serde(default = "default_snapshots")]
    pub snapshots: usize,
    pub u0: U0Spec,
    #[serde(default)]
    pub scheme: Scheme,
}

fn default_snapshots() -> usize {
    11
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBlock {
    pub b_coef: f64,
    #[serde(default)]
    pub mu: f64,
    /// `None` means the flat initial condition.
    #[serde(default)]
    pub sigma2: Option<f64>,
    #[serde(default)]
    pub eps: f64,
    pub times: Vec<f64>,
    /// Points where the rate is evaluated.
    #[serde(default)]
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegendreBlock {
    pub source: Source,
    #[serde(default = "default_theta_max")]
    pub theta_max: f64,
    #[serde(default = "default_points")]
    pub theta_n: usize,
    pub x: Axis,
}

fn default_theta_max() -> f64 {
    4.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlnBlock {
    pub source: Source,
    pub n_list: Vec<usize>,
    pub x: Axis,
    #[serde(default = "default_batches")]
    pub batches: usize,
    #[serde(default)]
    pub sampling: Sampling,
}

fn default_batches() -> usize {
    10_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CircleBlock {
    pub x0: f64,
    pub y0: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub t_end: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TorusBlock {
    pub b0: f64,
    /// Fourier coefficients of `U`: `cos(2 pi k theta)` terms.
    #[serde(default)]
    pub u_cos: Vec<f64>,
    #[serde(default)]
    pub u_sin: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyBlock {
    pub eps: f64,
    pub source: PiSource,
    pub n: usize,
    #[serde(default)]
    pub chain: ChainSettings,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReverseBlock {
    pub eps: f64,
    #[serde(default = "default_check_points")]
    pub points: usize,
}

fn default_check_points() -> usize {
    100
}

/// Fully resolved run configuration, recorded verbatim in the manifest.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<FieldSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<Axis>>,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sim: Option<SimBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hamilton: Option<HamiltonBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mpp: Option<MppBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hje: Option<HjeBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub legendre: Option<LegendreBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lln: Option<LlnBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub circle: Option<CircleBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub torus: Option<TorusBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy: Option<EntropyBlock>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reverse: Option<ReverseBlock>,
}

fn block<T: DeserializeOwned>(obj: &serde_json::Map<String, Value>, key: &str) -> Result<Option<T>> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Error::config(key, e.to_string())),
    }
}

const KEYS: [&str; 15] = [
    "field", "grid", "seed", "sim", "hamilton", "phase", "mpp", "hje", "oracle", "legendre", "lln",
    "circle", "torus", "entropy", "reverse",
];

impl RunConfig {
    /// Parse a config document. A manifest (with a nested `config` object) is unwrapped.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        let Value::Object(mut obj) = value else {
            return Err(Error::config("config", "top level must be an object"));
        };
        if obj.contains_key("version") && obj.contains_key("command") {
            match obj.remove("config") {
                Some(Value::Object(inner)) => obj = inner,
                _ => return Err(Error::config("config", "manifest without a config object")),
            }
        }
        if let Some(k) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::config(k.clone(), "unknown key"));
        }
        Ok(RunConfig {
            field: block(&obj, "field")?,
            grid: block(&obj, "grid")?,
            seed: block(&obj, "seed")?.unwrap_or(0),
            sim: block(&obj, "sim")?,
            hamilton: block(&obj, "hamilton")?,
            phase: block(&obj, "phase")?,
            mpp: block(&obj, "mpp")?,
            hje: block(&obj, "hje")?,
            oracle: block(&obj, "oracle")?,
            legendre: block(&obj, "legendre")?,
            lln: block(&obj, "lln")?,
            circle: block(&obj, "circle")?,
            torus: block(&obj, "torus")?,
            entropy: block(&obj, "entropy")?,
            reverse: block(&obj, "reverse")?,
        })
    }
}

fn need<'a, T>(v: &'a Option<T>, key: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| Error::config(key, "missing"))
}

/// Attach the config block to precondition failures so messages name a path.
fn at<T>(key: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Precondition(m) => Error::config(key, m),
        other => other,
    })
}

/// Shortest round-trip decimal form.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

struct Csv {
    text: String,
}

impl Csv {
    fn new(header: &[String]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Csv { text }
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, cells: I) {
        let cells: Vec<String> = cells.into_iter().collect();
        let _ = writeln!(self.text, "{}", cells.join(","));
    }
}

fn names(prefix: &str, n: usize) -> Vec<String> {
    if n == 1 {
        vec![prefix.to_string()]
    } else {
        (1..=n).map(|i| format!("{prefix}_{i}")).collect()
    }
}

fn header(parts: &[&[String]]) -> Vec<String> {
    parts.iter().flat_map(|p| p.iter().cloned()).collect()
}

fn s(x: &str) -> Vec<String> {
    vec![x.to_string()]
}

/// Files produced by a command, written only after it succeeds.
struct Outputs {
    files: Vec<(String, String)>,
    details: Value,
    /// Set when outputs are written but the run must still report failure.
    failure: Option<Error>,
}

impl Outputs {
    fn new() -> Self {
        Outputs {
            files: Vec::new(),
            details: Value::Null,
            failure: None,
        }
    }

    fn csv(&mut self, name: &str, csv: Csv) {
        self.files.push((name.to_string(), csv.text));
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::numerical(e.to_string()))?;
        text.push('\n');
        self.files.push((name.to_string(), text));
        Ok(())
    }
}

fn write_outputs(dir: &Path, command: Command, cfg: &RunConfig, out: &Outputs) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (name, text) in &out.files {
        fs::write(dir.join(name), text)?;
    }
    let manifest = json!({
        "command": command.name(),
        "version": VERSION,
        "config": cfg,
        "outputs": out.files.iter().map(|(n, _)| n.clone()).collect::<Vec<_>>(),
        "details": out.details,
    });
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::numerical(e.to_string()))?;
    text.push('\n');
    fs::write(dir.join("manifest.json"), text)?;
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } | Error::Precondition(_) => 2,
        Error::BlowUp { .. } | Error::Numerical(_) => 3,
        Error::Io(_) => 1,
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let prefix = match e {
                Error::Config { .. } => "config",
                Error::Io(_) => "io",
                _ => "error",
            };
            eprintln!("{prefix}: {e}");
            exit_code(&e)
        }
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("FWKIT_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::config("FWKIT_THREADS", "must be a positive integer"))?;
        builder = builder.num_threads(n);
    }
    builder.build().map_err(|e| Error::numerical(e.to_string()))
}

fn execute(cli: &Cli) -> Result<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config", "missing"))?;
    let text = fs::read_to_string(path)?;
    let mut cfg = RunConfig::from_json(&text)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let field = if cli.command.needs_field() {
        Some(build_field(need(&cfg.field, "field")?)?)
    } else {
        None
    };
    let pool = thread_pool()?;
    let mut out = pool.install(|| dispatch(cli.command, &cfg, field.as_ref()))?;
    write_outputs(&cli.out, cli.command, &cfg, &out)?;
    if cli.command == Command::Oracle {
        if let Some((_, text)) = out.files.first() {
            print!("{text}");
        }
    }
    match out.failure.take() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn dispatch(command: Command, cfg: &RunConfig, field: Option<&DriftField>) -> Result<Outputs> {
    let f = || field.expect("field built for this command");
    match command {
        Command::Simulate => cmd_simulate(cfg, f()),
        Command::RateMc => cmd_rate_mc(cfg, f()),
        Command::Hamilton => cmd_hamilton(cfg, f()),
        Command::PhasePortrait => cmd_phase(cfg, f()),
        Command::Mpp => cmd_mpp(cfg, f()),
        Command::Hje => cmd_hje(cfg, f()),
        Command::Stationary => cmd_stationary(cfg, f()),
        Command::Oracle => cmd_oracle(cfg),
        Command::Legendre => cmd_legendre(cfg),
        Command::Lln => cmd_lln(cfg),
        Command::Circle => cmd_circle(cfg, f()),
        Command::Torus => cmd_torus(cfg),
        Command::Entropy => cmd_entropy(cfg, f()),
        Command::Reverse => cmd_reverse(cfg, f()),
        Command::Lorentz => cmd_lorentz(cfg, f()),
    }
}

fn cmd_simulate(cfg: &RunConfig, field: &DriftField) -> Result<Outputs> {
    let sim = need(&cfg.sim, "sim")?;
    let path = at("sim", euler_maruyama(field, &sim.x0, sim.eps, sim.dt, sim.t_end, cfg.seed))?;
    let mut csv = Csv::new(&header(&[&s("t"), &names("x", path.dim())]));
    for (t, x) in path.times.iter().zip(&path.states) {
        csv.row(std::iter::once(num(*t)).chain(x.iter().map(|v| num(*v))));
    }
    let mut out = Outputs::new();
    out.csv("path.csv", csv);
    Ok(out)
}

fn cmd_rate_mc(cfg: &RunConfig, field: &DriftField) -> Result<Outputs> {
    let sim = need(&cfg.sim, "sim")?;
    let event = need(&sim.event, "sim.event")?;
    let job = EventRun {
        field,
        x0: &sim.x0,
        t_end: sim.t_end,
        dt: sim.dt,
        event,
        runs: sim.runs,
        seed: cfg.seed,
    };
    let report = at("sim", rate_sweep(&job, &sim.eps_list, sim.reference_action))?;
    let mut csv = Csv::new(&header(&[&[
        "eps", "n", "hits", "p_hat", "std_err", "rate", "underflow",
    ]
    .map(String::from)]));
    for r in &report.rows {
        csv.row([
            num(r.eps),
            r.n.to_string(),
            r.hits.to_string(),
            num(r.p_hat),
            num(r.std_err),
            opt(r.rate),
            r.underflow.to_string(),
        ]);
    }
    let mut out = Outputs::new();
    out.csv("rates.csv", csv);
    out.json("rates.json", &report)?;
    Ok(out)
}

fn trajectory_csv(times: &[f64], q: &[Vec<f64>], p: &[Vec<f64>], h: &[f64], extra: Option<(&str, &[f64])>) -> Csv {
    let n = q[0].len();
    let mut cols = header(&[&s("t"), &names("q", n), &names("p", n), &s("H")]);
    if let Some((name, _)) = extra {
        cols.push(name.to_string());
    }
    let mut csv = Csv::new(&cols);
    for k in 0..times.len() {
        let mut row = vec![num(times[k])];
        row.extend(q[k].iter().map(|v| num(*v)));
        row.extend(p[k].iter().map(|v| num(*v)));
        row.push(num(h[k]));
        if let Some((_, vals)) = extra {
            row.push(num(vals[k]));
        }
        csv.row(row);
    }
    csv
}

fn cmd_hamilton(cfg: &RunConfig, field: &DriftField) -> Result<Outputs> {
    let hb = need(&cfg.hamilton, "hamilton")?;
    let start = PhasePoint::new(hb.q0.clone(), hb.p0.clone());
    let tr = at("hamilton", integrate_hamiltonian(field, &start, hb.dt, hb.t_end))?;
    let mut out = Outputs::new();
    out.csv(
        "trajectory.csv",
        trajectory_csv(&tr.times, &tr.q, &tr.p, &tr.h, Some(("u", &tr.u))),
    );
    out.json(
        "summary.json",
        &json!({
            "max_energy_drift": tr.max_energy_drift,
            "energy_warning": tr.energy_warning,
            "final_action": tr.u.last(),
        }),
    )?;
    Ok(out)
}

fn cmd_phase(cfg: &RunConfig, field: &DriftField) -> Result<Outputs> {
    let pb = need(&cfg.phase, "phase")?;
    if pb.n < 2 || !(pb.q_max > pb.q_min) {
        return Err(Error::config("phase", "need n >= 2 and q_min < q_max"));
    }
    let axis = Axis::new(pb.q_min, pb.q_max, pb.n);
    let grid = axis.coords();
    let mut csv = Csv::new(&["q", "p_plus", "p_minus", "E"].map(String::from));
    for &e in &pb.energies {
        for c in at("phase", phase_contour(field, e, &grid))? {
            csv.row([num(c.q), opt(c.p_plus), opt(c.p_minus), num(e)]);
        }
    }
    let scan = at("phase", classify_equilibria(field, pb.q_min, pb.q_max))?;
    let mut out = Outputs::new();
    out.csv("contour.csv", csv);
    out.json("equilibria.json", &scan)?;
    Ok(out)
}

fn mpp_summary(r: &MppResult) -> Value {
    json!({
        "method": r.method,
        "action": r.action,
        "energy": r.energy,
        "max_energy_deviation": r.max_energy_deviation,
        "converged": r.converged,
        "grad_norm": r.grad_norm,
        "iterations": r.iterations,
    })
}

fn cmd_mpp(cfg: &RunConfig, field: &DriftField) -> Result<Outputs> {
    let mb = need(&cfg.mpp, "mpp")?;
    let result = match mb.method {
        MppChoice::Shooting => {
            if mb.q1.len() != 1 || mb.q2.len() != 1 {
                return Err(Error::config("mpp.method", "shooting needs 1-D endpoints"));
            }
            at("mpp", mpp_shoot_1d(field, mb.q1[0], mb.q2[0], mb.t_end))?
        }
        MppChoice::Minimization => at("mpp", mpp_minimize(field, &mb.q1, &mb.q2, mb.t_end, mb.knots))?,
    };
    let path = &result.path;
    let n = path.dim();
    let p = path.momentum.clone().unwrap_or_else(|| vec![vec![f64::NAN; n]; path.len()]);
    let h = path.energy.clone().unwrap_or_else(|| vec![f64::NAN; path.len()]);
    let mut out = Outputs::new();
    out.csv("path.csv", trajectory_csv(&path.times, &path.states, &p, &h, None));
    out.json("summary.json", &mpp_summary(&result))?;
    if !result.converged {
        out.failure = Some(Error::numerical(format!(
            "mpp: minimization did not converge after {} iterations (grad {:e})",
            result.iterations, result.grad_norm
        )));
    }
    Ok(out)
}

fn grid_axes(cfg: &RunConfig) -> Result<Vec<Axis>> {
    let axes = need(&cfg.grid, "grid")?.clone();
    GridFn::new(axes.clone(), vec![0.0; axes.iter().map(|a| a.n).product()])
        .map_err(|e| match e {
            Error::Config { message, .. } => Error::config("grid", message),
            other => other,
        })?;
    Ok(axes)
}

fn grid_csv(g: &GridFn) -> Csv {
    let coords = if g.dim() == 1 { s("x") } else { vec!["x".into(), "y".into()] };
    let mut csv = Csv::new(&header(&[&coords, &s("u")]));
    for k in 0..g.len() {
        let mut row: Vec<String> = g.point(k).into_iter().map(num).collect();
        row.push(if g.is_defined(k) { num(g.values[k]) } else { String::new() });
        csv.row(row);
    }
    csv
}

fn cmd_hje(cfg: &RunConfig, field: &DriftField) -> Result<Outputs> {
    let hb = need(&cfg.hje, "hje")?;
    let axes = grid_axes(cfg)?;
    let u0 = match &hb.u0 {
        U0Spec::Zero => GridFn::from_fn(axes, |_| 0.0)?,
        U0Spec::Quadratic { mu, sigma2 } => {
            if mu.len() != axes.len() || !(*sigma2 > 0.0) {
                return Err(Error::config("hje.u0", "need one mu per axis and sigma2 > 0"));
            }
            GridFn::from_fn(axes, |x| {
                x.iter().zip(mu).map(|(a, m)| (a - m).powi(2)).sum::<f64>() / (2.0 * sigma2)
            })?
        }
        U0Spec::Stationary => {
            if axes.len() != 1 {
                return Err(Error::config("hje.u0", "stationary data needs a 1-D grid"));
            }
            at("hje.u0", stationary_rate_1d(field, axes[0], 0.0))?
        }
        U0Spec::Table { values } => GridFn::new(axes, values.clone()).map_err(|e| match e {
            Error::Config { message, .. } => Error::config("hje.u0.values", message),
            other => other,
        })?,
    };
    let run = at(
        "hje",
        hje_evolve(field, &u0, hb.t_end, hb.eps_viscous, hb.snapshots, hb.scheme),
    )?;
    let mut out = Outputs::new();
    for (k, snap) in run.snapshots.iter().enumerate() {
        out.csv(&format!("snapshot_{k:03}.csv"), grid_csv(snap));
    }
    let trace = track_minimum(&run.times, &run.snapshots)?;
    let dim = u0.dim();
    let mut cols = header(&[&s("t"), &names("x_star", dim), &s("u_star")]);
    if dim == 1 {
        cols.push("curvature".into());
    }
    let mut csv = Csv::new(&cols);
    for i in 0..trace.times.len() {
        let mut row = vec![num(trace.times[i])];
        row.extend(trace.x_star[i].iter().map(|v| num(*v)));
        row.push(num(trace.u_star[i]));
        if let Some(c) = &trace.curvature {
            row.push(num(c[i]));
        }
        csv.row(row);
    }
    out.csv("modal.csv", csv);
    out.details = json!({
        "snapshot_times": run.times,
        "steps": run.steps,
        "dt_min": run.dt_min,
        "dt_max": run.dt_max,
        "alpha_history": run.alpha_history,
        "modal_trace_truncated": trace.truncated,
    });
    Ok(out)
}

fn cmd_stationary(cfg: &RunConfig, field: &DriftField) -> Result<Outputs> {
    let axes = grid_axes(cfg)?;
    if axes.len() != 1 {
        return Err(Error::config("grid", "stationary needs a 1-D grid"));
    }
    let u = at("field", stationary_rate_1d(field, axes[0], 0.0))?;
    let mut out = Outputs::new();
    out.csv("stationary.csv", grid_csv(&u));
    Ok(out)
}

fn cmd_oracle(cfg: &RunConfig) -> Result<Outputs> {
    let ob = need(&cfg.oracle, "oracle")?;
    let state = match ob.sigma2 {
        Some(s2) => OuState::new(ob.b_coef, ob.mu, s2, ob.eps)?,
        None => OuState::new(ob.b_coef, ob.mu, f64::INFINITY, ob.eps)?,
    };
    let rows = ob
        .times
        .iter()
        .map(|&t| {
            let p = at("oracle.times", ou_params(&state, t))?;
            let rates: Vec<Value> = ob
                .x
                .iter()
                .map(|&x| json!({"x": x, "u": (x - p.mu).powi(2) / (2.0 * p.sigma2)}))
                .collect();
            Ok(json!({
                "t": t,
                "mu": p.mu,
                "sigma2": if p.sigma2.is_finite() { json!(p.sigma2) } else { json!("inf") },
                "a": p.a,
                "rates": rates,
            }))
        })
        .collect::<Result<Vec<Value>>>()?;
    let mut out = Outputs::new();
    out.json("oracle.json", &rows)?;
    Ok(out)
}

fn cmd_legendre(cfg: &RunConfig) -> Result<Outputs> {
    let lb = need(&cfg.legendre, "legendre")?;
    let table = at("legendre.source", cgf(&lb.source, &theta_grid(lb.theta_max, lb.theta_n)?))?;
    if lb.x.n < 2 || !(lb.x.max > lb.x.min) {
        return Err(Error::config("legendre.x", "need n >= 2 and min < max"));
    }
    let mut csv = Csv::new(&["x", "u_star", "unreliable"].map(String::from));
    for x in lb.x.coords() {
        let v = legendre(&table, x);
        csv.row([num(x), num(v.value), v.unreliable.to_string()]);
    }
    let mut out = Outputs::new();
    out.csv("legendre.csv", csv);
    match rate_properties(&table) {
        Ok(p) => out.json("properties.json", &p)?,
        Err(e) => out.json("properties.json", &json!({"error": e.to_string()}))?,
    }
    Ok(out)
}

fn cmd_lln(cfg: &RunConfig) -> Result<Outputs> {
    let lb = need(&cfg.lln, "lln")?;
    if lb.x.n < 2 || !(lb.x.max > lb.x.min) {
        return Err(Error::config("lln.x", "need n >= 2 and min < max"));
    }
    let xs = lb.x.coords();
    let emp = at(
        "lln",
        sample_mean_rate(&lb.source, &lb.n_list, &xs, lb.batches, cfg.seed, lb.sampling),
    )?;
    let analytic = match lb.source {
        Source::Gaussian { .. } | Source::Bernoulli { .. } => cgf(&lb.source, &theta_grid(40.0, 8001)?).ok(),
        _ => None,
    };
    let mut cols = vec!["x".to_string(), "u_star".to_string()];
    cols.extend(lb.n_list.iter().map(|n| format!("n_{n}")));
    let mut csv = Csv::new(&cols);
    for (i, &x) in xs.iter().enumerate() {
        let mut row = vec![num(x), opt(analytic.as_ref().map(|t| legendre(t, x).value))];
        row.extend(emp.rows.iter().map(|r| opt(r.rate[i])));
        csv.row(row);
    }
    let mut out = Outputs::new();
    out.csv("lln.csv", csv);
    out.details = json!({
        "bin_width": emp.bin_width,
        "empty_bins": emp.rows.iter().map(|r| json!({"n": r.n, "empty": r.empty_bins})).collect::<Vec<_>>(),
    });
    Ok(out)
}

fn cmd_circle(cfg: &RunConfig, field: &DriftField) -> Result<Outputs> {
    let cb = need(&cfg.circle, "circle")?;
    let trace = at("circle", circle_flow(field, cb.x0, cb.y0, cb.dt, cb.t_end))?;
    let decay = curvature_decay_check(&trace).ok();
    let mut csv = Csv::new(&["t", "x", "y", "v"].map(String::from));
    for (i, st) in trace.states.iter().enumerate() {
        csv.row([
            num(st.t),
            num(st.x),
            num(st.y),
            opt(decay.as_ref().map(|d| d.v[i])),
        ]);
    }
    let period = limit_cycle_period(field)?;
    let mut out = Outputs::new();
    out.csv("circle.csv", csv);
    out.json(
        "summary.json",
        &json!({
            "period": period,
            "final_y": trace.states.last().map(|s| s.y),
            "v_non_increasing": decay.as_ref().map(|d| d.non_increasing),
            "v_max_increase": decay.as_ref().map(|d| d.max_increase),
        }),
    )?;
    Ok(out)
}

fn cmd_torus(cfg: &RunConfig) -> Result<Outputs> {
    let tb = need(&cfg.torus, "torus")?;
    let u = Fourier::new(0.0, tb.u_cos.clone(), tb.u_sin.clone());
    let pts = torus_fixed_points(tb.b0, &u)?;
    let mut csv = Csv::new(&["theta", "omega", "type"].map(String::from));
    for p in &pts {
        let kind = match p.kind {
            crate::circle::FixedPointType::Type1 => "1",
            crate::circle::FixedPointType::Type2 => "2",
        };
        csv.row([num(p.theta), num(p.omega), kind.to_string()]);
    }
    let mut out = Outputs::new();
    out.csv("torus.csv", csv);
    Ok(out)
}

fn cmd_entropy(cfg: &RunConfig, field: &DriftField) -> Result<Outputs> {
    let eb = need(&cfg.entropy, "entropy")?;
    let est = at(
        "entropy",
        entropy_production(field, eb.eps, eb.source, eb.n, cfg.seed, eb.chain),
    )?;
    let mut out = Outputs::new();
    out.json("entropy.json", &est)?;
    Ok(out)
}

fn cmd_reverse(cfg: &RunConfig, field: &DriftField) -> Result<Outputs> {
    let rb = need(&cfg.reverse, "reverse")?;
    let rev = at("field", time_reversed_drift(field, rb.eps))?;
    let twice = time_reversed_drift(&rev, rb.eps)?;
    let pts = sample_domain(field, DEFAULT_HALF_WIDTH, rb.points);
    let residual = reversal_residual(field, &rev, rb.eps, &pts)?;
    let exact = pts.iter().all(|x| twice.eval(x) == field.eval(x));
    let mut out = Outputs::new();
    out.json(
        "reverse.json",
        &json!({
            "reversed": rev.spec(),
            "identity_residual": residual,
            "double_reversal_exact": exact,
            "points": pts.len(),
        }),
    )?;
    Ok(out)
}

fn cmd_lorentz(cfg: &RunConfig, field: &DriftField) -> Result<Outputs> {
    let hb = need(&cfg.hamilton, "hamilton")?;
    let start = PhasePoint::new(hb.q0.clone(), hb.p0.clone());
    let tr = at("hamilton", integrate_hamiltonian(field, &start, hb.dt, hb.t_end))?;
    let residual = at("hamilton", crate::neq::lorentz_residual(field, &tr))?;
    let mut out = Outputs::new();
    out.json(
        "lorentz.json",
        &json!({
            "residual": residual,
            "points": tr.q.len(),
            "dt": tr.dt(),
        }),
    )?;
    Ok(out)
}
