//! `snlp-scale`: scale tables, exit identities, conditional laws, local-time
//! transforms and Monte Carlo cross-checks from the command line.
//!
//! Every command writes one JSON document (with `"schema": 1`) to stdout or
//! `--out`. Exit status is 0 on success, 1 on numerical failure (with a
//! diagnostics document) and 2 on usage errors.

pub mod config;
pub mod verify;

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use snlp_core::classical::{classical_exit_down, classical_exit_up, ScaleTable};
use snlp_core::error::Error;
use snlp_core::generalized::{
    evaluate_refined, ConditionalCurve, ExitSpec, GeneralizedScaleResult, Generalized, Grids, Refinement,
    DEFAULT_INNER_INTERVALS, DEFAULT_OUTER_NODES,
};
use snlp_core::levy::LevyModel;
use snlp_core::potential::{BivariatePotential, NamedPotential};
use snlp_core::simulate::{
    conditional_mc, occupation_mc, run_exit_mc, samples_to_csv, ConditionalMcResult, ExitMcResult, MCConfig,
    OccupationMcResult,
};
use snlp_core::volterra;

pub use verify::{verify_report, EstimandCheck, VerifyReport};

pub const SCHEMA: u32 = 1;
pub const SEED_ENV: &str = "SNLP_SCALE_SEED";
pub const DEFAULT_PATHS: usize = 100_000;
pub const DEFAULT_DT: f64 = 1e-4;
pub const DEFAULT_SEED: u64 = 1;
pub const DEFAULT_BINS: usize = 8;

#[derive(Debug, Parser)]
#[command(
    name = "snlp-scale",
    version,
    about = "Scale functions and exit identities for spectrally negative Lévy processes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Tabulate W, W', Z, Z' (classical with --q, or renewal with a position-only --potential)
    ScaleTable,
    /// Exit identities for a potential of (supremum, position)
    Exit,
    /// Conditional Laplace transform given the supremum at exit
    Conditional,
    /// Deterministic exit identities against Monte Carlo, with z-scores
    McVerify,
    /// Laplace transform of the local-time functional of a position-only potential
    LocalTime,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::ScaleTable => "scale-table",
            Command::Exit => "exit",
            Command::Conditional => "conditional",
            Command::McVerify => "mc-verify",
            Command::LocalTime => "local-time",
        }
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct Options {
    /// Process: bm:MU,SIGMA or ejd:MU,SIGMA,RATE,MEAN
    #[arg(long, global = true, value_name = "FAM:PARAMS")]
    pub model: Option<ModelArg>,
    /// Lower barrier
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub b: Option<f64>,
    /// Starting point
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub x: Option<f64>,
    /// Upper barrier (table upper end for scale-table)
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub a: Option<f64>,
    /// Potential: const:Q | reflected:C[,BOUND] | indicator:C,R | level:C,R
    #[arg(long, global = true, value_name = "NAME:ARGS")]
    pub potential: Option<NamedPotential>,
    /// Payoff of the supremum at a down-exit: const:C | linear:C | step:C,R
    #[arg(long, global = true, value_name = "NAME:ARGS")]
    pub g: Option<Payoff>,
    /// Discount rate for classical scale functions
    #[arg(long, global = true)]
    pub q: Option<f64>,
    /// Monte Carlo paths
    #[arg(long, global = true)]
    pub paths: Option<usize>,
    /// Monte Carlo time step
    #[arg(long, global = true)]
    pub dt: Option<f64>,
    /// Monte Carlo seed (falls back to SNLP_SCALE_SEED)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Brownian-bridge barrier correction (true/false)
    #[arg(long, global = true, value_name = "BOOL")]
    pub bridge: Option<bool>,
    /// Outer Simpson nodes over the supremum
    #[arg(long = "grid-outer", global = true)]
    pub grid_outer: Option<usize>,
    /// Inner renewal intervals (table intervals for scale-table)
    #[arg(long = "grid-inner", global = true)]
    pub grid_inner: Option<usize>,
    /// Supremum bins for conditional
    #[arg(long, global = true)]
    pub bins: Option<usize>,
    /// Write the JSON report here instead of stdout
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Config file of `key = value` lines; flags override it
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Write a CSV companion (table, profile, curve or raw samples)
    #[arg(long, global = true, value_name = "PATH")]
    pub csv: Option<PathBuf>,
}

/// `bm:mu,sigma` or `ejd:mu,sigma,rate,mean`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelArg(pub LevyModel);

fn split_args(input: &str) -> Result<(&str, Vec<f64>), String> {
    let (name, args) = input.split_once(':').ok_or_else(|| format!("`{input}`: expected name:args"))?;
    let nums = args
        .split(',')
        .map(|a| a.trim().parse::<f64>().map_err(|e| format!("`{input}`: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((name, nums))
}

impl FromStr for ModelArg {
    type Err = String;

    fn from_str(input: &str) -> Result<Self, Self::Err> {
        let (name, p) = split_args(input)?;
        let model = match (name, p.as_slice()) {
            ("bm", [mu, sigma]) => LevyModel::brownian(*mu, *sigma),
            ("ejd", [mu, sigma, rate, mean]) => LevyModel::exp_jump_diffusion(*mu, *sigma, *rate, *mean),
            ("bm" | "ejd", _) => return Err(format!("`{input}`: wrong number of parameters")),
            _ => return Err(format!("`{input}`: unknown family; use bm or ejd")),
        };
        model.map(ModelArg).map_err(|e| e.to_string())
    }
}

/// Bounded payoff `g` of the supremum at a down-exit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Payoff {
    /// `c`
    Const { c: f64 },
    /// `c·z`
    Linear { c: f64 },
    /// `c·1{z > r}`
    Step { c: f64, r: f64 },
}

impl Payoff {
    pub fn eval(&self, z: f64) -> f64 {
        match *self {
            Payoff::Const { c } => c,
            Payoff::Linear { c } => c * z,
            Payoff::Step { c, r } => {
                if z > r {
                    c
                } else {
                    0.0
                }
            }
        }
    }
}

impl Payoff {
    pub fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Payoff::Step { r, .. } => vec![r],
            _ => Vec::new(),
        }
    }
}

impl FromStr for Payoff {
    type Err = String;

    fn from_str(input: &str) -> Result<Self, Self::Err> {
        let (name, p) = split_args(input)?;
        let g = match (name, p.as_slice()) {
            ("const", [c]) => Payoff::Const { c: *c },
            ("linear", [c]) => Payoff::Linear { c: *c },
            ("step", [c, r]) => Payoff::Step { c: *c, r: *r },
            ("const" | "linear" | "step", _) => return Err(format!("`{input}`: wrong number of arguments")),
            _ => return Err(format!("`{input}`: unknown payoff; use const, linear or step")),
        };
        if p.iter().all(|v| v.is_finite()) {
            Ok(g)
        } else {
            Err(format!("`{input}`: arguments must be finite"))
        }
    }
}

impl fmt::Display for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Payoff::Const { c } => write!(f, "const:{c}"),
            Payoff::Linear { c } => write!(f, "linear:{c}"),
            Payoff::Step { c, r } => write!(f, "step:{c},{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassicalExit {
    pub q: f64,
    pub up: f64,
    pub down: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTableOutput {
    pub schema: u32,
    pub command: String,
    pub model: LevyModel,
    pub q: f64,
    pub potential: Option<NamedPotential>,
    pub table: ScaleTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitOutput {
    pub schema: u32,
    pub command: String,
    pub model: LevyModel,
    pub spec: ExitSpec,
    pub potential: NamedPotential,
    pub g: Payoff,
    #[serde(flatten)]
    pub result: GeneralizedScaleResult,
    pub classical: Option<ClassicalExit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalOutput {
    pub schema: u32,
    pub command: String,
    pub model: LevyModel,
    pub spec: ExitSpec,
    pub potential: NamedPotential,
    pub edges: Vec<f64>,
    pub curve: ConditionalCurve,
    pub mc: Option<ConditionalMcResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McVerifyOutput {
    pub schema: u32,
    pub command: String,
    pub model: LevyModel,
    pub spec: ExitSpec,
    pub potential: NamedPotential,
    pub g: Payoff,
    pub mc_config: MCConfig,
    pub report: VerifyReport,
    pub deterministic: GeneralizedScaleResult,
    pub mc: ExitMcResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalTimeOutput {
    pub schema: u32,
    pub command: String,
    pub model: LevyModel,
    pub spec: ExitSpec,
    pub potential: NamedPotential,
    pub local_time_laplace: f64,
    pub up_laplace: f64,
    pub down_value: f64,
    pub diagnostics: snlp_core::generalized::Diagnostics,
    pub classical: Option<ClassicalExit>,
    pub mc: Option<OccupationMcResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureOutput {
    pub schema: u32,
    pub command: String,
    pub status: String,
    pub error: String,
    pub detail: String,
}

/// A usage problem: exit status 2.
#[derive(Debug)]
struct Usage(String);

enum Failure {
    Usage(Usage),
    Numerical(Error),
    Io(String),
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Numerical(e)
    }
}

fn usage(flag: &str, message: impl fmt::Display) -> Usage {
    Usage(format!("--{flag}: {message}"))
}

/// Fills unset options from a config file.
fn merge_config(opts: &mut Options, map: BTreeMap<String, String>) -> Result<(), Usage> {
    fn set<T: FromStr>(slot: &mut Option<T>, key: &str, value: &str) -> Result<(), Usage>
    where
        T::Err: fmt::Display,
    {
        if slot.is_none() {
            *slot = Some(value.parse::<T>().map_err(|e| usage(key, format!("{e} (from config)")))?);
        }
        Ok(())
    }
    for (key, value) in &map {
        let v = value.as_str();
        match key.as_str() {
            "model" => set(&mut opts.model, key, v)?,
            "b" => set(&mut opts.b, key, v)?,
            "x" => set(&mut opts.x, key, v)?,
            "a" => set(&mut opts.a, key, v)?,
            "potential" => set(&mut opts.potential, key, v)?,
            "g" => set(&mut opts.g, key, v)?,
            "q" => set(&mut opts.q, key, v)?,
            "paths" => set(&mut opts.paths, key, v)?,
            "dt" => set(&mut opts.dt, key, v)?,
            "seed" => set(&mut opts.seed, key, v)?,
            "bridge" => set(&mut opts.bridge, key, v)?,
            "grid-outer" => set(&mut opts.grid_outer, key, v)?,
            "grid-inner" => set(&mut opts.grid_inner, key, v)?,
            "bins" => set(&mut opts.bins, key, v)?,
            "out" => set(&mut opts.out, key, v)?,
            "csv" => set(&mut opts.csv, key, v)?,
            other => return Err(Usage(format!("config: unknown key `{other}`"))),
        }
    }
    Ok(())
}

/// Options after defaults, validated against the core preconditions.
struct Resolved {
    model: LevyModel,
    opts: Options,
}

impl Resolved {
    fn new(opts: Options) -> Result<Self, Usage> {
        let model = opts.model.ok_or_else(|| usage("model", "required"))?.0;
        Ok(Self { model, opts })
    }

    fn spec(&self) -> Result<ExitSpec, Usage> {
        let b = self.opts.b.unwrap_or(0.0);
        let x = self.opts.x.ok_or_else(|| usage("x", "required"))?;
        let a = self.opts.a.ok_or_else(|| usage("a", "required"))?;
        ExitSpec::new(b, x, a).map_err(|e| usage(if x <= b { "x" } else { "a" }, e))
    }

    fn potential(&self) -> NamedPotential {
        self.opts.potential.unwrap_or(NamedPotential::Const { q: 0.0 })
    }

    fn bivariate(&self) -> Result<BivariatePotential, Usage> {
        self.potential().bivariate().map_err(|e| usage("potential", e))
    }

    fn payoff(&self) -> Payoff {
        self.opts.g.unwrap_or(Payoff::Const { c: 1.0 })
    }

    fn grids(&self) -> Result<Grids, Usage> {
        let outer = self.opts.grid_outer.unwrap_or(DEFAULT_OUTER_NODES);
        let inner = self.opts.grid_inner.unwrap_or(DEFAULT_INNER_INTERVALS);
        Grids::new(outer, inner).map_err(|e| usage(if outer < 5 { "grid-outer" } else { "grid-inner" }, e))
    }

    fn q(&self) -> Result<f64, Usage> {
        let q = self.opts.q.unwrap_or(0.0);
        if q >= 0.0 && q.is_finite() {
            Ok(q)
        } else {
            Err(usage("q", "must be finite and non-negative"))
        }
    }

    fn mc(&self, env_seed: Option<&str>) -> Result<MCConfig, Usage> {
        let seed = match (self.opts.seed, env_seed) {
            (Some(s), _) => s,
            (None, Some(s)) => s
                .trim()
                .parse()
                .map_err(|e| Usage(format!("{SEED_ENV}: {e}")))?,
            (None, None) => DEFAULT_SEED,
        };
        let cfg = MCConfig::new(self.opts.dt.unwrap_or(DEFAULT_DT), self.opts.paths.unwrap_or(DEFAULT_PATHS), seed)
            .with_bridge(self.opts.bridge.unwrap_or(true));
        cfg.validate()
            .map_err(|e| usage(if cfg.dt > 0.0 && cfg.dt.is_finite() { "paths" } else { "dt" }, e))?;
        Ok(cfg)
    }

    fn classical(&self, spec: &ExitSpec) -> Result<Option<ClassicalExit>, Error> {
        let q = match (self.opts.q, self.potential()) {
            (Some(q), _) => q,
            (None, NamedPotential::Const { q }) => q,
            _ => return Ok(None),
        };
        Ok(Some(ClassicalExit {
            q,
            up: classical_exit_up(&self.model, q, spec.b, spec.x, spec.a)?,
            down: classical_exit_down(&self.model, q, spec.b, spec.x, spec.a)?,
        }))
    }
}

/// A finished command: the JSON document and an optional CSV companion.
struct Output {
    json: String,
    csv: Option<String>,
    status: i32,
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("outputs serialize")
}

fn run(command: Command, r: &Resolved, env_seed: Option<&str>) -> Result<Output, Failure> {
    let name = command.name().to_string();
    match command {
        Command::ScaleTable => {
            let b = r.opts.b.unwrap_or(0.0);
            let hi = r.opts.a.ok_or_else(|| usage("a", "required (table upper end)"))?;
            if !(hi > b) {
                return Err(usage("a", "table needs a > b").into());
            }
            let n = r.opts.grid_inner.unwrap_or(DEFAULT_INNER_INTERVALS);
            if n < volterra::MIN_INTERVALS {
                return Err(usage("grid-inner", "need at least 16 intervals").into());
            }
            let q = r.q()?;
            let table = match r.opts.potential {
                None => {
                    let mut t = ScaleTable::classical(&r.model, q, hi - b, n)?;
                    t.grid_lo = b;
                    t.grid_hi = hi;
                    t
                }
                Some(p) => {
                    let f = p
                        .univariate()
                        .map_err(|e| usage("potential", e))?
                        .ok_or_else(|| usage("potential", "scale-table needs a position-only potential (const or level)"))?;
                    let sol = volterra::solve(&r.model, &f, b, hi, n)?;
                    ScaleTable {
                        z_values: Some(sol.z_table.w_values),
                        z_deriv: Some(sol.z_table.w_deriv),
                        normalization_note: format!("renewal solutions W^(f)(u, {b}), Z^(f)(u, {b}) for f = {p}"),
                        ..sol.base
                    }
                }
            };
            let csv = table.to_csv();
            Ok(Output {
                json: to_json(&ScaleTableOutput {
                    schema: SCHEMA,
                    command: name,
                    model: r.model,
                    q,
                    potential: r.opts.potential,
                    table,
                }),
                csv: Some(csv),
                status: 0,
            })
        }
        Command::Exit => {
            let spec = r.spec()?;
            let f = r.bivariate()?;
            let g = r.payoff();
            let result = evaluate_refined(&r.model, &f, |z| g.eval(z), &g.breakpoints(), &spec, r.grids()?, Refinement::default(), Default::default())?;
            let mut csv = String::from("s,iota,kappa\n");
            for ((s, i), (_, k)) in result.iota.iter().zip(&result.kappa) {
                csv.push_str(&format!("{s:.16e},{i:.16e},{k:.16e}\n"));
            }
            Ok(Output {
                json: to_json(&ExitOutput {
                    schema: SCHEMA,
                    command: name,
                    model: r.model,
                    spec,
                    potential: r.potential(),
                    g,
                    classical: r.classical(&spec)?,
                    result,
                }),
                csv: Some(csv),
                status: 0,
            })
        }
        Command::Conditional => {
            let spec = r.spec()?;
            let f = r.bivariate()?;
            let bins = r.opts.bins.unwrap_or(DEFAULT_BINS);
            if bins < 4 {
                return Err(usage("bins", "need at least 4 bins").into());
            }
            let width = (spec.a - spec.x) / bins as f64;
            let edges: Vec<f64> = (0..=bins).map(|i| if i == bins { spec.a } else { spec.x + width * i as f64 }).collect();
            let curve = Generalized::new(&r.model, &f, spec.b, r.grids()?)?.conditional_curve(&spec, &edges)?;
            let mc = match r.opts.paths {
                Some(_) => Some(conditional_mc(&r.model, &f, &spec, &r.mc(env_seed)?, bins)?),
                None => None,
            };
            let mut csv = String::from("z,conditional\n");
            for (z, k) in &curve.points {
                csv.push_str(&format!("{z:.16e},{k:.16e}\n"));
            }
            Ok(Output {
                json: to_json(&ConditionalOutput {
                    schema: SCHEMA,
                    command: name,
                    model: r.model,
                    spec,
                    potential: r.potential(),
                    edges,
                    curve,
                    mc,
                }),
                csv: Some(csv),
                status: 0,
            })
        }
        Command::McVerify => {
            let spec = r.spec()?;
            let f = r.bivariate()?;
            let g = r.payoff();
            let cfg = r.mc(env_seed)?;
            let grids = r.grids()?;
            let det = evaluate_refined(&r.model, &f, |z| g.eval(z), &g.breakpoints(), &spec, grids, Refinement::default(), Default::default())?;
            let mut mc = run_exit_mc(&r.model, &f, |z| g.eval(z), |_, _| 1.0, &spec, &cfg, r.opts.csv.is_some())?;
            let csv = mc.samples.take().map(|s| samples_to_csv(&s));
            let report = verify_report(
                &[
                    ("up_laplace".into(), det.up_laplace),
                    ("down_value".into(), det.down_value),
                    ("prob_up".into(), det.diagnostics.classical_up),
                ],
                &[
                    ("up_laplace".into(), mc.up_laplace),
                    ("down_value".into(), mc.down_functional),
                    ("prob_up".into(), mc.prob_up),
                ],
            )?;
            let status = if report.all_pass { 0 } else { 1 };
            Ok(Output {
                json: to_json(&McVerifyOutput {
                    schema: SCHEMA,
                    command: name,
                    model: r.model,
                    spec,
                    potential: r.potential(),
                    g,
                    mc_config: cfg,
                    report,
                    deterministic: det,
                    mc,
                }),
                csv,
                status,
            })
        }
        Command::LocalTime => {
            let spec = r.spec()?;
            let p = r.potential();
            let f = p
                .univariate()
                .map_err(|e| usage("potential", e))?
                .ok_or_else(|| usage("potential", "local-time needs a position-only potential (const or level)"))?;
            let lifted = BivariatePotential::lift(&f);
            let res = evaluate_refined(&r.model, &lifted, |_| 1.0, &[], &spec, r.grids()?, Refinement::default(), Default::default())?;
            let mc = match r.opts.paths {
                Some(_) => {
                    let cfg = r.mc(env_seed)?;
                    let levels = ((spec.a - spec.b) / cfg.dt.sqrt()).ceil() as usize + 1;
                    Some(occupation_mc(&r.model, &f, &spec, &cfg, levels.max(8))?)
                }
                None => None,
            };
            Ok(Output {
                json: to_json(&LocalTimeOutput {
                    schema: SCHEMA,
                    command: name,
                    model: r.model,
                    spec,
                    potential: p,
                    local_time_laplace: res.up_laplace + res.down_value,
                    up_laplace: res.up_laplace,
                    down_value: res.down_value,
                    diagnostics: res.diagnostics,
                    classical: r.classical(&spec)?,
                    mc,
                }),
                csv: None,
                status: 0,
            })
        }
    }
}

fn error_kind(e: &Error) -> &'static str {
    match e {
        Error::InvalidParameter { .. } => "invalid_parameter",
        Error::BoundedVariation { .. } => "bounded_variation",
        Error::Ordering { .. } => "ordering",
        Error::RootNotConverged { .. } => "root_not_converged",
        Error::Inversion { .. } => "inversion",
        Error::PotentialBound { .. } => "potential_bound",
        Error::NonFinite { .. } => "non_finite",
        Error::OutOfRange { .. } => "out_of_range",
        Error::TailNotConverged { .. } => "tail_not_converged",
        Error::Censored { .. } => "censored",
        Error::OvershootUnsupported => "overshoot_unsupported",
        Error::Bandwidth { .. } => "bandwidth",
        Error::EstimandMismatch(_) => "estimand_mismatch",
    }
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), Failure> {
    std::fs::write(path, contents).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status.
pub fn parse_and_dispatch(argv: &[String], stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    dispatch(cli, env_seed.as_deref(), stdout, stderr)
}

fn dispatch(cli: Cli, env_seed: Option<&str>, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let command = cli.command;
    let mut opts = cli.opts;
    let outcome = (|| -> Result<Output, Failure> {
        if let Some(path) = opts.config.clone() {
            let text = std::fs::read_to_string(&path).map_err(|e| Failure::Usage(usage("config", format!("{}: {e}", path.display()))))?;
            let map = config::parse(&text)
                .map_err(|e| Failure::Usage(usage("config", format!("{} line {}: {}", path.display(), e.line, e.message))))?;
            merge_config(&mut opts, map)?;
        }
        let resolved = Resolved::new(opts.clone())?;
        run(command, &resolved, env_seed)
    })();
    match outcome {
        Ok(out) => {
            if let (Some(path), Some(csv)) = (&opts.csv, &out.csv) {
                if let Err(Failure::Io(msg)) = write_file(path, csv) {
                    let _ = writeln!(stderr, "error: {msg}");
                    return 1;
                }
            }
            match &opts.out {
                Some(path) => {
                    if let Err(Failure::Io(msg)) = write_file(path, &out.json) {
                        let _ = writeln!(stderr, "error: {msg}");
                        return 1;
                    }
                }
                None => {
                    let _ = writeln!(stdout, "{}", out.json);
                }
            }
            out.status
        }
        Err(Failure::Usage(Usage(msg))) => {
            let _ = writeln!(stderr, "error: {msg}\n\nFor more information, try '--help'.");
            2
        }
        Err(Failure::Numerical(e)) => {
            let doc = FailureOutput {
                schema: SCHEMA,
                command: command.name().into(),
                status: "numerical_failure".into(),
                error: error_kind(&e).into(),
                detail: e.to_string(),
            };
            let _ = writeln!(stderr, "error: {e}");
            let _ = writeln!(stdout, "{}", to_json(&doc));
            1
        }
        Err(Failure::Io(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str], env_seed: Option<&str>) -> (i32, String, String) {
        let argv: Vec<String> = std::iter::once("snlp-scale").chain(args.iter().copied()).map(String::from).collect();
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = match Cli::try_parse_from(&argv) {
            Ok(cli) => dispatch(cli, env_seed, &mut out, &mut err),
            Err(_) => 2,
        };
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn model_and_payoff_parsing() {
        assert_eq!("bm:0,1".parse::<ModelArg>().unwrap().0, LevyModel::brownian(0.0, 1.0).unwrap());
        assert!("ejd:1,1,1,1".parse::<ModelArg>().is_ok());
        for bad in ["bm:0", "bm:0,0", "bm:0,-1", "ou:1,1", "bm", "ejd:1,1,1"] {
            assert!(bad.parse::<ModelArg>().is_err(), "{bad}");
        }
        assert_eq!("step:2,0.7".parse::<Payoff>().unwrap().eval(0.8), 2.0);
        assert_eq!("linear:0.5".parse::<Payoff>().unwrap().eval(0.8), 0.4);
        for g in [Payoff::Const { c: 1.5 }, Payoff::Step { c: 1.0, r: 0.2 }] {
            assert_eq!(g.to_string().parse::<Payoff>().unwrap(), g);
        }
        assert!("step:1".parse::<Payoff>().is_err());
    }

    #[test]
    fn env_seed_is_a_fallback() {
        let opts = Options {
            model: Some("bm:0,1".parse().unwrap()),
            ..Default::default()
        };
        let r = Resolved::new(opts.clone()).unwrap();
        assert_eq!(r.mc(Some("99")).unwrap().seed, 99);
        assert_eq!(r.mc(None).unwrap().seed, DEFAULT_SEED);
        let r = Resolved::new(Options { seed: Some(5), ..opts }).unwrap();
        assert_eq!(r.mc(Some("99")).unwrap().seed, 5);
        assert!(Resolved::new(Options::default()).is_err());
    }

    #[test]
    fn config_fills_only_missing_flags() {
        let mut opts = Options {
            x: Some(0.25),
            ..Default::default()
        };
        let map = config::parse("model = bm:0,1\nx = 0.5\na = 1\ngrid_outer = 33").unwrap();
        merge_config(&mut opts, map).unwrap();
        assert_eq!(opts.x, Some(0.25));
        assert_eq!(opts.a, Some(1.0));
        assert_eq!(opts.grid_outer, Some(33));
        let bad = config::parse("colour = blue").unwrap();
        assert!(merge_config(&mut Options::default(), bad).is_err());
        let bad = config::parse("dt = fast").unwrap();
        let err = merge_config(&mut Options::default(), bad).unwrap_err();
        assert!(err.0.contains("--dt"));
    }

    #[test]
    fn zero_potential_exit_in_process() {
        let (code, out, _) = call(&["exit", "--model", "bm:0,1", "--b", "0", "--x", "0.5", "--a", "1", "--potential", "const:0"], None);
        assert_eq!(code, 0);
        let parsed: ExitOutput = serde_json::from_str(&out).unwrap();
        assert_eq!(parsed.schema, 1);
        assert!((parsed.result.up_laplace - 0.5).abs() < 1e-12);
    }

    #[test]
    fn usage_errors_name_the_flag() {
        let (code, _, err) = call(&["exit", "--model", "bm:0,1", "--b", "0", "--x", "1.5", "--a", "1"], None);
        assert_eq!(code, 2);
        assert!(err.contains("--a"), "{err}");
        let (code, _, err) = call(&["exit", "--model", "bm:0,1", "--x", "0.5", "--a", "1", "--grid-inner", "4"], None);
        assert_eq!(code, 2);
        assert!(err.contains("--grid-inner"), "{err}");
        let (code, _, err) = call(&["local-time", "--model", "bm:0,1", "--x", "0.5", "--a", "1", "--potential", "reflected:0.4"], None);
        assert_eq!(code, 2);
        assert!(err.contains("--potential"), "{err}");
    }
}
