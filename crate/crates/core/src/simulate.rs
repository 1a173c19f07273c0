//! Monte Carlo paths of the exit problem, tracking the running supremum and
//! the functional `∫_0^T F(S_t, X_t) dt`.
//!
//! Diffusive steps are Euler with exact exponential jump clocks. With bridge
//! correction the step maximum is drawn from the Brownian-bridge law and a
//! down-crossing inside the step is detected with probability
//! `exp(−2(X₀ − b)(X₁ − b)/(σ²h))`.
//!
//! Every path draws from its own substreams of `(seed, path index)`, so
//! estimates do not depend on thread count.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generalized::{ExitSpec, Generalized, Grids};
use crate::levy::LevyModel;
use crate::parallel::Execution;
use crate::potential::{BivariatePotential, UnivariatePotential};
use crate::stats::Estimate;

/// Bridge events less likely than `exp(−SKIP_EXPONENT)` are not sampled.
const SKIP_EXPONENT: f64 = 36.0;
const MAX_CENSORED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MCConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub bridge_correction: bool,
    /// Per-path time budget; `None` means `10⁴(a − b)²/σ²`.
    #[serde(default)]
    pub t_cap: Option<f64>,
    #[serde(default)]
    pub execution: Execution,
}

impl MCConfig {
    pub fn new(dt: f64, n_paths: usize, seed: u64) -> Self {
        Self {
            dt,
            n_paths,
            seed,
            bridge_correction: true,
            t_cap: None,
            execution: Execution::default(),
        }
    }

    pub fn with_bridge(mut self, on: bool) -> Self {
        self.bridge_correction = on;
        self
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "dt",
                value: self.dt,
                reason: "time step must be positive",
            });
        }
        if self.n_paths < 100 {
            return Err(Error::InvalidParameter {
                name: "n_paths",
                value: self.n_paths as f64,
                reason: "need at least 100 paths",
            });
        }
        if let Some(cap) = self.t_cap {
            if !(cap > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "t_cap",
                    value: cap,
                    reason: "time cap must be positive",
                });
            }
        }
        Ok(())
    }

    fn cap(&self, model: &LevyModel, spec: &ExitSpec) -> f64 {
        let w = spec.a - spec.b;
        self.t_cap.unwrap_or(1e4 * w * w / (model.sigma() * model.sigma()))
    }

    fn warnings(&self, spec: &ExitSpec) -> Vec<String> {
        let w = spec.a - spec.b;
        if self.dt > w * w / 100.0 {
            vec![format!("dt = {} exceeds (a − b)²/100 = {}", self.dt, w * w / 100.0)]
        } else {
            Vec::new()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitSampleRecord {
    pub path: usize,
    pub exited_up: bool,
    pub s_at_exit: f64,
    pub x_pre: f64,
    pub x_post: f64,
    pub functional: f64,
}

/// Header `path,exited_up,s_at_exit,x_pre,x_post,functional`.
pub fn samples_to_csv(samples: &[ExitSampleRecord]) -> String {
    let mut out = String::from("path,exited_up,s_at_exit,x_pre,x_post,functional\n");
    for r in samples {
        let _ = writeln!(
            out,
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.path, r.exited_up as u8, r.s_at_exit, r.x_pre, r.x_post, r.functional
        );
    }
    out
}

/// Receives every diffusive (sub)step `x₀ → x₁` of duration `h`.
trait StepObserver {
    fn step(&mut self, x0: f64, x1: f64, h: f64);
}

impl StepObserver for () {
    fn step(&mut self, _: f64, _: f64, _: f64) {}
}

struct Simulator<'a> {
    model: &'a LevyModel,
    potential: &'a BivariatePotential,
    spec: ExitSpec,
    dt: f64,
    seed: u64,
    bridge: bool,
    t_cap: f64,
}

impl Simulator<'_> {
    /// One path; `None` when censored.
    fn run<O: StepObserver>(&self, path: usize, obs: &mut O) -> Result<Option<ExitSampleRecord>> {
        let mut main = ChaCha8Rng::seed_from_u64(self.seed);
        main.set_stream(2 * path as u64);
        let mut aux = ChaCha8Rng::seed_from_u64(self.seed);
        aux.set_stream(2 * path as u64 + 1);

        let (b, a) = (self.spec.b, self.spec.a);
        let mu = self.model.mu();
        let sigma = self.model.sigma();
        let s2 = sigma * sigma;
        let rate = self.model.jump_rate();
        let jump_mean = self.model.jump_mean();
        let clock = |rng: &mut ChaCha8Rng| {
            if rate > 0.0 {
                rng.sample::<f64, _>(Exp1) / rate
            } else {
                f64::INFINITY
            }
        };

        let mut t = 0.0;
        let mut x = self.spec.x;
        let mut s = x;
        let mut f_prev = self.potential.query(s, x)?;
        let mut integral = 0.0;
        let mut next_jump = clock(&mut main);

        let finish = |exited_up: bool, s: f64, x_pre: f64, x_post: f64, integral: f64| ExitSampleRecord {
            path,
            exited_up,
            s_at_exit: s,
            x_pre,
            x_post,
            functional: integral,
        };

        while t < self.t_cap {
            let jump_now = t + self.dt >= next_jump;
            let h = if jump_now { next_jump - t } else { self.dt };
            let z: f64 = main.sample(StandardNormal);
            let x1 = x + mu * h + sigma * h.sqrt() * z;
            let mut s1 = s.max(x1);

            if self.bridge && s1 < a {
                let e = 2.0 * (s1 - x) * (s1 - x1) / (s2 * h);
                if e < SKIP_EXPONENT {
                    let u: f64 = aux.gen();
                    let m = 0.5 * (x + x1 + ((x1 - x).powi(2) - 2.0 * s2 * h * (1.0 - u).ln()).sqrt());
                    s1 = s1.max(m);
                }
            }
            if s1 >= a {
                let frac = if x1 >= a { (a - x) / (x1 - x) } else { 0.5 };
                let f_end = self.potential.query(a, a)?;
                integral += 0.5 * frac * h * (f_prev + f_end);
                obs.step(x, a, frac * h);
                return Ok(Some(finish(true, a, a, a, integral)));
            }
            let crossed_down = if x1 <= b {
                Some((x - b) / (x - x1))
            } else if self.bridge {
                let e = 2.0 * (x - b) * (x1 - b) / (s2 * h);
                (e < SKIP_EXPONENT && aux.gen::<f64>() < (-e).exp()).then_some(0.5)
            } else {
                None
            };
            if let Some(frac) = crossed_down {
                let f_end = self.potential.query(s1, b)?;
                integral += 0.5 * frac * h * (f_prev + f_end);
                obs.step(x, b, frac * h);
                return Ok(Some(finish(false, s1, b, b, integral)));
            }

            let f1 = self.potential.query(s1, x1)?;
            integral += 0.5 * h * (f_prev + f1);
            obs.step(x, x1, h);
            x = x1;
            s = s1;
            f_prev = f1;
            t += h;

            if jump_now {
                let size = jump_mean * main.sample::<f64, _>(Exp1);
                let x_pre = x;
                x -= size;
                if x <= b {
                    return Ok(Some(finish(false, s, x_pre, x, integral)));
                }
                f_prev = self.potential.query(s, x)?;
                next_jump = t + clock(&mut main);
            }
        }
        Ok(None)
    }
}

fn check_censoring(censored: usize, paths: usize) -> Result<()> {
    if censored as f64 > MAX_CENSORED_FRACTION * paths as f64 {
        Err(Error::Censored { censored, paths })
    } else {
        Ok(())
    }
}

/// Runs every path, returning records in path order (`None` = censored).
fn run_all(
    model: &LevyModel,
    potential: &BivariatePotential,
    spec: &ExitSpec,
    cfg: &MCConfig,
) -> Result<Vec<Option<ExitSampleRecord>>> {
    spec.validate()?;
    cfg.validate()?;
    let sim = Simulator {
        model,
        potential,
        spec: *spec,
        dt: cfg.dt,
        seed: cfg.seed,
        bridge: cfg.bridge_correction,
        t_cap: cfg.cap(model, spec),
    };
    let records = cfg.execution.try_map(cfg.n_paths, |i| sim.run(i, &mut ()))?;
    let censored = records.iter().filter(|r| r.is_none()).count();
    check_censoring(censored, cfg.n_paths)?;
    Ok(records)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitMcResult {
    /// `E[e^{−∫F}; up]`
    pub up_laplace: Estimate,
    /// `E[g(S_T) h(X_{T−}, X_T) e^{−∫F}; down]`
    pub down_functional: Estimate,
    pub prob_up: Estimate,
    pub prob_down: Estimate,
    pub censored: usize,
    pub warnings: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<Vec<ExitSampleRecord>>,
}

/// Estimates the exit functionals by simulation.
pub fn run_exit_mc<G, H>(
    model: &LevyModel,
    potential: &BivariatePotential,
    g: G,
    h: H,
    spec: &ExitSpec,
    cfg: &MCConfig,
    keep_samples: bool,
) -> Result<ExitMcResult>
where
    G: Fn(f64) -> f64,
    H: Fn(f64, f64) -> f64,
{
    let start = Instant::now();
    let records = run_all(model, potential, spec, cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let n = records.len();
    let mut up = Vec::with_capacity(n);
    let mut down = Vec::with_capacity(n);
    let mut p_up = Vec::with_capacity(n);
    let mut p_down = Vec::with_capacity(n);
    for r in &records {
        let (u, d, pu, pd) = match r {
            None => (0.0, 0.0, 0.0, 0.0),
            Some(r) if r.exited_up => ((-r.functional).exp(), 0.0, 1.0, 0.0),
            Some(r) => (0.0, g(r.s_at_exit) * h(r.x_pre, r.x_post) * (-r.functional).exp(), 0.0, 1.0),
        };
        up.push(u);
        down.push(d);
        p_up.push(pu);
        p_down.push(pd);
    }
    Ok(ExitMcResult {
        up_laplace: Estimate::from_values(&up, elapsed),
        down_functional: Estimate::from_values(&down, elapsed),
        prob_up: Estimate::from_values(&p_up, elapsed),
        prob_down: Estimate::from_values(&p_down, elapsed),
        censored: records.iter().filter(|r| r.is_none()).count(),
        warnings: cfg.warnings(spec),
        samples: keep_samples.then(|| records.into_iter().flatten().collect()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// `None` for an empty bin.
    pub mc: Option<Estimate>,
    /// Deterministic conditional transform at the bin midpoint.
    pub deterministic_midpoint: f64,
    /// Deterministic conditional transform averaged over the bin under `ν`.
    pub deterministic_average: f64,
    pub zscore: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMcResult {
    pub bins: Vec<ConditionalBin>,
    /// MC mean of `e^{−∫F}` over up-exits (`S_T = a`).
    pub at_a: Estimate,
    pub deterministic_at_a: f64,
    pub empty_bins: usize,
    pub censored: usize,
    pub warnings: Vec<String>,
}

impl ConditionalMcResult {
    /// Fraction of non-empty bins within `k` standard errors of the
    /// deterministic bin average.
    pub fn fraction_within(&self, k: f64) -> f64 {
        let z: Vec<f64> = self.bins.iter().filter_map(|b| b.zscore).collect();
        z.iter().filter(|z| z.abs() < k).count() as f64 / z.len() as f64
    }
}

/// `e^{−∫F}` binned by `S_T` over down-exits, paired with the deterministic
/// conditional transform.
pub fn conditional_mc(
    model: &LevyModel,
    potential: &BivariatePotential,
    spec: &ExitSpec,
    cfg: &MCConfig,
    n_bins: usize,
) -> Result<ConditionalMcResult> {
    if n_bins < 4 {
        return Err(Error::InvalidParameter {
            name: "n_bins",
            value: n_bins as f64,
            reason: "need at least 4 bins",
        });
    }
    let start = Instant::now();
    let records = run_all(model, potential, spec, cfg)?;
    let elapsed = start.elapsed().as_secs_f64();
    let width = (spec.a - spec.x) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|i| if i == n_bins { spec.a } else { spec.x + width * i as f64 }).collect();

    let mut per_bin: Vec<Vec<f64>> = vec![Vec::new(); n_bins];
    let mut at_a = Vec::new();
    for r in records.iter().flatten() {
        let v = (-r.functional).exp();
        if r.exited_up {
            at_a.push(v);
        } else {
            let k = (((r.s_at_exit - spec.x) / width).floor().max(0.0) as usize).min(n_bins - 1);
            per_bin[k].push(v);
        }
    }

    let det = Generalized::new(model, potential, spec.b, Grids::default())?
        .with_execution(cfg.execution)
        .conditional_curve(spec, &edges)?;
    let bins: Vec<ConditionalBin> = per_bin
        .iter()
        .enumerate()
        .map(|(k, vals)| {
            let mc = (!vals.is_empty()).then(|| Estimate::from_values(vals, elapsed));
            let zscore = mc.filter(|e| e.n > 1).map(|e| {
                if e.std_error > 0.0 {
                    e.zscore(det.bin_average[k])
                } else if e.mean == det.bin_average[k] {
                    0.0
                } else {
                    (det.bin_average[k] - e.mean).signum() * f64::INFINITY
                }
            });
            ConditionalBin {
                lo: edges[k],
                hi: edges[k + 1],
                count: vals.len(),
                mc,
                deterministic_midpoint: det.bin_midpoint[k],
                deterministic_average: det.bin_average[k],
                zscore,
            }
        })
        .collect();
    Ok(ConditionalMcResult {
        empty_bins: bins.iter().filter(|b| b.count == 0).count(),
        bins,
        at_a: Estimate::from_values(&at_a, elapsed),
        deterministic_at_a: det.at_a,
        censored: records.iter().filter(|r| r.is_none()).count(),
        warnings: cfg.warnings(spec),
    })
}

/// Box-kernel occupation density on a uniform level grid.
struct Occupation {
    levels: Vec<f64>,
    spacing: f64,
    half_width: f64,
    density: Vec<f64>,
}

impl Occupation {
    fn add(&mut self, x: f64, weight: f64) {
        let lo = self.levels[0];
        let first = (((x - self.half_width - lo) / self.spacing).ceil().max(0.0)) as usize;
        let last = ((x + self.half_width - lo) / self.spacing).floor();
        if last < 0.0 {
            return;
        }
        let last = (last as usize).min(self.levels.len() - 1);
        let w = weight / (2.0 * self.half_width);
        for j in first..=last {
            if (x - self.levels[j]).abs() < self.half_width {
                self.density[j] += w;
            }
        }
    }
}

impl StepObserver for Occupation {
    fn step(&mut self, x0: f64, x1: f64, h: f64) {
        self.add(x0, 0.5 * h);
        self.add(x1, 0.5 * h);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationMcResult {
    /// `E[exp(−∫_0^T f(X_t) dt)]`
    pub time_laplace: Estimate,
    /// `E[exp(−∫_b^a f(y) L̂^y dy)]`
    pub occupation_laplace: Estimate,
    pub time_integral: Estimate,
    pub occupation_integral: Estimate,
    /// `E|A − B|` between the two path integrals.
    pub mean_abs_discrepancy: Estimate,
    pub bandwidth: f64,
    pub censored: usize,
    pub warnings: Vec<String>,
}

/// Compares the time integral `A = ∫_0^T f(X_t) dt` with the occupation
/// integral `B = ∫_b^a f(y) L̂^y dy` path by path.
pub fn occupation_mc(
    model: &LevyModel,
    f_x: &UnivariatePotential,
    spec: &ExitSpec,
    cfg: &MCConfig,
    n_levels: usize,
) -> Result<OccupationMcResult> {
    if n_levels < 8 {
        return Err(Error::InvalidParameter {
            name: "n_levels",
            value: n_levels as f64,
            reason: "need at least 8 levels",
        });
    }
    spec.validate()?;
    cfg.validate()?;
    let spacing = (spec.a - spec.b) / (n_levels - 1) as f64;
    let half_width = 2.0 * cfg.dt.sqrt();
    if half_width < spacing {
        return Err(Error::Bandwidth {
            bandwidth: half_width,
            spacing,
        });
    }
    let levels = crate::quad::uniform_grid(spec.b, spec.a, n_levels - 1);
    let f_levels = levels.iter().map(|&y| f_x.query(y)).collect::<Result<Vec<_>>>()?;
    let lifted = BivariatePotential::lift(f_x);
    let sim = Simulator {
        model,
        potential: &lifted,
        spec: *spec,
        dt: cfg.dt,
        seed: cfg.seed,
        bridge: cfg.bridge_correction,
        t_cap: cfg.cap(model, spec),
    };
    let start = Instant::now();
    let pairs = cfg.execution.try_map(cfg.n_paths, |i| {
        let mut occ = Occupation {
            levels: levels.clone(),
            spacing,
            half_width,
            density: vec![0.0; n_levels],
        };
        let rec = sim.run(i, &mut occ)?;
        let weighted: Vec<f64> = occ.density.iter().zip(&f_levels).map(|(l, f)| l * f).collect();
        let b_int = spacing * (crate::quad::pairwise_sum(&weighted) - 0.5 * (weighted[0] + weighted[n_levels - 1]));
        Ok::<_, Error>(rec.map(|r| (r.functional, b_int)))
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    let censored = pairs.iter().filter(|p| p.is_none()).count();
    check_censoring(censored, cfg.n_paths)?;
    let done: Vec<(f64, f64)> = pairs.into_iter().flatten().collect();
    let col = |f: &dyn Fn(&(f64, f64)) -> f64| Estimate::from_values(&done.iter().map(f).collect::<Vec<_>>(), elapsed);
    Ok(OccupationMcResult {
        time_laplace: col(&|p| (-p.0).exp()),
        occupation_laplace: col(&|p| (-p.1).exp()),
        time_integral: col(&|p| p.0),
        occupation_integral: col(&|p| p.1),
        mean_abs_discrepancy: col(&|p| (p.0 - p.1).abs()),
        bandwidth: half_width,
        censored,
        warnings: cfg.warnings(spec),
    })
}
