//! Generalized scale functions for potentials `F(s, x)` of the running
//! supremum and the position.
//!
//! For each supremum level `s` the slice `f̃ₛ(x) = F(s, x)` is frozen and the
//! renewal equations are solved on `[b, s]`. With `V, V'` and `Z, Z'` the
//! endpoint values of `W^(f̃ₛ)(·, b)` and `Z^(f̃ₛ)(·, b)`,
//!
//! ```text
//! ι(s)    = V'/V − W'(s − b)/W(s − b)
//! κ_b(s)  = (Z·V' − Z'·V)/V
//! W_f(x, b) = W(x − b)·exp(∫_b^x ι)
//! ```
//!
//! Exit functionals are integrals of these profiles over the supremum.

use serde::{Deserialize, Serialize};

use crate::classical::{check_ordering, ScaleFunctions};
use crate::error::{Error, Result};
use crate::levy::LevyModel;
use crate::parallel::Execution;
use crate::potential::{BivariatePotential, UnivariatePotential};
use crate::quad::{cumulative_simpson, simpson_uniform, uniform_grid};
use crate::volterra::march;

pub const DEFAULT_OUTER_NODES: usize = 129;
pub const DEFAULT_INNER_INTERVALS: usize = 1024;
/// Frozen solves closer to `b` than this many inner steps are extrapolated.
const SKIP_STEPS: f64 = 10.0;
const TAIL_DOUBLINGS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExitSpec {
    pub b: f64,
    pub x: f64,
    pub a: f64,
}

impl ExitSpec {
    pub fn new(b: f64, x: f64, a: f64) -> Result<Self> {
        check_ordering(b, x, a)?;
        Ok(Self { b, x, a })
    }

    pub fn validate(&self) -> Result<()> {
        check_ordering(self.b, self.x, self.a)
    }
}

/// Outer Simpson nodes over the supremum and inner renewal intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grids {
    pub n_outer: usize,
    pub n_inner: usize,
}

impl Default for Grids {
    fn default() -> Self {
        Self {
            n_outer: DEFAULT_OUTER_NODES,
            n_inner: DEFAULT_INNER_INTERVALS,
        }
    }
}

impl Grids {
    pub fn new(n_outer: usize, n_inner: usize) -> Result<Self> {
        if n_outer < 5 {
            return Err(Error::InvalidParameter {
                name: "n_outer",
                value: n_outer as f64,
                reason: "need at least 5 outer nodes",
            });
        }
        if n_inner < crate::volterra::MIN_INTERVALS {
            return Err(Error::InvalidParameter {
                name: "n_inner",
                value: n_inner as f64,
                reason: "need at least 16 inner intervals",
            });
        }
        Ok(Self { n_outer, n_inner })
    }

    pub fn doubled(self) -> Self {
        Self {
            n_outer: 2 * (self.n_outer - 1) + 1,
            n_inner: 2 * self.n_inner,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub n_outer: usize,
    pub n_inner: usize,
    pub outer_nodes: usize,
    pub skipped_iota_nodes: usize,
    /// Richardson estimate of the Simpson error in `∫ₓᵃ ι`.
    pub up_exponent_error: f64,
    /// Richardson estimate of the Simpson error in the down functional.
    pub down_error: f64,
    pub classical_up: f64,
    pub doublings: usize,
    pub relative_change: Option<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedScaleResult {
    pub up_laplace: f64,
    pub down_value: f64,
    pub iota: Vec<(f64, f64)>,
    pub kappa: Vec<(f64, f64)>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    start: usize,
    intervals: usize,
    step: f64,
}

/// `ι` (and optionally `κ`) sampled on piecewise-uniform nodes over `[lo, hi]`.
#[derive(Debug, Clone)]
struct Profile {
    nodes: Vec<f64>,
    iota: Vec<f64>,
    kappa: Vec<f64>,
    /// `∫_lo^{node} ι`
    cum: Vec<f64>,
    segments: Vec<Segment>,
    skipped: usize,
}

impl Profile {
    /// Composite Simpson of `values` (one per node) and its Richardson error.
    fn integrate(&self, values: &[f64]) -> (f64, f64) {
        self.integrate_sided(|i, _| values[i])
    }

    /// As [`Profile::integrate`], with `value(i, side)` giving the limit from
    /// inside the segment at its end nodes (`side` is +1 at a start, −1 at an
    /// end, 0 elsewhere).
    fn integrate_sided(&self, value: impl Fn(usize, i8) -> f64) -> (f64, f64) {
        let mut fine = 0.0;
        let mut coarse = 0.0;
        for seg in &self.segments {
            let v: Vec<f64> = (0..=seg.intervals)
                .map(|j| {
                    let side = if j == 0 {
                        1
                    } else if j == seg.intervals {
                        -1
                    } else {
                        0
                    };
                    value(seg.start + j, side)
                })
                .collect();
            fine += simpson_uniform(&v, seg.step);
            let half: Vec<f64> = v.iter().step_by(2).copied().collect();
            coarse += simpson_uniform(&half, 2.0 * seg.step);
        }
        (fine, (fine - coarse).abs() / 15.0)
    }

    fn total(&self) -> f64 {
        *self.cum.last().expect("profile has nodes")
    }
}

/// The frozen-potential engine for one model, potential and lower barrier.
#[derive(Debug, Clone)]
pub struct Generalized<'a> {
    sf: ScaleFunctions,
    potential: &'a BivariatePotential,
    b: f64,
    grids: Grids,
    execution: Execution,
    payoff_breaks: Vec<f64>,
}

impl<'a> Generalized<'a> {
    pub fn new(model: &LevyModel, potential: &'a BivariatePotential, b: f64, grids: Grids) -> Result<Self> {
        if !b.is_finite() {
            return Err(Error::InvalidParameter {
                name: "b",
                value: b,
                reason: "barrier must be finite",
            });
        }
        Grids::new(grids.n_outer, grids.n_inner)?;
        Ok(Self {
            sf: ScaleFunctions::new(*model, 0.0)?,
            potential,
            b,
            grids,
            execution: Execution::default(),
            payoff_breaks: Vec::new(),
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    /// Supremum levels where the payoff `g` jumps; the outer grid splits there.
    pub fn with_payoff_breakpoints(mut self, breaks: &[f64]) -> Self {
        self.payoff_breaks = breaks.iter().copied().filter(|p| p.is_finite()).collect();
        self
    }

    pub fn grids(&self) -> Grids {
        self.grids
    }

    fn below_resolution(&self, s: f64) -> Error {
        Error::OutOfRange {
            what: "supremum level above b",
            value: s,
            lo: self.b,
            hi: f64::INFINITY,
        }
    }

    /// `(ι(s), κ_b(s; F, 1))` from one frozen solve.
    fn node(&self, s: f64) -> Result<(f64, f64)> {
        let y = s - self.b;
        if !(y > 0.0) {
            return Err(self.below_resolution(s));
        }
        if self.potential.is_identically_zero() {
            let w = self.sf.w(y)?;
            if w <= 0.0 {
                return Err(self.below_resolution(s));
            }
            return Ok((0.0, self.sf.w_prime(y)? / w));
        }
        let frozen = self.potential.frozen(s);
        let m = march(&self.sf, &frozen, self.b, s, self.grids.n_inner).map_err(|e| match e {
            Error::PotentialBound { value, bound, at: (_, x) } => Error::PotentialBound { value, bound, at: (s, x) },
            other => other,
        })?;
        let n = self.grids.n_inner;
        let (v, d, z, zd) = (m.w[n], m.w_deriv[n], m.z[n], m.z_deriv[n]);
        if !(v > 0.0 && m.kernel_end > 0.0) {
            return Err(self.below_resolution(s));
        }
        let iota = (d / v - m.kernel_slope_end / m.kernel_end).max(0.0);
        let kappa = (z * d - zd * v) / v;
        Ok((iota, kappa))
    }

    pub fn iota(&self, s: f64) -> Result<f64> {
        Ok(self.node(s)?.0)
    }

    pub fn kappa(&self, z: f64) -> Result<f64> {
        Ok(self.node(z)?.1)
    }

    /// Outer nodes over `[lo, hi]`, split at `splits` and at the potential's
    /// supremum breakpoints. Every segment has a multiple of 4 intervals.
    fn layout(&self, lo: f64, hi: f64, splits: &[f64]) -> (Vec<f64>, Vec<Segment>) {
        let span = hi - lo;
        let mut cuts: Vec<f64> = splits
            .iter()
            .chain(self.potential.supremum_breakpoints())
            .copied()
            .filter(|&p| p > lo + 1e-9 * span && p < hi - 1e-9 * span)
            .collect();
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|p, q| (*p - *q).abs() <= 1e-9 * span);
        let mut ends = vec![lo];
        ends.extend(cuts);
        ends.push(hi);

        let total = (self.grids.n_outer - 1) as f64;
        let mut nodes = Vec::new();
        let mut segments = Vec::new();
        for w in ends.windows(2) {
            let share = total * (w[1] - w[0]) / span;
            let intervals = (4.0 * (share / 4.0).round()).max(4.0) as usize;
            let grid = uniform_grid(w[0], w[1], intervals);
            let start = nodes.len().saturating_sub(1);
            if nodes.is_empty() {
                nodes.extend_from_slice(&grid);
            } else {
                nodes.extend_from_slice(&grid[1..]);
            }
            segments.push(Segment {
                start,
                intervals,
                step: (w[1] - w[0]) / intervals as f64,
            });
        }
        (nodes, segments)
    }

    fn profile(&self, lo: f64, hi: f64, splits: &[f64]) -> Result<Profile> {
        if !(hi > lo) || lo < self.b {
            return Err(Error::Ordering { b: self.b, x: lo, a: hi });
        }
        let (nodes, segments) = self.layout(lo, hi, splits);
        let threshold = self.b + SKIP_STEPS * (hi - self.b) / self.grids.n_inner as f64;
        let values = self.execution.try_map(nodes.len(), |i| {
            let s = nodes[i];
            if s < threshold {
                Ok(None)
            } else {
                self.node(s).map(Some)
            }
        })?;
        let valid: Vec<usize> = (0..nodes.len()).filter(|&i| values[i].is_some()).collect();
        let skipped = nodes.len() - valid.len();
        if skipped > 0 && valid.len() < 2 {
            return Err(self.below_resolution(lo));
        }
        let mut iota = vec![0.0; nodes.len()];
        let mut kappa = vec![f64::NAN; nodes.len()];
        for (i, v) in values.iter().enumerate() {
            match v {
                Some((io, ka)) => {
                    iota[i] = *io;
                    kappa[i] = *ka;
                }
                None => {
                    iota[i] = extrapolate_from_barrier(
                        self.b,
                        (nodes[valid[0]], iota_of(&values, valid[0])),
                        (nodes[valid[1]], iota_of(&values, valid[1])),
                        nodes[i],
                    );
                    if nodes[i] > self.b {
                        kappa[i] = self.node(nodes[i])?.1;
                    }
                }
            }
        }
        let mut cum = vec![0.0; nodes.len()];
        for seg in &segments {
            let part = cumulative_simpson(&iota[seg.start..=seg.start + seg.intervals], seg.step);
            let base = cum[seg.start];
            for (k, c) in part.iter().enumerate().skip(1) {
                cum[seg.start + k] = base + c;
            }
        }
        Ok(Profile {
            nodes,
            iota,
            kappa,
            cum,
            segments,
            skipped,
        })
    }

    /// `W_f(x, b) = W(x − b)·exp(∫_b^x ι)` at each point of `xs`.
    pub fn w_f(&self, xs: &[f64]) -> Result<Vec<f64>> {
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if xs.is_empty() || xs.iter().any(|&x| !(x > self.b)) {
            return Err(self.below_resolution(xs.iter().copied().fold(f64::INFINITY, f64::min)));
        }
        let prof = self.profile(self.b, hi, xs)?;
        xs.iter()
            .map(|&x| {
                let i = nearest(&prof.nodes, x);
                Ok(self.sf.w(x - self.b)? * prof.cum[i].exp())
            })
            .collect()
    }

    /// Exit functionals from one profile over `[x, a]`.
    pub fn evaluate<G>(&self, spec: &ExitSpec, g: G) -> Result<GeneralizedScaleResult>
    where
        G: Fn(f64) -> f64,
    {
        spec.validate()?;
        self.check_barrier(spec)?;
        let prof = self.profile(spec.x, spec.a, &self.payoff_breaks)?;
        let wx = self.sf.w(spec.x - self.b)?;
        let classical_up = wx / self.sf.w(spec.a - self.b)?;
        let (_, exponent_err) = prof.integrate(&prof.iota);
        let up = classical_up * (-prof.total()).exp();

        let weight = prof
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &z)| Ok(wx / self.sf.w(z - self.b)? * (-prof.cum[i]).exp() * prof.kappa[i]))
            .collect::<Result<Vec<_>>>()?;
        let span = spec.a - spec.x;
        let (down, down_err) = prof.integrate_sided(|i, side| {
            let z = prof.nodes[i];
            let at_break = side != 0 && self.payoff_breaks.iter().any(|&p| (p - z).abs() <= 1e-9 * span);
            let gz = if at_break { g(z + f64::from(side) * 1e-12 * span) } else { g(z) };
            gz * weight[i]
        });
        if !(up.is_finite() && down.is_finite()) {
            return Err(Error::NonFinite {
                context: "generalized exit functional",
                x: spec.x,
            });
        }
        Ok(GeneralizedScaleResult {
            up_laplace: up,
            down_value: down,
            iota: prof.nodes.iter().copied().zip(prof.iota.iter().copied()).collect(),
            kappa: prof.nodes.iter().copied().zip(prof.kappa.iter().copied()).collect(),
            diagnostics: Diagnostics {
                n_outer: self.grids.n_outer,
                n_inner: self.grids.n_inner,
                outer_nodes: prof.nodes.len(),
                skipped_iota_nodes: prof.skipped,
                up_exponent_error: exponent_err,
                down_error: down_err,
                classical_up,
                doublings: 0,
                relative_change: None,
                converged: true,
            },
        })
    }

    fn check_barrier(&self, spec: &ExitSpec) -> Result<()> {
        if spec.b == self.b {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "b",
                value: spec.b,
                reason: "exit interval must use the engine's lower barrier",
            })
        }
    }

    /// `E_x[exp(−∫_0^T F(S, X)) | S_T = z, down-exit]` for `z < a`, and the
    /// same given an up-exit for `z = a`.
    pub fn conditional_laplace(&self, spec: &ExitSpec, z: f64) -> Result<f64> {
        spec.validate()?;
        self.check_barrier(spec)?;
        if !(z >= spec.x && z <= spec.a) {
            return Err(Error::OutOfRange {
                what: "conditioning supremum",
                value: z,
                lo: spec.x,
                hi: spec.a,
            });
        }
        let (exponent, kappa) = if z > spec.x {
            let prof = self.profile(spec.x, z, &[])?;
            (prof.total(), *prof.kappa.last().expect("profile has nodes"))
        } else {
            (0.0, self.kappa(z)?)
        };
        if z == spec.a {
            return Ok((-exponent).exp());
        }
        Ok((-exponent).exp() * kappa / self.height_tail(z)?)
    }

    /// Conditional curve on one profile over `[x, a]` split at `edges` and
    /// bin midpoints.
    pub fn conditional_curve(&self, spec: &ExitSpec, edges: &[f64]) -> Result<ConditionalCurve> {
        spec.validate()?;
        self.check_barrier(spec)?;
        let mids: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
        let splits: Vec<f64> = edges.iter().chain(&mids).copied().collect();
        let prof = self.profile(spec.x, spec.a, &splits)?;
        let p_down = 1.0 - prob_up(&self.sf, spec)?;
        let mut k = Vec::with_capacity(prof.nodes.len());
        let mut nu = Vec::with_capacity(prof.nodes.len());
        for (i, &z) in prof.nodes.iter().enumerate() {
            k.push((-prof.cum[i]).exp() * prof.kappa[i] / self.height_tail(z)?);
            nu.push(density(&self.sf, spec, z)?);
        }
        let weighted: Vec<f64> = k.iter().zip(&nu).map(|(k, n)| k * n).collect();
        let mut bin_average = Vec::new();
        for w in edges.windows(2) {
            let i0 = nearest(&prof.nodes, w[0].max(spec.x));
            let i1 = nearest(&prof.nodes, w[1].min(spec.a));
            let (mut num, mut mass) = (0.0, 0.0);
            for seg in prof.segments.iter().filter(|s| s.start >= i0 && s.start + s.intervals <= i1) {
                let range = seg.start..=seg.start + seg.intervals;
                num += simpson_uniform(&weighted[range.clone()], seg.step);
                mass += simpson_uniform(&nu[range], seg.step);
            }
            bin_average.push(if mass > 0.0 { num / mass } else { f64::NAN });
        }
        let bin_midpoint = mids.iter().map(|&m| k[nearest(&prof.nodes, m)]).collect();
        Ok(ConditionalCurve {
            bin_midpoint,
            points: prof.nodes.iter().copied().zip(k).collect(),
            at_a: (-prof.total()).exp(),
            bin_average,
            p_down,
        })
    }

    fn height_tail(&self, z: f64) -> Result<f64> {
        let y = z - self.b;
        Ok(self.sf.w_prime(y)? / self.sf.w(y)?)
    }

    /// `Z_{f,1,1}(x, b)` with the defining integral over `[x, ∞)` cut at a
    /// level that doubles until the last piece adds less than `tail_tol`.
    pub fn z_truncated(&self, x: f64, a_max: f64, tail_tol: f64) -> Result<TruncatedZ> {
        if !(x > self.b) || !(a_max > x) {
            return Err(Error::Ordering { b: self.b, x, a: a_max });
        }
        if !(tail_tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tail_tol",
                value: tail_tol,
                reason: "tolerance must be positive",
            });
        }
        let w_f = self.w_f(&[x])?[0];
        let wx = self.sf.w(x - self.b)?;
        let span = a_max - x;
        let mut value = w_f;
        let mut exponent = 0.0;
        let (mut lo, mut hi) = (x, a_max);
        let mut last = f64::INFINITY;
        for doublings in 0..=TAIL_DOUBLINGS {
            let prof = self.profile(lo, hi, &[])?;
            let integrand = prof
                .nodes
                .iter()
                .enumerate()
                .map(|(i, &z)| Ok(wx / self.sf.w(z - self.b)? * (-(exponent + prof.cum[i])).exp() * prof.kappa[i]))
                .collect::<Result<Vec<_>>>()?;
            last = prof.integrate(&integrand).0;
            value += last;
            exponent += prof.total();
            if doublings > 0 && last.abs() < tail_tol {
                return Ok(TruncatedZ {
                    value,
                    w_f,
                    a_max: hi,
                    last_increment: last,
                    doublings,
                });
            }
            lo = hi;
            hi = x + span * 2f64.powi(doublings as i32 + 1);
        }
        Err(Error::TailNotConverged {
            a_max: lo,
            last_increment: last,
            tolerance: tail_tol,
        })
    }
}

/// Quadratic through `(b, 0)` and two valid nodes; `ι(b+) = 0`.
fn extrapolate_from_barrier(b: f64, p: (f64, f64), q: (f64, f64), s: f64) -> f64 {
    let (u, v, y) = (p.0 - b, q.0 - b, s - b);
    let lp = y * (y - v) / (u * (u - v));
    let lq = y * (y - u) / (v * (v - u));
    (p.1 * lp + q.1 * lq).max(0.0)
}

fn iota_of(values: &[Option<(f64, f64)>], i: usize) -> f64 {
    values[i].expect("valid node").0
}

fn nearest(nodes: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, &n) in nodes.iter().enumerate() {
        if (n - x).abs() < (nodes[best] - x).abs() {
            best = i;
        }
    }
    best
}

/// The conditional Laplace transform given `S_T = z` on the nodes of one
/// profile, with per-bin `ν`-weighted averages and midpoint values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalCurve {
    pub points: Vec<(f64, f64)>,
    pub at_a: f64,
    pub bin_average: Vec<f64>,
    pub bin_midpoint: Vec<f64>,
    pub p_down: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncatedZ {
    pub value: f64,
    pub w_f: f64,
    pub a_max: f64,
    pub last_increment: f64,
    pub doublings: usize,
}

/// Refinement policy: double both grids until successive results agree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub rel_tol: f64,
    pub max_doublings: usize,
}

impl Default for Refinement {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_doublings: 4,
        }
    }
}

fn rel_change(new: f64, old: f64) -> f64 {
    let d = (new - old).abs();
    if d == 0.0 {
        0.0
    } else {
        d / new.abs().max(old.abs())
    }
}

/// [`Generalized::evaluate`] with grid doubling. `g_breaks` lists the
/// discontinuities of `g`.
pub fn evaluate_refined<G>(
    model: &LevyModel,
    potential: &BivariatePotential,
    g: G,
    g_breaks: &[f64],
    spec: &ExitSpec,
    grids: Grids,
    refinement: Refinement,
    execution: Execution,
) -> Result<GeneralizedScaleResult>
where
    G: Fn(f64) -> f64 + Copy,
{
    let mut grids = grids;
    let run = |grids: Grids| {
        Generalized::new(model, potential, spec.b, grids)?
            .with_execution(execution)
            .with_payoff_breakpoints(g_breaks)
            .evaluate(spec, g)
    };
    let mut current = run(grids)?;
    current.diagnostics.converged = refinement.max_doublings == 0;
    for k in 1..=refinement.max_doublings {
        grids = grids.doubled();
        let mut next = run(grids)?;
        let change = rel_change(next.up_laplace, current.up_laplace).max(rel_change(next.down_value, current.down_value));
        next.diagnostics.doublings = k;
        next.diagnostics.relative_change = Some(change);
        next.diagnostics.converged = change < refinement.rel_tol;
        current = next;
        if current.diagnostics.converged {
            break;
        }
    }
    Ok(current)
}

fn prob_up(sf: &ScaleFunctions, spec: &ExitSpec) -> Result<f64> {
    Ok(sf.w(spec.x - spec.b)? / sf.w(spec.a - spec.b)?)
}

fn density(sf: &ScaleFunctions, spec: &ExitSpec, z: f64) -> Result<f64> {
    let y = z - spec.b;
    let wz = sf.w(y)?;
    Ok(sf.w(spec.x - spec.b)? / wz * sf.w_prime(y)? / wz / (1.0 - prob_up(sf, spec)?))
}

fn cdf(sf: &ScaleFunctions, spec: &ExitSpec, z: f64) -> Result<f64> {
    Ok((1.0 - sf.w(spec.x - spec.b)? / sf.w(z - spec.b)?) / (1.0 - prob_up(sf, spec)?))
}

pub fn iota(model: &LevyModel, f: &BivariatePotential, b: f64, s: f64, n: usize) -> Result<f64> {
    Generalized::new(model, f, b, Grids::new(DEFAULT_OUTER_NODES, n)?)?.iota(s)
}

pub fn kappa(model: &LevyModel, f: &BivariatePotential, b: f64, z: f64, n: usize) -> Result<f64> {
    Generalized::new(model, f, b, Grids::new(DEFAULT_OUTER_NODES, n)?)?.kappa(z)
}

/// `E_x[exp(−∫_0^T F(S_t, X_t) dt); τ_a⁺ < τ_b⁻] = W_f(x, b)/W_f(a, b)`.
pub fn exit_up_laplace(
    model: &LevyModel,
    f: &BivariatePotential,
    spec: &ExitSpec,
    n_outer: usize,
    n_inner: usize,
) -> Result<f64> {
    let grids = Grids::new(n_outer, n_inner)?;
    Ok(Generalized::new(model, f, spec.b, grids)?.evaluate(spec, |_| 0.0)?.up_laplace)
}

/// `E_x[g(S_T)·exp(−∫_0^T F(S_t, X_t) dt); τ_b⁻ < τ_a⁺]`.
pub fn exit_down_functional<G>(
    model: &LevyModel,
    f: &BivariatePotential,
    g: G,
    spec: &ExitSpec,
    n_outer: usize,
    n_inner: usize,
) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    let grids = Grids::new(n_outer, n_inner)?;
    Ok(Generalized::new(model, f, spec.b, grids)?.evaluate(spec, g)?.down_value)
}

/// As [`exit_down_functional`] with an extra factor `h(X_{T−}, X_T)`. Only
/// continuous down-crossings are supported, where the factor is `h(b, b)`.
#[allow(clippy::too_many_arguments)]
pub fn exit_down_functional_with_h<G, H>(
    model: &LevyModel,
    f: &BivariatePotential,
    g: G,
    h: H,
    spec: &ExitSpec,
    n_outer: usize,
    n_inner: usize,
) -> Result<f64>
where
    G: Fn(f64) -> f64,
    H: Fn(f64, f64) -> f64,
{
    if !model.is_gaussian() {
        return Err(Error::OvershootUnsupported);
    }
    Ok(h(spec.b, spec.b) * exit_down_functional(model, f, g, spec, n_outer, n_inner)?)
}

/// Density of `S_T` on `[x, a)` given a down-exit.
pub fn supremum_density(model: &LevyModel, spec: &ExitSpec, z: f64) -> Result<f64> {
    spec.validate()?;
    check_sup(spec, z, false)?;
    density(&ScaleFunctions::new(*model, 0.0)?, spec, z)
}

/// Distribution function of `S_T` given a down-exit.
pub fn supremum_cdf(model: &LevyModel, spec: &ExitSpec, z: f64) -> Result<f64> {
    spec.validate()?;
    check_sup(spec, z, true)?;
    cdf(&ScaleFunctions::new(*model, 0.0)?, spec, z)
}

/// Mass of `S_T = a`, the up-exit probability.
pub fn supremum_atom(model: &LevyModel, spec: &ExitSpec) -> Result<f64> {
    spec.validate()?;
    prob_up(&ScaleFunctions::new(*model, 0.0)?, spec)
}

fn check_sup(spec: &ExitSpec, z: f64, closed: bool) -> Result<()> {
    let inside = z >= spec.x && (z < spec.a || (closed && z == spec.a));
    if inside {
        Ok(())
    } else {
        Err(Error::OutOfRange {
            what: "supremum",
            value: z,
            lo: spec.x,
            hi: spec.a,
        })
    }
}

pub fn conditional_laplace_given_sup(
    model: &LevyModel,
    f: &BivariatePotential,
    spec: &ExitSpec,
    z: f64,
    grids: Grids,
) -> Result<f64> {
    Generalized::new(model, f, spec.b, grids)?.conditional_laplace(spec, z)
}

pub fn z_f_truncated(
    model: &LevyModel,
    f: &BivariatePotential,
    b: f64,
    x: f64,
    a_max: f64,
    tail_tol: f64,
) -> Result<TruncatedZ> {
    Generalized::new(model, f, b, Grids::default())?.z_truncated(x, a_max, tail_tol)
}

/// `E_x[exp(−∫_b^a f(y) L_T^y dy)]`, through the occupation formula.
pub fn local_time_laplace(
    model: &LevyModel,
    f_x: &UnivariatePotential,
    spec: &ExitSpec,
    n_outer: usize,
    n_inner: usize,
) -> Result<f64> {
    let lifted = BivariatePotential::lift(f_x);
    let grids = Grids::new(n_outer, n_inner)?;
    let r = Generalized::new(model, &lifted, spec.b, grids)?.evaluate(spec, |_| 1.0)?;
    Ok(r.up_laplace + r.down_value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{classical_exit_down, classical_exit_up, n_height_tail, wq, zq};
    use crate::potential::NamedPotential;
    use crate::volterra;
    use proptest::prelude::*;

    fn bm01() -> LevyModel {
        LevyModel::brownian(0.0, 1.0).unwrap()
    }

    fn jd() -> LevyModel {
        LevyModel::exp_jump_diffusion(0.3, 0.5, 1.0, 0.25).unwrap()
    }

    fn unit() -> ExitSpec {
        ExitSpec::new(0.0, 0.5, 1.0).unwrap()
    }

    fn konst(q: f64) -> BivariatePotential {
        BivariatePotential::constant(q).unwrap()
    }

    const D: Grids = Grids {
        n_outer: DEFAULT_OUTER_NODES,
        n_inner: DEFAULT_INNER_INTERVALS,
    };

    #[test]
    fn iota_examples() {
        assert_eq!(iota(&bm01(), &BivariatePotential::zero(), 0.0, 1.0, 64).unwrap(), 0.0);
        let v = iota(&bm01(), &konst(0.5), 0.0, 1.0, 1024).unwrap();
        assert!((v - (1.0 / 1f64.tanh() - 1.0)).abs() < 1e-5, "{v}");
        let refl = NamedPotential::Indicator { c: 0.5, r: 0.25 }.bivariate().unwrap();
        let v = iota(&bm01(), &refl, 0.0, 1.0, 1024).unwrap();
        assert!(v > 0.0 && v < bm01().phi(0.5).unwrap(), "{v}");
    }

    #[test]
    fn kappa_examples() {
        let k0 = kappa(&bm01(), &BivariatePotential::zero(), 0.0, 2.0, 64).unwrap();
        assert!((k0 - 0.5).abs() < 1e-12);
        let k = kappa(&bm01(), &konst(0.5), 0.0, 1.0, 1024).unwrap();
        assert!((k - 1.0 / 1f64.sinh()).abs() < 1e-5, "{k}");
        assert!(k < kappa(&bm01(), &BivariatePotential::zero(), 0.0, 1.0, 64).unwrap());
    }

    #[test]
    fn kappa_reduces_to_height_tail() {
        for model in [bm01(), LevyModel::brownian(-0.7, 1.3).unwrap(), jd()] {
            let zero = BivariatePotential::zero();
            let eng = Generalized::new(&model, &zero, -0.2, D).unwrap();
            let worst = (1..=40)
                .map(|i| {
                    let z = -0.2 + 0.05 * i as f64;
                    (eng.kappa(z).unwrap() - n_height_tail(&model, z + 0.2).unwrap()).abs()
                })
                .fold(0.0, f64::max);
            assert!(worst < 1e-8, "{worst}");
        }
    }

    #[test]
    fn exit_examples() {
        let spec = unit();
        let zero = BivariatePotential::zero();
        assert!((exit_up_laplace(&bm01(), &zero, &spec, 129, 64).unwrap() - 0.5).abs() < 1e-14);
        let down = exit_down_functional(&bm01(), &zero, |_| 1.0, &spec, 129, 64).unwrap();
        assert!((down - 0.5).abs() < 1e-9);
        let lin = exit_down_functional(&bm01(), &zero, |z| z, &spec, 129, 64).unwrap();
        assert!((lin - 0.5 * 2f64.ln()).abs() < 1e-8, "{lin}");

        let r = Generalized::new(&bm01(), &konst(0.5), 0.0, D).unwrap().evaluate(&spec, |_| 1.0).unwrap();
        let closed = 0.5f64.sinh() / 1f64.sinh();
        assert!((r.up_laplace - closed).abs() < 1e-5, "{}", r.up_laplace);
        let down = 0.5f64.sinh() * (1.0 / 0.5f64.tanh() - 1.0 / 1f64.tanh());
        assert!((r.down_value - down).abs() < 1e-5, "{}", r.down_value);
        assert!((r.down_value - classical_exit_down(&bm01(), 0.5, 0.0, 0.5, 1.0).unwrap()).abs() < 1e-5);

        let refl = NamedPotential::Reflected { c: 0.4, bound: 2.0 }.bivariate().unwrap();
        let up = exit_up_laplace(&bm01(), &refl, &spec, 129, 1024).unwrap();
        assert!(up > 0.0 && up < 0.5);
    }

    #[test]
    fn constant_potential_reproduces_classical_exits_for_jumps() {
        let model = jd();
        let spec = ExitSpec::new(-0.3, 0.2, 0.9).unwrap();
        let q = 0.6;
        let r = Generalized::new(&model, &konst(q), spec.b, D).unwrap().evaluate(&spec, |_| 1.0).unwrap();
        let up = classical_exit_up(&model, q, spec.b, spec.x, spec.a).unwrap();
        let down = classical_exit_down(&model, q, spec.b, spec.x, spec.a).unwrap();
        assert!((r.up_laplace - up).abs() < 1e-5, "{} vs {up}", r.up_laplace);
        assert!((r.down_value - down).abs() < 1e-5, "{} vs {down}", r.down_value);
    }

    #[test]
    fn supremum_law() {
        let spec = unit();
        let d = supremum_density(&bm01(), &spec, 0.8).unwrap();
        assert!((d - 1.5625).abs() < 1e-12);
        let total = crate::quad::adaptive_simpson(|z| supremum_density(&bm01(), &spec, z).unwrap(), 0.5, 1.0 - 1e-15, 1e-12)
            .unwrap().value;
        assert!((total - 1.0).abs() < 1e-8);
        let atom = supremum_atom(&bm01(), &spec).unwrap();
        let p_down = 1.0 - atom;
        assert!((total * p_down + atom - 1.0).abs() < 1e-10);
        assert!((supremum_cdf(&bm01(), &spec, 1.0).unwrap() - 1.0).abs() < 1e-14);
        assert!(supremum_density(&bm01(), &spec, 1.0).is_err());
        assert!(supremum_density(&bm01(), &spec, 0.4).is_err());
    }

    #[test]
    fn conditional_examples() {
        let spec = unit();
        let zero = BivariatePotential::zero();
        for z in [0.5, 0.7, 0.99, 1.0] {
            let k = conditional_laplace_given_sup(&bm01(), &zero, &spec, z, D).unwrap();
            assert!((k - 1.0).abs() < 1e-12, "{z}: {k}");
        }
        let f = konst(0.5);
        let at_a = conditional_laplace_given_sup(&bm01(), &f, &spec, 1.0, D).unwrap();
        assert!((at_a - 2.0 * 0.5f64.sinh() / 1f64.sinh()).abs() < 1e-5);
        assert!(conditional_laplace_given_sup(&bm01(), &f, &spec, 1.1, D).is_err());
    }

    #[test]
    fn total_expectation_identity() {
        let spec = unit();
        let f = konst(0.5);
        let eng = Generalized::new(&bm01(), &f, 0.0, D).unwrap();
        let m = 16;
        let h = (spec.a - spec.x) / m as f64;
        let vals: Vec<f64> = (0..=m)
            .map(|i| {
                let z = spec.x + h * i as f64;
                let z = if i == m { z - 1e-9 } else { z };
                eng.conditional_laplace(&spec, z).unwrap() * supremum_density(&bm01(), &spec, z).unwrap()
            })
            .collect();
        let atom = supremum_atom(&bm01(), &spec).unwrap();
        let lhs = simpson_uniform(&vals, h) * (1.0 - atom) + eng.conditional_laplace(&spec, 1.0).unwrap() * atom;
        let r = eng.evaluate(&spec, |_| 1.0).unwrap();
        assert!((lhs - (r.up_laplace + r.down_value)).abs() < 1e-5, "{lhs}");
    }

    #[test]
    fn conditional_curve_bins() {
        let spec = unit();
        let f = konst(0.5);
        let eng = Generalized::new(&bm01(), &f, 0.0, D).unwrap();
        let edges: Vec<f64> = (0..=4).map(|i| 0.5 + 0.125 * i as f64).collect();
        let curve = eng.conditional_curve(&spec, &edges).unwrap();
        // ν-weighted bin averages recombine to the down functional
        let mut sum = 0.0;
        for (w, avg) in edges.windows(2).zip(&curve.bin_average) {
            sum += avg * (supremum_cdf(&bm01(), &spec, w[1]).unwrap() - supremum_cdf(&bm01(), &spec, w[0]).unwrap());
        }
        let r = eng.evaluate(&spec, |_| 1.0).unwrap();
        assert!((sum * curve.p_down - r.down_value).abs() < 1e-8, "{:e}", sum * curve.p_down - r.down_value);
        assert!((curve.at_a - 0.886819).abs() < 1e-5);
    }

    #[test]
    fn local_time_examples() {
        let spec = unit();
        let zero = UnivariatePotential::constant(0.0).unwrap();
        assert!((local_time_laplace(&bm01(), &zero, &spec, 129, 64).unwrap() - 1.0).abs() < 1e-9);
        let half = UnivariatePotential::constant(0.5).unwrap();
        let v = local_time_laplace(&bm01(), &half, &spec, 129, 1024).unwrap();
        let classical = classical_exit_up(&bm01(), 0.5, 0.0, 0.5, 1.0).unwrap()
            + classical_exit_down(&bm01(), 0.5, 0.0, 0.5, 1.0).unwrap();
        assert!((v - 0.886819).abs() < 1e-5 && (v - classical).abs() < 1e-5, "{v}");
    }

    #[test]
    fn representation_invariant() {
        let f = NamedPotential::Reflected { c: 0.4, bound: 2.0 }.bivariate().unwrap();
        let eng = Generalized::new(&bm01(), &f, 0.0, D).unwrap();
        let xs = [0.3, 0.6, 1.0];
        let wf = eng.w_f(&xs).unwrap();
        for (x, w) in xs.iter().zip(wf) {
            let exponent = crate::quad::adaptive_simpson(|s| eng.iota(s).unwrap(), 1e-9, *x, 1e-11).unwrap().value;
            let ratio = w * (-exponent).exp() / wq(&bm01(), 0.0, *x).unwrap();
            assert!((ratio - 1.0).abs() < 1e-8, "{ratio}");
        }
    }

    #[test]
    fn excursion_route_matches_renewal_route_up_to_a_constant() {
        let c = 0.5;
        let level = UnivariatePotential::new(c, move |x| if x > 0.5 { c } else { 0.0 })
            .unwrap()
            .with_breakpoints(vec![0.5]);
        let lifted = BivariatePotential::lift(&level);
        let xs: Vec<f64> = (0..10).map(|k| 0.1 + k as f64 * 1.9 / 9.0).collect();
        let eng = Generalized::new(&bm01(), &lifted, 0.0, D).unwrap();
        let exc = eng.w_f(&xs).unwrap();
        let vol = volterra::solve(&bm01(), &level, 0.0, 2.0, 2000).unwrap();
        let ratios: Vec<f64> = xs.iter().zip(&exc).map(|(x, e)| e / vol.w_f(*x).unwrap()).collect();
        let mean = ratios.iter().sum::<f64>() / 10.0;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / 9.0;
        assert!(var.sqrt() / mean < 1e-5, "{ratios:?}");
    }

    #[test]
    fn truncated_z_examples() {
        let up = LevyModel::brownian(1.0, 1.0).unwrap();
        for x in [0.5, 1.0, 2.0] {
            let z = z_f_truncated(&up, &BivariatePotential::zero(), 0.0, x, x + 1.0, 1e-10).unwrap();
            assert!((z.value - 1.0).abs() < 1e-8, "{x}: {z:?}");
            assert!(z.a_max - x < 64.0);
        }
        let f = konst(0.5);
        let eng = Generalized::new(&bm01(), &f, 0.0, D).unwrap();
        let offsets: Vec<f64> = [0.5, 1.0, 1.5]
            .iter()
            .map(|&x| {
                let z = eng.z_truncated(x, x + 1.0, 1e-10).unwrap();
                // Z_f − Z^(0.5) is a constant multiple of W_f
                (z.value / z.w_f * wq(&bm01(), 0.5, x).unwrap() - zq(&bm01(), 0.5, x).unwrap()) / wq(&bm01(), 0.5, x).unwrap()
            })
            .collect();
        assert!((offsets[0] - offsets[2]).abs() < 1e-5 && (offsets[1] - offsets[2]).abs() < 1e-5, "{offsets:?}");
        let slow = z_f_truncated(&bm01(), &BivariatePotential::zero(), 0.0, 0.5, 1.0, 1e-10);
        assert!(matches!(slow, Err(Error::TailNotConverged { .. })));
    }

    #[test]
    fn h_factor_only_for_gaussian() {
        let spec = unit();
        let f = konst(0.5);
        let plain = exit_down_functional(&bm01(), &f, |_| 1.0, &spec, 33, 256).unwrap();
        let with_h = exit_down_functional_with_h(&bm01(), &f, |_| 1.0, |_, _| 0.25, &spec, 33, 256).unwrap();
        assert!((with_h - 0.25 * plain).abs() < 1e-15);
        let err = exit_down_functional_with_h(&jd(), &f, |_| 1.0, |_, _| 0.25, &spec, 33, 256);
        assert_eq!(err, Err(Error::OvershootUnsupported));
    }

    #[test]
    fn refinement_reports_convergence() {
        let spec = unit();
        let f = konst(0.5);
        let r = evaluate_refined(&bm01(), &f, |_| 1.0, &[], &spec, Grids::new(33, 256).unwrap(), Refinement::default(), Execution::default())
            .unwrap();
        assert!(r.diagnostics.doublings >= 1);
        assert!(r.diagnostics.relative_change.unwrap() < 1e-3);
        assert!((r.up_laplace - 0.5f64.sinh() / 1f64.sinh()).abs() < 1e-5);
    }

    #[test]
    fn step_payoff_splits_the_outer_grid() {
        let spec = unit();
        let f = BivariatePotential::zero();
        let step = |z: f64| if z > 0.7 { 1.0 } else { 0.0 };
        let exact = 0.5 / 0.7 - 0.5;
        let g33 = Grids::new(33, 64).unwrap();
        let split = Generalized::new(&bm01(), &f, 0.0, g33).unwrap().with_payoff_breakpoints(&[0.7]);
        let v = split.evaluate(&spec, step).unwrap().down_value;
        assert!((v - exact).abs() < 1e-6, "{v} vs {exact}");
        let plain = Generalized::new(&bm01(), &f, 0.0, g33).unwrap().evaluate(&spec, step).unwrap().down_value;
        assert!((plain - exact).abs() > 100.0 * (v - exact).abs());
        let r = evaluate_refined(&bm01(), &f, step, &[0.7], &spec, g33, Refinement::default(), Execution::default()).unwrap();
        assert!(r.diagnostics.converged);
        assert!((r.down_value - exact).abs() < 1e-8);
    }

    #[test]
    fn parallel_and_sequential_agree_bitwise() {
        let f = NamedPotential::Reflected { c: 0.4, bound: 2.0 }.bivariate().unwrap();
        let grids = Grids::new(33, 128).unwrap();
        let run = |e| Generalized::new(&bm01(), &f, 0.0, grids).unwrap().with_execution(e).evaluate(&unit(), |_| 1.0).unwrap();
        assert_eq!(run(Execution::Parallel), run(Execution::Sequential));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn damping_is_monotone(c1 in 0.0..1.0f64, extra in 0.01..1.0f64, x in 0.2..0.8f64) {
            let spec = ExitSpec::new(0.0, x, 1.0).unwrap();
            let g = Grids::new(17, 64).unwrap();
            let lo = exit_up_laplace(&bm01(), &NamedPotential::Reflected { c: c1, bound: 2.0 }.bivariate().unwrap(), &spec, g.n_outer, g.n_inner).unwrap();
            let hi = exit_up_laplace(&bm01(), &NamedPotential::Reflected { c: c1 + extra, bound: 2.0 }.bivariate().unwrap(), &spec, g.n_outer, g.n_inner).unwrap();
            let classical = exit_up_laplace(&bm01(), &BivariatePotential::zero(), &spec, g.n_outer, g.n_inner).unwrap();
            prop_assert!(hi <= lo && lo <= classical * (1.0 + 1e-12));
            prop_assert!((classical - x).abs() < 1e-12);
        }

        #[test]
        fn down_value_bounded_by_payoff(c in 0.0..1.0f64, gmax in 0.1..3.0f64) {
            let spec = unit();
            let f = NamedPotential::Reflected { c, bound: 2.0 }.bivariate().unwrap();
            let r = Generalized::new(&bm01(), &f, 0.0, Grids::new(17, 64).unwrap()).unwrap().evaluate(&spec, |z| gmax * z.sin()).unwrap();
            prop_assert!(r.down_value.abs() <= gmax);
            prop_assert!(r.up_laplace > 0.0 && r.up_laplace <= 1.0);
        }
    }
}
