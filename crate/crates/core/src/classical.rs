//! Classical scale functions `W^(q)`, `Z^(q)` and the two-sided exit
//! identities built from them.
//!
//! Brownian motion with drift uses closed forms. The jump-diffusion family
//! inverts `1/(Ψ(β) − q)`, `β/(Ψ(β) − q)` and `Ψ(β)/(β(Ψ(β) − q))` (the
//! transforms of `W^(q)`, its derivative, and `Z^(q)`) along a contour
//! centred at `Φ(q)`.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::TalbotInverter;
use crate::levy::{Family, LevyModel};
use crate::quad::uniform_grid;

/// Below this argument inverted values are clamped to the boundary value.
const CLAMP: f64 = 1e-12;

/// `expm1(y)/y`, continuous at zero.
fn exprel(y: f64) -> f64 {
    if y.abs() < 1e-300 {
        1.0
    } else {
        y.exp_m1() / y
    }
}

/// The q-scale functions of one model at one discount rate.
#[derive(Debug, Clone, Copy)]
pub struct ScaleFunctions {
    model: LevyModel,
    q: f64,
    phi_q: f64,
    inverter: TalbotInverter,
}

impl ScaleFunctions {
    pub fn new(model: LevyModel, q: f64) -> Result<Self> {
        let phi_q = model.phi(q)?;
        Ok(Self {
            model,
            q,
            phi_q,
            inverter: TalbotInverter::default(),
        })
    }

    pub fn with_inverter(mut self, inverter: TalbotInverter) -> Self {
        self.inverter = inverter;
        self
    }

    pub fn model(&self) -> &LevyModel {
        &self.model
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn phi_q(&self) -> f64 {
        self.phi_q
    }

    /// `W^(q)(x)`; zero for `x ≤ 0`.
    pub fn w(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::NonFinite { context: "W argument", x });
        }
        if x <= 0.0 {
            return Ok(0.0);
        }
        match self.model.family() {
            Family::BrownianDrift => Ok(self.brownian_w(x)),
            Family::ExpJumpDiffusion => {
                if x < CLAMP {
                    return Ok(0.0);
                }
                let (m, q) = (self.model, self.q);
                self.checked_inversion(x, |b| 1.0 / (m.psi_complex(b) - q))
            }
        }
    }

    /// Right derivative `W^(q)'(x)` for `x > 0`; at `0+` it equals `2/σ²`.
    pub fn w_prime(&self, x: f64) -> Result<f64> {
        if !(x > 0.0) {
            return Err(Error::InvalidParameter {
                name: "x",
                value: x,
                reason: "derivative of W is taken on (0, ∞)",
            });
        }
        Ok(self.w_prime_unchecked(x))
    }

    pub(crate) fn w_prime_unchecked(&self, x: f64) -> f64 {
        if x <= CLAMP {
            return self.w_prime_at_zero();
        }
        match self.model.family() {
            Family::BrownianDrift => self.brownian_w_prime(x),
            Family::ExpJumpDiffusion => {
                let (m, q) = (self.model, self.q);
                self.inverter
                    .invert(|b| b / (m.psi_complex(b) - q), x, self.phi_q)
                    .unwrap_or(f64::NAN)
            }
        }
    }

    /// `W^(q)'(0+) = 2/σ²` for processes with a Gaussian part.
    pub fn w_prime_at_zero(&self) -> f64 {
        2.0 / (self.model.sigma() * self.model.sigma())
    }

    /// `Z^(q)(x) = 1 + q ∫₀ˣ W^(q)`; one for `x ≤ 0` or `q = 0`.
    pub fn z(&self, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Err(Error::NonFinite { context: "Z argument", x });
        }
        if x <= 0.0 || self.q == 0.0 {
            return Ok(1.0);
        }
        match self.model.family() {
            Family::BrownianDrift => Ok(self.brownian_z(x)),
            Family::ExpJumpDiffusion => {
                if x < CLAMP {
                    return Ok(1.0);
                }
                let (m, q) = (self.model, self.q);
                self.checked_inversion(x, |b| {
                    let psi = m.psi_complex(b);
                    psi / (b * (psi - q))
                })
            }
        }
    }

    /// `Z^(q)'(x) = q·W^(q)(x)`.
    pub fn z_prime(&self, x: f64) -> Result<f64> {
        Ok(self.q * self.w(x)?)
    }

    fn checked_inversion<F>(&self, x: f64, transform: F) -> Result<f64>
    where
        F: Fn(Complex64) -> Complex64,
    {
        let v = self.inverter.invert(transform, x, self.phi_q)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Inversion {
                x,
                nodes: self.inverter.nodes(),
                shift: self.phi_q,
                value: v,
            })
        }
    }

    fn brownian_parts(&self) -> (f64, f64, f64) {
        let s2 = self.model.sigma() * self.model.sigma();
        let mu = self.model.mu();
        let delta = (mu * mu + 2.0 * self.q * s2).sqrt() / s2;
        (s2, mu / s2, delta)
    }

    fn brownian_w(&self, x: f64) -> f64 {
        let (s2, k, delta) = self.brownian_parts();
        if delta == 0.0 {
            return 2.0 * x / s2;
        }
        // 2 e^{-kx} sinh(δx) = expm1((δ-k)x) - expm1(-(δ+k)x), no cancellation near 0.
        (((delta - k) * x).exp_m1() - (-(delta + k) * x).exp_m1()) / (s2 * delta)
    }

    fn brownian_w_prime(&self, x: f64) -> f64 {
        let (s2, k, delta) = self.brownian_parts();
        if delta == 0.0 {
            return 2.0 / s2;
        }
        let a = ((delta - k) * x).exp();
        let b = (-(delta + k) * x).exp();
        // d/dx [(a - b)/(σ²δ)] with a' = (δ-k)a, b' = -(δ+k)b.
        ((delta - k) * a + (delta + k) * b) / (s2 * delta)
    }

    fn brownian_z(&self, x: f64) -> f64 {
        let (s2, k, delta) = self.brownian_parts();
        // q ∫₀ˣ (e^{(δ-k)y} - e^{-(δ+k)y}) dy / (σ²δ)
        let up = x * exprel((delta - k) * x);
        let down = x * exprel(-(delta + k) * x);
        1.0 + self.q * (up - down) / (s2 * delta)
    }
}

/// Five-point central difference, step `1e-6·max(1, x)`.
pub fn five_point_derivative<F>(f: F, x: f64) -> f64
where
    F: Fn(f64) -> f64,
{
    let h = 1e-6 * x.abs().max(1.0);
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

pub fn wq(model: &LevyModel, q: f64, x: f64) -> Result<f64> {
    ScaleFunctions::new(*model, q)?.w(x)
}

pub fn zq(model: &LevyModel, q: f64, x: f64) -> Result<f64> {
    ScaleFunctions::new(*model, q)?.z(x)
}

pub fn w_derivative(model: &LevyModel, q: f64, x: f64) -> Result<f64> {
    ScaleFunctions::new(*model, q)?.w_prime(x)
}

/// Excursion-measure mass of heights above `z`: `W'(z)/W(z)` at `q = 0`.
pub fn n_height_tail(model: &LevyModel, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::InvalidParameter {
            name: "z",
            value: z,
            reason: "height level must be positive",
        });
    }
    let sf = ScaleFunctions::new(*model, 0.0)?;
    Ok(sf.w_prime(z)? / sf.w(z)?)
}

pub fn check_ordering(b: f64, x: f64, a: f64) -> Result<()> {
    if b < x && x < a && b.is_finite() && a.is_finite() {
        Ok(())
    } else {
        Err(Error::Ordering { b, x, a })
    }
}

/// `E_x[e^{-qT}; T = τ_a⁺] = W^(q)(x−b)/W^(q)(a−b)`.
pub fn classical_exit_up(model: &LevyModel, q: f64, b: f64, x: f64, a: f64) -> Result<f64> {
    check_ordering(b, x, a)?;
    let sf = ScaleFunctions::new(*model, q)?;
    Ok(sf.w(x - b)? / sf.w(a - b)?)
}

/// `E_x[e^{-qT}; T = τ_b⁻] = Z^(q)(x−b) − Z^(q)(a−b)·W^(q)(x−b)/W^(q)(a−b)`.
pub fn classical_exit_down(model: &LevyModel, q: f64, b: f64, x: f64, a: f64) -> Result<f64> {
    check_ordering(b, x, a)?;
    let sf = ScaleFunctions::new(*model, q)?;
    let ratio = sf.w(x - b)? / sf.w(a - b)?;
    Ok(sf.z(x - b)? - sf.z(a - b)? * ratio)
}

/// A scale function sampled on a uniform grid `grid_lo = u₀ < … < u_n = grid_hi`,
/// with the argument of `W` measured from `grid_lo`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleTable {
    pub grid_lo: f64,
    pub grid_hi: f64,
    pub n: usize,
    pub w_values: Vec<f64>,
    pub w_deriv: Vec<f64>,
    pub z_values: Option<Vec<f64>>,
    pub z_deriv: Option<Vec<f64>>,
    pub normalization_note: String,
}

impl ScaleTable {
    /// Samples `W^(q)`, `W^(q)'` and `Z^(q)`, `Z^(q)'` on `[0, hi]` with `n` intervals.
    pub fn classical(model: &LevyModel, q: f64, hi: f64, n: usize) -> Result<Self> {
        if !(hi > 0.0) || n < 1 {
            return Err(Error::InvalidParameter {
                name: "hi",
                value: hi,
                reason: "table needs hi > 0 and at least one interval",
            });
        }
        let sf = ScaleFunctions::new(*model, q)?;
        let grid = uniform_grid(0.0, hi, n);
        let mut w_values = Vec::with_capacity(n + 1);
        let mut w_deriv = Vec::with_capacity(n + 1);
        let mut z_values = Vec::with_capacity(n + 1);
        let mut z_deriv = Vec::with_capacity(n + 1);
        for &x in &grid {
            let w = sf.w(x)?;
            w_values.push(w);
            w_deriv.push(sf.w_prime_unchecked(x));
            z_values.push(sf.z(x)?);
            z_deriv.push(q * w);
        }
        Ok(Self {
            grid_lo: 0.0,
            grid_hi: hi,
            n,
            w_values,
            w_deriv,
            z_values: Some(z_values),
            z_deriv: Some(z_deriv),
            normalization_note: format!("classical q-scale functions, q = {q}, W(0) = 0, Z(0) = 1"),
        })
    }

    pub fn step(&self) -> f64 {
        (self.grid_hi - self.grid_lo) / self.n as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        uniform_grid(self.grid_lo, self.grid_hi, self.n)
    }

    /// CSV with header `x,W,Wprime[,Z,Zprime]` and 17 significant digits.
    pub fn to_csv(&self) -> String {
        let with_z = self.z_values.is_some() && self.z_deriv.is_some();
        let mut out = String::from(if with_z { "x,W,Wprime,Z,Zprime\n" } else { "x,W,Wprime\n" });
        for (i, x) in self.grid().iter().enumerate() {
            let _ = write!(out, "{:.16e},{:.16e},{:.16e}", x, self.w_values[i], self.w_deriv[i]);
            if let (Some(z), Some(zd)) = (&self.z_values, &self.z_deriv) {
                let _ = write!(out, ",{:.16e},{:.16e}", z[i], zd[i]);
            }
            out.push('\n');
        }
        out
    }
}
