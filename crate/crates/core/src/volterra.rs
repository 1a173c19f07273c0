//! Renewal equations for `W^(f)(·, b)` and `Z^(f)(·, b)`:
//!
//! ```text
//! W^(f)(u, b) = W(u − b) + ∫_b^u W(u − z) f(z) W^(f)(z, b) dz
//! Z^(f)(u, b) = 1        + ∫_b^u W(u − z) f(z) Z^(f)(z, b) dz
//! ```
//!
//! solved by a product-trapezoid march. Since `W(0) = 0` the diagonal term
//! drops out and each node is explicit. Cells holding a declared breakpoint of
//! `f` are split there, with `f` taken at the sub-cell midpoints.

use serde::{Deserialize, Serialize};

use crate::classical::{ScaleFunctions, ScaleTable};
use crate::error::{Error, Result};
use crate::levy::LevyModel;
use crate::potential::UnivariatePotential;
use crate::quad::uniform_grid;

pub const MIN_INTERVALS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolterraSolution {
    pub base: ScaleTable,
    pub z_table: ScaleTable,
    pub b: f64,
    pub grid_step: f64,
}

impl VolterraSolution {
    /// `W^(f)(u, b)` by cubic Hermite interpolation between nodes.
    pub fn w_f(&self, u: f64) -> Result<f64> {
        hermite(&self.base.w_values, &self.base.w_deriv, self.b, self.grid_step, u)
    }

    pub fn z_f(&self, u: f64) -> Result<f64> {
        let (z, zd) = self.z_columns();
        hermite(z, zd, self.b, self.grid_step, u)
    }

    fn z_columns(&self) -> (&[f64], &[f64]) {
        (&self.z_table.w_values, &self.z_table.w_deriv)
    }
}

fn hermite(y: &[f64], dy: &[f64], lo: f64, h: f64, u: f64) -> Result<f64> {
    let n = y.len() - 1;
    let hi = lo + h * n as f64;
    if !(u >= lo && u <= hi * (1.0 + 1e-14)) {
        return Err(Error::OutOfRange {
            what: "renewal solution argument",
            value: u,
            lo,
            hi,
        });
    }
    let pos = ((u - lo) / h).max(0.0);
    let i = (pos.floor() as usize).min(n - 1);
    let t = pos - i as f64;
    let (t2, t3) = (t * t, t * t * t);
    Ok((2.0 * t3 - 3.0 * t2 + 1.0) * y[i]
        + (t3 - 2.0 * t2 + t) * h * dy[i]
        + (-2.0 * t3 + 3.0 * t2) * y[i + 1]
        + (t3 - t2) * h * dy[i + 1])
}

/// Raw columns of one march over `b = u₀ < … < u_n = hi`.
#[derive(Debug, Clone)]
pub(crate) struct March {
    pub w: Vec<f64>,
    pub w_deriv: Vec<f64>,
    pub z: Vec<f64>,
    pub z_deriv: Vec<f64>,
    /// `W(hi − b)` and `W'(hi − b)` as sampled by the march.
    pub kernel_end: f64,
    pub kernel_slope_end: f64,
}

/// A grid cell `[u_j, u_{j+1}]` split at `u_j + θh`.
struct SplitCell {
    j: usize,
    theta: f64,
    f_left: f64,
    f_right: f64,
    /// `W((m − θ)h)` and `W'((m − θ)h)` at index `m − 1`, `m = 1..=n − j`.
    w_shift: Vec<f64>,
    wp_shift: Vec<f64>,
}

impl SplitCell {
    /// Cell contribution (without the factor `h`) to node `n` of a column,
    /// minus what the plain trapezoid already counted. `y_right` overrides
    /// `y[j + 1]`, so the implicit last cell can pass zero.
    #[allow(clippy::too_many_arguments)]
    fn correction(&self, n: usize, k: &[f64], shift: &[f64], f: &[f64], y: &[f64], y_right: f64) -> f64 {
        let (j, th) = (self.j, self.theta);
        let m = n - j;
        let yl = y[j];
        let yp = (1.0 - th) * yl + th * y_right;
        let ks = shift[m - 1];
        let split = 0.5 * th * self.f_left * (k[m] * yl + ks * yp)
            + 0.5 * (1.0 - th) * self.f_right * (ks * yp + k[m - 1] * y_right);
        let plain = 0.5 * (k[m] * f[j] * yl + k[m - 1] * f[j + 1] * y_right);
        split - plain
    }

    /// Coefficient of `y[n]` in the split contribution when `n = j + 1`.
    fn implicit_coefficient(&self) -> f64 {
        let th = self.theta;
        let ks = self.w_shift[0];
        0.5 * th * th * self.f_left * ks + 0.5 * (1.0 - th) * th * self.f_right * ks
    }
}

fn kernel_value(sf: &ScaleFunctions, x: f64) -> Result<f64> {
    let v = sf.w(x)?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { context: "renewal kernel W", x })
    }
}

fn kernel_slope(sf: &ScaleFunctions, x: f64) -> Result<f64> {
    let v = if x <= 0.0 { sf.w_prime_at_zero() } else { sf.w_prime_unchecked(x) };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { context: "renewal kernel W'", x })
    }
}

/// `½k[n]ψ[0] + Σ_{j=1}^{n−1} k[n−j]ψ[j] + ½k[0]ψ[n]`, with `ψ[n]` omitted
/// unless `with_last`.
fn trapezoid_convolution(k: &[f64], psi: &[f64], n: usize, with_last: bool) -> f64 {
    let mut acc = 0.5 * k[n] * psi[0];
    if n >= 2 {
        acc += k[1..n].iter().rev().zip(&psi[1..n]).map(|(a, b)| a * b).sum::<f64>();
    }
    if with_last {
        acc += 0.5 * k[0] * psi[n];
    }
    acc
}

/// Marches both renewal equations with `q = 0` scale functions `sf`.
pub(crate) fn march(
    sf: &ScaleFunctions,
    f: &UnivariatePotential,
    b: f64,
    hi: f64,
    n: usize,
) -> Result<March> {
    if !(hi > b) || !b.is_finite() || !hi.is_finite() {
        return Err(Error::Ordering { b, x: b, a: hi });
    }
    if n < MIN_INTERVALS {
        return Err(Error::InvalidParameter {
            name: "n",
            value: n as f64,
            reason: "renewal march needs at least 16 intervals",
        });
    }
    let h = (hi - b) / n as f64;
    let grid = uniform_grid(b, hi, n);

    let mut k = Vec::with_capacity(n + 1);
    let mut kp = Vec::with_capacity(n + 1);
    for m in 0..=n {
        let x = m as f64 * h;
        k.push(kernel_value(sf, x)?);
        kp.push(kernel_slope(sf, x)?);
    }
    let fv = grid
        .iter()
        .map(|&u| f.query(u))
        .collect::<Result<Vec<_>>>()
        ?;

    let mut cells: Vec<SplitCell> = Vec::new();
    let mut push_cell = |j: usize, theta: f64| -> Result<()> {
        if j >= n || cells.iter().any(|c| c.j == j) {
            return Ok(());
        }
        let (lo, p, up) = (grid[j], grid[j] + theta * h, grid[j + 1]);
        let f_left = f.query(0.5 * (lo + p))?;
        let f_right = f.query(0.5 * (p + up))?;
        let mut w_shift = Vec::with_capacity(n - j);
        let mut wp_shift = Vec::with_capacity(n - j);
        for m in 1..=(n - j) {
            let x = (m as f64 - theta) * h;
            w_shift.push(kernel_value(sf, x)?);
            wp_shift.push(kernel_slope(sf, x)?);
        }
        cells.push(SplitCell {
            j,
            theta,
            f_left,
            f_right,
            w_shift,
            wp_shift,
        });
        Ok(())
    };
    for &p in f.breakpoints() {
        if p < b || p > hi {
            continue;
        }
        let pos = (p - b) / h;
        let j = (pos.floor() as usize).min(n - 1);
        let theta = (pos - j as f64).clamp(0.0, 1.0);
        if theta < 1e-9 {
            if j > 0 {
                push_cell(j - 1, 1.0)?;
            }
            push_cell(j, 0.0)?;
        } else if theta > 1.0 - 1e-9 {
            push_cell(j, 1.0)?;
            push_cell(j + 1, 0.0)?;
        } else {
            push_cell(j, theta)?;
        }
    }
    cells.sort_by_key(|c| c.j);

    let mut w = vec![0.0; n + 1];
    let mut wd = vec![0.0; n + 1];
    let mut z = vec![0.0; n + 1];
    let mut zd = vec![0.0; n + 1];
    let mut phi_w = vec![0.0; n + 1];
    let mut phi_z = vec![0.0; n + 1];
    wd[0] = kp[0];
    z[0] = 1.0;
    phi_z[0] = fv[0];

    for i in 1..=n {
        let mut sw = trapezoid_convolution(&k, &phi_w, i, false);
        let mut sz = trapezoid_convolution(&k, &phi_z, i, false);
        let mut implicit = 0.0;
        for c in cells.iter().take_while(|c| c.j < i) {
            let last = c.j + 1 == i;
            let (yw, yz) = if last { (0.0, 0.0) } else { (w[c.j + 1], z[c.j + 1]) };
            sw += c.correction(i, &k, &c.w_shift, &fv, &w, yw);
            sz += c.correction(i, &k, &c.w_shift, &fv, &z, yz);
            if last {
                implicit = c.implicit_coefficient();
            }
        }
        let denom = 1.0 - h * implicit;
        w[i] = (k[i] + h * sw) / denom;
        z[i] = (1.0 + h * sz) / denom;
        phi_w[i] = fv[i] * w[i];
        phi_z[i] = fv[i] * z[i];

        let mut dw = trapezoid_convolution(&kp, &phi_w, i, true);
        let mut dz = trapezoid_convolution(&kp, &phi_z, i, true);
        for c in cells.iter().take_while(|c| c.j < i) {
            dw += c.correction(i, &kp, &c.wp_shift, &fv, &w, w[c.j + 1]);
            dz += c.correction(i, &kp, &c.wp_shift, &fv, &z, z[c.j + 1]);
        }
        wd[i] = kp[i] + h * dw;
        zd[i] = h * dz;
        if !(w[i].is_finite() && z[i].is_finite() && wd[i].is_finite() && zd[i].is_finite()) {
            return Err(Error::NonFinite {
                context: "renewal march",
                x: grid[i],
            });
        }
    }
    Ok(March {
        w,
        w_deriv: wd,
        z,
        z_deriv: zd,
        kernel_end: k[n],
        kernel_slope_end: kp[n],
    })
}

/// Solves both renewal equations on `[b, hi]` with `n` intervals.
pub fn solve(model: &LevyModel, f: &UnivariatePotential, b: f64, hi: f64, n: usize) -> Result<VolterraSolution> {
    let sf = ScaleFunctions::new(*model, 0.0)?;
    let m = march(&sf, f, b, hi, n)?;
    let table = |values, deriv, note: &str| ScaleTable {
        grid_lo: b,
        grid_hi: hi,
        n,
        w_values: values,
        w_deriv: deriv,
        z_values: None,
        z_deriv: None,
        normalization_note: note.to_string(),
    };
    Ok(VolterraSolution {
        base: table(m.w, m.w_deriv, "W^(f)(u, b) against u; W^(f)(b, b) = 0"),
        z_table: table(m.z, m.z_deriv, "Z^(f)(u, b) against u; Z^(f)(b, b) = 1"),
        b,
        grid_step: (hi - b) / n as f64,
    })
}

/// `W^(f)(·, b)` on `[b, hi]`. The `Z^(f)` table comes from the same march.
pub fn solve_w_f(model: &LevyModel, f: &UnivariatePotential, b: f64, hi: f64, n: usize) -> Result<VolterraSolution> {
    solve(model, f, b, hi, n)
}

/// `Z^(f)(·, b)` on `[b, hi]`. The `W^(f)` table comes from the same march.
pub fn solve_z_f(model: &LevyModel, f: &UnivariatePotential, b: f64, hi: f64, n: usize) -> Result<VolterraSolution> {
    solve(model, f, b, hi, n)
}
