//! Quadrature rules shared by the scale-function code.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub error_estimate: f64,
    pub evaluations: usize,
}

const MAX_DEPTH: usize = 48;

/// Adaptive Simpson with Richardson correction, to an absolute tolerance.
pub fn adaptive_simpson<F>(f: F, lo: f64, hi: f64, tol: f64) -> Result<Quadrature>
where
    F: Fn(f64) -> f64,
{
    if !(hi >= lo) {
        return Err(Error::InvalidParameter {
            name: "hi",
            value: hi,
            reason: "upper limit below lower limit",
        });
    }
    if hi == lo {
        return Ok(Quadrature {
            value: 0.0,
            error_estimate: 0.0,
            evaluations: 0,
        });
    }
    let mid = 0.5 * (lo + hi);
    let (fa, fm, fb) = (f(lo), f(mid), f(hi));
    let whole = (hi - lo) / 6.0 * (fa + 4.0 * fm + fb);
    let mut evaluations = 3;
    let mut error_estimate = 0.0;
    let value = simpson_step(
        &f,
        Panel { lo, hi, fa, fm, fb, whole },
        tol,
        MAX_DEPTH,
        &mut evaluations,
        &mut error_estimate,
    );
    if !value.is_finite() {
        return Err(Error::NonFinite {
            context: "adaptive Simpson integrand",
            x: lo,
        });
    }
    Ok(Quadrature {
        value,
        error_estimate,
        evaluations,
    })
}

struct Panel {
    lo: f64,
    hi: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    p: Panel,
    tol: f64,
    depth: usize,
    evaluations: &mut usize,
    error_estimate: &mut f64,
) -> f64 {
    let mid = 0.5 * (p.lo + p.hi);
    let (lm, rm) = (0.5 * (p.lo + mid), 0.5 * (mid + p.hi));
    let (flm, frm) = (f(lm), f(rm));
    *evaluations += 2;
    let left = (mid - p.lo) / 6.0 * (p.fa + 4.0 * flm + p.fm);
    let right = (p.hi - mid) / 6.0 * (p.fm + 4.0 * frm + p.fb);
    let delta = left + right - p.whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        *error_estimate += delta.abs() / 15.0;
        return left + right + delta / 15.0;
    }
    simpson_step(
        f,
        Panel { lo: p.lo, hi: mid, fa: p.fa, fm: flm, fb: p.fm, whole: left },
        0.5 * tol,
        depth - 1,
        evaluations,
        error_estimate,
    ) + simpson_step(
        f,
        Panel { lo: mid, hi: p.hi, fa: p.fm, fm: frm, fb: p.fb, whole: right },
        0.5 * tol,
        depth - 1,
        evaluations,
        error_estimate,
    )
}

/// Composite Simpson on equally spaced samples (odd count, at least 3).
pub fn simpson_uniform(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    assert!(n >= 3 && n % 2 == 1, "Simpson needs an odd number of nodes");
    let mut odd = 0.0;
    let mut even = 0.0;
    for (i, v) in values.iter().enumerate().take(n - 1).skip(1) {
        if i % 2 == 1 {
            odd += v;
        } else {
            even += v;
        }
    }
    step / 3.0 * (values[0] + values[n - 1] + 4.0 * odd + 2.0 * even)
}

/// Running integral `∫_{x₀}^{x_k}` at every node of a uniform grid.
///
/// Even nodes get composite Simpson; odd nodes add the three-point
/// `(5, 8, −1)/12` panel to the preceding even node, so the whole column is
/// third order or better.
pub fn cumulative_simpson(values: &[f64], step: f64) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * step * (values[0] + values[1]);
        return out;
    }
    let mut k = 1;
    while k < n {
        let base = out[k - 1];
        if k + 1 < n {
            out[k] = base + step / 12.0 * (5.0 * values[k - 1] + 8.0 * values[k] - values[k + 1]);
            out[k + 1] = base + step / 3.0 * (values[k - 1] + 4.0 * values[k] + values[k + 1]);
        } else {
            // Last odd panel: mirror the three-point rule backwards.
            out[k] = base + step / 12.0 * (-values[k - 2] + 8.0 * values[k - 1] + 5.0 * values[k]);
        }
        k += 2;
    }
    out
}

pub fn uniform_grid(lo: f64, hi: f64, intervals: usize) -> Vec<f64> {
    let step = (hi - lo) / intervals as f64;
    (0..=intervals)
        .map(|i| if i == intervals { hi } else { lo + step * i as f64 })
        .collect()
}

/// Sums in a fixed binary tree, so the result does not depend on how the
/// terms were produced.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        n if n <= 8 => values.iter().sum(),
        n => {
            let (l, r) = values.split_at(n / 2);
            pairwise_sum(l) + pairwise_sum(r)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn adaptive_simpson_hits_tolerance() {
        let q = adaptive_simpson(|x: f64| x.sin(), 0.0, std::f64::consts::PI, 1e-12).unwrap();
        assert_relative_eq!(q.value, 2.0, epsilon = 1e-11);
        let q = adaptive_simpson(|x: f64| (-x * x).exp(), -6.0, 6.0, 1e-12).unwrap();
        assert_relative_eq!(q.value, std::f64::consts::PI.sqrt(), epsilon = 1e-11);
        assert_eq!(adaptive_simpson(|x| x, 1.0, 1.0, 1e-9).unwrap().value, 0.0);
        assert!(adaptive_simpson(|x| x, 1.0, 0.0, 1e-9).is_err());
    }

    #[test]
    fn simpson_is_exact_on_cubics() {
        let grid = uniform_grid(0.0, 2.0, 8);
        let vals: Vec<f64> = grid.iter().map(|x| x * x * x - x).collect();
        assert_relative_eq!(simpson_uniform(&vals, 0.25), 4.0 - 2.0, epsilon = 1e-14);
    }

    #[test]
    fn cumulative_matches_antiderivative() {
        for n in [2usize, 3, 10, 11, 64] {
            let grid = uniform_grid(0.0, 1.5, n);
            let step = 1.5 / n as f64;
            let vals: Vec<f64> = grid.iter().map(|x| x.exp()).collect();
            let cum = cumulative_simpson(&vals, step);
            for (x, c) in grid.iter().zip(&cum) {
                let tol = 0.5 * step.powi(4) + 1e-12;
                assert!((c - (x.exp() - 1.0)).abs() < tol, "n={n} x={x}");
            }
        }
    }

    #[test]
    fn pairwise_sum_matches_plain_sum() {
        let v: Vec<f64> = (0..1000).map(|i| i as f64 * 0.5).collect();
        assert_eq!(pairwise_sum(&v), v.iter().sum::<f64>());
    }
}
