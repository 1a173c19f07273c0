//! Numerical inversion of Laplace transforms along a Talbot-type contour.
//!
//! The contour is the optimized cotangent contour of Weideman and Trefethen,
//! `z(θ) = σ₀ + (N/t)(−0.6122 + 0.5017·θ·cot(0.6407·θ) + 0.2645·iθ)`,
//! discretized with the midpoint rule in `θ`. Every singularity of the
//! transform must lie on or left of `σ₀` along the real axis.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

const C0: f64 = -0.6122;
const C1: f64 = 0.5017;
const C2: f64 = 0.2645;
const ALPHA: f64 = 0.6407;

pub const DEFAULT_NODES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TalbotInverter {
    nodes: usize,
}

impl Default for TalbotInverter {
    fn default() -> Self {
        Self {
            nodes: DEFAULT_NODES,
        }
    }
}

impl TalbotInverter {
    pub fn new(nodes: usize) -> Result<Self> {
        if nodes < 4 || nodes % 2 != 0 {
            return Err(Error::InvalidParameter {
                name: "nodes",
                value: nodes as f64,
                reason: "contour needs an even number of nodes, at least 4",
            });
        }
        Ok(Self { nodes })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    /// Recovers `f(t)` from its transform `F`, analytic to the right of
    /// `abscissa` (and conjugate-symmetric, `F(z̄) = conj F(z)`).
    pub fn invert<F>(&self, transform: F, t: f64, abscissa: f64) -> Result<f64>
    where
        F: Fn(Complex64) -> Complex64,
    {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::InvalidParameter {
                name: "t",
                value: t,
                reason: "inversion point must be positive",
            });
        }
        let n = self.nodes as f64;
        let scale = n / t;
        let h = 2.0 * PI / n;
        let mut acc = 0.0;
        // Conjugate symmetry: only the upper half of the contour is summed.
        for k in 0..self.nodes / 2 {
            let theta = (k as f64 + 0.5) * h;
            let (s, c) = (ALPHA * theta).sin_cos();
            let cot = c / s;
            let z = Complex64::new(
                abscissa + scale * (C0 + C1 * theta * cot),
                scale * C2 * theta,
            );
            let dz = Complex64::new(
                scale * C1 * (cot - ALPHA * theta / (s * s)),
                scale * C2,
            );
            let term = (z * t).exp() * transform(z) * dz;
            acc += term.im;
        }
        let value = acc * 2.0 / n;
        if !value.is_finite() {
            return Err(Error::Inversion {
                x: t,
                nodes: self.nodes,
                shift: abscissa,
                value,
            });
        }
        Ok(value)
    }
}
