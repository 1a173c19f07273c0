//! Spectrally negative Lévy processes with a Gaussian part and optional
//! exponentially distributed downward jumps.
//!
//! Both families have finite jump activity, so a strictly positive `sigma`
//! is what makes the paths of unbounded variation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    BrownianDrift,
    ExpJumpDiffusion,
}

/// Long-run behaviour of the paths, read off the sign of `Ψ'(0+)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftRegime {
    DriftsToPlusInfinity,
    DriftsToMinusInfinity,
    Oscillates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModel")]
pub struct LevyModel {
    family: Family,
    mu: f64,
    sigma: f64,
    jump_rate: f64,
    jump_mean: f64,
}

#[derive(Deserialize)]
struct RawModel {
    family: Family,
    mu: f64,
    sigma: f64,
    jump_rate: f64,
    jump_mean: f64,
}

impl TryFrom<RawModel> for LevyModel {
    type Error = Error;

    fn try_from(raw: RawModel) -> Result<Self> {
        match raw.family {
            Family::BrownianDrift => LevyModel::brownian(raw.mu, raw.sigma),
            Family::ExpJumpDiffusion => {
                LevyModel::exp_jump_diffusion(raw.mu, raw.sigma, raw.jump_rate, raw.jump_mean)
            }
        }
    }
}

fn require_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite",
        })
    }
}

const ROOT_MAX_ITER: usize = 400;

impl LevyModel {
    /// Brownian motion with drift: `Ψ(λ) = μλ + σ²λ²/2`.
    pub fn brownian(mu: f64, sigma: f64) -> Result<Self> {
        require_finite("mu", mu)?;
        require_finite("sigma", sigma)?;
        if sigma <= 0.0 {
            return Err(Error::BoundedVariation { sigma });
        }
        Ok(Self {
            family: Family::BrownianDrift,
            mu,
            sigma,
            jump_rate: 0.0,
            jump_mean: 1.0,
        })
    }

    /// Brownian motion with drift plus compound Poisson downward jumps of
    /// exponential size: `Ψ(λ) = μλ + σ²λ²/2 − rate·λ/(η + λ)`, `η = 1/jump_mean`.
    pub fn exp_jump_diffusion(mu: f64, sigma: f64, rate: f64, jump_mean: f64) -> Result<Self> {
        require_finite("mu", mu)?;
        require_finite("sigma", sigma)?;
        require_finite("rate", rate)?;
        require_finite("jump_mean", jump_mean)?;
        if sigma <= 0.0 {
            return Err(Error::BoundedVariation { sigma });
        }
        if rate < 0.0 {
            return Err(Error::InvalidParameter {
                name: "rate",
                value: rate,
                reason: "jump intensity must be non-negative",
            });
        }
        if jump_mean <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "jump_mean",
                value: jump_mean,
                reason: "mean jump size must be positive",
            });
        }
        Ok(Self {
            family: Family::ExpJumpDiffusion,
            mu,
            sigma,
            jump_rate: rate,
            jump_mean,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn jump_rate(&self) -> f64 {
        self.jump_rate
    }

    pub fn jump_mean(&self) -> f64 {
        self.jump_mean
    }

    /// `η`, the rate parameter of the exponential jump law.
    pub fn jump_decay(&self) -> f64 {
        1.0 / self.jump_mean
    }

    /// True when the model has no jump part that can carry it across a barrier.
    pub fn is_gaussian(&self) -> bool {
        self.family == Family::BrownianDrift || self.jump_rate == 0.0
    }

    pub fn psi(&self, lambda: f64) -> Result<f64> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: lambda,
                reason: "Laplace exponent is only defined for lambda >= 0",
            });
        }
        Ok(self.psi_unchecked(lambda))
    }

    pub(crate) fn psi_unchecked(&self, lambda: f64) -> f64 {
        let gauss = self.mu * lambda + 0.5 * self.sigma * self.sigma * lambda * lambda;
        match self.family {
            Family::BrownianDrift => gauss,
            Family::ExpJumpDiffusion => {
                let eta = self.jump_decay();
                gauss - self.jump_rate * lambda / (eta + lambda)
            }
        }
    }

    /// `Ψ'(λ)` in closed form.
    pub fn psi_prime(&self, lambda: f64) -> f64 {
        let gauss = self.mu + self.sigma * self.sigma * lambda;
        match self.family {
            Family::BrownianDrift => gauss,
            Family::ExpJumpDiffusion => {
                let eta = self.jump_decay();
                gauss - self.jump_rate * eta / ((eta + lambda) * (eta + lambda))
            }
        }
    }

    /// Analytic continuation of `Ψ` to the complex half-plane used by the
    /// Laplace inversion contour.
    pub fn psi_complex(&self, beta: Complex64) -> Complex64 {
        let gauss = beta * self.mu + beta * beta * (0.5 * self.sigma * self.sigma);
        match self.family {
            Family::BrownianDrift => gauss,
            Family::ExpJumpDiffusion => {
                let eta = self.jump_decay();
                gauss - beta * self.jump_rate / (beta + eta)
            }
        }
    }

    /// `Ψ'(0+) = μ − rate·jump_mean`.
    pub fn mean_drift(&self) -> f64 {
        match self.family {
            Family::BrownianDrift => self.mu,
            Family::ExpJumpDiffusion => self.mu - self.jump_rate * self.jump_mean,
        }
    }

    pub fn drift_regime(&self) -> DriftRegime {
        let d = self.mean_drift();
        if d > 0.0 {
            DriftRegime::DriftsToPlusInfinity
        } else if d < 0.0 {
            DriftRegime::DriftsToMinusInfinity
        } else {
            DriftRegime::Oscillates
        }
    }

    pub fn has_unbounded_variation(&self) -> bool {
        self.sigma != 0.0
    }

    /// Right inverse of `Ψ`: the largest `λ ≥ 0` with `Ψ(λ) = q`.
    pub fn phi(&self, q: f64) -> Result<f64> {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::InvalidParameter {
                name: "q",
                value: q,
                reason: "must be finite and non-negative",
            });
        }
        // Left end of the bracket: Ψ ≤ q there and Ψ is increasing to the right.
        let lo = if q > 0.0 {
            0.0
        } else if self.mean_drift() >= 0.0 {
            return Ok(0.0);
        } else {
            self.psi_minimizer()?
        };

        let mut hi = lo.max(1.0);
        let mut iterations = 0;
        while self.psi_unchecked(hi) <= q {
            hi *= 2.0;
            iterations += 1;
            if iterations > 200 || !hi.is_finite() {
                return Err(Error::RootNotConverged {
                    q,
                    lo,
                    hi,
                    iterations,
                });
            }
        }

        let mut lo = lo;
        let mut hi = hi;
        let mut iterations = 0;
        while hi - lo > 1e-14 * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.psi_unchecked(mid) > q {
                hi = mid;
            } else {
                lo = mid;
            }
            iterations += 1;
            if iterations > ROOT_MAX_ITER {
                return Err(Error::RootNotConverged {
                    q,
                    lo,
                    hi,
                    iterations,
                });
            }
        }

        // Newton polish, kept inside the final bracket.
        let mut root = 0.5 * (lo + hi);
        for _ in 0..3 {
            let slope = self.psi_prime(root);
            if slope <= 0.0 {
                break;
            }
            let next = root - (self.psi_unchecked(root) - q) / slope;
            if !(next >= lo && next <= hi) {
                break;
            }
            root = next;
        }
        Ok(root)
    }

    /// Zero of `Ψ'` on `(0, ∞)` when `Ψ'(0+) < 0`.
    fn psi_minimizer(&self) -> Result<f64> {
        let mut hi = 1.0;
        let mut iterations = 0;
        while self.psi_prime(hi) <= 0.0 {
            hi *= 2.0;
            iterations += 1;
            if iterations > 200 {
                return Err(Error::RootNotConverged {
                    q: 0.0,
                    lo: 0.0,
                    hi,
                    iterations,
                });
            }
        }
        let mut lo = 0.0;
        for _ in 0..ROOT_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.psi_prime(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(lo)
    }

    /// Esscher transform with parameter `c`: the model whose exponent is
    /// `Ψ(λ + c) − Ψ(c)`.
    pub fn esscher_tilt(&self, c: f64) -> Result<Self> {
        if !(c >= 0.0) || !c.is_finite() {
            return Err(Error::InvalidParameter {
                name: "c",
                value: c,
                reason: "tilt parameter must be finite and non-negative",
            });
        }
        let mu = self.mu + c * self.sigma * self.sigma;
        match self.family {
            Family::BrownianDrift => Self::brownian(mu, self.sigma),
            Family::ExpJumpDiffusion => {
                let eta = self.jump_decay();
                Self::exp_jump_diffusion(
                    mu,
                    self.sigma,
                    self.jump_rate * eta / (eta + c),
                    1.0 / (eta + c),
                )
            }
        }
    }
}
