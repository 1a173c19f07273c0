use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    #[error("sigma = {sigma} gives paths of bounded variation; a Gaussian component is required")]
    BoundedVariation { sigma: f64 },

    #[error("exit interval must satisfy b < x < a, got b = {b}, x = {x}, a = {a}")]
    Ordering { b: f64, x: f64, a: f64 },

    #[error("root search for Psi(lambda) = {q} did not converge: bracket [{lo}, {hi}] after {iterations} iterations")]
    RootNotConverged {
        q: f64,
        lo: f64,
        hi: f64,
        iterations: usize,
    },

    #[error("Laplace inversion failed at x = {x} ({nodes} nodes, contour shift {shift}): value {value}")]
    Inversion {
        x: f64,
        nodes: usize,
        shift: f64,
        value: f64,
    },

    #[error("potential value {value} at {at:?} violates declared bound [0, {bound}]")]
    PotentialBound {
        value: f64,
        bound: f64,
        at: (f64, f64),
    },

    #[error("non-finite value in {context} at x = {x}")]
    NonFinite { context: &'static str, x: f64 },

    #[error("{what} = {value} lies outside [{lo}, {hi}]")]
    OutOfRange {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("tail integral not converged: last increment {last_increment:e} > {tolerance:e} at a_max = {a_max}")]
    TailNotConverged {
        a_max: f64,
        last_increment: f64,
        tolerance: f64,
    },

    #[error("{censored} of {paths} paths hit the time cap (more than 0.1%)")]
    Censored { censored: usize, paths: usize },

    #[error("general overshoot weights need a pure-Gaussian model; jump models are Monte Carlo only")]
    OvershootUnsupported,

    #[error("occupation bandwidth {bandwidth} is below the level spacing {spacing}")]
    Bandwidth { bandwidth: f64, spacing: f64 },

    #[error("estimand sets do not match: {0}")]
    EstimandMismatch(String),
}
