//! Non-negative bounded potentials: univariate `f(x)` for the renewal
//! equations and bivariate `F(s, x)` of (running supremum, position).
//!
//! A potential may list the points where it jumps. The renewal solver splits
//! grid cells there so discontinuous potentials keep second-order accuracy.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

type UniFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type BiFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type SliceBreaks = Arc<dyn Fn(f64) -> Vec<f64> + Send + Sync>;

#[derive(Clone)]
pub struct UnivariatePotential {
    eval: UniFn,
    bound: f64,
    breakpoints: Vec<f64>,
}

impl fmt::Debug for UnivariatePotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UnivariatePotential")
            .field("bound", &self.bound)
            .field("breakpoints", &self.breakpoints)
            .finish_non_exhaustive()
    }
}

fn check_bound(bound: f64) -> Result<()> {
    if bound >= 0.0 && bound.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "bound",
            value: bound,
            reason: "declared bound must be finite and non-negative",
        })
    }
}

impl UnivariatePotential {
    pub fn new<F>(bound: f64, eval: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        check_bound(bound)?;
        Ok(Self {
            eval: Arc::new(eval),
            bound,
            breakpoints: Vec::new(),
        })
    }

    pub fn constant(value: f64) -> Result<Self> {
        Self::new(value, move |_| value)
    }

    /// Declares the points where the potential is discontinuous.
    pub fn with_breakpoints(mut self, mut points: Vec<f64>) -> Self {
        points.retain(|p| p.is_finite());
        points.sort_by(f64::total_cmp);
        points.dedup();
        self.breakpoints = points;
        self
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    /// Evaluates and enforces `0 ≤ f(x) ≤ bound`.
    pub fn query(&self, x: f64) -> Result<f64> {
        let v = (self.eval)(x);
        if v >= 0.0 && v <= self.bound {
            Ok(v)
        } else {
            Err(Error::PotentialBound {
                value: v,
                bound: self.bound,
                at: (f64::NAN, x),
            })
        }
    }
}

#[derive(Clone)]
pub struct BivariatePotential {
    eval: BiFn,
    bound: f64,
    slice_breaks: Option<SliceBreaks>,
    sup_breaks: Vec<f64>,
    depends_on_supremum: bool,
}

impl fmt::Debug for BivariatePotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BivariatePotential")
            .field("bound", &self.bound)
            .field("depends_on_supremum", &self.depends_on_supremum)
            .finish_non_exhaustive()
    }
}

impl BivariatePotential {
    pub fn new<F>(bound: f64, eval: F) -> Result<Self>
    where
        F: Fn(f64, f64) -> f64 + Send + Sync + 'static,
    {
        check_bound(bound)?;
        Ok(Self {
            eval: Arc::new(eval),
            bound,
            slice_breaks: None,
            sup_breaks: Vec::new(),
            depends_on_supremum: true,
        })
    }

    /// Breakpoints in `x` of the slice `x ↦ F(s, x)`, as a function of `s`.
    pub fn with_slice_breakpoints<B>(mut self, breaks: B) -> Self
    where
        B: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        self.slice_breaks = Some(Arc::new(breaks));
        self
    }

    /// Supremum levels where `s ↦ F(s, ·)` changes abruptly.
    pub fn with_supremum_breakpoints(mut self, mut points: Vec<f64>) -> Self {
        points.retain(|p| p.is_finite());
        points.sort_by(f64::total_cmp);
        points.dedup();
        self.sup_breaks = points;
        self
    }

    pub fn supremum_breakpoints(&self) -> &[f64] {
        &self.sup_breaks
    }

    pub fn zero() -> Self {
        Self::lift(&UnivariatePotential::constant(0.0).expect("zero is a valid potential"))
    }

    pub fn constant(value: f64) -> Result<Self> {
        Ok(Self::lift(&UnivariatePotential::constant(value)?))
    }

    /// `F(s, x) := f(x)`, ignoring the supremum.
    pub fn lift(f: &UnivariatePotential) -> Self {
        let inner = f.eval.clone();
        let breaks = f.breakpoints.clone();
        Self {
            eval: Arc::new(move |_, x| inner(x)),
            bound: f.bound,
            slice_breaks: Some(Arc::new(move |_| breaks.clone())),
            sup_breaks: f.breakpoints.clone(),
            depends_on_supremum: false,
        }
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn depends_on_supremum(&self) -> bool {
        self.depends_on_supremum
    }

    pub fn query(&self, s: f64, x: f64) -> Result<f64> {
        let v = (self.eval)(s, x);
        if v >= 0.0 && v <= self.bound {
            Ok(v)
        } else {
            Err(Error::PotentialBound {
                value: v,
                bound: self.bound,
                at: (s, x),
            })
        }
    }

    /// The potential seen by an excursion below supremum level `s`:
    /// `x ↦ F(s, x)`.
    pub fn frozen(&self, s: f64) -> UnivariatePotential {
        let inner = self.eval.clone();
        let breaks = self.slice_breaks.as_ref().map(|b| b(s)).unwrap_or_default();
        UnivariatePotential {
            eval: Arc::new(move |x| inner(s, x)),
            bound: self.bound,
            breakpoints: Vec::new(),
        }
        .with_breakpoints(breaks)
    }

    /// True when `F ≡ 0` is known structurally.
    pub fn is_identically_zero(&self) -> bool {
        self.bound == 0.0
    }
}

/// The built-in potentials addressable by name, e.g. `const:0.5`,
/// `reflected:0.4`, `indicator:0.5,0.25`, `level:0.5,0.5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NamedPotential {
    /// `q`
    Const { q: f64 },
    /// `min(c·(s − x), bound)`, clipped below at zero
    Reflected { c: f64, bound: f64 },
    /// `c·1{s − x > r}`
    Indicator { c: f64, r: f64 },
    /// `c·1{x > r}`
    Level { c: f64, r: f64 },
}

pub const DEFAULT_REFLECTED_BOUND: f64 = 2.0;

impl NamedPotential {
    pub fn bivariate(&self) -> Result<BivariatePotential> {
        self.validate()?;
        Ok(match *self {
            NamedPotential::Const { q } => BivariatePotential::constant(q)?,
            NamedPotential::Level { .. } => BivariatePotential::lift(&self.univariate()?.expect("level is univariate")),
            NamedPotential::Reflected { c, bound } => {
                BivariatePotential::new(bound, move |s, x| (c * (s - x)).clamp(0.0, bound))?
            }
            NamedPotential::Indicator { c, r } => {
                BivariatePotential::new(c, move |s, x| if s - x > r { c } else { 0.0 })?
                    .with_slice_breakpoints(move |s| vec![s - r])
            }
        })
    }

    /// The position-only potentials, for renewal equations and local times.
    pub fn univariate(&self) -> Result<Option<UnivariatePotential>> {
        self.validate()?;
        Ok(match *self {
            NamedPotential::Const { q } => Some(UnivariatePotential::constant(q)?),
            NamedPotential::Level { c, r } => Some(
                UnivariatePotential::new(c, move |x| if x > r { c } else { 0.0 })?
                    .with_breakpoints(vec![r]),
            ),
            _ => None,
        })
    }

    pub fn bound(&self) -> f64 {
        match *self {
            NamedPotential::Const { q } => q,
            NamedPotential::Reflected { bound, .. } => bound,
            NamedPotential::Indicator { c, .. } | NamedPotential::Level { c, .. } => c,
        }
    }

    fn validate(&self) -> Result<()> {
        let (name, value) = match *self {
            NamedPotential::Const { q } => ("q", q),
            NamedPotential::Reflected { c, bound } => {
                check_bound(bound)?;
                ("c", c)
            }
            NamedPotential::Indicator { c, r } | NamedPotential::Level { c, r } => {
                if !r.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "r",
                        value: r,
                        reason: "threshold must be finite",
                    });
                }
                ("c", c)
            }
        };
        if value >= 0.0 && value.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name,
                value,
                reason: "potential coefficient must be finite and non-negative",
            })
        }
    }
}

impl fmt::Display for NamedPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NamedPotential::Const { q } => write!(f, "const:{q}"),
            NamedPotential::Reflected { c, bound } => write!(f, "reflected:{c},{bound}"),
            NamedPotential::Indicator { c, r } => write!(f, "indicator:{c},{r}"),
            NamedPotential::Level { c, r } => write!(f, "level:{c},{r}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot parse potential `{input}`: {reason}")]
pub struct ParsePotentialError {
    pub input: String,
    pub reason: String,
}

impl FromStr for NamedPotential {
    type Err = ParsePotentialError;

    fn from_str(input: &str) -> std::result::Result<Self, Self::Err> {
        let fail = |reason: &str| ParsePotentialError {
            input: input.to_string(),
            reason: reason.to_string(),
        };
        let (name, args) = input.split_once(':').ok_or_else(|| fail("expected name:args"))?;
        let nums = args
            .split(',')
            .map(|a| a.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| fail(&e.to_string()))?;
        let parsed = match (name, nums.as_slice()) {
            ("const", [q]) => NamedPotential::Const { q: *q },
            ("reflected", [c]) => NamedPotential::Reflected {
                c: *c,
                bound: DEFAULT_REFLECTED_BOUND,
            },
            ("reflected", [c, bound]) => NamedPotential::Reflected { c: *c, bound: *bound },
            ("indicator", [c, r]) => NamedPotential::Indicator { c: *c, r: *r },
            ("level", [c, r]) => NamedPotential::Level { c: *c, r: *r },
            ("const" | "reflected" | "indicator" | "level", _) => {
                return Err(fail("wrong number of arguments"))
            }
            _ => return Err(fail("unknown potential; use const, reflected, indicator or level")),
        };
        parsed.validate().map_err(|e| fail(&e.to_string()))?;
        Ok(parsed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn query_enforces_declared_bound() {
        let f = UnivariatePotential::new(1.0, |x| x).unwrap();
        assert_eq!(f.query(0.5).unwrap(), 0.5);
        assert!(matches!(f.query(2.0), Err(Error::PotentialBound { .. })));
        assert!(f.query(-0.1).is_err());
        assert!(UnivariatePotential::new(-1.0, |_| 0.0).is_err());
        let g = BivariatePotential::new(1.0, |s, x| s - x).unwrap();
        assert!(g.query(3.0, 0.0).is_err());
    }

    #[test]
    fn named_potentials_parse_and_evaluate() {
        let p: NamedPotential = "reflected:0.4".parse().unwrap();
        assert_eq!(p, NamedPotential::Reflected { c: 0.4, bound: 2.0 });
        let f = p.bivariate().unwrap();
        assert!((f.query(1.0, 0.5).unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(f.query(10.0, 0.0).unwrap(), 2.0);
        assert!(f.depends_on_supremum());

        let ind: NamedPotential = "indicator:0.5,0.25".parse().unwrap();
        let g = ind.bivariate().unwrap();
        assert_eq!(g.query(1.0, 0.5).unwrap(), 0.5);
        assert_eq!(g.query(1.0, 0.8).unwrap(), 0.0);
        assert_eq!(g.frozen(1.0).breakpoints(), &[0.75]);

        let lvl: NamedPotential = "level:0.5,0.5".parse().unwrap();
        let u = lvl.univariate().unwrap().unwrap();
        assert_eq!(u.query(0.4).unwrap(), 0.0);
        assert_eq!(u.query(0.6).unwrap(), 0.5);
        assert!(!lvl.bivariate().unwrap().depends_on_supremum());

        for bad in ["const", "const:", "const:-1", "level:1", "wave:1", "reflected:a"] {
            assert!(bad.parse::<NamedPotential>().is_err(), "{bad}");
        }
        for p in [p, ind, lvl, NamedPotential::Const { q: 0.5 }] {
            assert_eq!(p.to_string().parse::<NamedPotential>().unwrap(), p);
        }
    }

    #[test]
    fn frozen_slice_reads_the_supremum() {
        let f = BivariatePotential::new(5.0, |s, x| s - x).unwrap();
        let slice = f.frozen(2.0);
        assert_eq!(slice.query(0.5).unwrap(), 1.5);
        assert_eq!(slice.bound(), 5.0);
    }
}
