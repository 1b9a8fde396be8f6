//! Deterministic integrands on the simplex.
//!
//! An integrand is `h(θ_1, …, θ_n, t) = g(θ_1, …, θ_n) · τ(t)` where the time
//! factor `τ(t) = t^β` is optional. Only ordered arguments `θ_1 <= … <= θ_n`
//! are ever passed to `g`.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::Regime;

/// Largest supported chaos order.
pub const MAX_ORDER: usize = 3;

#[derive(Clone)]
pub enum Spatial {
    /// `g ≡ c`.
    Const(f64),
    /// `g(θ) = Π_i θ_i^{p_i}`.
    Poly(Vec<f64>),
    /// `g(θ) = |θ_n - anchor|^{-α}`.
    Singular { alpha: f64, anchor: f64 },
    Custom {
        label: String,
        func: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
    },
}

impl fmt::Debug for Spatial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.descriptor())
    }
}

impl Spatial {
    pub fn eval(&self, theta: &[f64]) -> f64 {
        match self {
            Spatial::Const(c) => *c,
            Spatial::Poly(p) => theta.iter().zip(p).map(|(x, e)| x.powf(*e)).product(),
            Spatial::Singular { alpha, anchor } => {
                (theta[theta.len() - 1] - anchor).abs().powf(-alpha)
            }
            Spatial::Custom { func, .. } => func(theta),
        }
    }

    /// Value representing the cell with midpoints `mids` whose last
    /// coordinate spans `(lo, hi)`. The singular integrand uses its exact
    /// average in the last coordinate, since its midpoint value misses most of
    /// the mass next to the anchor; everything else is sampled at midpoints.
    pub fn cell_value(&self, mids: &[f64], (lo, hi): (f64, f64)) -> f64 {
        match self {
            Spatial::Singular { alpha, anchor } if *alpha < 1.0 => {
                let prim = |x: f64| {
                    let d = x - anchor;
                    d.signum() * d.abs().powf(1.0 - alpha) / (1.0 - alpha)
                };
                (prim(hi) - prim(lo)) / (hi - lo)
            }
            _ => self.eval(mids),
        }
    }

    pub fn descriptor(&self) -> String {
        match self {
            Spatial::Const(c) if *c == 1.0 => "const".into(),
            Spatial::Const(c) => format!("const:{c}"),
            Spatial::Poly(p) => {
                let parts: Vec<String> = p.iter().map(|e| e.to_string()).collect();
                format!("poly:{}", parts.join(","))
            }
            Spatial::Singular { alpha, anchor } => format!("singular:{alpha}@{anchor}"),
            Spatial::Custom { label, .. } => format!("custom:{label}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Regularity {
    /// `h ∈ L^q`, smooth regime, `qH > 1`.
    Lq { q: f64 },
    /// Simplex-Hölder of order `λ`, rough regime, `λ + H > 1/2`.
    SimplexHolder { lambda: f64 },
}

#[derive(Debug, Clone)]
pub struct IntegrandSpec {
    pub order: usize,
    pub spatial: Spatial,
    /// Exponent `β` of the time factor `t^β`, if the integrand depends on `t`.
    pub time_exponent: Option<f64>,
    pub regularity: Regularity,
    /// Hölder order of `h` in its time slot.
    pub time_regularity: Option<f64>,
}

impl IntegrandSpec {
    pub fn new(order: usize, spatial: Spatial, regularity: Regularity) -> Self {
        Self {
            order,
            spatial,
            time_exponent: None,
            regularity,
            time_regularity: None,
        }
    }

    pub fn with_time_exponent(mut self, beta: f64) -> Self {
        self.time_exponent = Some(beta);
        self.time_regularity = Some(beta.min(1.0));
        self
    }

    /// Parse `const`, `const:<c>`, `poly:<p1>,…,<pn>`, `time_dep:<β>` or
    /// `singular:<α>@<anchor>`.
    pub fn parse(descriptor: &str, order: usize, regularity: Regularity) -> Result<Self> {
        let bad = |msg: &str| Error::InvalidInput(format!("integrand '{descriptor}': {msg}"));
        let num = |s: &str| -> Result<f64> {
            s.trim()
                .parse::<f64>()
                .map_err(|_| bad(&format!("'{s}' is not a number")))
        };
        let (kind, arg) = match descriptor.split_once(':') {
            Some((k, a)) => (k.trim(), Some(a)),
            None => (descriptor.trim(), None),
        };
        let spec = match (kind, arg) {
            ("const", None) => Self::new(order, Spatial::Const(1.0), regularity),
            ("const", Some(a)) => Self::new(order, Spatial::Const(num(a)?), regularity),
            ("poly", Some(a)) => {
                let p = a.split(',').map(num).collect::<Result<Vec<f64>>>()?;
                if p.len() != order {
                    return Err(bad(&format!("{} exponents for order {order}", p.len())));
                }
                Self::new(order, Spatial::Poly(p), regularity)
            }
            ("time_dep", Some(a)) => {
                let beta = num(a)?;
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(bad("time exponent must lie in (0,1)"));
                }
                Self::new(order, Spatial::Const(1.0), regularity).with_time_exponent(beta)
            }
            ("singular", Some(a)) => {
                let (alpha, anchor) = a.split_once('@').ok_or_else(|| bad("expected α@anchor"))?;
                Self::new(
                    order,
                    Spatial::Singular {
                        alpha: num(alpha)?,
                        anchor: num(anchor)?,
                    },
                    regularity,
                )
            }
            _ => return Err(bad("unknown kind")),
        };
        Ok(spec)
    }

    pub fn descriptor(&self) -> String {
        match (&self.spatial, self.time_exponent) {
            (Spatial::Const(c), Some(beta)) if *c == 1.0 => format!("time_dep:{beta}"),
            (s, Some(beta)) => format!("{}*t^{beta}", s.descriptor()),
            (s, None) => s.descriptor(),
        }
    }

    /// Check the order and the regime/regularity pairing.
    pub fn validate(&self, hurst: f64) -> Result<()> {
        let regime = Regime::of(hurst)?;
        if self.order == 0 || self.order > MAX_ORDER {
            return Err(Error::InvalidInput(format!(
                "chaos order {} outside 1..={MAX_ORDER}",
                self.order
            )));
        }
        if let Spatial::Poly(p) = &self.spatial {
            if p.len() != self.order {
                return Err(Error::InvalidInput(
                    "one exponent per argument required".into(),
                ));
            }
        }
        match (self.regularity, regime) {
            (Regularity::Lq { q }, Regime::Smooth | Regime::Standard) => {
                if !(q * hurst > 1.0) {
                    return Err(Error::Regularity(format!(
                        "L^q needs qH > 1, got q={q}, H={hurst}"
                    )));
                }
            }
            (Regularity::SimplexHolder { lambda }, Regime::Rough | Regime::Standard) => {
                if !(lambda > 0.0 && lambda <= 1.0 && lambda + hurst > 0.5) {
                    return Err(Error::Regularity(format!(
                        "Hölder order λ={lambda} needs 0 < λ <= 1 and λ + H > 1/2 (H={hurst})"
                    )));
                }
            }
            (Regularity::Lq { .. }, Regime::Rough) => {
                return Err(Error::Regularity("L^q integrands need H > 1/2".into()));
            }
            (Regularity::SimplexHolder { .. }, Regime::Smooth) => {
                return Err(Error::Regularity(
                    "Hölder integrands are for H < 1/2".into(),
                ));
            }
        }
        if self.time_exponent.is_some() && self.time_regularity.is_none() {
            return Err(Error::Regularity(
                "time-dependent integrand needs a declared β".into(),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, theta: &[f64]) -> f64 {
        self.spatial.eval(theta)
    }

    #[inline]
    pub fn cell_value(&self, mids: &[f64], last_cell: (f64, f64)) -> f64 {
        self.spatial.cell_value(mids, last_cell)
    }

    pub fn time_factor(&self, t: f64) -> f64 {
        match self.time_exponent {
            Some(beta) => t.powf(beta),
            None => 1.0,
        }
    }
}
