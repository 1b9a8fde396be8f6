use std::path::PathBuf;

use fbm_chaos::integrand::{IntegrandSpec, Regularity};
use fbm_chaos::ldp::EventSetSpec;
use fbm_chaos::{Error, Regime, Result};
use serde::{Deserialize, Serialize};

/// One experiment, read from a flat JSON file and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(alias = "H")]
    pub hurst: f64,
    #[serde(default = "one", alias = "T")]
    pub horizon: f64,
    #[serde(default = "default_cells", alias = "N")]
    pub cells: usize,
    #[serde(default = "default_order", alias = "n")]
    pub order: usize,
    #[serde(default = "default_integrand")]
    pub integrand: String,
    /// `L^q` exponent (smooth regime).
    #[serde(default)]
    pub q: Option<f64>,
    /// Simplex-Hölder order (rough regime).
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    /// Output every `stride`-th grid point of simulated paths.
    #[serde(default = "default_order")]
    pub stride: usize,
    /// Increment window `(s, t)` of `moments`; defaults to `(T/2, T)`.
    #[serde(default)]
    pub window: Option<(f64, f64)>,
    /// Anchor, largest width and number of dyadic windows of `bounds`.
    #[serde(default)]
    pub sweep_anchor: Option<f64>,
    #[serde(default)]
    pub sweep_largest: Option<f64>,
    #[serde(default = "default_sweep_points")]
    pub sweep_points: usize,
    /// Hölder exponents of `holder`; defaults to the threshold ± 0.1.
    #[serde(default)]
    pub gammas: Option<Vec<f64>>,
    #[serde(default = "default_event")]
    pub event: EventSetSpec,
    /// Explicit ε ladder of `ldp`; prescanned when absent.
    #[serde(default)]
    pub epsilon_ladder: Option<Vec<f64>>,
    #[serde(default = "default_ladder_points")]
    pub ladder_points: usize,
    /// Tail probabilities aimed at by the two ends of a prescanned ladder.
    #[serde(default = "default_ladder_probabilities")]
    pub ladder_probabilities: (f64, f64),
    #[serde(default = "default_starts")]
    pub rate_starts: usize,
    /// Coarse grid of the rate oracle comparison.
    #[serde(default)]
    pub oracle_cells: Option<usize>,
    /// Where reports go; not part of the experiment, so never echoed back.
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}
fn default_cells() -> usize {
    256
}
fn default_order() -> usize {
    1
}
fn default_integrand() -> String {
    "const".into()
}
fn default_samples() -> usize {
    10_000
}
fn default_sweep_points() -> usize {
    5
}
fn default_event() -> EventSetSpec {
    EventSetSpec::SupAbove { a: 1.0 }
}
fn default_ladder_points() -> usize {
    8
}
fn default_ladder_probabilities() -> (f64, f64) {
    (1e-3, 0.1)
}
fn default_starts() -> usize {
    16
}

impl RunConfig {
    /// Declared regularity, or `L^4` / Hölder-1/2 by regime when neither is set.
    pub fn regularity(&self) -> Result<Regularity> {
        match (self.q, self.lambda) {
            (Some(_), Some(_)) => Err(Error::InvalidInput(
                "set either q or lambda, not both".into(),
            )),
            (Some(q), None) => Ok(Regularity::Lq { q }),
            (None, Some(lambda)) => Ok(Regularity::SimplexHolder { lambda }),
            (None, None) => Ok(match Regime::of(self.hurst)? {
                Regime::Smooth => Regularity::Lq { q: 4.0 },
                _ => Regularity::SimplexHolder { lambda: 0.5 },
            }),
        }
    }

    pub fn integrand_spec(&self) -> Result<IntegrandSpec> {
        let spec = IntegrandSpec::parse(&self.integrand, self.order, self.regularity()?)?;
        spec.validate(self.hurst)?;
        Ok(spec)
    }

    /// Exponent below which grid Hölder norms should stay bounded.
    pub fn holder_threshold(&self) -> Result<f64> {
        Ok(match self.regularity()? {
            Regularity::Lq { q } => self.hurst - 1.0 / q,
            Regularity::SimplexHolder { .. } => self.hurst,
        })
    }

    pub fn validate(&self) -> Result<()> {
        Regime::of(self.hurst)?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon {} must be positive",
                self.horizon
            )));
        }
        if self.cells == 0 || self.stride == 0 || self.cells % self.stride != 0 {
            return Err(Error::InvalidInput(format!(
                "need cells > 0 divisible by stride, got {} and {}",
                self.cells, self.stride
            )));
        }
        if self.n_samples < 2 {
            return Err(Error::InvalidInput("n_samples must be at least 2".into()));
        }
        self.event.validate()?;
        self.integrand_spec()?;
        Ok(())
    }
}
