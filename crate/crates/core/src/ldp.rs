//! Monte Carlo tail probabilities of `ε^{n/2} I^{(n)}` and their small-noise
//! limit.
//!
//! Every event used here is a superlevel set `{x : S(x) >= a}` of a
//! positively homogeneous statistic `S` (endpoint, running maximum, grid
//! Hölder norm). Scaling a path by `c > 0` scales `S` by `c`, so one batch of
//! statistics serves the whole `ε` ladder with coupled samples.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos_mc::{ChaosPathEngine, McEstimate};
use crate::error::{Error, Result};
use crate::fbm::{sample_driver, StreamId};
use crate::holder::holder_norm_values;
use crate::integrand::IntegrandSpec;
use crate::skeleton_rate::{rate_for_endpoint, rate_for_sup, RateOptions, RateResult};

/// Fewest samples accepted by [`tail_probability`].
pub const MIN_SAMPLES: usize = 1000;
/// Probability window in which a ladder point counts as within reach.
pub const REACH: (f64, f64) = (1e-3, 0.5);
const WILSON_Z: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventSetSpec {
    EndpointAbove { a: f64 },
    SupAbove { a: f64 },
    HolderNormAbove { gamma: f64, a: f64 },
}

impl EventSetSpec {
    pub fn validate(&self) -> Result<()> {
        let a = self.level();
        if !(a > 0.0) {
            return Err(Error::InvalidInput(format!(
                "event level must be positive, got {a}"
            )));
        }
        if let Self::HolderNormAbove { gamma, .. } = self {
            if !(*gamma > 0.0 && *gamma < 1.0) {
                return Err(Error::InvalidInput(format!(
                    "Hölder exponent {gamma} outside (0,1)"
                )));
            }
        }
        Ok(())
    }

    pub fn level(&self) -> f64 {
        match *self {
            Self::EndpointAbove { a } | Self::SupAbove { a } | Self::HolderNormAbove { a, .. } => a,
        }
    }

    pub fn with_level(&self, a: f64) -> Self {
        match *self {
            Self::EndpointAbove { .. } => Self::EndpointAbove { a },
            Self::SupAbove { .. } => Self::SupAbove { a },
            Self::HolderNormAbove { gamma, .. } => Self::HolderNormAbove { gamma, a },
        }
    }

    /// The homogeneous statistic whose superlevel set is the event.
    pub fn statistic(&self, times: &[f64], values: &[f64]) -> f64 {
        match *self {
            Self::EndpointAbove { .. } => *values.last().expect("non-empty path"),
            Self::SupAbove { .. } => values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            Self::HolderNormAbove { gamma, .. } => {
                holder_norm_values(times, values, gamma).map_or(f64::NAN, |r| r.total)
            }
        }
    }

    /// Closed event: `ε^{n/2} S >= a`.
    pub fn hit(&self, stat: f64, scale: f64) -> bool {
        scale * stat >= self.level()
    }
}

/// Statistic of each of `n_samples` paths; sample `k` uses stream `(seed, k)`.
pub fn path_statistics(
    engine: &ChaosPathEngine,
    event: &EventSetSpec,
    n_samples: usize,
    seed: u64,
) -> Vec<f64> {
    let grid = &engine.table().grid;
    let times = engine.grid().points();
    (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let d = sample_driver(grid, StreamId::new(seed, k));
            event.statistic(times, &engine.path(&d.dw).values)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailEstimate {
    pub epsilon: f64,
    pub estimate: McEstimate,
    pub hits: usize,
    pub wilson_low: f64,
    pub wilson_high: f64,
    /// `ε log P̂`, absent when no sample hit the event.
    pub eps_log_p: Option<f64>,
}

impl TailEstimate {
    pub fn probability(&self) -> f64 {
        self.estimate.mean
    }

    pub fn within_reach(&self) -> bool {
        let p = self.probability();
        (REACH.0..=REACH.1).contains(&p)
    }
}

/// 95% Wilson score interval for `hits` successes out of `n`.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    let (k, n) = (hits as f64, n as f64);
    let p = k / n;
    let z2 = WILSON_Z * WILSON_Z;
    let centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
    let half = WILSON_Z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / (1.0 + z2 / n);
    // the bounds are exactly 0 and 1 at the edges; rounding would leave dust
    let low = if hits == 0 {
        0.0
    } else {
        (centre - half).max(0.0)
    };
    let high = if hits as f64 == n {
        1.0
    } else {
        (centre + half).min(1.0)
    };
    (low, high)
}

/// Tail estimate at `ε` from precomputed statistics of unscaled paths.
pub fn tail_from_statistics(
    stats: &[f64],
    order: usize,
    event: &EventSetSpec,
    epsilon: f64,
    seed: u64,
) -> Result<TailEstimate> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!(
            "ε must be positive, got {epsilon}"
        )));
    }
    let scale = epsilon.powf(order as f64 / 2.0);
    let ind: Vec<f64> = stats
        .iter()
        .map(|&s| if event.hit(s, scale) { 1.0 } else { 0.0 })
        .collect();
    let hits = ind.iter().filter(|v| **v == 1.0).count();
    let estimate = McEstimate::from_values(&ind, seed)?;
    let (wilson_low, wilson_high) = wilson_interval(hits, stats.len());
    Ok(TailEstimate {
        epsilon,
        estimate,
        hits,
        wilson_low,
        wilson_high,
        eps_log_p: (hits > 0).then(|| epsilon * estimate.mean.ln()),
    })
}

/// `P(ε^{n/2} I ∈ F)` from `n_samples` fresh paths.
pub fn tail_probability(
    engine: &ChaosPathEngine,
    event: &EventSetSpec,
    epsilon: f64,
    n_samples: usize,
    seed: u64,
) -> Result<TailEstimate> {
    event.validate()?;
    if n_samples < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "tail estimates need >= {MIN_SAMPLES} samples, got {n_samples}"
        )));
    }
    let stats = path_statistics(engine, event, n_samples, seed);
    tail_from_statistics(&stats, engine.order(), event, epsilon, seed)
}

/// Geometric `ε` ladder whose end points have tail probabilities near `p_low`
/// and `p_high`, located from a pilot batch on streams independent of `seed`.
pub fn prescan_ladder(
    engine: &ChaosPathEngine,
    event: &EventSetSpec,
    points: usize,
    (p_low, p_high): (f64, f64),
    pilot_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    event.validate()?;
    if points < 4 || !(0.0 < p_low && p_low < p_high && p_high < 1.0) {
        return Err(Error::InvalidInput(
            "ladder needs >= 4 points and 0 < p_low < p_high < 1".into(),
        ));
    }
    let pilot_seed = seed ^ 0x9e37_79b9_7f4a_7c15;
    let mut stats = path_statistics(engine, event, pilot_samples, pilot_seed);
    stats.sort_by(|a, b| b.total_cmp(a));
    let quantile = |p: f64| stats[((p * pilot_samples as f64) as usize).min(pilot_samples - 1)];
    let (q_low, q_high) = (quantile(p_low), quantile(p_high));
    if !(q_high > 0.0) {
        return Err(Error::Domain(
            "event is outside Monte Carlo reach at every ε".into(),
        ));
    }
    // P(ε^{n/2} S >= a) = p  at  ε = (a / q_p)^{2/n}
    let n = engine.order() as f64;
    let a = event.level();
    let (lo, hi) = ((a / q_low).powf(2.0 / n), (a / q_high).powf(2.0 / n));
    Ok((0..points)
        .map(|i| lo * (hi / lo).powf(i as f64 / (points - 1) as f64))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpRow {
    pub tail: TailEstimate,
    /// `ε log P̂ + rate`.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LdpSweepReport {
    pub event: EventSetSpec,
    pub order: usize,
    pub hurst: f64,
    pub n_samples: usize,
    pub seed: u64,
    pub rows: Vec<LdpRow>,
    pub rate: Option<RateResult>,
    /// Intercept of `ε log P̂ ≈ L + b ε + c ε log ε`.
    pub limit: Option<f64>,
    pub limit_stderr: Option<f64>,
    /// Intercept of the plain straight-line fit `ε log P̂ ≈ L + b ε`.
    pub linear_limit: Option<f64>,
    pub verdict: Verdict,
}

impl LdpSweepReport {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epsilon,p_hat,stderr,eps_log_p,gap")?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:e}"));
        for r in &self.rows {
            writeln!(
                out,
                "{:e},{:e},{:e},{},{}",
                r.tail.epsilon,
                r.tail.probability(),
                r.tail.estimate.stderr,
                opt(r.tail.eps_log_p),
                opt(r.gap)
            )?;
        }
        Ok(())
    }
}

/// Least squares `y ≈ X β`; returns `β` and the standard error of `β_0`.
fn least_squares(x: DMatrix<f64>, y: DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let (m, k) = x.shape();
    if m <= k {
        return None;
    }
    let xtx = x.transpose() * &x;
    let inv = xtx.try_inverse()?;
    let beta = &inv * x.transpose() * &y;
    let resid = &y - &x * &beta;
    let s2 = resid.norm_squared() / (m - k) as f64;
    Some((beta, (s2 * inv[(0, 0)]).sqrt()))
}

/// Small-noise limit of `ε log P̂` over the rows within reach:
/// `(limit, stderr, straight-line limit)`.
pub fn extrapolate(rows: &[LdpRow]) -> Option<(f64, f64, f64)> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.tail.within_reach())
        .filter_map(|r| r.tail.eps_log_p.map(|y| (r.tail.epsilon, y)))
        .collect();
    if pts.len() < 4 {
        return None;
    }
    let m = pts.len();
    let y = DVector::from_iterator(m, pts.iter().map(|p| p.1));
    let full = DMatrix::from_fn(m, 3, |i, j| {
        let e = pts[i].0;
        [1.0, e, e * e.ln()][j]
    });
    let line = DMatrix::from_fn(m, 2, |i, j| [1.0, pts[i].0][j]);
    let (beta, se) = least_squares(full, y.clone())?;
    let (lin, _) = least_squares(line, y)?;
    Some((beta[0], se, lin[0]))
}

/// PASS iff `|limit + rate| <= max(0.15 rate, 2 stderr)`; INCONCLUSIVE when
/// fewer than four ladder points are within reach or no rate is available.
pub fn compare_rate(report: &LdpSweepReport) -> Verdict {
    match (&report.rate, report.limit, report.limit_stderr) {
        (Some(rate), Some(limit), Some(se)) => {
            let tol = (0.15 * rate.rate).max(2.0 * se);
            if (limit + rate.rate).abs() <= tol {
                Verdict::Pass
            } else {
                Verdict::Fail
            }
        }
        _ => Verdict::Inconclusive,
    }
}

/// The rate of the event set, where the skeleton module provides one.
pub fn event_rate(
    engine: &ChaosPathEngine,
    spec: &IntegrandSpec,
    event: &EventSetSpec,
    opts: &RateOptions,
) -> Result<Option<RateResult>> {
    let table = engine.table();
    match *event {
        EventSetSpec::EndpointAbove { a } => rate_for_endpoint(table, spec, a, opts).map(Some),
        EventSetSpec::SupAbove { a } => rate_for_sup(table, spec, a, opts).map(Some),
        EventSetSpec::HolderNormAbove { .. } => Ok(None),
    }
}

/// Tail probabilities along `ladder` from one coupled batch of paths.
pub fn ldp_sweep(
    engine: &ChaosPathEngine,
    spec: &IntegrandSpec,
    event: &EventSetSpec,
    ladder: &[f64],
    n_samples: usize,
    seed: u64,
    rate_opts: &RateOptions,
) -> Result<LdpSweepReport> {
    event.validate()?;
    if n_samples < MIN_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "tail estimates need >= {MIN_SAMPLES} samples, got {n_samples}"
        )));
    }
    let stats = path_statistics(engine, event, n_samples, seed);
    let rate = event_rate(engine, spec, event, rate_opts)?;
    let rows = ladder
        .iter()
        .map(|&eps| {
            let tail = tail_from_statistics(&stats, engine.order(), event, eps, seed)?;
            let gap = match (&rate, tail.eps_log_p) {
                (Some(r), Some(y)) => Some(y + r.rate),
                _ => None,
            };
            Ok(LdpRow { tail, gap })
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.iter().filter(|r| r.tail.within_reach()).count() < 4 {
        return Err(Error::Domain(
            "fewer than four ladder points have P̂ in [1e-3, 0.5]".into(),
        ));
    }
    let fit = extrapolate(&rows);
    let mut report = LdpSweepReport {
        event: *event,
        order: engine.order(),
        hurst: engine.table().hurst(),
        n_samples,
        seed,
        rows,
        rate,
        limit: fit.map(|f| f.0),
        limit_stderr: fit.map(|f| f.1),
        linear_limit: fit.map(|f| f.2),
        verdict: Verdict::Inconclusive,
    };
    report.verdict = compare_rate(&report);
    Ok(report)
}
