//! The Volterra kernel `K_H(t, θ)` of fractional Brownian motion.
//!
//! ```text
//! K_H(t,θ) = c_H [ (t-θ)^{H-1/2}
//!                  + (1/2-H) ∫_θ^t (u-θ)^{H-3/2} (1 - (θ/u)^{1/2-H}) du ]
//! ∂K_H/∂t (t,θ) = c_H (H-1/2) (θ/t)^{1/2-H} (t-θ)^{H-3/2}
//! ```
//!
//! so that `B^H_t = ∫_0^t K_H(t,θ) dW_θ`. The constant `c_H` is fixed by the
//! unit-variance normalization `∫_0^1 K_H(1,θ)^2 dθ = 1`.
//!
//! The substitution `u = θ(1 + v²)` removes the `(u-θ)^{H-3/2}` endpoint
//! singularity of the inner integral and makes it a function of `(t-θ)/θ`
//! alone; see [`UnitKernel`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::quad::{adaptive_gk, gauss20, gauss8, tanh_sinh};

/// Number of tanh–sinh halvings used by default when calibrating `c_H`.
pub const DEFAULT_QUAD_RESOLUTION: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `H < 1/2`: singular kernel, Hölder integrands.
    Rough,
    /// `H > 1/2`: regular kernel, `L^q` integrands.
    Smooth,
    /// `H = 1/2`: standard Brownian motion.
    Standard,
}

impl Regime {
    pub fn of(hurst: f64) -> Result<Self> {
        if !(hurst > 0.25 && hurst < 1.0) {
            return Err(Error::InvalidHurst(hurst));
        }
        Ok(if hurst < 0.5 {
            Regime::Rough
        } else if hurst > 0.5 {
            Regime::Smooth
        } else {
            Regime::Standard
        })
    }

    /// Whether the rough-regime form of the transfer kernels applies.
    ///
    /// The smooth form drops the `K_H(t,θ)` boundary term, which is only valid
    /// when `K_H(θ,θ) = 0`; at `H = 1/2` the kernel is identically one.
    pub fn uses_rough_form(self) -> bool {
        !matches!(self, Regime::Smooth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HurstParams {
    pub hurst: f64,
    pub horizon: f64,
    pub c_h: f64,
    pub regime: Regime,
}

impl HurstParams {
    /// Parameters with `c_H` calibrated to unit variance at `t = 1`.
    pub fn calibrated(hurst: f64, horizon: f64) -> Result<Self> {
        let c_h = calibrate_ch(hurst, DEFAULT_QUAD_RESOLUTION)?;
        Self::with_constant(hurst, horizon, c_h)
    }

    pub fn with_constant(hurst: f64, horizon: f64, c_h: f64) -> Result<Self> {
        let regime = Regime::of(hurst)?;
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "horizon {horizon} must be positive"
            )));
        }
        if !(c_h > 0.0 && c_h.is_finite()) {
            return Err(Error::InvalidInput(format!("c_H = {c_h} must be positive")));
        }
        Ok(Self {
            hurst,
            horizon,
            c_h,
            regime,
        })
    }
}

/// The kernel with `c_H = 1`, written as
/// `K(t,θ) = (t-θ)^{H-1/2} + (1/2-H) θ^{H-1/2} G((t-θ)/θ)` with
/// `G(d) = ∫_0^{√d} 2 v^{2H-2} (1 - (1+v²)^{H-1/2}) dv`.
///
/// `G` is summed from its binomial series in `d` for `d <= 1/2`, in `1/d` for
/// `d >= 2`, and integrated by a 20-point Gauss rule in between, where the
/// integrand is analytic.
#[derive(Debug, Clone, Copy)]
pub(crate) struct UnitKernel {
    hurst: f64,
    e: f64,
    g_half: f64,
    g_two: f64,
}

const SMALL_D: f64 = 0.5;
const LARGE_D: f64 = 2.0;

impl UnitKernel {
    pub(crate) fn new(hurst: f64) -> Self {
        let e = hurst - 0.5;
        let mut k = Self {
            hurst,
            e,
            g_half: 0.0,
            g_two: 0.0,
        };
        if e != 0.0 {
            k.g_half = k.inner_small(SMALL_D);
            k.g_two = k.inner_mid(LARGE_D);
        }
        k
    }

    fn integrand(&self, v: f64) -> f64 {
        2.0 * v.powf(2.0 * self.hurst - 2.0) * -(self.e * (v * v).ln_1p()).exp_m1()
    }

    fn inner_small(&self, d: f64) -> f64 {
        if d <= 0.0 {
            return 0.0;
        }
        let e = self.e;
        let mut sum = 0.0;
        let mut b = e;
        let mut dk = d;
        for k in 1..200 {
            let kf = k as f64;
            let term = -2.0 * b * dk / (2.0 * e + 2.0 * kf);
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
            b *= (e - kf) / (kf + 1.0);
            dk *= d;
        }
        d.powf(e) * sum
    }

    fn inner_mid(&self, d: f64) -> f64 {
        self.g_half + gauss20().integrate(SMALL_D.sqrt(), d.sqrt(), |v| self.integrand(v))
    }

    fn inner_large(&self, d: f64) -> f64 {
        let e = self.e;
        let v = d.sqrt();
        let w = LARGE_D.sqrt();
        let l = (v / w).ln();
        let lead = w.powf(2.0 * e) * (2.0 * e * l).exp_m1() / (2.0 * e);
        let w4 = w.powf(4.0 * e);
        let mut sum = w4 * (4.0 * e * l).exp_m1() / (4.0 * e);
        let mut b = 1.0;
        let mut vk = v.powf(4.0 * e);
        let mut wk = w4;
        let (v2, w2) = (1.0 / d, 1.0 / LARGE_D);
        for k in 1..200 {
            let kf = k as f64;
            b *= (e - kf + 1.0) / kf;
            vk *= v2;
            wk *= w2;
            let p = 4.0 * e - 2.0 * kf;
            let term = b * (vk - wk) / p;
            sum += term;
            if (b * wk / p).abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        self.g_two + 2.0 * lead - 2.0 * sum
    }

    pub(crate) fn inner(&self, d: f64) -> f64 {
        if d <= SMALL_D {
            self.inner_small(d)
        } else if d < LARGE_D {
            self.inner_mid(d)
        } else {
            self.inner_large(d)
        }
    }

    /// Kernel at `θ > 0` with `gap = t - θ > 0`.
    pub(crate) fn eval(&self, theta: f64, gap: f64) -> f64 {
        if self.e == 0.0 {
            return 1.0;
        }
        gap.powf(self.e) - self.e * theta.powf(self.e) * self.inner(gap / theta)
    }
}

fn check_time(params: &HurstParams, t: f64) -> Result<()> {
    if !(t > 0.0) || t > params.horizon * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "t = {t} outside (0, {}]",
            params.horizon
        )));
    }
    Ok(())
}

/// `K_H(t, θ)`; zero when `θ >= t`.
pub fn eval_kernel(params: &HurstParams, t: f64, theta: f64) -> Result<f64> {
    Regime::of(params.hurst)?;
    check_time(params, t)?;
    if !(theta > 0.0) {
        return Err(Error::Domain(format!(
            "kernel is not evaluated at θ = {theta} <= 0"
        )));
    }
    if theta >= t {
        return Ok(0.0);
    }
    Ok(params.c_h * UnitKernel::new(params.hurst).eval(theta, t - theta))
}

/// `∂K_H/∂t (t, θ)`.
pub fn eval_kernel_dt(params: &HurstParams, t: f64, theta: f64) -> Result<f64> {
    Regime::of(params.hurst)?;
    check_time(params, t)?;
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("θ = {theta} must be positive")));
    }
    if theta == t {
        return Err(Error::Domain("∂K/∂t is singular at θ = t".into()));
    }
    if theta > t {
        return Ok(0.0);
    }
    let h = params.hurst;
    Ok(params.c_h * (h - 0.5) * (theta / t).powf(0.5 - h) * (t - theta).powf(h - 1.5))
}

/// `K_H(t2, θ) - K_H(t1, θ) = ∫_{t1}^{t2} ∂K/∂r (r, θ) dr`.
///
/// With `w = (r-θ)^{H-1/2}` the power factor of the derivative integrates in
/// closed form and the increment becomes `c_H ∫_{w(t1)}^{w(t2)} (θ/r(w))^{1/2-H} dw`,
/// whose integrand is smooth; it is integrated adaptively.
pub fn kernel_increment(params: &HurstParams, t1: f64, t2: f64, theta: f64) -> Result<f64> {
    Regime::of(params.hurst)?;
    check_time(params, t2)?;
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("θ = {theta} must be positive")));
    }
    if !(theta < t1 && t1 < t2) {
        return Err(Error::Domain(format!(
            "need θ < t1 < t2, got {theta}, {t1}, {t2}"
        )));
    }
    let h = params.hurst;
    if h == 0.5 {
        return Ok(0.0);
    }
    let e = h - 0.5;
    let inv = 1.0 / e;
    let w1 = (t1 - theta).powf(e);
    let w2 = (t2 - theta).powf(e);
    let (v, _) = adaptive_gk(
        |w: f64| {
            let r = theta + w.powf(inv);
            (theta / r).powf(0.5 - h)
        },
        w1,
        w2,
        1e-15,
        1e-13,
        400,
    );
    Ok(params.c_h * v)
}

/// Numerically calibrated `c_H` with `∫_0^1 K_H(1,θ)^2 dθ = 1`.
///
/// `quad_resolution` is the maximal number of tanh–sinh halvings; the
/// quadrature must stabilize to `1e-8` relative within it.
pub fn calibrate_ch(hurst: f64, quad_resolution: usize) -> Result<f64> {
    Regime::of(hurst)?;
    if hurst == 0.5 {
        return Ok(1.0);
    }
    let unit = UnitKernel::new(hurst);
    let (integral, err) = tanh_sinh(
        |_, theta, gap| {
            let k = unit.eval(theta, gap);
            k * k
        },
        0.0,
        1.0,
        1e-12,
        quad_resolution,
    );
    if !(integral.is_finite() && integral > 0.0) || err > 1e-8 * integral {
        return Err(Error::Convergence(format!(
            "c_H quadrature did not stabilize (estimate {integral}, change {err})"
        )));
    }
    Ok(1.0 / integral.sqrt())
}

/// Closed-form normalization `sqrt(2H Γ(3/2-H) / (Γ(H+1/2) Γ(2-2H)))` from the
/// literature, reported next to the calibrated value.
pub fn literature_ch(hurst: f64) -> f64 {
    use statrs::function::gamma::gamma;
    (2.0 * hurst * gamma(1.5 - hurst) / (gamma(hurst + 0.5) * gamma(2.0 - 2.0 * hurst))).sqrt()
}

/// `E[B^H_s B^H_t]` for unit-variance fBm.
pub fn fbm_covariance(hurst: f64, s: f64, t: f64) -> f64 {
    let p = 2.0 * hurst;
    0.5 * (s.abs().powf(p) + t.abs().powf(p) - (t - s).abs().powf(p))
}

/// Root-mean-square of `K_H(t, ·)` over the cell `[a, b]`, `b <= t`.
fn cell_rms(unit: &UnitKernel, c_h: f64, t: f64, a: f64, b: f64) -> f64 {
    let touches_end = a == 0.0 || b >= t;
    let m2 = if touches_end {
        let tail = (t - b).max(0.0);
        tanh_sinh(
            |_, da, db| unit.eval(a + da, tail + db).powi(2),
            a,
            b,
            1e-11,
            8,
        )
        .0
    } else {
        gauss8().integrate(a, b, |x| unit.eval(x, t - x).powi(2))
    };
    c_h * (m2 / (b - a)).sqrt()
}

/// Discretized kernel on a time grid.
///
/// `values[i][j]` is the root-mean-square of `K_H(t_i, ·)` over cell `j < i`.
/// The integrable singularities at `θ = 0` and `θ = t_i` are integrated rather
/// than sampled, and every cell contributes its exact share of the variance
/// `∫ K_H(t_i,θ)^2 dθ`; plain cell averages lose a fixed fraction of it in the
/// singular cells, which dominates the covariance error for `H` near one. `increments[k][j] = values[k+1][j] - values[k][j]` for
/// `j < k` is the mass of the measure `K_H(dr, θ)` over the r-cell `k`,
/// averaged over the θ-cell `j`; `values[j+1][j]` doubles as the mass of the
/// diagonal r-cell in the smooth regime, where `K_H(θ,θ) = 0`.
#[derive(Debug, Clone)]
pub struct KernelTable {
    pub params: HurstParams,
    pub grid: TimeGrid,
    values: Vec<Vec<f64>>,
    increments: Vec<Vec<f64>>,
}

impl KernelTable {
    pub fn build(params: &HurstParams, grid: &TimeGrid) -> Result<Self> {
        if (grid.horizon() - params.horizon).abs() > 1e-12 * params.horizon {
            return Err(Error::GridMismatch(format!(
                "grid horizon {} differs from T = {}",
                grid.horizon(),
                params.horizon
            )));
        }
        let n = grid.cells();
        let unit = UnitKernel::new(params.hurst);
        let values: Vec<Vec<f64>> = (0..=n)
            .into_par_iter()
            .map(|i| {
                let t = grid.point(i);
                (0..i)
                    .map(|j| {
                        if params.regime == Regime::Standard {
                            return params.c_h;
                        }
                        cell_rms(&unit, params.c_h, t, grid.point(j), grid.point(j + 1))
                    })
                    .collect()
            })
            .collect();
        let increments = (0..n)
            .map(|k| (0..k).map(|j| values[k + 1][j] - values[k][j]).collect())
            .collect();
        Ok(Self {
            params: *params,
            grid: grid.clone(),
            values,
            increments,
        })
    }

    pub fn cells(&self) -> usize {
        self.grid.cells()
    }

    pub fn hurst(&self) -> f64 {
        self.params.hurst
    }

    pub fn regime(&self) -> Regime {
        self.params.regime
    }

    /// Cell-averaged `K_H(t_i, θ_j)`; zero for `j >= i`.
    #[inline]
    pub fn k(&self, i: usize, j: usize) -> f64 {
        if j < i {
            self.values[i][j]
        } else {
            0.0
        }
    }

    /// Mass of `K_H(dr, θ_j)` over r-cell `k > j`.
    #[inline]
    pub fn dk(&self, k: usize, j: usize) -> f64 {
        debug_assert!(j < k);
        self.increments[k][j]
    }

    /// Mass of `K_H(dr, θ_j)` over the diagonal r-cell (smooth regime).
    #[inline]
    pub fn diag_mass(&self, j: usize) -> f64 {
        self.values[j + 1][j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    /// `Σ_j K(t_i, θ_j)^2 Δθ_j`, the discrete variance of `B^H_{t_i}`.
    pub fn variance_at(&self, i: usize) -> f64 {
        self.values[i]
            .iter()
            .enumerate()
            .map(|(j, k)| k * k * self.grid.width(j))
            .sum()
    }

    /// Write `t_i, θ_j, K, dK` rows as CSV.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "i,j,t,theta_mid,k,dk")?;
        for i in 1..=self.cells() {
            for j in 0..i {
                let dk = if i < self.cells() && j < i {
                    self.increments[i][j]
                } else {
                    f64::NAN
                };
                let dk = if dk.is_nan() {
                    String::new()
                } else {
                    format!("{dk:e}")
                };
                writeln!(
                    out,
                    "{i},{j},{},{},{:e},{dk}",
                    self.grid.point(i),
                    self.grid.midpoint(j),
                    self.values[i][j]
                )?;
            }
        }
        Ok(())
    }
}

/// Largest deviation of the discrete covariance from the fBm covariance
/// over all pairs of grid points.
pub fn covariance_check(table: &KernelTable) -> f64 {
    let n = table.cells();
    let h = table.hurst();
    let widths = table.grid.widths();
    (1..=n)
        .into_par_iter()
        .map(|i| {
            let ti = table.grid.point(i);
            let row_i = table.row(i);
            (i..=n)
                .map(|l| {
                    let row_l = table.row(l);
                    let est: f64 = (0..i).map(|j| row_i[j] * row_l[j] * widths[j]).sum();
                    (est - fbm_covariance(h, ti, table.grid.point(l))).abs()
                })
                .fold(0.0, f64::max)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}
