//! Deterministic skeletons of chaos functionals and the large deviation rate
//! for endpoint and running-maximum events.
//!
//! The skeleton replaces every driver increment `dW_j` by `φ̇_j Δθ_j` in the
//! off-diagonal sum, so it is exactly the mean of the chaos sum driven by the
//! shifted driver `dW + φ̇ dt`.
//!
//! For a target time `t` the skeleton is a homogeneous polynomial `P` of
//! degree `n` in `x_j = φ̇_j sqrt(Δθ_j)`, and `½||φ̇||² = ½|x|²`. Writing
//! `x = r u` with `|u| = 1`, the event `P(x) >= a > 0` costs `½ (a / P(u))^{2/n}`,
//! so the rate follows from the maximum of `P` on the unit sphere.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chaos_mc::{wiener_ito_sum_raw, ChaosPathEngine};
use crate::error::{Error, Result};
use crate::fbm::{volterra_sum, PathKind, PathSample};
use crate::grid::TimeGrid;
use crate::integrand::IntegrandSpec;
use crate::simplex_kernel::{KStar, MAX_TENSOR_CELLS};
use crate::KernelTable;

/// An element of the Cameron–Martin space, `φ(t) = ∫_0^t K_H(t,θ) φ̇(θ) dθ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameronMartinElement {
    pub grid: TimeGrid,
    pub phidot: Vec<f64>,
    pub phi: PathSample,
}

impl CameronMartinElement {
    pub fn new(table: &KernelTable, phidot: Vec<f64>) -> Result<Self> {
        let phi = phi_from_phidot(table, &phidot)?;
        Ok(Self {
            grid: table.grid.clone(),
            phidot,
            phi,
        })
    }

    /// `||φ||^2 = Σ φ̇_j^2 Δθ_j`.
    pub fn norm_sq(&self) -> f64 {
        self.phidot
            .iter()
            .zip(self.grid.widths())
            .map(|(p, d)| p * p * d)
            .sum()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "theta_left,phidot")?;
        for (t, p) in self.grid.points().iter().zip(&self.phidot) {
            writeln!(out, "{t},{p:e}")?;
        }
        Ok(())
    }
}

fn check_phidot(table: &KernelTable, phidot: &[f64]) -> Result<()> {
    if phidot.len() != table.cells() {
        return Err(Error::GridMismatch(format!(
            "phidot has {} cells, grid has {}",
            phidot.len(),
            table.cells()
        )));
    }
    Ok(())
}

fn weighted(table: &KernelTable, phidot: &[f64]) -> Vec<f64> {
    phidot
        .iter()
        .zip(table.grid.widths())
        .map(|(p, d)| p * d)
        .collect()
}

/// `φ(t_i) = Σ_{j<i} K[i][j] φ̇_j Δθ_j`.
pub fn phi_from_phidot(table: &KernelTable, phidot: &[f64]) -> Result<PathSample> {
    check_phidot(table, phidot)?;
    let mut values = vec![0.0; table.cells() + 1];
    volterra_sum(table, &weighted(table, phidot), &mut values);
    Ok(PathSample {
        grid: table.grid.clone(),
        values,
        kind: PathKind::SkeletonPath,
    })
}

/// Skeleton `J^{(n)}_t(h)` at the grid time `t`.
pub fn skeleton_value(
    table: &KernelTable,
    spec: &IntegrandSpec,
    t: f64,
    phidot: &[f64],
) -> Result<f64> {
    check_phidot(table, phidot)?;
    let kstar = KStar::new(table, spec)?;
    if t.abs() <= 1e-12 * table.grid.horizon() {
        return Ok(0.0);
    }
    let g = kstar.tensor(0.0, t)?;
    Ok(wiener_ito_sum_raw(
        g.order,
        g.side(),
        &g.values,
        &weighted(table, phidot),
    ))
}

/// `t ↦ J^{(n)}_t(h(·,t))` on every grid point.
pub fn skeleton_path(
    table: &KernelTable,
    spec: &IntegrandSpec,
    phidot: &[f64],
) -> Result<PathSample> {
    check_phidot(table, phidot)?;
    let engine = ChaosPathEngine::new(table, spec, 1)?;
    let mut p = engine.path(&weighted(table, phidot));
    p.kind = PathKind::SkeletonPath;
    Ok(p)
}

/// The skeleton at one time as a symmetric, diagonal-free form in `x`.
struct SkeletonForm {
    order: usize,
    side: usize,
    sym: Vec<f64>,
    sqrt_dt: Vec<f64>,
}

impl SkeletonForm {
    fn new(table: &KernelTable, spec: &IntegrandSpec, b: usize) -> Result<Self> {
        let n = spec.order;
        let cells = (b as u128).pow(n as u32);
        if cells > MAX_TENSOR_CELLS {
            return Err(Error::MemoryBound {
                cells,
                limit: MAX_TENSOR_CELLS,
            });
        }
        let g = KStar::new(table, spec)?.tensor(0.0, table.grid.point(b))?;
        let sqrt_dt: Vec<f64> = g.grid.widths().iter().map(|d| d.sqrt()).collect();
        let s = &sqrt_dt;
        let sym = match n {
            1 => g.values.iter().zip(s).map(|(v, d)| v * d).collect(),
            2 => {
                let mut m = vec![0.0; b * b];
                for j in 0..b {
                    for i in 0..b {
                        if i != j {
                            m[i + b * j] =
                                0.5 * (g.values[i + b * j] + g.values[j + b * i]) * s[i] * s[j];
                        }
                    }
                }
                m
            }
            _ => {
                let at = |i: usize, j: usize, k: usize| g.values[i + b * j + b * b * k];
                let mut m = vec![0.0; b * b * b];
                for k in 0..b {
                    for j in 0..b {
                        for i in 0..b {
                            if i == j || j == k || i == k {
                                continue;
                            }
                            let v = at(i, j, k)
                                + at(i, k, j)
                                + at(j, i, k)
                                + at(j, k, i)
                                + at(k, i, j)
                                + at(k, j, i);
                            m[i + b * j + b * b * k] = v / 6.0 * s[i] * s[j] * s[k];
                        }
                    }
                }
                m
            }
        };
        Ok(Self {
            order: n,
            side: b,
            sym,
            sqrt_dt,
        })
    }

    /// `(P(x), ∇P(x))`.
    fn eval(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let b = self.side;
        match self.order {
            1 => (
                self.sym.iter().zip(x).map(|(a, b)| a * b).sum(),
                self.sym.clone(),
            ),
            2 => {
                let mx: Vec<f64> = (0..b)
                    .map(|i| (0..b).map(|j| self.sym[i + b * j] * x[j]).sum())
                    .collect();
                let p = mx.iter().zip(x).map(|(a, b)| a * b).sum();
                (p, mx.into_iter().map(|v| 2.0 * v).collect())
            }
            _ => {
                let mut grad = vec![0.0; b];
                for k in 0..b {
                    for j in 0..b {
                        let xjk = x[j] * x[k];
                        let slab = &self.sym[b * j + b * b * k..b * j + b * b * k + b];
                        for (g, s) in grad.iter_mut().zip(slab) {
                            *g += s * xjk;
                        }
                    }
                }
                let p = grad.iter().zip(x).map(|(a, b)| a * b).sum();
                (p, grad.into_iter().map(|v| 3.0 * v).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateMethod {
    ClosedFormProjection,
    ProjectedGradient,
    MultiStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateOptions {
    pub starts: usize,
    pub seed: u64,
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Cells of the coarse grid for the oracle comparison, if any.
    pub oracle_cells: Option<usize>,
}

impl Default for RateOptions {
    fn default() -> Self {
        Self {
            starts: 16,
            seed: 0,
            grad_tol: 1e-8,
            max_iter: 20_000,
            oracle_cells: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateResult {
    pub rate: f64,
    pub minimizer: CameronMartinElement,
    /// `|J(φ̇) - a| / max(a, 1)` recomputed from the skeleton.
    pub constraint_residual: f64,
    pub method: RateMethod,
    /// `rate / oracle - 1`.
    pub oracle_gap: Option<f64>,
    pub target_time: f64,
    /// Projected gradient norm of the best start at termination.
    pub gradient_norm: f64,
    pub converged: bool,
    pub best_start: Option<usize>,
}

/// Maximum of the form on the unit sphere: `(value, u, gradient norm,
/// converged, start index)`.
type SphereMax = (f64, Vec<f64>, f64, bool, usize);

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= n);
}

/// Riemannian gradient ascent with backtracking from one start.
fn ascend(form: &SkeletonForm, mut u: Vec<f64>, opts: &RateOptions) -> (f64, Vec<f64>, f64, bool) {
    normalize(&mut u);
    let (mut p, mut grad) = form.eval(&u);
    if form.order % 2 == 1 && p < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
        p = -p;
        grad.iter_mut().for_each(|v| *v = -*v);
    }
    let mut step = 1.0;
    let mut gnorm = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let radial: f64 = grad.iter().zip(&u).map(|(g, x)| g * x).sum();
        let proj: Vec<f64> = grad.iter().zip(&u).map(|(g, x)| g - radial * x).collect();
        gnorm = proj.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gnorm < opts.grad_tol {
            return (p, u, gnorm, true);
        }
        let mut accepted = false;
        for _ in 0..60 {
            let mut cand: Vec<f64> = u.iter().zip(&proj).map(|(x, g)| x + step * g).collect();
            normalize(&mut cand);
            let (pc, gc) = form.eval(&cand);
            if pc >= p + 1e-4 * step * gnorm * gnorm {
                u = cand;
                p = pc;
                grad = gc;
                step *= 2.0;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            // no ascent direction left at machine precision
            return (p, u, gnorm, gnorm < opts.grad_tol.sqrt());
        }
    }
    (p, u, gnorm, false)
}

fn sphere_max(form: &SkeletonForm, opts: &RateOptions) -> SphereMax {
    (0..opts.starts)
        .into_par_iter()
        .map(|k| {
            // start 0 is the flat direction φ̇ ≡ 1, the others are random
            let u: Vec<f64> = if k == 0 {
                form.sqrt_dt.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(k as u64);
                (0..form.side)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect()
            };
            let (p, u, g, c) = ascend(form, u, opts);
            (p, u, g, c, k)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(None::<SphereMax>, |best, cand| match best {
            Some(b) if b.0 >= cand.0 => Some(b),
            _ => Some(cand),
        })
        .expect("at least one start")
}

fn time_index(table: &KernelTable, t: f64) -> Result<usize> {
    let b = table
        .grid
        .index_of(t)
        .ok_or_else(|| Error::GridMismatch(format!("t = {t} is not a grid point")))?;
    if b == 0 {
        return Err(Error::Domain("target time must be positive".into()));
    }
    Ok(b)
}

fn zero_result(table: &KernelTable, t: f64, method: RateMethod) -> Result<RateResult> {
    Ok(RateResult {
        rate: 0.0,
        minimizer: CameronMartinElement::new(table, vec![0.0; table.cells()])?,
        constraint_residual: 0.0,
        method,
        oracle_gap: None,
        target_time: t,
        gradient_norm: 0.0,
        converged: true,
        best_start: None,
    })
}

/// Largest value of the skeleton at `t` over unit-norm `φ̇`.
fn best_direction(
    table: &KernelTable,
    spec: &IntegrandSpec,
    b: usize,
    opts: &RateOptions,
) -> Result<(SkeletonForm, SphereMax)> {
    let form = SkeletonForm::new(table, spec, b)?;
    let best = if form.order == 1 {
        let norm = form.sym.iter().map(|v| v * v).sum::<f64>().sqrt();
        let u = form.sym.iter().map(|v| v / norm).collect();
        (norm, u, 0.0, true, 0)
    } else {
        sphere_max(&form, opts)
    };
    Ok((form, best))
}

/// Rate of `{x : x(t) >= a}` for the skeleton at grid time `t`.
pub fn rate_at_time(
    table: &KernelTable,
    spec: &IntegrandSpec,
    t: f64,
    a: f64,
    opts: &RateOptions,
) -> Result<RateResult> {
    let b = time_index(table, t)?;
    let method = if spec.order == 1 {
        RateMethod::ClosedFormProjection
    } else if opts.starts > 1 {
        RateMethod::MultiStart
    } else {
        RateMethod::ProjectedGradient
    };
    if a <= 0.0 {
        return zero_result(table, table.grid.point(b), method);
    }
    let (form, (p, u, gnorm, converged, start)) = best_direction(table, spec, b, opts)?;
    if !(p > 0.0) {
        return Err(Error::Domain(format!(
            "the skeleton at t = {t} never reaches {a}: the event is unreachable"
        )));
    }
    let n = spec.order as f64;
    let r = (a / p).powf(1.0 / n);
    let mut phidot = vec![0.0; table.cells()];
    for (j, (x, s)) in u.iter().zip(&form.sqrt_dt).enumerate() {
        phidot[j] = r * x / s;
    }
    let minimizer = CameronMartinElement::new(table, phidot)?;
    let reached = skeleton_value(table, spec, table.grid.point(b), &minimizer.phidot)?;
    Ok(RateResult {
        rate: 0.5 * minimizer.norm_sq(),
        constraint_residual: (reached - a).abs() / a.max(1.0),
        minimizer,
        method,
        oracle_gap: None,
        target_time: table.grid.point(b),
        gradient_norm: gnorm,
        converged,
        best_start: (spec.order > 1).then_some(start),
    })
}

impl SkeletonForm {
    /// The form restricted to `φ̇` constant on blocks of `factor` cells.
    fn restrict(&self, factor: usize) -> SkeletonForm {
        let b = self.side;
        let m = b / factor;
        // x_j = x_J sqrt(Δθ_j / Δθ_J) embeds the coarse coordinates isometrically
        let coarse_sqrt: Vec<f64> = (0..m)
            .map(|c| {
                self.sqrt_dt[c * factor..(c + 1) * factor]
                    .iter()
                    .map(|s| s * s)
                    .sum::<f64>()
                    .sqrt()
            })
            .collect();
        let w: Vec<f64> = (0..b)
            .map(|j| self.sqrt_dt[j] / coarse_sqrt[j / factor])
            .collect();
        let sym = match self.order {
            1 => (0..m)
                .map(|c| {
                    (c * factor..(c + 1) * factor)
                        .map(|j| self.sym[j] * w[j])
                        .sum()
                })
                .collect(),
            2 => {
                let mut out = vec![0.0; m * m];
                for j in 0..b {
                    for i in 0..b {
                        out[i / factor + m * (j / factor)] += self.sym[i + b * j] * w[i] * w[j];
                    }
                }
                out
            }
            _ => {
                let mut out = vec![0.0; m * m * m];
                for k in 0..b {
                    for j in 0..b {
                        for i in 0..b {
                            out[i / factor + m * (j / factor) + m * m * (k / factor)] +=
                                self.sym[i + b * j + b * b * k] * w[i] * w[j] * w[k];
                        }
                    }
                }
                out
            }
        };
        SkeletonForm {
            order: self.order,
            side: m,
            sym,
            sqrt_dt: coarse_sqrt,
        }
    }
}

/// Independent endpoint rate over `φ̇` constant on the cells of a coarse grid
/// with `cells` cells: the top eigenvalue of the quadratic form for `n = 2`,
/// sixteen times more starts for `n = 3`. It bounds the fine-grid rate from
/// above.
pub fn endpoint_rate_oracle(
    table: &KernelTable,
    spec: &IntegrandSpec,
    a: f64,
    cells: usize,
    opts: &RateOptions,
) -> Result<f64> {
    let fine = table.cells();
    if cells == 0 || fine % cells != 0 {
        return Err(Error::GridMismatch(format!(
            "oracle grid of {cells} cells does not divide {fine} cells"
        )));
    }
    if a <= 0.0 {
        return Ok(0.0);
    }
    let n = spec.order;
    let form = SkeletonForm::new(table, spec, fine)?.restrict(fine / cells);
    let p = match n {
        1 => form.sym.iter().map(|v| v * v).sum::<f64>().sqrt(),
        2 => {
            let m = DMatrix::from_column_slice(cells, cells, &form.sym);
            SymmetricEigen::new(m).eigenvalues.max()
        }
        _ => {
            let wide = RateOptions {
                starts: 16 * opts.starts.max(1),
                ..opts.clone()
            };
            sphere_max(&form, &wide).0
        }
    };
    if !(p > 0.0) {
        return Err(Error::Domain("event unreachable on the oracle grid".into()));
    }
    Ok(0.5 * (a / p).powf(2.0 / n as f64))
}

/// Rate of `{x : x(T) >= a}`.
pub fn rate_for_endpoint(
    table: &KernelTable,
    spec: &IntegrandSpec,
    a: f64,
    opts: &RateOptions,
) -> Result<RateResult> {
    let mut res = rate_at_time(table, spec, table.grid.horizon(), a, opts)?;
    if let Some(cells) = opts.oracle_cells {
        let oracle = endpoint_rate_oracle(table, spec, a, cells, opts)?;
        res.oracle_gap = (oracle > 0.0).then(|| res.rate / oracle - 1.0);
    }
    Ok(res)
}

/// Rate of `{x : max_i x(t_i) >= a}`: the cheapest endpoint problem over all
/// grid times, ties going to the earliest time.
pub fn rate_for_sup(
    table: &KernelTable,
    spec: &IntegrandSpec,
    a: f64,
    opts: &RateOptions,
) -> Result<RateResult> {
    if !(a > 0.0) {
        return Err(Error::InvalidInput(format!(
            "level must be positive, got {a}"
        )));
    }
    let per_time: Vec<Result<RateResult>> = (1..=table.cells())
        .map(|b| rate_at_time(table, spec, table.grid.point(b), a, opts))
        .collect();
    let mut best: Option<RateResult> = None;
    for r in per_time {
        match r {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.rate < b.rate) {
                    best = Some(r);
                }
            }
            // times where the skeleton vanishes cannot reach the level
            Err(Error::Domain(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| Error::Domain(format!("no grid time reaches level {a}")))
}
