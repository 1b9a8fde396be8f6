//! Transfer kernels `K*^{(n)}_{s,t} h` on the cube `[0,t]^n`.
//!
//! For `n = 1` and `θ` in cell `j`,
//!
//! ```text
//! θ ∈ (s,t):  h(θ) K(t,θ) + Σ_{r-cells k in (θ,t)} [h(r_k) - h(θ)] dK[k][j]
//! θ ∈ (0,s):  Σ_{r-cells k in (s,t)} h(r_k) dK[k][j]
//! ```
//!
//! which in the smooth regime equals `Σ_k h(r_k) dK[k][j]` plus the diagonal
//! cell (`K(θ,θ) = 0`), and in the rough regime keeps the singular
//! `K(t,θ)` term separate. For `n >= 2` the outer variable `θ_n` is handled
//! the same way with the `(n-1)`-order kernels
//! `inner_k = K*^{(n-1)}_{0,r_k} h(·, r_k)` in place of `h(r_k)`.
//! Collecting the terms of the rough form by r-cell gives
//!
//! ```text
//! K*^{(n)}_{s,t} h(θ', θ_n) = diag_j(θ') D_j 1{θ_n ≥ s} + Σ_{k > j, k ≥ s} inner_k(θ') dK[k][j]
//! ```
//!
//! with `D_j` the kernel mass of the diagonal r-cell, `inner_k` taken over the
//! window ending after cell `k`, and `diag_j` equal to `inner_j` in the smooth
//! regime and to the kernel over the window ending *before* cell `j` in the
//! rough regime (the diagonal–diagonal cell carries no mass there). The
//! inner kernels do not depend on `(s,t)` and are computed once per r-cell,
//! giving `O(N^{n+1})` work.
//!
//! Tensors are stored flat with `θ_1` varying fastest; `h` is sampled at
//! cell midpoints (see `Spatial::cell_value` for the one exception).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::integrand::{IntegrandSpec, Regularity, MAX_ORDER};
use crate::kernel::{KernelTable, Regime};
use crate::stats::linear_fit;

/// Largest number of tensor entries that will be allocated.
pub const MAX_TENSOR_CELLS: u128 = 1 << 24;

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexKernelTensor {
    pub order: usize,
    pub s: f64,
    pub t: f64,
    /// The kernel table grid restricted to `[0,t]`.
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl SimplexKernelTensor {
    pub fn zeros(order: usize, s: f64, t: f64, grid: TimeGrid) -> Self {
        let len = grid.cells().pow(order as u32);
        Self {
            order,
            s,
            t,
            grid,
            values: vec![0.0; len],
        }
    }

    pub fn side(&self) -> usize {
        self.grid.cells()
    }

    pub fn index(&self, idx: &[usize]) -> usize {
        let b = self.side();
        idx.iter().rev().fold(0, |acc, &i| acc * b + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.values[self.index(idx)]
    }

    /// `Π_i Δθ_{j_i}` for every flat index.
    pub fn cell_volumes(&self) -> Vec<f64> {
        let w = self.grid.widths();
        let b = w.len();
        (0..self.values.len())
            .map(|flat| {
                let mut rest = flat;
                let mut v = 1.0;
                for _ in 0..self.order {
                    v *= w[rest % b];
                    rest /= b;
                }
                v
            })
            .collect()
    }

    /// `||K*h||_{L²([0,t]^n)}`.
    pub fn l2_norm(&self) -> f64 {
        self.values
            .iter()
            .zip(self.cell_volumes())
            .map(|(v, c)| v * v * c)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| c * v).collect(),
            ..self.clone()
        }
    }

    /// Rows `theta_1, …, theta_n, value` at cell midpoints; orders 1 and 2 only.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        let b = self.side();
        match self.order {
            1 => {
                writeln!(out, "theta1,value")?;
                for j in 0..b {
                    writeln!(out, "{},{:e}", self.grid.midpoint(j), self.values[j])?;
                }
            }
            2 => {
                writeln!(out, "theta1,theta2,value")?;
                for j in 0..b {
                    for i in 0..b {
                        let (x, y) = (self.grid.midpoint(i), self.grid.midpoint(j));
                        writeln!(out, "{x},{y},{:e}", self.values[i + j * b])?;
                    }
                }
            }
            n => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidInput,
                    format!("CSV export covers orders 1 and 2, not {n}"),
                ))
            }
        }
        Ok(())
    }
}

/// `dst[θ'] += w · src[θ']` for `src` of side `side` embedded in a cube of side `b`.
pub(crate) fn add_embedded(
    dst: &mut [f64],
    b: usize,
    src: &[f64],
    side: usize,
    dim: usize,
    w: f64,
) {
    match dim {
        0 => dst[0] += w * src[0],
        1 => {
            for (d, s) in dst[..side].iter_mut().zip(src) {
                *d += w * s;
            }
        }
        2 => {
            for i2 in 0..side {
                let row = &mut dst[i2 * b..i2 * b + side];
                for (d, s) in row.iter_mut().zip(&src[i2 * side..(i2 + 1) * side]) {
                    *d += w * s;
                }
            }
        }
        _ => unreachable!("orders above {MAX_ORDER} are rejected on validation"),
    }
}

/// The inner kernels of the recursion for every r-cell of the table grid.
#[derive(Debug, Clone)]
pub struct RecursionParts {
    pub order: usize,
    /// `inner[k] = K*^{(n-1)}_{0,t_{k+1}} h(·, r_k)`, side `k+1`.
    pub inner: Vec<Vec<f64>>,
    /// Rough form only: `K*^{(n-1)}_{0,t_k} h(·, r_k)`, side `k`.
    pub diag: Option<Vec<Vec<f64>>>,
}

/// Recursive evaluator of `K*^{(n)}` for one integrand and kernel table.
pub struct KStar<'a> {
    table: &'a KernelTable,
    spec: &'a IntegrandSpec,
    rough_form: bool,
    mids: Vec<f64>,
}

impl<'a> KStar<'a> {
    pub fn new(table: &'a KernelTable, spec: &'a IntegrandSpec) -> Result<Self> {
        spec.validate(table.hurst())?;
        let mids = (0..table.cells()).map(|j| table.grid.midpoint(j)).collect();
        Ok(Self {
            table,
            spec,
            rough_form: table.regime().uses_rough_form(),
            mids,
        })
    }

    pub fn table(&self) -> &KernelTable {
        self.table
    }

    pub fn spec(&self) -> &IntegrandSpec {
        self.spec
    }

    fn g(&self, idx: &[usize], fixed: &[usize]) -> f64 {
        let mut args = [0.0; MAX_ORDER];
        let n = idx.len() + fixed.len();
        let mut last = 0;
        for (a, &i) in args.iter_mut().zip(idx.iter().chain(fixed)) {
            *a = self.mids[i];
            last = i;
        }
        let grid = &self.table.grid;
        self.spec
            .cell_value(&args[..n], (grid.point(last), grid.point(last + 1)))
    }

    /// `K*^{(m)}_{t_a,t_b}` of `θ ↦ g(θ, fixed)`, flat over side `b`.
    fn raw(&self, m: usize, a: usize, b: usize, fixed: &[usize]) -> Vec<f64> {
        match m {
            0 => vec![self.g(&[], fixed)],
            1 => self.first_order(a, b, fixed),
            _ => self.higher_order(m, a, b, fixed),
        }
    }

    fn first_order(&self, a: usize, b: usize, fixed: &[usize]) -> Vec<f64> {
        let t = self.table;
        let f: Vec<f64> = (0..b).map(|i| self.g(&[i], fixed)).collect();
        (0..b)
            .map(|j| {
                if j >= a {
                    let mut v = f[j] * t.k(b, j);
                    for k in j + 1..b {
                        v += (f[k] - f[j]) * t.dk(k, j);
                    }
                    v
                } else {
                    let mut v = 0.0;
                    for k in a..b {
                        v += f[k] * t.dk(k, j);
                    }
                    v
                }
            })
            .collect()
    }

    fn higher_order(&self, m: usize, a: usize, b: usize, fixed: &[usize]) -> Vec<f64> {
        if b == 0 {
            return Vec::new();
        }
        let with =
            |k: usize| -> Vec<usize> { std::iter::once(k).chain(fixed.iter().copied()).collect() };
        let inner: Vec<Vec<f64>> = (a..b)
            .into_par_iter()
            .map(|k| self.raw(m - 1, 0, k + 1, &with(k)))
            .collect();
        let diag: Option<Vec<Vec<f64>>> = self.rough_form.then(|| {
            (a..b)
                .into_par_iter()
                .map(|j| self.raw(m - 1, 0, j, &with(j)))
                .collect()
        });
        let chunk = b.pow(m as u32 - 1);
        let mut out = vec![0.0; chunk * b];
        let t = self.table;
        out.par_chunks_mut(chunk).enumerate().for_each(|(j, dst)| {
            if j >= a {
                let d = t.diag_mass(j);
                match &diag {
                    Some(dg) => add_embedded(dst, b, &dg[j - a], j, m - 1, d),
                    None => add_embedded(dst, b, &inner[j - a], j + 1, m - 1, d),
                }
                for k in j + 1..b {
                    add_embedded(dst, b, &inner[k - a], k + 1, m - 1, t.dk(k, j));
                }
            } else {
                for k in a..b {
                    add_embedded(dst, b, &inner[k - a], k + 1, m - 1, t.dk(k, j));
                }
            }
        });
        out
    }

    fn grid_index(&self, x: f64, what: &str) -> Result<usize> {
        self.table
            .grid
            .index_of(x)
            .ok_or_else(|| Error::GridMismatch(format!("{what} = {x} is not a grid point")))
    }

    /// `K*^{(n)}_{s,t} h(·, t)` on `[0,t]^n`; `s` and `t` must be grid points.
    pub fn tensor(&self, s: f64, t: f64) -> Result<SimplexKernelTensor> {
        let a = self.grid_index(s, "s")?;
        let b = self.grid_index(t, "t")?;
        if a > b || b == 0 {
            return Err(Error::Domain(format!(
                "need 0 <= s <= t, 0 < t; got s={s}, t={t}"
            )));
        }
        let n = self.spec.order;
        let cells = (b as u128).pow(n as u32);
        if cells > MAX_TENSOR_CELLS {
            return Err(Error::MemoryBound {
                cells,
                limit: MAX_TENSOR_CELLS,
            });
        }
        let grid = self.table.grid.truncate(b)?;
        let (s, t) = (grid.point(a), grid.point(b));
        if a == b {
            return Ok(SimplexKernelTensor::zeros(n, s, t, grid));
        }
        let mut values = self.raw(n, a, b, &[]);
        if self.spec.time_exponent.is_some() {
            let tau = self.spec.time_factor(t);
            values.iter_mut().for_each(|v| *v *= tau);
        }
        Ok(SimplexKernelTensor {
            order: n,
            s,
            t,
            grid,
            values,
        })
    }

    /// Inner kernels for r-cells `0..upto`, without the time factor.
    pub fn parts(&self, upto: usize) -> RecursionParts {
        let n = self.spec.order;
        let inner = (0..upto)
            .into_par_iter()
            .map(|k| self.raw(n - 1, 0, k + 1, &[k]))
            .collect();
        let diag = (self.rough_form && n >= 2).then(|| {
            (0..upto)
                .into_par_iter()
                .map(|k| self.raw(n - 1, 0, k, &[k]))
                .collect()
        });
        RecursionParts {
            order: n,
            inner,
            diag,
        }
    }
}

/// First-order kernel `K*^{(1)}_{s,t} h`.
pub fn kstar1(
    table: &KernelTable,
    spec: &IntegrandSpec,
    s: f64,
    t: f64,
) -> Result<SimplexKernelTensor> {
    if spec.order != 1 {
        return Err(Error::InvalidInput(format!(
            "kstar1 needs order 1, got {}",
            spec.order
        )));
    }
    KStar::new(table, spec)?.tensor(s, t)
}

/// Kernel `K*^{(n)}_{s,t} h` of any supported order.
pub fn kstar_n(
    table: &KernelTable,
    spec: &IntegrandSpec,
    s: f64,
    t: f64,
) -> Result<SimplexKernelTensor> {
    KStar::new(table, spec)?.tensor(s, t)
}

/// Average over all coordinate permutations.
pub fn symmetrize(tensor: &SimplexKernelTensor) -> Result<SimplexKernelTensor> {
    let b = tensor.side();
    let v = &tensor.values;
    let values = match tensor.order {
        1 => v.clone(),
        2 => {
            let mut out = vec![0.0; v.len()];
            for j in 0..b {
                for i in 0..b {
                    out[i + j * b] = 0.5 * (v[i + j * b] + v[j + i * b]);
                }
            }
            out
        }
        3 => {
            let mut out = vec![0.0; v.len()];
            let at = |i: usize, j: usize, k: usize| v[i + b * (j + b * k)];
            for k in 0..b {
                for j in 0..b {
                    for i in 0..b {
                        let sum = at(i, j, k)
                            + at(i, k, j)
                            + at(j, i, k)
                            + at(j, k, i)
                            + at(k, i, j)
                            + at(k, j, i);
                        out[i + b * (j + b * k)] = sum / 6.0;
                    }
                }
            }
            out
        }
        n => {
            return Err(Error::InvalidInput(format!(
                "symmetrize supports n <= 3, got {n}"
            )))
        }
    };
    Ok(SimplexKernelTensor {
        values,
        ..tensor.clone()
    })
}

/// Cells of `grid` clipped to `[s,t]`, as `(lo, hi)` pairs.
fn clipped_cells(grid: &TimeGrid, s: f64, t: f64) -> Vec<(f64, f64)> {
    (0..grid.cells())
        .filter_map(|j| {
            let lo = grid.point(j).max(s);
            let hi = grid.point(j + 1).min(t);
            (hi > lo).then_some((lo, hi))
        })
        .collect()
}

/// `||h 1_{(s,t)}||_{|H^H|} = sqrt(α_H ∬ |h(r)||h(ξ)| |r-ξ|^{2H-2} dr dξ)`,
/// `α_H = H(2H-1)`, for `h` frozen at cell midpoints; the kernel is
/// integrated exactly over each pair of cells.
pub fn abs_hh_norm<F: Fn(f64) -> f64>(
    hurst: f64,
    grid: &TimeGrid,
    h: F,
    s: f64,
    t: f64,
) -> Result<f64> {
    if Regime::of(hurst)? != Regime::Smooth {
        return Err(Error::Regularity(
            "the |H^H| norm is defined for H > 1/2".into(),
        ));
    }
    let cells = clipped_cells(grid, s, t);
    let p = 2.0 * hurst;
    let big_f = |x: f64| x.abs().powf(p) / (p * (p - 1.0));
    let hv: Vec<f64> = cells
        .iter()
        .map(|(lo, hi)| h(0.5 * (lo + hi)).abs())
        .collect();
    let mut total = 0.0;
    for (c, &(a, b)) in cells.iter().enumerate() {
        if hv[c] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for (d, &(cc, dd)) in cells.iter().enumerate() {
            let w = big_f(b - cc) + big_f(a - dd) - big_f(b - dd) - big_f(a - cc);
            row += hv[d] * w;
        }
        total += hv[c] * row;
    }
    Ok((hurst * (p - 1.0) * total).max(0.0).sqrt())
}

/// `||h 1_{(s,t)}||_{L^p}` with `h` frozen at (clipped) cell midpoints.
pub fn lp_norm<F: Fn(f64) -> f64>(grid: &TimeGrid, h: F, p: f64, s: f64, t: f64) -> f64 {
    clipped_cells(grid, s, t)
        .iter()
        .map(|(lo, hi)| h(0.5 * (lo + hi)).abs().powf(p) * (hi - lo))
        .sum::<f64>()
        .powf(1.0 / p)
}

/// Dyadic window sweep `(anchor, anchor + w)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSweep {
    pub anchor: f64,
    pub widths: Vec<f64>,
}

impl BoundSweep {
    /// Widths `largest, largest/2, …` (`points` of them).
    pub fn dyadic(anchor: f64, largest: f64, points: usize) -> Self {
        let widths = (0..points).map(|i| largest / 2f64.powi(i as i32)).collect();
        Self { anchor, widths }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub width: f64,
    pub norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub hurst: f64,
    pub order: usize,
    pub integrand: String,
    pub regularity: Regularity,
    pub anchor: f64,
    pub points: Vec<SweepPoint>,
    /// Fitted exponent of `||K*_{s,t}h||` in `t - s`.
    pub slope: f64,
    pub slope_stderr: f64,
    /// Fitted exponent of the squared norm, `2·slope`.
    pub squared_slope: f64,
    /// `exp(intercept)`: the implied constant of `norm ≈ C (t-s)^{slope}`.
    pub constant: f64,
    /// `H - 1/q` (L^q integrands) or `H` (Hölder integrands).
    pub expected_exponent: f64,
    pub pass: bool,
}

/// Fit the decay of `||K*_{s,t} h||` over the sweep and compare the slope with
/// the exponent of the norm bound (tolerance 0.05 below it).
pub fn verify_bound(
    table: &KernelTable,
    spec: &IntegrandSpec,
    sweep: &BoundSweep,
) -> Result<BoundReport> {
    if sweep.widths.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "bound sweep needs at least 4 windows, got {}",
            sweep.widths.len()
        )));
    }
    let engine = KStar::new(table, spec)?;
    let mut points = Vec::with_capacity(sweep.widths.len());
    for &w in &sweep.widths {
        let tensor = engine.tensor(sweep.anchor, sweep.anchor + w)?;
        points.push(SweepPoint {
            width: w,
            norm: tensor.l2_norm(),
        });
    }
    let x: Vec<f64> = points.iter().map(|p| p.width.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.norm.ln()).collect();
    let fit = linear_fit(&x, &y)?;
    let hurst = table.hurst();
    let expected_exponent = match spec.regularity {
        Regularity::Lq { q } => hurst - 1.0 / q,
        Regularity::SimplexHolder { .. } => hurst,
    };
    Ok(BoundReport {
        hurst,
        order: spec.order,
        integrand: spec.descriptor(),
        regularity: spec.regularity,
        anchor: sweep.anchor,
        points,
        slope: fit.slope,
        slope_stderr: fit.slope_stderr,
        squared_slope: 2.0 * fit.slope,
        constant: fit.intercept.exp(),
        expected_exponent,
        pass: fit.slope >= expected_exponent - 0.05,
    })
}
