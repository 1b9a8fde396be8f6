//! Discrete multiple Wiener–Itô sums and Monte Carlo over chaos paths.
//!
//! A path `t ↦ I_t` is assembled incrementally: going from `t_b` to
//! `t_{b+1}` adds the rank-one tensor `inner_b ⊗ c_b` to the kernel, so each
//! step only needs an `O(b^{n-1})` contraction with the driver instead of a
//! fresh `O(b^n)` sum.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::{sample_driver, BrownianDriver, PathKind, PathSample, StreamId};
use crate::grid::TimeGrid;
use crate::holder::holder_norm_values;
use crate::integrand::IntegrandSpec;
use crate::simplex_kernel::{add_embedded, KStar, RecursionParts, SimplexKernelTensor};
use crate::KernelTable;

/// Upper bound on the number of stored recursion coefficients of a path engine.
pub const MAX_PARTS_CELLS: u128 = 1 << 26;

/// Off-diagonal sum `Σ_{distinct j} g[j_1..j_n] w_{j_1}⋯w_{j_n}` for a flat
/// tensor of the given side (first index fastest). No checks.
pub fn wiener_ito_sum_raw(order: usize, side: usize, g: &[f64], w: &[f64]) -> f64 {
    let w = &w[..side];
    match order {
        1 => g.iter().zip(w).map(|(a, b)| a * b).sum(),
        2 => {
            let mut all = 0.0;
            let mut diag = 0.0;
            for (i2, &w2) in w.iter().enumerate() {
                let row = &g[i2 * side..(i2 + 1) * side];
                all += w2 * row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                diag += row[i2] * w2 * w2;
            }
            all - diag
        }
        3 => {
            let b2 = side * side;
            let (mut all, mut s12, mut s13, mut s23, mut s123) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (i3, &w3) in w.iter().enumerate() {
                let slab = &g[i3 * b2..(i3 + 1) * b2];
                let mut inner = 0.0;
                for (i2, &w2) in w.iter().enumerate() {
                    let row = &slab[i2 * side..(i2 + 1) * side];
                    inner += w2 * row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                    // i1 = i2
                    s12 += row[i2] * w2 * w2 * w3;
                    // i2 = i3
                    if i2 == i3 {
                        s23 += w2 * w2 * row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                all += w3 * inner;
                // i1 = i3
                for (i2, &w2) in w.iter().enumerate() {
                    s13 += slab[i2 * side + i3] * w3 * w3 * w2;
                }
                s123 += slab[i3 * side + i3] * w3 * w3 * w3;
            }
            all - s12 - s13 - s23 + 2.0 * s123
        }
        _ => panic!("Wiener-Itô sums are implemented for orders 1..=3"),
    }
}

/// Wiener–Itô sum of `tensor` against the leading cells of `driver`.
pub fn wiener_ito_sum(tensor: &SimplexKernelTensor, driver: &BrownianDriver) -> Result<f64> {
    let side = tensor.side();
    if side > driver.grid.cells() || !driver.grid.truncate(side)?.same_as(&tensor.grid) {
        return Err(Error::GridMismatch(
            "tensor grid is not a prefix of the driver grid".into(),
        ));
    }
    if tensor.order > 3 {
        return Err(Error::InvalidInput("order above 3".into()));
    }
    Ok(wiener_ito_sum_raw(
        tensor.order,
        side,
        &tensor.values,
        &driver.dw,
    ))
}

/// `E[I(g)^2] = n! Σ_{distinct j} sym(g)_j^2 Π Δθ_{j_i}` for the discrete sum.
pub fn variance_oracle(tensor: &SimplexKernelTensor) -> f64 {
    let b = tensor.side();
    let dt = tensor.grid.widths();
    let g = &tensor.values;
    match tensor.order {
        1 => g.iter().zip(&dt).map(|(v, d)| v * v * d).sum(),
        2 => {
            let mut acc = 0.0;
            for i in 0..b {
                for j in 0..b {
                    if i != j {
                        let s = 0.5 * (g[i + b * j] + g[j + b * i]);
                        acc += s * s * dt[i] * dt[j];
                    }
                }
            }
            2.0 * acc
        }
        3 => {
            let at = |i: usize, j: usize, k: usize| g[i + b * j + b * b * k];
            let mut acc = 0.0;
            for k in 0..b {
                for j in 0..b {
                    if j == k {
                        continue;
                    }
                    for i in 0..b {
                        if i == j || i == k {
                            continue;
                        }
                        let s = (at(i, j, k)
                            + at(i, k, j)
                            + at(j, i, k)
                            + at(j, k, i)
                            + at(k, i, j)
                            + at(k, j, i))
                            / 6.0;
                        acc += s * s * dt[i] * dt[j] * dt[k];
                    }
                }
            }
            6.0 * acc
        }
        _ => f64::NAN,
    }
}

/// `Σ_{i1≠i2} A[i1,i2] x_{i1} y_{i2}` for a square flat matrix of side `m`.
fn offdiag_bilinear(a: &[f64], m: usize, x: &[f64], y: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i2 in 0..m {
        let row = &a[i2 * m..(i2 + 1) * m];
        let s: f64 = row.iter().zip(&x[..m]).map(|(p, q)| p * q).sum();
        acc += y[i2] * (s - row[i2] * x[i2]);
    }
    acc
}

/// Precomputed kernels for evaluating `t ↦ I_t` on every grid point.
pub struct ChaosPathEngine<'a> {
    table: &'a KernelTable,
    order: usize,
    rough_form: bool,
    tau: Vec<f64>,
    /// order 1: the kernel `K*_{0,t_b}` for every `b`, time factor included
    columns: Vec<Vec<f64>>,
    parts: Option<RecursionParts>,
    stride: usize,
    out_grid: TimeGrid,
}

impl<'a> ChaosPathEngine<'a> {
    pub fn new(table: &'a KernelTable, spec: &IntegrandSpec, stride: usize) -> Result<Self> {
        let kstar = KStar::new(table, spec)?;
        let n = spec.order;
        let cells = table.cells();
        let (out_grid, _) = table.grid.subsample(stride)?;
        let footprint: u128 = (1..=cells as u128)
            .map(|s| s.pow(n as u32 - 1))
            .sum::<u128>()
            * if n == 1 { 1 } else { 2 };
        if footprint > MAX_PARTS_CELLS {
            return Err(Error::MemoryBound {
                cells: footprint,
                limit: MAX_PARTS_CELLS,
            });
        }
        let pts = table.grid.points();
        let tau = pts.iter().map(|&t| spec.time_factor(t)).collect();
        let (columns, parts) = if n == 1 {
            let cols = (1..=cells)
                .into_par_iter()
                .map(|b| kstar.tensor(0.0, pts[b]).map(|t| t.values))
                .collect::<Result<Vec<_>>>()?;
            (cols, None)
        } else {
            (Vec::new(), Some(kstar.parts(cells)))
        };
        Ok(Self {
            table,
            order: n,
            rough_form: table.regime().uses_rough_form(),
            tau,
            columns,
            parts,
            stride,
            out_grid,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.out_grid
    }

    pub fn table(&self) -> &KernelTable {
        self.table
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Values of the path at every grid point from driver increments `w`.
    pub fn full_path(&self, w: &[f64]) -> Vec<f64> {
        let cells = self.table.cells();
        let mut out = vec![0.0; cells + 1];
        if self.order == 1 {
            for (b, col) in self.columns.iter().enumerate() {
                out[b + 1] = col.iter().zip(w).map(|(k, x)| k * x).sum();
            }
            return out;
        }
        let parts = self.parts.as_ref().expect("parts exist for order >= 2");
        let t = self.table;
        let mut acc = 0.0;
        let mut c = vec![0.0; cells + 1];
        let mut cww = vec![0.0; cells + 1];
        for b in 0..cells {
            for j in 0..b {
                c[j] = t.dk(b, j);
            }
            let d = t.diag_mass(b);
            c[b] = if self.rough_form { 0.0 } else { d };
            let u = &parts.inner[b];
            let m = b + 1;
            let step = match self.order {
                2 => {
                    let uw: f64 = u.iter().zip(w).map(|(p, q)| p * q).sum();
                    let cw: f64 = c[..m].iter().zip(w).map(|(p, q)| p * q).sum();
                    let corr: f64 = (0..m).map(|i| u[i] * c[i] * w[i] * w[i]).sum();
                    let mut s = uw * cw - corr;
                    if let Some(dg) = &parts.diag {
                        let dw: f64 = dg[b].iter().zip(w).map(|(p, q)| p * q).sum();
                        s += d * w[b] * dw;
                    }
                    s
                }
                3 => {
                    for i in 0..m {
                        cww[i] = c[i] * w[i] * w[i];
                    }
                    let cw: f64 = c[..m].iter().zip(w).map(|(p, q)| p * q).sum();
                    let mut s = offdiag_bilinear(u, m, w, w) * cw
                        - offdiag_bilinear(u, m, &cww, w)
                        - offdiag_bilinear(u, m, w, &cww);
                    if let Some(dg) = &parts.diag {
                        s += d * w[b] * offdiag_bilinear(&dg[b], b, w, w);
                    }
                    s
                }
                _ => unreachable!("orders above 3 are rejected on validation"),
            };
            acc += step;
            out[b + 1] = self.tau[b + 1] * acc;
        }
        out
    }

    /// The path on the engine's output grid.
    pub fn path(&self, w: &[f64]) -> PathSample {
        let full = self.full_path(w);
        let values = full.into_iter().step_by(self.stride).collect();
        PathSample {
            grid: self.out_grid.clone(),
            values,
            kind: PathKind::ChaosPath,
        }
    }
}

/// Chaos path `t ↦ I^{(n)}_t(h)` driven by `driver`, at every grid point.
pub fn integral_path(
    table: &KernelTable,
    spec: &IntegrandSpec,
    driver: &BrownianDriver,
) -> Result<PathSample> {
    if !table.grid.same_as(&driver.grid) {
        return Err(Error::GridMismatch(
            "driver and kernel table grids differ".into(),
        ));
    }
    Ok(ChaosPathEngine::new(table, spec, 1)?.path(&driver.dw))
}

/// Monte Carlo paths of `ε^{n/2} I^{(n)}`.
#[derive(Clone)]
pub struct ChaosSampleSet {
    pub spec: IntegrandSpec,
    pub grid: TimeGrid,
    /// `samples[k][i]`: path `k` at time `grid.point(i)`
    pub samples: Vec<Vec<f64>>,
    pub epsilon: f64,
    pub seed: u64,
}

impl ChaosSampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Values of every path at grid index `i`.
    pub fn at(&self, i: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[i]).collect()
    }

    pub fn endpoint(&self) -> Vec<f64> {
        self.at(self.grid.cells())
    }

    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "sample_index,t,value")?;
        for (k, s) in self.samples.iter().enumerate() {
            for (t, v) in self.grid.points().iter().zip(s) {
                writeln!(out, "{k},{t},{v:e}")?;
            }
        }
        Ok(())
    }
}

/// `n_samples` independent paths; sample `k` uses stream `(seed, k)`.
pub fn simulate_paths(
    engine: &ChaosPathEngine,
    spec: &IntegrandSpec,
    n_samples: usize,
    seed: u64,
) -> ChaosSampleSet {
    let grid = &engine.table().grid;
    let samples = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let d = sample_driver(grid, StreamId::new(seed, k));
            engine.path(&d.dw).values
        })
        .collect();
    ChaosSampleSet {
        spec: spec.clone(),
        grid: engine.grid().clone(),
        samples,
        epsilon: 1.0,
        seed,
    }
}

/// Multiply every path by `ε^{n/2}`.
pub fn scale_family(samples: &ChaosSampleSet, epsilon: f64) -> Result<ChaosSampleSet> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidInput(format!(
            "ε must be positive, got {epsilon}"
        )));
    }
    let f = epsilon.powf(samples.spec.order as f64 / 2.0);
    let mut out = samples.clone();
    out.samples.iter_mut().flatten().for_each(|v| *v *= f);
    out.epsilon *= epsilon;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub variance: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl McEstimate {
    /// Sample mean with the unbiased variance, summed in index order.
    pub fn from_values(values: &[f64], seed: u64) -> Result<Self> {
        let n = values.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!(
                "need >= 2 samples, got {n}"
            )));
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        Ok(Self {
            mean,
            variance,
            stderr: (variance / n as f64).sqrt(),
            n_samples: n,
            seed,
        })
    }

    pub fn within(&self, target: f64, sigmas: f64) -> bool {
        (self.mean - target).abs() <= sigmas * self.stderr
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementMoments {
    pub p: u32,
    pub estimate: McEstimate,
    /// Exact `E|I_t - I_s|^2` of the discrete sum (p = 2 only).
    pub exact: Option<f64>,
}

/// Kernel of the increment `I_t - I_s` on `[0,t]^n`.
pub fn increment_tensor(kstar: &KStar, s: f64, t: f64) -> Result<SimplexKernelTensor> {
    let mut full = kstar.tensor(0.0, t)?;
    if s > 0.0 {
        let early = kstar.tensor(0.0, s)?;
        let (b, side, n) = (full.side(), early.side(), full.order);
        let chunk = b.pow(n as u32 - 1);
        let inner = side.pow(n as u32 - 1);
        for j in 0..side {
            add_embedded(
                &mut full.values[j * chunk..(j + 1) * chunk],
                b,
                &early.values[j * inner..(j + 1) * inner],
                side,
                n - 1,
                -1.0,
            );
        }
    }
    full.s = s;
    Ok(full)
}

/// Monte Carlo estimate of `E|I_t - I_s|^p`, `p ∈ {2, 4}`.
pub fn mc_increment_moments(
    table: &KernelTable,
    spec: &IntegrandSpec,
    s: f64,
    t: f64,
    p: u32,
    n_samples: usize,
    seed: u64,
) -> Result<IncrementMoments> {
    if p != 2 && p != 4 {
        return Err(Error::InvalidInput(format!(
            "moment order {p} not in {{2, 4}}"
        )));
    }
    if !(s < t) {
        return Err(Error::Domain(format!("need s < t, got s={s}, t={t}")));
    }
    let kstar = KStar::new(table, spec)?;
    let g = increment_tensor(&kstar, s, t)?;
    let side = g.side();
    let grid = &table.grid;
    let values: Vec<f64> = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let d = sample_driver(grid, StreamId::new(seed, k));
            wiener_ito_sum_raw(g.order, side, &g.values, &d.dw)
                .abs()
                .powi(p as i32)
        })
        .collect();
    Ok(IncrementMoments {
        p,
        estimate: McEstimate::from_values(&values, seed)?,
        exact: (p == 2).then(|| variance_oracle(&g)),
    })
}

/// `||X||_4 / ||X||_2` from samples.
pub fn hypercontractivity_ratio(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m2 = values.iter().map(|v| v * v).sum::<f64>() / n;
    let m4 = values.iter().map(|v| v.powi(4)).sum::<f64>() / n;
    m4.powf(0.25) / m2.sqrt()
}

/// Sum consecutive groups of `factor` increments into a coarser driver.
pub fn coarsen_driver(driver: &BrownianDriver, factor: usize) -> Result<BrownianDriver> {
    let cells = driver.grid.cells();
    if factor == 0 || cells % factor != 0 {
        return Err(Error::GridMismatch(format!(
            "cannot group {cells} cells in blocks of {factor}"
        )));
    }
    let (grid, _) = driver.grid.subsample(factor)?;
    let dw = driver.dw.chunks(factor).map(|c| c.iter().sum()).collect();
    Ok(BrownianDriver {
        grid,
        dw,
        stream: driver.stream,
    })
}

/// Paths at several resolutions from shared fine-grid drivers.
///
/// `engines` must be ordered coarse to fine with nested uniform grids; the
/// driver of sample `k` lives on the finest grid and is aggregated for the
/// coarser ones.
pub fn simulate_coupled(
    engines: &[&ChaosPathEngine],
    spec: &IntegrandSpec,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<ChaosSampleSet>> {
    let fine = engines
        .last()
        .ok_or_else(|| Error::InvalidInput("no refinement levels".into()))?;
    let fine_grid = &fine.table().grid;
    let factors = engines
        .iter()
        .map(|e| {
            let c = e.table().cells();
            let f = fine_grid.cells() / c.max(1);
            let ok = c > 0
                && f * c == fine_grid.cells()
                && fine_grid
                    .subsample(f)
                    .map(|g| g.0.same_as(&e.table().grid))
                    .unwrap_or(false);
            ok.then_some(f)
                .ok_or_else(|| Error::GridMismatch("refinement levels must be nested grids".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_sample: Vec<Vec<Vec<f64>>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let d = sample_driver(fine_grid, StreamId::new(seed, k));
            engines
                .iter()
                .zip(&factors)
                .map(|(e, &f)| {
                    let c = coarsen_driver(&d, f).expect("factor checked above");
                    e.path(&c.dw).values
                })
                .collect()
        })
        .collect();
    Ok(engines
        .iter()
        .enumerate()
        .map(|(l, e)| ChaosSampleSet {
            spec: spec.clone(),
            grid: e.grid().clone(),
            samples: per_sample.iter().map(|s| s[l].clone()).collect(),
            epsilon: 1.0,
            seed,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expectation {
    Stable,
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderRow {
    pub gamma: f64,
    pub expectation: Expectation,
    /// Median grid `C^γ` norm at each level, coarse to fine.
    pub medians: Vec<f64>,
    /// `median(finest) / median(coarsest) - 1`.
    pub growth: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderRegressionReport {
    pub threshold: f64,
    pub cells: Vec<usize>,
    pub n_paths: usize,
    pub stable_growth_max: f64,
    pub divergent_growth_min: f64,
    pub rows: Vec<HolderRow>,
    pub pass: bool,
}

pub const STABLE_GROWTH_MAX: f64 = 0.25;
pub const DIVERGENT_GROWTH_MIN: f64 = 0.5;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Refinement study of grid Hölder norms. Exponents below `threshold` must
/// stay stable from the coarsest to the finest level, the others must grow.
pub fn holder_regression(
    levels: &[ChaosSampleSet],
    gammas: &[f64],
    threshold: f64,
) -> Result<HolderRegressionReport> {
    let n_paths = levels.first().map_or(0, |l| l.len());
    if levels.len() < 2 || n_paths < 100 || levels.iter().any(|l| l.len() != n_paths) {
        return Err(Error::InsufficientData(
            "need >= 2 levels with the same number (>= 100) of paths".into(),
        ));
    }
    let rows = gammas
        .iter()
        .map(|&gamma| {
            let medians = levels
                .iter()
                .map(|l| {
                    let norms = l
                        .samples
                        .par_iter()
                        .map(|s| holder_norm_values(l.grid.points(), s, gamma).map(|r| r.total))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(median(norms))
                })
                .collect::<Result<Vec<f64>>>()?;
            let (lo, hi) = (medians[0], medians[medians.len() - 1]);
            let growth = if lo == 0.0 && hi == 0.0 {
                0.0
            } else {
                hi / lo - 1.0
            };
            let expectation = if gamma < threshold {
                Expectation::Stable
            } else {
                Expectation::Divergent
            };
            let pass = match expectation {
                Expectation::Stable => growth < STABLE_GROWTH_MAX,
                Expectation::Divergent => growth > DIVERGENT_GROWTH_MIN,
            };
            Ok(HolderRow {
                gamma,
                expectation,
                medians,
                growth,
                pass,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(HolderRegressionReport {
        threshold,
        cells: levels.iter().map(|l| l.grid.cells()).collect(),
        n_paths,
        stable_growth_max: STABLE_GROWTH_MAX,
        divergent_growth_min: DIVERGENT_GROWTH_MIN,
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}
