//! Brownian drivers and fractional Brownian paths.
//!
//! Every driver is generated from its own ChaCha8 stream keyed by
//! `(seed, sample_index)`, so a sample can be regenerated in isolation and
//! parallel Monte Carlo loops are reproducible regardless of scheduling.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::kernel::{fbm_covariance, Regime};
use crate::KernelTable;

/// Identity of a random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub sample_index: u64,
}

impl StreamId {
    pub fn new(seed: u64, sample_index: u64) -> Self {
        Self { seed, sample_index }
    }

    pub fn rng(self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.sample_index);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianDriver {
    pub grid: TimeGrid,
    pub dw: Vec<f64>,
    pub stream: StreamId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PathKind {
    FbmPath,
    ChaosPath,
    SkeletonPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
    pub kind: PathKind,
}

impl PathSample {
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,value")?;
        for (t, v) in self.grid.points().iter().zip(&self.values) {
            writeln!(out, "{t},{v:e}")?;
        }
        Ok(())
    }
}

/// Fill `out` with independent `N(0, Δt_j)` draws; `sqrt_widths[j] = sqrt(Δt_j)`.
pub fn fill_increments(sqrt_widths: &[f64], stream: StreamId, out: &mut [f64]) {
    let mut rng = stream.rng();
    for (o, s) in out.iter_mut().zip(sqrt_widths) {
        let z: f64 = StandardNormal.sample(&mut rng);
        *o = s * z;
    }
}

pub fn sqrt_widths(grid: &TimeGrid) -> Vec<f64> {
    grid.widths().iter().map(|w| w.sqrt()).collect()
}

pub fn sample_driver(grid: &TimeGrid, stream: StreamId) -> BrownianDriver {
    let mut dw = vec![0.0; grid.cells()];
    fill_increments(&sqrt_widths(grid), stream, &mut dw);
    BrownianDriver {
        grid: grid.clone(),
        dw,
        stream,
    }
}

/// `values[i] = Σ_{j<i} K[i][j] dW_j` without checks, for hot loops.
pub fn volterra_sum(table: &KernelTable, dw: &[f64], out: &mut [f64]) {
    out[0] = 0.0;
    for i in 1..out.len() {
        out[i] = table.row(i).iter().zip(dw).map(|(k, w)| k * w).sum();
    }
}

/// Volterra discretization `B^H_{t_i} = Σ_{j<i} K[i][j] dW_j`.
pub fn fbm_from_driver(table: &KernelTable, driver: &BrownianDriver) -> Result<PathSample> {
    if !table.grid.same_as(&driver.grid) {
        return Err(Error::GridMismatch(
            "driver and kernel table grids differ".into(),
        ));
    }
    let mut values = vec![0.0; table.cells() + 1];
    volterra_sum(table, &driver.dw, &mut values);
    Ok(PathSample {
        grid: driver.grid.clone(),
        values,
        kind: PathKind::FbmPath,
    })
}

/// Exact fBm sampler from the Cholesky factor of the covariance matrix on
/// `t_1..t_N`.
#[derive(Debug, Clone)]
pub struct ExactFbm {
    grid: TimeGrid,
    factor: DMatrix<f64>,
}

pub const EXACT_MAX_CELLS: usize = 4096;

impl ExactFbm {
    pub fn new(grid: &TimeGrid, hurst: f64) -> Result<Self> {
        Regime::of(hurst)?;
        let n = grid.cells();
        if n > EXACT_MAX_CELLS {
            return Err(Error::MemoryBound {
                cells: n as u128,
                limit: EXACT_MAX_CELLS as u128,
            });
        }
        let pts = &grid.points()[1..];
        let cov = DMatrix::from_fn(n, n, |i, j| fbm_covariance(hurst, pts[i], pts[j]));
        let chol = cov.cholesky().ok_or_else(|| {
            Error::Factorization(format!(
                "fBm covariance not positive definite (N={n}, H={hurst})"
            ))
        })?;
        Ok(Self {
            grid: grid.clone(),
            factor: chol.unpack(),
        })
    }

    pub fn sample(&self, stream: StreamId) -> PathSample {
        let n = self.grid.cells();
        let mut rng = stream.rng();
        let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        let x = &self.factor * z;
        let mut values = Vec::with_capacity(n + 1);
        values.push(0.0);
        values.extend(x.iter());
        PathSample {
            grid: self.grid.clone(),
            values,
            kind: PathKind::FbmPath,
        }
    }
}

pub fn fbm_exact(grid: &TimeGrid, hurst: f64, stream: StreamId) -> Result<PathSample> {
    Ok(ExactFbm::new(grid, hurst)?.sample(stream))
}

/// Two-sample Kolmogorov–Smirnov test: returns `(D, p-value)` using the
/// asymptotic Kolmogorov distribution with the Stephens correction.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n, m) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let v = x[i].min(y[j]);
        while i < n && x[i] <= v {
            i += 1;
        }
        while j < m && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let en = ((n * m) as f64 / (n + m) as f64).sqrt();
    let lambda = (en + 0.12 + 0.11 / en) * d;
    (d, kolmogorov_survival(lambda))
}

/// `P(K > λ) = 2 Σ_{k>=1} (-1)^{k-1} exp(-2 k² λ²)`.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}
