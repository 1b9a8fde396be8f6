//! Grid Hölder norms of paths and of functions on the simplex.
//!
//! All suprema are taken over grid points and therefore bound the continuum
//! norms from below.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fbm::PathSample;
use crate::grid::TimeGrid;

/// Supremum of one increment quotient, with the configuration attaining it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetTerm {
    /// Selected coordinates, 1-based.
    pub subset: Vec<usize>,
    pub value: f64,
    pub theta: Vec<f64>,
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub exponent: f64,
    pub sup_norm: f64,
    pub increment_quotients: Vec<SubsetTerm>,
    pub total: f64,
    /// Grid point(s) where `|x|` is largest.
    pub argmax_witness: Vec<f64>,
    pub search: SearchMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMethod {
    Enumeration,
    HillClimb,
}

fn check_exponent(g: f64) -> Result<()> {
    if !(g > 0.0 && g < 1.0) {
        return Err(Error::InvalidInput(format!(
            "Hölder exponent {g} outside (0,1)"
        )));
    }
    Ok(())
}

/// `max_{i<j, t_j - t_i <= δ} |x_j - x_i| / (t_j - t_i)^γ` with its witness.
fn max_quotient(times: &[f64], x: &[f64], gamma: f64, delta: f64) -> (f64, usize, usize) {
    let n = x.len();
    let tol = 1e-12 * times[n - 1].abs().max(1.0);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = (0.0, i, i);
            for j in i + 1..n {
                let gap = times[j] - times[i];
                if gap > delta + tol {
                    break;
                }
                let q = (x[j] - x[i]).abs() / gap.powf(gamma);
                if q > best.0 {
                    best = (q, i, j);
                }
            }
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0, 0), |acc, b| if b.0 > acc.0 { b } else { acc })
}

/// Grid `C^γ` norm `sup|x| + max_{i<j} |x_j - x_i| / (t_j - t_i)^γ`.
pub fn holder_norm_values(times: &[f64], x: &[f64], gamma: f64) -> Result<HolderReport> {
    check_exponent(gamma)?;
    if times.len() != x.len() || x.is_empty() {
        return Err(Error::InvalidInput(
            "times and values must have equal, nonzero length".into(),
        ));
    }
    let (imax, sup_norm) = x.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| {
        if v.abs() > acc.1 {
            (i, v.abs())
        } else {
            acc
        }
    });
    let (q, i, j) = max_quotient(times, x, gamma, f64::INFINITY);
    Ok(HolderReport {
        exponent: gamma,
        sup_norm,
        increment_quotients: vec![SubsetTerm {
            subset: vec![1],
            value: q,
            theta: vec![times[i]],
            r: vec![times[j]],
        }],
        total: sup_norm + q,
        argmax_witness: vec![times[imax]],
        search: SearchMethod::Enumeration,
    })
}

pub fn holder_norm_1d(path: &PathSample, gamma: f64) -> Result<HolderReport> {
    holder_norm_values(path.grid.points(), &path.values, gamma)
}

/// `ω_x(δ) = sup_{0 < t_j - t_i <= δ} |x_j - x_i| / (t_j - t_i)^γ`.
pub fn modulus(path: &PathSample, gamma: f64, delta: f64) -> Result<f64> {
    check_exponent(gamma)?;
    if !(delta > 0.0 && delta <= path.grid.horizon() * (1.0 + 1e-12)) {
        return Err(Error::Domain(format!("δ = {delta} outside (0, T]")));
    }
    Ok(max_quotient(path.grid.points(), &path.values, gamma, delta).0)
}

/// Piecewise-linear interpolation through the dyadic points `jT/2^m`.
pub fn dyadic_interpolate(path: &PathSample, level: u32) -> Result<PathSample> {
    let grid = &path.grid;
    let horizon = grid.horizon();
    let count = 1usize << level;
    let nodes: Vec<usize> = (0..=count)
        .map(|j| {
            grid.index_of(horizon * j as f64 / count as f64)
                .ok_or_else(|| {
                    Error::GridMismatch(format!("grid lacks dyadic point {j}/2^{level}·T"))
                })
        })
        .collect::<Result<_>>()?;
    let pts = grid.points();
    let mut values = vec![0.0; pts.len()];
    for w in nodes.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ta, tb) = (pts[a], pts[b]);
        let (xa, xb) = (path.values[a], path.values[b]);
        for (i, v) in values.iter_mut().enumerate().take(b + 1).skip(a) {
            let u = (pts[i] - ta) / (tb - ta);
            *v = xa + u * (xb - xa);
        }
    }
    Ok(PathSample {
        grid: grid.clone(),
        values,
        kind: path.kind,
    })
}

/// Mixed increment `Δ^{i_1…i_k} h(θ; r)`, defined recursively by
/// `Δ^{i_1…i_k} h = Δ^{i_k}(Δ^{i_1…i_{k-1}} h)` with
/// `Δ^i g(θ) = g(θ with θ_i ← r_i) - g(θ)`. `subset` is 0-based and `r` is
/// aligned with it.
pub fn mixed_increment<F: Fn(&[f64]) -> f64 + ?Sized>(
    h: &F,
    theta: &[f64],
    subset: &[usize],
    r: &[f64],
) -> f64 {
    match subset.split_last() {
        None => h(theta),
        Some((&last, rest)) => {
            let mut moved = theta.to_vec();
            moved[last] = r[subset.len() - 1];
            mixed_increment(h, &moved, rest, &r[..rest.len()])
                - mixed_increment(h, theta, rest, &r[..rest.len()])
        }
    }
}

/// Admissible configurations: `θ_1 <= … <= θ_n` and, for selected
/// `i_1 < … < i_k`, `θ_{i_j} < r_{i_j} <= θ_{i_{j+1}}` (`<= t` for the last).
struct Config<'a> {
    n: usize,
    subset: &'a [usize],
    last: usize,
}

impl Config<'_> {
    fn upper(&self, theta: &[usize], j: usize) -> usize {
        match self.subset.get(j + 1) {
            Some(&next) => theta[next],
            None => self.last,
        }
    }

    fn feasible(&self, theta: &[usize], r: &[usize]) -> bool {
        theta.windows(2).all(|w| w[0] <= w[1])
            && theta[self.n - 1] <= self.last
            && self
                .subset
                .iter()
                .enumerate()
                .all(|(j, &i)| theta[i] < r[j] && r[j] <= self.upper(theta, j))
    }
}

/// Allocation-free form of [`mixed_increment`] for `n <= 3`.
fn mixed_small<F: Fn(&[f64]) -> f64 + ?Sized>(
    h: &F,
    theta: [f64; 3],
    n: usize,
    subset: &[usize],
    r: &[f64],
) -> f64 {
    match subset.split_last() {
        None => h(&theta[..n]),
        Some((&last, rest)) => {
            let mut moved = theta;
            moved[last] = r[rest.len()];
            mixed_small(h, moved, n, rest, r) - mixed_small(h, theta, n, rest, r)
        }
    }
}

fn quotient<F: Fn(&[f64]) -> f64 + ?Sized>(
    h: &F,
    pts: &[f64],
    subset: &[usize],
    theta: &[usize],
    r: &[usize],
    lambda: f64,
) -> f64 {
    let mut th = [0.0; 3];
    let mut rv = [0.0; 3];
    for (d, &i) in th.iter_mut().zip(theta) {
        *d = pts[i];
    }
    for (d, &i) in rv.iter_mut().zip(r) {
        *d = pts[i];
    }
    let denom: f64 = subset
        .iter()
        .zip(&rv)
        .map(|(&i, rr)| (rr - th[i]).powf(lambda))
        .product();
    mixed_small(h, th, theta.len(), subset, &rv).abs() / denom
}

type Best = (f64, Vec<usize>, Vec<usize>);

fn better(a: Best, b: Best) -> Best {
    // ties resolve to the lexicographically smaller configuration
    if b.0 > a.0 || (b.0 == a.0 && (&b.1, &b.2) < (&a.1, &a.2)) {
        b
    } else {
        a
    }
}

fn enumerate_r<F: Fn(&[f64]) -> f64 + ?Sized>(
    h: &F,
    pts: &[f64],
    cfg: &Config,
    lambda: f64,
    theta: &[usize],
    r: &mut Vec<usize>,
    best: &mut Best,
) {
    let j = r.len();
    if j == cfg.subset.len() {
        let q = quotient(h, pts, cfg.subset, theta, r, lambda);
        if q > best.0 {
            *best = (q, theta.to_vec(), r.clone());
        }
        return;
    }
    let lo = theta[cfg.subset[j]] + 1;
    for v in lo..=cfg.upper(theta, j) {
        r.push(v);
        enumerate_r(h, pts, cfg, lambda, theta, r, best);
        r.pop();
    }
}

fn enumerate_theta<F: Fn(&[f64]) -> f64 + ?Sized>(
    h: &F,
    pts: &[f64],
    cfg: &Config,
    lambda: f64,
    theta: &mut Vec<usize>,
    best: &mut Best,
) {
    if theta.len() == cfg.n {
        enumerate_r(h, pts, cfg, lambda, theta, &mut Vec::new(), best);
        return;
    }
    let lo = theta.last().copied().unwrap_or(0);
    for v in lo..=cfg.last {
        theta.push(v);
        enumerate_theta(h, pts, cfg, lambda, theta, best);
        theta.pop();
    }
}

fn enumerate_subset<F: Fn(&[f64]) -> f64 + Sync + ?Sized>(
    h: &F,
    pts: &[f64],
    n: usize,
    subset: &[usize],
    lambda: f64,
) -> Best {
    let cfg = Config {
        n,
        subset,
        last: pts.len() - 1,
    };
    (0..pts.len())
        .into_par_iter()
        .map(|first| {
            let mut best = (0.0, vec![first; n], vec![]);
            let mut theta = vec![first];
            enumerate_theta(h, pts, &cfg, lambda, &mut theta, &mut best);
            best
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, vec![], vec![]), better)
}

/// Coordinate-wise hill climbing from `start` with shrinking steps.
fn climb<F: Fn(&[f64]) -> f64 + ?Sized>(
    h: &F,
    pts: &[f64],
    cfg: &Config,
    lambda: f64,
    start: Best,
) -> Best {
    let (mut value, mut theta, mut r) = start;
    let mut step = (pts.len() / 4).max(1);
    loop {
        let mut improved = false;
        let dims = theta.len() + r.len();
        for d in 0..dims {
            for dir in [-1i64, 1] {
                let (mut t2, mut r2) = (theta.clone(), r.clone());
                let slot = if d < t2.len() {
                    &mut t2[d]
                } else {
                    &mut r2[d - theta.len()]
                };
                let moved = *slot as i64 + dir * step as i64;
                if moved < 0 || moved > cfg.last as i64 {
                    continue;
                }
                *slot = moved as usize;
                if !cfg.feasible(&t2, &r2) {
                    continue;
                }
                let q = quotient(h, pts, cfg.subset, &t2, &r2, lambda);
                if q > value {
                    value = q;
                    theta = t2;
                    r = r2;
                    improved = true;
                }
            }
        }
        if !improved {
            if step == 1 {
                break;
            }
            step /= 2;
        }
    }
    (value, theta, r)
}

fn random_config(rng: &mut ChaCha8Rng, cfg: &Config) -> Option<(Vec<usize>, Vec<usize>)> {
    for _ in 0..100 {
        let mut theta: Vec<usize> = (0..cfg.n).map(|_| rng.random_range(0..=cfg.last)).collect();
        theta.sort_unstable();
        let mut r = Vec::with_capacity(cfg.subset.len());
        let mut ok = true;
        for (j, &i) in cfg.subset.iter().enumerate() {
            let (lo, hi) = (theta[i] + 1, cfg.upper(&theta, j));
            if lo > hi {
                ok = false;
                break;
            }
            r.push(rng.random_range(lo..=hi));
        }
        if ok {
            return Some((theta, r));
        }
    }
    None
}

/// Largest grid (points per axis) searched exhaustively.
pub const ENUMERATION_MAX_POINTS: usize = 65;
/// Cap on the approximate number of configurations of one exhaustive search.
pub const ENUMERATION_BUDGET: f64 = 4e6;
const RESTARTS: usize = 32;

/// Roughly `m^{n+k} / (n+k)!` admissible configurations on `m` points.
fn config_count(m: usize, n: usize, k: usize) -> f64 {
    let d = (n + k) as i32;
    (m as f64).powi(d) / (1..=d).map(f64::from).product::<f64>()
}

fn enumerable(m: usize, n: usize, k: usize) -> bool {
    m <= ENUMERATION_MAX_POINTS && config_count(m, n, k) <= ENUMERATION_BUDGET
}

fn search_subset<F: Fn(&[f64]) -> f64 + Sync + ?Sized>(
    h: &F,
    pts: &[f64],
    n: usize,
    subset: &[usize],
    lambda: f64,
    seed: u64,
) -> Best {
    let k = subset.len();
    if enumerable(pts.len(), n, k) {
        return enumerate_subset(h, pts, n, subset, lambda);
    }
    let cfg = Config {
        n,
        subset,
        last: pts.len() - 1,
    };
    // exhaustive search on a subsampled grid seeds the first climb
    // powers of two keep baseline grids nested across resolutions
    let mut stride = 2;
    while !enumerable((pts.len() - 1) / stride + 1, n, k) {
        stride *= 2;
    }
    let coarse_idx: Vec<usize> = (0..pts.len()).step_by(stride).collect();
    let coarse: Vec<f64> = coarse_idx.iter().map(|&i| pts[i]).collect();
    let (_, ct, cr) = enumerate_subset(h, &coarse, n, subset, lambda);
    let mut starts = Vec::new();
    if !ct.is_empty() {
        let t: Vec<usize> = ct.iter().map(|&i| coarse_idx[i]).collect();
        let r: Vec<usize> = cr.iter().map(|&i| coarse_idx[i]).collect();
        starts.push((t, r));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..RESTARTS {
        if let Some(c) = random_config(&mut rng, &cfg) {
            starts.push(c);
        }
    }
    starts
        .into_par_iter()
        .map(|(t, r)| {
            let q = quotient(h, pts, subset, &t, &r, lambda);
            climb(h, pts, &cfg, lambda, (q, t, r))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, vec![], vec![]), better)
}

/// Simplex Hölder norm of order `λ` over the grid points, `n <= 3`:
/// `sup|h|` plus, for every nonempty subset of coordinates, the supremum of
/// `|Δ^{i_1…i_k} h| / Π_j (r_{i_j} - θ_{i_j})^λ` over admissible configurations.
pub fn simplex_holder_norm<F: Fn(&[f64]) -> f64 + Sync + ?Sized>(
    h: &F,
    n: usize,
    lambda: f64,
    grid: &TimeGrid,
) -> Result<HolderReport> {
    check_exponent(lambda)?;
    if n == 0 || n > 3 {
        return Err(Error::InvalidInput(format!(
            "simplex Hölder norm supports n <= 3, got {n}"
        )));
    }
    let pts = grid.points();
    let sup = enumerate_subset(&|x: &[f64]| h(x).abs(), pts, n, &[], 0.5);
    let sup_norm = sup.0;
    let subsets: Vec<Vec<usize>> = (1u32..(1 << n))
        .map(|mask| (0..n).filter(|i| mask & (1 << i) != 0).collect())
        .collect();
    let search = if enumerable(pts.len(), n, n) {
        SearchMethod::Enumeration
    } else {
        SearchMethod::HillClimb
    };
    let terms: Vec<SubsetTerm> = subsets
        .iter()
        .enumerate()
        .map(|(idx, s)| {
            let (value, t, r) = search_subset(h, pts, n, s, lambda, idx as u64);
            SubsetTerm {
                subset: s.iter().map(|i| i + 1).collect(),
                value,
                theta: t.iter().map(|&i| pts[i]).collect(),
                r: r.iter().map(|&i| pts[i]).collect(),
            }
        })
        .collect();
    let total = sup_norm + terms.iter().map(|t| t.value).sum::<f64>();
    Ok(HolderReport {
        exponent: lambda,
        sup_norm,
        increment_quotients: terms,
        total,
        argmax_witness: sup.1.iter().map(|&i| pts[i]).collect(),
        search,
    })
}
