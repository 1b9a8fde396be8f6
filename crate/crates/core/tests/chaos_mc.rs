use fbm_chaos::chaos_mc::{
    coarsen_driver, holder_regression, hypercontractivity_ratio, increment_tensor, integral_path,
    mc_increment_moments, scale_family, simulate_coupled, simulate_paths, variance_oracle,
    wiener_ito_sum, wiener_ito_sum_raw, ChaosPathEngine, ChaosSampleSet, McEstimate,
};
use fbm_chaos::fbm::{fbm_from_driver, sample_driver, StreamId};
use fbm_chaos::integrand::{IntegrandSpec, Regularity};
use fbm_chaos::simplex_kernel::{KStar, SimplexKernelTensor};
use fbm_chaos::{Error, HurstParams, KernelTable, TimeGrid};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn table(h: f64, n: usize) -> KernelTable {
    let p = HurstParams::calibrated(h, 1.0).unwrap();
    KernelTable::build(&p, &TimeGrid::uniform(n, 1.0).unwrap()).unwrap()
}

fn spec(h: f64, order: usize, desc: &str) -> IntegrandSpec {
    let reg = if h > 0.5 {
        Regularity::Lq { q: 4.0 }
    } else {
        Regularity::SimplexHolder { lambda: 0.5 }
    };
    // poly descriptors list exponents for order 3; keep the leading ones
    let desc = match desc.strip_prefix("poly:") {
        Some(e) => format!(
            "poly:{}",
            e.split(',').take(order).collect::<Vec<_>>().join(",")
        ),
        None => desc.to_string(),
    };
    IntegrandSpec::parse(&desc, order, reg).unwrap()
}

fn random_tensor(order: usize, side: usize, seed: u64) -> SimplexKernelTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::uniform(side, 1.0).unwrap();
    let mut t = SimplexKernelTensor::zeros(order, 0.0, 1.0, grid);
    t.values
        .iter_mut()
        .for_each(|v| *v = rng.random_range(-1.0..1.0));
    t
}

/// Distinct-index loops, the definition of the off-diagonal sum.
fn naive_sum(t: &SimplexKernelTensor, w: &[f64]) -> f64 {
    let b = t.side();
    let mut acc = 0.0;
    match t.order {
        1 => (0..b).for_each(|i| acc += t.get(&[i]) * w[i]),
        2 => {
            for i in 0..b {
                for j in (0..b).filter(|&j| j != i) {
                    acc += t.get(&[i, j]) * w[i] * w[j];
                }
            }
        }
        _ => {
            for i in 0..b {
                for j in (0..b).filter(|&j| j != i) {
                    for k in (0..b).filter(|&k| k != i && k != j) {
                        acc += t.get(&[i, j, k]) * w[i] * w[j] * w[k];
                    }
                }
            }
        }
    }
    acc
}

#[test]
fn fast_sum_matches_distinct_loops() {
    for order in 1..=3 {
        for seed in 0..4 {
            let t = random_tensor(order, 13, seed);
            let d = sample_driver(&t.grid, StreamId::new(seed, 7));
            let fast = wiener_ito_sum(&t, &d).unwrap();
            let slow = naive_sum(&t, &d.dw);
            assert!(
                (fast - slow).abs() < 1e-12 * (1.0 + slow.abs()),
                "n={order}: {fast} vs {slow}"
            );
        }
    }
}

#[test]
fn sum_uses_driver_prefix_and_rejects_other_grids() {
    let t = random_tensor(2, 8, 1);
    let long = sample_driver(&TimeGrid::uniform(16, 2.0).unwrap(), StreamId::new(3, 0));
    let v = wiener_ito_sum(&t, &long).unwrap();
    assert!((v - naive_sum(&t, &long.dw)).abs() < 1e-12);
    let other = sample_driver(&TimeGrid::uniform(16, 1.0).unwrap(), StreamId::new(3, 0));
    assert!(matches!(
        wiener_ito_sum(&t, &other),
        Err(Error::GridMismatch(_))
    ));
}

#[test]
fn brownian_second_chaos_is_half_square_minus_quadratic_variation() {
    let tab = table(0.5, 32);
    let sp = spec(0.5, 2, "const");
    let ks = KStar::new(&tab, &sp).unwrap();
    let g = ks.tensor(0.0, 1.0).unwrap();
    for seed in 0..3 {
        let d = sample_driver(&tab.grid, StreamId::new(seed, 0));
        let w: f64 = d.dw.iter().sum();
        let qv: f64 = d.dw.iter().map(|x| x * x).sum();
        let v = wiener_ito_sum(&g, &d).unwrap();
        assert!((v - 0.5 * (w * w - qv)).abs() < 1e-12, "{v}");
    }
}

#[test]
fn variance_oracle_symmetry_cases() {
    let sym = {
        let mut t = random_tensor(2, 9, 4);
        let b = t.side();
        for i in 0..b {
            for j in 0..i {
                t.values[j + b * i] = t.values[i + b * j];
            }
        }
        t
    };
    let dt = 1.0 / 9.0;
    let offdiag: f64 = (0..9)
        .flat_map(|i| (0..9).map(move |j| (i, j)))
        .filter(|(i, j)| i != j)
        .map(|(i, j)| sym.get(&[i, j]).powi(2) * dt * dt)
        .sum();
    assert!((variance_oracle(&sym) - 2.0 * offdiag).abs() < 1e-14);

    let mut lower = random_tensor(2, 9, 5);
    let b = lower.side();
    for i in 0..b {
        for j in i..b {
            lower.values[i + b * j] = 0.0;
        }
    }
    let mass: f64 = lower.values.iter().map(|v| v * v * dt * dt).sum();
    assert!((variance_oracle(&lower) - mass).abs() < 1e-14);

    let one = random_tensor(1, 9, 6);
    assert!((variance_oracle(&one) - one.l2_norm().powi(2)).abs() < 1e-14);
}

#[test]
fn variance_oracle_matches_monte_carlo_for_random_tensors() {
    for order in 2..=3 {
        let t = random_tensor(order, 6, 10 + order as u64);
        let values: Vec<f64> = (0..40_000)
            .map(|k| {
                let d = sample_driver(&t.grid, StreamId::new(11, k));
                wiener_ito_sum(&t, &d).unwrap().powi(2)
            })
            .collect();
        let est = McEstimate::from_values(&values, 11).unwrap();
        let exact = variance_oracle(&t);
        assert!(est.within(exact, 3.0), "n={order}: {est:?} vs {exact}");
    }
}

#[test]
fn first_chaos_path_is_the_fbm_path_bitwise() {
    for h in [0.3, 0.5, 0.75] {
        let tab = table(h, 64);
        let d = sample_driver(&tab.grid, StreamId::new(5, 2));
        let chaos = integral_path(&tab, &spec(h, 1, "const"), &d).unwrap();
        let fbm = fbm_from_driver(&tab, &d).unwrap();
        assert_eq!(chaos.values, fbm.values, "H={h}");
    }
}

#[test]
fn incremental_path_matches_full_tensor_sums() {
    for h in [0.3, 0.5, 0.75] {
        for order in 1..=3 {
            for desc in ["const", "poly:1,2,0.5", "time_dep:0.5"] {
                let tab = table(h, 20);
                let sp = spec(h, order, desc);
                let ks = KStar::new(&tab, &sp).unwrap();
                let eng = ChaosPathEngine::new(&tab, &sp, 1).unwrap();
                let d = sample_driver(&tab.grid, StreamId::new(8, 1));
                let path = eng.path(&d.dw);
                assert_eq!(path.values[0], 0.0);
                for b in 1..=20 {
                    let g = ks.tensor(0.0, tab.grid.point(b)).unwrap();
                    let direct = wiener_ito_sum(&g, &d).unwrap();
                    let got = path.values[b];
                    assert!(
                        (got - direct).abs() < 1e-11 * (1.0 + direct.abs()),
                        "H={h} n={order} {desc} b={b}: {got} vs {direct}"
                    );
                }
            }
        }
    }
}

#[test]
fn pathwise_increments_use_the_window_kernel() {
    for h in [0.3, 0.75] {
        for order in 1..=3 {
            let tab = table(h, 24);
            let sp = spec(h, order, "poly:1,0.5,2");
            let ks = KStar::new(&tab, &sp).unwrap();
            let eng = ChaosPathEngine::new(&tab, &sp, 1).unwrap();
            let d = sample_driver(&tab.grid, StreamId::new(2, 9));
            let path = eng.path(&d.dw);
            let (a, b) = (7, 19);
            let (s, t) = (tab.grid.point(a), tab.grid.point(b));
            let window = ks.tensor(s, t).unwrap();
            let inc = increment_tensor(&ks, s, t).unwrap();
            for (x, y) in window.values.iter().zip(&inc.values) {
                assert!((x - y).abs() < 1e-12, "H={h} n={order}");
            }
            let lhs = path.values[b] - path.values[a];
            let rhs = wiener_ito_sum(&window, &d).unwrap();
            assert!(
                (lhs - rhs).abs() < 1e-11 * (1.0 + rhs.abs()),
                "H={h} n={order}: {lhs} vs {rhs}"
            );
        }
    }
}

#[test]
fn stride_subsamples_the_output() {
    let tab = table(0.75, 32);
    let sp = spec(0.75, 2, "const");
    let full = ChaosPathEngine::new(&tab, &sp, 1).unwrap();
    let coarse = ChaosPathEngine::new(&tab, &sp, 8).unwrap();
    let d = sample_driver(&tab.grid, StreamId::new(1, 1));
    let a = full.path(&d.dw);
    let b = coarse.path(&d.dw);
    assert_eq!(b.grid.cells(), 4);
    for (i, v) in b.values.iter().enumerate() {
        assert_eq!(*v, a.values[8 * i]);
    }
}

#[test]
fn zero_integrand_gives_zero_paths() {
    let tab = table(0.3, 16);
    let sp = spec(0.3, 2, "const:0");
    let set = simulate_paths(&ChaosPathEngine::new(&tab, &sp, 1).unwrap(), &sp, 5, 3);
    assert!(set.samples.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn chaos_samples_have_zero_mean() {
    for (h, order) in [(0.3, 1), (0.75, 2), (0.3, 2), (0.75, 3)] {
        let tab = table(h, 16);
        let sp = spec(h, order, "poly:1,1,1");
        let set = simulate_paths(
            &ChaosPathEngine::new(&tab, &sp, 1).unwrap(),
            &sp,
            10_000,
            21,
        );
        let est = McEstimate::from_values(&set.endpoint(), 21).unwrap();
        assert!(est.within(0.0, 3.0), "H={h} n={order}: {est:?}");
    }
}

#[test]
fn second_moment_of_increments_matches_oracle() {
    for (h, order) in [(0.3, 1), (0.75, 1), (0.3, 2), (0.75, 2)] {
        let tab = table(h, 32);
        let sp = spec(h, order, "const");
        let m = mc_increment_moments(&tab, &sp, 0.25, 0.75, 2, 20_000, 4).unwrap();
        let exact = m.exact.unwrap();
        assert!(
            m.estimate.within(exact, 3.0),
            "H={h} n={order}: {:?} vs {exact}",
            m.estimate
        );
    }
}

#[test]
fn first_chaos_fourth_moment_is_gaussian() {
    let tab = table(0.75, 32);
    let sp = spec(0.75, 1, "const");
    let m2 = mc_increment_moments(&tab, &sp, 0.0, 1.0, 2, 20_000, 6).unwrap();
    let m4 = mc_increment_moments(&tab, &sp, 0.0, 1.0, 4, 20_000, 6).unwrap();
    let kurt = m4.estimate.mean / m2.estimate.mean.powi(2);
    assert!((kurt - 3.0).abs() < 0.15, "{kurt}");
    assert!(m4.exact.is_none());
    assert!(mc_increment_moments(&tab, &sp, 0.0, 1.0, 3, 100, 6).is_err());
    assert!(mc_increment_moments(&tab, &sp, 0.5, 0.5, 2, 100, 6).is_err());
}

#[test]
fn scaling_the_family_scales_the_driver() {
    let tab = table(0.75, 16);
    let sp = spec(0.75, 2, "poly:1,2");
    let eng = ChaosPathEngine::new(&tab, &sp, 1).unwrap();
    let set = simulate_paths(&eng, &sp, 20, 9);
    let same = scale_family(&set, 1.0).unwrap();
    assert_eq!(same.samples, set.samples);
    let four = scale_family(&set, 4.0).unwrap();
    for (a, b) in four
        .samples
        .iter()
        .flatten()
        .zip(set.samples.iter().flatten())
    {
        assert_eq!(*a, 4.0 * b);
    }
    assert_eq!(four.epsilon, 4.0);
    let eps: f64 = 0.3;
    let scaled = scale_family(&set, eps).unwrap();
    for (k, row) in scaled.samples.iter().enumerate() {
        let d = sample_driver(&tab.grid, StreamId::new(9, k as u64));
        let w: Vec<f64> = d.dw.iter().map(|x| x * eps.sqrt()).collect();
        for (x, y) in row.iter().zip(eng.path(&w).values) {
            assert!((x - y).abs() < 1e-13 * (1.0 + y.abs()));
        }
    }
    assert!(scale_family(&set, 0.0).is_err());
}

#[test]
fn hypercontractive_ratio_is_below_bound() {
    for (h, order) in [(0.3, 1), (0.75, 2)] {
        let tab = table(h, 32);
        let sp = spec(h, order, "const");
        let set = simulate_paths(&ChaosPathEngine::new(&tab, &sp, 4).unwrap(), &sp, 5_000, 2);
        let r = hypercontractivity_ratio(&set.endpoint());
        assert!(r <= 3f64.powf(order as f64 / 2.0).sqrt() * 1.1, "{r}");
    }
}

#[test]
fn coarsened_driver_sums_blocks() {
    let d = sample_driver(&TimeGrid::uniform(8, 1.0).unwrap(), StreamId::new(0, 0));
    let c = coarsen_driver(&d, 4).unwrap();
    assert_eq!(c.grid.cells(), 2);
    assert!((c.dw[0] - d.dw[..4].iter().sum::<f64>()).abs() < 1e-15);
    assert!(coarsen_driver(&d, 3).is_err());
}

#[test]
fn coupled_levels_share_the_driver() {
    let coarse = table(0.75, 16);
    let fine = table(0.75, 32);
    let sp = spec(0.75, 1, "const");
    let ec = ChaosPathEngine::new(&coarse, &sp, 1).unwrap();
    let ef = ChaosPathEngine::new(&fine, &sp, 1).unwrap();
    let sets = simulate_coupled(&[&ec, &ef], &sp, 4, 13).unwrap();
    assert_eq!(sets[0].grid.cells(), 16);
    assert_eq!(sets[1].grid.cells(), 32);
    // Standard Brownian motion: both levels equal the running sum of the fine driver
    let bm = table(0.5, 32);
    let bmc = table(0.5, 16);
    let sp = spec(0.5, 1, "const");
    let e1 = ChaosPathEngine::new(&bmc, &sp, 1).unwrap();
    let e2 = ChaosPathEngine::new(&bm, &sp, 1).unwrap();
    let sets = simulate_coupled(&[&e1, &e2], &sp, 3, 13).unwrap();
    for k in 0..3 {
        for i in 0..=16 {
            assert!((sets[0].samples[k][i] - sets[1].samples[k][2 * i]).abs() < 1e-12);
        }
    }
    assert!(simulate_coupled(&[&ef, &ec], &sp, 3, 13).is_err());
}

#[test]
fn holder_regression_on_zero_paths() {
    let set = |cells: usize| ChaosSampleSet {
        spec: spec(0.75, 1, "const:0"),
        grid: TimeGrid::uniform(cells, 1.0).unwrap(),
        samples: vec![vec![0.0; cells + 1]; 100],
        epsilon: 1.0,
        seed: 0,
    };
    let r = holder_regression(&[set(8), set(16)], &[0.5, 0.9], 0.75).unwrap();
    assert!(r
        .rows
        .iter()
        .all(|row| row.medians.iter().all(|m| *m == 0.0)));
    assert!(r.rows[0].pass);
    assert!(!r.rows[1].pass);
    let mut few = set(8);
    few.samples.truncate(10);
    assert!(holder_regression(&[few.clone(), few], &[0.5], 0.75).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn sums_are_linear_in_the_tensor(order in 1usize..=3, seed in 0u64..1000, c in -3.0f64..3.0) {
        let a = random_tensor(order, 5, seed);
        let b = random_tensor(order, 5, seed + 1);
        let d = sample_driver(&a.grid, StreamId::new(seed, 0));
        let mut comb = a.clone();
        for (x, y) in comb.values.iter_mut().zip(&b.values) {
            *x += c * y;
        }
        let lhs = wiener_ito_sum_raw(order, 5, &comb.values, &d.dw);
        let rhs = wiener_ito_sum_raw(order, 5, &a.values, &d.dw)
            + c * wiener_ito_sum_raw(order, 5, &b.values, &d.dw);
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn sums_are_n_homogeneous_in_the_driver(order in 1usize..=3, seed in 0u64..1000, c in 0.1f64..3.0) {
        let a = random_tensor(order, 6, seed);
        let d = sample_driver(&a.grid, StreamId::new(seed, 1));
        let w: Vec<f64> = d.dw.iter().map(|x| c * x).collect();
        let lhs = wiener_ito_sum_raw(order, 6, &a.values, &w);
        let rhs = c.powi(order as i32) * wiener_ito_sum_raw(order, 6, &a.values, &d.dw);
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
    }
}
