use fbm_chaos::fbm::{
    fbm_exact, fbm_from_driver, ks_two_sample, sample_driver, volterra_sum, ExactFbm, StreamId,
};
use fbm_chaos::{HurstParams, KernelTable, TimeGrid};

fn table(h: f64, n: usize) -> KernelTable {
    let p = HurstParams::calibrated(h, 1.0).unwrap();
    KernelTable::build(&p, &TimeGrid::uniform(n, 1.0).unwrap()).unwrap()
}

fn mean_and_stderr(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn drivers_are_reproducible_and_distinct() {
    let grid = TimeGrid::uniform(32, 1.0).unwrap();
    let a = sample_driver(&grid, StreamId::new(7, 3));
    let b = sample_driver(&grid, StreamId::new(7, 3));
    let c = sample_driver(&grid, StreamId::new(7, 4));
    assert_eq!(a.dw, b.dw);
    assert_ne!(a.dw, c.dw);
    assert_eq!(a.dw.len(), 32);
}

#[test]
fn driver_increments_have_the_right_moments() {
    let grid = TimeGrid::from_points(vec![0.0, 0.1, 0.5, 2.0]).unwrap();
    let draws: Vec<Vec<f64>> = (0..100_000)
        .map(|i| sample_driver(&grid, StreamId::new(11, i)).dw)
        .collect();
    for j in 0..3 {
        let x: Vec<f64> = draws.iter().map(|d| d[j]).collect();
        let (m, se) = mean_and_stderr(&x);
        assert!(m.abs() < 3.0 * se, "cell {j}: mean {m}");
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let (v, se) = mean_and_stderr(&sq);
        assert!((v - grid.width(j)).abs() < 3.0 * se, "cell {j}: var {v}");
    }
}

#[test]
fn standard_path_is_the_running_sum() {
    let t = table(0.5, 16);
    let d = sample_driver(&t.grid, StreamId::new(1, 0));
    let path = fbm_from_driver(&t, &d).unwrap();
    let mut acc = 0.0;
    for i in 1..=16 {
        acc += d.dw[i - 1];
        assert!((path.values[i] - acc).abs() < 1e-14);
    }
    assert_eq!(path.values[0], 0.0);
}

#[test]
fn volterra_path_is_linear_in_the_driver() {
    let t = table(0.3, 32);
    let d = sample_driver(&t.grid, StreamId::new(2, 0));
    let mut p1 = vec![0.0; 33];
    let mut p2 = vec![0.0; 33];
    volterra_sum(&t, &d.dw, &mut p1);
    let doubled: Vec<f64> = d.dw.iter().map(|w| 2.0 * w).collect();
    volterra_sum(&t, &doubled, &mut p2);
    for (a, b) in p1.iter().zip(&p2) {
        assert_eq!(2.0 * a, *b);
    }
    volterra_sum(&t, &vec![0.0; 32], &mut p2);
    assert!(p2.iter().all(|v| *v == 0.0));
}

#[test]
fn grid_mismatch_is_rejected() {
    let t = table(0.75, 16);
    let d = sample_driver(&TimeGrid::uniform(16, 2.0).unwrap(), StreamId::new(1, 0));
    assert!(fbm_from_driver(&t, &d).is_err());
}

#[test]
fn volterra_paths_have_fbm_covariance() {
    let t = table(0.75, 128);
    let mut prod = Vec::new();
    for i in 0..10_000 {
        let d = sample_driver(&t.grid, StreamId::new(5, i));
        let p = fbm_from_driver(&t, &d).unwrap();
        prod.push(p.values[64] * p.values[128]);
    }
    let (m, se) = mean_and_stderr(&prod);
    assert!((m - 0.5).abs() < 3.0 * se, "{m} ± {se}");

    let t = table(0.3, 128);
    let mut sq = Vec::new();
    for i in 0..10_000 {
        let d = sample_driver(&t.grid, StreamId::new(6, i));
        sq.push(fbm_from_driver(&t, &d).unwrap().values[128].powi(2));
    }
    let (m, se) = mean_and_stderr(&sq);
    assert!((m - 1.0).abs() < 3.0 * se, "{m} ± {se}");
}

#[test]
fn exact_standard_increments_are_independent() {
    let grid = TimeGrid::uniform(8, 1.0).unwrap();
    let gen = ExactFbm::new(&grid, 0.5).unwrap();
    let mut cross = Vec::new();
    for i in 0..20_000 {
        let p = gen.sample(StreamId::new(3, i));
        cross.push((p.values[2] - p.values[1]) * (p.values[6] - p.values[5]));
    }
    let (m, se) = mean_and_stderr(&cross);
    assert!(m.abs() < 3.0 * se);
}

#[test]
fn volterra_and_exact_marginals_agree() {
    let n = 512;
    let t = table(0.75, n);
    let gen = ExactFbm::new(&t.grid, 0.75).unwrap();
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..10_000 {
        let d = sample_driver(&t.grid, StreamId::new(100, i));
        a.push(fbm_from_driver(&t, &d).unwrap().values[n]);
        b.push(gen.sample(StreamId::new(200, i)).values[n]);
    }
    let (_, p) = ks_two_sample(&a, &b);
    assert!(p > 0.01, "KS p-value {p}");
    assert_eq!(
        fbm_exact(&t.grid, 0.75, StreamId::new(200, 0))
            .unwrap()
            .values,
        gen.sample(StreamId::new(200, 0)).values
    );
}
