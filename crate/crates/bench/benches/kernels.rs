use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fbm_chaos::chaos_mc::{wiener_ito_sum_raw, ChaosPathEngine};
use fbm_chaos::fbm::{sample_driver, StreamId};
use fbm_chaos::integrand::{IntegrandSpec, Regularity};
use fbm_chaos::simplex_kernel::KStar;
use fbm_chaos::{HurstParams, KernelTable, TimeGrid};
use std::hint::black_box;

const ROUGH: Regularity = Regularity::SimplexHolder { lambda: 0.5 };

fn table(h: f64, n: usize) -> KernelTable {
    let p = HurstParams::calibrated(h, 1.0).unwrap();
    KernelTable::build(&p, &TimeGrid::uniform(n, 1.0).unwrap()).unwrap()
}

fn kernel_table(c: &mut Criterion) {
    let p = HurstParams::calibrated(0.3, 1.0).unwrap();
    let mut g = c.benchmark_group("kernel_table");
    for n in [64, 256] {
        let grid = TimeGrid::uniform(n, 1.0).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(n), &grid, |b, grid| {
            b.iter(|| KernelTable::build(&p, grid).unwrap())
        });
    }
    g.finish();
}

fn transfer_tensor(c: &mut Criterion) {
    let tab = table(0.3, 128);
    let mut g = c.benchmark_group("transfer_tensor");
    for order in [1, 2] {
        let spec = IntegrandSpec::parse("const", order, ROUGH).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(order), &spec, |b, spec| {
            b.iter(|| KStar::new(&tab, spec).unwrap().tensor(0.0, 1.0).unwrap())
        });
    }
    g.finish();
}

fn chaos_path(c: &mut Criterion) {
    let tab = table(0.3, 256);
    let d = sample_driver(&tab.grid, StreamId::new(1, 0));
    let mut g = c.benchmark_group("chaos_path");
    for order in [1, 2, 3] {
        let spec = IntegrandSpec::parse("const", order, ROUGH).unwrap();
        let engine = ChaosPathEngine::new(&tab, &spec, 1).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(order), &engine, |b, e| {
            b.iter(|| e.full_path(black_box(&d.dw)))
        });
    }
    g.finish();
}

fn wiener_ito_sum(c: &mut Criterion) {
    let tab = table(0.75, 128);
    let d = sample_driver(&tab.grid, StreamId::new(1, 0));
    let mut g = c.benchmark_group("wiener_ito_sum");
    for order in [1, 2] {
        let spec = IntegrandSpec::parse("const", order, Regularity::Lq { q: 4.0 }).unwrap();
        let t = KStar::new(&tab, &spec).unwrap().tensor(0.0, 1.0).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(order), &t, |b, t| {
            b.iter(|| wiener_ito_sum_raw(t.order, t.side(), &t.values, black_box(&d.dw)))
        });
    }
    g.finish();
}

criterion_group!(
    benches,
    kernel_table,
    transfer_tensor,
    chaos_path,
    wiener_ito_sum
);
criterion_main!(benches);
