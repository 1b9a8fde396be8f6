use fbm_chaos::chaos_mc::{ChaosPathEngine, McEstimate};
use fbm_chaos::integrand::{IntegrandSpec, Regularity};
use fbm_chaos::ldp::{
    compare_rate, extrapolate, ldp_sweep, path_statistics, prescan_ladder, tail_from_statistics,
    tail_probability, wilson_interval, EventSetSpec, LdpRow, TailEstimate, Verdict,
};
use fbm_chaos::skeleton_rate::RateOptions;
use fbm_chaos::{HurstParams, KernelTable, TimeGrid};
use statrs::distribution::{ContinuousCDF, Normal};

fn table(h: f64, n: usize) -> KernelTable {
    let p = HurstParams::calibrated(h, 1.0).unwrap();
    KernelTable::build(&p, &TimeGrid::uniform(n, 1.0).unwrap()).unwrap()
}

fn spec(h: f64, order: usize) -> IntegrandSpec {
    let reg = if h > 0.5 {
        Regularity::Lq { q: 4.0 }
    } else {
        Regularity::SimplexHolder { lambda: 0.5 }
    };
    IntegrandSpec::parse("const", order, reg).unwrap()
}

#[test]
fn first_chaos_endpoint_tail_is_gaussian() {
    for h in [0.3, 0.75] {
        let tab = table(h, 64);
        let sp = spec(h, 1);
        let eng = ChaosPathEngine::new(&tab, &sp, 1).unwrap();
        let event = EventSetSpec::EndpointAbove { a: 1.0 };
        let stats = path_statistics(&eng, &event, 50_000, 3);
        // the discrete endpoint is N(0, ε Σ K(T,θ)^2 Δθ)
        let sd = tab.variance_at(64).sqrt();
        for eps in [0.1, 0.2, 0.4, 0.8, 1.6] {
            let t = tail_from_statistics(&stats, 1, &event, eps, 3).unwrap();
            let exact = Normal::new(0.0, 1.0).unwrap().sf(1.0 / (eps.sqrt() * sd));
            assert!(
                t.estimate.within(exact, 3.0),
                "H={h} ε={eps}: {t:?} vs {exact}"
            );
            assert!(t.wilson_low <= t.probability() && t.probability() <= t.wilson_high);
        }
    }
}

#[test]
fn direct_estimate_matches_batch_estimate() {
    let tab = table(0.75, 32);
    let sp = spec(0.75, 2);
    let eng = ChaosPathEngine::new(&tab, &sp, 1).unwrap();
    let event = EventSetSpec::SupAbove { a: 0.5 };
    let direct = tail_probability(&eng, &event, 0.7, 2_000, 5).unwrap();
    let stats = path_statistics(&eng, &event, 2_000, 5);
    let batch = tail_from_statistics(&stats, 2, &event, 0.7, 5).unwrap();
    assert_eq!(direct, batch);
    assert!(tail_probability(&eng, &event, 0.7, 999, 5).is_err());
    assert!(tail_probability(&eng, &EventSetSpec::SupAbove { a: 0.0 }, 0.7, 2_000, 5).is_err());
}

#[test]
fn out_of_reach_levels_have_no_hits() {
    let tab = table(0.3, 32);
    let eng = ChaosPathEngine::new(&tab, &spec(0.3, 1), 1).unwrap();
    let t = tail_probability(
        &eng,
        &EventSetSpec::EndpointAbove { a: 50.0 },
        0.5,
        2_000,
        1,
    )
    .unwrap();
    assert_eq!(t.hits, 0);
    assert_eq!(t.probability(), 0.0);
    assert!(t.eps_log_p.is_none());
    let big =
        tail_probability(&eng, &EventSetSpec::EndpointAbove { a: 1.0 }, 1e6, 2_000, 1).unwrap();
    assert!(big.probability() <= 1.0 && big.probability() > 0.45);
}

#[test]
fn coupled_tails_are_monotone_and_scale_covariant() {
    let tab = table(0.75, 32);
    for order in [1, 2] {
        let eng = ChaosPathEngine::new(&tab, &spec(0.75, order), 1).unwrap();
        for event in [
            EventSetSpec::EndpointAbove { a: 1.0 },
            EventSetSpec::SupAbove { a: 1.0 },
            EventSetSpec::HolderNormAbove { gamma: 0.5, a: 1.0 },
        ] {
            let stats = path_statistics(&eng, &event, 3_000, 8);
            let mut last = 1.0;
            for a in [0.25, 0.5, 1.0, 2.0, 4.0] {
                let e = event.with_level(a);
                let p = tail_from_statistics(&stats, order, &e, 0.5, 8)
                    .unwrap()
                    .probability();
                assert!(p <= last);
                last = p;
                let eps: f64 = 0.3;
                let scaled = tail_from_statistics(&stats, order, &e, eps, 8).unwrap();
                let shifted = e.with_level(a * eps.powf(-(order as f64) / 2.0));
                let unit = tail_from_statistics(&stats, order, &shifted, 1.0, 8).unwrap();
                assert_eq!(scaled.hits, unit.hits, "n={order} {e:?}");
            }
        }
    }
}

#[test]
fn quadrupling_samples_halves_the_standard_error() {
    let tab = table(0.75, 32);
    let eng = ChaosPathEngine::new(&tab, &spec(0.75, 1), 1).unwrap();
    let event = EventSetSpec::EndpointAbove { a: 1.0 };
    let small = tail_probability(&eng, &event, 0.5, 5_000, 2).unwrap();
    let large = tail_probability(&eng, &event, 0.5, 20_000, 2).unwrap();
    let ratio = large.estimate.stderr / small.estimate.stderr;
    assert!((ratio - 0.5).abs() < 0.1, "{ratio}");
}

#[test]
fn wilson_interval_reference_values() {
    let (lo, hi) = wilson_interval(0, 100);
    assert_eq!(lo, 0.0);
    assert!((hi - 0.036_994).abs() < 1e-5, "{hi}");
    let (lo, hi) = wilson_interval(50, 100);
    assert!((lo - 0.403_832).abs() < 1e-5 && (hi - 0.596_168).abs() < 1e-5);
}

fn synthetic_row(eps: f64, p: f64) -> LdpRow {
    LdpRow {
        tail: TailEstimate {
            epsilon: eps,
            estimate: McEstimate {
                mean: p,
                variance: p * (1.0 - p),
                stderr: 0.0,
                n_samples: 1,
                seed: 0,
            },
            hits: 1,
            wilson_low: p,
            wilson_high: p,
            eps_log_p: Some(eps * p.ln()),
        },
        gap: None,
    }
}

#[test]
fn extrapolation_recovers_the_gaussian_rate() {
    let std = Normal::new(0.0, 1.0).unwrap();
    // ladder from P = 1e-3 to P = 0.1 for the level 1
    let (lo, hi) = ((1.0f64 / 3.090_232).powi(2), (1.0f64 / 1.281_552).powi(2));
    let rows: Vec<LdpRow> = (0..8)
        .map(|i| {
            let eps = lo * (hi / lo).powf(i as f64 / 7.0);
            synthetic_row(eps, std.sf(1.0 / eps.sqrt()))
        })
        .collect();
    let (limit, _, line) = extrapolate(&rows).unwrap();
    assert!((limit + 0.5).abs() < 0.03, "{limit}");
    // the straight line misses the ε log ε prefactor term
    assert!(line < -0.58, "{line}");
    assert!(extrapolate(&rows[..3]).is_none());
}

#[test]
fn endpoint_sweep_passes_against_the_exact_rate() {
    let tab = table(0.75, 64);
    let sp = spec(0.75, 1);
    let eng = ChaosPathEngine::new(&tab, &sp, 1).unwrap();
    let event = EventSetSpec::EndpointAbove { a: 1.0 };
    let ladder = prescan_ladder(&eng, &event, 8, (2e-3, 0.1), 20_000, 4).unwrap();
    assert!(ladder.windows(2).all(|w| w[0] < w[1]));
    let report = ldp_sweep(
        &eng,
        &sp,
        &event,
        &ladder,
        100_000,
        4,
        &RateOptions::default(),
    )
    .unwrap();
    assert_eq!(report.verdict, Verdict::Pass, "{report:?}");
    assert!((report.rate.as_ref().unwrap().rate - 0.5).abs() < 0.01);
    assert_eq!(compare_rate(&report), Verdict::Pass);
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 9);
}

#[test]
fn holder_events_have_no_rate() {
    let tab = table(0.75, 32);
    let sp = spec(0.75, 1);
    let eng = ChaosPathEngine::new(&tab, &sp, 1).unwrap();
    let event = EventSetSpec::HolderNormAbove { gamma: 0.5, a: 2.0 };
    let ladder = prescan_ladder(&eng, &event, 6, (5e-3, 0.2), 5_000, 1).unwrap();
    let report = ldp_sweep(
        &eng,
        &sp,
        &event,
        &ladder,
        5_000,
        1,
        &RateOptions::default(),
    )
    .unwrap();
    assert!(report.rate.is_none());
    assert_eq!(report.verdict, Verdict::Inconclusive);
    assert!(ldp_sweep(
        &eng,
        &sp,
        &event,
        &[1e-4, 2e-4, 3e-4, 4e-4],
        5_000,
        1,
        &RateOptions::default()
    )
    .is_err());
}
