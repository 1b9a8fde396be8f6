use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use fbm_chaos::chaos_mc::{
    holder_regression, mc_increment_moments, simulate_coupled, simulate_paths, variance_oracle,
    ChaosPathEngine, HolderRegressionReport, IncrementMoments, McEstimate,
};
use fbm_chaos::kernel::{calibrate_ch, covariance_check, literature_ch, DEFAULT_QUAD_RESOLUTION};
use fbm_chaos::ldp::{ldp_sweep, prescan_ladder, EventSetSpec};
use fbm_chaos::simplex_kernel::{verify_bound, BoundSweep, KStar};
use fbm_chaos::skeleton_rate::{rate_for_endpoint, rate_for_sup, RateOptions};
use fbm_chaos::{Error, HurstParams, KernelTable, Regime, TimeGrid};
use serde::Serialize;

use crate::config::RunConfig;
use crate::{Command, Failure};

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    command: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    result: T,
}

/// Run `command`, write its files under `cfg.out` and return the JSON report.
pub fn execute(command: Command, cfg: &RunConfig, dump_kernel: bool) -> Result<String, Failure> {
    let out = cfg.out.as_deref();
    let table = || -> Result<KernelTable, Failure> {
        let params = HurstParams::calibrated(cfg.hurst, cfg.horizon)?;
        let table = KernelTable::build(&params, &TimeGrid::uniform(cfg.cells, cfg.horizon)?)?;
        if dump_kernel {
            if let Some(dir) = out {
                write_file(dir, "kernel.csv", |w| table.write_csv(w))?;
            }
        }
        Ok(table)
    };
    let report = match command {
        Command::Calibrate => envelope(
            command,
            cfg,
            calibrate(cfg, dump_kernel.then_some(out).flatten())?,
        ),
        Command::Simulate => envelope(command, cfg, simulate(cfg, &table()?, out)?),
        Command::Moments => envelope(command, cfg, moments(cfg, &table()?)?),
        Command::Bounds => {
            let tab = table()?;
            let anchor = cfg.sweep_anchor.unwrap_or(cfg.horizon / 2.0);
            let largest = cfg.sweep_largest.unwrap_or(cfg.horizon / 16.0);
            let sweep = BoundSweep::dyadic(anchor, largest, cfg.sweep_points);
            let r = verify_bound(&tab, &cfg.integrand_spec()?, &sweep)?;
            if let Some(dir) = out {
                write_file(dir, "bounds.csv", |w| {
                    writeln!(w, "width,norm")?;
                    for p in &r.points {
                        writeln!(w, "{:e},{:e}", p.width, p.norm)?;
                    }
                    Ok(())
                })?;
            }
            envelope(command, cfg, r)
        }
        Command::Holder => envelope(command, cfg, holder(cfg, &table()?, out)?),
        Command::Rate => {
            let tab = table()?;
            let spec = cfg.integrand_spec()?;
            let opts = rate_options(cfg);
            let r = match cfg.event {
                EventSetSpec::EndpointAbove { a } => rate_for_endpoint(&tab, &spec, a, &opts)?,
                EventSetSpec::SupAbove { a } => rate_for_sup(&tab, &spec, a, &opts)?,
                EventSetSpec::HolderNormAbove { .. } => {
                    return Err(Error::InvalidInput(
                        "no rate optimizer for Hölder-norm events".into(),
                    )
                    .into())
                }
            };
            if let Some(dir) = out {
                write_file(dir, "minimizer.csv", |w| r.minimizer.write_csv(w))?;
            }
            envelope(command, cfg, r)
        }
        Command::Ldp => {
            let tab = table()?;
            let spec = cfg.integrand_spec()?;
            let engine = ChaosPathEngine::new(&tab, &spec, cfg.stride)?;
            let ladder = match &cfg.epsilon_ladder {
                Some(l) => l.clone(),
                None => prescan_ladder(
                    &engine,
                    &cfg.event,
                    cfg.ladder_points,
                    cfg.ladder_probabilities,
                    (cfg.n_samples / 5).max(1000),
                    cfg.seed,
                )?,
            };
            let r = ldp_sweep(
                &engine,
                &spec,
                &cfg.event,
                &ladder,
                cfg.n_samples,
                cfg.seed,
                &rate_options(cfg),
            )?;
            if let Some(dir) = out {
                write_file(dir, "ldp.csv", |w| r.write_csv(w))?;
            }
            envelope(command, cfg, r)
        }
    }?;
    if let Some(dir) = out {
        write_file(dir, &format!("{}.json", command.name()), |w| {
            writeln!(w, "{report}")
        })?;
    }
    Ok(report)
}

fn envelope<T: Serialize>(command: Command, cfg: &RunConfig, result: T) -> Result<String, Failure> {
    let e = Envelope {
        command: command.name(),
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
        result,
    };
    Ok(serde_json::to_string_pretty(&e).expect("reports serialize"))
}

fn write_file(
    dir: &Path,
    name: &str,
    body: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>,
) -> Result<(), Failure> {
    let mut w = BufWriter::new(File::create(dir.join(name))?);
    body(&mut w)?;
    w.flush()?;
    Ok(())
}

fn rate_options(cfg: &RunConfig) -> RateOptions {
    RateOptions {
        starts: cfg.rate_starts,
        seed: cfg.seed,
        oracle_cells: cfg.oracle_cells,
        ..RateOptions::default()
    }
}

#[derive(Serialize)]
struct CovarianceRow {
    cells: usize,
    max_error: f64,
}

#[derive(Serialize)]
struct Calibration {
    hurst: f64,
    regime: Regime,
    c_h: f64,
    literature_c_h: f64,
    covariance: Vec<CovarianceRow>,
    tolerance: f64,
    within_tolerance: bool,
    decreasing: bool,
}

fn calibrate(cfg: &RunConfig, dump: Option<&Path>) -> Result<Calibration, Failure> {
    let regime = Regime::of(cfg.hurst)?;
    let c_h = calibrate_ch(cfg.hurst, DEFAULT_QUAD_RESOLUTION)?;
    let params = HurstParams::with_constant(cfg.hurst, cfg.horizon, c_h)?;
    let mut covariance = Vec::new();
    for cells in [cfg.cells / 4, cfg.cells / 2, cfg.cells] {
        if cells == 0 {
            continue;
        }
        let table = KernelTable::build(&params, &TimeGrid::uniform(cells, cfg.horizon)?)?;
        if cells == cfg.cells {
            if let Some(dir) = dump {
                write_file(dir, "kernel.csv", |w| table.write_csv(w))?;
            }
        }
        covariance.push(CovarianceRow {
            cells,
            max_error: covariance_check(&table),
        });
    }
    let tolerance = if regime == Regime::Rough { 5e-3 } else { 1e-3 };
    let last = covariance.last().map_or(f64::INFINITY, |r| r.max_error);
    Ok(Calibration {
        hurst: cfg.hurst,
        regime,
        c_h,
        literature_c_h: literature_ch(cfg.hurst),
        decreasing: covariance
            .windows(2)
            .all(|w| w[1].max_error < w[0].max_error),
        within_tolerance: last <= tolerance,
        covariance,
        tolerance,
    })
}

#[derive(Serialize)]
struct Simulation {
    n_samples: usize,
    cells: usize,
    stride: usize,
    endpoint: McEstimate,
    /// Exact endpoint variance of the discrete sum.
    endpoint_variance_oracle: f64,
}

fn simulate(
    cfg: &RunConfig,
    table: &KernelTable,
    out: Option<&Path>,
) -> Result<Simulation, Failure> {
    let spec = cfg.integrand_spec()?;
    let engine = ChaosPathEngine::new(table, &spec, cfg.stride)?;
    let set = simulate_paths(&engine, &spec, cfg.n_samples, cfg.seed);
    if let Some(dir) = out {
        write_file(dir, "paths.csv", |w| set.write_csv(w))?;
    }
    let oracle = variance_oracle(&KStar::new(table, &spec)?.tensor(0.0, cfg.horizon)?);
    Ok(Simulation {
        n_samples: cfg.n_samples,
        cells: cfg.cells,
        stride: cfg.stride,
        endpoint: McEstimate::from_values(&set.endpoint(), cfg.seed)?,
        endpoint_variance_oracle: oracle,
    })
}

#[derive(Serialize)]
struct Moments {
    s: f64,
    t: f64,
    second: IncrementMoments,
    fourth: IncrementMoments,
    /// `||I_t - I_s||_4 / ||I_t - I_s||_2` on the same samples.
    ratio: f64,
    /// `3^{n/2}`.
    hypercontractive_bound: f64,
    within_bound: bool,
}

fn moments(cfg: &RunConfig, table: &KernelTable) -> Result<Moments, Failure> {
    let spec = cfg.integrand_spec()?;
    let (s, t) = cfg.window.unwrap_or((cfg.horizon / 2.0, cfg.horizon));
    let second = mc_increment_moments(table, &spec, s, t, 2, cfg.n_samples, cfg.seed)?;
    let fourth = mc_increment_moments(table, &spec, s, t, 4, cfg.n_samples, cfg.seed)?;
    let ratio = fourth.estimate.mean.powf(0.25) / second.estimate.mean.sqrt();
    let bound = 3f64.powf(cfg.order as f64 / 2.0);
    Ok(Moments {
        s,
        t,
        second,
        fourth,
        ratio,
        hypercontractive_bound: bound,
        within_bound: ratio <= 1.1 * bound,
    })
}

fn holder(
    cfg: &RunConfig,
    table: &KernelTable,
    out: Option<&Path>,
) -> Result<HolderRegressionReport, Failure> {
    let spec = cfg.integrand_spec()?;
    let fine_params = HurstParams::calibrated(cfg.hurst, cfg.horizon)?;
    let fine = KernelTable::build(
        &fine_params,
        &TimeGrid::uniform(2 * cfg.cells, cfg.horizon)?,
    )?;
    let coarse_engine = ChaosPathEngine::new(table, &spec, 1)?;
    let fine_engine = ChaosPathEngine::new(&fine, &spec, 1)?;
    let levels = simulate_coupled(
        &[&coarse_engine, &fine_engine],
        &spec,
        cfg.n_samples,
        cfg.seed,
    )?;
    let threshold = cfg.holder_threshold()?;
    let gammas = cfg
        .gammas
        .clone()
        .unwrap_or_else(|| vec![threshold - 0.1, threshold + 0.1]);
    let r = holder_regression(&levels, &gammas, threshold)?;
    if let Some(dir) = out {
        write_file(dir, "holder.csv", |w| {
            writeln!(w, "gamma,expectation,median_coarse,median_fine,growth,pass")?;
            for row in &r.rows {
                writeln!(
                    w,
                    "{},{:?},{:e},{:e},{:e},{}",
                    row.gamma,
                    row.expectation,
                    row.medians[0],
                    row.medians[row.medians.len() - 1],
                    row.growth,
                    row.pass
                )?;
            }
            Ok(())
        })?;
    }
    Ok(r)
}
