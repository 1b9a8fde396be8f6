mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fbm_chaos::Error;
use serde_json::{json, Map, Value};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "fbm-chaos",
    version,
    about = "Multiple fBm integrals: simulation, bounds and large deviation checks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Flat JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Directory for JSON and CSV reports.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write the kernel table as `kernel.csv`.
    #[arg(long, global = true)]
    dump_kernel: bool,
    #[arg(long, global = true)]
    hurst: Option<f64>,
    #[arg(long, global = true)]
    cells: Option<usize>,
    #[arg(long, global = true)]
    order: Option<usize>,
    #[arg(long, global = true)]
    samples: Option<usize>,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// c_H and the covariance error of the kernel table at N/4, N/2 and N.
    Calibrate,
    /// Sample paths of the chaos.
    Simulate,
    /// Second and fourth moments of an increment.
    Moments,
    /// Decay of the transfer kernel norm over dyadic windows.
    Bounds,
    /// Grid Hölder norms under refinement N -> 2N.
    Holder,
    /// Rate of the configured event.
    Rate,
    /// Tail probabilities along an ε ladder against the rate.
    Ldp,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Calibrate => "calibrate",
            Command::Simulate => "simulate",
            Command::Moments => "moments",
            Command::Bounds => "bounds",
            Command::Holder => "holder",
            Command::Rate => "rate",
            Command::Ldp => "ldp",
        }
    }
}

/// Failure with its exit code: 2 for rejected input, 1 otherwise.
#[derive(Debug)]
pub struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    fn input(message: String) -> Self {
        Self {
            kind: "invalid_config",
            message,
            code: 2,
        }
    }

    fn io(e: std::io::Error) -> Self {
        Self {
            kind: "io",
            message: e.to_string(),
            code: 1,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (kind, code) = match &e {
            Error::InvalidHurst(_) => ("invalid_hurst", 2),
            Error::InvalidInput(_) => ("invalid_input", 2),
            Error::Regularity(_) => ("regularity", 2),
            Error::GridMismatch(_) => ("grid_mismatch", 2),
            Error::Domain(_) => ("domain", 1),
            Error::MemoryBound { .. } => ("memory_bound", 1),
            Error::Convergence(_) => ("convergence", 1),
            Error::Factorization(_) => ("factorization", 1),
            Error::InsufficientData(_) => ("insufficient_data", 2),
        };
        Self {
            kind,
            message: e.to_string(),
            code,
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::io(e)
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut fields = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::input(format!("{}: {e}", path.display())))?;
            match serde_json::from_str::<Value>(&text) {
                Ok(Value::Object(m)) => m,
                Ok(_) => return Err(Failure::input("config must be a JSON object".into())),
                Err(e) => return Err(Failure::input(format!("{}: {e}", path.display()))),
            }
        }
        None => Map::new(),
    };
    let mut set = |key: &str, aliases: &[&str], v: Value| {
        for a in aliases {
            fields.remove(*a);
        }
        fields.insert(key.into(), v);
    };
    if let Some(h) = cli.hurst {
        set("hurst", &["H"], json!(h));
    }
    if let Some(n) = cli.cells {
        set("cells", &["N"], json!(n));
    }
    if let Some(n) = cli.order {
        set("order", &["n"], json!(n));
    }
    if let Some(s) = cli.seed {
        set("seed", &[], json!(s));
    }
    if let Some(s) = cli.samples {
        set("n_samples", &[], json!(s));
    }
    if let Some(o) = &cli.out {
        set("out", &[], json!(o));
    }
    let cfg: RunConfig =
        serde_json::from_value(Value::Object(fields)).map_err(|e| Failure::input(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(Failure::input("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| Failure::input(e.to_string()))?;
    }
    let cfg = load_config(cli)?;
    if cli.dump_kernel && cfg.out.is_none() {
        return Err(Failure::input("--dump-kernel needs --out".into()));
    }
    if let Some(dir) = &cfg.out {
        std::fs::create_dir_all(dir)?;
    }
    let report = commands::execute(cli.command, &cfg, cli.dump_kernel)?;
    // a closed pipe downstream is not a failure of the run
    match writeln!(std::io::stdout().lock(), "{report}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let report = json!({
                "error": { "kind": f.kind, "message": f.message, "exit_code": f.code }
            });
            eprintln!(
                "{}",
                serde_json::to_string_pretty(&report).expect("error report")
            );
            ExitCode::from(f.code)
        }
    }
}
