mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand as ClapSubcommand};

use config::{read_config_file, ConfigError, Expect, Format, FrameChoice, RouteChoice, RunConfig, Subcommand};
use curvlab::CurvError;
use report::{write_atomic, Report};

const EXIT_CHECKS_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

/// Intermediate-curvature toolkit: curvature evaluation, Grassmannian
/// positivity certificates, variational checks and weighted-slicing
/// verification.
#[derive(Parser, Debug)]
#[command(name = "curvlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(ClapSubcommand, Debug, Clone, Copy)]
enum Command {
    /// C_m, s_(m,n), Ricci and scalar curvature at sample points.
    Curvature,
    /// Sampled positivity certificate for C_m.
    Certify,
    /// Exact table of the dimension condition n(m-2) <= m^2-2.
    DimensionTable,
    /// Random-data sweep of the extrinsic-curvature and gradient inequalities.
    VerifyLemmas,
    /// Finite differences against the first/second variation formulas, and
    /// stability-spectrum fixtures.
    VariationCheck,
    /// Stable weighted slicing of a 3-torus with all identity and inequality checks.
    SlicingDemo,
}

/// Overrides; every flag wins over the config file.
#[derive(Args, Debug, Default)]
struct Flags {
    /// Flat `key = value` config file, or a JSON report to re-run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model expression, e.g. "product(sphere(2,1.0),torus(2))".
    #[arg(long, global = true)]
    model: Option<String>,
    #[arg(long, global = true)]
    m: Option<usize>,
    /// Ambient dimension (verify-lemmas).
    #[arg(long, global = true)]
    n: Option<usize>,
    /// Largest n in the dimension table.
    #[arg(long, global = true)]
    n_max: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Grid cells per axis.
    #[arg(long, global = true)]
    resolution: Option<usize>,
    /// Minimizer restarts per point.
    #[arg(long, global = true)]
    restarts: Option<usize>,
    /// Random trials (verify-lemmas) or scenarios (variation-check).
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Sample points on the model.
    #[arg(long, global = true)]
    points: Option<usize>,
    /// Multiplies every declared tolerance.
    #[arg(long, global = true)]
    tolerance_scale: Option<f64>,
    #[arg(long, global = true)]
    route: Option<RouteChoice>,
    #[arg(long, global = true)]
    frame: Option<FrameChoice>,
    /// Conformal perturbation amplitude of the slicing-demo torus (0 = flat).
    #[arg(long, global = true, allow_hyphen_values = true)]
    amplitude: Option<f64>,
    /// Also run at 2R and 4R and report convergence orders.
    #[arg(long, global = true)]
    refine: bool,
    /// Expected certificate verdict, turned into a check.
    #[arg(long, global = true)]
    expect: Option<Expect>,
    /// Run verify-lemmas on a pair failing the dimension condition.
    #[arg(long, global = true)]
    force_coefficient: bool,
    /// Directory for binary grid dumps of the slices.
    #[arg(long, global = true)]
    dump_dir: Option<String>,
    #[arg(long, global = true)]
    format: Option<Format>,
    /// Report path (written atomically); stdout when absent.
    #[arg(long, global = true)]
    output: Option<String>,
    /// Worker threads (default: logical cores).
    #[arg(long, global = true, env = "CURVLAB_THREADS")]
    threads: Option<usize>,
}

impl Command {
    fn subcommand(self) -> Subcommand {
        match self {
            Command::Curvature => Subcommand::Curvature,
            Command::Certify => Subcommand::Certify,
            Command::DimensionTable => Subcommand::DimensionTable,
            Command::VerifyLemmas => Subcommand::VerifyLemmas,
            Command::VariationCheck => Subcommand::VariationCheck,
            Command::SlicingDemo => Subcommand::SlicingDemo,
        }
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::defaults(cli.command.subcommand());
    if let Some(path) = &cli.flags.config {
        for (k, v) in read_config_file(path)? {
            cfg.set(&k, &v)?;
        }
    }
    let f = &cli.flags;
    macro_rules! take {
        ($($field:ident),+) => { $(if let Some(v) = f.$field.clone() { cfg.$field = v; })+ };
    }
    take!(model, m, n, n_max, seed, resolution, restarts, trials, points, tolerance_scale, route, frame, amplitude, format);
    if f.refine {
        cfg.refine = true;
    }
    if f.force_coefficient {
        cfg.force_coefficient = true;
    }
    if f.expect.is_some() {
        cfg.expect = f.expect;
    }
    if f.dump_dir.is_some() {
        cfg.dump_dir = f.dump_dir.clone();
    }
    if f.output.is_some() {
        cfg.output = f.output.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Errors traceable to the configuration exit with 2; the rest are numeric
/// failures (no convergence, singular metric, I/O) and exit with 3.
fn exit_code(e: &CurvError) -> u8 {
    match e {
        CurvError::BadOrder { .. }
        | CurvError::BadSpec(_)
        | CurvError::Parse { .. }
        | CurvError::WrongOrder { .. }
        | CurvError::InfeasiblePair { .. }
        | CurvError::DegenerateInput(_)
        | CurvError::BadShape(_) => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("curvlab: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(t) = cli.flags.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("curvlab: thread pool: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let start = Instant::now();
    let outcome = match commands::run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("curvlab {}: {e}", cfg.subcommand.name());
            return ExitCode::from(exit_code(&e));
        }
    };
    let report = Report::new(cfg.clone(), &outcome, start.elapsed().as_millis());
    let text = report.render(cfg.format, &outcome);
    match &cfg.output {
        Some(path) => {
            if let Err(e) = write_atomic(path.as_ref(), &text) {
                eprintln!("curvlab: writing {path}: {e}");
                return ExitCode::from(EXIT_NUMERIC);
            }
        }
        None => print!("{text}"),
    }
    if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_CHECKS_FAILED)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn error_exit_codes() {
        assert_eq!(exit_code(&CurvError::InfeasiblePair { n: 8, m: 3 }), EXIT_CONFIG);
        assert_eq!(exit_code(&CurvError::Parse { pos: 0, msg: String::new() }), EXIT_CONFIG);
        assert_eq!(exit_code(&CurvError::IterationLimit { iterations: 1, best_residual: 1.0 }), EXIT_NUMERIC);
        assert_eq!(exit_code(&CurvError::SingularMetric { point: vec![] }), EXIT_NUMERIC);
        assert_eq!(exit_code(&CurvError::NotCritical { residual: 1.0 }), EXIT_NUMERIC);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "model = torus(3)\nm = 1\nseed = 4\n").unwrap();
        let cli = Cli::try_parse_from(["curvlab", "certify", "--config", path.to_str().unwrap(), "--m", "2"]).unwrap();
        let cfg = resolve(&cli).unwrap();
        assert_eq!((cfg.model.as_str(), cfg.m, cfg.seed), ("torus(3)", 2, 4));
    }
}
