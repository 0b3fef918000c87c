//! `ttpde` command line.
//!
//! The number of worker threads is taken from `TTPDE_THREADS` (default: all cores).

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use ttpde::bsde::Scheme;
use ttpde::experiment::{self, RunConfig, SweepAxis};
use ttpde::problems::{self, ReferenceKind};
use ttpde::reference::{self, FdOptions, SeparableFd};
use ttpde::Error;

#[derive(Parser)]
#[command(name = "ttpde", version, about = "Tensor-train backward SDE solver for high-dimensional parabolic PDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a preset and write summary.json, per_step.csv and checkpoints.
    Solve(RunArgs),
    /// Print a reference value of V(x, t) as JSON.
    Reference(ReferenceArgs),
    /// Repeat a run over dimensions or polynomial degrees and write a CSV table.
    Sweep(SweepArgs),
    /// Recompute the metrics of a finished run from its checkpoints.
    Replay {
        /// Output directory of an earlier `solve`.
        dir: PathBuf,
    },
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Preset id, e.g. hjb-d100, cir-d20, allen-cahn (required unless --config sets it).
    #[arg(long)]
    preset: Option<String>,
    /// TOML run configuration; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// explicit or implicit.
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    seed: Option<u64>,
    /// Training samples K (as many test samples are added).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    /// Number of time steps N.
    #[arg(long)]
    steps: Option<usize>,
    /// Uniform TT rank (the cap when ranks are adaptive).
    #[arg(long)]
    rank: Option<usize>,
    /// Grow ranks greedily up to --rank.
    #[arg(long)]
    adaptive: Option<bool>,
    /// Polynomial degree of the one-dimensional bases.
    #[arg(long)]
    degree: Option<usize>,
    /// Basis interval as LO,HI.
    #[arg(long, value_parser = parse_interval, allow_hyphen_values = true)]
    interval: Option<(f64, f64)>,
    /// ALS stopping tolerance on the relative change of the residual.
    #[arg(long)]
    delta: Option<f64>,
    /// Fixed-point tolerance on the coefficient change.
    #[arg(long)]
    gamma1: Option<f64>,
    /// Fixed-point tolerance on the H¹ change.
    #[arg(long)]
    gamma2: Option<f64>,
    /// Regularization constant c_η.
    #[arg(long)]
    reg: Option<f64>,
    #[arg(long)]
    max_sweeps: Option<usize>,
    #[arg(long)]
    fp_max_iters: Option<usize>,
    #[arg(long)]
    fp_min_iters: Option<usize>,
    /// Monte Carlo samples for reference values at x0 when needed.
    #[arg(long)]
    reference_samples: Option<usize>,
    /// Skip writing step_NNNN.tt checkpoints.
    #[arg(long)]
    no_checkpoints: bool,
    /// Output directory (default: runs/<preset>-<scheme>-s<seed>).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct ReferenceArgs {
    #[arg(long)]
    preset: String,
    /// Monte Carlo samples.
    #[arg(long, default_value_t = 1_000_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Evaluation time.
    #[arg(long, default_value_t = 0.0)]
    t: f64,
    /// Evaluation point as comma-separated coordinates (default: the preset's x0).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
    /// Force Euler time stepping with this step in the Monte Carlo estimator.
    #[arg(long)]
    mc_dt: Option<f64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    /// dimension or degree.
    #[arg(long)]
    axis: SweepAxis,
    /// Comma-separated values of the swept parameter.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// CSV destination (default: <output>/sweep.csv).
    #[arg(long)]
    csv: Option<PathBuf>,
}

fn parse_interval(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LO,HI")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

fn build_config(args: &RunArgs) -> ttpde::Result<RunConfig> {
    let mut c = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(p) = &args.preset {
        c.preset = p.clone();
    }
    if c.preset.is_empty() {
        return Err(ttpde::Error::Config {
            field: "preset".into(),
            reason: "pass --preset or set it in --config".into(),
        });
    }
    macro_rules! set {
        ($($field:ident = $value:expr),* $(,)?) => {
            $(if let Some(v) = $value { c.$field = Some(v); })*
        };
    }
    set!(
        scheme = args.scheme,
        seed = args.seed,
        samples = args.samples,
        dt = args.dt,
        n_steps = args.steps,
        rank = args.rank,
        adaptive_rank = args.adaptive,
        degree = args.degree,
        interval_lo = args.interval.map(|i| i.0),
        interval_hi = args.interval.map(|i| i.1),
        no_change_tol = args.delta,
        gamma1 = args.gamma1,
        gamma2 = args.gamma2,
        reg_constant = args.reg,
        max_sweeps = args.max_sweeps,
        fp_max_iters = args.fp_max_iters,
        fp_min_iters = args.fp_min_iters,
        reference_samples = args.reference_samples,
        output = args.output.clone(),
    );
    if args.no_checkpoints {
        c.checkpoints = Some(false);
    }
    if c.output.is_none() {
        let scheme = c.scheme.unwrap_or(Scheme::Implicit);
        c.output = Some(PathBuf::from("runs").join(format!("{}-{}-s{}", c.preset, scheme, c.seed.unwrap_or(0))));
    }
    Ok(c)
}

fn print_json(value: &impl serde::Serialize) -> ttpde::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn reference(args: &ReferenceArgs) -> ttpde::Result<()> {
    let preset = problems::preset(&args.preset)?;
    let problem = preset.problem.as_ref();
    let x = args.x.clone().unwrap_or_else(|| problem.x0());
    if x.len() != problem.dim() {
        return Err(Error::Shape {
            what: "--x length vs dimension",
            left: x.len(),
            right: problem.dim(),
        });
    }
    let (estimate, method) = match (&preset.reference, args.mc_dt) {
        (_, Some(dt)) => (
            reference::hjb_mc_reference_stepped(problem, &x, args.t, args.samples, args.seed, dt)?,
            "monte-carlo-stepped",
        ),
        (ReferenceKind::HopfColeMc, None) => (
            reference::hjb_mc_reference(problem, &x, args.t, args.samples, args.seed)?,
            "monte-carlo",
        ),
        (ReferenceKind::SeparableFd(dw), None) => {
            let interval = preset.interval.expect("separable presets fix the interval");
            let fd = SeparableFd::new(dw, interval, &[args.t], FdOptions::default())?;
            (reference::ReferenceEstimate::exact(fd.value_at(&x, 0)), "finite-difference")
        }
        (ReferenceKind::Analytic(f), None) => (reference::ReferenceEstimate::exact(f(&x, args.t)), "analytic"),
        (ReferenceKind::Published(v), None) if args.t == 0.0 && x == problem.x0() => {
            (reference::ReferenceEstimate::exact(*v), "published")
        }
        _ => {
            return Err(Error::Capability(format!("no reference available for `{}` at this point", args.preset)));
        }
    };
    print_json(&json!({
        "preset": args.preset,
        "method": method,
        "t": args.t,
        "value": estimate.value,
        "std_error": estimate.std_error,
        "n_samples": estimate.n_samples,
    }))
}

fn execute(cli: Cli) -> ttpde::Result<()> {
    match cli.command {
        Command::Solve(args) => {
            let config = build_config(&args)?;
            let out = experiment::run(&config)?;
            eprintln!(
                "solved {} ({}) in {:.1} s; artifacts in {}",
                out.config.preset,
                out.solution.scheme,
                out.solve_seconds,
                out.config.output.as_ref().expect("output set").display()
            );
            print_json(&out.report)
        }
        Command::Reference(args) => reference(&args),
        Command::Sweep(args) => {
            let config = build_config(&args.run)?;
            let rows = experiment::sweep(&config, args.axis, &args.values)?;
            let csv = args
                .csv
                .clone()
                .unwrap_or_else(|| config.output.clone().expect("output set").join("sweep.csv"));
            if let Some(parent) = csv.parent() {
                std::fs::create_dir_all(parent)?;
            }
            experiment::write_sweep_csv(&rows, BufWriter::new(File::create(&csv)?))?;
            experiment::write_sweep_csv(&rows, std::io::stdout().lock())
        }
        Command::Replay { dir } => print_json(&experiment::replay(&dir)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("TTPDE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("error: could not configure {n} threads: {e}");
                    return ExitCode::from(1);
                }
            }
            _ => {
                eprintln!("error: TTPDE_THREADS must be a positive integer, got `{v}`");
                return ExitCode::from(2);
            }
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            match e {
                Error::Config { .. } | Error::UnknownPreset(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
