//! End-to-end runs: configuration, orchestration, artifacts and replay.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::als::{AlsConfig, RankPolicy};
use crate::basis::BasisSet;
use crate::bsde::{self, BackwardConfig, Scheme, Solution, StepDiagnostics};
use crate::error::{Error, Result};
use crate::metrics::{self, EvaluationReport, ReferenceInput};
use crate::problems::{self, Preset, ReferenceKind};
use crate::reference::{self, FdOptions, FlatHjbReference, SeparableFd};
use crate::sde::{self, SamplePaths};
use crate::tensor_train::{RankTuple, TensorTrain};
use crate::tt_function::TTFunction;

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), "-", env!("CARGO_PKG_VERSION"));

/// Flat run configuration. Unset fields take the preset's values; see
/// [`RunConfig::resolve`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: String,
    pub scheme: Option<Scheme>,
    pub dt: Option<f64>,
    pub n_steps: Option<usize>,
    /// Training samples `K`; as many test samples are simulated on top.
    pub samples: Option<usize>,
    pub rank: Option<usize>,
    pub adaptive_rank: Option<bool>,
    pub degree: Option<usize>,
    pub interval_lo: Option<f64>,
    pub interval_hi: Option<f64>,
    pub seed: Option<u64>,
    pub max_sweeps: Option<usize>,
    pub no_change_tol: Option<f64>,
    pub reg_constant: Option<f64>,
    pub fp_max_iters: Option<usize>,
    pub fp_min_iters: Option<usize>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub warm_start: Option<bool>,
    /// Monte Carlo samples for a reference value at `x0` when no cheaper one exists.
    pub reference_samples: Option<usize>,
    pub checkpoints: Option<bool>,
    /// Not part of the configuration hash.
    pub output: Option<PathBuf>,
}

fn positive(field: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => Err(Error::config(field, format!("must be positive, got {x}"))),
        _ => Ok(()),
    }
}

fn nonzero(field: &str, v: Option<usize>) -> Result<()> {
    match v {
        Some(0) => Err(Error::config(field, "must be at least 1")),
        _ => Ok(()),
    }
}

impl RunConfig {
    pub fn for_preset(id: &str) -> Self {
        Self {
            preset: id.to_string(),
            ..Default::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.message().split('`').nth(1).unwrap_or("config"), e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        problems::preset(&self.preset)?;
        positive("dt", self.dt)?;
        positive("no_change_tol", self.no_change_tol)?;
        positive("gamma1", self.gamma1)?;
        positive("gamma2", self.gamma2)?;
        if let Some(c) = self.reg_constant {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::config("reg_constant", format!("must be nonnegative, got {c}")));
            }
        }
        nonzero("n_steps", self.n_steps)?;
        nonzero("samples", self.samples)?;
        nonzero("rank", self.rank)?;
        nonzero("max_sweeps", self.max_sweeps)?;
        nonzero("fp_max_iters", self.fp_max_iters)?;
        nonzero("reference_samples", self.reference_samples)?;
        if self.samples == Some(1) {
            return Err(Error::config("samples", "need at least 2"));
        }
        match (self.interval_lo, self.interval_hi) {
            (Some(a), Some(b)) if !(a < b) => {
                return Err(Error::config("interval_lo", format!("must be below interval_hi ({a} >= {b})")))
            }
            (Some(_), None) => return Err(Error::config("interval_hi", "must be given together with interval_lo")),
            (None, Some(_)) => return Err(Error::config("interval_lo", "must be given together with interval_hi")),
            _ => {}
        }
        if let Some(deg) = self.degree {
            if deg > crate::basis::MAX_DEGREE {
                return Err(Error::config("degree", format!("at most {}", crate::basis::MAX_DEGREE)));
            }
        }
        Ok(())
    }

    /// Fills every unset field from the preset, except the basis interval
    /// of presets that derive it from a pilot simulation.
    pub fn resolve(&self) -> Result<RunConfig> {
        self.validate()?;
        let p = problems::preset(&self.preset)?;
        let horizon = p.problem.horizon();
        let (dt, n_steps) = match (self.dt, self.n_steps) {
            (Some(dt), Some(n)) => {
                if ((n as f64) * dt - horizon).abs() > 1e-9 * horizon {
                    return Err(Error::config("n_steps", format!("n_steps * dt = {} but the horizon is {horizon}", n as f64 * dt)));
                }
                (dt, n)
            }
            (Some(dt), None) => {
                let n = (horizon / dt).round().max(1.0) as usize;
                (horizon / n as f64, n)
            }
            (None, Some(n)) => (horizon / n as f64, n),
            (None, None) => (p.dt, p.n_steps),
        };
        let (rank, adaptive) = match &p.rank_policy {
            RankPolicy::Fixed(r) => (r.max(), false),
            RankPolicy::Adaptive(r) => (r.max(), true),
        };
        let als = AlsConfig::fixed(RankTuple::uniform(2, 1)?);
        let bwd = BackwardConfig::new(Scheme::Implicit, als.clone());
        let (lo, hi) = match (self.interval_lo, self.interval_hi, p.interval) {
            (Some(a), Some(b), _) => (Some(a), Some(b)),
            (_, _, Some((a, b))) => (Some(a), Some(b)),
            _ => (None, None),
        };
        Ok(RunConfig {
            preset: self.preset.clone(),
            scheme: Some(self.scheme.unwrap_or(Scheme::Implicit)),
            dt: Some(dt),
            n_steps: Some(n_steps),
            samples: Some(self.samples.unwrap_or(p.n_paths)),
            rank: Some(self.rank.unwrap_or(rank.max(1))),
            adaptive_rank: Some(self.adaptive_rank.unwrap_or(adaptive)),
            degree: Some(self.degree.unwrap_or(p.degree)),
            interval_lo: lo,
            interval_hi: hi,
            seed: Some(self.seed.unwrap_or(0)),
            max_sweeps: Some(self.max_sweeps.unwrap_or(als.max_sweeps)),
            no_change_tol: Some(self.no_change_tol.unwrap_or(als.no_change_tol)),
            reg_constant: Some(self.reg_constant.unwrap_or(als.reg_constant)),
            fp_max_iters: Some(self.fp_max_iters.unwrap_or(bwd.fp_max_iters)),
            fp_min_iters: Some(self.fp_min_iters.unwrap_or(bwd.fp_min_iters)),
            gamma1: Some(self.gamma1.unwrap_or(bwd.gamma1)),
            gamma2: Some(self.gamma2.unwrap_or(bwd.gamma2)),
            warm_start: Some(self.warm_start.unwrap_or(true)),
            reference_samples: Some(self.reference_samples.unwrap_or(100_000)),
            checkpoints: Some(self.checkpoints.unwrap_or(true)),
            output: self.output.clone(),
        })
    }

    /// SHA-256 of the resolved configuration without the output directory.
    pub fn hash(&self) -> Result<String> {
        let mut r = self.resolve()?;
        r.output = None;
        let digest = Sha256::digest(r.to_toml().as_bytes());
        let mut s = String::with_capacity(64);
        for b in digest.iter() {
            write!(s, "{b:02x}").expect("writing to a string");
        }
        Ok(s)
    }

    fn backward_config(&self, d: usize) -> Result<BackwardConfig> {
        let ranks = RankTuple::uniform(d, self.rank.expect("resolved"))?;
        let mut als = AlsConfig::fixed(ranks.clone());
        if self.adaptive_rank == Some(true) {
            als.rank_policy = RankPolicy::Adaptive(ranks);
        }
        als.max_sweeps = self.max_sweeps.expect("resolved");
        als.no_change_tol = self.no_change_tol.expect("resolved");
        als.reg_constant = self.reg_constant.expect("resolved");
        als.seed = self.seed.expect("resolved").wrapping_add(1);
        let mut cfg = BackwardConfig::new(self.scheme.expect("resolved"), als);
        cfg.fp_max_iters = self.fp_max_iters.expect("resolved");
        cfg.fp_min_iters = self.fp_min_iters.expect("resolved");
        cfg.gamma1 = self.gamma1.expect("resolved");
        cfg.gamma2 = self.gamma2.expect("resolved");
        cfg.warm_start = self.warm_start.expect("resolved");
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Written next to the checkpoints; enough to rebuild every `TTFunction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub config_hash: String,
    pub build_id: String,
    pub seed: u64,
    pub scheme: Scheme,
    pub dt: f64,
    pub n_steps: usize,
    pub interval: (f64, f64),
    pub degree: usize,
    pub c_g: Vec<f64>,
    pub has_terminal: bool,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub config: RunConfig,
    pub report: EvaluationReport,
    pub solution: Solution,
    pub paths: SamplePaths,
    pub interval: (f64, f64),
    pub solve_seconds: f64,
}

impl RunOutcome {
    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.solution.diagnostics
    }
}

struct Setup {
    preset: Preset,
    config: RunConfig,
    paths: SamplePaths,
    interval: (f64, f64),
    basis: Arc<BasisSet>,
}

fn setup(config: &RunConfig) -> Result<Setup> {
    let config = config.resolve()?;
    let preset = problems::preset(&config.preset)?;
    let n_steps = config.n_steps.expect("resolved");
    let dt = config.dt.expect("resolved");
    let k = config.samples.expect("resolved");
    let seed = config.seed.expect("resolved");
    let paths = sde::simulate(preset.problem.clone(), n_steps, 2 * k, dt, seed)?;
    let interval = match (config.interval_lo, config.interval_hi) {
        (Some(a), Some(b)) => (a, b),
        _ => sde::pilot_interval(preset.problem.clone(), n_steps, dt, k, seed)?,
    };
    let basis = Arc::new(BasisSet::new(interval.0, interval.1, config.degree.expect("resolved"))?);
    Ok(Setup {
        preset,
        config,
        paths,
        interval,
        basis,
    })
}

/// Builds the reference information for a preset and evaluates `solution`.
fn evaluate(setup: &Setup, solution: &Solution) -> Result<EvaluationReport> {
    let problem = setup.preset.problem.as_ref();
    let x0 = problem.x0();
    let paths = &setup.paths;
    match &setup.preset.reference {
        ReferenceKind::None => metrics::evaluate(solution, problem, paths, ReferenceInput::default()),
        ReferenceKind::Published(v) => metrics::evaluate(
            solution,
            problem,
            paths,
            ReferenceInput {
                function: None,
                v0: Some((*v, 0.0)),
            },
        ),
        ReferenceKind::Analytic(f) => {
            let func = |x: &[f64], _n: usize, t: f64| f(x, t);
            metrics::evaluate(
                solution,
                problem,
                paths,
                ReferenceInput {
                    function: Some(&func),
                    v0: Some((f(&x0, 0.0), 0.0)),
                },
            )
        }
        ReferenceKind::SeparableFd(dw) => {
            let fd = SeparableFd::new(dw, setup.interval, &paths.times(), FdOptions::default())?;
            let func = |x: &[f64], n: usize, _t: f64| fd.value_at(x, n);
            metrics::evaluate(
                solution,
                problem,
                paths,
                ReferenceInput {
                    function: Some(&func),
                    v0: Some((fd.value_at(&x0, 0), 0.0)),
                },
            )
        }
        ReferenceKind::HopfColeMc => match FlatHjbReference::for_problem(problem) {
            Ok(flat) => {
                let func = |x: &[f64], _n: usize, t: f64| flat.value(x, t);
                metrics::evaluate(
                    solution,
                    problem,
                    paths,
                    ReferenceInput {
                        function: Some(&func),
                        v0: Some((flat.value(&x0, 0.0), 0.0)),
                    },
                )
            }
            Err(_) => {
                let samples = setup.config.reference_samples.expect("resolved");
                let seed = setup.config.seed.expect("resolved") ^ 0x5eed_0f_7e57;
                let est = reference::hjb_mc_reference(problem, &x0, 0.0, samples, seed)?;
                metrics::evaluate(
                    solution,
                    problem,
                    paths,
                    ReferenceInput {
                        function: None,
                        v0: Some((est.value, est.std_error)),
                    },
                )
            }
        },
    }
}

/// Solves, evaluates and, if `output` is set, writes artifacts.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    let s = setup(config)?;
    let bwd = s.config.backward_config(s.preset.problem.dim())?;
    let started = Instant::now();
    let solution = bsde::solve(s.preset.problem.clone(), &s.paths, s.basis.clone(), &bwd)?;
    let solve_seconds = started.elapsed().as_secs_f64();
    let mut report = evaluate(&s, &solution)?;
    report.wall_time = solve_seconds;
    report.config_hash = s.config.hash()?;
    if let Some(dir) = &s.config.output {
        write_artifacts(dir, &s, &solution, &report)?;
    }
    Ok(RunOutcome {
        config: s.config,
        report,
        solution,
        paths: s.paths,
        interval: s.interval,
        solve_seconds,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(w, value)?;
    Ok(())
}

fn write_artifacts(dir: &Path, s: &Setup, solution: &Solution, report: &EvaluationReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("summary.json"), report)?;
    report.write_csv(BufWriter::new(File::create(dir.join("per_step.csv"))?))?;
    write_json(&dir.join("diagnostics.json"), &solution.diagnostics)?;
    fs::write(dir.join("config.toml"), s.config.to_toml())?;
    let manifest = CheckpointManifest {
        config_hash: report.config_hash.clone(),
        build_id: BUILD_ID.to_string(),
        seed: s.config.seed.expect("resolved"),
        scheme: solution.scheme,
        dt: solution.dt,
        n_steps: solution.n_steps(),
        interval: s.interval,
        degree: s.basis.degree(),
        c_g: solution.steps.iter().map(|f| f.c_g()).collect(),
        has_terminal: true,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    if s.config.checkpoints == Some(true) {
        let ck = dir.join("checkpoints");
        fs::create_dir_all(&ck)?;
        for (n, f) in solution.steps.iter().enumerate() {
            f.tt().write_to(BufWriter::new(File::create(ck.join(format!("step_{n:04}.tt")))?))?;
        }
    }
    Ok(())
}

/// Re-evaluates the metrics of a finished run from its checkpoints.
pub fn replay(dir: &Path) -> Result<EvaluationReport> {
    let config = RunConfig::load(&dir.join("config.toml"))?;
    let manifest: CheckpointManifest = serde_json::from_reader(BufReader::new(File::open(dir.join("manifest.json"))?))?;
    let mut fixed = config.clone();
    fixed.interval_lo = Some(manifest.interval.0);
    fixed.interval_hi = Some(manifest.interval.1);
    let mut s = setup(&fixed)?;
    s.config = config.resolve()?;
    if manifest.degree != s.basis.degree() || manifest.n_steps != s.paths.n_steps() {
        return Err(Error::Format("manifest does not match the stored configuration".into()));
    }
    let problem = s.preset.problem.clone();
    let steps = (0..=manifest.n_steps)
        .map(|n| {
            let path = dir.join("checkpoints").join(format!("step_{n:04}.tt"));
            let tt = TensorTrain::read_from(BufReader::new(File::open(&path)?))?;
            TTFunction::new(tt, s.basis.clone(), manifest.c_g[n], Some(problem.terminal()))
        })
        .collect::<Result<Vec<_>>>()?;
    let solution = Solution {
        scheme: manifest.scheme,
        dt: manifest.dt,
        steps,
        diagnostics: Vec::new(),
    };
    let mut report = evaluate(&s, &solution)?;
    report.config_hash = s.config.hash()?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Dimension,
    Degree,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dimension" | "dim" | "d" => Ok(SweepAxis::Dimension),
            "degree" => Ok(SweepAxis::Degree),
            other => Err(Error::config("axis", format!("expected dimension or degree, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub preset: String,
    pub value: usize,
    pub v0: f64,
    pub reference_v0: Option<f64>,
    pub rel_error_x0: Option<f64>,
    pub pde_loss: f64,
    pub ref_loss: Option<f64>,
    pub wall_time: f64,
}

/// Replaces the trailing `-d<number>` of a preset id.
fn with_dimension(id: &str, d: usize) -> Result<String> {
    let (base, tail) = id
        .rsplit_once("-d")
        .filter(|(_, t)| t.parse::<usize>().is_ok())
        .ok_or_else(|| Error::config("preset", format!("`{id}` has no -d<dimension> suffix to sweep")))?;
    let _ = tail;
    Ok(format!("{base}-d{d}"))
}

/// One run per value, sequentially, each in `output/<axis>-<value>` when an
/// output directory is configured.
pub fn sweep(config: &RunConfig, axis: SweepAxis, values: &[usize]) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&v| {
            let mut c = config.clone();
            let tag = match axis {
                SweepAxis::Dimension => {
                    c.preset = with_dimension(&config.preset, v)?;
                    format!("d-{v}")
                }
                SweepAxis::Degree => {
                    c.degree = Some(v);
                    format!("degree-{v}")
                }
            };
            c.output = config.output.as_ref().map(|o| o.join(tag));
            let out = run(&c)?;
            Ok(SweepRow {
                preset: c.preset,
                value: v,
                v0: out.report.v0,
                reference_v0: out.report.reference_v0,
                rel_error_x0: out.report.rel_error_x0,
                pde_loss: out.report.pde_loss.test,
                ref_loss: out.report.ref_loss.map(|l| l.test.value),
                wall_time: out.report.wall_time,
            })
        })
        .collect()
}

pub fn write_sweep_csv<W: std::io::Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.8e}")).unwrap_or_default();
    writeln!(w, "preset,value,v0,reference_v0,rel_error_x0,pde_loss,ref_loss,wall_time")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{:.8e},{},{},{:.8e},{},{:.3}",
            r.preset,
            r.value,
            r.v0,
            opt(r.reference_v0),
            opt(r.rel_error_x0),
            r.pde_loss,
            opt(r.ref_loss),
            r.wall_time
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> RunConfig {
        RunConfig {
            samples: Some(60),
            n_steps: Some(5),
            ..RunConfig::for_preset("heat-d2")
        }
    }

    #[test]
    fn config_round_trips() {
        let mut c = small().resolve().unwrap();
        c.output = Some(PathBuf::from("out/x"));
        c.interval_lo = Some(-1.25);
        c.interval_hi = Some(0.1 + 0.2);
        let back = RunConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("preset = \"hjb-d2\"\nrnak = 3\n").unwrap_err();
        assert!(err.to_string().contains("rnak"), "{err}");
    }

    #[test]
    fn invalid_fields_are_named() {
        let c = RunConfig {
            dt: Some(-0.1),
            ..RunConfig::for_preset("hjb-d2")
        };
        assert!(c.resolve().unwrap_err().to_string().contains("`dt`"));
        assert!(matches!(
            RunConfig::for_preset("nope").resolve(),
            Err(Error::UnknownPreset(_))
        ));
        let c = RunConfig {
            dt: Some(0.1),
            n_steps: Some(3),
            ..RunConfig::for_preset("hjb-d2")
        };
        assert!(c.resolve().unwrap_err().to_string().contains("n_steps"));
    }

    #[test]
    fn hash_ignores_output_and_explicit_defaults() {
        let a = small();
        let mut b = small();
        b.output = Some(PathBuf::from("elsewhere"));
        b.scheme = Some(Scheme::Implicit);
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.seed = Some(3);
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn dimension_substitution() {
        assert_eq!(with_dimension("hjb-d100", 10).unwrap(), "hjb-d10");
        assert_eq!(with_dimension("double-well-diag-d50", 3).unwrap(), "double-well-diag-d3");
        assert!(with_dimension("allen-cahn", 3).is_err());
    }

    #[test]
    fn run_writes_artifacts_and_replays() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = small();
        c.output = Some(dir.path().to_path_buf());
        let out = run(&c).unwrap();
        for f in ["summary.json", "per_step.csv", "manifest.json", "config.toml", "checkpoints/step_0005.tt"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let replayed = replay(dir.path()).unwrap();
        let mut original = out.report.clone();
        original.wall_time = 0.0;
        assert_eq!(replayed, original);
    }

    #[test]
    fn single_value_sweep_equals_run() {
        let c = small();
        let rows = sweep(&c, SweepAxis::Degree, &[1]).unwrap();
        let r = run(&RunConfig { degree: Some(1), ..c }).unwrap();
        assert_eq!(rows[0].v0, r.report.v0);
        assert_eq!(rows[0].pde_loss, r.report.pde_loss.test);
    }
}
