//! Backward regression driver: from `V̂_N = g` down to `V̂_0`, one
//! least-squares problem (explicit scheme) or one fixed-point loop of them
//! (implicit scheme) per time step.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::als::{self, AlsConfig, RankPolicy, RegressionData};
use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::problems::Pde;
use crate::sde::SamplePaths;
use crate::tensor_train::TensorTrain;
use crate::tt_function::TTFunction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Explicit,
    Implicit,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Explicit => "explicit",
            Scheme::Implicit => "implicit",
        })
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "explicit" => Ok(Scheme::Explicit),
            "implicit" => Ok(Scheme::Implicit),
            other => Err(Error::config("scheme", format!("expected explicit or implicit, got `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackwardConfig {
    pub scheme: Scheme,
    pub als: AlsConfig,
    pub fp_max_iters: usize,
    /// Lower bound on fixed-point iterations before the stopping tests apply.
    pub fp_min_iters: usize,
    pub gamma1: f64,
    pub gamma2: f64,
    pub warm_start: bool,
}

impl BackwardConfig {
    pub fn new(scheme: Scheme, als: AlsConfig) -> Self {
        Self {
            scheme,
            als,
            fp_max_iters: 50,
            fp_min_iters: 1,
            gamma1: 1e-4,
            gamma2: 1e-5,
            warm_start: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.als.validate()?;
        if !(self.gamma1 > 0.0) {
            return Err(Error::config("gamma1", "must be positive"));
        }
        if !(self.gamma2 > 0.0) {
            return Err(Error::config("gamma2", "must be positive"));
        }
        if self.fp_max_iters == 0 {
            return Err(Error::config("fp_max_iters", "must be at least 1"));
        }
        if self.fp_min_iters > self.fp_max_iters {
            return Err(Error::config("fp_min_iters", "must not exceed fp_max_iters"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub n: usize,
    pub seconds: f64,
    pub als_sweeps: usize,
    pub pinv_fallbacks: usize,
    pub train_rms: f64,
    pub test_rms: f64,
    pub ranks: Vec<usize>,
    /// Fixed-point iterations (1 for the explicit scheme).
    pub fp_iterations: usize,
    pub fp_converged: bool,
    /// The loop was stopped by the divergence guard and the best iterate kept.
    pub fp_diverged: bool,
    /// `‖V̂^{k+1} - V̂^k‖` in discrete L² over the test points, per iteration.
    pub fp_residuals: Vec<f64>,
}

/// `steps[n]` approximates `V(·, t_n)`; `steps[N]` is the terminal condition.
#[derive(Clone, Debug)]
pub struct Solution {
    pub scheme: Scheme,
    pub dt: f64,
    pub steps: Vec<TTFunction>,
    /// Indexed by `n` for `n < N`.
    pub diagnostics: Vec<StepDiagnostics>,
}

impl Solution {
    pub fn n_steps(&self) -> usize {
        self.steps.len() - 1
    }

    pub fn v0(&self, x0: &[f64]) -> f64 {
        self.steps[0].evaluate(x0)
    }
}

/// Values and gradients of `f` at the rows of `points`.
pub fn values_and_gradients(f: &TTFunction, points: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = f.dim();
    let n = points.len() / d;
    let mut grads = vec![0.0; n * d];
    let values = grads
        .par_chunks_mut(d)
        .enumerate()
        .map(|(j, g)| f.value_and_gradient(&points[j * d..(j + 1) * d], g))
        .collect::<Result<Vec<f64>>>()?;
    Ok((values, grads))
}

pub fn values(f: &TTFunction, points: &[f64]) -> Vec<f64> {
    let d = f.dim();
    points.par_chunks(d).map(|x| f.evaluate(x)).collect()
}

/// `Z = σᵀ ∇V` row by row.
fn control(problem: &dyn Pde, points: &[f64], t: f64, grads: &[f64]) -> Vec<f64> {
    let d = problem.dim();
    let mut z = vec![0.0; grads.len()];
    z.par_chunks_mut(d).enumerate().for_each(|(j, out)| {
        let x = &points[j * d..(j + 1) * d];
        problem
            .diffusion(x, t)
            .apply_transpose(&grads[j * d..(j + 1) * d], out);
    });
    z
}

/// `R = V̂_{n+1}(X_{n+1}) + h(X_{n+1}, t_{n+1}, Y_{n+1}, Z_{n+1}) Δt`.
pub fn explicit_targets(
    problem: &dyn Pde,
    next: &TTFunction,
    x_next: &[f64],
    t_next: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    let d = problem.dim();
    let (y, grads) = values_and_gradients(next, x_next)?;
    let z = control(problem, x_next, t_next, &grads);
    Ok((0..y.len())
        .into_par_iter()
        .map(|j| {
            let x = &x_next[j * d..(j + 1) * d];
            y[j] + problem.nonlinearity(x, t_next, y[j], &z[j * d..(j + 1) * d]) * dt
        })
        .collect())
}

/// `R = V̂_{n+1}(X_{n+1}) + h(X_n, t_n, Y^k, Z^k) Δt - Z^k · ξ_{n+1} sqrt(Δt)`.
#[allow(clippy::too_many_arguments)]
pub fn implicit_targets(
    problem: &dyn Pde,
    y_next: &[f64],
    x: &[f64],
    t: f64,
    y_k: &[f64],
    z_k: &[f64],
    xi: &[f64],
    dt: f64,
) -> Vec<f64> {
    let d = problem.dim();
    let sqrt_dt = dt.sqrt();
    (0..y_next.len())
        .into_par_iter()
        .map(|j| {
            let r = j * d..(j + 1) * d;
            let zk = &z_k[r.clone()];
            let martingale: f64 = zk.iter().zip(&xi[r.clone()]).map(|(a, b)| a * b).sum();
            y_next[j] + problem.nonlinearity(&x[r], t, y_k[j], zk) * dt - martingale * sqrt_dt
        })
        .collect()
}

fn initial_guess(next: &TTFunction, cfg: &BackwardConfig, n: usize) -> Result<TTFunction> {
    let informative = next.tt().frobenius_norm() > 0.0;
    let compatible = match &cfg.als.rank_policy {
        RankPolicy::Fixed(r) => {
            next.tt().ranks() == TensorTrain::feasible_ranks(&next.tt().mode_sizes(), r)
        }
        RankPolicy::Adaptive(_) => true,
    };
    if cfg.warm_start && informative && compatible {
        Ok(next.clone())
    } else {
        let start_ranks = match &cfg.als.rank_policy {
            RankPolicy::Fixed(r) => r.clone(),
            RankPolicy::Adaptive(r) => crate::tensor_train::RankTuple::uniform(r.len() + 1, 1)?,
        };
        als::near_constant_start(next, &start_ranks, cfg.als.seed.wrapping_add(n as u64))
    }
}

/// Relative difference of the coefficient norms (TT part in the
/// volume-normalized basis, together with `c_g`).
pub fn relative_norm_change(new: &TTFunction, old: &TTFunction) -> Result<f64> {
    let (a, b) = new.basis().interval();
    let w = vec![1.0 / (b - a); new.dim()];
    let norm = |f: &TTFunction| -> Result<f64> {
        Ok((f.tt().dot_weighted(f.tt(), Some(&w))? + f.c_g() * f.c_g()).sqrt())
    };
    let (nn, no) = (norm(new)?, norm(old)?);
    Ok(if no > 0.0 { (nn - no).abs() / no } else { nn })
}

/// The fixed-point loop is abandoned once its residual exceeds this multiple
/// of the smallest residual seen so far.
pub const FP_DIVERGENCE_FACTOR: f64 = 10.0;

/// Runs the backward recursion over `paths`; the first half of the paths is
/// used for training, the second half for stopping tests.
pub fn solve(
    problem: Arc<dyn Pde>,
    paths: &SamplePaths,
    basis: Arc<BasisSet>,
    cfg: &BackwardConfig,
) -> Result<Solution> {
    cfg.validate()?;
    let d = problem.dim();
    if paths.dim() != d {
        return Err(Error::Shape {
            what: "path dimension vs problem dimension",
            left: paths.dim(),
            right: d,
        });
    }
    let n_steps = paths.n_steps();
    let dt = paths.dt();
    let n_paths = paths.n_paths();
    let n_train = n_paths / 2;
    let terminal = TTFunction::terminal(d, basis, problem.terminal())?;

    let mut steps: Vec<Option<TTFunction>> = vec![None; n_steps + 1];
    steps[n_steps] = Some(terminal);
    let mut diagnostics = vec![StepDiagnostics::default(); n_steps];
    let mut x_next = paths.states(n_steps)?;

    for n in (0..n_steps).rev() {
        let started = Instant::now();
        let x = paths.states(n)?;
        let t = paths.time(n);
        let next = steps[n + 1].as_ref().expect("filled in previous iteration");
        let init = initial_guess(next, cfg, n)?;
        let mut diag = StepDiagnostics {
            n,
            ..Default::default()
        };

        let result = match cfg.scheme {
            Scheme::Explicit => {
                let targets = explicit_targets(problem.as_ref(), next, &x_next, paths.time(n + 1), dt)
                    .map_err(|e| e.at_step(n))?;
                let data = RegressionData::with_split(x.clone(), d, targets, n_train)
                    .map_err(|e| e.at_step(n))?;
                let out = als::fit(&data, &init, &cfg.als).map_err(|e| e.at_step(n))?;
                diag.fp_iterations = 1;
                diag.fp_converged = true;
                diag.als_sweeps = out.report.sweeps;
                diag.pinv_fallbacks = out.report.pinv_fallbacks;
                diag.train_rms = out.report.train_rms;
                diag.test_rms = out.report.test_rms;
                out.function
            }
            Scheme::Implicit => {
                let y_next = values(next, &x_next);
                let xi = paths.increments(n);
                let mut current = init;
                let (mut y_k, mut g_k) = values_and_gradients(&current, &x).map_err(|e| e.at_step(n))?;
                let mut data: Option<RegressionData> = None;
                let mut best: Option<(f64, TTFunction)> = None;
                loop {
                    let z_k = control(problem.as_ref(), &x, t, &g_k);
                    let targets = implicit_targets(problem.as_ref(), &y_next, &x, t, &y_k, &z_k, &xi, dt);
                    match data.as_mut() {
                        Some(existing) => existing.set_targets(targets).map_err(|e| e.at_step(n))?,
                        None => {
                            data = Some(
                                RegressionData::with_split(x.clone(), d, targets, n_train)
                                    .map_err(|e| e.at_step(n))?,
                            )
                        }
                    }
                    let out = als::fit(data.as_ref().expect("set above"), &current, &cfg.als)
                        .map_err(|e| e.at_step(n))?;
                    diag.fp_iterations += 1;
                    diag.als_sweeps += out.report.sweeps;
                    diag.pinv_fallbacks += out.report.pinv_fallbacks;
                    diag.train_rms = out.report.train_rms;
                    diag.test_rms = out.report.test_rms;

                    let (y_new, g_new) = values_and_gradients(&out.function, &x).map_err(|e| e.at_step(n))?;
                    let (mut dl2, mut dh1, mut nh1) = (0.0, 0.0, 0.0);
                    for j in n_train..n_paths {
                        let dv = y_new[j] - y_k[j];
                        dl2 += dv * dv;
                        dh1 += dv * dv;
                        nh1 += y_new[j] * y_new[j];
                        for i in 0..d {
                            let dg = g_new[j * d + i] - g_k[j * d + i];
                            dh1 += dg * dg;
                            nh1 += g_new[j * d + i] * g_new[j * d + i];
                        }
                    }
                    let n_test = (n_paths - n_train).max(1) as f64;
                    diag.fp_residuals.push((dl2 / n_test).sqrt());
                    let h1_change = if nh1 > 0.0 { (dh1 / nh1).sqrt() } else { dh1.sqrt() };
                    let coef_change = relative_norm_change(&out.function, &current).map_err(|e| e.at_step(n))?;
                    let residual = *diag.fp_residuals.last().expect("pushed above");

                    current = out.function;
                    y_k = y_new;
                    g_k = g_new;
                    match &best {
                        Some((r, _)) if residual > FP_DIVERGENCE_FACTOR * r => {
                            current = best.take().expect("checked").1;
                            diag.fp_diverged = true;
                            break;
                        }
                        Some((r, _)) if residual >= *r => {}
                        _ => best = Some((residual, current.clone())),
                    }
                    if diag.fp_iterations >= cfg.fp_min_iters
                        && (coef_change < cfg.gamma1 || h1_change < cfg.gamma2)
                    {
                        diag.fp_converged = true;
                        break;
                    }
                    if diag.fp_iterations >= cfg.fp_max_iters {
                        break;
                    }
                }
                current
            }
        };
        diag.ranks = result.tt().ranks().as_slice().to_vec();
        diag.seconds = started.elapsed().as_secs_f64();
        diagnostics[n] = diag;
        steps[n] = Some(result);
        x_next = x;
    }

    Ok(Solution {
        scheme: cfg.scheme,
        dt,
        steps: steps.into_iter().map(|s| s.expect("all steps solved")).collect(),
        diagnostics,
    })
}
