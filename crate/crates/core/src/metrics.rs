//! Losses over solved trajectories: PDE residual, relative reference error
//! and its per-step curve.

use std::io::Write;
use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::Solution;
use crate::error::{Error, Result};
use crate::problems::{Diffusion, Pde};
use crate::sde::SamplePaths;

/// Relative errors are skipped where `|V_ref|` falls below this.
pub const REFERENCE_FLOOR: f64 = 1e-12;

/// A space-time function sampled on the time grid, as needed by [`pde_loss`].
pub trait GridFunction: Sync {
    fn n_steps(&self) -> usize;
    fn value(&self, n: usize, x: &[f64]) -> f64;
    fn value_and_gradient(&self, n: usize, x: &[f64], grad: &mut [f64]) -> Result<f64>;
    /// `½ tr(σσᵀ ∇²V)`.
    fn second_order(&self, n: usize, x: &[f64], sigma: &Diffusion) -> Result<f64>;
}

impl GridFunction for Solution {
    fn n_steps(&self) -> usize {
        Solution::n_steps(self)
    }

    fn value(&self, n: usize, x: &[f64]) -> f64 {
        self.steps[n].evaluate(x)
    }

    fn value_and_gradient(&self, n: usize, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.steps[n].value_and_gradient(x, grad)
    }

    fn second_order(&self, n: usize, x: &[f64], sigma: &Diffusion) -> Result<f64> {
        sigma.second_order_term(&self.steps[n], x)
    }
}

/// Reference value at `(x, t_n)`; the step index is passed along for
/// references tabulated on the time grid.
pub type ReferenceFn<'a> = &'a (dyn Fn(&[f64], usize, f64) -> f64 + Sync);

fn rows(states: &[f64], d: usize, range: &Range<usize>) -> Vec<f64> {
    states[range.start * d..range.end * d].to_vec()
}

/// Mean squared residual of `(∂_t + L) V + h` over `n = 1..=N` and the paths
/// in `range`; `∂_t` is a forward difference (backward at `n = N`).
pub fn pde_loss(
    f: &dyn GridFunction,
    problem: &dyn Pde,
    paths: &SamplePaths,
    range: Range<usize>,
) -> Result<f64> {
    let d = problem.dim();
    let n_steps = f.n_steps();
    if n_steps != paths.n_steps() {
        return Err(Error::Shape {
            what: "solution steps vs path steps",
            left: n_steps,
            right: paths.n_steps(),
        });
    }
    if range.is_empty() || range.end > paths.n_paths() {
        return Err(Error::Domain(format!("invalid path range {range:?}")));
    }
    let dt = paths.dt();
    let mut total = 0.0;
    for n in 1..=n_steps {
        let x = rows(&paths.states(n)?, d, &range);
        let t = paths.time(n);
        let sq: Vec<f64> = x
            .par_chunks(d)
            .map(|p| -> Result<f64> {
                let mut grad = vec![0.0; d];
                let mut drift = vec![0.0; d];
                let mut z = vec![0.0; d];
                let v = f.value_and_gradient(n, p, &mut grad)?;
                let time = if n < n_steps {
                    (f.value(n + 1, p) - v) / dt
                } else {
                    (v - f.value(n - 1, p)) / dt
                };
                problem.drift(p, t, &mut drift);
                let sigma = problem.diffusion(p, t);
                sigma.apply_transpose(&grad, &mut z);
                let transport: f64 = drift.iter().zip(&grad).map(|(a, b)| a * b).sum();
                let r = time + transport + f.second_order(n, p, &sigma)? + problem.nonlinearity(p, t, v, &z);
                Ok(r * r)
            })
            .collect::<Result<_>>()?;
        total += sq.iter().sum::<f64>();
    }
    Ok(total / (n_steps * range.len()) as f64)
}

/// Per-step sums of relative errors and the number of points that entered them.
fn relative_errors(
    solution: &Solution,
    reference: ReferenceFn<'_>,
    paths: &SamplePaths,
    range: &Range<usize>,
) -> Result<Vec<(f64, usize, usize)>> {
    let d = paths.dim();
    (0..=solution.n_steps())
        .map(|n| {
            let x = rows(&paths.states(n)?, d, range);
            let t = paths.time(n);
            let f = &solution.steps[n];
            let parts: Vec<Option<f64>> = x
                .par_chunks(d)
                .map(|p| {
                    let r = reference(p, n, t);
                    (r.abs() >= REFERENCE_FLOOR).then(|| ((f.evaluate(p) - r) / r).abs())
                })
                .collect();
            let used = parts.iter().flatten().count();
            Ok((parts.iter().flatten().sum(), used, parts.len() - used))
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceLoss {
    pub value: f64,
    /// Points dropped because the reference was numerically zero.
    pub excluded: usize,
}

/// Mean of `|(V̂_n - V_ref) / V_ref|` over `n = 0..=N` and the paths in `range`.
pub fn reference_loss(
    solution: &Solution,
    reference: ReferenceFn<'_>,
    paths: &SamplePaths,
    range: Range<usize>,
) -> Result<ReferenceLoss> {
    let per_step = relative_errors(solution, reference, paths, &range)?;
    let (sum, used, excluded) = per_step
        .iter()
        .fold((0.0, 0, 0), |acc, s| (acc.0 + s.0, acc.1 + s.1, acc.2 + s.2));
    Ok(ReferenceLoss {
        value: if used > 0 { sum / used as f64 } else { f64::NAN },
        excluded,
    })
}

/// `(t_n, mean relative error at step n)`.
pub fn mean_relative_error_curve(
    solution: &Solution,
    reference: ReferenceFn<'_>,
    paths: &SamplePaths,
    range: Range<usize>,
) -> Result<Vec<(f64, f64)>> {
    let per_step = relative_errors(solution, reference, paths, &range)?;
    Ok(per_step
        .iter()
        .enumerate()
        .map(|(n, s)| (paths.time(n), if s.1 > 0 { s.0 / s.1 as f64 } else { f64::NAN }))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split<T> {
    pub train: T,
    pub test: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetric {
    pub n: usize,
    pub t: f64,
    pub mean_rel_err: Option<f64>,
    pub mean_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub v0: f64,
    pub reference_v0: Option<f64>,
    pub reference_v0_std_error: Option<f64>,
    pub rel_error_x0: Option<f64>,
    pub pde_loss: Split<f64>,
    pub ref_loss: Option<Split<ReferenceLoss>>,
    /// Computed on the test half.
    pub per_step: Vec<StepMetric>,
    pub wall_time: f64,
    pub config_hash: String,
}

/// Reference information available for an evaluation.
#[derive(Clone, Copy, Default)]
pub struct ReferenceInput<'a> {
    pub function: Option<ReferenceFn<'a>>,
    pub v0: Option<(f64, f64)>,
}

/// Computes every loss on both halves of `paths`.
pub fn evaluate(
    solution: &Solution,
    problem: &dyn Pde,
    paths: &SamplePaths,
    reference: ReferenceInput<'_>,
) -> Result<EvaluationReport> {
    let n_paths = paths.n_paths();
    let half = n_paths / 2;
    let (train, test) = (0..half, half..n_paths);
    let v0 = solution.v0(&problem.x0());
    let reference_v0 = reference.v0.map(|r| r.0);
    let pde = Split {
        train: pde_loss(solution, problem, paths, train.clone())?,
        test: pde_loss(solution, problem, paths, test.clone())?,
    };
    let (ref_loss, curve) = match reference.function {
        Some(f) => (
            Some(Split {
                train: reference_loss(solution, f, paths, train)?,
                test: reference_loss(solution, f, paths, test.clone())?,
            }),
            Some(mean_relative_error_curve(solution, f, paths, test.clone())?),
        ),
        None => (None, None),
    };
    let d = problem.dim();
    let per_step = (0..=solution.n_steps())
        .map(|n| {
            let x = rows(&paths.states(n)?, d, &test);
            let mean_value = x.par_chunks(d).map(|p| solution.steps[n].evaluate(p)).sum::<f64>() / test.len() as f64;
            Ok(StepMetric {
                n,
                t: paths.time(n),
                mean_rel_err: curve.as_ref().map(|c| c[n].1).filter(|e| e.is_finite()),
                mean_value,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvaluationReport {
        v0,
        reference_v0,
        reference_v0_std_error: reference.v0.map(|r| r.1),
        rel_error_x0: reference_v0
            .filter(|r| r.abs() >= REFERENCE_FLOOR)
            .map(|r| ((v0 - r) / r).abs()),
        pde_loss: pde,
        ref_loss,
        per_step,
        wall_time: 0.0,
        config_hash: String::new(),
    })
}

impl EvaluationReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "n,t,mean_rel_err,mean_value")?;
        for s in &self.per_step {
            let err = s.mean_rel_err.map(|e| format!("{e:.10e}")).unwrap_or_default();
            writeln!(w, "{},{},{},{:.10e}", s.n, s.t, err, s.mean_value)?;
        }
        Ok(())
    }
}
