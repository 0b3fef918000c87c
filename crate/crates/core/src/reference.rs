//! Reference values: Monte Carlo over the exponential transform for HJB-type
//! equations, a separable finite-difference solver for the non-interacting
//! double well, quadrature for the flat HJB case, and the closed-form
//! unbounded solution.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{Diffusion, DoubleWell, Pde, Unbounded};
use crate::sde::euler_step;

/// Samples per independent random substream.
pub const MC_CHUNK: usize = 4096;
/// Euler step used by the time-stepped estimator unless overridden.
pub const DEFAULT_MC_DT: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEstimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
}

impl ReferenceEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            std_error: 0.0,
            n_samples: 0,
        }
    }
}

/// Running log-sum-exp accumulator for `Σ e^a` and `Σ e^{2a}`.
#[derive(Clone, Copy, Debug)]
struct LogMoments {
    shift: f64,
    s1: f64,
    s2: f64,
    n: usize,
}

impl LogMoments {
    fn new() -> Self {
        Self {
            shift: f64::NEG_INFINITY,
            s1: 0.0,
            s2: 0.0,
            n: 0,
        }
    }

    fn rescale(&mut self, shift: f64) {
        if shift > self.shift {
            if self.n > 0 {
                let f = (self.shift - shift).exp();
                self.s1 *= f;
                self.s2 *= f * f;
            }
            self.shift = shift;
        }
    }

    fn push(&mut self, a: f64) {
        self.rescale(a);
        let e = (a - self.shift).exp();
        self.s1 += e;
        self.s2 += e * e;
        self.n += 1;
    }

    fn merge(mut self, other: LogMoments) -> Self {
        if other.n == 0 {
            return self;
        }
        self.rescale(other.shift);
        let f = (other.shift - self.shift).exp();
        self.s1 += other.s1 * f;
        self.s2 += other.s2 * f * f;
        self.n += other.n;
        self
    }

    /// `-log mean(e^a)` with its delta-method standard error.
    fn estimate(&self) -> ReferenceEstimate {
        let m = self.n as f64;
        let mean = self.s1 / m;
        let var = if self.n > 1 {
            ((self.s2 / m - mean * mean) * m / (m - 1.0)).max(0.0)
        } else {
            0.0
        };
        ReferenceEstimate {
            value: -(mean.ln() + self.shift),
            std_error: (var / m).sqrt() / mean,
            n_samples: self.n,
        }
    }
}

fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

fn accumulate<F>(samples: usize, seed: u64, draw: F) -> LogMoments
where
    F: Fn(&mut ChaCha8Rng, &mut Vec<f64>) -> f64 + Sync,
{
    let n_chunks = samples.div_ceil(MC_CHUNK);
    let parts: Vec<LogMoments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(seed, c);
            let mut buf = Vec::new();
            let mut acc = LogMoments::new();
            let count = MC_CHUNK.min(samples - c * MC_CHUNK);
            for _ in 0..count {
                acc.push(draw(&mut rng, &mut buf));
            }
            acc
        })
        .collect();
    parts.into_iter().fold(LogMoments::new(), LogMoments::merge)
}

fn check_hjb(problem: &dyn Pde, x: &[f64], samples: usize) -> Result<()> {
    if !problem.is_hjb() {
        return Err(Error::Capability(format!(
            "{} does not have the quadratic HJB nonlinearity",
            problem.name()
        )));
    }
    if x.len() != problem.dim() {
        return Err(Error::Shape {
            what: "evaluation point vs dimension",
            left: x.len(),
            right: problem.dim(),
        });
    }
    if samples == 0 {
        return Err(Error::Domain("at least one Monte Carlo sample is required".into()));
    }
    Ok(())
}

/// `V(x, t) = -log E[exp(-g(X_T)) | X_t = x]`.
///
/// Drift-free problems with scalar noise are sampled in one shot from the
/// Gaussian law of `X_T`; everything else is time-stepped with
/// [`DEFAULT_MC_DT`].
pub fn hjb_mc_reference(
    problem: &dyn Pde,
    x: &[f64],
    t: f64,
    samples: usize,
    seed: u64,
) -> Result<ReferenceEstimate> {
    check_hjb(problem, x, samples)?;
    let tau = problem.horizon() - t;
    let g = problem.terminal();
    if tau <= 0.0 {
        return Ok(ReferenceEstimate::exact(g.value(x)));
    }
    let scalar = match problem.diffusion(x, t) {
        Diffusion::Scalar(s) if problem.is_drift_free() => Some(s),
        _ => None,
    };
    let Some(s) = scalar else {
        return hjb_mc_reference_stepped(problem, x, t, samples, seed, DEFAULT_MC_DT);
    };
    let scale = s * tau.sqrt();
    let acc = accumulate(samples, seed, |rng, buf| {
        buf.clear();
        buf.extend(x.iter().map(|&xi| xi + scale * rng.sample::<f64, _>(StandardNormal)));
        -g.value(buf)
    });
    Ok(acc.estimate())
}

/// Euler–Maruyama version of [`hjb_mc_reference`] with step close to `dt`.
pub fn hjb_mc_reference_stepped(
    problem: &dyn Pde,
    x: &[f64],
    t: f64,
    samples: usize,
    seed: u64,
    dt: f64,
) -> Result<ReferenceEstimate> {
    check_hjb(problem, x, samples)?;
    if !(dt > 0.0) {
        return Err(Error::Domain(format!("Monte Carlo step must be positive, got {dt}")));
    }
    let tau = problem.horizon() - t;
    let g = problem.terminal();
    if tau <= 0.0 {
        return Ok(ReferenceEstimate::exact(g.value(x)));
    }
    let n_steps = ((tau / dt).round() as usize).max(1);
    let h = tau / n_steps as f64;
    let d = x.len();
    let acc = accumulate(samples, seed, |rng, buf| {
        buf.resize(5 * d, 0.0);
        let (state, rest) = buf.split_at_mut(d);
        let (next, rest) = rest.split_at_mut(d);
        let (xi, scratch) = rest.split_at_mut(d);
        state.copy_from_slice(x);
        for n in 0..n_steps {
            xi.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            euler_step(problem, state, t + n as f64 * h, h, xi, scratch, next);
            state.copy_from_slice(next);
        }
        -g.value(state)
    });
    Ok(acc.estimate())
}

/// Nodes and weights of an `n`-point Gauss rule from its Jacobi matrix;
/// the weights are normalized to sum to one.
fn golub_welsch(diag: &[f64], off: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = diag.len();
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            diag[i]
        } else if i + 1 == j {
            off[i]
        } else if j + 1 == i {
            off[j]
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    pairs.into_iter().map(|(x, w)| (x, w / total)).unzip()
}

/// Gauss rule for the standard normal law.
fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let off: Vec<f64> = (1..n).map(|j| (j as f64).sqrt()).collect();
    golub_welsch(&vec![0.0; n], &off)
}

/// Gauss rule for the Gamma(α + 1, 1) law.
fn gauss_laguerre(n: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
    let diag: Vec<f64> = (0..n).map(|j| 2.0 * j as f64 + alpha + 1.0).collect();
    let off: Vec<f64> = (1..n).map(|j| (j as f64 * (j as f64 + alpha)).sqrt()).collect();
    golub_welsch(&diag, &off)
}

/// Deterministic reference for the flat HJB problem `∂_t V + ΔV - |∇V|² = 0`
/// with `g(x) = log((1 + |x|²)/2)`.
///
/// `X_T = x + s ξ` gives `|X_T|² = (r + s ξ_1)² + s² χ²_{d-1}`, so the
/// expectation is a two-dimensional integral evaluated by tensor Gauss rules.
#[derive(Clone, Debug)]
pub struct FlatHjbReference {
    d: usize,
    sigma: f64,
    horizon: f64,
    hermite: (Vec<f64>, Vec<f64>),
    /// Rule for `χ²_{d-1} / 2`; empty when `d = 1`.
    laguerre: (Vec<f64>, Vec<f64>),
}

impl FlatHjbReference {
    pub fn new(d: usize, sigma: f64, horizon: f64, nodes: usize) -> Self {
        let laguerre = if d > 1 {
            gauss_laguerre(nodes, (d - 1) as f64 / 2.0 - 1.0)
        } else {
            (vec![0.0], vec![1.0])
        };
        Self {
            d,
            sigma,
            horizon,
            hermite: gauss_hermite(nodes),
            laguerre,
        }
    }

    /// Matches a problem whose terminal condition is the log-quadratic one.
    pub fn for_problem(problem: &dyn Pde) -> Result<Self> {
        let x = problem.x0();
        match problem.diffusion(&x, 0.0) {
            Diffusion::Scalar(s) if problem.is_drift_free() && problem.is_hjb() => {
                Ok(Self::new(problem.dim(), s, problem.horizon(), 64))
            }
            _ => Err(Error::Capability(format!(
                "{} is not a flat HJB problem",
                problem.name()
            ))),
        }
    }

    pub fn value(&self, x: &[f64], t: f64) -> f64 {
        debug_assert_eq!(x.len(), self.d);
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let tau = self.horizon - t;
        if tau <= 0.0 {
            return (0.5 + 0.5 * r2).ln();
        }
        let r = r2.sqrt();
        let s = self.sigma * tau.sqrt();
        let mut mean = 0.0;
        for (xi, wx) in self.hermite.0.iter().zip(&self.hermite.1) {
            let radial = (r + s * xi).powi(2);
            for (u, wu) in self.laguerre.0.iter().zip(&self.laguerre.1) {
                mean += wx * wu * 2.0 / (1.0 + radial + 2.0 * s * s * u);
            }
        }
        -mean.ln()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdOptions {
    pub nodes: usize,
    /// Fractional widening of the interval on which the grid is laid out.
    pub extension: f64,
    pub max_time_step: f64,
    pub tol: f64,
    pub max_refinements: usize,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            nodes: 2000,
            extension: 0.5,
            max_time_step: 5e-3,
            tol: 1e-6,
            max_refinements: 4,
        }
    }
}

/// One-dimensional factor `(∂_t + b ∂_x + ½σ² ∂_xx) ψ = 0`, `ψ(·, T) = e^{-ν(x-1)²}`
/// with `b(x) = -4 c x (x² - 1)`, sampled on a uniform grid at the requested times.
#[derive(Clone, Debug)]
struct Factor {
    c: f64,
    nu: f64,
    lo: f64,
    h: f64,
    /// `-log ψ` per requested time, per node.
    u: Vec<Vec<f64>>,
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &mut [f64], work: &mut [f64]) {
    let n = diag.len();
    work[0] = sup[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - sub[i] * work[i - 1];
        if i + 1 < n {
            work[i] = sup[i] / m;
        }
        rhs[i] = (rhs[i] - sub[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= work[i] * rhs[i + 1];
    }
}

impl Factor {
    /// `times` must be sorted ascending and end at or before `horizon`.
    fn solve(c: f64, nu: f64, sigma: f64, horizon: f64, lo: f64, hi: f64, nodes: usize, max_dt: f64, times: &[f64]) -> Self {
        let h = (hi - lo) / (nodes - 1) as f64;
        let xs: Vec<f64> = (0..nodes).map(|i| lo + i as f64 * h).collect();
        let diff = 0.5 * sigma * sigma / (h * h);
        // Operator rows (lower, centre, upper) with reflecting ghost nodes.
        let mut lower = vec![0.0; nodes];
        let mut centre = vec![0.0; nodes];
        let mut upper = vec![0.0; nodes];
        for i in 0..nodes {
            let x = xs[i];
            let b = -4.0 * c * x * (x * x - 1.0) / (2.0 * h);
            let (l, u) = (diff - b, diff + b);
            centre[i] = -2.0 * diff;
            if i == 0 {
                upper[i] = l + u;
            } else if i + 1 == nodes {
                lower[i] = l + u;
            } else {
                lower[i] = l;
                upper[i] = u;
            }
        }

        let mut psi: Vec<f64> = xs.iter().map(|x| (-nu * (x - 1.0).powi(2)).exp()).collect();
        let mut out = vec![Vec::new(); times.len()];
        let mut now = horizon;
        let mut rhs = vec![0.0; nodes];
        let mut work = vec![0.0; nodes];
        let (mut a, mut bdiag, mut cc) = (vec![0.0; nodes], vec![0.0; nodes], vec![0.0; nodes]);
        for (slot, &target) in times.iter().enumerate().rev() {
            let gap = now - target;
            if gap > 0.0 {
                let steps = (gap / max_dt).ceil() as usize;
                let k = gap / steps as f64;
                for i in 0..nodes {
                    a[i] = -0.5 * k * lower[i];
                    bdiag[i] = 1.0 - 0.5 * k * centre[i];
                    cc[i] = -0.5 * k * upper[i];
                }
                for _ in 0..steps {
                    for i in 0..nodes {
                        let mut v = psi[i] * (1.0 + 0.5 * k * centre[i]);
                        if i > 0 {
                            v += 0.5 * k * lower[i] * psi[i - 1];
                        }
                        if i + 1 < nodes {
                            v += 0.5 * k * upper[i] * psi[i + 1];
                        }
                        rhs[i] = v;
                    }
                    thomas(&a, &bdiag, &cc, &mut rhs, &mut work);
                    psi.copy_from_slice(&rhs);
                }
                now = target;
            }
            out[slot] = psi.iter().map(|p| -p.ln()).collect();
        }
        Self { c, nu, lo, h, u: out }
    }

    /// Cubic Lagrange interpolation of `-log ψ` at time slot `slot`.
    fn eval(&self, slot: usize, x: f64) -> f64 {
        let u = &self.u[slot];
        let n = u.len();
        let s = (x - self.lo) / self.h;
        let base = (s.floor() as isize - 1).clamp(0, n as isize - 4) as usize;
        let mut acc = 0.0;
        for j in 0..4 {
            let mut w = 1.0;
            for m in 0..4 {
                if m != j {
                    w *= (s - (base + m) as f64) / (j as f64 - m as f64);
                }
            }
            acc += w * u[base + j];
        }
        acc
    }
}

/// Product-form solution of the non-interacting double-well problem at a fixed set of times.
#[derive(Clone, Debug)]
pub struct SeparableFd {
    times: Vec<f64>,
    /// One factor per coordinate group with equal `(C_ii, ν_i)`.
    factors: Vec<Factor>,
    /// Factor index per coordinate.
    coordinate: Vec<usize>,
    /// Largest Richardson difference observed.
    pub richardson_diff: f64,
    pub nodes: usize,
}

impl SeparableFd {
    /// Solves on `interval` widened by `opts.extension`, refining until two
    /// successive grids agree to `opts.tol` on the coarser nodes.
    pub fn new(problem: &DoubleWell, interval: (f64, f64), times: &[f64], opts: FdOptions) -> Result<Self> {
        if !problem.is_diagonal() {
            return Err(Error::Capability("separable reference needs a diagonal interaction matrix".into()));
        }
        if times.is_empty() || times.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Domain("reference times must be non-empty and ascending".into()));
        }
        let horizon = problem.horizon();
        if times.iter().any(|&t| t > horizon + 1e-12 || t < 0.0) {
            return Err(Error::Domain("reference times must lie in [0, T]".into()));
        }
        let (a, b) = interval;
        let pad = 0.5 * opts.extension * (b - a);
        let (lo, hi) = (a - pad, b + pad);

        let d = problem.dim();
        let mut groups: Vec<(f64, f64)> = Vec::new();
        let mut coordinate = Vec::with_capacity(d);
        for i in 0..d {
            let key = (problem.interaction()[(i, i)], problem.nu()[i]);
            let idx = groups
                .iter()
                .position(|g| g.0.to_bits() == key.0.to_bits() && g.1.to_bits() == key.1.to_bits())
                .unwrap_or_else(|| {
                    groups.push(key);
                    groups.len() - 1
                });
            coordinate.push(idx);
        }

        let solve_all = |nodes: usize, max_dt: f64| -> Vec<Factor> {
            groups
                .par_iter()
                .map(|&(c, nu)| Factor::solve(c, nu, problem.sigma(), horizon, lo, hi, nodes, max_dt, times))
                .collect()
        };
        let mut nodes = opts.nodes;
        let mut max_dt = opts.max_time_step;
        let mut coarse = solve_all(nodes, max_dt);
        let mut worst = f64::INFINITY;
        for _ in 0..=opts.max_refinements {
            let fine_nodes = 2 * nodes - 1;
            let fine = solve_all(fine_nodes, 0.5 * max_dt);
            worst = 0.0;
            for (fc, ff) in coarse.iter().zip(&fine) {
                for (uc, uf) in fc.u.iter().zip(&ff.u) {
                    for i in 0..nodes {
                        let x = lo + i as f64 * fc.h;
                        if x >= a && x <= b {
                            worst = worst.max((uc[i] - uf[2 * i]).abs());
                        }
                    }
                }
            }
            nodes = fine_nodes;
            max_dt *= 0.5;
            coarse = fine;
            if worst <= opts.tol {
                return Ok(Self {
                    times: times.to_vec(),
                    factors: coarse,
                    coordinate,
                    richardson_diff: worst,
                    nodes,
                });
            }
        }
        Err(Error::Refinement {
            diff: worst,
            tol: opts.tol,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// `V(x, t_slot) = -Σ log ψ_i(x_i, t_slot)`.
    pub fn value_at(&self, x: &[f64], slot: usize) -> f64 {
        x.iter()
            .zip(&self.coordinate)
            .map(|(&xi, &f)| self.factors[f].eval(slot, xi))
            .sum()
    }

    /// Looks the time up among the solved ones.
    pub fn value(&self, x: &[f64], t: f64) -> Result<f64> {
        let slot = self
            .times
            .iter()
            .position(|&s| (s - t).abs() <= 1e-12 * (1.0 + t.abs()))
            .ok_or_else(|| Error::Domain(format!("time {t} was not part of the finite-difference solve")))?;
        Ok(self.value_at(x, slot))
    }

    /// Coefficients of factor `f`, for diagnostics.
    pub fn factor_parameters(&self, f: usize) -> (f64, f64) {
        (self.factors[f].c, self.factors[f].nu)
    }
}

/// Single-time convenience wrapper around [`SeparableFd`].
pub fn separable_fd_reference(problem: &DoubleWell, interval: (f64, f64), x: &[f64], t: f64) -> Result<f64> {
    let fd = SeparableFd::new(problem, interval, &[t], FdOptions::default())?;
    Ok(fd.value_at(x, 0))
}

/// Closed-form solution of the unbounded example with horizon `horizon`.
pub fn unbounded_analytic(x: &[f64], t: f64, horizon: f64) -> f64 {
    Unbounded::new(x.len(), horizon).solution(x, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{Heat, Hjb};

    #[test]
    fn log_moments_merge_matches_sequential() {
        let values = [-3.0, 700.0, 1.5, -800.0, 699.0];
        let mut seq = LogMoments::new();
        values.iter().for_each(|&v| seq.push(v));
        let mut a = LogMoments::new();
        let mut b = LogMoments::new();
        values[..2].iter().for_each(|&v| a.push(v));
        values[2..].iter().for_each(|&v| b.push(v));
        let merged = b.merge(a).estimate();
        let s = seq.estimate();
        assert!((merged.value - s.value).abs() < 1e-12);
        assert!((merged.std_error - s.std_error).abs() < 1e-12);
        let expected = -(700.0 + ((1.0 + (-1.0f64).exp()) / 5.0).ln());
        assert!((s.value - expected).abs() < 1e-12);
    }

    #[test]
    fn terminal_time_is_exact() {
        let p = Hjb::new(4, 1.0);
        let x = [0.5, -1.0, 2.0, 0.0];
        let est = hjb_mc_reference(&p, &x, 1.0, 10, 3).unwrap();
        assert_eq!(est.std_error, 0.0);
        assert_eq!(est.value, p.terminal().value(&x));
    }

    #[test]
    fn non_hjb_problem_is_rejected() {
        let p = Heat::new(2, 1.0);
        assert!(matches!(hjb_mc_reference(&p, &[0.0, 0.0], 0.0, 10, 0), Err(Error::Capability(_))));
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let p = Hjb::new(5, 1.0);
        let x = [0.1; 5];
        let a = hjb_mc_reference(&p, &x, 0.0, 10_000, 9).unwrap();
        let b = hjb_mc_reference(&p, &x, 0.0, 10_000, 9).unwrap();
        assert_eq!(a.value.to_bits(), b.value.to_bits());
        assert_eq!(a.std_error.to_bits(), b.std_error.to_bits());
    }

    #[test]
    fn quadrature_agrees_with_monte_carlo() {
        for d in [1usize, 3, 20] {
            let p = Hjb::new(d, 1.0);
            let q = FlatHjbReference::for_problem(&p).unwrap();
            let x: Vec<f64> = (0..d).map(|i| 0.3 * i as f64 - 0.2).collect();
            for t in [0.0, 0.6] {
                let mc = hjb_mc_reference(&p, &x, t, 200_000, 5).unwrap();
                let v = q.value(&x, t);
                assert!((v - mc.value).abs() <= 4.0 * mc.std_error, "d={d} t={t}: {v} vs {mc:?}");
            }
        }
    }

    #[test]
    fn gauss_rules_integrate_moments() {
        let (x, w) = gauss_hermite(20);
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert!((m4 - 3.0).abs() < 1e-10);
        let (x, w) = gauss_laguerre(20, 2.5);
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((m2 - 3.5 * 4.5).abs() < 1e-9);
    }

    #[test]
    fn finite_differences_reproduce_terminal_condition() {
        let p = DoubleWell::diagonal(3, 0.1, 0.05, 0.5);
        let fd = SeparableFd::new(&p, (-3.0, 3.0), &[0.2, 0.5], FdOptions::default()).unwrap();
        let x = [-1.0, 0.37, 2.2];
        let g = p.terminal().value(&x);
        assert!((fd.value(&x, 0.5).unwrap() - g).abs() <= 1e-10);
        assert!(fd.value(&x, 0.3).is_err());
    }

    #[test]
    fn finite_differences_agree_with_stepped_monte_carlo() {
        let p = DoubleWell::diagonal(4, 0.1, 0.05, 0.5);
        let x = [-1.0, -0.5, 0.3, 1.2];
        let fd = separable_fd_reference(&p, (-3.0, 3.0), &x, 0.0).unwrap();
        let mc = hjb_mc_reference_stepped(&p, &x, 0.0, 40_000, 17, 2e-3).unwrap();
        assert!((fd - mc.value).abs() <= 3.0 * mc.std_error, "{fd} vs {mc:?}");
    }

    #[test]
    fn finite_difference_slice_converges() {
        let p = DoubleWell::diagonal(1, 0.1, 0.05, 0.5);
        let opts = FdOptions::default();
        let fd = SeparableFd::new(&p, (-3.0, 3.0), &[0.0], opts).unwrap();
        assert!(fd.richardson_diff <= 1e-6);
        let dense = SeparableFd::new(
            &p,
            (-3.0, 3.0),
            &[0.0],
            FdOptions {
                nodes: 2 * fd.nodes - 1,
                max_time_step: opts.max_time_step / 4.0,
                ..opts
            },
        )
        .unwrap();
        for x in [-2.5, -1.0, 0.0, 0.7, 2.9] {
            assert!((fd.value_at(&[x], 0) - dense.value_at(&[x], 0)).abs() <= 1e-6);
        }
    }

    #[test]
    fn unbounded_closed_form() {
        assert_eq!(unbounded_analytic(&[0.0; 4], 1.0, 1.0), 1.0);
        let left = unbounded_analytic(&[-1e-12, 0.0], 0.0, 1.0);
        let right = unbounded_analytic(&[1e-12, 0.0], 0.0, 1.0);
        assert!((left - right).abs() < 1e-10);
        let x = [-0.4, -1.0];
        let expected = 0.5 * ((-0.4f64).sin() + (-1.0f64).sin()) + (-0.4f64 - 2.0).cos();
        assert!((unbounded_analytic(&x, 0.0, 1.0) - expected).abs() < 1e-14);
    }
}
