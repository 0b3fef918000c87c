//! Regularized alternating least squares on the tensor-train manifold.
//!
//! Each local problem re-solves one core together with the terminal-condition
//! coefficient `c_g`, with all other cores frozen and orthogonalized around the
//! active core. Internally the basis is rescaled to `ψ = sqrt(b - a) φ`, so the
//! Frobenius penalty measures coefficients relative to a volume-normalized
//! basis; the returned function is expressed in the original basis again.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_train::{Core, RankTuple, TensorTrain};
use crate::tt_function::{fill_local_basis, TTFunction};

/// Condition estimate above which the Cholesky path is abandoned.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Sample locations with targets; the first `n_train` rows form the training set,
/// the rest the test set.
#[derive(Clone, Debug)]
pub struct RegressionData {
    d: usize,
    points: Vec<f64>,
    targets: Vec<f64>,
    n_train: usize,
}

impl RegressionData {
    /// Splits `points` (row-major, `J x d`) into equal train and test halves.
    pub fn new(points: Vec<f64>, d: usize, targets: Vec<f64>) -> Result<Self> {
        let n = targets.len();
        Self::with_split(points, d, targets, n / 2)
    }

    pub fn with_split(points: Vec<f64>, d: usize, targets: Vec<f64>, n_train: usize) -> Result<Self> {
        let j = targets.len();
        if d == 0 || points.len() != j * d {
            return Err(Error::Shape {
                what: "point array length vs targets x dimension",
                left: points.len(),
                right: j * d,
            });
        }
        if j < 2 || n_train == 0 || n_train > j {
            return Err(Error::Data(format!(
                "need at least two samples and a nonempty training set, got J = {j}, n_train = {n_train}"
            )));
        }
        if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::Data(format!("non-finite target {} at sample {i}", targets[i])));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return Err(Error::Data(format!("non-finite coordinate at sample {}", i / d)));
        }
        Ok(Self {
            d,
            points,
            targets,
            n_train,
        })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_test(&self) -> usize {
        self.len() - self.n_train
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j * self.d..(j + 1) * self.d]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn set_targets(&mut self, targets: Vec<f64>) -> Result<()> {
        if targets.len() != self.targets.len() {
            return Err(Error::Shape {
                what: "replacement targets",
                left: targets.len(),
                right: self.targets.len(),
            });
        }
        if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::Data(format!("non-finite target {} at sample {i}", targets[i])));
        }
        self.targets = targets;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "ranks")]
pub enum RankPolicy {
    Fixed(RankTuple),
    Adaptive(RankTuple),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlsConfig {
    pub max_sweeps: usize,
    pub no_change_tol: f64,
    pub reg_constant: f64,
    pub rank_policy: RankPolicy,
    pub include_g: bool,
    /// Seed for random initialization and rank-padding noise.
    pub seed: u64,
}

impl AlsConfig {
    pub fn fixed(ranks: RankTuple) -> Self {
        Self {
            max_sweeps: 20,
            no_change_tol: 1e-4,
            reg_constant: 1.0,
            rank_policy: RankPolicy::Fixed(ranks),
            include_g: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.no_change_tol > 0.0) {
            return Err(Error::config("no_change_tol", "must be positive"));
        }
        if !(self.reg_constant >= 0.0) {
            return Err(Error::config("reg_constant", "must be nonnegative"));
        }
        if self.max_sweeps == 0 {
            return Err(Error::config("max_sweeps", "must be at least 1"));
        }
        Ok(())
    }

    pub fn target_ranks(&self) -> &RankTuple {
        match &self.rank_policy {
            RankPolicy::Fixed(r) | RankPolicy::Adaptive(r) => r,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AlsReport {
    pub sweeps: usize,
    pub converged: bool,
    pub initial_train_rms: f64,
    pub train_rms: f64,
    pub test_rms: f64,
    /// Local solves that fell back to the pseudo-inverse.
    pub pinv_fallbacks: usize,
    /// Regularized training objective after each local solve, one list per sweep.
    pub objective_trace: Vec<Vec<f64>>,
    pub ranks: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct AlsOutcome {
    pub function: TTFunction,
    pub report: AlsReport,
}

/// Per-point state shared by every local problem of one solve.
struct Workspace<'a> {
    data: &'a RegressionData,
    m: usize,
    /// Scaled basis values, `J x d x m`.
    psi: Vec<f64>,
    /// `g(x_j)` or zero when no terminal condition is attached.
    g: Vec<f64>,
    /// `left[k]`: contraction of cores `0..k` at every point, `J x r_k`.
    left: Vec<Vec<f64>>,
    /// `right[k]`: contraction of cores `k..d` at every point, `J x r_{k-1}`.
    right: Vec<Vec<f64>>,
}

impl<'a> Workspace<'a> {
    fn new(data: &'a RegressionData, f: &TTFunction, scale: f64) -> Self {
        let d = data.dim();
        let m = f.basis().len();
        let j = data.len();
        let mut psi = vec![0.0; j * d * m];
        psi.par_chunks_mut(d * m).enumerate().for_each(|(i, out)| {
            let x = data.point(i);
            for (k, &xk) in x.iter().enumerate() {
                let slot = &mut out[k * m..(k + 1) * m];
                f.basis().values_into(xk, slot);
                slot.iter_mut().for_each(|v| *v *= scale);
            }
        });
        let g = match f.g() {
            Some(g) => (0..j).into_par_iter().map(|i| g.value(data.point(i))).collect(),
            None => vec![0.0; j],
        };
        let mut left = vec![Vec::new(); d + 1];
        left[0] = vec![1.0; j];
        let mut right = vec![Vec::new(); d + 1];
        right[d] = vec![1.0; j];
        Self {
            data,
            m,
            psi,
            g,
            left,
            right,
        }
    }

    fn psi(&self, j: usize, k: usize) -> &[f64] {
        let d = self.data.dim();
        &self.psi[(j * d + k) * self.m..(j * d + k + 1) * self.m]
    }

    fn update_left(&mut self, core: &Core, k: usize) {
        let (l, r) = (core.left_rank(), core.right_rank());
        let j = self.data.len();
        let mut next = vec![0.0; j * r];
        let prev = &self.left[k];
        let this = &*self;
        next.par_chunks_mut(r).enumerate().for_each(|(i, out)| {
            core.contract_left(&prev[i * l..(i + 1) * l], this.psi(i, k), out);
        });
        self.left[k + 1] = next;
    }

    fn update_right(&mut self, core: &Core, k: usize) {
        let (l, r) = (core.left_rank(), core.right_rank());
        let j = self.data.len();
        let mut next = vec![0.0; j * l];
        let prev = &self.right[k + 1];
        let this = &*self;
        next.par_chunks_mut(l).enumerate().for_each(|(i, out)| {
            core.contract_right(this.psi(i, k), &prev[i * r..(i + 1) * r], out);
        });
        self.right[k] = next;
    }

    /// Design matrix of core `k` over points `range`, with an optional g column.
    fn design(&self, core: &Core, k: usize, rows: std::ops::Range<usize>, with_g: bool) -> DMatrix<f64> {
        let (l, _, r) = core.shape();
        let local = l * self.m * r;
        let cols = local + with_g as usize;
        let n = rows.len();
        let mut row_major = vec![0.0; n * cols];
        let start = rows.start;
        row_major.par_chunks_mut(cols).enumerate().for_each(|(i, out)| {
            let j = start + i;
            let mut buf = Vec::with_capacity(local);
            fill_local_basis(
                &self.left[k][j * l..(j + 1) * l],
                self.psi(j, k),
                &self.right[k + 1][j * r..(j + 1) * r],
                &mut buf,
            );
            out[..local].copy_from_slice(&buf);
            if with_g {
                out[local] = self.g[j];
            }
        });
        DMatrix::from_row_slice(n, cols, &row_major)
    }

    /// Function values at all points with the train positioned at core 0.
    fn predictions(&self, core0: &Core, c_g: f64) -> Vec<f64> {
        let r = core0.right_rank();
        (0..self.data.len())
            .into_par_iter()
            .map(|j| {
                core0.contract_both(&[1.0], self.psi(j, 0), &self.right[1][j * r..(j + 1) * r])
                    + c_g * self.g[j]
            })
            .collect()
    }
}

fn rms(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    (values.map(|v| v * v).sum::<f64>() / n as f64).sqrt()
}

struct LocalSolution {
    theta: DVector<f64>,
    pinv: bool,
}

/// Solves `(G + η I) θ = b` after Jacobi equilibration.
fn solve_regularized(gram: DMatrix<f64>, rhs: DVector<f64>, eta: f64) -> LocalSolution {
    let n = gram.nrows();
    let mut sys = gram;
    for i in 0..n {
        sys[(i, i)] += eta;
    }
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let v = sys[(i, i)];
            if v > 0.0 && v.is_finite() {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| sys[(i, j)] * scale[i] * scale[j]);
    let scaled_rhs = DVector::from_fn(n, |i, _| rhs[i] * scale[i]);

    if let Some(chol) = scaled.clone().cholesky() {
        let diag = chol.l_dirty().diagonal();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for &v in diag.iter() {
            lo = lo.min(v.abs());
            hi = hi.max(v.abs());
        }
        let cond = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
        if cond <= CONDITION_LIMIT {
            let y = chol.solve(&scaled_rhs);
            return LocalSolution {
                theta: DVector::from_fn(n, |i, _| y[i] * scale[i]),
                pinv: false,
            };
        }
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * n as f64 * f64::EPSILON * 16.0;
    let y = svd
        .solve(&scaled_rhs, eps)
        .unwrap_or_else(|_| DVector::zeros(n));
    LocalSolution {
        theta: DVector::from_fn(n, |i, _| y[i] * scale[i]),
        pinv: true,
    }
}

/// A train close to the constant function `1e-3`: the constant basis function
/// on the first slice of every core plus noise of relative size `1e-2`
/// elsewhere, and `c_g = 1` when a terminal condition is present. Used when no
/// informative warm start exists.
pub fn near_constant_start(template: &TTFunction, ranks: &RankTuple, seed: u64) -> Result<TTFunction> {
    let modes = template.tt().mode_sizes();
    let ranks = TensorTrain::feasible_ranks(&modes, ranks);
    let d = modes.len();
    let basis = template.basis();
    let (a, b) = basis.interval();
    let mut phi = vec![0.0; basis.len()];
    basis.values_into(0.5 * (a + b), &mut phi);
    let one = 1.0 / phi[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cores = Vec::with_capacity(d);
    for k in 0..d {
        let l = if k == 0 { 1 } else { ranks.as_slice()[k - 1] };
        let r = if k + 1 == d { 1 } else { ranks.as_slice()[k] };
        let m = modes[k];
        let lead = if k + 1 == d { 1e-3 * one } else { one };
        let mut data = Vec::with_capacity(l * m * r);
        for li in 0..l {
            for s in 0..m {
                for ri in 0..r {
                    let noise = 1e-2 * lead * rng.sample::<f64, _>(StandardNormal);
                    data.push(if li == 0 && s == 0 && ri == 0 { lead } else { noise });
                }
            }
        }
        cores.push(Core::new(l, m, r, data)?);
    }
    let c_g = if template.g().is_some() { 1.0 } else { 0.0 };
    template.with_tt(TensorTrain::new(cores)?, c_g)
}

/// Grows bond `bond` by one, filling the new slices with noise of relative size `rel_noise`.
pub fn grow_bond<R: Rng + ?Sized>(
    tt: &TensorTrain,
    bond: usize,
    rel_noise: f64,
    rng: &mut R,
) -> Result<TensorTrain> {
    if bond + 1 >= tt.dim() {
        return Err(Error::IndexOutOfRange {
            index: bond,
            len: tt.dim().saturating_sub(1),
        });
    }
    let mut cores = tt.cores().to_vec();
    let (l, m, r) = cores[bond].shape();
    let amp = rel_noise * cores[bond].norm().max(f64::MIN_POSITIVE);
    let mut data = Vec::with_capacity(l * m * (r + 1));
    for li in 0..l {
        for s in 0..m {
            for ri in 0..r {
                data.push(cores[bond].get(li, s, ri));
            }
            data.push(amp * rng.sample::<f64, _>(StandardNormal));
        }
    }
    cores[bond] = Core::new(l, m, r + 1, data)?;
    let (l2, m2, r2) = cores[bond + 1].shape();
    let amp2 = rel_noise * cores[bond + 1].norm().max(f64::MIN_POSITIVE);
    let mut data2 = cores[bond + 1].data().to_vec();
    data2.extend((0..m2 * r2).map(|_| amp2 * rng.sample::<f64, _>(StandardNormal)));
    cores[bond + 1] = Core::new(l2 + 1, m2, r2, data2)?;
    TensorTrain::new(cores)
}

/// Fits `init`'s ansatz to `data` at the ranks of `init`.
pub fn solve(data: &RegressionData, init: &TTFunction, cfg: &AlsConfig) -> Result<AlsOutcome> {
    cfg.validate()?;
    if data.dim() != init.dim() {
        return Err(Error::Shape {
            what: "data dimension vs function dimension",
            left: data.dim(),
            right: init.dim(),
        });
    }
    let d = init.dim();
    let (a, b) = init.basis().interval();
    let scale = (b - a).sqrt();
    let with_g = cfg.include_g && init.g().is_some();

    let modes = init.tt().mode_sizes();
    let feasible = TensorTrain::feasible_ranks(&modes, &init.tt().ranks());
    if feasible != init.tt().ranks() {
        return Err(Error::InvalidTensorTrain(format!(
            "ranks {:?} exceed what the mode sizes support ({:?})",
            init.tt().ranks().as_slice(),
            feasible.as_slice()
        )));
    }

    let mut tt = init.tt().scaled_per_core(&vec![1.0 / scale; d]);
    let mut c_g = init.c_g();
    tt.orthogonalize_in_place(0);

    let mut ws = Workspace::new(data, init, scale);
    for k in (1..d).rev() {
        ws.update_right(&tt.cores()[k], k);
    }
    let n_train = data.n_train();
    let targets = data.targets();

    let residuals = |pred: &[f64]| -> (f64, f64) {
        let train = rms((0..n_train).map(|j| pred[j] - targets[j]), n_train);
        let test = rms(
            (n_train..data.len()).map(|j| pred[j] - targets[j]),
            data.n_test(),
        );
        (train, test)
    };
    let (mut train_rms, mut test_rms) = residuals(&ws.predictions(&tt.cores()[0], c_g));
    let mut report = AlsReport {
        initial_train_rms: train_rms,
        ..Default::default()
    };

    let fixed_g_targets: Vec<f64> = if with_g {
        targets[..n_train].to_vec()
    } else {
        (0..n_train).map(|j| targets[j] - c_g * ws.g[j]).collect()
    };
    let rhs_vec = DVector::from_column_slice(&fixed_g_targets);

    for _sweep in 0..cfg.max_sweeps {
        let eta = cfg.reg_constant * train_rms;
        let mut trace = Vec::with_capacity(2 * d);
        let order: Vec<usize> = (0..d).chain((0..d.saturating_sub(1)).rev()).collect();
        for (step, &k) in order.iter().enumerate() {
            let forward = step < d;
            // Move the orthogonality center onto k.
            if step > 0 {
                if forward {
                    let prev = k - 1;
                    let rm = tt.cores_mut()[prev].left_orthonormalize();
                    tt.cores_mut()[k].absorb_left(&rm);
                    let core = tt.cores()[prev].clone();
                    ws.update_left(&core, prev);
                } else {
                    let prev = k + 1;
                    let rm = tt.cores_mut()[prev].right_orthonormalize();
                    tt.cores_mut()[k].absorb_right(&rm);
                    let core = tt.cores()[prev].clone();
                    ws.update_right(&core, prev);
                }
            }
            let core = &tt.cores()[k];
            let (l, m, r) = core.shape();
            let a_mat = ws.design(core, k, 0..n_train, with_g);
            let gram = a_mat.tr_mul(&a_mat);
            let rhs = a_mat.tr_mul(&rhs_vec);
            let sol = solve_regularized(gram, rhs, eta);
            if sol.pinv {
                report.pinv_fallbacks += 1;
            }
            let local = l * m * r;
            let new_core = Core::new(l, m, r, sol.theta.as_slice()[..local].to_vec())?;
            if with_g {
                c_g = sol.theta[local];
            }
            tt.cores_mut()[k] = new_core;

            let fit = &a_mat * &sol.theta;
            let data_term: f64 = fit
                .iter()
                .zip(fixed_g_targets.iter())
                .map(|(p, t)| (p - t) * (p - t))
                .sum();
            let penalty = eta * sol.theta.norm_squared();
            trace.push(data_term + penalty);
        }
        report.objective_trace.push(trace);
        report.sweeps += 1;

        let (new_train, new_test) = residuals(&ws.predictions(&tt.cores()[0], c_g));
        let rel = |new: f64, old: f64| {
            if old == 0.0 {
                if new == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (new - old).abs() / old
            }
        };
        let no_change = rel(new_train, train_rms) < cfg.no_change_tol
            || (data.n_test() > 0 && rel(new_test, test_rms) < cfg.no_change_tol);
        train_rms = new_train;
        test_rms = new_test;
        if no_change {
            report.converged = true;
            break;
        }
    }

    report.train_rms = train_rms;
    report.test_rms = test_rms;
    let tt = tt.scaled_per_core(&vec![scale; d]);
    report.ranks = tt.ranks().as_slice().to_vec();
    let function = init.with_tt(tt, c_g)?;
    Ok(AlsOutcome { function, report })
}

/// Greedy rank growth: after a converged solve, tries a one-sweep trial on each
/// bond that may still grow, keeps the bond with the largest training-residual
/// reduction, re-solves, and accepts the increment only if the test residual
/// improves by at least 2%.
pub fn adapt_ranks(f: &TTFunction, data: &RegressionData, cfg: &AlsConfig) -> Result<AlsOutcome> {
    let max = match &cfg.rank_policy {
        RankPolicy::Adaptive(max) => max.clone(),
        RankPolicy::Fixed(_) => {
            return Err(Error::config("rank_policy", "rank adaptation needs an adaptive policy"))
        }
    };
    let modes = f.tt().mode_sizes();
    let max = TensorTrain::feasible_ranks(&modes, &max);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0f_4a4e);
    let mut current = solve(data, f, cfg)?;
    let trial_cfg = AlsConfig {
        max_sweeps: 1,
        ..cfg.clone()
    };
    loop {
        let ranks = current.function.tt().ranks();
        let mut best: Option<(f64, TensorTrain)> = None;
        for bond in 0..ranks.len() {
            if ranks.as_slice()[bond] >= max.as_slice()[bond] {
                continue;
            }
            let grown = grow_bond(current.function.tt(), bond, 1e-6, &mut rng)?;
            let grown_ranks = TensorTrain::feasible_ranks(&modes, &grown.ranks());
            if grown_ranks != grown.ranks() {
                continue;
            }
            let candidate = current.function.with_tt(grown, current.function.c_g())?;
            let trial = solve(data, &candidate, &trial_cfg)?;
            if best.as_ref().is_none_or(|(rms, _)| trial.report.train_rms < *rms) {
                best = Some((trial.report.train_rms, candidate.tt().clone()));
            }
        }
        let Some((_, tt)) = best else { break };
        let candidate = current.function.with_tt(tt, current.function.c_g())?;
        let full = solve(data, &candidate, cfg)?;
        if full.report.test_rms <= 0.98 * current.report.test_rms {
            let pinv = current.report.pinv_fallbacks;
            current = full;
            current.report.pinv_fallbacks += pinv;
        } else {
            break;
        }
    }
    Ok(current)
}

/// Dispatches on the rank policy.
pub fn fit(data: &RegressionData, init: &TTFunction, cfg: &AlsConfig) -> Result<AlsOutcome> {
    match cfg.rank_policy {
        RankPolicy::Fixed(_) => solve(data, init, cfg),
        RankPolicy::Adaptive(_) => adapt_ranks(init, data, cfg),
    }
}
