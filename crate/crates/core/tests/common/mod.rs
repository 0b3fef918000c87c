#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use ttpde::als::{self, AlsConfig, RegressionData};
use ttpde::basis::BasisSet;
use ttpde::problems::{preset, Preset};
use ttpde::sde::pilot_interval;
use ttpde::tensor_train::{Core, RankTuple, TensorTrain};
use ttpde::tt_function::TTFunction;

/// Composite Simpson rule on `n` (even) panels.
pub fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Largest entry of `G - I` for the H² Gram matrix computed by quadrature.
pub fn gram_deviation(a: f64, b: f64, degree: usize) -> f64 {
    let basis = BasisSet::new(a, b, degree).unwrap();
    let m = basis.len();
    let mut worst: f64 = 0.0;
    for i in 0..m {
        for j in 0..=i {
            let g = simpson(a, b, 20_000, |x| {
                let e = basis.eval_all(x);
                e.values[i] * e.values[j] + e.d1[i] * e.d1[j] + e.d2[i] * e.d2[j]
            });
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).abs());
        }
    }
    worst
}

/// Basis interval a preset runs on, using the pilot rule when it has none.
pub fn preset_interval(p: &Preset) -> (f64, f64) {
    p.interval.unwrap_or_else(|| {
        pilot_interval(p.problem.clone(), p.n_steps, p.dt, 200, 7).unwrap()
    })
}

/// TT function with cores near a rank-channel identity plus noise, so that
/// values stay O(1) in high dimension.
pub fn perturbed_function(basis: Arc<BasisSet>, d: usize, rank: usize, with_g: Option<&Preset>, seed: u64) -> TTFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = basis.len();
    let ranks = TensorTrain::feasible_ranks(&vec![m; d], &RankTuple::uniform(d, rank).unwrap());
    let r = ranks.as_slice();
    let (a, b) = basis.interval();
    let lead = 1.0 / basis.eval_all(0.5 * (a + b)).values[0];
    let noise = 0.5 / (d as f64).sqrt();
    let cores = (0..d)
        .map(|k| {
            let l = if k == 0 { 1 } else { r[k - 1] };
            let rr = if k == d - 1 { 1 } else { r[k] };
            let mut data = vec![0.0; l * m * rr];
            for li in 0..l {
                for s in 0..m {
                    for ri in 0..rr {
                        let z: f64 = rng.sample(StandardNormal);
                        let base = if s == 0 && li == ri { lead } else { 0.0 };
                        data[(li * m + s) * rr + ri] = base + noise * lead * z;
                    }
                }
            }
            Core::new(l, m, rr, data).unwrap()
        })
        .collect();
    let tt = TensorTrain::new(cores).unwrap();
    match with_g {
        Some(p) => TTFunction::new(tt, basis, 0.7, Some(p.problem.terminal())).unwrap(),
        None => TTFunction::new(tt, basis, 0.0, None).unwrap(),
    }
}

fn relative(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / norm.max(1e-300)
}

/// Worst relative errors `(gradient, second order)` against central differences
/// over `n_points` random points of a preset: gradients against differences of
/// values, Hessian diagonals and the generator's second-order term against
/// differences of the analytic gradient.
pub fn derivative_errors(id: &str, n_points: usize, seed: u64) -> (f64, f64) {
    let p = preset(id).unwrap();
    let d = p.problem.dim();
    let (a, b) = preset_interval(&p);
    let basis = Arc::new(BasisSet::new(a, b, p.degree).unwrap());
    let f = perturbed_function(basis, d, 2, Some(&p), seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let (mut worst_g, mut worst_h): (f64, f64) = (0.0, 0.0);
    for _ in 0..n_points {
        let x: Vec<f64> = (0..d).map(|_| a + (b - a) * (0.1 + 0.8 * rng.random::<f64>())).collect();
        let grad = f.gradient(&x).unwrap();
        let h = 1e-5 * (b - a);
        let mut fd_grad = vec![0.0; d];
        let mut fd_diag = vec![0.0; d];
        let mut xp = x.clone();
        for i in 0..d {
            xp[i] = x[i] + h;
            let (vp, gp) = (f.evaluate(&xp), f.gradient(&xp).unwrap());
            xp[i] = x[i] - h;
            let (vm, gm) = (f.evaluate(&xp), f.gradient(&xp).unwrap());
            xp[i] = x[i];
            fd_grad[i] = (vp - vm) / (2.0 * h);
            fd_diag[i] = (gp[i] - gm[i]) / (2.0 * h);
        }
        worst_g = worst_g.max(relative(&grad, &fd_grad));
        worst_h = worst_h.max(relative(&f.hessian_diag(&x).unwrap(), &fd_diag));

        // ½ tr(σσᵀ∇²V) = ½ Σ_c (σ_c)ᵀ ∇²V σ_c over the columns σ_c of σ,
        // each term a difference of the gradient along σ_c.
        let sigma = p.problem.diffusion(&x, 0.0).to_matrix(d);
        let exact = p.problem.diffusion(&x, 0.0).second_order_term(&f, &x).unwrap();
        let mut fd = 0.0;
        for col in sigma.column_iter() {
            let c: Vec<f64> = col.iter().copied().collect();
            let scale = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            if scale == 0.0 {
                continue;
            }
            let step = h / scale;
            let plus: Vec<f64> = x.iter().zip(&c).map(|(xi, ci)| xi + step * ci).collect();
            let minus: Vec<f64> = x.iter().zip(&c).map(|(xi, ci)| xi - step * ci).collect();
            let (gp, gm) = (f.gradient(&plus).unwrap(), f.gradient(&minus).unwrap());
            fd += c.iter().zip(gp.iter().zip(&gm)).map(|(ci, (p, m))| ci * (p - m)).sum::<f64>() / (2.0 * step);
        }
        fd *= 0.5;
        worst_h = worst_h.max((exact - fd).abs() / fd.abs().max(1e-8));
    }
    (worst_g, worst_h)
}

/// Unregularized ALS at full ranks on `d = 3`, degree 1, against the normal
/// equations over all `m³` product basis functions. Returns the coefficient
/// tensor distance.
pub fn dense_oracle_distance(n_train: usize, seed: u64) -> f64 {
    let d = 3;
    let basis = Arc::new(BasisSet::new(-1.0, 1.0, 1).unwrap());
    let m = basis.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * n_train;
    let points: Vec<f64> = (0..n * d).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
    let targets: Vec<f64> = points
        .chunks(d)
        .map(|x| (x[0] + 0.5 * x[1]).sin() * (1.0 + x[2] * x[2]) + 0.1 * rng.sample::<f64, _>(StandardNormal))
        .collect();

    let mut design = DMatrix::zeros(n_train, m * m * m);
    for j in 0..n_train {
        let x = &points[j * d..(j + 1) * d];
        let e: Vec<_> = x.iter().map(|&v| basis.eval_all(v).values).collect();
        for i0 in 0..m {
            for i1 in 0..m {
                for i2 in 0..m {
                    design[(j, (i0 * m + i1) * m + i2)] = e[0][i0] * e[1][i1] * e[2][i2];
                }
            }
        }
    }
    let rhs = DVector::from_column_slice(&targets[..n_train]);
    let gram = design.tr_mul(&design);
    let dense = gram.cholesky().unwrap().solve(&design.tr_mul(&rhs));

    let data = RegressionData::with_split(points, d, targets, n_train).unwrap();
    let ranks = RankTuple::new(vec![2, 2]).unwrap();
    let init = perturbed_function(basis, d, 2, None, seed + 1);
    let mut cfg = AlsConfig::fixed(ranks);
    cfg.reg_constant = 0.0;
    cfg.include_g = false;
    cfg.max_sweeps = 50;
    cfg.no_change_tol = 1e-14;
    let out = als::solve(&data, &init, &cfg).unwrap();
    let coeffs = out.function.tt().densify().unwrap();
    coeffs
        .data()
        .iter()
        .zip(dense.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Discarded energy of a plain sequential SVD with rank caps `caps`.
pub fn sequential_tail_energy(full: &ttpde::tensor_train::DenseTensor, caps: &[usize]) -> f64 {
    let shape = full.shape().to_vec();
    let mut rest = full.data().to_vec();
    let mut cols = rest.len();
    let mut left = 1;
    let mut tail = 0.0;
    for (k, &cap) in caps.iter().enumerate() {
        let rows = left * shape[k];
        cols /= shape[k];
        let m = DMatrix::from_row_slice(rows, cols, &rest);
        let svd = m.svd(false, true);
        let s = svd.singular_values.as_slice().to_vec();
        let keep = cap.min(s.len()).max(1);
        tail += s[keep..].iter().map(|v| v * v).sum::<f64>();
        let vt = svd.v_t.unwrap();
        let mut next = Vec::with_capacity(keep * cols);
        for i in 0..keep {
            for j in 0..cols {
                next.push(s[i] * vt[(i, j)]);
            }
        }
        rest = next;
        left = keep;
    }
    tail
}
