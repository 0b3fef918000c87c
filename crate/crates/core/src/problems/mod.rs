//! Benchmark equations `(∂_t + L) V + h(x, t, V, σᵀ∇V) = 0`, `V(·, T) = g`,
//! with `L = ½ Σ (σσᵀ)_ij ∂_ij + Σ b_i ∂_i`, and their solver presets.

mod allen_cahn;
mod cir;
mod double_well;
mod heat;
mod hjb;
mod unbounded;

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::als::RankPolicy;
use crate::error::{Error, Result};
use crate::tensor_train::RankTuple;
use crate::tt_function::{TTFunction, TerminalCondition};

pub use allen_cahn::{AllenCahn, InverseQuadratic};
pub use cir::{Cir, Unit};
pub use double_well::{DoubleWell, WeightedQuadratic};
pub use heat::{FirstCoordinate, Heat};
pub use hjb::{Hjb, LogQuadratic};
pub use unbounded::{AnalyticJet, CosineRamp, Unbounded};

/// Seed for the random interaction matrix of the interacting double well.
pub const DOUBLE_WELL_SEED: u64 = 20_221_004;
/// Seed for the random CIR coefficients.
pub const CIR_SEED: u64 = 19_850_301;

/// Diffusion matrix `σ(x, t)` in one of several structured forms.
#[derive(Clone, Debug, PartialEq)]
pub enum Diffusion {
    /// `s I`.
    Scalar(f64),
    /// `diag(v)`.
    Diagonal(Vec<f64>),
    /// `u 1ᵀ / sqrt(d)`, so that `σσᵀ = u uᵀ`.
    RankOne(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl Diffusion {
    /// `out = σ ξ`.
    pub fn apply(&self, xi: &[f64], out: &mut [f64]) {
        match self {
            Diffusion::Scalar(s) => out.iter_mut().zip(xi).for_each(|(o, v)| *o = s * v),
            Diffusion::Diagonal(d) => {
                for ((o, v), s) in out.iter_mut().zip(xi).zip(d) {
                    *o = s * v;
                }
            }
            Diffusion::RankOne(u) => {
                let w = xi.iter().sum::<f64>() / (xi.len() as f64).sqrt();
                out.iter_mut().zip(u).for_each(|(o, ui)| *o = ui * w);
            }
            Diffusion::Dense(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..xi.len()).map(|j| m[(i, j)] * xi[j]).sum();
                }
            }
        }
    }

    /// `out = σᵀ v`.
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Diffusion::Scalar(_) | Diffusion::Diagonal(_) => self.apply(v, out),
            Diffusion::RankOne(u) => {
                let w = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (v.len() as f64).sqrt();
                out.iter_mut().for_each(|o| *o = w);
            }
            Diffusion::Dense(m) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = (0..v.len()).map(|i| m[(i, j)] * v[i]).sum();
                }
            }
        }
    }

    pub fn to_matrix(&self, d: usize) -> DMatrix<f64> {
        match self {
            Diffusion::Scalar(s) => DMatrix::identity(d, d) * *s,
            Diffusion::Diagonal(v) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(v)),
            Diffusion::RankOne(u) => {
                let scale = 1.0 / (d as f64).sqrt();
                DMatrix::from_fn(d, d, |i, _| u[i] * scale)
            }
            Diffusion::Dense(m) => m.clone(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Diffusion::Scalar(s) => s.is_finite(),
            Diffusion::Diagonal(v) | Diffusion::RankOne(v) => v.iter().all(|x| x.is_finite()),
            Diffusion::Dense(m) => m.iter().all(|x| x.is_finite()),
        }
    }

    /// `½ tr(σσᵀ ∇²f(x))`.
    pub fn second_order_term(&self, f: &TTFunction, x: &[f64]) -> Result<f64> {
        match self {
            Diffusion::Scalar(s) => Ok(0.5 * s * s * f.laplacian(x)?),
            Diffusion::Diagonal(v) => {
                let h = f.hessian_diag(x)?;
                Ok(0.5 * h.iter().zip(v).map(|(a, s)| a * s * s).sum::<f64>())
            }
            Diffusion::RankOne(u) => Ok(0.5 * f.directional_second(x, u)?),
            Diffusion::Dense(m) => {
                let mut acc = 0.0;
                for col in m.column_iter() {
                    let c: Vec<f64> = col.iter().copied().collect();
                    acc += f.directional_second(x, &c)?;
                }
                Ok(0.5 * acc)
            }
        }
    }
}

/// Coefficients of a parabolic equation on `ℝᵈ × [0, T]`.
pub trait Pde: Send + Sync + fmt::Debug {
    fn name(&self) -> String;
    fn dim(&self) -> usize;
    fn horizon(&self) -> f64;
    fn x0(&self) -> Vec<f64>;
    fn drift(&self, x: &[f64], t: f64, out: &mut [f64]);
    fn diffusion(&self, x: &[f64], t: f64) -> Diffusion;
    fn nonlinearity(&self, x: &[f64], t: f64, y: f64, z: &[f64]) -> f64;
    fn terminal(&self) -> Arc<dyn TerminalCondition>;

    /// Whether `h = -|z|²/2`, which admits the exponential transform reference.
    fn is_hjb(&self) -> bool {
        false
    }

    /// Whether `b ≡ 0` and `σ` is a constant multiple of the identity.
    fn is_drift_free(&self) -> bool {
        false
    }
}

pub type AnalyticFn = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

/// How reference values are obtained for a preset.
#[derive(Clone)]
pub enum ReferenceKind {
    None,
    /// Monte Carlo over the exponential transform.
    HopfColeMc,
    /// Product of one-dimensional finite-difference solutions.
    SeparableFd(Arc<DoubleWell>),
    Analytic(AnalyticFn),
    /// A literature value known only at `(x0, 0)`.
    Published(f64),
}

impl fmt::Debug for ReferenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceKind::None => write!(f, "None"),
            ReferenceKind::HopfColeMc => write!(f, "HopfColeMc"),
            ReferenceKind::SeparableFd(_) => write!(f, "SeparableFd"),
            ReferenceKind::Analytic(_) => write!(f, "Analytic"),
            ReferenceKind::Published(v) => write!(f, "Published({v})"),
        }
    }
}

impl ReferenceKind {
    pub fn label(&self) -> &'static str {
        match self {
            ReferenceKind::None => "none",
            ReferenceKind::HopfColeMc => "hopf-cole-mc",
            ReferenceKind::SeparableFd(_) => "separable-fd",
            ReferenceKind::Analytic(_) => "analytic",
            ReferenceKind::Published(_) => "published",
        }
    }
}

/// A problem together with the solver settings used to reproduce a benchmark.
#[derive(Clone, Debug)]
pub struct Preset {
    pub id: String,
    pub problem: Arc<dyn Pde>,
    pub dt: f64,
    pub n_steps: usize,
    pub n_paths: usize,
    pub degree: usize,
    /// `None` means the interval is derived from a pilot simulation.
    pub interval: Option<(f64, f64)>,
    pub rank_policy: RankPolicy,
    pub reference: ReferenceKind,
    /// Literature value of `V(x0, 0)`, when one exists.
    pub published_v0: Option<f64>,
}

fn parse_dim(id: &str, prefix: &str) -> Option<usize> {
    id.strip_prefix(prefix)?.parse().ok().filter(|&d| d > 0)
}

fn steps(horizon: f64, dt: f64) -> usize {
    (horizon / dt).round() as usize
}

/// Ids understood by [`preset`]; `{d}` stands for any positive dimension.
pub const PRESET_IDS: &[&str] = &[
    "hjb-d{d}",
    "double-well-diag-d{d}",
    "double-well-interacting-d{d}",
    "cir-d{d}",
    "unbounded-d{d}",
    "allen-cahn",
    "allen-cahn-d{d}",
    "heat-d{d}",
];

/// Looks up a preset by id, e.g. `hjb-d100`, `cir-d20` or `allen-cahn`.
pub fn preset(id: &str) -> Result<Preset> {
    let fixed = |d: usize, r: usize| RankPolicy::Fixed(RankTuple::uniform(d, r).expect("positive rank"));
    if let Some(d) = parse_dim(id, "hjb-d") {
        let problem = Arc::new(Hjb::new(d, 1.0));
        return Ok(Preset {
            id: id.to_string(),
            problem,
            dt: 0.01,
            n_steps: 100,
            n_paths: 2000,
            degree: 0,
            interval: Some((-6.0, 6.0)),
            rank_policy: fixed(d, 1),
            reference: ReferenceKind::HopfColeMc,
            published_v0: (d == 100).then_some(4.589992),
        });
    }
    if let Some(d) = parse_dim(id, "double-well-diag-d") {
        let problem = Arc::new(DoubleWell::diagonal(d, 0.1, 0.05, 0.5));
        return Ok(Preset {
            id: id.to_string(),
            problem: problem.clone(),
            dt: 0.01,
            n_steps: steps(0.5, 0.01),
            n_paths: 2000,
            degree: 3,
            interval: Some((-3.0, 3.0)),
            rank_policy: fixed(d, 2),
            reference: ReferenceKind::SeparableFd(problem),
            published_v0: None,
        });
    }
    if let Some(d) = parse_dim(id, "double-well-interacting-d") {
        let problem = Arc::new(DoubleWell::interacting(d, 0.1, 0.5, 0.3, DOUBLE_WELL_SEED));
        return Ok(Preset {
            id: id.to_string(),
            problem,
            dt: 0.01,
            n_steps: steps(0.3, 0.01),
            n_paths: 2000,
            degree: 7,
            interval: Some((-8.0, 2.0)),
            rank_policy: RankPolicy::Adaptive(RankTuple::uniform(d, 6).expect("positive rank")),
            reference: ReferenceKind::HopfColeMc,
            published_v0: None,
        });
    }
    if let Some(d) = parse_dim(id, "cir-d") {
        let problem = Arc::new(Cir::random(d, 1.0, CIR_SEED));
        return Ok(Preset {
            id: id.to_string(),
            problem,
            dt: 0.01,
            n_steps: 100,
            n_paths: 1000,
            degree: 3,
            interval: Some((-0.2, 6.0)),
            rank_policy: fixed(d, 1),
            reference: ReferenceKind::None,
            published_v0: None,
        });
    }
    if let Some(d) = parse_dim(id, "unbounded-d") {
        let problem = Arc::new(Unbounded::new(d, 1.0));
        let analytic = problem.clone();
        return Ok(Preset {
            id: id.to_string(),
            problem,
            dt: 0.001,
            n_steps: 1000,
            n_paths: 1000,
            degree: 6,
            interval: None,
            rank_policy: fixed(d, 1),
            reference: ReferenceKind::Analytic(Arc::new(move |x, t| analytic.solution(x, t))),
            published_v0: None,
        });
    }
    let allen_cahn_dim = if id == "allen-cahn" {
        Some(100)
    } else {
        parse_dim(id, "allen-cahn-d")
    };
    if let Some(d) = allen_cahn_dim {
        return Ok(Preset {
            id: id.to_string(),
            problem: Arc::new(AllenCahn::new(d, 0.3)),
            dt: 0.01,
            n_steps: steps(0.3, 0.01),
            n_paths: 1000,
            degree: 0,
            interval: None,
            rank_policy: fixed(d, 1),
            reference: if d == 100 {
                ReferenceKind::Published(0.052802)
            } else {
                ReferenceKind::None
            },
            published_v0: (d == 100).then_some(0.052802),
        });
    }
    if let Some(d) = parse_dim(id, "heat-d") {
        return Ok(Preset {
            id: id.to_string(),
            problem: Arc::new(Heat::new(d, 1.0)),
            dt: 0.05,
            n_steps: 20,
            n_paths: 500,
            degree: 1,
            interval: None,
            rank_policy: fixed(d, 1),
            reference: ReferenceKind::Analytic(Arc::new(|x, _| x[0])),
            published_v0: None,
        });
    }
    Err(Error::UnknownPreset(id.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fd_gradient(g: &dyn TerminalCondition, x: &[f64], h: f64) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mut p = x.to_vec();
                let mut m = x.to_vec();
                p[i] += h;
                m[i] -= h;
                (g.value(&p) - g.value(&m)) / (2.0 * h)
            })
            .collect()
    }

    fn check_terminal(g: &dyn TerminalCondition, x: &[f64]) {
        let mut grad = vec![0.0; x.len()];
        g.gradient(x, &mut grad).unwrap();
        let fd = fd_gradient(g, x, 1e-6);
        let scale = grad.iter().fold(1e-3f64, |m, v| m.max(v.abs()));
        for i in 0..x.len() {
            assert!((grad[i] - fd[i]).abs() <= 1e-6 * scale, "{g:?} grad {i}");
        }
        let hess = g.hessian(x).unwrap();
        let mut diag = vec![0.0; x.len()];
        g.hessian_diag(x, &mut diag).unwrap();
        let v: Vec<f64> = (0..x.len()).map(|i| 0.3 - 0.1 * i as f64).collect();
        let quad = g.hessian_quad(x, &v).unwrap();
        let mut expect_quad = 0.0;
        for i in 0..x.len() {
            assert!((hess[(i, i)] - diag[i]).abs() <= 1e-12 * hess.amax().max(1.0));
            for j in 0..x.len() {
                expect_quad += v[i] * hess[(i, j)] * v[j];
            }
            let h = 1e-5;
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[i] += h;
            m[i] -= h;
            let mut gp = vec![0.0; x.len()];
            let mut gm = vec![0.0; x.len()];
            g.gradient(&p, &mut gp).unwrap();
            g.gradient(&m, &mut gm).unwrap();
            for j in 0..x.len() {
                let fd2 = (gp[j] - gm[j]) / (2.0 * h);
                assert!((fd2 - hess[(i, j)]).abs() <= 1e-5 * hess.amax().max(1e-3), "{g:?} H[{i},{j}]");
            }
        }
        assert!((quad - expect_quad).abs() <= 1e-10 * expect_quad.abs().max(1.0));
    }

    #[test]
    fn terminal_derivatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.5..1.5)).collect();
            check_terminal(&LogQuadratic, &x);
            check_terminal(&InverseQuadratic, &x);
            check_terminal(&CosineRamp, &x);
            check_terminal(&WeightedQuadratic { nu: vec![0.5; 6] }, &x);
            check_terminal(&Unit, &x);
            check_terminal(&FirstCoordinate, &x);
        }
    }

    #[test]
    fn closed_form_values() {
        assert!((LogQuadratic.value(&[0.0; 100]) - 0.5f64.ln()).abs() < 1e-15);
        assert_eq!(InverseQuadratic.value(&[0.0; 100]), 0.5);
        let hjb = Hjb::new(3, 1.0);
        assert_eq!(hjb.nonlinearity(&[1.0; 3], 0.0, 2.0, &[0.0; 3]), 0.0);
    }

    #[test]
    fn double_well_minima_are_stationary() {
        let dw = DoubleWell::interacting(5, 0.1, 0.5, 0.3, DOUBLE_WELL_SEED);
        let mut out = vec![0.0; 5];
        for x in [[1.0; 5], [-1.0; 5], [1.0, -1.0, 1.0, -1.0, 1.0]] {
            dw.potential_gradient(&x, &mut out);
            assert!(out.iter().all(|v| v.abs() < 1e-14));
        }
    }

    #[test]
    fn potential_gradient_matches_finite_differences() {
        let dw = DoubleWell::interacting(4, 0.1, 0.5, 0.3, 7);
        let x = [0.3, -1.2, 0.8, 1.7];
        let mut grad = vec![0.0; 4];
        dw.potential_gradient(&x, &mut grad);
        for i in 0..4 {
            let h = 1e-6;
            let mut p = x;
            let mut m = x;
            p[i] += h;
            m[i] -= h;
            let fd = (dw.potential(&p) - dw.potential(&m)) / (2.0 * h);
            assert!((fd - grad[i]).abs() <= 1e-6 * grad[i].abs().max(1.0));
        }
    }

    #[test]
    fn pinned_coefficients_are_reproducible() {
        let a = DoubleWell::interacting(6, 0.1, 0.5, 0.3, DOUBLE_WELL_SEED);
        let b = DoubleWell::interacting(6, 0.1, 0.5, 0.3, DOUBLE_WELL_SEED);
        assert_eq!(a.interaction(), b.interaction());
        let c1 = Cir::random(10, 1.0, CIR_SEED);
        let c2 = Cir::random(10, 1.0, CIR_SEED);
        assert_eq!(c1.coefficients(), c2.coefficients());
    }

    #[test]
    fn cir_diffusion_reproduces_second_order_coefficients() {
        let cir = Cir::random(6, 1.0, CIR_SEED);
        let (_, _, gamma) = cir.coefficients();
        let x = [0.5, 1.5, 0.1, 2.0, 0.9, 3.0];
        let s = cir.diffusion(&x, 0.0).to_matrix(6);
        let sst = &s * s.transpose();
        for i in 0..6 {
            for j in 0..6 {
                let expected = (x[i] * x[j]).sqrt() * gamma[i] * gamma[j];
                assert!((sst[(i, j)] - expected).abs() < 1e-14);
            }
        }
        let mut out = vec![0.0; 6];
        let xi = [0.3, -0.2, 1.1, 0.0, -0.7, 0.4];
        cir.diffusion(&x, 0.0).apply(&xi, &mut out);
        let direct = &s * nalgebra::DVector::from_column_slice(&xi);
        for i in 0..6 {
            assert!((out[i] - direct[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn diffusion_transpose_matches_matrix() {
        let u = vec![0.2, 0.5, 1.0];
        let v = [1.0, -2.0, 0.5];
        for diff in [
            Diffusion::Scalar(1.5),
            Diffusion::Diagonal(u.clone()),
            Diffusion::RankOne(u.clone()),
            Diffusion::Dense(DMatrix::from_fn(3, 3, |i, j| (i * 3 + j) as f64)),
        ] {
            let m = diff.to_matrix(3);
            let mut out = [0.0; 3];
            diff.apply_transpose(&v, &mut out);
            let expect = m.transpose() * nalgebra::DVector::from_column_slice(&v);
            for i in 0..3 {
                assert!((out[i] - expect[i]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn unbounded_solution_satisfies_the_equation() {
        let p = Unbounded::new(10, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let x: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t = rng.random_range(0.0..1.0);
            let jet = p.solution_jet(&x, t);
            let z: Vec<f64> = jet.gradient.iter().map(|g| g / 10f64.sqrt()).collect();
            let residual = jet.time_derivative
                + jet.laplacian / 20.0
                + p.nonlinearity(&x, t, jet.value, &z);
            assert!(residual.abs() <= 1e-10, "{residual}");
        }
    }

    #[test]
    fn unbounded_jet_matches_finite_differences() {
        let p = Unbounded::new(3, 1.0);
        for x in [[0.2, -0.4, 0.1], [-0.3, -0.2, -0.1]] {
            let t = 0.4;
            let jet = p.solution_jet(&x, t);
            let h = 1e-4;
            let dt = (p.solution(&x, t + h) - p.solution(&x, t - h)) / (2.0 * h);
            assert!((dt - jet.time_derivative).abs() < 1e-8);
            let mut lap = 0.0;
            for i in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = (p.solution(&xp, t) - p.solution(&xm, t)) / (2.0 * h);
                assert!((fd - jet.gradient[i]).abs() < 1e-6);
                lap += (p.solution(&xp, t) - 2.0 * p.solution(&x, t) + p.solution(&xm, t)) / (h * h);
            }
            assert!((lap - jet.laplacian).abs() < 1e-4 * jet.laplacian.abs().max(1.0));
        }
        assert_eq!(p.solution(&[0.0; 3], 1.0), 1.0);
        let x = [0.7, -0.3, 0.2];
        assert!((p.solution(&x, 1.0) - CosineRamp.value(&x)).abs() < 1e-15);
    }

    #[test]
    fn registry() {
        for id in [
            "hjb-d100",
            "hjb-d1",
            "double-well-diag-d50",
            "double-well-interacting-d20",
            "cir-d100",
            "cir-d20",
            "unbounded-d10",
            "allen-cahn",
            "heat-d3",
        ] {
            let p = preset(id).unwrap();
            assert!((p.n_steps as f64 * p.dt - p.problem.horizon()).abs() < 1e-12, "{id}");
        }
        assert!(matches!(preset("nope"), Err(Error::UnknownPreset(_))));
        assert!(matches!(preset("hjb-d0"), Err(Error::UnknownPreset(_))));
    }
}
