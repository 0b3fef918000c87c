use std::sync::Arc;

use nalgebra::DMatrix;

use super::{Diffusion, Pde};
use crate::error::Result;
use crate::tt_function::TerminalCondition;

/// `g(x) = cos(Σ i x_i)` with 1-based weights.
#[derive(Clone, Copy, Debug, Default)]
pub struct CosineRamp;

fn weighted_sum(x: &[f64]) -> f64 {
    x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).sum()
}

impl TerminalCondition for CosineRamp {
    fn value(&self, x: &[f64]) -> f64 {
        weighted_sum(x).cos()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let s = weighted_sum(x).sin();
        out.iter_mut()
            .enumerate()
            .for_each(|(i, o)| *o = -s * (i + 1) as f64);
        Ok(())
    }

    fn hessian_diag(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let c = weighted_sum(x).cos();
        out.iter_mut()
            .enumerate()
            .for_each(|(i, o)| *o = -c * ((i + 1) * (i + 1)) as f64);
        Ok(())
    }

    fn hessian_quad(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let wv = weighted_sum(v);
        Ok(-weighted_sum(x).cos() * wv * wv)
    }

    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let c = weighted_sum(x).cos();
        let d = x.len();
        Ok(DMatrix::from_fn(d, d, |i, j| -c * ((i + 1) * (j + 1)) as f64))
    }
}

fn psi(u: f64) -> (f64, f64, f64) {
    if u < 0.0 {
        (u.sin(), u.cos(), -u.sin())
    } else {
        (u, 1.0, 0.0)
    }
}

/// Equation with `b = 0`, `σ = I / sqrt(d)`, `g(x) = cos(Σ i x_i)` and
/// `h = k(x, t) + y Σ z_i / (2 sqrt(d)) + y² / 2`, where `k` is chosen so that
/// `V(x, t) = (T - t)/d Σ ψ(x_i) + cos(Σ i x_i)` solves it, `ψ(u) = sin u` for
/// `u < 0` and `u` otherwise.
#[derive(Clone, Debug)]
pub struct Unbounded {
    d: usize,
    horizon: f64,
}

/// Analytic solution and its derivatives at one point.
#[derive(Clone, Debug)]
pub struct AnalyticJet {
    pub value: f64,
    pub time_derivative: f64,
    pub gradient: Vec<f64>,
    pub laplacian: f64,
}

impl Unbounded {
    pub fn new(d: usize, horizon: f64) -> Self {
        Self { d, horizon }
    }

    pub fn solution(&self, x: &[f64], t: f64) -> f64 {
        let tau = (self.horizon - t) / self.d as f64;
        tau * x.iter().map(|&u| psi(u).0).sum::<f64>() + weighted_sum(x).cos()
    }

    pub fn solution_jet(&self, x: &[f64], t: f64) -> AnalyticJet {
        let d = self.d as f64;
        let tau = (self.horizon - t) / d;
        let s = weighted_sum(x);
        let (sin_s, cos_s) = s.sin_cos();
        let mut sum_psi = 0.0;
        let mut laplacian = 0.0;
        let mut gradient = Vec::with_capacity(self.d);
        for (i, &u) in x.iter().enumerate() {
            let w = (i + 1) as f64;
            let (p, dp, ddp) = psi(u);
            sum_psi += p;
            gradient.push(tau * dp - sin_s * w);
            laplacian += tau * ddp - cos_s * w * w;
        }
        AnalyticJet {
            value: tau * sum_psi + cos_s,
            time_derivative: -sum_psi / d,
            gradient,
            laplacian,
        }
    }

    /// Source term `k(x, t) = -∂_t V - ΔV / (2d) - V Σ ∂_i V / (2d) - V² / 2`.
    pub fn source(&self, x: &[f64], t: f64) -> f64 {
        let jet = self.solution_jet(x, t);
        let d = self.d as f64;
        let grad_sum: f64 = jet.gradient.iter().sum();
        -jet.time_derivative - jet.laplacian / (2.0 * d) - jet.value * grad_sum / (2.0 * d)
            - 0.5 * jet.value * jet.value
    }
}

impl Pde for Unbounded {
    fn name(&self) -> String {
        format!("unbounded (d = {})", self.d)
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn x0(&self) -> Vec<f64> {
        vec![0.5; self.d]
    }

    fn drift(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }

    fn diffusion(&self, _x: &[f64], _t: f64) -> Diffusion {
        Diffusion::Scalar(1.0 / (self.d as f64).sqrt())
    }

    fn nonlinearity(&self, x: &[f64], t: f64, y: f64, z: &[f64]) -> f64 {
        let d = self.d as f64;
        self.source(x, t) + y * z.iter().sum::<f64>() / (2.0 * d.sqrt()) + 0.5 * y * y
    }

    fn terminal(&self) -> Arc<dyn TerminalCondition> {
        Arc::new(CosineRamp)
    }

    fn is_drift_free(&self) -> bool {
        true
    }
}
