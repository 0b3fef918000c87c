use std::sync::Arc;

use nalgebra::DMatrix;

use super::{Diffusion, Pde};
use crate::error::Result;
use crate::tt_function::TerminalCondition;

/// `g(x) = log(1/2 + |x|²/2)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct LogQuadratic;

fn q(x: &[f64]) -> f64 {
    0.5 + 0.5 * x.iter().map(|v| v * v).sum::<f64>()
}

impl TerminalCondition for LogQuadratic {
    fn value(&self, x: &[f64]) -> f64 {
        q(x).ln()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let q = q(x);
        out.iter_mut().zip(x).for_each(|(o, v)| *o = v / q);
        Ok(())
    }

    fn hessian_diag(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let q = q(x);
        out.iter_mut()
            .zip(x)
            .for_each(|(o, v)| *o = 1.0 / q - v * v / (q * q));
        Ok(())
    }

    fn hessian_quad(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let q = q(x);
        let vv: f64 = v.iter().map(|a| a * a).sum();
        let xv: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
        Ok(vv / q - xv * xv / (q * q))
    }

    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let q = q(x);
        let d = x.len();
        Ok(DMatrix::from_fn(d, d, |i, j| {
            let id = if i == j { 1.0 / q } else { 0.0 };
            id - x[i] * x[j] / (q * q)
        }))
    }
}

/// `(∂_t + Δ) V - |∇V|² = 0`, i.e. `b = 0`, `σ = √2 I`, `h = -|z|²/2`.
#[derive(Clone, Debug)]
pub struct Hjb {
    d: usize,
    horizon: f64,
}

impl Hjb {
    pub fn new(d: usize, horizon: f64) -> Self {
        Self { d, horizon }
    }
}

impl Pde for Hjb {
    fn name(&self) -> String {
        format!("hjb (d = {})", self.d)
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn x0(&self) -> Vec<f64> {
        vec![0.0; self.d]
    }

    fn drift(&self, _x: &[f64], _t: f64, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }

    fn diffusion(&self, _x: &[f64], _t: f64) -> Diffusion {
        Diffusion::Scalar(std::f64::consts::SQRT_2)
    }

    fn nonlinearity(&self, _x: &[f64], _t: f64, _y: f64, z: &[f64]) -> f64 {
        -0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }

    fn terminal(&self) -> Arc<dyn TerminalCondition> {
        Arc::new(LogQuadratic)
    }

    fn is_hjb(&self) -> bool {
        true
    }

    fn is_drift_free(&self) -> bool {
        true
    }
}
