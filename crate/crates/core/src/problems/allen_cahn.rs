use std::sync::Arc;

use nalgebra::DMatrix;

use super::{Diffusion, Pde};
use crate::error::Result;
use crate::tt_function::TerminalCondition;

/// `g(x) = 1 / (2 + 0.4 |x|²)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct InverseQuadratic;

fn p(x: &[f64]) -> f64 {
    2.0 + 0.4 * x.iter().map(|v| v * v).sum::<f64>()
}

impl TerminalCondition for InverseQuadratic {
    fn value(&self, x: &[f64]) -> f64 {
        1.0 / p(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let p = p(x);
        out.iter_mut()
            .zip(x)
            .for_each(|(o, v)| *o = -0.8 * v / (p * p));
        Ok(())
    }

    fn hessian_diag(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        let p = p(x);
        out.iter_mut()
            .zip(x)
            .for_each(|(o, v)| *o = -0.8 / (p * p) + 1.28 * v * v / (p * p * p));
        Ok(())
    }

    fn hessian_quad(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let p = p(x);
        let vv: f64 = v.iter().map(|a| a * a).sum();
        let xv: f64 = x.iter().zip(v).map(|(a, b)| a * b).sum();
        Ok(-0.8 * vv / (p * p) + 1.28 * xv * xv / (p * p * p))
    }

    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let p = p(x);
        let d = x.len();
        Ok(DMatrix::from_fn(d, d, |i, j| {
            let id = if i == j { -0.8 / (p * p) } else { 0.0 };
            id + 1.28 * x[i] * x[j] / (p * p * p)
        }))
    }
}

/// `(∂_t + Δ) V + V - V³ = 0`.
#[derive(Clone, Debug)]
pub struct AllenCahn {
    d: usize,
    horizon: f64,
}

impl AllenCahn {
    pub fn new(d: usize, horizon: f64) -> Self {
        Self { d, horizon }
    }
}

impl Pde for AllenCahn {
    fn name(&self) -> String {
        format!("allen-cahn (d = {})", self.d)
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

    fn nonlinearity(&self, _x: &[f64], _t: f64, y: f64, _z: &[f64]) -> f64 {
        y - y * y * y
    }

    fn terminal(&self) -> Arc<dyn TerminalCondition> {
        Arc::new(InverseQuadratic)
    }

    fn is_drift_free(&self) -> bool {
        true
    }
}
