use std::sync::Arc;

use nalgebra::DMatrix;

use super::{Diffusion, Pde};
use crate::error::Result;
use crate::tt_function::TerminalCondition;

/// `g(x) = x_1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct FirstCoordinate;

impl TerminalCondition for FirstCoordinate {
    fn value(&self, x: &[f64]) -> f64 {
        x[0]
    }

    fn gradient(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        out[0] = 1.0;
        Ok(())
    }

    fn hessian_diag(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        Ok(())
    }

    fn hessian_quad(&self, _x: &[f64], _v: &[f64]) -> Result<f64> {
        Ok(0.0)
    }

    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::zeros(x.len(), x.len()))
    }
}

/// The linear heat equation `∂_t V + Δ V / 2 = 0` with `V(x, T) = x_1`, whose
/// solution is `x_1` at all times.
#[derive(Clone, Debug)]
pub struct Heat {
    d: usize,
    horizon: f64,
}

impl Heat {
    pub fn new(d: usize, horizon: f64) -> Self {
        Self { d, horizon }
    }
}

impl Pde for Heat {
    fn name(&self) -> String {
        format!("heat (d = {})", self.d)
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
        Diffusion::Scalar(1.0)
    }

    fn nonlinearity(&self, _x: &[f64], _t: f64, _y: f64, _z: &[f64]) -> f64 {
        0.0
    }

    fn terminal(&self) -> Arc<dyn TerminalCondition> {
        Arc::new(FirstCoordinate)
    }

    fn is_drift_free(&self) -> bool {
        true
    }
}
