use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Diffusion, Pde};
use crate::tt_function::TerminalCondition;

/// `g ≡ 1`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Unit;

impl TerminalCondition for Unit {
    fn value(&self, _x: &[f64]) -> f64 {
        1.0
    }

    fn gradient(&self, _x: &[f64], out: &mut [f64]) -> crate::Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        Ok(())
    }

    fn hessian_diag(&self, _x: &[f64], out: &mut [f64]) -> crate::Result<()> {
        out.iter_mut().for_each(|o| *o = 0.0);
        Ok(())
    }

    fn hessian_quad(&self, _x: &[f64], _v: &[f64]) -> crate::Result<f64> {
        Ok(0.0)
    }

    fn hessian(&self, x: &[f64]) -> crate::Result<nalgebra::DMatrix<f64>> {
        Ok(nalgebra::DMatrix::zeros(x.len(), x.len()))
    }
}

/// Bond price in a multidimensional Cox–Ingersoll–Ross model.
///
/// The second-order coefficient `γ_i γ_j sqrt(x_i x_j)` is the rank-one matrix
/// `u uᵀ` with `u_i = γ_i sqrt(max(x_i, 0))`; it is realized by `σ = u 1ᵀ / sqrt(d)`,
/// so all coordinates share one scalar Brownian driver.
#[derive(Clone, Debug)]
pub struct Cir {
    a: Vec<f64>,
    b: Vec<f64>,
    gamma: Vec<f64>,
    horizon: f64,
}

impl Cir {
    pub fn new(a: Vec<f64>, b: Vec<f64>, gamma: Vec<f64>, horizon: f64) -> Self {
        assert!(a.len() == b.len() && b.len() == gamma.len());
        Self { a, b, gamma, horizon }
    }

    /// `a_i, b_i, γ_i ~ U[0, 1]` from `seed`.
    pub fn random(d: usize, horizon: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || (0..d).map(|_| rng.random::<f64>()).collect::<Vec<_>>();
        let a = draw();
        let b = draw();
        let gamma = draw();
        Self::new(a, b, gamma, horizon)
    }

    pub fn coefficients(&self) -> (&[f64], &[f64], &[f64]) {
        (&self.a, &self.b, &self.gamma)
    }

    fn volatility(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.gamma)
            .map(|(v, g)| g * v.max(0.0).sqrt())
            .collect()
    }
}

impl Pde for Cir {
    fn name(&self) -> String {
        format!("cir (d = {})", self.a.len())
    }

    fn dim(&self) -> usize {
        self.a.len()
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn x0(&self) -> Vec<f64> {
        vec![1.0; self.a.len()]
    }

    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        for i in 0..x.len() {
            out[i] = self.a[i] * (self.b[i] - x[i]);
        }
    }

    fn diffusion(&self, x: &[f64], _t: f64) -> Diffusion {
        Diffusion::RankOne(self.volatility(x))
    }

    fn nonlinearity(&self, x: &[f64], _t: f64, y: f64, _z: &[f64]) -> f64 {
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        -max * y
    }

    fn terminal(&self) -> Arc<dyn TerminalCondition> {
        Arc::new(Unit)
    }
}
