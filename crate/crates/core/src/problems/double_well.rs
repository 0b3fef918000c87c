use std::sync::Arc;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{Diffusion, Pde};
use crate::error::{Error, Result};
use crate::tt_function::TerminalCondition;

/// `g(x) = Σ ν_i (x_i - 1)²`.
#[derive(Clone, Debug)]
pub struct WeightedQuadratic {
    pub nu: Vec<f64>,
}

impl TerminalCondition for WeightedQuadratic {
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.nu).map(|(v, n)| n * (v - 1.0).powi(2)).sum()
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        for ((o, v), n) in out.iter_mut().zip(x).zip(&self.nu) {
            *o = 2.0 * n * (v - 1.0);
        }
        Ok(())
    }

    fn hessian_diag(&self, _x: &[f64], out: &mut [f64]) -> Result<()> {
        out.iter_mut().zip(&self.nu).for_each(|(o, n)| *o = 2.0 * n);
        Ok(())
    }

    fn hessian_quad(&self, _x: &[f64], v: &[f64]) -> Result<f64> {
        Ok(v.iter().zip(&self.nu).map(|(a, n)| 2.0 * n * a * a).sum())
    }

    fn hessian(&self, _x: &[f64]) -> Result<DMatrix<f64>> {
        let d = self.nu.len();
        Ok(DMatrix::from_fn(d, d, |i, j| if i == j { 2.0 * self.nu[i] } else { 0.0 }))
    }
}

/// HJB equation with drift `-∇Ψ`, `Ψ(x) = Σ_ij C_ij (x_i² - 1)(x_j² - 1)`.
#[derive(Clone, Debug)]
pub struct DoubleWell {
    c: DMatrix<f64>,
    /// `C + Cᵀ`, used by the drift.
    c_sym: DMatrix<f64>,
    nu: Vec<f64>,
    sigma: f64,
    horizon: f64,
    x0: Vec<f64>,
}

impl DoubleWell {
    pub fn new(c: DMatrix<f64>, nu: Vec<f64>, sigma: f64, horizon: f64, x0: Vec<f64>) -> Result<Self> {
        let d = nu.len();
        if c.nrows() != d || c.ncols() != d {
            return Err(Error::Shape {
                what: "interaction matrix size vs dimension",
                left: c.nrows(),
                right: d,
            });
        }
        if x0.len() != d {
            return Err(Error::Shape {
                what: "initial point length vs dimension",
                left: x0.len(),
                right: d,
            });
        }
        let c_sym = &c + c.transpose();
        Ok(Self {
            c,
            c_sym,
            nu,
            sigma,
            horizon,
            x0,
        })
    }

    /// `C = c I`.
    pub fn diagonal(d: usize, c: f64, nu: f64, horizon: f64) -> Self {
        Self::new(
            DMatrix::identity(d, d) * c,
            vec![nu; d],
            std::f64::consts::SQRT_2,
            horizon,
            vec![-1.0; d],
        )
        .expect("consistent sizes")
    }

    /// `C = I + ξ` with `ξ_ij ~ N(0, variance)` drawn from `seed`.
    pub fn interacting(d: usize, variance: f64, nu: f64, horizon: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
        let xi = DMatrix::from_fn(d, d, |_, _| normal.sample(&mut rng));
        Self::new(
            DMatrix::identity(d, d) + xi,
            vec![nu; d],
            std::f64::consts::SQRT_2,
            horizon,
            vec![-1.0; d],
        )
        .expect("consistent sizes")
    }

    pub fn interaction(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn is_diagonal(&self) -> bool {
        let d = self.nu.len();
        (0..d).all(|i| (0..d).all(|j| i == j || self.c[(i, j)] == 0.0))
    }

    pub fn potential(&self, x: &[f64]) -> f64 {
        let w: Vec<f64> = x.iter().map(|v| v * v - 1.0).collect();
        let d = x.len();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += self.c[(i, j)] * w[i] * w[j];
            }
        }
        s
    }

    /// `(∇Ψ)_k = 2 x_k Σ_j (C_kj + C_jk)(x_j² - 1)`.
    pub fn potential_gradient(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        let w: Vec<f64> = x.iter().map(|v| v * v - 1.0).collect();
        for k in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += self.c_sym[(k, j)] * w[j];
            }
            out[k] = 2.0 * x[k] * s;
        }
    }
}

impl Pde for DoubleWell {
    fn name(&self) -> String {
        format!("double well (d = {})", self.nu.len())
    }

    fn dim(&self) -> usize {
        self.nu.len()
    }

    fn horizon(&self) -> f64 {
        self.horizon
    }

    fn x0(&self) -> Vec<f64> {
        self.x0.clone()
    }

    fn drift(&self, x: &[f64], _t: f64, out: &mut [f64]) {
        self.potential_gradient(x, out);
        out.iter_mut().for_each(|o| *o = -*o);
    }

    fn diffusion(&self, _x: &[f64], _t: f64) -> Diffusion {
        Diffusion::Scalar(self.sigma)
    }

    fn nonlinearity(&self, _x: &[f64], _t: f64, _y: f64, z: &[f64]) -> f64 {
        -0.5 * z.iter().map(|v| v * v).sum::<f64>()
    }

    fn terminal(&self) -> Arc<dyn TerminalCondition> {
        Arc::new(WeightedQuadratic { nu: self.nu.clone() })
    }

    fn is_hjb(&self) -> bool {
        true
    }
}
