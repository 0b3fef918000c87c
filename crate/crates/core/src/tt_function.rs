//! The approximant `V̂(x) = Σ c[i_1..i_d] φ_{i_1}(x_1)..φ_{i_d}(x_d) + c_g g(x)`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::basis::BasisSet;
use crate::error::{Error, Result};
use crate::tensor_train::{RankTuple, TensorTrain};

/// A terminal condition `g` that can be added as an extra basis function.
///
/// Derivatives are optional; the defaults report a missing capability.
pub trait TerminalCondition: Send + Sync + fmt::Debug {
    fn value(&self, x: &[f64]) -> f64;

    fn gradient(&self, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::Capability(format!("{self:?} has no gradient")))
    }

    fn hessian_diag(&self, _x: &[f64], _out: &mut [f64]) -> Result<()> {
        Err(Error::Capability(format!("{self:?} has no second derivatives")))
    }

    /// `vᵀ ∇²g(x) v`.
    fn hessian_quad(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        let h = self.hessian(x)?;
        let v = nalgebra::DVector::from_column_slice(v);
        Ok(v.dot(&(h * &v)))
    }

    fn hessian(&self, _x: &[f64]) -> Result<DMatrix<f64>> {
        Err(Error::Capability(format!("{self:?} has no second derivatives")))
    }
}

/// Basis values and derivatives for every coordinate of one point, `d x m` row-major.
#[derive(Clone, Debug)]
pub struct PointBasis {
    pub m: usize,
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

impl PointBasis {
    pub fn new(basis: &BasisSet, x: &[f64]) -> Self {
        let m = basis.len();
        let d = x.len();
        let mut pb = Self {
            m,
            values: vec![0.0; d * m],
            d1: vec![0.0; d * m],
            d2: vec![0.0; d * m],
        };
        for (k, &xk) in x.iter().enumerate() {
            let r = k * m..(k + 1) * m;
            basis.eval_into(
                xk,
                &mut pb.values[r.clone()],
                &mut pb.d1[r.clone()],
                &mut pb.d2[r],
            );
        }
        pb
    }

    pub fn phi(&self, k: usize) -> &[f64] {
        &self.values[k * self.m..(k + 1) * self.m]
    }

    pub fn dphi(&self, k: usize) -> &[f64] {
        &self.d1[k * self.m..(k + 1) * self.m]
    }

    pub fn ddphi(&self, k: usize) -> &[f64] {
        &self.d2[k * self.m..(k + 1) * self.m]
    }
}

#[derive(Clone)]
pub struct TTFunction {
    tt: TensorTrain,
    basis: Arc<BasisSet>,
    c_g: f64,
    g: Option<Arc<dyn TerminalCondition>>,
}

impl fmt::Debug for TTFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TTFunction")
            .field("dim", &self.dim())
            .field("ranks", &self.tt.ranks())
            .field("basis", &self.basis.interval())
            .field("degree", &self.basis.degree())
            .field("c_g", &self.c_g)
            .field("g", &self.g)
            .finish()
    }
}

/// Left and right partial contractions of the TT part at one point.
struct Partials {
    /// `left[k]` contracts cores `0..k`; length `r_k`.
    left: Vec<Vec<f64>>,
    /// `right[k]` contracts cores `k..d`; length `r_{k-1}` (`right[d] = [1]`).
    right: Vec<Vec<f64>>,
}

impl TTFunction {
    pub fn new(
        tt: TensorTrain,
        basis: Arc<BasisSet>,
        c_g: f64,
        g: Option<Arc<dyn TerminalCondition>>,
    ) -> Result<Self> {
        if let Some(k) = tt.mode_sizes().iter().position(|&s| s != basis.len()) {
            return Err(Error::Shape {
                what: "core mode size vs number of basis functions",
                left: tt.mode_sizes()[k],
                right: basis.len(),
            });
        }
        if g.is_none() && c_g != 0.0 {
            return Err(Error::Capability(
                "nonzero terminal coefficient without a terminal condition".into(),
            ));
        }
        Ok(Self { tt, basis, c_g, g })
    }

    /// `V̂ = g`: a zero rank-one train plus the terminal term with coefficient 1.
    pub fn terminal(d: usize, basis: Arc<BasisSet>, g: Arc<dyn TerminalCondition>) -> Result<Self> {
        let tt = TensorTrain::zeros(&vec![basis.len(); d], &RankTuple::uniform(d, 1)?)?;
        Self::new(tt, basis, 1.0, Some(g))
    }

    pub fn dim(&self) -> usize {
        self.tt.dim()
    }

    pub fn tt(&self) -> &TensorTrain {
        &self.tt
    }

    pub fn basis(&self) -> &Arc<BasisSet> {
        &self.basis
    }

    pub fn c_g(&self) -> f64 {
        self.c_g
    }

    pub fn g(&self) -> Option<&Arc<dyn TerminalCondition>> {
        self.g.as_ref()
    }

    pub fn with_tt(&self, tt: TensorTrain, c_g: f64) -> Result<Self> {
        Self::new(tt, self.basis.clone(), c_g, self.g.clone())
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape {
                what: "point dimension vs function dimension",
                left: x.len(),
                right: self.dim(),
            });
        }
        Ok(())
    }

    fn g_active(&self) -> Option<&Arc<dyn TerminalCondition>> {
        if self.c_g != 0.0 {
            self.g.as_ref()
        } else {
            None
        }
    }

    fn partials(&self, pb: &PointBasis) -> Partials {
        let d = self.dim();
        let cores = self.tt.cores();
        let mut left = Vec::with_capacity(d + 1);
        left.push(vec![1.0]);
        for (k, core) in cores.iter().enumerate() {
            let mut next = vec![0.0; core.right_rank()];
            core.contract_left(&left[k], pb.phi(k), &mut next);
            left.push(next);
        }
        let mut right = vec![Vec::new(); d + 1];
        right[d] = vec![1.0];
        for k in (0..d).rev() {
            let core = &cores[k];
            let mut next = vec![0.0; core.left_rank()];
            core.contract_right(pb.phi(k), &right[k + 1], &mut next);
            right[k] = next;
        }
        Partials { left, right }
    }

    /// The TT part alone, evaluated from precomputed basis values.
    pub fn tt_value(&self, pb: &PointBasis) -> f64 {
        let mut v = vec![1.0];
        for (k, core) in self.tt.cores().iter().enumerate() {
            let mut next = vec![0.0; core.right_rank()];
            core.contract_left(&v, pb.phi(k), &mut next);
            v = next;
        }
        v[0]
    }

    pub fn evaluate(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let pb = PointBasis::new(&self.basis, x);
        let mut v = self.tt_value(&pb);
        if let Some(g) = self.g_active() {
            v += self.c_g * g.value(x);
        }
        v
    }

    /// Value and gradient in one forward/backward pass.
    pub fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check_point(x)?;
        let pb = PointBasis::new(&self.basis, x);
        let p = self.partials(&pb);
        for (k, core) in self.tt.cores().iter().enumerate() {
            grad[k] = core.contract_both(&p.left[k], pb.dphi(k), &p.right[k + 1]);
        }
        let mut v = p.left[self.dim()][0];
        if let Some(g) = self.g_active() {
            let mut gg = vec![0.0; x.len()];
            g.gradient(x, &mut gg)?;
            for (o, gi) in grad.iter_mut().zip(&gg) {
                *o += self.c_g * gi;
            }
            v += self.c_g * g.value(x);
        }
        Ok(v)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.dim()];
        self.value_and_gradient(x, &mut grad)?;
        Ok(grad)
    }

    /// Diagonal of the Hessian.
    pub fn hessian_diag(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_point(x)?;
        let pb = PointBasis::new(&self.basis, x);
        let p = self.partials(&pb);
        let mut out: Vec<f64> = self
            .tt
            .cores()
            .iter()
            .enumerate()
            .map(|(k, core)| core.contract_both(&p.left[k], pb.ddphi(k), &p.right[k + 1]))
            .collect();
        if let Some(g) = self.g_active() {
            let mut gd = vec![0.0; x.len()];
            g.hessian_diag(x, &mut gd)?;
            for (o, v) in out.iter_mut().zip(&gd) {
                *o += self.c_g * v;
            }
        }
        Ok(out)
    }

    pub fn laplacian(&self, x: &[f64]) -> Result<f64> {
        Ok(self.hessian_diag(x)?.iter().sum())
    }

    /// Full symmetric Hessian, `O(d² m r²)` per point.
    pub fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_point(x)?;
        let d = self.dim();
        let pb = PointBasis::new(&self.basis, x);
        let p = self.partials(&pb);
        let cores = self.tt.cores();
        let mut h = DMatrix::zeros(d, d);
        for i in 0..d {
            h[(i, i)] = cores[i].contract_both(&p.left[i], pb.ddphi(i), &p.right[i + 1]);
            let mut v = vec![0.0; cores[i].right_rank()];
            cores[i].contract_left(&p.left[i], pb.dphi(i), &mut v);
            for j in i + 1..d {
                let hij = cores[j].contract_both(&v, pb.dphi(j), &p.right[j + 1]);
                h[(i, j)] = hij;
                h[(j, i)] = hij;
                if j + 1 < d {
                    let mut next = vec![0.0; cores[j].right_rank()];
                    cores[j].contract_left(&v, pb.phi(j), &mut next);
                    v = next;
                }
            }
        }
        if let Some(g) = self.g_active() {
            h += g.hessian(x)? * self.c_g;
        }
        Ok(h)
    }

    /// `vᵀ ∇²V̂(x) v` via one forward pass carrying value, first and second
    /// directional derivatives of the partial contractions.
    pub fn directional_second(&self, x: &[f64], v: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        let pb = PointBasis::new(&self.basis, x);
        let m = pb.m;
        let (mut a, mut b, mut c) = (vec![1.0], vec![0.0], vec![0.0]);
        let mut w1 = vec![0.0; m];
        let mut w2 = vec![0.0; m];
        for (k, core) in self.tt.cores().iter().enumerate() {
            let r = core.right_rank();
            for s in 0..m {
                w1[s] = v[k] * pb.dphi(k)[s];
                w2[s] = v[k] * v[k] * pb.ddphi(k)[s];
            }
            let mut na = vec![0.0; r];
            let mut nb = vec![0.0; r];
            let mut nc = vec![0.0; r];
            let mut tmp = vec![0.0; r];
            core.contract_left(&a, pb.phi(k), &mut na);
            core.contract_left(&b, pb.phi(k), &mut nb);
            core.contract_left(&a, &w1, &mut tmp);
            nb.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
            core.contract_left(&c, pb.phi(k), &mut nc);
            core.contract_left(&b, &w1, &mut tmp);
            nc.iter_mut().zip(&tmp).for_each(|(o, t)| *o += 2.0 * t);
            core.contract_left(&a, &w2, &mut tmp);
            nc.iter_mut().zip(&tmp).for_each(|(o, t)| *o += t);
            a = na;
            b = nb;
            c = nc;
        }
        let mut out = c[0];
        if let Some(g) = self.g_active() {
            out += self.c_g * g.hessian_quad(x, v)?;
        }
        Ok(out)
    }

    /// Local basis of core `i`: entries `left[l] φ_s(x_i) right[r]` in the
    /// row-major order of the core, followed by `g(x)` when a terminal
    /// condition is attached.
    pub fn local_basis(&self, i: usize, x: &[f64]) -> Result<Vec<f64>> {
        if i >= self.dim() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.dim(),
            });
        }
        self.check_point(x)?;
        let pb = PointBasis::new(&self.basis, x);
        let p = self.partials(&pb);
        let mut out = Vec::with_capacity(self.tt.core(i).data().len() + 1);
        fill_local_basis(&p.left[i], pb.phi(i), &p.right[i + 1], &mut out);
        if let Some(g) = &self.g {
            out.push(g.value(x));
        }
        Ok(out)
    }
}

/// Appends the Kronecker product `left ⊗ phi ⊗ right` to `out`.
pub(crate) fn fill_local_basis(left: &[f64], phi: &[f64], right: &[f64], out: &mut Vec<f64>) {
    for &l in left {
        for &p in phi {
            let lp = l * p;
            out.extend(right.iter().map(|r| lp * r));
        }
    }
}
