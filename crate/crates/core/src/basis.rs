//! One-dimensional polynomial ansatz functions, orthonormal in H²(a, b) with
//! the unit-weight inner product `∫ (f g + f' g' + f'' g'') dx`.
//!
//! Polynomials are stored in the mapped variable `t = (2x - a - b) / (b - a)`,
//! which keeps the monomial Gram matrix well conditioned on wide intervals.

use crate::error::{Error, Result};

/// Highest supported polynomial degree.
pub const MAX_DEGREE: usize = 12;
/// Maximum tolerated entry of `Gram - I` after orthonormalization.
pub const GRAM_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    a: f64,
    b: f64,
    degree: usize,
    /// Row `i` holds the coefficients of `φ_i` in the monomials `t^0..t^p`.
    coeffs: Vec<Vec<f64>>,
    center: f64,
    half_width: f64,
}

/// Values and derivatives of all basis functions at one point.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BasisEval {
    pub values: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
}

fn moment(n: i64) -> f64 {
    // ∫_{-1}^{1} t^n dt
    if n < 0 || n % 2 == 1 {
        0.0
    } else {
        2.0 / (n as f64 + 1.0)
    }
}

/// H² inner product of the monomials `t^i` and `t^j`, as functions of `x`.
fn monomial_inner(i: usize, j: usize, h: f64) -> f64 {
    let (i, j) = (i as i64, j as i64);
    let f = (i * j) as f64 / (h * h);
    let s = (i * (i - 1) * j * (j - 1)) as f64 / (h * h * h * h);
    let mut acc = moment(i + j);
    if f != 0.0 {
        acc += f * moment(i + j - 2);
    }
    if s != 0.0 {
        acc += s * moment(i + j - 4);
    }
    h * acc
}

impl BasisSet {
    pub fn new(a: f64, b: f64, degree: usize) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a >= b {
            return Err(Error::Domain(format!("basis interval requires a < b, got ({a}, {b})")));
        }
        if degree > MAX_DEGREE {
            return Err(Error::Domain(format!(
                "basis degree {degree} exceeds the supported maximum {MAX_DEGREE}"
            )));
        }
        let m = degree + 1;
        let h = 0.5 * (b - a);
        let gram: Vec<Vec<f64>> = (0..m)
            .map(|i| (0..m).map(|j| monomial_inner(i, j, h)).collect())
            .collect();
        let inner = |u: &[f64], v: &[f64]| -> f64 {
            let mut s = 0.0;
            for i in 0..m {
                if u[i] == 0.0 {
                    continue;
                }
                for j in 0..m {
                    s += u[i] * gram[i][j] * v[j];
                }
            }
            s
        };

        let mut coeffs: Vec<Vec<f64>> = Vec::with_capacity(m);
        for k in 0..m {
            let mut v = vec![0.0; m];
            v[k] = 1.0;
            for _pass in 0..2 {
                for q in &coeffs {
                    let proj = inner(&v, q);
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= proj * qi;
                    }
                }
            }
            let norm = inner(&v, &v).sqrt();
            if !(norm > 0.0) {
                return Err(Error::Conditioning {
                    worst: f64::INFINITY,
                    row: k,
                    col: k,
                });
            }
            v.iter_mut().for_each(|c| *c /= norm);
            coeffs.push(v);
        }

        let basis = Self {
            a,
            b,
            degree,
            coeffs,
            center: 0.5 * (a + b),
            half_width: h,
        };
        let (worst, row, col) = basis.gram_deviation_with(&inner);
        if worst > GRAM_TOL {
            return Err(Error::Conditioning { worst, row, col });
        }
        Ok(basis)
    }

    fn gram_deviation_with(&self, inner: &dyn Fn(&[f64], &[f64]) -> f64) -> (f64, usize, usize) {
        let mut worst = (0.0, 0, 0);
        for i in 0..self.len() {
            for j in 0..self.len() {
                let target = if i == j { 1.0 } else { 0.0 };
                let dev = (inner(&self.coeffs[i], &self.coeffs[j]) - target).abs();
                if dev > worst.0 {
                    worst = (dev, i, j);
                }
            }
        }
        worst
    }

    pub fn interval(&self) -> (f64, f64) {
        (self.a, self.b)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions `m = p + 1`.
    pub fn len(&self) -> usize {
        self.degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Lower-triangular coefficient matrix in the mapped monomials `t^k`.
    pub fn coeffs(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    fn mapped(&self, x: f64) -> f64 {
        (x - self.center) / self.half_width
    }

    /// Writes `φ_i(x)` into `out`.
    pub fn values_into(&self, x: f64, out: &mut [f64]) {
        let t = self.mapped(x);
        for (o, c) in out.iter_mut().zip(&self.coeffs) {
            *o = c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck);
        }
    }

    /// Writes values, first and second derivatives into the given slices.
    pub fn eval_into(&self, x: f64, values: &mut [f64], d1: &mut [f64], d2: &mut [f64]) {
        let t = self.mapped(x);
        let inv_h = 1.0 / self.half_width;
        for i in 0..self.len() {
            let c = &self.coeffs[i];
            let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
            for &ck in c.iter().rev() {
                ddp = ddp * t + 2.0 * dp;
                dp = dp * t + p;
                p = p * t + ck;
            }
            values[i] = p;
            d1[i] = dp * inv_h;
            d2[i] = ddp * inv_h * inv_h;
        }
    }

    pub fn eval_all(&self, x: f64) -> BasisEval {
        let m = self.len();
        let mut e = BasisEval {
            values: vec![0.0; m],
            d1: vec![0.0; m],
            d2: vec![0.0; m],
        };
        self.eval_into(x, &mut e.values, &mut e.d1, &mut e.d2);
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Composite Simpson quadrature of the H² Gram matrix.
    fn quadrature_gram(basis: &BasisSet, n: usize) -> Vec<Vec<f64>> {
        let (a, b) = basis.interval();
        let m = basis.len();
        let step = (b - a) / n as f64;
        let mut g = vec![vec![0.0; m]; m];
        for k in 0..=n {
            let w = if k == 0 || k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            } * step
                / 3.0;
            let e = basis.eval_all(a + k as f64 * step);
            for i in 0..m {
                for j in 0..m {
                    g[i][j] += w * (e.values[i] * e.values[j] + e.d1[i] * e.d1[j] + e.d2[i] * e.d2[j]);
                }
            }
        }
        g
    }

    fn assert_identity(g: &[Vec<f64>], tol: f64) {
        for (i, row) in g.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((v - target).abs() <= tol, "G[{i}][{j}] = {v}");
            }
        }
    }

    #[test]
    fn degree_zero_is_normalized_constant() {
        let basis = BasisSet::new(-1.0, 1.0, 0).unwrap();
        let e = basis.eval_all(0.3);
        assert!((e.values[0] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(e.d1, vec![0.0]);
        assert_eq!(e.d2, vec![0.0]);
    }

    #[test]
    fn gram_identity_by_quadrature() {
        for &(a, b) in &[(-6.0, 6.0), (-0.2, 6.0), (-3.0, 3.0), (-8.0, 2.0)] {
            let basis = BasisSet::new(a, b, 3).unwrap();
            assert_identity(&quadrature_gram(&basis, 20_000), 1e-8);
        }
    }

    #[test]
    fn invalid_interval_and_degree() {
        assert!(matches!(BasisSet::new(1.0, 1.0, 2), Err(Error::Domain(_))));
        assert!(matches!(BasisSet::new(2.0, 1.0, 2), Err(Error::Domain(_))));
        assert!(matches!(BasisSet::new(0.0, 1.0, 13), Err(Error::Domain(_))));
    }

    #[test]
    fn coefficients_are_lower_triangular() {
        let basis = BasisSet::new(-3.0, 3.0, 5).unwrap();
        for (i, row) in basis.coeffs().iter().enumerate() {
            assert!(row[i + 1..].iter().all(|&c| c == 0.0));
            assert!(row[i] != 0.0);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let basis = BasisSet::new(-8.0, 2.0, 7).unwrap();
        let h = 1e-4;
        for &x in &[-7.3, -2.0, 0.4, 1.9, 3.5] {
            let e = basis.eval_all(x);
            let p = basis.eval_all(x + h);
            let q = basis.eval_all(x - h);
            for i in 0..basis.len() {
                let fd1 = (p.values[i] - q.values[i]) / (2.0 * h);
                let fd2 = (p.values[i] - 2.0 * e.values[i] + q.values[i]) / (h * h);
                let s1 = e.d1[i].abs().max(1e-3 * e.values.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                assert!((fd1 - e.d1[i]).abs() <= 1e-6 * s1.max(1e-12) + 1e-10, "d1 {i} at {x}");
                let s2 = e.d2[i].abs().max(1e-3);
                assert!((fd2 - e.d2[i]).abs() <= 1e-5 * s2 + 1e-6, "d2 {i} at {x}");
            }
        }
    }

    #[test]
    fn spans_the_polynomials() {
        let basis = BasisSet::new(-0.2, 6.0, 4).unwrap();
        // Solve for the expansion of x^k by interpolation at m nodes, then check
        // the expansion elsewhere.
        let m = basis.len();
        let nodes: Vec<f64> = (0..m).map(|i| -0.2 + 6.2 * (i as f64 + 0.5) / m as f64).collect();
        let vander = nalgebra::DMatrix::from_fn(m, m, |r, c| basis.eval_all(nodes[r]).values[c]);
        let lu = vander.lu();
        for k in 0..m {
            let rhs = nalgebra::DVector::from_fn(m, |r, _| nodes[r].powi(k as i32));
            let coef = lu.solve(&rhs).unwrap();
            for &x in &[0.0, 1.3, 5.9] {
                let approx: f64 = basis.eval_all(x).values.iter().zip(coef.iter()).map(|(a, b)| a * b).sum();
                let exact = x.powi(k as i32);
                assert!((approx - exact).abs() <= 1e-8 * exact.abs().max(1.0));
            }
        }
    }

    #[test]
    fn construction_is_deterministic() {
        let a = BasisSet::new(-6.0, 6.0, 7).unwrap();
        let b = BasisSet::new(-6.0, 6.0, 7).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn up_to_max_degree_on_unit_interval() {
        for p in 0..=MAX_DEGREE {
            BasisSet::new(0.0, 1.0, p).unwrap();
        }
    }
}
