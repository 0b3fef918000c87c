//! Tensor trains: a coefficient tensor `c[i_1, .., i_d]` stored as a chain of
//! order-3 cores `u_k[j_{k-1}, i_k, j_k]` with boundary ranks `r_0 = r_d = 1`.
//!
//! All cores are kept as order-3 arrays, including the boundary ones, so every
//! sweep runs through the same code path. Values are immutable from the outside:
//! operations such as [`TensorTrain::orthogonalize`] return new trains.
//!
//! Binary layout used for checkpoints (all little-endian):
//!
//! ```text
//! u64 d | u64 mode_size x d | u64 rank x (d - 1) | f64 core entries, core by core,
//!                                                  row-major in (left, mode, right)
//! ```

use std::cmp::Ordering;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Upper bound on the number of entries [`TensorTrain::densify`] will produce.
pub const DENSIFY_MAX_ENTRIES: usize = 10_000_000;
/// Upper bound on the order accepted by [`TensorTrain::densify`].
pub const DENSIFY_MAX_ORDER: usize = 12;

/// A dense row-major array of arbitrary order.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let size: usize = shape.iter().product();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Domain(format!("invalid dense shape {shape:?}")));
        }
        if size != data.len() {
            return Err(Error::Shape {
                what: "dense tensor data length",
                left: size,
                right: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let size = shape.iter().product();
        Self::new(shape, vec![0.0; size])
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        let mut t = Self::zeros(shape)?;
        let mut idx = vec![0usize; t.shape.len()];
        for flat in 0..t.data.len() {
            t.data[flat] = f(&idx);
            increment_index(&mut idx, &t.shape);
        }
        Ok(t)
    }

    pub fn random<R: Rng + ?Sized>(shape: Vec<usize>, rng: &mut R) -> Result<Self> {
        Self::from_fn(shape, |_| rng.sample(StandardNormal))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.flat_index(idx)]
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        idx.iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| alpha * v).collect(),
        }
    }
}

fn increment_index(idx: &mut [usize], shape: &[usize]) {
    for k in (0..idx.len()).rev() {
        idx[k] += 1;
        if idx[k] < shape[k] {
            return;
        }
        idx[k] = 0;
    }
}

/// Contracts the last index of `w1` with the first index of `w2`.
///
/// `w[i_1..i_{p-1}, k_2..k_q] = sum_j w1[i_1..i_{p-1}, j] * w2[j, k_2..k_q]`
pub fn contract(w1: &DenseTensor, w2: &DenseTensor) -> Result<DenseTensor> {
    let shared = *w1.shape.last().expect("non-empty shape");
    if shared != w2.shape[0] {
        return Err(Error::Shape {
            what: "contracted index (last of first operand vs first of second)",
            left: shared,
            right: w2.shape[0],
        });
    }
    let rows = w1.data.len() / shared;
    let cols = w2.data.len() / shared;
    let mut data = vec![0.0; rows * cols];
    for i in 0..rows {
        let a = &w1.data[i * shared..(i + 1) * shared];
        let out = &mut data[i * cols..(i + 1) * cols];
        for (j, &aij) in a.iter().enumerate() {
            if aij == 0.0 {
                continue;
            }
            let b = &w2.data[j * cols..(j + 1) * cols];
            for (o, &bv) in out.iter_mut().zip(b) {
                *o += aij * bv;
            }
        }
    }
    let mut shape: Vec<usize> = w1.shape[..w1.shape.len() - 1].to_vec();
    shape.extend_from_slice(&w2.shape[1..]);
    if shape.is_empty() {
        shape.push(1);
    }
    DenseTensor::new(shape, data)
}

/// Representation rank `(r_1, .., r_{d-1})` of a tensor train.
///
/// Ordered componentwise: `s <= t` iff `s_i <= t_i` for every bond.
#[derive(Clone, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct RankTuple(Vec<usize>);

impl RankTuple {
    pub fn new(ranks: Vec<usize>) -> Result<Self> {
        if ranks.contains(&0) {
            return Err(Error::Domain(format!("ranks must be positive, got {ranks:?}")));
        }
        Ok(Self(ranks))
    }

    /// `d - 1` copies of `r`.
    pub fn uniform(d: usize, r: usize) -> Result<Self> {
        Self::new(vec![r; d.saturating_sub(1)])
    }

    /// No cap on any bond.
    pub fn unbounded(d: usize) -> Self {
        Self(vec![usize::MAX; d.saturating_sub(1)])
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> usize {
        self.0.iter().copied().max().unwrap_or(1)
    }
}

impl PartialOrd for RankTuple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        if self.0.len() != other.0.len() {
            return None;
        }
        let le = self.0.iter().zip(&other.0).all(|(a, b)| a <= b);
        let ge = self.0.iter().zip(&other.0).all(|(a, b)| a >= b);
        match (le, ge) {
            (true, true) => Some(Ordering::Equal),
            (true, false) => Some(Ordering::Less),
            (false, true) => Some(Ordering::Greater),
            (false, false) => None,
        }
    }
}

/// An order-3 core of shape `(left, mode, right)`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Core {
    left: usize,
    mode: usize,
    right: usize,
    data: Vec<f64>,
}

impl Core {
    pub fn new(left: usize, mode: usize, right: usize, data: Vec<f64>) -> Result<Self> {
        if left == 0 || mode == 0 || right == 0 {
            return Err(Error::InvalidTensorTrain(format!(
                "core dimensions must be positive, got ({left}, {mode}, {right})"
            )));
        }
        if data.len() != left * mode * right {
            return Err(Error::Shape {
                what: "core data length",
                left: left * mode * right,
                right: data.len(),
            });
        }
        Ok(Self {
            left,
            mode,
            right,
            data,
        })
    }

    pub fn zeros(left: usize, mode: usize, right: usize) -> Self {
        Self {
            left,
            mode,
            right,
            data: vec![0.0; left * mode * right],
        }
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.left, self.mode, self.right)
    }

    pub fn left_rank(&self) -> usize {
        self.left
    }

    pub fn mode_size(&self) -> usize {
        self.mode
    }

    pub fn right_rank(&self) -> usize {
        self.right
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, l: usize, s: usize, r: usize) -> f64 {
        self.data[(l * self.mode + s) * self.right + r]
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// `(left * mode) x right` unfolding.
    pub fn left_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.left * self.mode, self.right, &self.data)
    }

    /// `left x (mode * right)` unfolding.
    pub fn right_unfolding(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.left, self.mode * self.right, &self.data)
    }

    fn from_left_unfolding(m: &DMatrix<f64>, left: usize, mode: usize) -> Self {
        let right = m.ncols();
        let mut data = Vec::with_capacity(left * mode * right);
        for row in 0..m.nrows() {
            for col in 0..right {
                data.push(m[(row, col)]);
            }
        }
        Self {
            left,
            mode,
            right,
            data,
        }
    }

    fn from_right_unfolding(m: &DMatrix<f64>, mode: usize, right: usize) -> Self {
        let left = m.nrows();
        let mut data = Vec::with_capacity(left * mode * right);
        for row in 0..left {
            for col in 0..mode * right {
                data.push(m[(row, col)]);
            }
        }
        Self {
            left,
            mode,
            right,
            data,
        }
    }

    /// Replaces the core by `Q` of a thin QR of its left unfolding, returning `R`.
    pub(crate) fn left_orthonormalize(&mut self) -> DMatrix<f64> {
        let qr = self.left_unfolding().qr();
        let q = qr.q();
        let r = qr.r();
        *self = Self::from_left_unfolding(&q, self.left, self.mode);
        r
    }

    /// Replaces the core by `Q^T` of a thin QR of its transposed right unfolding,
    /// returning the `left x k` factor `R^T` that must be absorbed on the left.
    pub(crate) fn right_orthonormalize(&mut self) -> DMatrix<f64> {
        let qr = self.right_unfolding().transpose().qr();
        let q = qr.q();
        let r = qr.r();
        *self = Self::from_right_unfolding(&q.transpose(), self.mode, self.right);
        r.transpose()
    }

    /// `self <- m * self` along the left bond.
    pub(crate) fn absorb_left(&mut self, m: &DMatrix<f64>) {
        debug_assert_eq!(m.ncols(), self.left);
        let product = m * self.right_unfolding();
        *self = Self::from_right_unfolding(&product, self.mode, self.right);
    }

    /// `self <- self * m` along the right bond.
    pub(crate) fn absorb_right(&mut self, m: &DMatrix<f64>) {
        debug_assert_eq!(m.nrows(), self.right);
        let product = self.left_unfolding() * m;
        *self = Self::from_left_unfolding(&product, self.left, self.mode);
    }

    /// `out[r] = Σ_{l,s} left[l] w[s] u[l, s, r]`.
    #[inline]
    pub fn contract_left(&self, left: &[f64], w: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (l, &lv) in left.iter().enumerate() {
            if lv == 0.0 {
                continue;
            }
            for (s, &ws) in w.iter().enumerate() {
                let f = lv * ws;
                let row = &self.data[(l * self.mode + s) * self.right..][..self.right];
                for (o, &u) in out.iter_mut().zip(row) {
                    *o += f * u;
                }
            }
        }
    }

    /// `out[l] = Σ_{s,r} u[l, s, r] w[s] right[r]`.
    #[inline]
    pub fn contract_right(&self, w: &[f64], right: &[f64], out: &mut [f64]) {
        for (l, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (s, &ws) in w.iter().enumerate() {
                let row = &self.data[(l * self.mode + s) * self.right..][..self.right];
                let dot: f64 = row.iter().zip(right).map(|(u, r)| u * r).sum();
                acc += ws * dot;
            }
            *o = acc;
        }
    }

    /// `Σ_{l,s,r} left[l] w[s] u[l, s, r] right[r]`.
    #[inline]
    pub fn contract_both(&self, left: &[f64], w: &[f64], right: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (l, &lv) in left.iter().enumerate() {
            if lv == 0.0 {
                continue;
            }
            for (s, &ws) in w.iter().enumerate() {
                let row = &self.data[(l * self.mode + s) * self.right..][..self.right];
                let dot: f64 = row.iter().zip(right).map(|(u, r)| u * r).sum();
                acc += lv * ws * dot;
            }
        }
        acc
    }

    fn to_dense(&self) -> DenseTensor {
        DenseTensor {
            shape: vec![self.left, self.mode, self.right],
            data: self.data.clone(),
        }
    }
}

/// A tensor train `c = u_1 ∘ u_2 ∘ .. ∘ u_d`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorTrain {
    cores: Vec<Core>,
}

impl TensorTrain {
    pub fn new(cores: Vec<Core>) -> Result<Self> {
        if cores.is_empty() {
            return Err(Error::InvalidTensorTrain("no cores".into()));
        }
        if cores[0].left != 1 {
            return Err(Error::InvalidTensorTrain(format!(
                "first core must have left rank 1, got {}",
                cores[0].left
            )));
        }
        if cores[cores.len() - 1].right != 1 {
            return Err(Error::InvalidTensorTrain(format!(
                "last core must have right rank 1, got {}",
                cores[cores.len() - 1].right
            )));
        }
        for (k, pair) in cores.windows(2).enumerate() {
            if pair[0].right != pair[1].left {
                return Err(Error::InvalidTensorTrain(format!(
                    "bond {k}: right rank {} of core {k} differs from left rank {} of core {}",
                    pair[0].right,
                    pair[1].left,
                    k + 1
                )));
            }
        }
        Ok(Self { cores })
    }

    /// Clamps requested bond dimensions to what the mode sizes can support.
    pub fn feasible_ranks(modes: &[usize], ranks: &RankTuple) -> RankTuple {
        let d = modes.len();
        let mut r: Vec<usize> = ranks.as_slice().to_vec();
        let mut left = 1usize;
        for k in 0..d.saturating_sub(1) {
            left = left.saturating_mul(modes[k]);
            r[k] = r[k].min(left);
            left = r[k];
        }
        let mut right = 1usize;
        for k in (0..d.saturating_sub(1)).rev() {
            right = right.saturating_mul(modes[k + 1]);
            r[k] = r[k].min(right);
            right = r[k];
        }
        RankTuple(r)
    }

    fn check_layout(modes: &[usize], ranks: &RankTuple) -> Result<()> {
        if modes.is_empty() || modes.contains(&0) {
            return Err(Error::InvalidTensorTrain(format!("invalid mode sizes {modes:?}")));
        }
        if ranks.len() + 1 != modes.len() {
            return Err(Error::Shape {
                what: "rank tuple length vs d - 1",
                left: ranks.len(),
                right: modes.len() - 1,
            });
        }
        Ok(())
    }

    fn bond(ranks: &RankTuple, k: usize, d: usize) -> (usize, usize) {
        let l = if k == 0 { 1 } else { ranks.0[k - 1] };
        let r = if k + 1 == d { 1 } else { ranks.0[k] };
        (l, r)
    }

    pub fn zeros(modes: &[usize], ranks: &RankTuple) -> Result<Self> {
        Self::check_layout(modes, ranks)?;
        let d = modes.len();
        let cores = (0..d)
            .map(|k| {
                let (l, r) = Self::bond(ranks, k, d);
                Core::zeros(l, modes[k], r)
            })
            .collect();
        Self::new(cores)
    }

    /// Cores with independent standard normal entries.
    pub fn random<R: Rng + ?Sized>(modes: &[usize], ranks: &RankTuple, rng: &mut R) -> Result<Self> {
        Self::check_layout(modes, ranks)?;
        let d = modes.len();
        let cores = (0..d)
            .map(|k| {
                let (l, r) = Self::bond(ranks, k, d);
                let data = (0..l * modes[k] * r)
                    .map(|_| rng.sample(StandardNormal))
                    .collect();
                Core::new(l, modes[k], r, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    /// Outer product of the given vectors (all ranks 1).
    pub fn rank_one(vectors: &[Vec<f64>]) -> Result<Self> {
        let cores = vectors
            .iter()
            .map(|v| Core::new(1, v.len(), 1, v.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(cores)
    }

    pub fn dim(&self) -> usize {
        self.cores.len()
    }

    pub fn mode_sizes(&self) -> Vec<usize> {
        self.cores.iter().map(|c| c.mode).collect()
    }

    pub fn ranks(&self) -> RankTuple {
        RankTuple(self.cores[..self.cores.len() - 1].iter().map(|c| c.right).collect())
    }

    pub fn core(&self, k: usize) -> &Core {
        &self.cores[k]
    }

    pub fn cores(&self) -> &[Core] {
        &self.cores
    }

    pub fn into_cores(self) -> Vec<Core> {
        self.cores
    }

    pub(crate) fn cores_mut(&mut self) -> &mut [Core] {
        &mut self.cores
    }

    /// Number of stored coefficients.
    pub fn n_params(&self) -> usize {
        self.cores.iter().map(|c| c.data.len()).sum()
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        if let Some(last) = out.cores.last_mut() {
            last.data.iter_mut().for_each(|v| *v *= alpha);
        }
        out
    }

    /// Multiplies core `k` by `factors[k]`.
    pub fn scaled_per_core(&self, factors: &[f64]) -> Self {
        let mut out = self.clone();
        for (core, &f) in out.cores.iter_mut().zip(factors) {
            core.data.iter_mut().for_each(|v| *v *= f);
        }
        out
    }

    /// Full coefficient tensor. Only available for small trains, as a test oracle.
    pub fn densify(&self) -> Result<DenseTensor> {
        let modes = self.mode_sizes();
        let size = modes.iter().try_fold(1usize, |acc, &m| acc.checked_mul(m));
        match size {
            Some(n) if self.dim() <= DENSIFY_MAX_ORDER && n <= DENSIFY_MAX_ENTRIES => {}
            _ => {
                return Err(Error::Domain(format!(
                    "refusing to densify a train of order {} with modes {modes:?}",
                    self.dim()
                )))
            }
        }
        let mut acc = self.cores[0].to_dense();
        for core in &self.cores[1..] {
            acc = contract(&acc, &core.to_dense())?;
        }
        // Drop the two boundary bonds of size 1.
        let shape = modes;
        DenseTensor::new(shape, acc.data)
    }

    /// Left-orthogonal cores before `position`, right-orthogonal cores after it.
    pub fn orthogonalize(&self, position: usize) -> Result<Self> {
        if position >= self.dim() {
            return Err(Error::IndexOutOfRange {
                index: position,
                len: self.dim(),
            });
        }
        let mut out = self.clone();
        out.orthogonalize_in_place(position);
        Ok(out)
    }

    pub(crate) fn orthogonalize_in_place(&mut self, position: usize) {
        for k in 0..position {
            let r = self.cores[k].left_orthonormalize();
            self.cores[k + 1].absorb_left(&r);
        }
        for k in (position + 1..self.dim()).rev() {
            let rt = self.cores[k].right_orthonormalize();
            self.cores[k - 1].absorb_right(&rt);
        }
    }

    /// Whether the left unfolding of core `k` has orthonormal columns.
    pub fn is_left_orthogonal(&self, k: usize, tol: f64) -> bool {
        let u = self.cores[k].left_unfolding();
        let gram = u.transpose() * &u;
        (gram - DMatrix::identity(u.ncols(), u.ncols())).amax() <= tol
    }

    /// Whether the right unfolding of core `k` has orthonormal rows.
    pub fn is_right_orthogonal(&self, k: usize, tol: f64) -> bool {
        let u = self.cores[k].right_unfolding();
        let gram = &u * u.transpose();
        (gram - DMatrix::identity(u.nrows(), u.nrows())).amax() <= tol
    }

    /// Euclidean norm of the coefficient tensor.
    pub fn frobenius_norm(&self) -> f64 {
        let mut tt = self.clone();
        let last = tt.dim() - 1;
        tt.orthogonalize_in_place(last);
        tt.cores[last].norm()
    }

    /// Inner product of the coefficient tensors, optionally weighting the transfer
    /// through core `k` by `weights[k]`.
    pub fn dot_weighted(&self, other: &Self, weights: Option<&[f64]>) -> Result<f64> {
        if self.mode_sizes() != other.mode_sizes() {
            return Err(Error::Shape {
                what: "mode sizes of inner-product operands",
                left: self.dim(),
                right: other.dim(),
            });
        }
        let mut env = DMatrix::from_element(1, 1, 1.0);
        for (k, (a, b)) in self.cores.iter().zip(&other.cores).enumerate() {
            let mut next = DMatrix::zeros(a.right, b.right);
            for s in 0..a.mode {
                let a_s = DMatrix::from_fn(a.left, a.right, |l, r| a.get(l, s, r));
                let b_s = DMatrix::from_fn(b.left, b.right, |l, r| b.get(l, s, r));
                next += a_s.transpose() * &env * b_s;
            }
            if let Some(w) = weights {
                next *= w[k];
            }
            env = next;
        }
        Ok(env[(0, 0)])
    }

    pub fn dot(&self, other: &Self) -> Result<f64> {
        self.dot_weighted(other, None)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for c in &self.cores {
            w.write_all(&(c.mode as u64).to_le_bytes())?;
        }
        for c in &self.cores[..self.dim() - 1] {
            w.write_all(&(c.right as u64).to_le_bytes())?;
        }
        for c in &self.cores {
            for v in &c.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        fn read_u64<R: Read>(r: &mut R) -> Result<usize> {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf)
                .map_err(|e| Error::Format(format!("truncated header: {e}")))?;
            usize::try_from(u64::from_le_bytes(buf))
                .map_err(|_| Error::Format("header value does not fit in usize".into()))
        }
        let d = read_u64(&mut r)?;
        if d == 0 || d > 1 << 20 {
            return Err(Error::Format(format!("implausible order {d}")));
        }
        let modes = (0..d).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        let ranks = (0..d - 1).map(|_| read_u64(&mut r)).collect::<Result<Vec<_>>>()?;
        let ranks = RankTuple::new(ranks).map_err(|e| Error::Format(e.to_string()))?;
        let mut tt = Self::zeros(&modes, &ranks).map_err(|e| Error::Format(e.to_string()))?;
        let mut buf = [0u8; 8];
        for core in &mut tt.cores {
            for v in &mut core.data {
                r.read_exact(&mut buf)
                    .map_err(|e| Error::Format(format!("truncated core data: {e}")))?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(tt)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

/// Sequential SVD decomposition of a dense tensor.
///
/// At every bond the singular values are truncated to at most `max_ranks[k]`
/// and, when `tol > 0`, to the smallest rank whose discarded energy stays below
/// `(tol / sqrt(d - 1) * ||full||)^2`, which bounds the total relative error by `tol`.
pub fn tt_svd(full: &DenseTensor, max_ranks: &RankTuple, tol: f64) -> Result<TensorTrain> {
    let d = full.order();
    if tol < 0.0 || !tol.is_finite() {
        return Err(Error::Domain(format!("truncation tolerance must be >= 0, got {tol}")));
    }
    if max_ranks.len() + 1 != d {
        return Err(Error::Shape {
            what: "rank tuple length vs d - 1",
            left: max_ranks.len(),
            right: d.saturating_sub(1),
        });
    }
    let modes = full.shape().to_vec();
    if d == 1 {
        return TensorTrain::new(vec![Core::new(1, modes[0], 1, full.data.clone())?]);
    }
    let threshold = if tol > 0.0 {
        tol / ((d - 1) as f64).sqrt() * full.frobenius_norm()
    } else {
        0.0
    };

    let mut cores = Vec::with_capacity(d);
    let mut left_rank = 1usize;
    // Remainder, row-major as (left_rank * modes[k]) x (rest).
    let mut rest: Vec<f64> = full.data.clone();
    let mut rest_cols = full.data.len();
    for k in 0..d - 1 {
        let rows = left_rank * modes[k];
        rest_cols /= modes[k];
        let mat = DMatrix::from_row_slice(rows, rest_cols, &rest);
        let svd = mat.svd(true, true);
        let u = svd.u.expect("requested U");
        let vt = svd.v_t.expect("requested V^T");
        // nalgebra returns singular values sorted in decreasing order.
        let sigma = svd.singular_values;
        let full_rank = sigma.len();
        let mut keep = full_rank.min(max_ranks.as_slice()[k]).max(1);
        if threshold > 0.0 {
            let mut tail = 0.0;
            let mut r = full_rank;
            while r > 1 {
                let next = tail + sigma[r - 1] * sigma[r - 1];
                if next > threshold * threshold {
                    break;
                }
                tail = next;
                r -= 1;
            }
            keep = keep.min(r);
        }
        let u_k = u.columns(0, keep).into_owned();
        cores.push(Core::from_left_unfolding(&u_k, left_rank, modes[k]));
        let mut sv = vt.rows(0, keep).into_owned();
        for (i, mut row) in sv.row_iter_mut().enumerate() {
            row *= sigma[i];
        }
        rest = (0..keep)
            .flat_map(|i| (0..rest_cols).map(move |j| (i, j)))
            .map(|(i, j)| sv[(i, j)])
            .collect();
        left_rank = keep;
    }
    cores.push(Core::new(left_rank, modes[d - 1], 1, rest)?);
    TensorTrain::new(cores)
}
