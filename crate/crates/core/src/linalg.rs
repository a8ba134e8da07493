//! Dense and iterative linear algebra shared by the assembly and spectral code.
//!
//! Blocks of vectors are stored row-major with split real and imaginary parts
//! so that tall-skinny products run through real `dgemm` kernels.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;

    fn apply(&self, x: &[C64], y: &mut [C64]);

    fn apply_block(&self, x: &Block, y: &mut Block) {
        let mut col_in = vec![C64::new(0.0, 0.0); self.dim()];
        let mut col_out = vec![C64::new(0.0, 0.0); self.dim()];
        for j in 0..x.cols() {
            x.column_into(j, &mut col_in);
            self.apply(&col_in, &mut col_out);
            y.set_column(j, &col_out);
        }
    }

    /// Real part of the diagonal, when cheaply available.
    fn diagonal(&self) -> Option<Vec<f64>> {
        None
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        (**self).apply(x, y)
    }
    fn apply_block(&self, x: &Block, y: &mut Block) {
        (**self).apply_block(x, y)
    }
    fn diagonal(&self) -> Option<Vec<f64>> {
        (**self).diagonal()
    }
}

pub fn dot(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

/// `y += a x`.
pub fn axpy(a: C64, x: &[C64], y: &mut [C64]) {
    y.iter_mut().zip(x).for_each(|(yi, xi)| *yi += a * xi);
}

/// Row-major `rows × cols` block of complex vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    rows: usize,
    cols: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Block {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, re: vec![0.0; rows * cols], im: vec![0.0; rows * cols] }
    }

    pub fn random(rows: usize, cols: usize, rng: &mut impl Rng) -> Self {
        let mut b = Self::zeros(rows, cols);
        b.re.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        b.im.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        b
    }

    pub fn from_columns(cols: &[Vec<C64>]) -> Self {
        let rows = cols.first().map_or(0, |c| c.len());
        let mut b = Self::zeros(rows, cols.len());
        for (j, c) in cols.iter().enumerate() {
            b.set_column(j, c);
        }
        b
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn re(&self) -> &[f64] {
        &self.re
    }

    pub fn im(&self) -> &[f64] {
        &self.im
    }

    pub fn parts_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.re, &mut self.im)
    }

    pub fn get(&self, r: usize, c: usize) -> C64 {
        C64::new(self.re[r * self.cols + c], self.im[r * self.cols + c])
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        let mut v = vec![C64::new(0.0, 0.0); self.rows];
        self.column_into(j, &mut v);
        v
    }

    pub fn column_into(&self, j: usize, out: &mut [C64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = C64::new(self.re[r * self.cols + j], self.im[r * self.cols + j]);
        }
    }

    pub fn set_column(&mut self, j: usize, v: &[C64]) {
        for (r, x) in v.iter().enumerate() {
            self.re[r * self.cols + j] = x.re;
            self.im[r * self.cols + j] = x.im;
        }
    }

    pub fn columns(&self) -> Vec<Vec<C64>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    /// Keeps the listed columns in order.
    pub fn select_columns(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(self.rows, idx.len());
        for r in 0..self.rows {
            for (k, &j) in idx.iter().enumerate() {
                out.re[r * idx.len() + k] = self.re[r * self.cols + j];
                out.im[r * idx.len() + k] = self.im[r * self.cols + j];
            }
        }
        out
    }

    /// Horizontal concatenation.
    pub fn hcat(blocks: &[&Block]) -> Self {
        let rows = blocks.first().map_or(0, |b| b.rows);
        let cols: usize = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for b in blocks {
                assert_eq!(b.rows, rows);
                out.re[r * cols + off..r * cols + off + b.cols].copy_from_slice(&b.re[r * b.cols..(r + 1) * b.cols]);
                out.im[r * cols + off..r * cols + off + b.cols].copy_from_slice(&b.im[r * b.cols..(r + 1) * b.cols]);
                off += b.cols;
            }
        }
        out
    }

    /// Scatters rows into a larger block at the given row indices.
    pub fn scatter_rows(&self, rows: usize, idx: &[usize]) -> Self {
        let mut out = Self::zeros(rows, self.cols);
        for (k, &r) in idx.iter().enumerate() {
            out.re[r * self.cols..(r + 1) * self.cols].copy_from_slice(&self.re[k * self.cols..(k + 1) * self.cols]);
            out.im[r * self.cols..(r + 1) * self.cols].copy_from_slice(&self.im[k * self.cols..(k + 1) * self.cols]);
        }
        out
    }

    /// `selfᴴ · other` as a small dense matrix.
    pub fn gram(&self, other: &Block) -> DMatrix<C64> {
        assert_eq!(self.rows, other.rows);
        let (p, q, n) = (self.cols, other.cols, self.rows);
        let mut gr = vec![0.0; p * q];
        let mut gi = vec![0.0; p * q];
        // Gr = XrᵀYr + XiᵀYi, Gi = XrᵀYi − XiᵀYr
        dgemm_tn(p, n, q, 1.0, &self.re, &other.re, 0.0, &mut gr);
        dgemm_tn(p, n, q, 1.0, &self.im, &other.im, 1.0, &mut gr);
        dgemm_tn(p, n, q, 1.0, &self.re, &other.im, 0.0, &mut gi);
        dgemm_tn(p, n, q, -1.0, &self.im, &other.re, 1.0, &mut gi);
        DMatrix::from_fn(p, q, |a, b| C64::new(gr[a * q + b], gi[a * q + b]))
    }

    /// `self · q` for a small dense matrix `q`.
    pub fn mul_dense(&self, q: &DMatrix<C64>) -> Block {
        assert_eq!(self.cols, q.nrows());
        let (n, p, m) = (self.rows, self.cols, q.ncols());
        let qr: Vec<f64> = (0..p * m).map(|i| q[(i / m, i % m)].re).collect();
        let qi: Vec<f64> = (0..p * m).map(|i| q[(i / m, i % m)].im).collect();
        let mut out = Block::zeros(n, m);
        dgemm_nn(n, p, m, 1.0, &self.re, &qr, 0.0, &mut out.re);
        dgemm_nn(n, p, m, -1.0, &self.im, &qi, 1.0, &mut out.re);
        dgemm_nn(n, p, m, 1.0, &self.re, &qi, 0.0, &mut out.im);
        dgemm_nn(n, p, m, 1.0, &self.im, &qr, 1.0, &mut out.im);
        out
    }

    /// `self − other · diag(d)`.
    pub fn sub_scaled_columns(&self, other: &Block, d: &[f64]) -> Block {
        let mut out = self.clone();
        let c = self.cols;
        out.re
            .par_chunks_mut(c)
            .zip(out.im.par_chunks_mut(c))
            .enumerate()
            .for_each(|(r, (or, oi))| {
                for j in 0..c {
                    or[j] -= other.re[r * c + j] * d[j];
                    oi[j] -= other.im[r * c + j] * d[j];
                }
            });
        out
    }

    /// `a·self + b·other` in place.
    pub fn combine(&mut self, a: f64, other: &Block, b: f64) {
        self.re.iter_mut().zip(&other.re).for_each(|(x, y)| *x = a * *x + b * y);
        self.im.iter_mut().zip(&other.im).for_each(|(x, y)| *x = a * *x + b * y);
    }

    /// `diag(selfᴴ other)`.
    pub fn column_dots(&self, other: &Block) -> Vec<C64> {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let c = self.cols;
        let mut acc = vec![C64::new(0.0, 0.0); c];
        for r in 0..self.rows {
            let o = r * c;
            for (j, a) in acc.iter_mut().enumerate() {
                let (xr, xi) = (self.re[o + j], self.im[o + j]);
                let (yr, yi) = (other.re[o + j], other.im[o + j]);
                *a += C64::new(xr * yr + xi * yi, xr * yi - xi * yr);
            }
        }
        acc
    }

    /// `self += other · diag(coeffs)`.
    pub fn add_scaled_columns(&mut self, other: &Block, coeffs: &[C64]) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let c = self.cols;
        for r in 0..self.rows {
            let o = r * c;
            for (j, k) in coeffs.iter().enumerate() {
                let (yr, yi) = (other.re[o + j], other.im[o + j]);
                self.re[o + j] += k.re * yr - k.im * yi;
                self.im[o + j] += k.re * yi + k.im * yr;
            }
        }
    }

    /// `self ← self · diag(d)`.
    pub fn scale_columns(&mut self, d: &[f64]) {
        let c = self.cols;
        for r in 0..self.rows {
            for (j, s) in d.iter().enumerate() {
                self.re[r * c + j] *= s;
                self.im[r * c + j] *= s;
            }
        }
    }

    /// `self ← diag(d) · self`.
    pub fn scale_rows(&mut self, d: &[f64]) {
        let c = self.cols;
        for (r, s) in d.iter().enumerate() {
            self.re[r * c..(r + 1) * c].iter_mut().for_each(|v| *v *= s);
            self.im[r * c..(r + 1) * c].iter_mut().for_each(|v| *v *= s);
        }
    }

    pub fn column_norms(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (j, a) in acc.iter_mut().enumerate() {
                let (x, y) = (self.re[r * self.cols + j], self.im[r * self.cols + j]);
                *a += x * x + y * y;
            }
        }
        acc.into_iter().map(f64::sqrt).collect()
    }
}

#[allow(clippy::too_many_arguments)]
fn dgemm_tn(p: usize, n: usize, q: usize, alpha: f64, x: &[f64], y: &[f64], beta: f64, c: &mut [f64]) {
    // c (p×q) = alpha · xᵀ y + beta · c, with x n×p and y n×q row-major
    unsafe {
        matrixmultiply::dgemm(
            p, n, q, alpha,
            x.as_ptr(), 1, p as isize,
            y.as_ptr(), q as isize, 1,
            beta,
            c.as_mut_ptr(), q as isize, 1,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn dgemm_nn(n: usize, p: usize, m: usize, alpha: f64, x: &[f64], q: &[f64], beta: f64, c: &mut [f64]) {
    // c (n×m) = alpha · x q + beta · c, with x n×p and q p×m row-major
    unsafe {
        matrixmultiply::dgemm(
            n, p, m, alpha,
            x.as_ptr(), p as isize, 1,
            q.as_ptr(), m as isize, 1,
            beta,
            c.as_mut_ptr(), m as isize, 1,
        );
    }
}

/// Eigen-decomposition of a small Hermitian matrix, ascending.
pub fn hermitian_eigen(h: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let sym = (h + h.adjoint()).scale(0.5);
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(h.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

/// Solves `A y = λ B y` for Hermitian `A` and positive definite `B`, ascending.
pub fn generalized_hermitian_eigen(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<(Vec<f64>, DMatrix<C64>)> {
    let bs = (b + b.adjoint()).scale(0.5);
    let chol = nalgebra::Cholesky::new(bs)
        .ok_or_else(|| Error::InvalidParameter("generalized eigenproblem: B is not positive definite".into()))?;
    let l = chol.l();
    let linv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("generalized eigenproblem: singular factor".into()))?;
    let c = &linv * a * linv.adjoint();
    let (vals, vecs) = hermitian_eigen(&c);
    Ok((vals, linv.adjoint() * vecs))
}

/// Orthonormalizes the columns of `x` by two rounds of eigenvalue-based
/// Gram–Schmidt, dropping directions whose Gram eigenvalue falls below
/// `drop_tol` times the largest one.
pub fn orthonormalize(x: &Block, drop_tol: f64) -> Block {
    let mut y = x.clone();
    for _ in 0..2 {
        let g = y.gram(&y);
        let (vals, vecs) = hermitian_eigen(&g);
        let top = vals.last().copied().unwrap_or(0.0).max(0.0);
        let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] > drop_tol * top && vals[i] > 0.0).collect();
        let t = DMatrix::from_fn(vecs.nrows(), keep.len(), |r, c| vecs[(r, keep[c])] / vals[keep[c]].sqrt());
        y = y.mul_dense(&t);
    }
    y
}

/// Orthonormalizes `x` against an orthonormal `basis` and itself.
pub fn orthonormalize_against(x: &Block, basis: Option<&Block>, drop_tol: f64) -> Block {
    let mut y = x.clone();
    if let Some(v) = basis {
        for _ in 0..2 {
            let c = v.gram(&y);
            let proj = v.mul_dense(&c);
            y.combine(1.0, &proj, -1.0);
        }
    }
    orthonormalize(&y, drop_tol)
}

#[derive(Clone, Debug)]
pub struct PcgOutcome {
    pub x: Vec<C64>,
    pub iterations: usize,
    /// True relative residual `‖b − Ax‖/‖b‖` at exit.
    pub rel_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for Hermitian positive definite
/// operators.
pub fn pcg(op: &dyn LinearOperator, b: &[C64], tol: f64, max_iter: usize) -> Result<PcgOutcome> {
    pcg_with_guess(op, b, None, tol, max_iter)
}

pub fn pcg_with_guess(
    op: &dyn LinearOperator,
    b: &[C64],
    x0: Option<&[C64]>,
    tol: f64,
    max_iter: usize,
) -> Result<PcgOutcome> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    let bnorm = norm(b);
    if bnorm == 0.0 {
        return Ok(PcgOutcome { x: vec![C64::new(0.0, 0.0); n], iterations: 0, rel_residual: 0.0 });
    }
    let inv_diag: Vec<f64> = match op.diagonal() {
        Some(d) => d.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect(),
        None => vec![1.0; n],
    };
    let mut x = x0.map_or_else(|| vec![C64::new(0.0, 0.0); n], |v| v.to_vec());
    let mut ax = vec![C64::new(0.0, 0.0); n];
    let mut r = b.to_vec();
    if x0.is_some() {
        op.apply(&x, &mut ax);
        r.iter_mut().zip(&ax).for_each(|(ri, a)| *ri -= a);
    }
    let mut z: Vec<C64> = r.iter().zip(&inv_diag).map(|(v, d)| v * d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z).re;
    let mut ap = vec![C64::new(0.0, 0.0); n];
    let mut iterations = 0;
    let mut restarts = 0;
    loop {
        while iterations < max_iter && norm(&r) > tol * bnorm {
            op.apply(&p, &mut ap);
            let pap = dot(&p, &ap).re;
            if !(pap > 0.0) {
                return Err(Error::NoConvergence { iterations, residual: norm(&r) / bnorm, hint: None });
            }
            let alpha = rz / pap;
            axpy(C64::new(alpha, 0.0), &p, &mut x);
            axpy(C64::new(-alpha, 0.0), &ap, &mut r);
            z.iter_mut().zip(&r).zip(&inv_diag).for_each(|((zi, ri), d)| *zi = ri * d);
            let rz_new = dot(&r, &z).re;
            let beta = rz_new / rz;
            rz = rz_new;
            p.iter_mut().zip(&z).for_each(|(pi, zi)| *pi = zi + *pi * beta);
            iterations += 1;
        }
        op.apply(&x, &mut ax);
        r = b.iter().zip(&ax).map(|(bi, a)| bi - a).collect();
        let rel = norm(&r) / bnorm;
        if rel <= tol {
            return Ok(PcgOutcome { x, iterations, rel_residual: rel });
        }
        if iterations >= max_iter || restarts >= 3 {
            return Err(Error::NoConvergence { iterations, residual: rel, hint: None });
        }
        // recurrence drifted from the true residual; restart from the current iterate
        restarts += 1;
        z = r.iter().zip(&inv_diag).map(|(v, d)| v * d).collect();
        p = z.clone();
        rz = dot(&r, &z).re;
    }
}

#[derive(Clone, Debug)]
pub struct BlockPcgOutcome {
    pub x: Block,
    pub iterations: usize,
    /// Largest true relative residual over the columns.
    pub max_rel_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients on every column of `b` at once.
/// Columns run independent recurrences; only the operator products are shared.
pub fn pcg_block(op: &dyn LinearOperator, b: &Block, tol: f64, max_iter: usize) -> Result<BlockPcgOutcome> {
    let (n, m) = (b.rows(), b.cols());
    assert_eq!(op.dim(), n);
    let inv_diag: Vec<f64> = match op.diagonal() {
        Some(d) => d.iter().map(|&v| if v > 0.0 { 1.0 / v } else { 1.0 }).collect(),
        None => vec![1.0; n],
    };
    let bnorm = b.column_norms();
    let mut x = Block::zeros(n, m);
    let mut r = b.clone();
    let mut ax = Block::zeros(n, m);
    let mut iterations = 0;
    for _attempt in 0..4 {
        let mut z = r.clone();
        z.scale_rows(&inv_diag);
        let mut p = z.clone();
        let mut rz: Vec<f64> = r.column_dots(&z).iter().map(|v| v.re).collect();
        let mut ap = Block::zeros(n, m);
        let mut active: Vec<bool> = r.column_norms().iter().zip(&bnorm).map(|(rn, bn)| *rn > tol * bn).collect();
        while iterations < max_iter && active.iter().any(|&a| a) {
            op.apply_block(&p, &mut ap);
            let pap = p.column_dots(&ap);
            let mut alpha = vec![C64::new(0.0, 0.0); m];
            for j in 0..m {
                if active[j] {
                    if !(pap[j].re > 0.0) {
                        return Err(Error::NoConvergence { iterations, residual: f64::NAN, hint: None });
                    }
                    alpha[j] = C64::new(rz[j] / pap[j].re, 0.0);
                }
            }
            x.add_scaled_columns(&p, &alpha);
            let neg: Vec<C64> = alpha.iter().map(|a| -a).collect();
            r.add_scaled_columns(&ap, &neg);
            z = r.clone();
            z.scale_rows(&inv_diag);
            let rz_new: Vec<f64> = r.column_dots(&z).iter().map(|v| v.re).collect();
            let beta: Vec<f64> = (0..m).map(|j| if active[j] { rz_new[j] / rz[j] } else { 0.0 }).collect();
            rz = rz_new;
            p.scale_columns(&beta);
            p.combine(1.0, &z, 1.0);
            let rn = r.column_norms();
            for j in 0..m {
                active[j] = active[j] && rn[j] > tol * bnorm[j];
            }
            iterations += 1;
        }
        op.apply_block(&x, &mut ax);
        r = b.clone();
        r.combine(1.0, &ax, -1.0);
        let rel = r
            .column_norms()
            .iter()
            .zip(&bnorm)
            .map(|(rn, bn)| if *bn > 0.0 { rn / bn } else { 0.0 })
            .fold(0.0, f64::max);
        if rel <= tol {
            return Ok(BlockPcgOutcome { x, iterations, max_rel_residual: rel });
        }
        if iterations >= max_iter {
            return Err(Error::NoConvergence { iterations, residual: rel, hint: None });
        }
    }
    Err(Error::NoConvergence { iterations, residual: f64::NAN, hint: None })
}

/// Dense vector view for tests and small problems.
pub fn to_dvector(x: &[C64]) -> DVector<C64> {
    DVector::from_column_slice(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::CsrMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gram_and_mul_dense_match_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Block::random(37, 5, &mut rng);
        let y = Block::random(37, 3, &mut rng);
        let g = x.gram(&y);
        for a in 0..5 {
            for b in 0..3 {
                let want = dot(&x.column(a), &y.column(b));
                assert!((g[(a, b)] - want).norm() < 1e-12);
            }
        }
        let q = DMatrix::from_fn(5, 2, |r, c| C64::new(r as f64 - 1.0, c as f64 * 0.5 + 0.25));
        let z = x.mul_dense(&q);
        for r in 0..37 {
            for c in 0..2 {
                let want: C64 = (0..5).map(|k| x.get(r, k) * q[(k, c)]).sum();
                assert!((z.get(r, c) - want).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn orthonormalize_drops_dependent_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Block::random(50, 4, &mut rng);
        let dup = Block::hcat(&[&x, &x.select_columns(&[1])]);
        let q = orthonormalize(&dup, 1e-12);
        assert_eq!(q.cols(), 4);
        let g = q.gram(&q);
        assert!((g - DMatrix::identity(4, 4)).norm() < 1e-12);
    }

    #[test]
    fn pcg_solves_spd_system() {
        let n = 60;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, C64::new(4.0 + i as f64, 0.0)));
            if i + 1 < n {
                t.push((i, i + 1, C64::new(-1.0, 0.5)));
                t.push((i + 1, i, C64::new(-1.0, -0.5)));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, t);
        let b: Vec<C64> = (0..n).map(|i| C64::new((i as f64).sin(), 1.0)).collect();
        let out = pcg(&a, &b, 1e-12, 500).unwrap();
        let r: Vec<C64> = a.mul_vec(&out.x).iter().zip(&b).map(|(u, v)| u - v).collect();
        assert!(norm(&r) <= 1e-12 * norm(&b));
        assert!(out.rel_residual <= 1e-12);
        let err = pcg(&a, &b, 1e-14, 2).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 2, .. }));
    }

    #[test]
    fn block_pcg_matches_columnwise() {
        let n = 50;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, C64::new(3.0 + (i % 7) as f64, 0.0)));
            if i + 1 < n {
                t.push((i, i + 1, C64::new(-1.0, 0.25)));
                t.push((i + 1, i, C64::new(-1.0, -0.25)));
            }
        }
        let a = CsrMatrix::from_triplets(n, n, t);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let mut b = Block::random(n, 4, &mut rng);
        b.set_column(2, &vec![C64::new(0.0, 0.0); n]);
        let out = pcg_block(&a, &b, 1e-12, 500).unwrap();
        for j in 0..4 {
            let single = pcg(&a, &b.column(j), 1e-12, 500).unwrap();
            let d: Vec<C64> = out.x.column(j).iter().zip(&single.x).map(|(u, v)| u - v).collect();
            assert!(norm(&d) <= 1e-10 * (1.0 + norm(&single.x)));
        }
        assert!(out.max_rel_residual <= 1e-12);
    }

    #[test]
    fn generalized_eigen_small() {
        let a = DMatrix::from_row_slice(2, 2, &[C64::new(2.0, 0.0), C64::new(0.0, 1.0), C64::new(0.0, -1.0), C64::new(3.0, 0.0)]);
        let b = DMatrix::from_row_slice(2, 2, &[C64::new(2.0, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(1.0, 0.0)]);
        let (vals, vecs) = generalized_hermitian_eigen(&a, &b).unwrap();
        for (k, &l) in vals.iter().enumerate() {
            let v = vecs.column(k);
            let r = &a * v - (&b * v) * C64::new(l, 0.0);
            assert!(r.norm() < 1e-12);
        }
    }
}
