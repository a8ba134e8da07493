//! Compressed sparse row matrices over `Complex64`.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{Block, LinearOperator};

const PAR_ROWS: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<Complex64>,
}

impl CsrMatrix {
    /// Builds a matrix from `(row, col, value)` triplets, summing duplicates
    /// and dropping exact zeros.
    pub fn from_triplets(nrows: usize, ncols: usize, mut triplets: Vec<(usize, usize, Complex64)>) -> Self {
        triplets.sort_unstable_by_key(|t| (t.0, t.1));
        let mut indptr = vec![0usize; nrows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values: Vec<Complex64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) outside {nrows}x{ncols}");
            if last == Some((r, c)) {
                *values.last_mut().expect("previous entry") += v;
            } else {
                indices.push(c as u32);
                values.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            indptr[r + 1] += indptr[r];
        }
        Self { nrows, ncols, indptr, indices, values }.pruned()
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![Complex64::new(1.0, 0.0); n])
    }

    pub fn from_diagonal(d: &[Complex64]) -> Self {
        Self::from_triplets(d.len(), d.len(), d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect())
    }

    fn pruned(self) -> Self {
        if self.values.iter().all(|v| *v != Complex64::new(0.0, 0.0)) {
            return self;
        }
        let mut indptr = vec![0usize; self.nrows + 1];
        let mut indices = Vec::with_capacity(self.indices.len());
        let mut values = Vec::with_capacity(self.values.len());
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                if self.values[k] != Complex64::new(0.0, 0.0) {
                    indices.push(self.indices[k]);
                    values.push(self.values[k]);
                }
            }
            indptr[r + 1] = indices.len();
        }
        Self { nrows: self.nrows, ncols: self.ncols, indptr, indices, values }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, Complex64)> + '_ {
        (self.indptr[r]..self.indptr[r + 1]).map(move |k| (self.indices[k] as usize, self.values[k]))
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..self.nrows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        let lo = self.indptr[r];
        let hi = self.indptr[r + 1];
        match self.indices[lo..hi].binary_search(&(c as u32)) {
            Ok(k) => self.values[lo + k],
            Err(_) => Complex64::new(0.0, 0.0),
        }
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let mut y = vec![Complex64::new(0.0, 0.0); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        y.par_iter_mut().with_min_len(PAR_ROWS).enumerate().for_each(|(r, out)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for k in self.indptr[r]..self.indptr[r + 1] {
                acc += self.values[k] * x[self.indices[k] as usize];
            }
            *out = acc;
        });
    }

    /// `Y = A X` for a row-major block of vectors.
    pub fn mul_block_into(&self, x: &Block, y: &mut Block) {
        assert_eq!(x.rows(), self.ncols);
        assert_eq!(y.rows(), self.nrows);
        assert_eq!(x.cols(), y.cols());
        let b = x.cols();
        let (xr, xi) = (x.re(), x.im());
        let (yr, yi) = y.parts_mut();
        yr.par_chunks_mut(b)
            .zip(yi.par_chunks_mut(b))
            .with_min_len(PAR_ROWS / b.max(1) + 1)
            .enumerate()
            .for_each(|(r, (or, oi))| {
                or.iter_mut().for_each(|v| *v = 0.0);
                oi.iter_mut().for_each(|v| *v = 0.0);
                for k in self.indptr[r]..self.indptr[r + 1] {
                    let a = self.values[k];
                    let c = self.indices[k] as usize;
                    let sr = &xr[c * b..(c + 1) * b];
                    let si = &xi[c * b..(c + 1) * b];
                    for j in 0..b {
                        or[j] += a.re * sr[j] - a.im * si[j];
                        oi[j] += a.re * si[j] + a.im * sr[j];
                    }
                }
            });
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c as usize + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let indptr = counts.clone();
        let mut next = counts;
        let mut indices = vec![0u32; self.nnz()];
        let mut values = vec![Complex64::new(0.0, 0.0); self.nnz()];
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                let c = self.indices[k] as usize;
                let dst = next[c];
                indices[dst] = r as u32;
                values[dst] = self.values[k].conj();
                next[c] += 1;
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, indptr, indices, values }
    }

    /// Sparse product `A B`.
    pub fn matmul(&self, other: &CsrMatrix) -> Self {
        assert_eq!(self.ncols, other.nrows, "inner dimensions differ");
        let rows: Vec<(Vec<u32>, Vec<Complex64>)> = (0..self.nrows)
            .into_par_iter()
            .with_min_len(256)
            .map_init(
                || (vec![usize::MAX; other.ncols], Vec::new(), Vec::new()),
                |(marker, cols, acc), r| {
                    cols.clear();
                    acc.clear();
                    for k in self.indptr[r]..self.indptr[r + 1] {
                        let a = self.values[k];
                        let mid = self.indices[k] as usize;
                        for kk in other.indptr[mid]..other.indptr[mid + 1] {
                            let c = other.indices[kk] as usize;
                            if marker[c] == usize::MAX {
                                marker[c] = acc.len();
                                cols.push(c as u32);
                                acc.push(a * other.values[kk]);
                            } else {
                                acc[marker[c]] += a * other.values[kk];
                            }
                        }
                    }
                    let mut pairs: Vec<(u32, Complex64)> = cols.iter().copied().zip(acc.iter().copied()).collect();
                    for &c in cols.iter() {
                        marker[c as usize] = usize::MAX;
                    }
                    pairs.sort_unstable_by_key(|p| p.0);
                    pairs.retain(|p| p.1 != Complex64::new(0.0, 0.0));
                    pairs.into_iter().unzip()
                },
            )
            .collect();
        let mut indptr = Vec::with_capacity(self.nrows + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (c, v) in rows {
            indices.extend(c);
            values.extend(v);
            indptr.push(indices.len());
        }
        Self { nrows: self.nrows, ncols: other.ncols, indptr, indices, values }
    }

    /// `alpha·A + beta·B`.
    pub fn add(&self, alpha: f64, other: &CsrMatrix, beta: f64) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut t: Vec<(usize, usize, Complex64)> = self.triplets().map(|(r, c, v)| (r, c, v * alpha)).collect();
        t.extend(other.triplets().map(|(r, c, v)| (r, c, v * beta)));
        Self::from_triplets(self.nrows, self.ncols, t)
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(blocks: &[&CsrMatrix]) -> Self {
        let ncols = blocks.first().map_or(0, |b| b.ncols);
        let mut out = Self { nrows: 0, ncols, indptr: vec![0], indices: Vec::new(), values: Vec::new() };
        for b in blocks {
            assert_eq!(b.ncols, ncols);
            let base = out.indices.len();
            out.indices.extend_from_slice(&b.indices);
            out.values.extend_from_slice(&b.values);
            out.indptr.extend(b.indptr[1..].iter().map(|p| p + base));
            out.nrows += b.nrows;
        }
        out
    }

    /// Places matrices side by side.
    pub fn hstack(blocks: &[&CsrMatrix]) -> Self {
        let adj: Vec<CsrMatrix> = blocks.iter().map(|b| b.adjoint()).collect();
        let refs: Vec<&CsrMatrix> = adj.iter().collect();
        Self::vstack(&refs).adjoint()
    }

    /// Block-diagonal matrix.
    pub fn block_diag(blocks: &[&CsrMatrix]) -> Self {
        let ncols: usize = blocks.iter().map(|b| b.ncols).sum();
        let mut t = Vec::new();
        let (mut r0, mut c0) = (0, 0);
        for b in blocks {
            t.extend(b.triplets().map(|(r, c, v)| (r + r0, c + c0, v)));
            r0 += b.nrows;
            c0 += b.ncols;
        }
        Self::from_triplets(r0, ncols, t)
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `diag(left) · A · diag(right)`.
    pub fn scale_rows_cols(&self, left: &[f64], right: &[f64]) -> Self {
        assert_eq!(left.len(), self.nrows);
        assert_eq!(right.len(), self.ncols);
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in out.indptr[r]..out.indptr[r + 1] {
                let c = out.indices[k] as usize;
                out.values[k] *= left[r] * right[c];
            }
        }
        out
    }

    /// Multiplies each stored entry by `f(row, col)`.
    pub fn map_entries(&self, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in out.indptr[r]..out.indptr[r + 1] {
                let c = out.indices[k] as usize;
                out.values[k] *= f(r, c);
            }
        }
        out
    }

    pub fn diagonal(&self) -> Vec<Complex64> {
        (0..self.nrows.min(self.ncols)).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `max |A − Aᴴ|` over entries.
    pub fn hermitian_defect(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let adj = self.adjoint();
        let diff = self.add(1.0, &adj, -1.0);
        diff.max_abs()
    }

    /// Upper bound on the largest eigenvalue magnitude from Gershgorin discs.
    pub fn gershgorin_bound(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(_, v)| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Connected components of the symmetric sparsity graph.
    pub fn components(&self) -> Vec<Vec<usize>> {
        assert_eq!(self.nrows, self.ncols);
        let n = self.nrows;
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for r in 0..n {
            for (c, _) in self.row(r) {
                let (a, b) = (find(&mut parent, r), find(&mut parent, c));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut label = vec![usize::MAX; n];
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let root = find(&mut parent, i);
            if label[root] == usize::MAX {
                label[root] = groups.len();
                groups.push(Vec::new());
            }
            groups[label[root]].push(i);
        }
        groups
    }

    /// Principal submatrix on the given sorted index set.
    pub fn submatrix(&self, idx: &[usize]) -> Self {
        let mut pos = vec![usize::MAX; self.ncols];
        for (k, &i) in idx.iter().enumerate() {
            pos[i] = k;
        }
        let mut t = Vec::new();
        for (k, &r) in idx.iter().enumerate() {
            for (c, v) in self.row(r) {
                if pos[c] != usize::MAX {
                    t.push((k, pos[c], v));
                }
            }
        }
        Self::from_triplets(idx.len(), idx.len(), t)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let mut d = DMatrix::zeros(self.nrows, self.ncols);
        for (r, c, v) in self.triplets() {
            d[(r, c)] = v;
        }
        d
    }

    /// Writes Matrix Market coordinate format (`complex general`, 1-based).
    pub fn write_matrix_market(&self, mut w: impl Write, comment: &str) -> Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate complex general")?;
        for line in comment.lines() {
            writeln!(w, "% {line}")?;
        }
        writeln!(w, "{} {} {}", self.nrows, self.ncols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{} {} {:.17e} {:.17e}", r + 1, c + 1, v.re, v.im)?;
        }
        Ok(())
    }

    /// Reads Matrix Market coordinate format (`real` or `complex`;
    /// `general`, `symmetric` or `hermitian`).
    pub fn read_matrix_market(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Format("empty Matrix Market input".into()))?;
        let header = header?.to_lowercase();
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() < 5 || fields[0] != "%%matrixmarket" || fields[1] != "matrix" || fields[2] != "coordinate" {
            return Err(Error::Format(format!("unsupported Matrix Market header `{header}`")));
        }
        let complex = match fields[3] {
            "complex" => true,
            "real" | "integer" => false,
            other => return Err(Error::Format(format!("unsupported field `{other}`"))),
        };
        let symmetry = fields[4].to_string();
        if !matches!(symmetry.as_str(), "general" | "symmetric" | "hermitian") {
            return Err(Error::Format(format!("unsupported symmetry `{symmetry}`")));
        }
        let mut size: Option<(usize, usize, usize)> = None;
        let mut t = Vec::new();
        for (lineno, line) in lines {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('%') {
                continue;
            }
            let bad = || Error::Format(format!("line {}: malformed entry `{line}`", lineno + 1));
            let nums: Vec<&str> = line.split_whitespace().collect();
            match size {
                None => {
                    if nums.len() != 3 {
                        return Err(bad());
                    }
                    let p = |s: &str| s.parse::<usize>().map_err(|_| bad());
                    size = Some((p(nums[0])?, p(nums[1])?, p(nums[2])?));
                }
                Some((nr, nc, _)) => {
                    let want = if complex { 4 } else { 3 };
                    if nums.len() != want {
                        return Err(bad());
                    }
                    let r: usize = nums[0].parse().map_err(|_| bad())?;
                    let c: usize = nums[1].parse().map_err(|_| bad())?;
                    if r == 0 || c == 0 || r > nr || c > nc {
                        return Err(bad());
                    }
                    let re: f64 = nums[2].parse().map_err(|_| bad())?;
                    let im: f64 = if complex { nums[3].parse().map_err(|_| bad())? } else { 0.0 };
                    let v = Complex64::new(re, im);
                    t.push((r - 1, c - 1, v));
                    if r != c {
                        match symmetry.as_str() {
                            "symmetric" => t.push((c - 1, r - 1, v)),
                            "hermitian" => t.push((c - 1, r - 1, v.conj())),
                            _ => {}
                        }
                    }
                }
            }
        }
        let (nr, nc, nnz) = size.ok_or_else(|| Error::Format("missing size line".into()))?;
        let stored = if symmetry == "general" { t.len() } else { t.iter().filter(|e| e.0 >= e.1).count() };
        if stored != nnz {
            return Err(Error::Format(format!("expected {nnz} entries, found {stored}")));
        }
        Ok(Self::from_triplets(nr, nc, t))
    }
}

impl LinearOperator for CsrMatrix {
    fn dim(&self) -> usize {
        assert_eq!(self.nrows, self.ncols);
        self.nrows
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        self.mul_vec_into(x, y);
    }

    fn apply_block(&self, x: &Block, y: &mut Block) {
        self.mul_block_into(x, y);
    }

    fn diagonal(&self) -> Option<Vec<f64>> {
        Some(CsrMatrix::diagonal(self).iter().map(|v| v.re).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn sample() -> CsrMatrix {
        CsrMatrix::from_triplets(
            3,
            4,
            vec![(0, 1, c(1.0, 2.0)), (2, 3, c(-1.0, 0.5)), (0, 1, c(1.0, 0.0)), (1, 0, c(0.0, 3.0)), (2, 0, c(0.0, 0.0))],
        )
    }

    #[test]
    fn triplets_merge_and_prune() {
        let a = sample();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(0, 1), c(2.0, 2.0));
        assert_eq!(a.get(2, 0), c(0.0, 0.0));
    }

    #[test]
    fn adjoint_and_products_match_dense() {
        let a = sample();
        let b = CsrMatrix::from_triplets(4, 2, vec![(1, 0, c(0.5, -1.0)), (3, 1, c(2.0, 0.0)), (0, 1, c(1.0, 1.0))]);
        assert_eq!(a.adjoint().to_dense(), a.to_dense().adjoint());
        let p = a.matmul(&b).to_dense();
        let q = a.to_dense() * b.to_dense();
        assert!((p - q).norm() < 1e-14);
        let x = vec![c(1.0, 0.0), c(0.0, 1.0), c(2.0, -1.0), c(-1.0, 0.0)];
        let y = a.mul_vec(&x);
        let yd = a.to_dense() * nalgebra::DVector::from_vec(x.clone());
        assert!(y.iter().zip(yd.iter()).all(|(u, v)| (u - v).norm() < 1e-14));

        let xb = Block::from_columns(&[x.clone(), x.iter().map(|v| v * c(0.0, 2.0)).collect()]);
        let mut yb = Block::zeros(3, 2);
        a.mul_block_into(&xb, &mut yb);
        for r in 0..3 {
            assert!((yb.get(r, 0) - y[r]).norm() < 1e-14);
            assert!((yb.get(r, 1) - y[r] * c(0.0, 2.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn stacking() {
        let a = sample();
        let v = CsrMatrix::vstack(&[&a, &a]);
        assert_eq!(v.nrows(), 6);
        assert_eq!(v.get(3, 1), c(2.0, 2.0));
        let h = CsrMatrix::hstack(&[&a, &a]);
        assert_eq!(h.ncols(), 8);
        assert_eq!(h.get(2, 7), c(-1.0, 0.5));
        let d = CsrMatrix::block_diag(&[&a, &a]);
        assert_eq!((d.nrows(), d.ncols()), (6, 8));
        assert_eq!(d.get(5, 7), c(-1.0, 0.5));
    }

    #[test]
    fn components_split_disconnected_blocks() {
        let m = CsrMatrix::from_triplets(
            5,
            5,
            vec![(0, 2, c(1.0, 0.0)), (2, 0, c(1.0, 0.0)), (1, 3, c(1.0, 0.0)), (3, 1, c(1.0, 0.0)), (4, 4, c(1.0, 0.0))],
        );
        assert_eq!(m.components(), vec![vec![0, 2], vec![1, 3], vec![4]]);
        assert_eq!(m.submatrix(&[1, 3]).get(0, 1), c(1.0, 0.0));
    }

    #[test]
    fn matrix_market_round_trip() {
        let a = sample();
        let mut buf = Vec::new();
        a.write_matrix_market(&mut buf, "test").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("%%MatrixMarket matrix coordinate complex general\n% test\n3 4 3\n"));
        let b = CsrMatrix::read_matrix_market(text.as_bytes()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn matrix_market_hermitian_and_errors() {
        let text = "%%MatrixMarket matrix coordinate complex hermitian\n2 2 2\n1 1 2.0 0.0\n2 1 1.0 1.0\n";
        let m = CsrMatrix::read_matrix_market(text.as_bytes()).unwrap();
        assert_eq!(m.get(0, 1), c(1.0, -1.0));
        assert_eq!(m.hermitian_defect(), 0.0);
        let bad = "%%MatrixMarket matrix coordinate complex general\n2 2 1\n3 1 1.0 0.0\n";
        assert!(CsrMatrix::read_matrix_market(bad.as_bytes()).is_err());
        let short = "%%MatrixMarket matrix coordinate real general\n2 2 2\n1 1 1.0\n";
        assert!(CsrMatrix::read_matrix_market(short.as_bytes()).is_err());
    }
}
