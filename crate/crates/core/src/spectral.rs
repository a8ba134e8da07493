//! Smallest eigenpairs of sparse Hermitian operators and the compactness
//! diagnostics built on them.
//!
//! The eigensolver splits the operator into connected components of its
//! sparsity graph and runs Chebyshev-filtered subspace iteration on each.
//! Operators whose Gershgorin bound exceeds [`SHIFT_INVERT_BOUND`] are filtered
//! through `−A⁻¹` instead, applied by block conjugate gradients; Rayleigh–Ritz
//! and the reported residuals always use `A` itself.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{DiscreteSpace, FormVector};
use crate::error::{Error, Result};
use crate::linalg::{self, generalized_hermitian_eigen, hermitian_eigen, orthonormalize, pcg, pcg_block, Block, C64};
use crate::sparse::CsrMatrix;
use crate::weight::WeightSpec;

pub const DEFAULT_TOL: f64 = 1e-8;
pub const SHIFT_INVERT_BOUND: f64 = 1e6;
/// Components at most this large are solved densely.
const DENSE_LIMIT: usize = 400;
/// Largest dense fallback when the wanted block covers most of a component.
const DENSE_FALLBACK_LIMIT: usize = 2000;
/// Relative gap below which Ritz values count as kernel.
pub const GAP_TOL: f64 = 1e-8;
/// Subspace cut for the compactness constant, as a multiple of `1/ε`.
pub const TAU_FACTOR: f64 = 1.25;
/// Half-width of the window around 1 used to count the Fock cluster.
pub const CLUSTER_WIDTH: f64 = 0.05;
/// Relative band around the ladder mean for a stable compactness constant.
pub const STABILITY_BAND: f64 = 0.2;
/// Minimal level-to-level ratio for a blowing-up compactness constant.
pub const BLOWUP_RATIO: f64 = 1.5;
const SOLVE_TOL: f64 = 1e-10;
/// Relative distance the block edge must keep from the wanted values.
const EDGE_GAP: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct EigenOptions {
    /// Converged when `‖Av − λv‖ ≤ tol · max(1, |λ|)`.
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_TOL, max_iter: 400, seed: 0x5eed }
    }
}

impl EigenOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Clone, Debug)]
pub struct EigenResult {
    /// Ascending.
    pub values: Vec<f64>,
    /// Unit columns, one per value.
    pub vectors: Block,
    pub residuals: Vec<f64>,
    /// Largest outer iteration count over the components.
    pub iterations: usize,
}

impl EigenResult {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count_below(&self, cap: f64) -> usize {
        self.values.iter().filter(|&&v| v <= cap).count()
    }
}

/// What a solve must deliver: at least `count` pairs and, with a cap, every
/// pair at or below it.
#[derive(Clone, Copy, Debug)]
struct Want {
    count: usize,
    cap: Option<f64>,
}

/// The `count` smallest eigenpairs of a Hermitian operator.
pub fn smallest_eigenpairs(op: &CsrMatrix, count: usize, tol: f64) -> Result<EigenResult> {
    smallest_eigenpairs_with(op, count, &EigenOptions::with_tol(tol))
}

pub fn smallest_eigenpairs_with(op: &CsrMatrix, count: usize, opts: &EigenOptions) -> Result<EigenResult> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    if count > op.nrows() {
        return Err(Error::InvalidParameter(format!("count {count} exceeds dimension {}", op.nrows())));
    }
    solve(op, Want { count, cap: None }, opts)
}

/// Every eigenpair with eigenvalue at most `cap`, plus at least `min_count`
/// pairs in total.
pub fn eigenpairs_below(op: &CsrMatrix, cap: f64, min_count: usize, opts: &EigenOptions) -> Result<EigenResult> {
    if !cap.is_finite() {
        return Err(Error::InvalidParameter(format!("cap must be finite, got {cap}")));
    }
    solve(op, Want { count: min_count.min(op.nrows()), cap: Some(cap) }, opts)
}

fn solve(op: &CsrMatrix, want: Want, opts: &EigenOptions) -> Result<EigenResult> {
    if op.nrows() != op.ncols() {
        return Err(Error::InvalidParameter("operator must be square".into()));
    }
    if op.hermitian_defect() > 1e-12 * op.max_abs() {
        return Err(Error::InvalidParameter("operator is not Hermitian".into()));
    }
    let comps = op.components();
    let parts: Vec<Result<Part>> = comps
        .iter()
        .enumerate()
        .map(|(c, idx)| {
            let sub = if comps.len() == 1 { op.clone() } else { op.submatrix(idx) };
            let local = Want { count: want.count.min(idx.len()), cap: want.cap };
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(c as u64));
            solve_component(&sub, local, opts, &mut rng)
        })
        .collect();
    let parts: Vec<Part> = parts.into_iter().collect::<Result<_>>()?;

    let mut order: Vec<(f64, usize, usize)> = Vec::new();
    for (c, p) in parts.iter().enumerate() {
        for (j, &v) in p.values.iter().enumerate() {
            order.push((v, c, j));
        }
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let keep = match want.cap {
        Some(cap) => order.iter().filter(|o| o.0 <= cap).count().max(want.count),
        None => want.count,
    }
    .min(order.len());
    order.truncate(keep);

    let dim = op.nrows();
    let mut vectors = Block::zeros(dim, keep);
    {
        let (re, im) = vectors.parts_mut();
        for (k, &(_, c, j)) in order.iter().enumerate() {
            let p = &parts[c];
            for (local, &row) in comps[c].iter().enumerate() {
                let v = p.vectors.get(local, j);
                re[row * keep + k] = v.re;
                im[row * keep + k] = v.im;
            }
        }
    }
    Ok(EigenResult {
        values: order.iter().map(|o| o.0).collect(),
        residuals: order.iter().map(|o| parts[o.1].residuals[o.2]).collect(),
        vectors,
        iterations: parts.iter().map(|p| p.iterations).max().unwrap_or(0),
    })
}

struct Part {
    values: Vec<f64>,
    vectors: Block,
    residuals: Vec<f64>,
    iterations: usize,
}

fn converged(res: f64, value: f64, tol: f64) -> bool {
    res <= tol * value.abs().max(1.0)
}

/// Length of the prefix that satisfies `want`, if the Ritz data already does.
fn satisfied(theta: &[f64], conv: &[bool], want: Want) -> Option<usize> {
    let prefix = conv.iter().take_while(|&&c| c).count();
    if prefix < want.count {
        return None;
    }
    match want.cap {
        None => Some(want.count),
        Some(cap) => {
            let first_above = theta.iter().position(|&t| t > cap)?;
            (first_above < prefix).then_some(first_above.max(want.count))
        }
    }
}

fn dense_part(a: &CsrMatrix, want: Want) -> Part {
    let (vals, vecs) = hermitian_eigen(&a.to_dense());
    let m = vals.len();
    let keep = match want.cap {
        Some(cap) => vals.iter().filter(|&&v| v <= cap).count().max(want.count),
        None => want.count,
    }
    .min(m);
    let cols: Vec<Vec<C64>> = (0..keep).map(|j| vecs.column(j).iter().copied().collect()).collect();
    let vectors = Block::from_columns(&cols);
    let residuals = cols
        .iter()
        .zip(&vals)
        .map(|(v, &l)| {
            let av = a.mul_vec(v);
            linalg::norm(&av.iter().zip(v).map(|(x, y)| x - y * l).collect::<Vec<_>>())
        })
        .collect();
    Part { values: vals[..keep].to_vec(), vectors: if keep == 0 { Block::zeros(m, 0) } else { vectors }, residuals, iterations: 0 }
}

struct RitzState {
    theta: Vec<f64>,
    x: Block,
    ax: Block,
}

fn rayleigh_ritz(a: &CsrMatrix, x: &Block) -> RitzState {
    let mut ax = Block::zeros(x.rows(), x.cols());
    a.mul_block_into(x, &mut ax);
    let h = x.gram(&ax);
    let (theta, q) = hermitian_eigen(&h);
    RitzState { theta, x: x.mul_dense(&q), ax: ax.mul_dense(&q) }
}

/// Orthonormal block of exactly `cols` columns spanning `y` and random fill.
fn orthonormal_block(y: &Block, cols: usize, rng: &mut ChaCha8Rng) -> Block {
    let mut y = y.clone();
    let norms = y.column_norms();
    let inv: Vec<f64> = norms.iter().map(|&n| if n > 0.0 { 1.0 / n } else { 0.0 }).collect();
    y.scale_columns(&inv);
    let mut q = orthonormalize(&y, 1e-13);
    let mut guard = 0;
    while q.cols() < cols && guard < 10 {
        let fill = Block::random(q.rows(), cols - q.cols(), rng);
        let extra = linalg::orthonormalize_against(&fill, Some(&q), 1e-13);
        q = Block::hcat(&[&q, &extra]);
        guard += 1;
    }
    if q.cols() > cols {
        let idx: Vec<usize> = (0..cols).collect();
        q = q.select_columns(&idx);
    }
    q
}

/// Scaled Chebyshev filter of degree `deg` damping `[a, b]`, normalized at `lo`.
fn chebyshev_filter(apply: &mut dyn FnMut(&Block, &mut Block) -> Result<()>, x: &Block, deg: usize, lo: f64, a: f64, b: f64) -> Result<Block> {
    let e = (b - a) / 2.0;
    let c = (b + a) / 2.0;
    let mut sigma = e / (lo - c);
    let tau = 2.0 / sigma;
    let mut prev = x.clone();
    let mut cur = Block::zeros(x.rows(), x.cols());
    apply(x, &mut cur)?;
    cur.combine(sigma / e, x, -c * sigma / e);
    let mut next = Block::zeros(x.rows(), x.cols());
    for _ in 2..=deg {
        let sigma_new = 1.0 / (tau - sigma);
        apply(&cur, &mut next)?;
        let k = 2.0 * sigma_new / e;
        next.combine(k, &cur, -c * k);
        next.combine(1.0, &prev, -sigma * sigma_new);
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        sigma = sigma_new;
    }
    Ok(cur)
}

fn solve_component(a: &CsrMatrix, want: Want, opts: &EigenOptions, rng: &mut ChaCha8Rng) -> Result<Part> {
    let m = a.nrows();
    if m <= DENSE_LIMIT {
        return Ok(dense_part(a, want));
    }
    let hi = a.gershgorin_bound();
    let shift_invert = hi > SHIFT_INVERT_BOUND;
    let mut b = (want.count + want.count / 2 + 8).max(if want.cap.is_some() { 24 } else { 0 }).min(m);
    if 2 * b > m && m <= DENSE_FALLBACK_LIMIT {
        return Ok(dense_part(a, want));
    }
    let x0 = Block::random(m, b, rng);
    let mut st = rayleigh_ritz(a, &orthonormal_block(&x0, b, rng));
    let inner_tol = (opts.tol * 1e-2).min(SOLVE_TOL);
    let mut worst = f64::INFINITY;
    let mut prefix = 0;
    let mut since_growth = 0;
    for iter in 1..=opts.max_iter {
        let res = st.ax.sub_scaled_columns(&st.x, &st.theta).column_norms();
        let conv: Vec<bool> = res.iter().zip(&st.theta).map(|(&r, &t)| converged(r, t, opts.tol)).collect();
        prefix = conv.iter().take_while(|&&c| c).count();
        worst = res.iter().take(want.count.max(1)).fold(0.0, |acc: f64, &r| acc.max(r));
        if let Some(keep) = satisfied(&st.theta, &conv, want) {
            let keep = match want.cap {
                Some(cap) => st.theta.iter().take_while(|&&t| t <= cap).count().max(want.count),
                None => keep,
            };
            let idx: Vec<usize> = (0..keep).collect();
            return Ok(Part {
                values: st.theta[..keep].to_vec(),
                vectors: st.x.select_columns(&idx),
                residuals: res[..keep].to_vec(),
                iterations: iter,
            });
        }
        // grow when the cap is outside the block or the block edge sits in a
        // cluster with the wanted values
        let wanted = match want.cap {
            Some(cap) => st.theta.iter().take_while(|&&t| t <= cap).count().max(want.count),
            None => want.count,
        }
        .clamp(1, b);
        let cap_outside = want.cap.is_some_and(|cap| st.theta[b - 1] <= cap);
        let edge_gap = st.theta[b - 1] - st.theta[wanted - 1];
        let clustered = since_growth >= 3 && wanted < b && edge_gap < EDGE_GAP * st.theta[wanted - 1].abs().max(1.0);
        since_growth += 1;
        if (cap_outside || clustered) && b < m {
            let nb = if clustered { 2 * b } else { b * 3 / 2 + 8 }.min(m);
            if 2 * nb > m && m <= DENSE_FALLBACK_LIMIT {
                return Ok(dense_part(a, want));
            }
            let fill = Block::random(m, nb - b, rng);
            let extra = linalg::orthonormalize_against(&fill, Some(&st.x), 1e-13);
            let grown = Block::hcat(&[&st.x, &extra]);
            b = nb;
            st = rayleigh_ritz(a, &orthonormal_block(&grown, b, rng));
            since_growth = 0;
            continue;
        }
        let lo = st.theta[0];
        let mut top = st.theta[b - 1];
        if top <= lo {
            top = lo + 1e-3 * lo.abs().max(1.0);
        }
        // converged leading vectors are locked: kept in the basis, not filtered
        let locked = prefix.min(b - 1);
        let active_idx: Vec<usize> = (locked..b).collect();
        let active = st.x.select_columns(&active_idx);
        let y = if shift_invert {
            // eigenvalues of −A⁻¹ sit in [−1/λ_min, 0)
            let (l_lo, l_a, l_hi) = (-1.0 / lo.max(f64::MIN_POSITIVE), -1.0 / top, 0.0);
            let deg = ((2.0 * ((l_hi - l_a) / (l_a - l_lo)).sqrt()).ceil() as usize).clamp(2, 6);
            let mut apply = |x: &Block, y: &mut Block| -> Result<()> {
                let out = pcg_block(a, x, inner_tol, 50 * m.max(100)).map_err(|e| match e {
                    Error::NoConvergence { iterations, residual, .. } => {
                        Error::NoConvergence { iterations, residual, hint: Some(lo) }
                    }
                    other => other,
                })?;
                *y = out.x;
                y.scale_columns(&vec![-1.0; y.cols()]);
                Ok(())
            };
            chebyshev_filter(&mut apply, &active, deg, l_lo, l_a, l_hi)?
        } else {
            let hi = hi.max(top * (1.0 + 1e-12) + 1e-12);
            let deg = ((2.0 * ((hi - top) / (top - lo)).sqrt()).ceil() as usize).clamp(8, 200);
            let mut apply = |x: &Block, y: &mut Block| -> Result<()> {
                a.mul_block_into(x, y);
                Ok(())
            };
            chebyshev_filter(&mut apply, &active, deg, lo, top, hi)?
        };
        let next = if locked > 0 {
            let keep_idx: Vec<usize> = (0..locked).collect();
            let kept = st.x.select_columns(&keep_idx);
            let mut y = y;
            let norms = y.column_norms();
            y.scale_columns(&norms.iter().map(|&n| if n > 0.0 { 1.0 / n } else { 0.0 }).collect::<Vec<_>>());
            let fresh = linalg::orthonormalize_against(&y, Some(&kept), 1e-13);
            orthonormal_block(&Block::hcat(&[&kept, &fresh]), b, rng)
        } else {
            orthonormal_block(&y, b, rng)
        };
        st = rayleigh_ritz(a, &next);
    }
    Err(Error::EigenNoConvergence {
        iterations: opts.max_iter,
        converged: prefix,
        wanted: want.count,
        worst_residual: worst,
    })
}

fn max_solve_iter(dim: usize) -> usize {
    (20 * dim).clamp(1000, 200_000)
}

/// Solves `□x = u` on degree-`q` forms to relative residual `tol`.
pub fn apply_neumann_degree(s: &DiscreteSpace, degree: usize, u: &FormVector, tol: f64) -> Result<FormVector> {
    if u.degree() != degree {
        return Err(Error::DegreeMismatch { expected: degree, got: u.degree() });
    }
    let op = s.symmetric_box(degree)?;
    let rhs = s.to_symmetric(u)?;
    match pcg(&op, &rhs, tol, max_solve_iter(rhs.len())) {
        Ok(out) => s.from_symmetric(degree, &out.x),
        Err(Error::NoConvergence { iterations, residual, .. }) => {
            let hint = smallest_eigenpairs(op.matrix(), 1, 1e-4).ok().map(|r| r.values[0]);
            Err(Error::NoConvergence { iterations, residual, hint })
        }
        Err(e) => Err(e),
    }
}

/// The discrete Neumann operator on (0,1)-forms.
pub fn apply_neumann(s: &DiscreteSpace, u: &FormVector, tol: f64) -> Result<FormVector> {
    apply_neumann_degree(s, 1, u, tol)
}

#[derive(Clone, Debug)]
pub struct CanonicalSolution {
    pub u: FormVector,
    /// `‖∂̄u − f‖_φ / ‖f‖_φ`.
    pub residual: f64,
}

/// `u = ∂̄* N f`, the minimal solution of `∂̄u = f`, for `f` of degree `q ≥ 1`.
pub fn canonical_solve_degree(s: &DiscreteSpace, f: &FormVector, tol: f64) -> Result<CanonicalSolution> {
    let q = f.degree();
    if q == 0 {
        return Err(Error::UnsupportedDegree { degree: 0, n: s.dim() });
    }
    let x = apply_neumann_degree(s, q, f, tol)?;
    let c = s.symmetric_dbar(q - 1)?;
    let xs = s.to_symmetric(&x)?;
    let us = c.adjoint().mul_vec(&xs);
    let fs = s.to_symmetric(f)?;
    let back = c.mul_vec(&us);
    let diff: Vec<C64> = back.iter().zip(&fs).map(|(a, b)| a - b).collect();
    let fnorm = linalg::norm(&fs);
    let residual = if fnorm > 0.0 { linalg::norm(&diff) / fnorm } else { 0.0 };
    Ok(CanonicalSolution { u: s.from_symmetric(q - 1, &us)?, residual })
}

pub fn canonical_solve(s: &DiscreteSpace, f: &FormVector, tol: f64) -> Result<CanonicalSolution> {
    if f.degree() != 1 {
        return Err(Error::DegreeMismatch { expected: 1, got: f.degree() });
    }
    canonical_solve_degree(s, f, tol)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SingularValues {
    /// Descending.
    pub values: Vec<f64>,
    /// Kernel size detected by the gap test, for the function route.
    pub kernel_dim: Option<usize>,
    pub inconclusive: bool,
}

/// Leading singular values of `∂̄*N` on (0,1)-forms.
///
/// For n = 1 these are `μ^{−1/2}` over the smallest eigenvalues `μ` of `□` on
/// forms. For n = 2 the function route is used.
pub fn solution_singular_values(s: &DiscreteSpace, count: usize, opts: &EigenOptions) -> Result<SingularValues> {
    if count == 0 {
        return Err(Error::InvalidParameter("count must be at least 1".into()));
    }
    if s.dim() == 2 {
        return function_route_singular_values(s, count, opts);
    }
    let op = s.symmetric_box(1)?;
    let eig = smallest_eigenpairs_with(op.matrix(), count, opts)?;
    Ok(sigma_from_box(&eig.values, count))
}

/// Singular values `μ^{−1/2}` from the ascending spectrum of `□` on (0,1)-forms
/// (n = 1).
pub fn sigma_from_box(values: &[f64], count: usize) -> SingularValues {
    let positive: Vec<f64> = values.iter().copied().filter(|&v| v > 0.0).take(count).collect();
    SingularValues {
        inconclusive: positive.len() < count,
        values: positive.iter().map(|v| v.powf(-0.5)).collect(),
        kernel_dim: None,
    }
}

/// Singular values from the nonzero spectrum of `∂̄*∂̄` on functions, with the
/// kernel of discrete holomorphic functions removed by a gap test.
pub fn function_route_singular_values(s: &DiscreteSpace, count: usize, opts: &EigenOptions) -> Result<SingularValues> {
    let op = s.symmetric_box(0)?;
    let dim = op.dim();
    let threshold = GAP_TOL * median_diagonal(op.matrix());
    let mut request = (count + 32).min(dim);
    loop {
        let eig = smallest_eigenpairs_with(op.matrix(), request, opts)?;
        let kernel = eig.values.iter().take_while(|&&v| v <= threshold).count();
        if kernel + count <= eig.len() {
            let gap_ok = kernel == 0 || eig.values[kernel] > 1e3 * eig.values[kernel - 1].abs().max(threshold);
            return Ok(SingularValues {
                values: eig.values[kernel..kernel + count].iter().map(|v| v.powf(-0.5)).collect(),
                kernel_dim: Some(kernel),
                inconclusive: !gap_ok,
            });
        }
        if request >= dim || request >= 4096 {
            let nonzero: Vec<f64> = eig.values[kernel..].iter().map(|v| v.powf(-0.5)).collect();
            return Ok(SingularValues { values: nonzero, kernel_dim: Some(kernel), inconclusive: true });
        }
        request = (2 * request).min(dim);
    }
}

/// Median of `|a_ii|`; unlike the extreme entries it is not inflated by the
/// weight factors of the symmetrized operator far from the origin.
fn median_diagonal(m: &CsrMatrix) -> f64 {
    let mut d: Vec<f64> = m.diagonal().iter().map(|v| v.norm()).collect();
    if d.is_empty() {
        return f64::MIN_POSITIVE;
    }
    let mid = d.len() / 2;
    d.select_nth_unstable_by(mid, f64::total_cmp);
    d[mid].max(f64::MIN_POSITIVE)
}

#[derive(Clone, Debug)]
pub struct CompactnessConstant {
    pub epsilon: f64,
    pub value: f64,
    /// Maximizing form, absent when the constant is zero.
    pub maximizer: Option<FormVector>,
    /// Number of `□` eigenvectors spanning the search space.
    pub subspace_dim: usize,
}

/// `C_ε`: the largest `(‖u‖² − εQ(u,u)) / ‖u‖²_{−1}` over the span of the `□`
/// eigenforms with eigenvalue at most `TAU_FACTOR/ε`, clipped at zero.
pub fn estimate_compactness_constant(s: &DiscreteSpace, eps: f64, opts: &EigenOptions) -> Result<CompactnessConstant> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    let op = s.symmetric_box(1)?;
    let eig = eigenpairs_below(op.matrix(), TAU_FACTOR / eps, 1, opts)?;
    compactness_constant_from(s, &eig, eps)
}

/// Computes `C_ε` from precomputed `□` eigenpairs on (0,1)-forms.
pub fn compactness_constant_from(s: &DiscreteSpace, eig: &EigenResult, eps: f64) -> Result<CompactnessConstant> {
    let tau = TAU_FACTOR / eps;
    let idx: Vec<usize> = (0..eig.len()).filter(|&i| eig.values[i] <= tau).collect();
    let zero = CompactnessConstant { epsilon: eps, value: 0.0, maximizer: None, subspace_dim: idx.len() };
    if !idx.iter().any(|&i| eig.values[i] < 1.0 / eps) {
        return Ok(zero);
    }
    let v = eig.vectors.select_columns(&idx);
    let gram = s.w1_gram(1)?;
    let k = v.cols();
    let mut d = DMatrix::<C64>::zeros(k, k);
    const CHUNK: usize = 96;
    for start in (0..k).step_by(CHUNK) {
        let cols: Vec<usize> = (start..(start + CHUNK).min(k)).collect();
        let vc = v.select_columns(&cols);
        let w = pcg_block(&gram, &vc, SOLVE_TOL, max_solve_iter(v.rows()))?.x;
        let part = v.gram(&w);
        for (jj, &j) in cols.iter().enumerate() {
            for i in 0..k {
                d[(i, j)] = part[(i, jj)];
            }
        }
    }
    let a = DMatrix::<C64>::from_fn(k, k, |i, j| if i == j { C64::new(1.0 - eps * eig.values[idx[i]], 0.0) } else { C64::new(0.0, 0.0) });
    let (vals, vecs) = generalized_hermitian_eigen(&a, &d)?;
    let top = *vals.last().expect("non-empty subspace");
    if top <= 0.0 {
        return Ok(zero);
    }
    let y = vecs.column(k - 1).clone_owned();
    let u = v.mul_dense(&DMatrix::from_column_slice(k, 1, y.as_slice())).column(0);
    Ok(CompactnessConstant { epsilon: eps, value: top, maximizer: Some(s.from_symmetric(1, &u)?), subspace_dim: k })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyVerdict {
    CompactConsistent,
    NoncompactConsistent,
    Inconclusive,
}

impl std::fmt::Display for StudyVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::CompactConsistent => "compact-consistent",
            Self::NoncompactConsistent => "noncompact-consistent",
            Self::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Clone, Debug)]
pub struct StudyConfig {
    pub lowest: usize,
    pub sigma_count: usize,
    pub lambda_cap: f64,
    pub epsilons: Vec<f64>,
    pub eigen: EigenOptions,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { lowest: 10, sigma_count: 10, lambda_cap: 1.5, epsilons: vec![0.5], eigen: EigenOptions::default() }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpsilonEstimate {
    pub epsilon: f64,
    pub c_eps: f64,
    pub subspace_dim: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyLevel {
    #[serde(rename = "R")]
    pub half_width: f64,
    pub h: f64,
    pub lowest: Vec<f64>,
    pub count_below_cap: Option<usize>,
    pub cluster_count: Option<usize>,
    pub sigma: Vec<f64>,
    pub sigma_inconclusive: bool,
    pub c_eps: Vec<EpsilonEstimate>,
    pub warnings: Vec<String>,
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompactnessStudy {
    pub weight: String,
    pub n: usize,
    pub lambda_cap: f64,
    pub levels: Vec<StudyLevel>,
    pub verdict: StudyVerdict,
    pub reasons: Vec<String>,
}

fn run_level(w: &WeightSpec, half_width: f64, h: f64, cfg: &StudyConfig) -> StudyLevel {
    let mut level = StudyLevel {
        half_width,
        h,
        lowest: Vec::new(),
        count_below_cap: None,
        cluster_count: None,
        sigma: Vec::new(),
        sigma_inconclusive: true,
        c_eps: Vec::new(),
        warnings: Vec::new(),
        failures: Vec::new(),
    };
    let s = match crate::complex::build_space(w, w.dim(), half_width, h) {
        Ok(s) => s,
        Err(e) => {
            level.failures.push(format!("space: {e}"));
            return level;
        }
    };
    level.warnings = s.warnings().to_vec();
    let op = match s.symmetric_box(1) {
        Ok(op) => op,
        Err(e) => {
            level.failures.push(format!("assembly: {e}"));
            return level;
        }
    };
    let eps_min = cfg.epsilons.iter().copied().fold(f64::INFINITY, f64::min);
    let cap = if eps_min.is_finite() { cfg.lambda_cap.max(TAU_FACTOR / eps_min) } else { cfg.lambda_cap };
    let cap = cap.max(1.0 + CLUSTER_WIDTH);
    let min_count = cfg.lowest.max(if s.dim() == 1 { cfg.sigma_count } else { 0 });
    let eig = match eigenpairs_below(op.matrix(), cap, min_count, &cfg.eigen) {
        Ok(e) => e,
        Err(e) => {
            level.failures.push(format!("eigensolver: {e}"));
            return level;
        }
    };
    level.lowest = eig.values.iter().take(cfg.lowest).copied().collect();
    level.count_below_cap = Some(eig.count_below(cfg.lambda_cap));
    level.cluster_count = Some(eig.values.iter().filter(|v| (*v - 1.0).abs() <= CLUSTER_WIDTH).count());
    let sigma = if s.dim() == 1 {
        Ok(sigma_from_box(&eig.values, cfg.sigma_count))
    } else {
        function_route_singular_values(&s, cfg.sigma_count, &cfg.eigen)
    };
    match sigma {
        Ok(sv) => {
            level.sigma = sv.values;
            level.sigma_inconclusive = sv.inconclusive;
        }
        Err(e) => level.failures.push(format!("singular values: {e}")),
    }
    for &eps in &cfg.epsilons {
        match compactness_constant_from(&s, &eig, eps) {
            Ok(c) => level.c_eps.push(EpsilonEstimate { epsilon: eps, c_eps: c.value, subspace_dim: c.subspace_dim }),
            Err(e) => level.failures.push(format!("C_eps at eps = {eps}: {e}")),
        }
    }
    level
}

/// Runs the diagnostics on every level of `ladder` (pairs `(R, h)`) and
/// judges the trend.
pub fn compactness_study(w: &WeightSpec, ladder: &[(f64, f64)], cfg: &StudyConfig) -> Result<CompactnessStudy> {
    if ladder.len() < 3 {
        return Err(Error::InvalidParameter(format!("a ladder needs at least 3 levels, got {}", ladder.len())));
    }
    for pair in ladder.windows(2) {
        if !(pair[1].0 > pair[0].0) || pair[1].1 > pair[0].1 {
            return Err(Error::InvalidParameter(
                "ladder must be strictly increasing in R and non-increasing in h".into(),
            ));
        }
    }
    let levels: Vec<StudyLevel> = ladder.par_iter().map(|&(r, h)| run_level(w, r, h, cfg)).collect();
    let (verdict, reasons) = judge(&levels, cfg);
    Ok(CompactnessStudy { weight: w.to_string(), n: w.dim(), lambda_cap: cfg.lambda_cap, levels, verdict, reasons })
}

fn judge(levels: &[StudyLevel], cfg: &StudyConfig) -> (StudyVerdict, Vec<String>) {
    let mut reasons = Vec::new();
    let failed = levels.iter().any(|l| !l.failures.is_empty());
    if failed {
        reasons.push("at least one level failed".into());
    }
    let clusters: Option<Vec<usize>> = levels.iter().map(|l| l.cluster_count).collect();
    let persistent_cluster = clusters.as_ref().is_some_and(|c| {
        c.iter().all(|&x| x >= 5) && c.windows(2).all(|p| p[1] >= p[0]) && c.last() > c.first()
    });
    if persistent_cluster {
        reasons.push(format!("eigenvalue cluster within {CLUSTER_WIDTH} of 1 persists and grows: {:?}", clusters.unwrap_or_default()));
    }
    let counts: Option<Vec<usize>> = levels.iter().map(|l| l.count_below_cap).collect();
    let count_stable = counts.as_ref().is_some_and(|c| {
        let (a, b) = (c[c.len() - 2] as f64, c[c.len() - 1] as f64);
        (b - a).abs() <= STABILITY_BAND * a.max(1.0)
    });
    let sigma_ok = levels.iter().all(|l| !l.sigma_inconclusive && l.sigma.len() >= 2);
    let sigma_flat = sigma_ok && levels.iter().all(|l| l.sigma[l.sigma.len() - 1] / l.sigma[0] >= 0.95);
    if sigma_flat {
        reasons.push("solution-operator singular values do not decay".into());
    }
    let sigma_decay = sigma_ok && {
        let last = levels.last().expect("non-empty");
        last.sigma[last.sigma.len() - 1] / last.sigma[0] < 0.9
    };
    let mut c_blowup = false;
    let mut c_stable = !cfg.epsilons.is_empty();
    for (k, eps) in cfg.epsilons.iter().enumerate() {
        let series: Option<Vec<f64>> = levels.iter().map(|l| l.c_eps.get(k).map(|c| c.c_eps)).collect();
        let Some(series) = series else {
            c_stable = false;
            continue;
        };
        let blow = series.iter().all(|&v| v > 0.0) && series.windows(2).all(|p| p[1] >= BLOWUP_RATIO * p[0]);
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        let stable = series.iter().all(|&v| (v - mean).abs() <= STABILITY_BAND * mean.abs())
            || series.iter().all(|&v| v == 0.0);
        if blow {
            reasons.push(format!("C_eps at eps = {eps} grows by at least {BLOWUP_RATIO}x per level: {series:?}"));
        }
        if stable {
            reasons.push(format!("C_eps at eps = {eps} stays within {STABILITY_BAND} of its mean: {series:?}"));
        }
        c_blowup |= blow;
        c_stable &= stable;
    }
    if persistent_cluster || sigma_flat || c_blowup {
        return (StudyVerdict::NoncompactConsistent, reasons);
    }
    if !failed && count_stable && sigma_decay && c_stable {
        reasons.push("eigenvalue counts stabilize and singular values decay".into());
        return (StudyVerdict::CompactConsistent, reasons);
    }
    reasons.push("trend criteria not met on either side".into());
    (StudyVerdict::Inconclusive, reasons)
}

/// One row per `(level, quantity, index)`.
pub fn study_csv(study: &CompactnessStudy) -> String {
    let mut out = String::from("level,R,h,quantity,index,value\n");
    for (i, l) in study.levels.iter().enumerate() {
        let mut row = |q: &str, k: usize, v: String| {
            out.push_str(&format!("{i},{},{},{q},{k},{v}\n", l.half_width, l.h));
        };
        for (k, v) in l.lowest.iter().enumerate() {
            row("eigenvalue", k, format!("{v:.15e}"));
        }
        if let Some(c) = l.count_below_cap {
            row("count_below_cap", 0, c.to_string());
        }
        if let Some(c) = l.cluster_count {
            row("cluster_count", 0, c.to_string());
        }
        for (k, v) in l.sigma.iter().enumerate() {
            row("sigma", k, format!("{v:.15e}"));
        }
        for (k, c) in l.c_eps.iter().enumerate() {
            row(&format!("c_eps[{}]", c.epsilon), k, format!("{:.15e}", c.c_eps));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn diag(n: usize) -> CsrMatrix {
        let d: Vec<C64> = (1..=n).map(|i| C64::new(i as f64, 0.0)).collect();
        CsrMatrix::from_diagonal(&d)
    }

    fn dirichlet(n: usize, h: f64) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, C64::new(2.0 / (h * h), 0.0)));
            if i + 1 < n {
                t.push((i, i + 1, C64::new(-1.0 / (h * h), 0.0)));
                t.push((i + 1, i, C64::new(-1.0 / (h * h), 0.0)));
            }
        }
        CsrMatrix::from_triplets(n, n, t)
    }

    #[test]
    fn diagonal_operator() {
        let r = smallest_eigenpairs(&diag(100), 5, 1e-12).unwrap();
        for (k, v) in r.values.iter().enumerate() {
            assert!((v - (k + 1) as f64).abs() < 1e-12);
        }
        assert!(r.residuals.iter().all(|&x| x <= 1e-12));
    }

    #[test]
    fn dirichlet_laplacian_iterative() {
        let n = 999;
        let h = std::f64::consts::PI / (n + 1) as f64;
        let r = smallest_eigenpairs(&dirichlet(n, h), 4, 1e-7).unwrap();
        for (k, v) in r.values.iter().enumerate() {
            let m = (k + 1) as f64;
            let exact = 4.0 / (h * h) * (m * h / 2.0).sin().powi(2);
            assert!((v - exact).abs() <= 1e-8 * exact, "{v} vs {exact}");
        }
    }

    #[test]
    fn shift_invert_path() {
        let n = 600;
        let h = std::f64::consts::PI / (n + 1) as f64;
        let big = dirichlet(n, h).add(1.0, &CsrMatrix::from_diagonal(&vec![C64::new(0.0, 0.0); n]), 1.0);
        let mut t: Vec<_> = big.triplets().collect();
        t.push((n - 1, n - 1, C64::new(1e9, 0.0)));
        let a = CsrMatrix::from_triplets(n, n, t);
        assert!(a.gershgorin_bound() > SHIFT_INVERT_BOUND);
        let r = smallest_eigenpairs(&a, 3, 1e-9).unwrap();
        let dense = hermitian_eigen(&a.to_dense()).0;
        for k in 0..3 {
            assert!((r.values[k] - dense[k]).abs() <= 1e-8 * dense[k]);
        }
    }

    #[test]
    fn count_mode_collects_everything_below_cap() {
        let n = 900;
        let d: Vec<C64> = (0..n).map(|i| C64::new(1.0 + (i % 300) as f64 * 0.01, 0.0)).collect();
        let mut t: Vec<_> = CsrMatrix::from_diagonal(&d).triplets().collect();
        for i in 0..n - 1 {
            t.push((i, i + 1, C64::new(1e-3, 0.0)));
            t.push((i + 1, i, C64::new(1e-3, 0.0)));
        }
        let a = CsrMatrix::from_triplets(n, n, t);
        let r = eigenpairs_below(&a, 1.505, 0, &EigenOptions::with_tol(1e-9)).unwrap();
        let dense = hermitian_eigen(&a.to_dense()).0;
        let want = dense.iter().filter(|&&v| v <= 1.505).count();
        assert_eq!(r.len(), want);
        assert!(r.values.iter().zip(&dense).all(|(x, y)| (x - y).abs() < 1e-8));
    }

    #[test]
    fn components_merge_in_order() {
        let a = CsrMatrix::block_diag(&[&diag(500), &diag(500).scale(0.5)]);
        let r = smallest_eigenpairs(&a, 4, 1e-10).unwrap();
        let want = [0.5, 1.0, 1.0, 1.5];
        for (v, w) in r.values.iter().zip(want) {
            assert!((v - w).abs() < 1e-10);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let a = CsrMatrix::from_triplets(2, 2, vec![(0, 1, C64::new(1.0, 0.0))]);
        assert!(smallest_eigenpairs(&a, 1, 1e-8).is_err());
        assert!(smallest_eigenpairs(&diag(3), 0, 1e-8).is_err());
    }

    #[test]
    fn verdict_rules() {
        let cfg = StudyConfig::default();
        let mk = |c: usize, sigma: Vec<f64>, ce: f64| StudyLevel {
            half_width: 4.0,
            h: 0.1,
            lowest: vec![],
            count_below_cap: Some(c),
            cluster_count: Some(0),
            sigma,
            sigma_inconclusive: false,
            c_eps: vec![EpsilonEstimate { epsilon: 0.5, c_eps: ce, subspace_dim: 1 }],
            warnings: vec![],
            failures: vec![],
        };
        let decaying = vec![1.0, 0.8, 0.5];
        let compact = [mk(0, decaying.clone(), 2.0), mk(0, decaying.clone(), 1.7), mk(0, decaying.clone(), 1.6)];
        assert_eq!(judge(&compact, &cfg).0, StudyVerdict::CompactConsistent);
        let blow = [mk(0, decaying.clone(), 2.0), mk(0, decaying.clone(), 3.5), mk(0, decaying, 6.0)];
        assert_eq!(judge(&blow, &cfg).0, StudyVerdict::NoncompactConsistent);
        let mut failed = compact.clone();
        failed[1].failures.push("x".into());
        assert_eq!(judge(&failed, &cfg).0, StudyVerdict::Inconclusive);
    }
}
