//! The weighted ∂̄-complex on a truncated uniform grid of `[−R, R]^{2n}`.
//!
//! Forms of degree `q` live on the grid nodes at distance at least `q` steps
//! from the boundary: functions on the closed grid, (0,1)-forms on the
//! interior, (0,2)-forms one layer further in. With these node sets every
//! centered-difference stencil of `∂̄_q` is complete, `∂̄₁∂̄₀ = 0` holds
//! exactly, and forms vanish on and outside the boundary layer.
//!
//! Operators come in two flavours:
//!
//! * raw operators act on nodal coefficients and are adjoint with respect
//!   to the weighted inner product `Σ f ḡ q_p`, `q_p = h^{2n} e^{−φ(p)}`;
//! * symmetric operators act on `q_p^{1/2}`-scaled coefficients, so weighted
//!   adjoints become conjugate transposes. Their entries use exact weight
//!   differences `e^{−(φ_p − φ_m)/2}` and never touch the clamped weights.

use std::io::Write;

use base64::Engine as _;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, pcg, C64};
use crate::sparse::CsrMatrix;
use crate::weight::{PointC, WeightSpec};

/// Boundary factor `e^{−φ}` relative to its maximum above which construction warns.
pub const TRUNC_TOL: f64 = 1e-12;
/// Floor applied to quadrature weights that underflow.
pub const TINY_FLOOR: f64 = 1e-300;
/// Relative residual for dual-norm solves.
pub const DUAL_NORM_TOL: f64 = 1e-10;

const ZERO: C64 = Complex64::new(0.0, 0.0);

/// Nodes at distance at least `margin` steps from the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeSet {
    margin: usize,
    side: usize,
    axes: usize,
}

impl NodeSet {
    pub fn len(&self) -> usize {
        self.side.pow(self.axes as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.side == 0
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn margin(&self) -> usize {
        self.margin
    }

    /// Global grid indices of a local node.
    pub fn grid_index(&self, mut local: usize) -> [usize; 4] {
        let mut g = [0usize; 4];
        for a in (0..self.axes).rev() {
            g[a] = local % self.side + self.margin;
            local /= self.side;
        }
        g
    }

    /// Local index of a grid node, if it belongs to this set.
    pub fn local_index(&self, g: &[usize; 4]) -> Option<usize> {
        let mut idx = 0;
        for &gi in g.iter().take(self.axes) {
            if gi < self.margin || gi >= self.margin + self.side {
                return None;
            }
            idx = idx * self.side + (gi - self.margin);
        }
        Some(idx)
    }
}

#[derive(Clone, Debug)]
pub struct DiscreteSpace {
    weight: WeightSpec,
    n: usize,
    half_width: f64,
    h: f64,
    intervals: usize,
    /// `φ` on the closed grid.
    phi: Vec<f64>,
    /// Clamped quadrature weights on the closed grid.
    quad: Vec<f64>,
    truncation_ratio: f64,
    warnings: Vec<String>,
}

/// Builds a space on `[−R, R]^{2n}` with spacing `h`.
///
/// Requires `R ≥ 4`, `h ≤ R/8` and `R/h` integral.
pub fn build_space(w: &WeightSpec, n: usize, half_width: f64, h: f64) -> Result<DiscreteSpace> {
    if !(h > 0.0) || !half_width.is_finite() {
        return Err(Error::InvalidGrid(format!("need h > 0 and finite R, got R = {half_width}, h = {h}")));
    }
    if half_width < 4.0 {
        return Err(Error::InvalidGrid(format!("R must be at least 4, got {half_width}")));
    }
    if h > half_width / 8.0 + 1e-12 {
        return Err(Error::InvalidGrid(format!("h must be at most R/8 = {}, got {h}", half_width / 8.0)));
    }
    let ratio = half_width / h;
    if (ratio - ratio.round()).abs() > 1e-9 * ratio {
        return Err(Error::InvalidGrid(format!("R/h must be an integer, got {ratio}")));
    }
    if w.dim() != n {
        return Err(Error::InvalidGrid(format!("weight has n = {}, space requested n = {n}", w.dim())));
    }
    DiscreteSpace::with_intervals(w, half_width, 2 * ratio.round() as usize)
}

impl DiscreteSpace {
    /// Builds a space with `intervals` grid steps per axis and no size
    /// preconditions beyond a non-empty deepest node set. Small dense
    /// cross-checks use this directly.
    pub fn with_intervals(w: &WeightSpec, half_width: f64, intervals: usize) -> Result<Self> {
        let n = w.dim();
        let min = if n == 2 { 4 } else { 2 };
        if intervals < min {
            return Err(Error::InvalidGrid(format!("need at least {min} intervals, got {intervals}")));
        }
        if !(half_width > 0.0) || !half_width.is_finite() {
            return Err(Error::InvalidGrid(format!("invalid half-width {half_width}")));
        }
        let h = 2.0 * half_width / intervals as f64;
        let closed = NodeSet { margin: 0, side: intervals + 1, axes: 2 * n };
        let cell = h.powi(2 * n as i32);
        let mut phi = Vec::with_capacity(closed.len());
        let mut quad = Vec::with_capacity(closed.len());
        let mut s = Self {
            weight: w.clone(),
            n,
            half_width,
            h,
            intervals,
            phi: Vec::new(),
            quad: Vec::new(),
            truncation_ratio: 0.0,
            warnings: Vec::new(),
        };
        let (mut phi_min, mut phi_boundary_min) = (f64::INFINITY, f64::INFINITY);
        for local in 0..closed.len() {
            let g = closed.grid_index(local);
            let p = s.point_of(&g);
            let v = w.eval(&p);
            if !v.is_finite() {
                return Err(Error::QuadratureWeight { node: local });
            }
            let q = cell * (-v).exp();
            if !(q >= 0.0) {
                return Err(Error::QuadratureWeight { node: local });
            }
            phi_min = phi_min.min(v);
            if g[..2 * n].iter().any(|&gi| gi == 0 || gi == intervals) {
                phi_boundary_min = phi_boundary_min.min(v);
            }
            phi.push(v);
            quad.push(q.max(TINY_FLOOR));
        }
        s.phi = phi;
        s.quad = quad;
        s.truncation_ratio = (-(phi_boundary_min - phi_min)).exp();
        if s.truncation_ratio > TRUNC_TOL {
            s.warnings.push(format!(
                "boundary factor e^-phi is {:.3e} of its maximum, above {TRUNC_TOL:e}; truncation error is not negligible",
                s.truncation_ratio
            ));
        }
        Ok(s)
    }

    pub fn weight(&self) -> &WeightSpec {
        &self.weight
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    /// `max e^{−φ}` on the boundary relative to `max e^{−φ}` on the grid.
    pub fn truncation_ratio(&self) -> f64 {
        self.truncation_ratio
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Node set carrying forms of degree `q`.
    pub fn nodes(&self, degree: usize) -> NodeSet {
        NodeSet {
            margin: degree,
            side: (self.intervals + 1).saturating_sub(2 * degree),
            axes: 2 * self.n,
        }
    }

    pub fn components(&self, degree: usize) -> Result<usize> {
        match (degree, self.n) {
            (0, _) => Ok(1),
            (1, n) => Ok(n),
            (2, 2) => Ok(1),
            (q, n) => Err(Error::UnsupportedDegree { degree: q, n }),
        }
    }

    /// Total unknowns of a degree-`q` form.
    pub fn unknowns(&self, degree: usize) -> Result<usize> {
        Ok(self.components(degree)? * self.nodes(degree).len())
    }

    fn coordinate(&self, gi: usize) -> f64 {
        self.half_width * (2.0 * gi as f64 - self.intervals as f64) / self.intervals as f64
    }

    fn point_of(&self, g: &[usize; 4]) -> PointC {
        let mut c = [0.0; 4];
        for a in 0..2 * self.n {
            c[a] = self.coordinate(g[a]);
        }
        PointC::from_array(c, self.n)
    }

    fn closed_index(&self, g: &[usize; 4]) -> usize {
        let side = self.intervals + 1;
        g.iter().take(2 * self.n).fold(0, |acc, &gi| acc * side + gi)
    }

    /// Point of a local node in the degree-`q` node set.
    pub fn point(&self, degree: usize, local: usize) -> PointC {
        self.point_of(&self.nodes(degree).grid_index(local))
    }

    /// Maps local degree-`q` node indices to closed-grid indices.
    pub fn node_map(&self, degree: usize) -> Vec<usize> {
        let set = self.nodes(degree);
        (0..set.len()).map(|l| self.closed_index(&set.grid_index(l))).collect()
    }

    /// `φ` on the degree-`q` nodes.
    pub fn phi_on(&self, degree: usize) -> Vec<f64> {
        self.node_map(degree).into_iter().map(|g| self.phi[g]).collect()
    }

    /// Clamped quadrature weights on the degree-`q` nodes.
    pub fn quadrature_on(&self, degree: usize) -> Vec<f64> {
        self.node_map(degree).into_iter().map(|g| self.quad[g]).collect()
    }

    fn quadrature_expanded(&self, degree: usize) -> Result<Vec<f64>> {
        let q = self.quadrature_on(degree);
        let comps = self.components(degree)?;
        Ok((0..comps).flat_map(|_| q.iter().copied()).collect())
    }

    fn phi_expanded(&self, degree: usize) -> Result<Vec<f64>> {
        let p = self.phi_on(degree);
        let comps = self.components(degree)?;
        Ok((0..comps).flat_map(|_| p.iter().copied()).collect())
    }

    /// Centered difference along real axis `axis`, from one node set to another.
    /// Neighbours outside the source set are treated as zero.
    pub fn difference(&self, from: usize, to: usize, axis: usize) -> CsrMatrix {
        let src = self.nodes(from);
        let dst = self.nodes(to);
        let c = 1.0 / (2.0 * self.h);
        let mut t = Vec::with_capacity(2 * dst.len());
        for row in 0..dst.len() {
            let g = dst.grid_index(row);
            for (step, sign) in [(1isize, 1.0), (-1, -1.0)] {
                let mut nb = g;
                let v = nb[axis] as isize + step;
                if v < 0 {
                    continue;
                }
                nb[axis] = v as usize;
                if let Some(col) = src.local_index(&nb) {
                    t.push((row, col, C64::new(sign * c, 0.0)));
                }
            }
        }
        CsrMatrix::from_triplets(dst.len(), src.len(), t)
    }

    /// `∂/∂z̄_j = ½(D_x + i D_y)` with `j` counted from 0.
    pub fn dbar_j(&self, from: usize, to: usize, j: usize) -> CsrMatrix {
        let dx = self.difference(from, to, 2 * j);
        let dy = self.difference(from, to, 2 * j + 1);
        CsrMatrix::from_triplets(
            dx.nrows(),
            dx.ncols(),
            dx.triplets()
                .map(|(r, c, v)| (r, c, v * 0.5))
                .chain(dy.triplets().map(|(r, c, v)| (r, c, v * C64::new(0.0, 0.5))))
                .collect(),
        )
    }

    /// `∂/∂z_j = ½(D_x − i D_y)`.
    pub fn d_j(&self, from: usize, to: usize, j: usize) -> CsrMatrix {
        self.dbar_j(from, to, j).map_entries(|_, _| 1.0).conj_imag()
    }

    /// Scales entries by `e^{−(φ_row − φ_col)/2}`, the similarity with `M^{1/2}`.
    fn symmetrize(&self, m: &CsrMatrix, row_degree: usize, col_degree: usize) -> Result<CsrMatrix> {
        let pr = self.phi_expanded(row_degree)?;
        let pc = self.phi_expanded(col_degree)?;
        let out = m.map_entries(|r, c| (-(pr[r] - pc[c]) * 0.5).exp());
        if out.triplets().any(|(_, _, v)| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidGrid(
                "operator entries overflow; the weight varies too fast across one grid step".into(),
            ));
        }
        Ok(out)
    }

    fn weighted_inner_raw(&self, degree: usize, f: &[C64], g: &[C64]) -> Result<C64> {
        let q = self.quadrature_expanded(degree)?;
        Ok(f.iter().zip(g).zip(&q).map(|((a, b), w)| a * b.conj() * w).sum())
    }

    /// `⟨f, g⟩_φ = Σ f ḡ q_p` over all components.
    pub fn weighted_inner(&self, f: &FormVector, g: &FormVector) -> Result<C64> {
        if f.degree != g.degree {
            return Err(Error::DegreeMismatch { expected: f.degree, got: g.degree });
        }
        self.check_form(f)?;
        self.check_form(g)?;
        self.weighted_inner_raw(f.degree, &f.data, &g.data)
    }

    pub fn weighted_norm(&self, f: &FormVector) -> f64 {
        self.weighted_inner(f, f).map(|v| v.re.max(0.0).sqrt()).unwrap_or(f64::NAN)
    }

    /// `Σ |f|² q_p` over nodes whose largest coordinate magnitude is at least `radius`.
    pub fn shell_mass(&self, f: &FormVector, radius: f64) -> f64 {
        let q = self.quadrature_on(f.degree);
        let set = self.nodes(f.degree);
        let mut acc = 0.0;
        for c in 0..f.comps {
            for (l, w) in q.iter().enumerate() {
                let p = self.point_of(&set.grid_index(l));
                if p.coords().iter().any(|x| x.abs() >= radius - 1e-12) {
                    acc += f.data[c * set.len() + l].norm_sqr() * w;
                }
            }
        }
        acc
    }

    fn check_form(&self, f: &FormVector) -> Result<()> {
        if f.n != self.n || f.data.len() != self.unknowns(f.degree)? {
            return Err(Error::InvalidParameter(format!(
                "form of degree {} with {} coefficients does not belong to this space",
                f.degree,
                f.data.len()
            )));
        }
        Ok(())
    }

    /// Raw `∂̄` from degree `q` to `q + 1`.
    ///
    /// For `q = 1` (n = 2) the single output component is
    /// `∂u₁/∂z̄₂ − ∂u₂/∂z̄₁`.
    pub fn assemble_dbar(&self, degree: usize) -> Result<CsrMatrix> {
        match (degree, self.n) {
            (0, n) => {
                let rows: Vec<CsrMatrix> = (0..n).map(|j| self.dbar_j(0, 1, j)).collect();
                let refs: Vec<&CsrMatrix> = rows.iter().collect();
                Ok(CsrMatrix::vstack(&refs))
            }
            (1, 2) => {
                let d1 = self.dbar_j(1, 2, 0);
                let d2 = self.dbar_j(1, 2, 1);
                Ok(CsrMatrix::hstack(&[&d2, &d1.scale(-1.0)]))
            }
            (q, n) => Err(Error::UnsupportedDegree { degree: q, n }),
        }
    }

    /// Exact weighted adjoint `M_q⁻¹ ∂̄ᴴ M_{q+1}` mapping degree `q` to `q − 1`.
    pub fn assemble_dbar_star(&self, degree: usize) -> Result<CsrMatrix> {
        if degree == 0 {
            return Err(Error::UnsupportedDegree { degree, n: self.n });
        }
        let d = self.assemble_dbar(degree - 1)?;
        let lo = self.quadrature_expanded(degree - 1)?;
        let hi = self.quadrature_expanded(degree)?;
        let inv: Vec<f64> = lo.iter().map(|w| 1.0 / w).collect();
        Ok(d.adjoint().scale_rows_cols(&inv, &hi))
    }

    /// Direct discretization `−Σ_j (D_{z_j} − ∂φ/∂z_j) u_j` of the weighted
    /// adjoint on (0,1)-forms, with exact Wirtinger derivatives of `φ`.
    pub fn assemble_dbar_star_formula(&self) -> Result<CsrMatrix> {
        let interior = self.nodes(1);
        let closed = self.nodes(0);
        let mut blocks = Vec::with_capacity(self.n);
        for j in 0..self.n {
            let dz = self.d_j(1, 0, j);
            let mut t: Vec<(usize, usize, C64)> = dz.triplets().map(|(r, c, v)| (r, c, -v)).collect();
            for l in 0..interior.len() {
                let g = interior.grid_index(l);
                let row = closed.local_index(&g).expect("interior node lies on the grid");
                let wz = self.weight.wirtinger_z(&self.point_of(&g), j + 1)?;
                t.push((row, l, wz));
            }
            blocks.push(CsrMatrix::from_triplets(closed.len(), interior.len(), t));
        }
        let refs: Vec<&CsrMatrix> = blocks.iter().collect();
        Ok(CsrMatrix::hstack(&refs))
    }

    /// `M_{q+1}^{1/2} ∂̄_q M_q^{−1/2}`.
    pub fn symmetric_dbar(&self, degree: usize) -> Result<CsrMatrix> {
        let d = self.assemble_dbar(degree)?;
        self.symmetrize(&d, degree + 1, degree)
    }

    /// `□` on degree-`q` forms in symmetric coordinates.
    pub fn symmetric_box(&self, degree: usize) -> Result<SparseHermitianOperator> {
        self.components(degree)?;
        let mut total: Option<CsrMatrix> = None;
        let mut push = |m: CsrMatrix| {
            total = Some(match total.take() {
                Some(t) => t.add(1.0, &m, 1.0),
                None => m,
            });
        };
        if degree >= 1 {
            let c = self.symmetric_dbar(degree - 1)?;
            push(c.matmul(&c.adjoint()));
        }
        if degree < self.n {
            let c = self.symmetric_dbar(degree)?;
            push(c.adjoint().matmul(&c));
        }
        let matrix = total.expect("at least one term");
        Ok(SparseHermitianOperator::new(matrix, degree, true))
    }

    /// `□ = ∂̄∂̄* + ∂̄*∂̄` on (0,1)-forms in symmetric coordinates.
    pub fn assemble_box(&self) -> SparseHermitianOperator {
        self.symmetric_box(1).expect("degree 1 exists for n = 1, 2")
    }

    /// Symmetric twisted field `M^{1/2} (D_a − ∂φ/∂x_a) M^{−1/2}` on the
    /// degree-`q` nodes of one component.
    pub fn twisted_field(&self, degree: usize, axis: usize) -> Result<CsrMatrix> {
        self.components(degree)?;
        let set = self.nodes(degree);
        let d = self.difference(degree, degree, axis);
        let phi = self.phi_on(degree);
        let mut t: Vec<(usize, usize, C64)> = d
            .triplets()
            .map(|(r, c, v)| (r, c, v * (-(phi[r] - phi[c]) * 0.5).exp()))
            .collect();
        for l in 0..set.len() {
            let p = self.point(degree, l);
            let g = self.weight.jet(&p).grad[axis];
            t.push((l, l, C64::new(-g, 0.0)));
        }
        Ok(CsrMatrix::from_triplets(set.len(), set.len(), t))
    }

    /// `∂²φ/∂x_a²` on the degree-`q` nodes.
    pub fn second_derivative(&self, degree: usize, axis: usize) -> Vec<f64> {
        (0..self.nodes(degree).len())
            .map(|l| self.weight.jet(&self.point(degree, l)).hess[axis][axis])
            .collect()
    }

    /// Gram operator of `‖f‖² + Σ_a ‖X_a f‖²` in symmetric coordinates,
    /// applied componentwise.
    pub fn w1_gram(&self, degree: usize) -> Result<SparseHermitianOperator> {
        let comps = self.components(degree)?;
        let set = self.nodes(degree);
        let mut g = CsrMatrix::identity(set.len());
        for axis in 0..2 * self.n {
            let x = self.twisted_field(degree, axis)?;
            g = g.add(1.0, &x.adjoint().matmul(&x), 1.0);
        }
        let blocks: Vec<&CsrMatrix> = (0..comps).map(|_| &g).collect();
        let matrix = if comps == 1 { g.clone() } else { CsrMatrix::block_diag(&blocks) };
        Ok(SparseHermitianOperator::new(matrix, degree, true))
    }

    /// `q_p^{1/2}`-scaled coefficients of a form.
    pub fn to_symmetric(&self, f: &FormVector) -> Result<Vec<C64>> {
        self.check_form(f)?;
        let q = self.quadrature_expanded(f.degree)?;
        Ok(f.data.iter().zip(&q).map(|(v, w)| v * w.sqrt()).collect())
    }

    pub fn from_symmetric(&self, degree: usize, x: &[C64]) -> Result<FormVector> {
        let q = self.quadrature_expanded(degree)?;
        if x.len() != q.len() {
            return Err(Error::InvalidParameter("vector length does not match the form space".into()));
        }
        Ok(FormVector {
            degree,
            n: self.n,
            comps: self.components(degree)?,
            data: x.iter().zip(&q).map(|(v, w)| v / w.sqrt()).collect(),
        })
    }

    /// `Q(f, g) = ⟨∂̄f, ∂̄g⟩_φ + ⟨∂̄*f, ∂̄*g⟩_φ` for (0,1)-forms.
    pub fn dirichlet_form(&self, f: &FormVector, g: &FormVector) -> Result<C64> {
        if f.degree != 1 || g.degree != 1 {
            return Err(Error::DegreeMismatch { expected: 1, got: if f.degree != 1 { f.degree } else { g.degree } });
        }
        let fs = self.to_symmetric(f)?;
        let gs = self.to_symmetric(g)?;
        let c0 = self.symmetric_dbar(0)?;
        let c0h = c0.adjoint();
        let mut q = linalg::dot(&c0h.mul_vec(&gs), &c0h.mul_vec(&fs));
        if self.n == 2 {
            let c1 = self.symmetric_dbar(1)?;
            q += linalg::dot(&c1.mul_vec(&gs), &c1.mul_vec(&fs));
        }
        Ok(q)
    }

    /// `Σ_p q_p ⟨M_φ(p) u(p), u(p)⟩` for a (0,1)-form.
    pub fn levi_form(&self, u: &FormVector) -> Result<f64> {
        if u.degree != 1 {
            return Err(Error::DegreeMismatch { expected: 1, got: u.degree });
        }
        self.check_form(u)?;
        let q = self.quadrature_on(1);
        let len = q.len();
        let mut acc = 0.0;
        let mut coeffs = vec![ZERO; self.n];
        for (l, w) in q.iter().enumerate() {
            for (j, c) in coeffs.iter_mut().enumerate() {
                *c = u.data[j * len + l];
            }
            if coeffs.iter().all(|c| *c == ZERO) {
                continue;
            }
            let levi = self.weight.levi_matrix(&self.point(1, l));
            acc += w * levi.quadratic_form(&coeffs);
        }
        Ok(acc)
    }

    /// `Σ_p q_p V(p) |f(p)|²` for a nodal potential `V`.
    pub fn potential_form(&self, f: &FormVector, potential: impl Fn(&PointC) -> f64) -> Result<f64> {
        self.check_form(f)?;
        let q = self.quadrature_on(f.degree);
        let len = q.len();
        let mut acc = 0.0;
        for (l, w) in q.iter().enumerate() {
            let mass: f64 = (0..f.comps).map(|c| f.data[c * len + l].norm_sqr()).sum();
            if mass > 0.0 {
                acc += w * potential(&self.point(f.degree, l)) * mass;
            }
        }
        Ok(acc)
    }

    /// `Σ_a ‖X_a f‖²_φ`, componentwise.
    pub fn twisted_energy(&self, f: &FormVector) -> Result<f64> {
        let fs = self.to_symmetric(f)?;
        let len = self.nodes(f.degree).len();
        let mut acc = 0.0;
        for axis in 0..2 * self.n {
            let x = self.twisted_field(f.degree, axis)?;
            for c in 0..f.comps {
                acc += linalg::norm(&x.mul_vec(&fs[c * len..(c + 1) * len])).powi(2);
            }
        }
        Ok(acc)
    }

    /// Exports an operator in Matrix Market format with a provenance comment.
    pub fn export_matrix_market(&self, m: &CsrMatrix, what: &str, w: impl Write) -> Result<()> {
        let comment = format!(
            "{what}\nweight: {}\nn = {}, R = {}, h = {}",
            self.weight, self.n, self.half_width, self.h
        );
        m.write_matrix_market(w, &comment)
    }
}

trait ConjImag {
    fn conj_imag(&self) -> Self;
}

impl ConjImag for CsrMatrix {
    fn conj_imag(&self) -> Self {
        CsrMatrix::from_triplets(self.nrows(), self.ncols(), self.triplets().map(|(r, c, v)| (r, c, v.conj())).collect())
    }
}

/// Sparse matrix with verified structural flags.
#[derive(Clone, Debug)]
pub struct SparseHermitianOperator {
    matrix: CsrMatrix,
    degree: usize,
    hermitian: bool,
    psd: bool,
}

impl SparseHermitianOperator {
    /// Wraps `matrix`, setting the Hermitian flag only if
    /// `max|A − Aᴴ| ≤ 1e−12 · max|A|`.
    pub fn new(matrix: CsrMatrix, degree: usize, psd: bool) -> Self {
        let hermitian = matrix.hermitian_defect() <= 1e-12 * matrix.max_abs();
        Self { matrix, degree, hermitian, psd: psd && hermitian }
    }

    pub fn matrix(&self) -> &CsrMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CsrMatrix {
        self.matrix
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_psd(&self) -> bool {
        self.psd
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Applies the operator to a form given by nodal coefficients, i.e.
    /// `M^{−1/2} A M^{1/2} f`.
    pub fn apply_form(&self, s: &DiscreteSpace, f: &FormVector) -> Result<FormVector> {
        if f.degree != self.degree {
            return Err(Error::DegreeMismatch { expected: self.degree, got: f.degree });
        }
        let x = s.to_symmetric(f)?;
        s.from_symmetric(self.degree, &self.matrix.mul_vec(&x))
    }
}

impl linalg::LinearOperator for SparseHermitianOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }
    fn apply(&self, x: &[C64], y: &mut [C64]) {
        self.matrix.mul_vec_into(x, y)
    }
    fn apply_block(&self, x: &linalg::Block, y: &mut linalg::Block) {
        self.matrix.mul_block_into(x, y)
    }
    fn diagonal(&self) -> Option<Vec<f64>> {
        linalg::LinearOperator::diagonal(&self.matrix)
    }
}

/// Coefficients of a discrete (0,q)-form, component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FormVector {
    degree: usize,
    n: usize,
    comps: usize,
    data: Vec<C64>,
}

impl FormVector {
    pub fn zeros(s: &DiscreteSpace, degree: usize) -> Result<Self> {
        let comps = s.components(degree)?;
        Ok(Self { degree, n: s.n, comps, data: vec![ZERO; s.unknowns(degree)?] })
    }

    pub fn from_data(s: &DiscreteSpace, degree: usize, data: Vec<C64>) -> Result<Self> {
        let f = Self { degree, n: s.n, comps: s.components(degree)?, data };
        s.check_form(&f)?;
        if f.data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::InvalidParameter("form coefficients must be finite".into()));
        }
        Ok(f)
    }

    /// Samples `f(z)` (one value per component) at the degree-`q` nodes.
    ///
    /// # Panics
    ///
    /// Panics if `degree` is not available for the space or the closure
    /// returns the wrong number of components.
    pub fn from_fn(s: &DiscreteSpace, degree: usize, f: impl Fn(&[C64]) -> Vec<C64>) -> Self {
        let comps = s.components(degree).expect("supported degree");
        let set = s.nodes(degree);
        let mut data = vec![ZERO; comps * set.len()];
        let mut z = vec![ZERO; s.n];
        for l in 0..set.len() {
            let p = s.point(degree, l);
            for (j, zj) in z.iter_mut().enumerate() {
                *zj = p.z(j);
            }
            let v = f(&z);
            assert_eq!(v.len(), comps, "closure returned the wrong number of components");
            for (c, val) in v.into_iter().enumerate() {
                data[c * set.len() + l] = val;
            }
        }
        Self { degree, n: s.n, comps, data }
    }

    /// Independent standard complex Gaussian-like coefficients in `[−1, 1]²`.
    pub fn random(s: &DiscreteSpace, degree: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut f = Self::zeros(s, degree)?;
        f.data.iter_mut().for_each(|v| *v = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        Ok(f)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn component_count(&self) -> usize {
        self.comps
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn component(&self, c: usize) -> &[C64] {
        let len = self.data.len() / self.comps;
        &self.data[c * len..(c + 1) * len]
    }

    pub fn sub(&self, other: &FormVector) -> Result<FormVector> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &FormVector) -> Result<FormVector> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: C64) -> FormVector {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|v| *v *= c);
        out
    }

    fn zip_with(&self, other: &FormVector, f: impl Fn(C64, C64) -> C64) -> Result<FormVector> {
        if self.degree != other.degree || self.data.len() != other.data.len() {
            return Err(Error::DegreeMismatch { expected: self.degree, got: other.degree });
        }
        let mut out = self.clone();
        out.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a = f(*a, *b));
        Ok(out)
    }

    /// Applies a raw operator whose column space is this form's degree.
    pub fn mapped(&self, s: &DiscreteSpace, op: &CsrMatrix, degree: usize) -> Result<FormVector> {
        if op.ncols() != self.data.len() {
            return Err(Error::InvalidParameter("operator does not act on this form".into()));
        }
        FormVector::from_data(s, degree, op.mul_vec(&self.data))
    }
}

/// Serialized form: `{weight, n, R, h, degree, data}` with `data` the
/// base64 encoding of little-endian `(re, im)` `f64` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormRecord {
    pub weight: String,
    pub n: usize,
    #[serde(rename = "R")]
    pub half_width: f64,
    pub h: f64,
    pub degree: usize,
    pub data: String,
}

impl FormRecord {
    pub fn from_form(s: &DiscreteSpace, f: &FormVector) -> Self {
        let mut bytes = Vec::with_capacity(16 * f.data.len());
        for v in &f.data {
            bytes.extend_from_slice(&v.re.to_le_bytes());
            bytes.extend_from_slice(&v.im.to_le_bytes());
        }
        Self {
            weight: s.weight.to_string(),
            n: s.n,
            half_width: s.half_width,
            h: s.h,
            degree: f.degree,
            data: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    /// Decodes into a form on `s`, checking that the record belongs to it.
    pub fn into_form(self, s: &DiscreteSpace) -> Result<FormVector> {
        if self.n != s.n || (self.half_width - s.half_width).abs() > 1e-12 || (self.h - s.h).abs() > 1e-12 {
            return Err(Error::Format(format!(
                "record is for n = {}, R = {}, h = {}; space has n = {}, R = {}, h = {}",
                self.n, self.half_width, self.h, s.n, s.half_width, s.h
            )));
        }
        if self.weight != s.weight.to_string() {
            return Err(Error::Format(format!("record weight `{}` differs from space weight `{}`", self.weight, s.weight)));
        }
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(self.data.as_bytes())
            .map_err(|e| Error::Format(format!("bad base64 payload: {e}")))?;
        if bytes.len() % 16 != 0 {
            return Err(Error::Format("payload is not a whole number of complex128 values".into()));
        }
        let data: Vec<C64> = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                C64::new(re, im)
            })
            .collect();
        FormVector::from_data(s, self.degree, data)
    }
}

/// Dual `W^{−1}` norm with a cached Gram operator.
pub struct DualNorm {
    gram: SparseHermitianOperator,
    degree: usize,
}

impl DualNorm {
    pub fn new(s: &DiscreteSpace, degree: usize) -> Result<Self> {
        Ok(Self { gram: s.w1_gram(degree)?, degree })
    }

    pub fn gram(&self) -> &SparseHermitianOperator {
        &self.gram
    }

    /// `sqrt((Mu)ᴴ A⁻¹ (Mu))`, solved to relative residual [`DUAL_NORM_TOL`].
    pub fn norm(&self, s: &DiscreteSpace, u: &FormVector) -> Result<f64> {
        if u.degree != self.degree {
            return Err(Error::DegreeMismatch { expected: self.degree, got: u.degree });
        }
        let us = s.to_symmetric(u)?;
        self.norm_symmetric(&us)
    }

    /// Same as [`Self::norm`] for a vector already in symmetric coordinates.
    pub fn norm_symmetric(&self, us: &[C64]) -> Result<f64> {
        let max_iter = 20 * us.len().max(100);
        let sol = pcg(&self.gram, us, DUAL_NORM_TOL, max_iter)?;
        Ok(linalg::dot(us, &sol.x).re.max(0.0).sqrt())
    }
}

/// One-shot dual norm of a degree-0 or degree-1 form.
pub fn dual_norm(s: &DiscreteSpace, u: &FormVector) -> Result<f64> {
    if u.degree > 1 {
        return Err(Error::UnsupportedDegree { degree: u.degree, n: s.n });
    }
    DualNorm::new(s, u.degree)?.norm(s, u)
}
