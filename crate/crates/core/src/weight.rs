//! Exact calculus for polynomial and radial weights on ℂⁿ, n ∈ {1, 2}.
//!
//! Points are stored in real coordinates `(x1, y1, x2, y2)`. Every derivative
//! is symbolic: polynomial weights carry their differentiated monomial lists,
//! radial weights `Σ a_m |z|^{2m}` use the chain rule in `s = |z|²`.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Plurisubharmonicity tolerance for sampled Levi eigenvalues.
pub const TOL_PSH: f64 = 1e-10;

const VAR_NAMES: [&str; 4] = ["x1", "y1", "x2", "y2"];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointC {
    coords: [f64; 4],
    n: usize,
}

impl PointC {
    pub fn new(coords: &[f64]) -> Result<Self> {
        let n = match coords.len() {
            2 => 1,
            4 => 2,
            len => {
                return Err(Error::InvalidParameter(format!(
                    "a point needs 2 or 4 real coordinates, got {len}"
                )))
            }
        };
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        let mut c = [0.0; 4];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Self { coords: c, n })
    }

    pub fn from_complex(z: &[Complex64]) -> Result<Self> {
        let flat: Vec<f64> = z.iter().flat_map(|w| [w.re, w.im]).collect();
        Self::new(&flat)
    }

    pub(crate) fn from_array(coords: [f64; 4], n: usize) -> Self {
        Self { coords, n }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..2 * self.n]
    }

    pub fn z(&self, j: usize) -> Complex64 {
        Complex64::new(self.coords[2 * j], self.coords[2 * j + 1])
    }

    pub fn norm_sq(&self) -> f64 {
        self.coords().iter().map(|c| c * c).sum()
    }

    pub fn scaled(&self, t: f64) -> Self {
        let mut c = self.coords;
        c.iter_mut().for_each(|v| *v *= t);
        Self { coords: c, n: self.n }
    }
}

impl fmt::Display for PointC {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.coords().iter().map(|c| format!("{c}")).collect();
        write!(f, "({})", parts.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    /// Exponents of `x1, y1, x2, y2`.
    pub exponents: [u32; 4],
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    fn eval(&self, c: &[f64; 4]) -> f64 {
        let mut v = self.coeff;
        for (x, &e) in c.iter().zip(&self.exponents) {
            if e > 0 {
                v *= x.powi(e as i32);
            }
        }
        v
    }

    /// Partial derivative in variable `var` (0-based over `x1, y1, x2, y2`).
    pub fn differentiate(&self, var: usize) -> Option<Monomial> {
        let e = self.exponents[var];
        if e == 0 {
            return None;
        }
        let mut exponents = self.exponents;
        exponents[var] -= 1;
        Some(Monomial {
            coeff: self.coeff * e as f64,
            exponents,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialTerm {
    /// `m` in `a_m |z|^{2m}`.
    pub power: u32,
    pub coeff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum WeightBody {
    Polynomial(Vec<Monomial>),
    Radial(Vec<RadialTerm>),
}

#[derive(Clone, Debug)]
struct PolyDerivatives {
    grad: Vec<Vec<Monomial>>,
    hess: Vec<Vec<Vec<Monomial>>>,
}

/// Value, gradient and real Hessian at a point.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub value: f64,
    pub grad: [f64; 4],
    pub hess: [[f64; 4]; 4],
}

#[derive(Clone, Debug)]
pub struct WeightSpec {
    n: usize,
    body: WeightBody,
    offset: f64,
    label: Option<String>,
    psh_verified: bool,
    derivs: Option<PolyDerivatives>,
}

impl WeightSpec {
    pub fn polynomial(n: usize, monomials: Vec<Monomial>) -> Result<Self> {
        check_dim(n)?;
        let mut merged: BTreeMap<[u32; 4], f64> = BTreeMap::new();
        let mut offset = 0.0;
        for m in monomials {
            if !m.coeff.is_finite() {
                return Err(Error::InvalidWeight("non-finite coefficient".into()));
            }
            for (v, &e) in m.exponents.iter().enumerate() {
                if e > 0 && v >= 2 * n {
                    return Err(Error::InvalidWeight(format!(
                        "variable {} not available for n = {n}",
                        VAR_NAMES[v]
                    )));
                }
            }
            if m.degree() == 0 {
                offset += m.coeff;
            } else {
                *merged.entry(m.exponents).or_insert(0.0) += m.coeff;
            }
        }
        let monomials: Vec<Monomial> = merged
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(exponents, coeff)| Monomial { coeff, exponents })
            .collect();
        let degree = monomials.iter().map(Monomial::degree).max().unwrap_or(0);
        if degree < 2 {
            return Err(Error::InvalidWeight(format!(
                "polynomial weight must have degree at least 2, got {degree}"
            )));
        }
        let derivs = Some(poly_derivatives(&monomials));
        Ok(Self {
            n,
            body: WeightBody::Polynomial(monomials),
            offset,
            label: None,
            psh_verified: false,
            derivs,
        })
    }

    pub fn radial(n: usize, terms: Vec<RadialTerm>) -> Result<Self> {
        check_dim(n)?;
        let mut merged: BTreeMap<u32, f64> = BTreeMap::new();
        let mut offset = 0.0;
        for t in terms {
            if !t.coeff.is_finite() {
                return Err(Error::InvalidWeight("non-finite coefficient".into()));
            }
            if t.power == 0 {
                offset += t.coeff;
            } else {
                *merged.entry(t.power).or_insert(0.0) += t.coeff;
            }
        }
        let terms: Vec<RadialTerm> = merged
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(power, coeff)| RadialTerm { power, coeff })
            .collect();
        if !terms.iter().any(|t| t.coeff > 0.0) {
            return Err(Error::InvalidWeight(
                "radial weight needs at least one positive coefficient".into(),
            ));
        }
        Ok(Self {
            n,
            body: WeightBody::Radial(terms),
            offset,
            label: None,
            psh_verified: false,
            derivs: None,
        })
    }

    /// `|z|²` on ℂⁿ.
    pub fn fock(n: usize) -> Result<Self> {
        let mut w = Self::radial(n, vec![RadialTerm { power: 1, coeff: 1.0 }])?;
        w.label = Some("fock".into());
        Ok(w)
    }

    /// `|z|⁴` on ℂⁿ.
    pub fn quartic(n: usize) -> Result<Self> {
        let mut w = Self::radial(n, vec![RadialTerm { power: 2, coeff: 1.0 }])?;
        w.label = Some("quartic".into());
        Ok(w)
    }

    /// Parses the weight DSL: `fock`, `quartic`, `poly: ...` or `radial: ...`.
    pub fn parse(text: &str, n: usize) -> Result<Self> {
        check_dim(n)?;
        let trimmed = text.trim();
        match trimmed {
            "fock" => return Self::fock(n),
            "quartic" => return Self::quartic(n),
            _ => {}
        }
        let mut parser = Parser::new(text);
        let head = parser.expect_ident()?;
        if head.text != "poly" && head.text != "radial" {
            return Err(parser.error_at(
                head.pos,
                format!("expected `poly`, `radial`, `fock` or `quartic`, found `{}`", head.text),
            ));
        }
        parser.expect(Tok::Colon)?;
        let w = match head.text.as_str() {
            "poly" => {
                let monos = parser.poly_terms()?;
                Self::polynomial(n, monos)
            }
            "radial" => {
                let terms = parser.radial_terms()?;
                Self::radial(n, terms)
            }
            _ => unreachable!(),
        };
        // variable/dimension mismatches surface without a position; attach the head's
        w.map_err(|e| match e {
            Error::InvalidWeight(msg) => Error::Parse {
                line: head.pos.0,
                column: head.pos.1,
                message: msg,
            },
            other => other,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn body(&self) -> &WeightBody {
        &self.body
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn is_radial(&self) -> bool {
        matches!(self.body, WeightBody::Radial(_))
    }

    pub fn psh_verified(&self) -> bool {
        self.psh_verified
    }

    /// Returns the same weight shifted by a constant.
    pub fn shifted(&self, c: f64) -> Self {
        let mut w = self.clone();
        w.offset += c;
        w.label = None;
        w
    }

    /// Degree of the polynomial in real coordinates.
    pub fn degree(&self) -> u32 {
        match &self.body {
            WeightBody::Polynomial(m) => m.iter().map(Monomial::degree).max().unwrap_or(0),
            WeightBody::Radial(t) => t.iter().map(|t| 2 * t.power).max().unwrap_or(0),
        }
    }

    /// Non-constant part of `φ` as monomials in real coordinates, expanding
    /// radial forms with multinomial coefficients.
    pub fn monomials(&self) -> Vec<Monomial> {
        match &self.body {
            WeightBody::Polynomial(m) => m.clone(),
            WeightBody::Radial(terms) => {
                let vars = 2 * self.n;
                let mut merged: BTreeMap<[u32; 4], f64> = BTreeMap::new();
                for t in terms {
                    let mut parts = [0u32; 4];
                    expand_power(t.power, vars, 0, &mut parts, &mut |k| {
                        let mut coeff = t.coeff * factorial(t.power);
                        let mut exponents = [0u32; 4];
                        for v in 0..vars {
                            coeff /= factorial(k[v]);
                            exponents[v] = 2 * k[v];
                        }
                        *merged.entry(exponents).or_insert(0.0) += coeff;
                    });
                }
                merged.into_iter().map(|(exponents, coeff)| Monomial { coeff, exponents }).collect()
            }
        }
    }

    fn check_point(&self, p: &PointC) {
        debug_assert_eq!(p.n, self.n, "point dimension does not match weight");
    }

    pub fn eval(&self, p: &PointC) -> f64 {
        self.check_point(p);
        match &self.body {
            WeightBody::Polynomial(m) => self.offset + m.iter().map(|m| m.eval(&p.coords)).sum::<f64>(),
            WeightBody::Radial(t) => {
                let s = p.norm_sq();
                self.offset + t.iter().map(|t| t.coeff * s.powi(t.power as i32)).sum::<f64>()
            }
        }
    }

    pub fn gradient(&self, p: &PointC) -> Vec<f64> {
        self.jet(p).grad[..2 * self.n].to_vec()
    }

    pub fn laplacian(&self, p: &PointC) -> f64 {
        let j = self.jet(p);
        (0..2 * self.n).map(|i| j.hess[i][i]).sum()
    }

    /// `∂φ/∂z_j` with `j` counted from 1.
    pub fn wirtinger_z(&self, p: &PointC, j: usize) -> Result<Complex64> {
        if j == 0 || j > self.n {
            return Err(Error::IndexOutOfRange { index: j, n: self.n });
        }
        let g = self.jet(p).grad;
        Ok(Complex64::new(0.5 * g[2 * (j - 1)], -0.5 * g[2 * (j - 1) + 1]))
    }

    pub fn levi_matrix(&self, p: &PointC) -> LeviMatrix {
        LeviMatrix::from_hessian(&self.jet(p).hess, self.n)
    }

    pub fn lowest_levi_eigenvalue(&self, p: &PointC) -> f64 {
        self.levi_matrix(p).lowest_eigenvalue()
    }

    /// Value, gradient and Hessian in one pass.
    pub fn jet(&self, p: &PointC) -> Jet {
        self.check_point(p);
        let d = 2 * self.n;
        let mut grad = [0.0; 4];
        let mut hess = [[0.0; 4]; 4];
        match &self.body {
            WeightBody::Polynomial(_) => {
                let derivs = self.derivs.as_ref().expect("polynomial derivatives");
                for i in 0..d {
                    grad[i] = derivs.grad[i].iter().map(|m| m.eval(&p.coords)).sum();
                    for k in i..d {
                        let v: f64 = derivs.hess[i][k].iter().map(|m| m.eval(&p.coords)).sum();
                        hess[i][k] = v;
                        hess[k][i] = v;
                    }
                }
            }
            WeightBody::Radial(terms) => {
                let s = p.norm_sq();
                let (mut f1, mut f2) = (0.0, 0.0);
                for t in terms {
                    let m = t.power as i32;
                    f1 += t.coeff * m as f64 * s.powi(m - 1);
                    if m >= 2 {
                        f2 += t.coeff * (m * (m - 1)) as f64 * s.powi(m - 2);
                    }
                }
                let c = &p.coords;
                for i in 0..d {
                    grad[i] = 2.0 * c[i] * f1;
                    for k in 0..d {
                        hess[i][k] = 4.0 * c[i] * c[k] * f2 + if i == k { 2.0 * f1 } else { 0.0 };
                    }
                }
            }
        }
        Jet {
            value: self.eval(p),
            grad,
            hess,
        }
    }

    /// Samples the lowest Levi eigenvalue on spheres of the given radii.
    pub fn sample_psh(&self, radii: &[f64], directions: usize) -> PshReport {
        let dirs = sphere_directions(self.n, directions.max(1));
        let mut min_lambda = f64::INFINITY;
        let mut argmin = PointC::from_array([0.0; 4], self.n);
        let mut points = 0;
        let origin = PointC::from_array([0.0; 4], self.n);
        for p in std::iter::once(origin).chain(
            radii
                .iter()
                .flat_map(|&r| dirs.iter().map(move |d| d.scaled(r))),
        ) {
            let l = self.lowest_levi_eigenvalue(&p);
            points += 1;
            if l < min_lambda {
                min_lambda = l;
                argmin = p;
            }
        }
        PshReport {
            min_lambda,
            argmin,
            points,
            verified: min_lambda >= -TOL_PSH,
        }
    }

    /// Runs [`Self::sample_psh`] and sets the `psh_verified` flag on success.
    pub fn verify_psh(mut self, radii: &[f64], directions: usize) -> (Self, PshReport) {
        let report = self.sample_psh(radii, directions);
        self.psh_verified = report.verified;
        (self, report)
    }
}

impl fmt::Display for WeightSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(label) = &self.label {
            return f.write_str(label);
        }
        let mut parts: Vec<(f64, String)> = Vec::new();
        match &self.body {
            WeightBody::Polynomial(monos) => {
                f.write_str("poly: ")?;
                for m in monos {
                    let vars: Vec<String> = m
                        .exponents
                        .iter()
                        .enumerate()
                        .filter(|(_, &e)| e > 0)
                        .map(|(v, e)| format!("{}^{e}", VAR_NAMES[v]))
                        .collect();
                    parts.push((m.coeff, format!("{} * {}", m.coeff.abs(), vars.join(" "))));
                }
            }
            WeightBody::Radial(terms) => {
                f.write_str("radial: ")?;
                for t in terms {
                    parts.push((t.coeff, format!("{}*r2^{}", t.coeff.abs(), t.power)));
                }
            }
        }
        if self.offset != 0.0 {
            parts.push((self.offset, format!("{}", self.offset.abs())));
        }
        for (i, (c, text)) in parts.iter().enumerate() {
            match (i, *c < 0.0) {
                (0, true) => write!(f, "-{text}")?,
                (0, false) => f.write_str(text)?,
                (_, true) => write!(f, " - {text}")?,
                (_, false) => write!(f, " + {text}")?,
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PshReport {
    pub min_lambda: f64,
    pub argmin: PointC,
    pub points: usize,
    pub verified: bool,
}

impl PshReport {
    pub const NOTE: &'static str = "sampled, not certified";
}

fn check_dim(n: usize) -> Result<()> {
    if n == 1 || n == 2 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("dimension n must be 1 or 2, got {n}")))
    }
}

fn poly_derivatives(monos: &[Monomial]) -> PolyDerivatives {
    let diff = |list: &[Monomial], v: usize| -> Vec<Monomial> {
        list.iter().filter_map(|m| m.differentiate(v)).collect()
    };
    let grad: Vec<Vec<Monomial>> = (0..4).map(|v| diff(monos, v)).collect();
    let hess = (0..4)
        .map(|i| (0..4).map(|k| diff(&grad[i], k)).collect())
        .collect();
    PolyDerivatives { grad, hess }
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// Calls `f` with every split of `m` into `vars` non-negative parts.
fn expand_power(m: u32, vars: usize, v: usize, parts: &mut [u32; 4], f: &mut dyn FnMut(&[u32; 4])) {
    if v + 1 == vars {
        parts[v] = m;
        f(parts);
        return;
    }
    for k in 0..=m {
        parts[v] = k;
        expand_power(m - k, vars, v + 1, parts, f);
    }
    parts[v] = 0;
}

/// Unit directions on the sphere in ℂⁿ.
///
/// For n = 1 these are `d` equally spaced angles. For n = 2 they form a
/// product grid of 8 phases and `d / 8` splitting angles between `z1` and `z2`,
/// including both coordinate axes when at least two splits are requested.
pub fn sphere_directions(n: usize, d: usize) -> Vec<PointC> {
    if n == 1 {
        return (0..d)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / d as f64;
                PointC::from_array([t.cos(), t.sin(), 0.0, 0.0], 1)
            })
            .collect();
    }
    let phases = 8.min(d).max(1);
    let splits = (d / phases).max(1);
    let mut out = Vec::with_capacity(phases * splits);
    for a in 0..splits {
        let alpha = if splits == 1 {
            PI / 4.0
        } else {
            0.5 * PI * a as f64 / (splits - 1) as f64
        };
        for i in 0..phases {
            let t = 2.0 * PI * i as f64 / phases as f64;
            let t2 = 3.0 * t + PI / 8.0;
            out.push(PointC::from_array(
                [
                    alpha.cos() * t.cos(),
                    alpha.cos() * t.sin(),
                    alpha.sin() * t2.cos(),
                    alpha.sin() * t2.sin(),
                ],
                2,
            ));
        }
    }
    out
}

/// n×n Hermitian matrix of `∂²φ/∂z_j∂z̄_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LeviMatrix {
    n: usize,
    entries: [[Complex64; 2]; 2],
}

impl LeviMatrix {
    fn from_hessian(h: &[[f64; 4]; 4], n: usize) -> Self {
        let mut entries = [[Complex64::new(0.0, 0.0); 2]; 2];
        for j in 0..n {
            for k in 0..n {
                let (xj, yj, xk, yk) = (2 * j, 2 * j + 1, 2 * k, 2 * k + 1);
                entries[j][k] = Complex64::new(
                    0.25 * (h[xj][xk] + h[yj][yk]),
                    0.25 * (h[xj][yk] - h[yj][xk]),
                );
            }
        }
        Self { n, entries }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, k: usize) -> Complex64 {
        self.entries[j][k]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|j| self.entries[j][j].re).sum()
    }

    /// Largest entrywise deviation from Hermitian symmetry.
    pub fn hermitian_defect(&self) -> f64 {
        let mut d: f64 = 0.0;
        for j in 0..self.n {
            for k in 0..self.n {
                d = d.max((self.entries[j][k] - self.entries[k][j].conj()).norm());
            }
        }
        d
    }

    pub fn lowest_eigenvalue(&self) -> f64 {
        if self.n == 1 {
            return self.entries[0][0].re;
        }
        let a = self.entries[0][0].re;
        let d = self.entries[1][1].re;
        let b = self.entries[0][1];
        let half_gap = 0.5 * (a - d);
        0.5 * (a + d) - (half_gap * half_gap + b.norm_sqr()).sqrt()
    }

    /// `⟨M u, u⟩` for a vector of form coefficients.
    pub fn quadratic_form(&self, u: &[Complex64]) -> f64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..self.n {
            for k in 0..self.n {
                acc += self.entries[j][k] * u[k] * u[j].conj();
            }
        }
        acc.re
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident,
    Caret,
    Star,
    Plus,
    Minus,
    Colon,
    End,
}

#[derive(Clone, Debug)]
struct Token {
    tok: Tok,
    text: String,
    pos: (usize, usize),
}

struct Parser {
    tokens: Vec<Token>,
    at: usize,
    lex_error: Option<Error>,
}

impl Parser {
    fn new(text: &str) -> Self {
        let mut tokens = Vec::new();
        let mut lex_error = None;
        let chars: Vec<char> = text.chars().collect();
        let (mut line, mut col) = (1usize, 1usize);
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let pos = (line, col);
            if c == '\n' {
                line += 1;
                col = 1;
                i += 1;
                continue;
            }
            if c.is_whitespace() {
                i += 1;
                col += 1;
                continue;
            }
            let single = match c {
                '^' => Some(Tok::Caret),
                '*' => Some(Tok::Star),
                '+' => Some(Tok::Plus),
                '-' => Some(Tok::Minus),
                ':' => Some(Tok::Colon),
                _ => None,
            };
            if let Some(tok) = single {
                tokens.push(Token { tok, text: c.to_string(), pos });
                i += 1;
                col += 1;
                continue;
            }
            let start = i;
            if c.is_ascii_digit() || c == '.' {
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    i += 1;
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        i = j;
                        while i < chars.len() && chars[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let s: String = chars[start..i].iter().collect();
                match s.parse::<f64>() {
                    Ok(v) => tokens.push(Token { tok: Tok::Num(v), text: s, pos }),
                    Err(_) => {
                        lex_error.get_or_insert(Error::Parse {
                            line,
                            column: col,
                            message: format!("malformed number `{s}`"),
                        });
                    }
                }
                col += i - start;
                continue;
            }
            if c.is_ascii_alphabetic() || c == '_' {
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                let s: String = chars[start..i].iter().collect();
                tokens.push(Token { tok: Tok::Ident, text: s, pos });
                col += i - start;
                continue;
            }
            lex_error.get_or_insert(Error::Parse {
                line,
                column: col,
                message: format!("unexpected character `{c}`"),
            });
            i += 1;
            col += 1;
        }
        tokens.push(Token { tok: Tok::End, text: String::new(), pos: (line, col) });
        Self { tokens, at: 0, lex_error }
    }

    fn peek(&self) -> &Token {
        &self.tokens[self.at]
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.at].clone();
        if self.at + 1 < self.tokens.len() {
            self.at += 1;
        }
        t
    }

    fn error_at(&self, pos: (usize, usize), message: String) -> Error {
        Error::Parse { line: pos.0, column: pos.1, message }
    }

    fn unexpected(&self, what: &str) -> Error {
        let t = self.peek();
        let found = if t.tok == Tok::End { "end of input".to_string() } else { format!("`{}`", t.text) };
        self.error_at(t.pos, format!("expected {what}, found {found}"))
    }

    fn check_lex(&mut self) -> Result<()> {
        match self.lex_error.take() {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }

    fn expect_ident(&mut self) -> Result<Token> {
        self.check_lex()?;
        if self.peek().tok == Tok::Ident {
            Ok(self.bump())
        } else {
            Err(self.unexpected("a weight kind"))
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<Token> {
        if self.peek().tok == tok {
            Ok(self.bump())
        } else {
            Err(self.unexpected(&format!("{tok:?}").to_lowercase()))
        }
    }

    fn sign(&mut self, first: bool) -> Result<Option<f64>> {
        match self.peek().tok {
            Tok::Plus => {
                self.bump();
                Ok(Some(1.0))
            }
            Tok::Minus => {
                self.bump();
                Ok(Some(-1.0))
            }
            Tok::End if !first => Ok(None),
            _ if first => Ok(Some(1.0)),
            _ => Err(self.unexpected("`+`, `-` or end of input")),
        }
    }

    fn exponent(&mut self) -> Result<u32> {
        if self.peek().tok != Tok::Caret {
            return Ok(1);
        }
        self.bump();
        let t = self.peek().clone();
        match t.tok {
            Tok::Num(v) if v >= 0.0 && v.fract() == 0.0 && v <= 64.0 && !t.text.contains('.') => {
                self.bump();
                Ok(v as u32)
            }
            _ => Err(self.unexpected("a non-negative integer exponent")),
        }
    }

    fn coefficient(&mut self) -> Option<f64> {
        if let Tok::Num(v) = self.peek().tok {
            self.bump();
            if self.peek().tok == Tok::Star {
                self.bump();
            }
            Some(v)
        } else {
            None
        }
    }

    fn poly_terms(&mut self) -> Result<Vec<Monomial>> {
        let mut out = Vec::new();
        let mut first = true;
        while let Some(sign) = self.sign(first)? {
            first = false;
            let coeff = self.coefficient();
            let mut exponents = [0u32; 4];
            let mut factors = 0;
            while self.peek().tok == Tok::Ident {
                let t = self.bump();
                let var = VAR_NAMES
                    .iter()
                    .position(|v| *v == t.text)
                    .ok_or_else(|| self.error_at(t.pos, format!("unknown variable `{}`", t.text)))?;
                exponents[var] += self.exponent()?;
                factors += 1;
                if self.peek().tok == Tok::Star {
                    self.bump();
                    if self.peek().tok != Tok::Ident {
                        return Err(self.unexpected("a variable after `*`"));
                    }
                }
            }
            if coeff.is_none() && factors == 0 {
                return Err(self.unexpected("a coefficient or variable"));
            }
            out.push(Monomial {
                coeff: sign * coeff.unwrap_or(1.0),
                exponents,
            });
        }
        Ok(out)
    }

    fn radial_terms(&mut self) -> Result<Vec<RadialTerm>> {
        let mut out = Vec::new();
        let mut first = true;
        while let Some(sign) = self.sign(first)? {
            first = false;
            let coeff = self.coefficient();
            let power = if self.peek().tok == Tok::Ident {
                let t = self.bump();
                if t.text != "r2" {
                    return Err(self.error_at(t.pos, format!("expected `r2`, found `{}`", t.text)));
                }
                self.exponent()?
            } else if coeff.is_some() {
                0
            } else {
                return Err(self.unexpected("a coefficient or `r2`"));
            };
            out.push(RadialTerm {
                power,
                coeff: sign * coeff.unwrap_or(1.0),
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn radial_monomial_expansion_matches_eval() {
        let w = WeightSpec::parse("radial: 0.5*r2 + 2*r2^3", 2).unwrap();
        let monos = w.monomials();
        let p = PointC::new(&[0.3, -1.1, 0.7, 0.2]).unwrap();
        let direct: f64 = monos
            .iter()
            .map(|m| m.coeff * p.coords().iter().zip(&m.exponents).map(|(x, &e)| x.powi(e as i32)).product::<f64>())
            .sum();
        assert!((direct - w.eval(&p)).abs() < 1e-12 * w.eval(&p));
        assert_eq!(WeightSpec::fock(1).unwrap().monomials().len(), 2);
    }

    fn pt(c: &[f64]) -> PointC {
        PointC::new(c).unwrap()
    }

    #[test]
    fn eval_examples() {
        let fock = WeightSpec::fock(1).unwrap();
        assert_eq!(fock.eval(&pt(&[1.0, 1.0])), 2.0);
        let quartic = WeightSpec::quartic(1).unwrap();
        assert_eq!(quartic.eval(&pt(&[1.0, 0.0])), 1.0);
        let fock2 = WeightSpec::fock(2).unwrap();
        assert_eq!(fock2.eval(&pt(&[0.0, 1.0, 1.0, 0.0])), 2.0);
    }

    #[test]
    fn gradient_examples() {
        assert_eq!(WeightSpec::fock(1).unwrap().gradient(&pt(&[1.0, 1.0])), vec![2.0, 2.0]);
        assert_eq!(WeightSpec::quartic(1).unwrap().gradient(&pt(&[1.0, 0.0])), vec![4.0, 0.0]);
    }

    #[test]
    fn laplacian_examples() {
        assert_eq!(WeightSpec::fock(1).unwrap().laplacian(&pt(&[0.3, -2.0])), 4.0);
        assert_eq!(WeightSpec::fock(2).unwrap().laplacian(&pt(&[0.3, -2.0, 1.0, 5.0])), 8.0);
        // 16 r² from the second difference of r⁴ along both axes
        let q = WeightSpec::quartic(1).unwrap();
        let h = 1e-3;
        let f = |x: f64, y: f64| q.eval(&pt(&[x, y]));
        let fd = (f(1.0 + h, 0.0) + f(1.0 - h, 0.0) + f(1.0, h) + f(1.0, -h) - 4.0 * f(1.0, 0.0)) / (h * h);
        assert!((fd - 16.0).abs() < 1e-4);
        assert_eq!(q.laplacian(&pt(&[1.0, 0.0])), 16.0);
    }

    #[test]
    fn wirtinger_examples() {
        let fock = WeightSpec::fock(1).unwrap();
        assert_eq!(fock.wirtinger_z(&pt(&[1.0, 1.0]), 1).unwrap(), Complex64::new(1.0, -1.0));
        let q = WeightSpec::quartic(1).unwrap();
        // 2|z|² z̄ at z = 1
        assert_eq!(q.wirtinger_z(&pt(&[1.0, 0.0]), 1).unwrap(), Complex64::new(2.0, 0.0));
        assert!(matches!(
            fock.wirtinger_z(&pt(&[1.0, 1.0]), 2),
            Err(Error::IndexOutOfRange { index: 2, n: 1 })
        ));
        assert!(fock.wirtinger_z(&pt(&[1.0, 1.0]), 0).is_err());
        let a = q.wirtinger_z(&pt(&[0.7, 0.4]), 1).unwrap();
        let b = q.wirtinger_z(&pt(&[0.7, -0.4]), 1).unwrap();
        assert!((a - b.conj()).norm() < 1e-15);
    }

    #[test]
    fn levi_examples() {
        let fock = WeightSpec::fock(1).unwrap();
        assert_eq!(fock.levi_matrix(&pt(&[0.2, 0.1])).get(0, 0), Complex64::new(1.0, 0.0));
        let q = WeightSpec::quartic(1).unwrap();
        assert_eq!(q.levi_matrix(&pt(&[1.0, 0.0])).get(0, 0).re, 4.0);
        let f2 = WeightSpec::fock(2).unwrap();
        let m = f2.levi_matrix(&pt(&[1.0, 2.0, -3.0, 0.5]));
        assert_eq!(m.get(0, 0).re, 1.0);
        assert_eq!(m.get(1, 1).re, 1.0);
        assert_eq!(m.get(0, 1).norm(), 0.0);
        assert_eq!(m.trace(), 2.0);
        assert_eq!(m.trace(), f2.laplacian(&pt(&[1.0, 2.0, -3.0, 0.5])) / 4.0);
    }

    #[test]
    fn lowest_eigenvalue_examples() {
        let fock = WeightSpec::fock(1).unwrap();
        assert_eq!(fock.lowest_levi_eigenvalue(&pt(&[3.0, -1.0])), 1.0);
        let z1 = WeightSpec::parse("poly: x1^2 + y1^2", 2).unwrap();
        assert_eq!(z1.lowest_levi_eigenvalue(&pt(&[1.0, 2.0, 3.0, 4.0])), 0.0);
        let q = WeightSpec::quartic(1).unwrap();
        assert_eq!(q.lowest_levi_eigenvalue(&pt(&[2.0, 0.0])), 16.0);
        let mixed = WeightSpec::parse("poly: x1^2 + y1^2 + x2^4 + 2 x2^2 y2^2 + y2^4", 2).unwrap();
        let p = pt(&[0.5, 0.0, 3.0, 0.0]);
        // diag(1, 4|z2|²)
        assert!((mixed.lowest_levi_eigenvalue(&p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dsl_presets_and_forms() {
        let a = WeightSpec::parse("radial: 1*r2^1", 1).unwrap();
        let b = WeightSpec::parse("  fock ", 1).unwrap();
        let p = pt(&[0.3, 0.9]);
        assert_eq!(a.eval(&p), b.eval(&p));
        let c = WeightSpec::parse("poly: x1^2 + y1^2", 1).unwrap();
        assert_eq!(a.eval(&p), c.eval(&p));
        let d = WeightSpec::parse("radial: r2^2 + 0.5 * r2 + 3", 1).unwrap();
        assert!((d.eval(&p) - (0.9_f64.powi(2) + 0.5 * 0.9 + 3.0)).abs() < 1e-14);
        assert_eq!(d.offset(), 3.0);
        let e = WeightSpec::parse("poly: -1.5e0 * x1 y1 + 2*x1^2*y1^2 + y1^2", 1).unwrap();
        let (x, y) = (0.3, 0.9);
        let want = -1.5 * x * y + 2.0 * x * x * y * y + y * y;
        assert!((e.eval(&p) - want).abs() < 1e-14);
    }

    #[test]
    fn dsl_errors_carry_positions() {
        let err = WeightSpec::parse("poly: x1^2 +\n  3 * z1^2", 1).unwrap_err();
        match err {
            Error::Parse { line, column, .. } => assert_eq!((line, column), (2, 7)),
            other => panic!("unexpected {other:?}"),
        }
        let err = WeightSpec::parse("poly: x1^2 $", 1).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: 12, .. }));
        let err = WeightSpec::parse("poly: x1^2.5", 1).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: 10, .. }));
        let err = WeightSpec::parse("cubic", 1).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, column: 1, .. }));
        assert!(WeightSpec::parse("poly: x2^2 + x1^2", 1).is_err());
        assert!(WeightSpec::parse("radial: r3^2", 1).is_err());
    }

    #[test]
    fn rejects_degenerate_weights() {
        assert!(WeightSpec::parse("poly: x1 + 3", 1).is_err());
        assert!(WeightSpec::parse("poly: 7", 1).is_err());
        assert!(WeightSpec::parse("radial: -1*r2^2", 1).is_err());
        assert!(WeightSpec::parse("radial: 4", 1).is_err());
        assert!(WeightSpec::polynomial(
            1,
            vec![Monomial { coeff: f64::NAN, exponents: [2, 0, 0, 0] }]
        )
        .is_err());
        assert!(WeightSpec::fock(3).is_err());
    }

    #[test]
    fn display_round_trips() {
        for (text, n) in [
            ("poly: x1^2 - 0.25 * x1 y1 + y1^4", 1),
            ("radial: 0.5*r2 + 2*r2^3 + 1", 2),
            ("poly: x1^2 y2^2 + x2^2", 2),
        ] {
            let w = WeightSpec::parse(text, n).unwrap();
            let again = WeightSpec::parse(&w.to_string(), n).unwrap();
            assert_eq!(w.body(), again.body());
            assert_eq!(w.offset(), again.offset());
        }
    }

    #[test]
    fn psh_sampling() {
        let (w, r) = WeightSpec::quartic(2).unwrap().verify_psh(&[1.0, 2.0, 4.0], 32);
        assert!(r.verified && w.psh_verified());
        assert_eq!(r.points, 1 + 3 * 32);
        let (w, r) = WeightSpec::parse("poly: x1^2 - y1^4", 1).unwrap().verify_psh(&[1.0, 2.0], 16);
        assert!(!r.verified && !w.psh_verified());
        assert!(r.min_lambda < -1.0);
    }
}
