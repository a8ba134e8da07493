//! Sampling checks for the asymptotic conditions on a weight: a positive
//! lower bound of the lowest Levi eigenvalue at infinity, its divergence, and
//! divergence of `θ|∇φ|² + Δφ`.
//!
//! Verdicts combine per-shell minima with the exact leading term of the tested
//! quantity along each sampled ray. They are empirical.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::weight::{sphere_directions, Monomial, PointC, WeightSpec};

pub const DEFAULT_TAU: f64 = 1e-3;
pub const DEFAULT_DIRECTIONS: usize = 32;
/// Coefficients below this fraction of the largest one count as cancelled.
const COEFF_TOL: f64 = 1e-12;

pub const LIMITATION: &str =
    "sampled shells and finitely many rays; mixed terms may behave differently off the sampled rays";

/// `Ψ = |∇φ|² + (1 + ε) Δφ`.
pub fn psi(w: &WeightSpec, p: &PointC, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    let g = w.gradient(p);
    Ok(g.iter().map(|x| x * x).sum::<f64>() + (1.0 + eps) * w.laplacian(p))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSamplingPlan {
    radii: Vec<f64>,
    directions: usize,
    tau: f64,
    theta: f64,
    epsilon: f64,
}

impl AsymptoticSamplingPlan {
    pub fn new(radii: Vec<f64>, directions: usize, tau: f64, theta: f64, epsilon: f64) -> Result<Self> {
        if radii.is_empty() || radii.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(Error::InvalidParameter("radii must be positive and finite".into()));
        }
        if radii.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidParameter("radii must be strictly increasing".into()));
        }
        if directions < 8 {
            return Err(Error::InvalidParameter(format!("need at least 8 directions, got {directions}")));
        }
        if !(tau > 0.0) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")));
        }
        if !(theta > 0.0 && theta < 1.0) {
            return Err(Error::InvalidParameter(format!("theta must lie in (0, 1), got {theta}")));
        }
        if !(epsilon > 0.0) {
            return Err(Error::InvalidParameter(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self { radii, directions, tau, theta, epsilon })
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn directions(&self) -> usize {
        self.directions
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_theta(mut self, theta: f64) -> Result<Self> {
        self.theta = theta;
        Self::new(self.radii, self.directions, self.tau, self.theta, self.epsilon)
    }
}

impl Default for AsymptoticSamplingPlan {
    /// Radii `2, 4, …, 256`, 32 directions, `τ = 1e−3`, `θ = 0.5`, `ε = 1`.
    fn default() -> Self {
        Self {
            radii: (1..=8).map(|k| 2f64.powi(k)).collect(),
            directions: DEFAULT_DIRECTIONS,
            tau: DEFAULT_TAU,
            theta: 0.5,
            epsilon: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    HoldsEmpirically,
    FailsEmpirically,
    Inconclusive,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::HoldsEmpirically => "holds-empirically",
            Self::FailsEmpirically => "fails-empirically",
            Self::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// `liminf λ_φ > 0`.
    LeviBounded,
    /// `λ_φ → ∞`.
    LeviDivergent,
    /// `θ|∇φ|² + Δφ → ∞`.
    Rellich,
}

impl Condition {
    fn label(self) -> &'static str {
        match self {
            Self::LeviBounded => "levi_liminf_positive",
            Self::LeviDivergent => "levi_divergent",
            Self::Rellich => "rellich",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShellMinimum {
    #[serde(rename = "R")]
    pub radius: f64,
    pub min: f64,
    pub argmin: Vec<f64>,
    /// Threshold the minimum was compared against.
    pub threshold: f64,
}

/// Asymptotics `c · t^degree` of the tested quantity along `t · direction`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeadingTerm {
    pub direction: Vec<f64>,
    /// `None` when the quantity vanishes identically on the ray.
    pub degree: Option<f64>,
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Witness {
    pub point: Vec<f64>,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: String,
    pub verdict: Verdict,
    pub shells: Vec<ShellMinimum>,
    pub leading_terms: Vec<LeadingTerm>,
    pub witness: Option<Witness>,
    pub note: String,
}

/// Univariate polynomial, coefficient `k` of `t^k`.
#[derive(Clone, Debug, Default)]
struct Poly(Vec<f64>);

impl Poly {
    fn on_ray(monos: &[Monomial], dir: &[f64; 4]) -> Self {
        let mut c = Vec::new();
        for m in monos {
            let d = m.degree() as usize;
            if c.len() <= d {
                c.resize(d + 1, 0.0);
            }
            let mut v = m.coeff;
            for (x, &e) in dir.iter().zip(&m.exponents) {
                v *= x.powi(e as i32);
            }
            c[d] += v;
        }
        Poly(c)
    }

    fn add(&self, o: &Poly, s: f64) -> Poly {
        let mut c = vec![0.0; self.0.len().max(o.0.len())];
        for (i, v) in self.0.iter().enumerate() {
            c[i] += v;
        }
        for (i, v) in o.0.iter().enumerate() {
            c[i] += s * v;
        }
        Poly(c)
    }

    fn mul(&self, o: &Poly) -> Poly {
        if self.0.is_empty() || o.0.is_empty() {
            return Poly::default();
        }
        let mut c = vec![0.0; self.0.len() + o.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in o.0.iter().enumerate() {
                c[i + j] += a * b;
            }
        }
        Poly(c)
    }

    fn scale(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|v| v * s).collect())
    }

    /// Highest surviving term `(degree, coefficient)`.
    fn leading(&self) -> Option<(usize, f64)> {
        let max = self.0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if max == 0.0 {
            return None;
        }
        self.0.iter().enumerate().rev().find(|(_, v)| v.abs() > COEFF_TOL * max).map(|(k, &v)| (k, v))
    }
}

struct RayCalculus {
    grad: Vec<Vec<Monomial>>,
    hess: Vec<Vec<Vec<Monomial>>>,
    n: usize,
}

impl RayCalculus {
    fn new(w: &WeightSpec) -> Self {
        let vars = 2 * w.dim();
        let monos = w.monomials();
        let d = |ms: &[Monomial], v: usize| -> Vec<Monomial> { ms.iter().filter_map(|m| m.differentiate(v)).collect() };
        let grad: Vec<Vec<Monomial>> = (0..vars).map(|v| d(&monos, v)).collect();
        let hess = (0..vars).map(|a| (0..vars).map(|b| d(&grad[a], b)).collect()).collect();
        Self { grad, hess, n: w.dim() }
    }

    fn hess(&self, a: usize, b: usize, dir: &[f64; 4]) -> Poly {
        Poly::on_ray(&self.hess[a][b], dir)
    }

    fn laplacian(&self, dir: &[f64; 4]) -> Poly {
        (0..2 * self.n).fold(Poly::default(), |acc, a| acc.add(&self.hess(a, a, dir), 1.0))
    }

    fn grad_sq(&self, dir: &[f64; 4]) -> Poly {
        (0..2 * self.n).fold(Poly::default(), |acc, a| {
            let g = Poly::on_ray(&self.grad[a], dir);
            acc.add(&g.mul(&g), 1.0)
        })
    }

    /// Leading behaviour of the lowest Levi eigenvalue along the ray.
    fn levi_leading(&self, dir: &[f64; 4]) -> (Option<f64>, f64) {
        if self.n == 1 {
            return as_leading(self.laplacian(dir).scale(0.25).leading());
        }
        // entry (j, k): ¼(φ_{x_j x_k} + φ_{y_j y_k}) + (i/4)(φ_{x_j y_k} − φ_{y_j x_k})
        let a = self.hess(0, 0, dir).add(&self.hess(1, 1, dir), 1.0).scale(0.25);
        let b = self.hess(2, 2, dir).add(&self.hess(3, 3, dir), 1.0).scale(0.25);
        let cr = self.hess(0, 2, dir).add(&self.hess(1, 3, dir), 1.0).scale(0.25);
        let ci = self.hess(0, 3, dir).add(&self.hess(1, 2, dir), -1.0).scale(0.25);
        let tr = a.add(&b, 1.0);
        let det = a.mul(&b).add(&cr.mul(&cr), -1.0).add(&ci.mul(&ci), -1.0);
        match (det.leading(), tr.leading()) {
            (None, _) => (None, 0.0),
            (Some((kd, cd)), Some((kt, ct))) if ct > 0.0 => (Some(kd as f64 - kt as f64), cd / ct),
            (Some((kd, cd)), _) => (Some(kd as f64 / 2.0), -cd.abs().sqrt()),
        }
    }

    fn rellich_leading(&self, dir: &[f64; 4], theta: f64) -> (Option<f64>, f64) {
        as_leading(self.grad_sq(dir).scale(theta).add(&self.laplacian(dir), 1.0).leading())
    }
}

fn as_leading(l: Option<(usize, f64)>) -> (Option<f64>, f64) {
    match l {
        Some((k, c)) => (Some(k as f64), c),
        None => (None, 0.0),
    }
}

fn rellich_quantity(w: &WeightSpec, p: &PointC, theta: f64) -> f64 {
    let g = w.gradient(p);
    theta * g.iter().map(|x| x * x).sum::<f64>() + w.laplacian(p)
}

fn quantity(w: &WeightSpec, cond: Condition, p: &PointC, plan: &AsymptoticSamplingPlan) -> f64 {
    match cond {
        Condition::LeviBounded | Condition::LeviDivergent => w.lowest_levi_eigenvalue(p),
        Condition::Rellich => rellich_quantity(w, p, plan.theta),
    }
}

fn threshold(cond: Condition, radius: f64, tau: f64) -> f64 {
    match cond {
        Condition::LeviBounded => tau,
        // escalating: any bounded quantity eventually drops below τR²
        Condition::LeviDivergent | Condition::Rellich => tau * radius * radius,
    }
}

fn check(w: &WeightSpec, cond: Condition, plan: &AsymptoticSamplingPlan) -> ConditionReport {
    let dirs = sphere_directions(w.dim(), plan.directions);
    let shells: Vec<ShellMinimum> = plan
        .radii
        .par_iter()
        .map(|&r| {
            let mut best = (f64::INFINITY, 0usize);
            for (i, d) in dirs.iter().enumerate() {
                let v = quantity(w, cond, &d.scaled(r), plan);
                if v < best.0 || (v.is_nan() && !best.0.is_nan()) {
                    best = (v, i);
                }
            }
            ShellMinimum {
                radius: r,
                min: best.0,
                argmin: dirs[best.1].scaled(r).coords().to_vec(),
                threshold: threshold(cond, r, plan.tau),
            }
        })
        .collect();

    let calc = RayCalculus::new(w);
    let leading_terms: Vec<LeadingTerm> = dirs
        .iter()
        .map(|d| {
            let mut c = [0.0; 4];
            c[..d.coords().len()].copy_from_slice(d.coords());
            let (degree, coefficient) = match cond {
                Condition::LeviBounded | Condition::LeviDivergent => calc.levi_leading(&c),
                Condition::Rellich => calc.rellich_leading(&c, plan.theta),
            };
            LeadingTerm { direction: d.coords().to_vec(), degree, coefficient }
        })
        .collect();
    let rays_positive = leading_terms.iter().all(|t| match (cond, t.degree) {
        (_, None) => false,
        (Condition::LeviBounded, Some(k)) => t.coefficient > 0.0 && k >= 0.0,
        (_, Some(k)) => t.coefficient > 0.0 && k > 0.0,
    });

    let outer = &shells[shells.len() / 2..];
    let failing = outer.iter().rev().find(|s| !(s.min >= s.threshold));
    let monotone_tail = {
        let tol = |a: f64| 1e-12 * a.abs().max(1.0);
        let mut start = shells.len() - 1;
        while start > 0 && shells[start].min + tol(shells[start].min) >= shells[start - 1].min {
            start -= 1;
        }
        start + 1 < shells.len()
    };
    let (verdict, witness) = if let Some(s) = failing {
        (Verdict::FailsEmpirically, Some(Witness { point: s.argmin.clone(), value: s.min, threshold: s.threshold }))
    } else if rays_positive && monotone_tail {
        (Verdict::HoldsEmpirically, None)
    } else {
        (Verdict::Inconclusive, None)
    };
    ConditionReport {
        condition: cond.label().into(),
        verdict,
        shells,
        leading_terms,
        witness,
        note: LIMITATION.into(),
    }
}

/// `liminf_{|z|→∞} λ_φ(z) > 0`, judged against `τ`.
pub fn check_condition_star(w: &WeightSpec, plan: &AsymptoticSamplingPlan) -> ConditionReport {
    check(w, Condition::LeviBounded, plan)
}

/// `λ_φ(z) → ∞`, judged against the escalating thresholds `τR²`.
pub fn check_condition_star_star(w: &WeightSpec, plan: &AsymptoticSamplingPlan) -> ConditionReport {
    check(w, Condition::LeviDivergent, plan)
}

/// `θ|∇φ|² + Δφ → ∞`, judged against `τR²`.
pub fn check_rellich(w: &WeightSpec, plan: &AsymptoticSamplingPlan) -> ConditionReport {
    check(w, Condition::Rellich, plan)
}

/// Re-evaluates the tested quantity at a witness point.
pub fn reevaluate(w: &WeightSpec, report: &ConditionReport, plan: &AsymptoticSamplingPlan) -> Option<f64> {
    let cond = match report.condition.as_str() {
        "levi_liminf_positive" => Condition::LeviBounded,
        "levi_divergent" => Condition::LeviDivergent,
        "rellich" => Condition::Rellich,
        _ => return None,
    };
    let p = PointC::new(&report.witness.as_ref()?.point).ok()?;
    Some(quantity(w, cond, &p, plan))
}
