//! Discretization-free oracle for radial weights on ℂ.
//!
//! For `φ(r) = c + Σ a_m r^{2m}` the monomials `z^k` are mutually orthogonal,
//! and the canonical solution of `∂̄u = z^k dz̄` is `z̄z^k − (m_k/m_{k−1}) z^{k−1}`.
//! Everything here is computed from the radial moments
//! `m_k = 2π ∫₀^∞ r^{2k+1} e^{−φ(r)} dr` by adaptive Gauss–Kronrod quadrature
//! with a rigorous incomplete-gamma tail bound.
//!
//! Moments overflow `f64` quickly (`π·200!` for the Gaussian), so they are
//! carried as logarithms. Singular values are computed from a second integral
//! on the same nodes instead of the cancelling difference `m_{k+1} − m_k²/m_{k−1}`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{DiscreteSpace, FormVector};
use crate::error::{Error, Result};
use crate::weight::{WeightBody, WeightSpec};

/// Relative accuracy requested from every quadrature.
pub const QUAD_REL_TOL: f64 = 1e-14;
const TAIL_REL_TOL: f64 = 1e-18;
const MAX_PANELS: usize = 4000;

const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

#[derive(Clone, Copy, Debug)]
struct Panel<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: [f64; N],
}

fn gk15<const N: usize>(f: &impl Fn(f64) -> [f64; N], a: f64, b: f64) -> Panel<N> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = [0.0; N];
    let mut gauss = [0.0; N];
    for i in 0..N {
        kron[i] = WGK[7] * fc[i];
        gauss[i] = WG[3] * fc[i];
    }
    for j in 0..7 {
        let f1 = f(c - h * XGK[j]);
        let f2 = f(c + h * XGK[j]);
        for i in 0..N {
            let s = f1[i] + f2[i];
            kron[i] += WGK[j] * s;
            if j % 2 == 1 {
                gauss[i] += WG[j / 2] * s;
            }
        }
    }
    let mut value = [0.0; N];
    let mut error = [0.0; N];
    for i in 0..N {
        value[i] = kron[i] * h;
        error[i] = ((kron[i] - gauss[i]) * h).abs();
    }
    Panel { a, b, value, error }
}

/// Adaptive Gauss–Kronrod 7/15 for a vector of integrands sharing nodes.
///
/// Returns the integrals and their error estimates.
pub fn integrate_adaptive<const N: usize>(
    f: impl Fn(f64) -> [f64; N],
    a: f64,
    b: f64,
    initial_panels: usize,
    rel_tol: f64,
) -> Result<([f64; N], [f64; N])> {
    let m = initial_panels.max(1);
    let width = (b - a) / m as f64;
    let mut panels: Vec<Panel<N>> = (0..m)
        .map(|i| {
            let lo = a + width * i as f64;
            let hi = if i + 1 == m { b } else { lo + width };
            gk15(&f, lo, hi)
        })
        .collect();
    loop {
        let mut total = [0.0; N];
        let mut err = [0.0; N];
        for p in &panels {
            for i in 0..N {
                total[i] += p.value[i];
                err[i] += p.error[i];
            }
        }
        let done = (0..N).all(|i| err[i] <= rel_tol * total[i].abs() || err[i] == 0.0);
        if done {
            return Ok((total, err));
        }
        if panels.len() >= MAX_PANELS {
            return Err(Error::Quadrature(format!(
                "no convergence with {} panels (estimated relative error {:.2e})",
                panels.len(),
                (0..N).map(|i| err[i] / total[i].abs()).fold(0.0, f64::max)
            )));
        }
        let scale: Vec<f64> = (0..N).map(|i| total[i].abs().max(f64::MIN_POSITIVE)).collect();
        let worst = panels
            .iter()
            .enumerate()
            .map(|(idx, p)| {
                let e = (0..N).map(|i| p.error[i] / scale[i]).fold(0.0, f64::max);
                (idx, e)
            })
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .map(|(idx, _)| idx)
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        panels.push(gk15(&f, p.a, mid));
        panels.push(gk15(&f, mid, p.b));
    }
}

/// Upper bound on `ln Γ(s, x)` valid for `x > s − 1`.
fn ln_upper_gamma_bound(s: f64, x: f64) -> f64 {
    debug_assert!(x > s - 1.0);
    (s - 1.0) * x.ln() - x - (1.0 - (s - 1.0) / x).ln()
}

/// A radial weight on ℂ in the form `offset + Σ a_m r^{2m}`.
#[derive(Clone, Debug)]
struct Radial {
    offset: f64,
    terms: Vec<(u32, f64)>,
}

impl Radial {
    fn from_weight(w: &WeightSpec) -> Result<Self> {
        if w.dim() != 1 {
            return Err(Error::Oracle("the moment oracle needs n = 1".into()));
        }
        match w.body() {
            WeightBody::Radial(t) => Ok(Self {
                offset: w.offset(),
                terms: t.iter().map(|t| (t.power, t.coeff)).collect(),
            }),
            WeightBody::Polynomial(_) => Err(Error::Oracle("the moment oracle needs a radial weight".into())),
        }
    }

    fn phi(&self, r: f64) -> f64 {
        let s = r * r;
        self.offset + self.terms.iter().map(|&(m, a)| a * s.powi(m as i32)).sum::<f64>()
    }

    fn dphi(&self, r: f64) -> f64 {
        let s = r * r;
        self.terms
            .iter()
            .map(|&(m, a)| a * 2.0 * m as f64 * s.powi(m as i32 - 1) * r)
            .sum()
    }

    fn leading(&self) -> (u32, f64) {
        *self.terms.last().expect("non-empty radial weight")
    }

    /// Returns `(a, r0)` with `φ(r) ≥ offset + a r^{2M}` for all `r ≥ r0`.
    fn tail_minorant(&self) -> Result<(f64, f64)> {
        let (top, lead) = self.leading();
        if lead <= 0.0 {
            return Err(Error::Oracle(
                "leading radial coefficient must be positive for a tail bound".into(),
            ));
        }
        let negative: Vec<(u32, f64)> = self.terms.iter().copied().filter(|t| t.1 < 0.0).collect();
        if negative.is_empty() {
            return Ok((lead, 0.0));
        }
        // Σ|a_m| r^{2m} ≤ (lead/2) r^{2M} once r^{2(M−m)} ≥ 2·count·|a_m|/lead for each m
        let count = negative.len() as f64;
        let r0 = negative
            .iter()
            .map(|&(m, a)| (2.0 * count * a.abs() / lead).powf(1.0 / (2.0 * (top - m) as f64)))
            .fold(1.0, f64::max);
        Ok((0.5 * lead, r0))
    }

    /// Location of the maximum of `(2k+1) ln r − φ(r)`.
    fn peak(&self, k: usize) -> f64 {
        let p = (2 * k + 1) as f64;
        let g = |r: f64| p / r - self.dphi(r);
        let (mut lo, mut hi) = (1e-300_f64, 1.0_f64);
        while g(hi) > 0.0 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn exponent(&self, k: usize, r: f64) -> f64 {
        (2 * k + 1) as f64 * r.ln() - self.phi(r)
    }

    /// Integrates `2π r^{2k+1} e^{−φ} · [1, extra(r)]` scaled by `e^{−g*}`.
    ///
    /// Returns `(ln_scale, [I_0, I_1], [err_0, err_1])` where the true
    /// integrals are `e^{ln_scale}·I_j`.
    fn scaled_integrals(
        &self,
        k: usize,
        extra: impl Fn(f64) -> f64 + Copy,
    ) -> Result<(f64, [f64; 2], [f64; 2])> {
        let peak = self.peak(k);
        let g_star = self.exponent(k, peak);
        let p = (2 * k + 1) as f64;
        let ln_peak = peak.ln();
        let phi_peak = self.phi(peak);
        let integrand = move |r: f64| -> [f64; 2] {
            if r <= 0.0 {
                return [0.0, 0.0];
            }
            let e = (p * (r.ln() - ln_peak) - (self.phi(r) - phi_peak)).exp();
            [e, e * extra(r)]
        };
        let (a_tail, r0) = self.tail_minorant()?;
        let (top, _) = self.leading();
        let two_m = 2.0 * top as f64;
        let s = (2 * k + 2) as f64 / two_m;
        let mut upper = (peak * 2.0).max(r0).max(1.0);
        let (mut vals, mut errs) = integrate_adaptive(integrand, 0.0, upper, 32, QUAD_REL_TOL)?;
        loop {
            let x = a_tail * upper.powf(two_m);
            if x > s - 1.0 {
                // ∫_R^∞ r^{2k+1} e^{−φ} ≤ e^{−offset} (1/2M) a^{−s} Γ(s, a R^{2M}), rescaled by e^{−g*}
                let ln_tail = -self.offset - two_m.ln() - s * a_tail.ln() + ln_upper_gamma_bound(s, x) - g_star;
                let extra_max = extra(upper).max(1.0);
                if ln_tail + extra_max.ln() < (TAIL_REL_TOL * vals[0]).ln() {
                    break;
                }
            }
            let next = upper * 1.25;
            let (v, e) = integrate_adaptive(integrand, upper, next, 4, QUAD_REL_TOL)?;
            for i in 0..2 {
                vals[i] += v[i];
                errs[i] += e[i];
            }
            upper = next;
            if upper > 1e6 * peak.max(1.0) {
                return Err(Error::Oracle("tail bound did not close".into()));
            }
        }
        let ln_scale = g_star + (2.0 * PI).ln();
        Ok((ln_scale, vals, errs))
    }
}

/// A positive quantity stored by its natural logarithm.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogValue {
    pub ln: f64,
}

impl LogValue {
    pub fn value(&self) -> f64 {
        self.ln.exp()
    }

    /// Scientific notation with 16 significant digits, valid beyond the `f64` range.
    pub fn to_sci(&self) -> String {
        let l10 = self.ln / std::f64::consts::LN_10;
        let digits = (15.0 - self.ln.abs().max(1.0).log10()).floor().max(6.0) as usize;
        let mut e = l10.floor();
        let mut mant = 10f64.powf(l10 - e);
        if format!("{mant:.digits$}").starts_with("10") {
            mant /= 10.0;
            e += 1.0;
        }
        format!("{mant:.digits$}e{}", e as i64)
    }
}

#[derive(Clone, Debug)]
pub struct MomentTable {
    weight: WeightSpec,
    k_max: usize,
    /// `m_k` for `0 ≤ k ≤ k_max + 1`.
    moments: Vec<LogValue>,
    rel_errors: Vec<f64>,
    /// `σ_k²` for `0 ≤ k ≤ k_max`, from the cancellation-free integral.
    sigma_sq: Vec<f64>,
}

impl MomentTable {
    pub fn weight(&self) -> &WeightSpec {
        &self.weight
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn moment(&self, k: usize) -> LogValue {
        self.moments[k]
    }

    pub fn moments(&self) -> &[LogValue] {
        &self.moments
    }

    /// Estimated relative quadrature error of `m_k`.
    pub fn rel_error(&self, k: usize) -> f64 {
        self.rel_errors[k]
    }

    pub fn max_rel_error(&self) -> f64 {
        self.rel_errors.iter().copied().fold(0.0, f64::max)
    }

    /// Largest violation of `2 ln m_k ≤ ln m_{k−1} + ln m_{k+1}`.
    pub fn log_convexity_defect(&self) -> f64 {
        self.moments
            .windows(3)
            .map(|w| 2.0 * w[1].ln - w[0].ln - w[2].ln)
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Computes `m_0 … m_{k_max+1}` for a radial weight on ℂ.
pub fn radial_moments(w: &WeightSpec, k_max: usize) -> Result<MomentTable> {
    if k_max < 2 {
        return Err(Error::InvalidParameter(format!("k_max must be at least 2, got {k_max}")));
    }
    let radial = Radial::from_weight(w)?;
    let plain: Vec<(LogValue, f64)> = (0..=k_max + 1)
        .into_par_iter()
        .map(|k| {
            let (ln_scale, vals, errs) = radial.scaled_integrals(k, |_| 0.0)?;
            if !(vals[0] > 0.0) {
                return Err(Error::Oracle(format!("moment {k} is not positive")));
            }
            Ok((LogValue { ln: ln_scale + vals[0].ln() }, errs[0] / vals[0]))
        })
        .collect::<Result<_>>()?;
    let (moments, rel_errors): (Vec<LogValue>, Vec<f64>) = plain.into_iter().unzip();

    let sigma_sq: Vec<f64> = (0..=k_max)
        .into_par_iter()
        .map(|k| {
            if k == 0 {
                return Ok((moments[1].ln - moments[0].ln).exp());
            }
            let c = (moments[k].ln - moments[k - 1].ln).exp();
            // ∫ r^{2k−1}(r²−c)² e^{−φ} = m_{k+1} − m_k²/m_{k−1}, divided by m_k on shared nodes
            let (_, vals, _) = radial.scaled_integrals(k, move |r| {
                let d = r * r - c;
                d * d / (r * r)
            })?;
            Ok(vals[1] / vals[0])
        })
        .collect::<Result<_>>()?;

    Ok(MomentTable {
        weight: w.clone(),
        k_max,
        moments,
        rel_errors,
        sigma_sq,
    })
}

#[derive(Clone, Debug)]
pub struct SingularValueTable {
    sigma: Vec<f64>,
}

impl SingularValueTable {
    /// Wraps externally supplied values, e.g. synthetic data for fits.
    pub fn from_values(sigma: Vec<f64>) -> Result<Self> {
        if sigma.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::Oracle("singular values must be positive and finite".into()));
        }
        Ok(Self { sigma })
    }

    pub fn values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn is_strictly_decreasing(&self) -> bool {
        self.sigma.windows(2).all(|w| w[1] < w[0])
    }
}

/// `σ_k` of the canonical solution operator on the monomial family.
pub fn oracle_singular_values(t: &MomentTable) -> Result<SingularValueTable> {
    if let Some((k, s)) = t.sigma_sq.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::Oracle(format!("σ_{k}² = {s:e} is not positive; moment table is broken")));
    }
    SingularValueTable::from_values(t.sigma_sq.iter().map(|s| s.sqrt()).collect())
}

/// `σ_k²` recomputed from the moment table by the defining difference.
///
/// Returns `(σ_k², scale)` where `scale = m_{k+1}/m_k` is the size of the
/// cancelling terms.
pub fn sigma_sq_from_moments(t: &MomentTable, k: usize) -> (f64, f64) {
    let m = &t.moments;
    if k == 0 {
        let v = (m[1].ln - m[0].ln).exp();
        return (v, v);
    }
    let a = (m[k + 1].ln - m[k].ln).exp();
    let b = (2.0 * m[k].ln - m[k - 1].ln - m[k].ln).exp();
    (a - b, a)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    pub exponent: f64,
    pub std_error: f64,
    pub k_lo: usize,
    pub k_hi: usize,
}

/// Least-squares slope of `ln σ_k` against `ln k` over `k_lo ≤ k ≤ k_hi`.
pub fn decay_exponent_fit(t: &SingularValueTable, k_lo: usize, k_hi: usize) -> Result<DecayFit> {
    if k_lo == 0 || k_hi < k_lo + 10 || k_hi >= t.len() {
        return Err(Error::InvalidParameter(format!(
            "degenerate fit window [{k_lo}, {k_hi}] for {} values",
            t.len()
        )));
    }
    let pts: Vec<(f64, f64)> = (k_lo..=k_hi)
        .map(|k| ((k as f64).ln(), t.sigma[k].ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let std_error = (rss / (n - 2.0) / sxx).sqrt();
    Ok(DecayFit {
        exponent: slope,
        std_error,
        k_lo,
        k_hi,
    })
}

/// CSV rows `k,m_k,sigma_k` preceded by a `#`-prefixed JSON header line.
pub fn oracle_csv(t: &MomentTable, sigma: &SingularValueTable) -> String {
    let header = serde_json::json!({
        "weight": t.weight.to_string(),
        "k_max": t.k_max,
        "quadrature": "adaptive Gauss-Kronrod 7/15 with incomplete-gamma tail bound",
        "target_rel_tol": QUAD_REL_TOL,
        "max_est_rel_error": format!("{:.3e}", t.max_rel_error()),
    });
    let mut out = String::new();
    let _ = writeln!(out, "# {header}");
    out.push_str("k,m_k,sigma_k\n");
    for k in 0..=t.k_max {
        let _ = writeln!(out, "{k},{},{:.15e}", t.moments[k].to_sci(), sigma.sigma[k]);
    }
    out
}

/// One parsed row of an oracle CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleRow {
    pub k: usize,
    pub ln_moment: f64,
    pub sigma: f64,
}

/// Parses the body of [`oracle_csv`] output, skipping the header lines.
pub fn parse_oracle_csv(text: &str) -> Result<Vec<OracleRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.starts_with("k,") || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("line {}: expected `k,m_k,sigma_k`", i + 1));
        let mut parts = line.split(',');
        let k: usize = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let m = parts.next().ok_or_else(bad)?.trim();
        let sigma: f64 = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(bad)?;
        let (mant, exp) = m.split_once(['e', 'E']).unwrap_or((m, "0"));
        let mant: f64 = mant.parse().map_err(|_| bad())?;
        let exp: f64 = exp.parse().map_err(|_| bad())?;
        rows.push(OracleRow {
            k,
            ln_moment: mant.ln() + exp * std::f64::consts::LN_10,
            sigma,
        });
    }
    Ok(rows)
}

/// Relative residual `‖□f − f‖/‖f‖` for `f = z^k dz̄` on a Gaussian-weight space.
#[derive(Clone, Copy, Debug)]
pub struct EigenformResidual {
    pub residual: f64,
    /// Share of `‖f‖²` in the outer 10% shell of the box.
    pub boundary_mass: f64,
    pub boundary_warning: bool,
}

pub fn fock_eigenform_residual(s: &DiscreteSpace, k: usize) -> Result<EigenformResidual> {
    if s.dim() != 1 {
        return Err(Error::InvalidParameter("eigenform residual needs n = 1".into()));
    }
    if k > 8 {
        return Err(Error::InvalidParameter(format!("k must be at most 8, got {k}")));
    }
    let f = FormVector::from_fn(s, 1, |z| vec![z[0].powu(k as u32)]);
    let boxed = s.assemble_box();
    let bf = boxed.apply_form(s, &f)?;
    let diff = bf.sub(&f)?;
    let norm = s.weighted_norm(&f);
    let shell = s.shell_mass(&f, 0.9 * s.half_width());
    let boundary_mass = shell / (norm * norm);
    Ok(EigenformResidual {
        residual: s.weighted_norm(&diff) / norm,
        boundary_mass,
        boundary_warning: boundary_mass > 1e-6,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gk_integrates_polynomials_exactly() {
        let (v, _) = integrate_adaptive(|x| [x.powi(9), 1.0], 0.0, 2.0, 1, 1e-15).unwrap();
        assert!((v[0] - 2f64.powi(10) / 10.0).abs() < 1e-12);
        assert!((v[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn upper_gamma_bound_dominates() {
        // Γ(1, x) = e^{−x}
        for x in [0.5, 2.0, 10.0] {
            assert!(ln_upper_gamma_bound(1.0, x) >= -x - 1e-15);
        }
        // Γ(2, x) = (x + 1) e^{−x}
        for x in [1.5, 3.0, 20.0] {
            assert!(ln_upper_gamma_bound(2.0, x) >= ((x + 1.0) * (-x).exp()).ln());
        }
    }

    #[test]
    fn log_value_formatting() {
        assert_eq!(LogValue { ln: std::f64::consts::PI.ln() }.to_sci(), "3.14159265358979e0");
        let big = LogValue { ln: 1000.0 * std::f64::consts::LN_10 };
        assert!(big.to_sci().ends_with("e1000"));
    }

    #[test]
    fn rejects_bad_inputs() {
        let fock = WeightSpec::fock(1).unwrap();
        assert!(radial_moments(&fock, 1).is_err());
        let poly = WeightSpec::parse("poly: x1^2 + y1^2", 1).unwrap();
        assert!(radial_moments(&poly, 4).is_err());
        let fock2 = WeightSpec::fock(2).unwrap();
        assert!(radial_moments(&fock2, 4).is_err());
        let t = SingularValueTable::from_values(vec![1.0; 30]).unwrap();
        assert!(decay_exponent_fit(&t, 0, 20).is_err());
        assert!(decay_exponent_fit(&t, 5, 14).is_err());
        assert!(decay_exponent_fit(&t, 5, 30).is_err());
        assert!(SingularValueTable::from_values(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn synthetic_decay() {
        let t = SingularValueTable::from_values((0..200).map(|k| 1.0 / ((k + 1) as f64).sqrt()).collect()).unwrap();
        let fit = decay_exponent_fit(&t, 10, 100).unwrap();
        assert!((fit.exponent + 0.5).abs() < 0.02, "{fit:?}");
    }
}
