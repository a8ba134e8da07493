use std::fmt::Write as _;

use dbarlab_core::conditions::{check_condition_star, check_condition_star_star, check_rellich, AsymptoticSamplingPlan};
use dbarlab_core::oracle::{decay_exponent_fit, oracle_csv, oracle_singular_values, radial_moments};
use dbarlab_core::spectral::{
    compactness_study, eigenpairs_below, function_route_singular_values, sigma_from_box, smallest_eigenpairs_with,
    study_csv, StudyConfig, StudyVerdict,
};
use dbarlab_core::{build_space, EigenOptions, Error, PshReport, Verdict, WeightSpec};
use serde_json::{json, Value};

use crate::config::{RunConfig, Task};

const DEFAULT_COUNT: usize = 10;
const DEFAULT_KMAX: usize = 200;
const PSH_DIRECTIONS: usize = 32;

#[derive(Debug, thiserror::Error)]
pub enum TaskError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl From<Error> for TaskError {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. }
            | Error::InvalidWeight(_)
            | Error::InvalidGrid(_)
            | Error::InvalidParameter(_)
            | Error::IndexOutOfRange { .. }
            | Error::DegreeMismatch { .. }
            | Error::UnsupportedDegree { .. }
            | Error::Format(_)
            | Error::Json(_) => TaskError::Config(e.to_string()),
            _ => TaskError::Numerical(e.to_string()),
        }
    }
}

/// Files and status produced by one task.
pub struct Artifacts {
    pub report: Value,
    pub data_csv: String,
    pub summary: String,
    /// Additional files, `(name, contents)`.
    pub extra: Vec<(String, Vec<u8>)>,
    pub inconclusive: bool,
}

fn header(cfg: &RunConfig, w: &WeightSpec) -> Value {
    json!({
        "task": cfg.task.name(),
        "weight": w.to_string(),
        "n": cfg.n,
        "seed": cfg.seed,
        "config": cfg,
    })
}

fn merge(mut base: Value, extra: Value) -> Value {
    if let (Value::Object(b), Value::Object(e)) = (&mut base, extra) {
        b.extend(e);
    }
    base
}

fn eigen_options(cfg: &RunConfig) -> EigenOptions {
    let mut o = EigenOptions::default();
    if let Some(t) = cfg.tol {
        o.tol = t;
    }
    o.seed = cfg.seed;
    o
}

pub fn run(cfg: &RunConfig, w: &WeightSpec) -> Result<Artifacts, TaskError> {
    match cfg.task {
        Task::CheckWeight => check_weight(cfg, w),
        Task::Assemble => assemble(cfg, w),
        Task::Spectrum => spectrum(cfg, w),
        Task::Oracle => oracle(cfg, w),
        Task::Study => study(cfg, w),
    }
}

fn psh_json(r: &PshReport) -> Value {
    json!({
        "verified": r.verified,
        "min_lambda": r.min_lambda,
        "argmin": r.argmin.coords(),
        "points": r.points,
        "note": PshReport::NOTE,
    })
}

fn check_weight(cfg: &RunConfig, w: &WeightSpec) -> Result<Artifacts, TaskError> {
    let mut plan = AsymptoticSamplingPlan::default();
    if let Some(t) = cfg.theta {
        plan = plan.with_theta(t)?;
    }
    if let Some(&e) = cfg.eps.first() {
        plan = AsymptoticSamplingPlan::new(plan.radii().to_vec(), plan.directions(), plan.tau(), plan.theta(), e)?;
    }
    let psh = w.sample_psh(plan.radii(), PSH_DIRECTIONS);
    let reports = [check_condition_star(w, &plan), check_condition_star_star(w, &plan), check_rellich(w, &plan)];

    let mut csv = String::from("condition,R,min,threshold\n");
    let mut summary = format!("weight {w} (n = {})\nplurisubharmonic on samples: {} (min Levi eigenvalue {:.6e}; {})\n", cfg.n, psh.verified, psh.min_lambda, PshReport::NOTE);
    for r in &reports {
        for s in &r.shells {
            let _ = writeln!(csv, "{},{},{:.15e},{:.15e}", r.condition, s.radius, s.min, s.threshold);
        }
        let _ = writeln!(summary, "{}: {}", r.condition, r.verdict);
        if let Some(wit) = &r.witness {
            let _ = writeln!(summary, "  witness at {:?}: value {:.6e} below {:.6e}", wit.point, wit.value, wit.threshold);
        }
    }
    let inconclusive = reports.iter().any(|r| r.verdict == Verdict::Inconclusive);
    let report = merge(
        header(cfg, w),
        json!({
            "plan": plan,
            "psh": psh_json(&psh),
            "conditions": reports,
        }),
    );
    Ok(Artifacts { report, data_csv: csv, summary, extra: Vec::new(), inconclusive })
}

fn grid(cfg: &RunConfig) -> (f64, f64) {
    (cfg.half_width.expect("validated"), cfg.h.expect("validated"))
}

fn assemble(cfg: &RunConfig, w: &WeightSpec) -> Result<Artifacts, TaskError> {
    let (r, h) = grid(cfg);
    let s = build_space(w, cfg.n, r, h)?;
    let mut ops = vec![
        ("dbar_0", s.assemble_dbar(0)?),
        ("dbar_star_1", s.assemble_dbar_star(1)?),
        ("box_1", s.assemble_box().into_matrix()),
        ("w1_gram_1", s.w1_gram(1)?.into_matrix()),
    ];
    if cfg.n == 2 {
        ops.push(("dbar_1", s.assemble_dbar(1)?));
        ops.push(("box_2", s.symmetric_box(2)?.into_matrix()));
    }
    let mut csv = String::from("operator,rows,cols,nnz,gershgorin_bound\n");
    let mut extra = Vec::new();
    let mut entries = Vec::new();
    for (name, m) in &ops {
        let mut buf = Vec::new();
        s.export_matrix_market(m, name, &mut buf)?;
        extra.push((format!("{name}.mtx"), buf));
        let square = m.nrows() == m.ncols();
        let bound = if square { Some(m.gershgorin_bound()) } else { None };
        let _ = writeln!(csv, "{name},{},{},{},{}", m.nrows(), m.ncols(), m.nnz(), bound.map(|b| format!("{b:.15e}")).unwrap_or_default());
        entries.push(json!({
            "name": name,
            "rows": m.nrows(),
            "cols": m.ncols(),
            "nnz": m.nnz(),
            "hermitian_defect": if square { Some(m.hermitian_defect()) } else { None },
            "gershgorin_bound": bound,
        }));
    }
    let unknowns: Vec<usize> = (0..=cfg.n).map(|q| s.unknowns(q)).collect::<Result<_, _>>()?;
    let summary = format!(
        "weight {w}, R = {r}, h = {h}: unknowns per degree {unknowns:?}, truncation ratio {:.3e}\n{}",
        s.truncation_ratio(),
        s.warnings().join("\n")
    );
    let report = merge(
        header(cfg, w),
        json!({
            "R": r,
            "h": h,
            "unknowns": unknowns,
            "truncation_ratio": s.truncation_ratio(),
            "warnings": s.warnings(),
            "operators": entries,
        }),
    );
    Ok(Artifacts { report, data_csv: csv, summary, extra, inconclusive: false })
}

fn spectrum(cfg: &RunConfig, w: &WeightSpec) -> Result<Artifacts, TaskError> {
    let (r, h) = grid(cfg);
    let s = build_space(w, cfg.n, r, h)?;
    let count = cfg.count.unwrap_or(DEFAULT_COUNT);
    let opts = eigen_options(cfg);
    let op = s.symmetric_box(1)?;
    let eig = match cfg.lambda_cap {
        Some(cap) => eigenpairs_below(op.matrix(), cap, count, &opts)?,
        None => smallest_eigenpairs_with(op.matrix(), count, &opts)?,
    };
    let sigma = if cfg.n == 1 { sigma_from_box(&eig.values, count) } else { function_route_singular_values(&s, count, &opts)? };
    let mut csv = String::from("k,lambda,residual,sigma\n");
    for (k, v) in eig.values.iter().enumerate() {
        let sg = sigma.values.get(k).map(|x| format!("{x:.15e}")).unwrap_or_default();
        let _ = writeln!(csv, "{k},{v:.15e},{:.3e},{sg}", eig.residuals[k]);
    }
    let summary = format!(
        "weight {w}, R = {r}, h = {h}: {} eigenvalues of the Laplacian on (0,1)-forms, lowest {:.6}{}\nsingular values of the canonical solution operator: {:?}{}\n",
        eig.len(),
        eig.values.first().copied().unwrap_or(f64::NAN),
        cfg.lambda_cap.map(|c| format!(", {} below {c}", eig.count_below(c))).unwrap_or_default(),
        sigma.values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>(),
        if sigma.inconclusive { " (inconclusive)" } else { "" },
    );
    let report = merge(
        header(cfg, w),
        json!({
            "R": r,
            "h": h,
            "tol": opts.tol,
            "eigenvalues": eig.values,
            "residuals": eig.residuals,
            "iterations": eig.iterations,
            "count_below_cap": cfg.lambda_cap.map(|c| eig.count_below(c)),
            "singular_values": sigma,
            "warnings": s.warnings(),
        }),
    );
    Ok(Artifacts { report, data_csv: csv, summary, extra: Vec::new(), inconclusive: sigma.inconclusive })
}

fn oracle(cfg: &RunConfig, w: &WeightSpec) -> Result<Artifacts, TaskError> {
    let kmax = cfg.kmax.unwrap_or(DEFAULT_KMAX);
    let t = radial_moments(w, kmax)?;
    let sigma = oracle_singular_values(&t)?;
    let window = if kmax >= 30 { Some((20, kmax)) } else if kmax >= 11 { Some((1, kmax)) } else { None };
    let fit = window.map(|(lo, hi)| decay_exponent_fit(&sigma, lo, hi)).transpose()?;
    let csv = oracle_csv(&t, &sigma);
    let values = sigma.values();
    let summary = format!(
        "weight {w}: moments m_0..m_{} (max estimated relative error {:.2e}), sigma_0 = {:.12}, sigma_{kmax} = {:.12}, strictly decreasing: {}{}\n",
        kmax + 1,
        t.max_rel_error(),
        values[0],
        values[kmax],
        sigma.is_strictly_decreasing(),
        fit.map(|f| format!(", decay exponent {:.4} +- {:.4} on [{}, {}]", f.exponent, f.std_error, f.k_lo, f.k_hi)).unwrap_or_default(),
    );
    let report = merge(
        header(cfg, w),
        json!({
            "k_max": kmax,
            "max_rel_error": t.max_rel_error(),
            "log_convexity_defect": t.log_convexity_defect(),
            "strictly_decreasing": sigma.is_strictly_decreasing(),
            "sigma_first": values[0],
            "sigma_last": values[kmax],
            "decay_fit": fit,
        }),
    );
    Ok(Artifacts { report, data_csv: csv, summary, extra: Vec::new(), inconclusive: false })
}

fn study(cfg: &RunConfig, w: &WeightSpec) -> Result<Artifacts, TaskError> {
    let h = cfg.h.expect("validated");
    let ladder: Vec<(f64, f64)> = cfg.ladder.iter().map(|&r| (r, h)).collect();
    let mut sc = StudyConfig { eigen: eigen_options(cfg), ..StudyConfig::default() };
    if let Some(c) = cfg.count {
        sc.lowest = c;
        sc.sigma_count = c;
    }
    if let Some(c) = cfg.lambda_cap {
        sc.lambda_cap = c;
    }
    if !cfg.eps.is_empty() {
        sc.epsilons = cfg.eps.clone();
    }
    let st = compactness_study(w, &ladder, &sc)?;
    let mut summary = format!("weight {w}: verdict {}\n", st.verdict);
    for reason in &st.reasons {
        let _ = writeln!(summary, "  {reason}");
    }
    for l in &st.levels {
        let _ = writeln!(
            summary,
            "R = {}, h = {}: count below {} = {:?}, cluster = {:?}, C_eps = {:?}{}",
            l.half_width,
            l.h,
            st.lambda_cap,
            l.count_below_cap,
            l.cluster_count,
            l.c_eps.iter().map(|c| (c.epsilon, c.c_eps)).collect::<Vec<_>>(),
            if l.failures.is_empty() { String::new() } else { format!(", failures {:?}", l.failures) },
        );
    }
    let inconclusive = st.verdict == StudyVerdict::Inconclusive;
    let report = merge(header(cfg, w), json!({ "study": st }));
    Ok(Artifacts { report, data_csv: study_csv(&st), summary, extra: Vec::new(), inconclusive })
}
