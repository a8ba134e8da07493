mod common;

use std::path::Path;

use dbarlab_core::conditions::{check_condition_star, check_condition_star_star, check_rellich, reevaluate};
use dbarlab_core::oracle::{oracle_singular_values, parse_oracle_csv, radial_moments, sigma_sq_from_moments};
use dbarlab_core::spectral::{
    canonical_solve, compactness_constant_from, eigenpairs_below, function_route_singular_values,
    smallest_eigenpairs_with, solution_singular_values,
};
use dbarlab_core::{
    build_space, dual_norm, AsymptoticSamplingPlan, DiscreteSpace, EigenOptions, FormVector, Verdict, WeightSpec, C64,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn weight(kind: u8, n: usize) -> WeightSpec {
    match kind {
        0 => WeightSpec::fock(n).unwrap(),
        1 => WeightSpec::quartic(n).unwrap(),
        _ if n == 1 => WeightSpec::parse("poly: x1^2 + 0.5*y1^2 + 0.1*x1^4", 1).unwrap(),
        _ => WeightSpec::parse("poly: x1^2 + y1^2 + x2^2 + 0.5*y2^2", 2).unwrap(),
    }
}

/// Small boxes bypass the size checks of `build_space`.
fn space(kind: u8, n: usize, half_width: f64, h: f64) -> DiscreteSpace {
    DiscreteSpace::with_intervals(&weight(kind, n), half_width, (2.0 * half_width / h).round() as usize).unwrap()
}

fn golden(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)).unwrap()
}

fn grid_case() -> impl Strategy<Value = (u8, usize, f64, f64, u64)> {
    (0u8..3, 1usize..=2, any::<u64>()).prop_flat_map(|(kind, n, seed)| {
        let hs: Vec<f64> = if n == 1 { vec![0.25, 0.2, 0.125] } else { vec![0.5, 0.4] };
        (Just(kind), Just(n), prop::sample::select(vec![2.0, 3.0]), prop::sample::select(hs), Just(seed))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dbar_star_is_the_weighted_adjoint((kind, n, r, h, seed) in grid_case()) {
        let s = space(kind, n, r, h);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for q in 0..n {
            let f = FormVector::random(&s, q, &mut rng).unwrap();
            let g = FormVector::random(&s, q + 1, &mut rng).unwrap();
            let df = f.mapped(&s, &s.assemble_dbar(q).unwrap(), q + 1).unwrap();
            let dsg = g.mapped(&s, &s.assemble_dbar_star(q + 1).unwrap(), q).unwrap();
            let lhs = s.weighted_inner(&df, &g).unwrap();
            let rhs = s.weighted_inner(&f, &dsg).unwrap();
            let scale = s.weighted_norm(&df) * s.weighted_norm(&g) + s.weighted_norm(&f) * s.weighted_norm(&dsg);
            prop_assert!((lhs - rhs).norm() <= 1e-12 * scale, "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn dbar_squares_to_zero(kind in 0u8..3, seed in any::<u64>(), h in prop::sample::select(vec![0.5, 0.4])) {
        let s = space(kind, 2, 2.0, h);
        let f = FormVector::random(&s, 0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let df = f.mapped(&s, &s.assemble_dbar(0).unwrap(), 1).unwrap();
        let ddf = df.mapped(&s, &s.assemble_dbar(1).unwrap(), 2).unwrap();
        let bound = 16.0 / (h * h) * f.data().iter().map(|v| v.norm()).fold(0.0, f64::max);
        prop_assert!(ddf.data().iter().all(|v| v.norm() <= 1e-14 * bound));
    }

    #[test]
    fn dual_norm_is_dominated((kind, n, r, h, seed) in grid_case()) {
        let s = space(kind, n, r, h);
        let u = FormVector::random(&s, 1, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let d = dual_norm(&s, &u).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert!(d <= s.weighted_norm(&u) * (1.0 + 1e-8), "{d} > {}", s.weighted_norm(&u));
    }

    #[test]
    fn dirichlet_form_is_box_quadratic_form((kind, n, r, h, seed) in grid_case()) {
        let s = space(kind, n, r, h);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = FormVector::random(&s, 1, &mut rng).unwrap();
        let g = FormVector::random(&s, 1, &mut rng).unwrap();
        let q = s.dirichlet_form(&f, &g).unwrap();
        let bg = s.symmetric_box(1).unwrap().apply_form(&s, &g).unwrap();
        let want = s.weighted_inner(&f, &bg).unwrap();
        let scale = s.weighted_norm(&f) * s.weighted_norm(&bg);
        prop_assert!((q - want).norm() <= 1e-10 * scale, "{q} vs {want}");
        let qf = s.dirichlet_form(&f, &f).unwrap();
        prop_assert!(qf.re >= 0.0 && qf.im.abs() <= 1e-10 * qf.re.max(1e-300));
    }

    #[test]
    fn oracle_ignores_additive_constants(c in -5.0f64..5.0, kind in 0u8..2) {
        let w = weight(kind, 1);
        let a = oracle_singular_values(&radial_moments(&w, 30).unwrap()).unwrap();
        let ts = radial_moments(&w.shifted(c), 30).unwrap();
        let b = oracle_singular_values(&ts).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x / y - 1.0).abs() <= 1e-11);
        }
        let t = radial_moments(&w, 30).unwrap();
        for k in 0..=30 {
            prop_assert!((ts.moment(k).ln - t.moment(k).ln + c).abs() <= 1e-11);
        }
    }

    #[test]
    fn oracle_scales_with_dilation(lambda in 0.5f64..3.0) {
        // φ(λz) = λ⁴|z|⁴ has m_k scaled by λ^{−2k−2} and σ_k by 1/λ
        let base = radial_moments(&WeightSpec::quartic(1).unwrap(), 40).unwrap();
        let w = WeightSpec::parse(&format!("radial: {}*r2^2", lambda.powi(4)), 1).unwrap();
        let t = radial_moments(&w, 40).unwrap();
        for k in 0..=40 {
            let want = base.moment(k).ln - (2 * k + 2) as f64 * lambda.ln();
            prop_assert!((t.moment(k).ln - want).abs() <= 1e-10 * want.abs().max(1.0));
        }
        let a = oracle_singular_values(&base).unwrap();
        let b = oracle_singular_values(&t).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((y * lambda / x - 1.0).abs() <= 1e-9);
        }
    }
}

#[test]
fn oracle_matches_golden_tables() {
    for (name, w) in [("fock", WeightSpec::fock(1).unwrap()), ("quartic", WeightSpec::quartic(1).unwrap())] {
        let rows = parse_oracle_csv(&golden(&format!("{name}.csv"))).unwrap();
        assert_eq!(rows.len(), 201);
        let t = radial_moments(&w, 200).unwrap();
        let sigma = oracle_singular_values(&t).unwrap();
        for r in &rows {
            let m = t.moment(r.k).ln;
            assert!((m - r.ln_moment).abs() <= 1e-10 * r.ln_moment.abs().max(1.0), "{name} m_{}: {m} vs {}", r.k, r.ln_moment);
            let s = sigma.values()[r.k];
            assert!((s / r.sigma - 1.0).abs() <= 1e-10, "{name} sigma_{}: {s} vs {}", r.k, r.sigma);
        }
    }
}

#[test]
fn fock_moments_are_factorials() {
    let t = radial_moments(&WeightSpec::fock(1).unwrap(), 60).unwrap();
    let mut ln_fact = 0.0;
    for k in 0..=60 {
        if k > 0 {
            ln_fact += (k as f64).ln();
        }
        let want = std::f64::consts::PI.ln() + ln_fact;
        assert!((t.moment(k).ln - want).abs() <= 1e-12 * want.abs().max(1.0), "k = {k}");
    }
    let sigma = oracle_singular_values(&t).unwrap();
    assert!(sigma.values().iter().all(|s| (s - 1.0).abs() <= 1e-10));
}

#[test]
fn oracle_structure() {
    for kind in [1u8, 0] {
        let t = radial_moments(&weight(kind, 1), 200).unwrap();
        assert!(t.log_convexity_defect() <= 1e-12, "{}", t.log_convexity_defect());
        assert!(t.max_rel_error() <= 1e-12);
        let sigma = oracle_singular_values(&t).unwrap();
        for k in 0..200 {
            let (sq, scale) = sigma_sq_from_moments(&t, k);
            let v = sigma.values()[k];
            assert!((sq - v * v).abs() <= 1e-9 * scale, "k = {k}: {sq} vs {}", v * v);
        }
        if kind == 1 {
            assert!(sigma.is_strictly_decreasing());
        }
    }
}

/// Discrete moments `‖z^k‖²_φ` against the oracle, and monomial orthogonality.
#[test]
fn grid_quadrature_reproduces_moments() {
    for (kind, r) in [(0u8, 7.0), (1u8, 4.0)] {
        let w = weight(kind, 1);
        let s = build_space(&w, 1, r, 0.05).unwrap();
        let t = radial_moments(&w, 4).unwrap();
        let mono: Vec<FormVector> = (0..4).map(|k| FormVector::from_fn(&s, 0, |z| vec![z[0].powu(k)])).collect();
        for j in 0..4 {
            let m = s.weighted_inner(&mono[j], &mono[j]).unwrap().re;
            let want = t.moment(j).value();
            assert!((m / want - 1.0).abs() <= 1e-6, "kind {kind}, k = {j}: {m} vs {want}");
            for k in 0..j {
                let c = s.weighted_inner(&mono[j], &mono[k]).unwrap();
                assert!(c.norm() <= 1e-10 * (want * t.moment(k).value()).sqrt(), "<z^{j}, z^{k}> = {c}");
            }
        }
    }
}

/// Box on (0,1)-forms and the function route give the same nonzero spectrum.
#[test]
fn singular_value_routes_agree() {
    let opts = EigenOptions::with_tol(1e-10);
    for kind in [0u8, 1, 2] {
        let s = space(kind, 1, 2.5, 0.25);
        let forms = solution_singular_values(&s, 6, &opts).unwrap();
        let funcs = function_route_singular_values(&s, 6, &opts).unwrap();
        assert!(!forms.inconclusive && !funcs.inconclusive, "kind {kind}: {forms:?} {funcs:?}");
        for (a, b) in forms.values.iter().zip(&funcs.values) {
            assert!((a / b - 1.0).abs() <= 1e-6, "kind {kind}: {:?} vs {:?}", forms.values, funcs.values);
        }
    }
}

/// `‖∂̄*N u‖ = μ^{−1/2}‖u‖` for an eigenform `u` of `□` with eigenvalue `μ`.
#[test]
fn canonical_solution_norm_matches_eigenvalue() {
    let s = space(1, 1, 3.0, 0.2);
    let eig = smallest_eigenpairs_with(s.symmetric_box(1).unwrap().matrix(), 4, &EigenOptions::with_tol(1e-10)).unwrap();
    for k in 0..4 {
        let u = s.from_symmetric(1, &eig.vectors.column(k)).unwrap();
        let sol = canonical_solve(&s, &u, 1e-12).unwrap();
        assert!(sol.residual <= 1e-8, "{}", sol.residual);
        let ratio = s.weighted_norm(&sol.u) / s.weighted_norm(&u);
        let want = eig.values[k].powf(-0.5);
        assert!((ratio / want - 1.0).abs() <= 1e-7, "k = {k}: {ratio} vs {want}");
    }
}

/// The compactness estimate holds for every form in its search subspace.
#[test]
fn compactness_estimate_bounds_its_subspace() {
    let s = space(1, 1, 3.0, 0.2);
    let eps = 0.5;
    let eig = eigenpairs_below(s.symmetric_box(1).unwrap().matrix(), 2.6, 1, &EigenOptions::with_tol(1e-10)).unwrap();
    let c = compactness_constant_from(&s, &eig, eps).unwrap();
    assert!(c.value > 0.0 && c.subspace_dim > 0);
    let idx: Vec<usize> = (0..eig.len()).filter(|&i| eig.values[i] <= 1.25 / eps).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let check = |u: &FormVector, slack: f64| {
        let n2 = s.weighted_norm(u).powi(2);
        let q = s.dirichlet_form(u, u).unwrap().re;
        let d = dual_norm(&s, u).unwrap();
        assert!(n2 <= eps * q + c.value * d * d * (1.0 + slack) + 1e-12 * n2, "{n2} > {} + {}", eps * q, c.value * d * d);
        (n2 - eps * q) / (d * d)
    };
    for _ in 0..20 {
        let mut x = vec![C64::new(0.0, 0.0); eig.vectors.rows()];
        for &i in &idx {
            let a = C64::new(rand::Rng::gen_range(&mut rng, -1.0..1.0), rand::Rng::gen_range(&mut rng, -1.0..1.0));
            for (xv, v) in x.iter_mut().zip(eig.vectors.column(i)) {
                *xv += a * v;
            }
        }
        check(&s.from_symmetric(1, &x).unwrap(), 1e-6);
    }
    let attained = check(c.maximizer.as_ref().unwrap(), 1e-6);
    assert!((attained / c.value - 1.0).abs() <= 1e-5, "{attained} vs {}", c.value);
}

#[test]
fn eigenform_residual_shrinks_with_h() {
    let mut last = [f64::INFINITY; 4];
    for h in [0.2, 0.1, 0.05] {
        let s = space(0, 1, 6.0, h);
        for (k, prev) in last.iter_mut().enumerate() {
            let r = dbarlab_core::oracle::fock_eigenform_residual(&s, k).unwrap();
            assert!(!r.boundary_warning);
            assert!(r.residual < *prev / 3.0, "h = {h}, k = {k}: {} vs {}", r.residual, prev);
            *prev = r.residual;
        }
    }
}

#[test]
fn condition_checkers_on_known_weights() {
    let plan = AsymptoticSamplingPlan::default();
    let cases: [(&str, usize, [Verdict; 3]); 4] = [
        ("fock", 1, [Verdict::HoldsEmpirically, Verdict::FailsEmpirically, Verdict::HoldsEmpirically]),
        ("quartic", 1, [Verdict::HoldsEmpirically, Verdict::HoldsEmpirically, Verdict::HoldsEmpirically]),
        ("poly: x1^2", 1, [Verdict::HoldsEmpirically, Verdict::FailsEmpirically, Verdict::FailsEmpirically]),
        ("quartic", 2, [Verdict::HoldsEmpirically, Verdict::HoldsEmpirically, Verdict::HoldsEmpirically]),
    ];
    for (text, n, want) in cases {
        let w = WeightSpec::parse(text, n).unwrap();
        let reports = [check_condition_star(&w, &plan), check_condition_star_star(&w, &plan), check_rellich(&w, &plan)];
        for (r, v) in reports.iter().zip(want) {
            assert_eq!(r.verdict, v, "{text} (n = {n}) {}", r.condition);
            assert_eq!(r.shells.len(), plan.radii().len());
            match &r.witness {
                Some(wit) => {
                    assert_eq!(r.verdict, Verdict::FailsEmpirically);
                    assert!(wit.value < wit.threshold);
                    let again = reevaluate(&w, r, &plan).unwrap();
                    assert!((again - wit.value).abs() <= 1e-12 * wit.value.abs().max(1.0), "{again} vs {}", wit.value);
                }
                None => assert_ne!(r.verdict, Verdict::FailsEmpirically),
            }
        }
    }
}
