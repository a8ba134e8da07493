//! Fixtures shared by the criterion benches.

use dbarlab_core::{build_space, DiscreteSpace, FormVector, WeightSpec, C64};

pub fn fock_space(half_width: f64, h: f64) -> DiscreteSpace {
    build_space(&WeightSpec::fock(1).expect("preset"), 1, half_width, h).expect("valid grid")
}

pub fn quartic_space(half_width: f64, h: f64) -> DiscreteSpace {
    build_space(&WeightSpec::quartic(1).expect("preset"), 1, half_width, h).expect("valid grid")
}

/// A deterministic smooth (0,1)-form, `z e^{−|z|²/4} dz̄`.
pub fn smooth_form(s: &DiscreteSpace) -> FormVector {
    FormVector::from_fn(s, 1, |z| vec![z[0] * (-z[0].norm_sqr() / 4.0).exp()])
}

/// Symmetric coordinates of `f`, the vectors the assembled operators act on.
pub fn symmetric(s: &DiscreteSpace, f: &FormVector) -> Vec<C64> {
    s.to_symmetric(f).expect("matching degree")
}
