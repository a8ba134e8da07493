#![allow(dead_code)]

use dbarlab_core::{DiscreteSpace, FormVector, C64};
use rand::Rng;

/// `exp(−1/(1 − (r/ρ)²))` inside the disc of radius `ρ`, zero outside.
pub fn bump(r: f64, rho: f64) -> f64 {
    let t = r / rho;
    if t >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - t * t)).exp()
    }
}

/// A smooth compactly supported profile: a bump at `center` times a random
/// polynomial of degree two in `z, z̄`.
#[derive(Clone, Debug)]
pub struct SmoothProfile {
    center: Vec<C64>,
    rho: f64,
    coeffs: [C64; 6],
}

impl SmoothProfile {
    pub fn random(n: usize, max_center: f64, rho: (f64, f64), rng: &mut impl Rng) -> Self {
        let mut c = || C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let coeffs = [c(), c(), c(), c(), c(), c()];
        let center = (0..n)
            .map(|_| C64::new(rng.gen_range(-max_center..=max_center), rng.gen_range(-max_center..=max_center)))
            .collect();
        Self { center, rho: rng.gen_range(rho.0..rho.1), coeffs }
    }

    /// Drops the `z̄` terms so the polynomial factor is holomorphic.
    pub fn holomorphic(mut self) -> Self {
        for i in [2, 4, 5] {
            self.coeffs[i] = C64::new(0.0, 0.0);
        }
        self
    }

    pub fn eval(&self, z: &[C64]) -> C64 {
        let w: Vec<C64> = z.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        let r = w.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        let b = bump(r, self.rho);
        if b == 0.0 {
            return C64::new(0.0, 0.0);
        }
        let (u, v) = (w[0], w[0].conj());
        let p = self.coeffs[0]
            + self.coeffs[1] * u
            + self.coeffs[2] * v
            + self.coeffs[3] * u * u
            + self.coeffs[4] * u * v
            + self.coeffs[5] * v * v;
        p * b
    }

    pub fn form(&self, s: &DiscreteSpace, degree: usize, comps: usize) -> FormVector {
        FormVector::from_fn(s, degree, |z| {
            let v = self.eval(z);
            (0..comps).map(|c| v * C64::new(1.0, 0.3 * c as f64)).collect()
        })
    }
}

pub fn relative_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}

pub fn sci(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}
