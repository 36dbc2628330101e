use std::f64::consts::PI;

use kerrcat::fockspace::coherent_state;
use kerrcat::phasespace::{husimi, ipn, wehrl_entropy, GridSpec};
use kerrcat::{StateVector, C64};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn window() -> GridSpec {
    GridSpec::square(10.0, 201)
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `ψ(n + 1) = H_n − γ`.
fn digamma_int(n: usize) -> f64 {
    (1..=n).map(|k| 1.0 / k as f64).sum::<f64>() - EULER_GAMMA
}

#[test]
fn fock_states_have_closed_form_measures() {
    // Q = uⁿe⁻ᵘ/(2π n!) with u = (x² + p²)/2. The entropy tolerance covers the
    // quadrature of the u ln u kink at the origin.
    for n in 0..6 {
        let g = husimi(&StateVector::basis(n, 40), &window()).unwrap();
        let want_s = (n + 1) as f64 + ln_factorial(n) - n as f64 * digamma_int(n) + (2.0 * PI).ln();
        let want_ipn = 4.0 * PI * (2.0 * n as f64 * 2f64.ln() + 2.0 * ln_factorial(n) - ln_factorial(2 * n)).exp();
        assert!((g.total() - 1.0).abs() < 1e-8, "n = {n}");
        assert!((wehrl_entropy(&g) - want_s).abs() < 1e-5, "n = {n}: {} vs {want_s}", wehrl_entropy(&g));
        assert!((ipn(&g) / want_ipn - 1.0).abs() < 1e-6, "n = {n}: {} vs {want_ipn}", ipn(&g));
    }
}

#[test]
fn random_states_respect_the_wehrl_bound() {
    let lieb = 1.0 + (2.0 * PI).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let occupied = rng.random_range(1..12);
        let amps = DVector::from_fn(40, |n, _| {
            if n < occupied { C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) } else { C64::new(0.0, 0.0) }
        });
        let g = husimi(&StateVector::new(amps).unwrap(), &window()).unwrap();
        assert!(wehrl_entropy(&g) >= lieb - 1e-6, "{}", wehrl_entropy(&g));
        assert!(ipn(&g) >= 4.0 * PI * (1.0 - 1e-6));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn coherent_states_are_minimal(re in -3.0f64..3.0, im in -3.0f64..3.0) {
        let g = husimi(&coherent_state(C64::new(re, im), 60).unwrap(), &window()).unwrap();
        prop_assert!((g.total() - 1.0).abs() < 1e-6);
        prop_assert!((ipn(&g) / (4.0 * PI) - 1.0).abs() < 0.02);
        prop_assert!((wehrl_entropy(&g) / (1.0 + (2.0 * PI).ln()) - 1.0).abs() < 0.01);
    }
}
