use super::calibrate::*;
use super::*;
use crate::fockspace::{build_effective_hamiltonian, eigendecompose, number_operator, EffectiveParams};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn toy_drive() -> DriveParams {
    DriveParams { omega0: 1.0, omegad: 2.1, drive: 0.05, g3: 0.01, g4: 1e-4 }
}

fn random_hermitian(dim: usize, scale: f64, rng: &mut ChaCha8Rng) -> FockOperator {
    let m = DMatrix::from_fn(dim, dim, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    FockOperator::hermitian((&m + m.adjoint()) * C64::new(0.5 * scale, 0.0)).unwrap()
}

fn sorted_mod(values: impl Iterator<Item = f64>, m: f64) -> Vec<f64> {
    let mut v: Vec<f64> = values.map(|x| reduce_mod(x, m)).collect();
    v.sort_by(f64::total_cmp);
    v
}

#[test]
fn undriven_hamiltonian_is_number_operator() {
    let d = DriveParams { omega0: 1.7, omegad: 3.0, drive: 0.0, g3: 0.0, g4: 0.0 };
    let h = lab_hamiltonian(0.4, &d, 8).unwrap();
    let n = number_operator(8).unwrap();
    assert!((h.matrix() - n.matrix() * C64::new(1.7, 0.0)).camax() < 1e-15);
}

#[test]
fn lab_hamiltonian_is_periodic_and_hermitian() {
    let d = toy_drive();
    for t in [0.0, 0.3, 1.9] {
        let h0 = lab_hamiltonian(t, &d, 20).unwrap();
        let h1 = lab_hamiltonian(t + d.period(), &d, 20).unwrap();
        assert!(h0.is_hermitian());
        assert!(h0.hermiticity_defect() < 1e-14);
        assert!((h0.matrix() - h1.matrix()).camax() < 1e-12);
    }
}

#[test]
fn drive_params_serde_uses_capital_omega() {
    let js = serde_json::to_value(toy_drive()).unwrap();
    assert!(js.get("Omegad").is_some());
    assert!(js.get("drive").is_none());
}

#[test]
fn free_oscillator_quasienergies() {
    let d = DriveParams { omega0: 1.3, omegad: 2.9, drive: 0.0, g3: 0.0, g4: 0.0 };
    let dim = 12;
    let prop = propagate_period(&d, dim, &PropagatorOptions::default()).unwrap();
    for n in 0..dim {
        let expected = C64::from_polar(1.0, -1.3 * n as f64 * d.tau());
        assert!((prop.full.get(n, n) - expected).norm() < 1e-8, "n = {n}");
    }
    let fs = floquet_spectrum(&prop.full, d.tau(), d.omegad).unwrap();
    let m = fs.modulus();
    let got = sorted_mod(fs.quasienergies.iter().copied(), m);
    let want = sorted_mod((0..dim).map(|n| 1.3 * n as f64), m);
    for (g, w) in got.iter().zip(&want) {
        assert!(circle_distance(*g, *w, m) < 1e-9, "{g} vs {w}");
    }
    assert!(fs.quasienergies.iter().all(|&e| (0.0..m).contains(&e)));
}

#[test]
fn static_hamiltonian_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = random_hermitian(10, 0.8, &mut rng);
    let omegad = 2.3;
    let tau = 4.0 * PI / omegad;
    let gen = StaticGenerator::new(&h).unwrap();
    let (u, _) = propagate(&gen, 0.0, tau, &PropagatorOptions::default()).unwrap();
    let fs = floquet_spectrum(&FockOperator::assume_unitary(u), tau, omegad).unwrap();
    let m = fs.modulus();
    let eig = nalgebra::SymmetricEigen::new(h.matrix().clone());
    let got = sorted_mod(fs.quasienergies.iter().copied(), m);
    let want = sorted_mod(eig.eigenvalues.iter().copied(), m);
    for (g, w) in got.iter().zip(&want) {
        assert!(circle_distance(*g, *w, m) < 1e-9, "{g} vs {w}");
    }
}

#[test]
fn exact_evolution_matches_integration() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = random_hermitian(8, 1.0, &mut rng);
    let gen = StaticGenerator::new(&h).unwrap();
    let (u, _) = propagate(&gen, 0.0, 1.5, &PropagatorOptions::default()).unwrap();
    let exact = exact_evolution(&h, 1.5).unwrap();
    assert!((u - exact.matrix()).camax() < 1e-8);
}

#[test]
fn composition_matches_direct_two_periods() {
    let d = toy_drive();
    let dim = 30;
    let opts = PropagatorOptions::default();
    let prop = propagate_period(&d, dim, &opts).unwrap();
    let (direct, _) = propagate_two_periods_direct(&d, dim, &opts).unwrap();
    let diff = (prop.full.matrix() - direct.matrix()).camax();
    assert!(diff < 1e-8, "composition mismatch {diff:.3e}");
    assert!(prop.unitarity_defect < 1e-8);
    assert!(prop.full.is_unitary());
}

#[test]
fn driven_spectrum_has_small_eigen_residual() {
    let d = toy_drive();
    let prop = propagate_period(&d, 30, &PropagatorOptions::default()).unwrap();
    let fs = floquet_spectrum_from_period(&prop.half, d.period(), d.omegad).unwrap();
    assert!(fs.eigen_residual < 1e-8, "{:.3e}", fs.eigen_residual);
    let direct = floquet_spectrum(&prop.full, d.tau(), d.omegad).unwrap();
    let m = fs.modulus();
    let a = sorted_mod(fs.quasienergies.iter().copied(), m);
    let b = sorted_mod(direct.quasienergies.iter().copied(), m);
    for (x, y) in a.iter().zip(&b) {
        assert!(circle_distance(*x, *y, m) < 1e-9);
    }
    for mode in &fs.modes {
        assert!((mode.amplitudes().norm() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn halving_tolerance_moves_quasienergies_less_than_defect() {
    let d = toy_drive();
    let dim = 30;
    let coarse = PropagatorOptions { rel_tol: 1e-8, abs_tol: 1e-8, ..Default::default() };
    let fine = PropagatorOptions { rel_tol: 5e-9, ..coarse.clone() };
    let pc = propagate_period(&d, dim, &coarse).unwrap();
    let pf = propagate_period(&d, dim, &fine).unwrap();
    let fc = floquet_spectrum_from_period(&pc.half, d.period(), d.omegad).unwrap();
    let ff = floquet_spectrum_from_period(&pf.half, d.period(), d.omegad).unwrap();
    let m = fc.modulus();
    let a = sorted_mod(fc.quasienergies.iter().copied(), m);
    let b = sorted_mod(ff.quasienergies.iter().copied(), m);
    let shift = a.iter().zip(&b).fold(0.0f64, |w, (x, y)| w.max(circle_distance(*x, *y, m)));
    assert!(shift < pc.unitarity_defect, "shift {shift:.3e}, defect {:.3e}", pc.unitarity_defect);
}

fn nondegenerate_effective() -> (EffectiveParams, usize, f64) {
    (EffectiveParams::new(1e-3, 1e-3, 3e-4).unwrap(), 24, 1.0)
}

#[test]
fn matching_is_identity_for_effective_evolution() {
    let (p, dim, omegad) = nondegenerate_effective();
    let h = build_effective_hamiltonian(&p, dim).unwrap();
    let eff = eigendecompose(&h).unwrap();
    let tau = 4.0 * PI / omegad;
    let mut fs = floquet_spectrum(&exact_evolution(&h, tau).unwrap(), tau, omegad).unwrap();
    match_states(&eff, &mut fs, &MatchOptions::default()).unwrap();
    assert!(fs.unmatched.is_empty());
    for i in 0..dim {
        let m = fs.matched(i).unwrap();
        assert!((m.fidelity - 1.0).abs() < 1e-9, "state {i}: {}", m.fidelity);
        let want = reduce_mod(eff.energies[i], fs.modulus());
        assert!(circle_distance(fs.quasienergies[m.floquet], want, fs.modulus()) < 1e-10);
    }
}

#[test]
fn matching_survives_tiny_unitary_perturbation() {
    let (p, dim, omegad) = nondegenerate_effective();
    let h = build_effective_hamiltonian(&p, dim).unwrap();
    let eff = eigendecompose(&h).unwrap();
    let tau = 4.0 * PI / omegad;
    let u = exact_evolution(&h, tau).unwrap();
    let mut base = floquet_spectrum(&u, tau, omegad).unwrap();
    match_states(&eff, &mut base, &MatchOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5 {
        let g = random_hermitian(dim, 1.0, &mut rng);
        let scale = 5e-11 / g.matrix().norm();
        let kick = exact_evolution(&g, scale).unwrap();
        assert!((kick.matrix() - DMatrix::<C64>::identity(dim, dim)).norm() < 1e-10);
        let mut fs = floquet_spectrum(&kick.compose(&u), tau, omegad).unwrap();
        match_states(&eff, &mut fs, &MatchOptions::default()).unwrap();
        for i in 0..dim {
            let (a, b) = (base.matched(i).unwrap(), fs.matched(i).unwrap());
            assert!(base.modes[a.floquet].fidelity(&fs.modes[b.floquet]) > 1.0 - 1e-12);
        }
    }
}

#[test]
fn matching_respects_fidelity_threshold() {
    let (p, dim, omegad) = nondegenerate_effective();
    let h = build_effective_hamiltonian(&p, dim).unwrap();
    let eff = eigendecompose(&h).unwrap();
    let tau = 4.0 * PI / omegad;
    // Spreading every mode evenly over three eigenstates caps fidelity at 1/3.
    let mut fs = floquet_spectrum(&exact_evolution(&h, tau).unwrap(), tau, omegad).unwrap();
    let w = C64::new(1.0 / 3f64.sqrt(), 0.0);
    let mixed: Vec<StateVector> = (0..dim)
        .map(|k| {
            let v = (fs.modes[k].amplitudes() + fs.modes[(k + 1) % dim].amplitudes() + fs.modes[(k + 2) % dim].amplitudes()) * w;
            StateVector::new(v).unwrap()
        })
        .collect();
    fs.modes = mixed;
    match_states(&eff, &mut fs, &MatchOptions::default()).unwrap();
    assert!(fs.matching.iter().all(|m| m.is_none()));
    assert_eq!(fs.unmatched.len(), dim);
    match_states(&eff, &mut fs, &MatchOptions { f_min: 0.3, ..Default::default() }).unwrap();
    assert!(fs.matching.iter().all(|m| m.is_some_and(|m| (m.fidelity - 1.0 / 3.0).abs() < 1e-9)));
}

#[test]
fn forced_ground_pair_takes_best_overlap() {
    let (p, dim, omegad) = nondegenerate_effective();
    let h = build_effective_hamiltonian(&p, dim).unwrap();
    let eff = eigendecompose(&h).unwrap();
    let tau = 4.0 * PI / omegad;
    let mut fs = floquet_spectrum(&exact_evolution(&h, tau).unwrap(), tau, omegad).unwrap();
    let (a, b) = (C64::new(0.4f64.sqrt(), 0.0), C64::new(0.3f64.sqrt(), 0.0));
    // Effective state i keeps 0.4 of itself in mode i and nothing clears f_min.
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by_key(|&k| eff.states.iter().position(|s| s.fidelity(&fs.modes[k]) > 0.5).unwrap());
    let modes: Vec<StateVector> = (0..dim)
        .map(|r| {
            let m = |s: usize| fs.modes[order[(r + s) % dim]].amplitudes();
            StateVector::new(m(0) * a + m(1) * b + m(2) * b).unwrap()
        })
        .collect();
    fs.modes = modes;
    let opts = MatchOptions { force_ground_pair: true, ..Default::default() };
    match_states(&eff, &mut fs, &opts).unwrap();
    assert_eq!(fs.forced, vec![0, 1]);
    assert!(fs.matching[2..].iter().all(Option::is_none));
    let (m0, m1) = (fs.matched(0).unwrap(), fs.matched(1).unwrap());
    assert_eq!((m0.floquet, m1.floquet), (0, 1));
    assert!((m0.fidelity - 0.4).abs() < 1e-9);
    assert!(quasienergy_splitting(&fs).is_ok());

    let previous = fs.clone();
    match_continuation(&eff, &previous, &mut fs, &opts).unwrap();
    assert!(fs.forced.is_empty());
    assert_eq!(fs.matched(0).unwrap().floquet, 0);
}

#[test]
fn splitting_requires_matched_pair() {
    let (p, dim, omegad) = nondegenerate_effective();
    let h = build_effective_hamiltonian(&p, dim).unwrap();
    let tau = 4.0 * PI / omegad;
    let fs = floquet_spectrum(&exact_evolution(&h, tau).unwrap(), tau, omegad).unwrap();
    assert!(matches!(quasienergy_splitting(&fs), Err(Error::ClassificationRequired)));
}

#[test]
fn splitting_uses_circle_metric() {
    let (p, dim, omegad) = nondegenerate_effective();
    let h = build_effective_hamiltonian(&p, dim).unwrap();
    let eff = eigendecompose(&h).unwrap();
    let tau = 4.0 * PI / omegad;
    let mut fs = floquet_spectrum(&exact_evolution(&h, tau).unwrap(), tau, omegad).unwrap();
    match_states(&eff, &mut fs, &MatchOptions::default()).unwrap();
    let (a, b) = (fs.matched(0).unwrap().floquet, fs.matched(1).unwrap().floquet);
    let m = fs.modulus();
    fs.quasienergies[a] = 0.01 * m;
    fs.quasienergies[b] = 0.98 * m;
    assert!((quasienergy_splitting(&fs).unwrap() - 0.03 * m).abs() < 1e-12);
    fs.quasienergies[b] = fs.quasienergies[a];
    assert_eq!(quasienergy_splitting(&fs).unwrap(), 0.0);
}

#[test]
fn checkpoint_roundtrip() {
    let d = toy_drive();
    let prop = propagate_period(&d, 10, &PropagatorOptions::default()).unwrap();
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &prop.full, prop.tau, &d).unwrap();
    let ck = read_checkpoint(buf.as_slice()).unwrap();
    assert_eq!(ck.tau, prop.tau);
    assert_eq!(ck.params_hash, d.hash(10));
    assert_eq!(ck.operator.matrix(), prop.full.matrix());
    buf[0] = b'X';
    assert!(read_checkpoint(buf.as_slice()).is_err());
}

#[test]
fn hash_depends_on_every_parameter() {
    let d = toy_drive();
    let base = d.hash(40);
    assert_ne!(base, d.hash(41));
    for i in 0..5 {
        let mut e = d;
        let f = [&mut e.omega0, &mut e.omegad, &mut e.drive, &mut e.g3, &mut e.g4];
        *f.into_iter().nth(i).unwrap() *= 1.0 + 1e-12;
        assert_ne!(base, e.hash(40));
    }
}

#[test]
fn propagator_options_validation() {
    assert!(PropagatorOptions::default().validate().is_ok());
    let bad = PropagatorOptions { rel_tol: 1e-5, ..Default::default() };
    assert!(bad.validate().is_err());
    let bad = PropagatorOptions { abs_tol: 0.0, ..Default::default() };
    assert!(bad.validate().is_err());
    let parsed: std::result::Result<PropagatorOptions, _> = serde_json::from_str(r#"{"rel_tol": 1e-9, "bogus": 1}"#);
    assert!(parsed.is_err());
    let parsed: PropagatorOptions = serde_json::from_str(r#"{"integrator_kind": "adaptive-multistep"}"#).unwrap();
    assert_eq!(parsed.integrator_kind, IntegratorKind::AdaptiveMultistep);
    assert_eq!(parsed.rel_tol, 1e-10);
}

#[test]
fn multistep_propagator_is_unitary() {
    let d = toy_drive();
    let opts = PropagatorOptions { integrator_kind: IntegratorKind::AdaptiveMultistep, ..Default::default() };
    let prop = propagate_period(&d, 20, &opts).unwrap();
    assert!(prop.unitarity_defect < 1e-8, "{:.3e}", prop.unitarity_defect);
    let rk = propagate_period(&d, 20, &PropagatorOptions::default()).unwrap();
    assert!((prop.full.matrix() - rk.full.matrix()).camax() < 1e-7);
}

#[test]
fn calibration_without_three_wave_mixing_fails() {
    let p = EffectiveParams::from_ratios(1e-4, 50.0, 10.0).unwrap();
    let err = calibrate_drive(&p, 0.0, 0.0, &CalibrationOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Calibration(_)));
}

#[test]
fn seed_inverts_lowest_order_relations() {
    let p = EffectiveParams::from_ratios(2e-4, 50.0, 10.0).unwrap();
    let (g3, g4) = (0.02 / 3.0, 2.5e-9);
    let (d, frame) = seed_drive(&p, g3, g4).unwrap();
    assert!((30.0 * g3 * g3 / d.omega0 - 6.0 * g4 - p.kerr).abs() < 1e-15);
    assert!((d.omega0 - 0.5 * d.omegad - 2.0 * p.kerr - p.delta).abs() < 1e-12);
    let pi = d.drive * d.omegad / (d.omegad * d.omegad - d.omega0 * d.omega0);
    assert!((3.0 * g3 * pi - p.eps2).abs() < 1e-14);
    assert!((frame.theta - PI / 4.0).abs() < 1e-14);
    assert!(frame.beta_re == 0.0 && frame.beta_im > 0.0);

    let (_, flipped) = seed_drive(&p, -g3, g4).unwrap();
    assert!((flipped.theta + PI / 4.0).abs() < 1e-14);
}

#[test]
fn micromotion_generator_is_hermitian_and_small() {
    let p = EffectiveParams::from_ratios(1e-4, 50.0, 10.0).unwrap();
    let (d, frame) = seed_drive(&p, 0.02 / 3.0, 2.5e-9).unwrap();
    let k0 = micromotion_generator(&d, 60).unwrap();
    assert!((&k0 - k0.adjoint()).camax() < 1e-15);
    let u = frame.operator(60).unwrap();
    assert!(u.unitarity_defect() < 1e-10);
}

proptest! {
    #[test]
    fn reduction_is_modular(x in -1e3f64..1e3, m in 0.1f64..10.0, k in -5i32..5) {
        let r = reduce_mod(x, m);
        prop_assert!((0.0..m).contains(&r));
        let shifted = reduce_mod(x + k as f64 * m, m);
        prop_assert!(circle_distance(r, shifted, m) < 1e-9);
    }

    #[test]
    fn circle_distance_is_a_metric(a in 0.0f64..5.0, b in 0.0f64..5.0, c in 0.0f64..5.0) {
        let m = 5.0;
        let (ab, bc, ac) = (circle_distance(a, b, m), circle_distance(b, c, m), circle_distance(a, c, m));
        prop_assert!(ab >= 0.0 && ab <= 0.5 * m + 1e-12);
        prop_assert!((ab - circle_distance(b, a, m)).abs() < 1e-12);
        prop_assert!(ac <= ab + bc + 1e-12);
    }
}

#[test]
fn random_unitary_spectrum_reconstructs_operator() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let h = random_hermitian(12, 2.0, &mut rng);
    let u = exact_evolution(&h, 1.0).unwrap();
    let omegad = 1.0 + rng.random::<f64>();
    let tau = 4.0 * PI / omegad;
    let fs = floquet_spectrum(&u, tau, omegad).unwrap();
    let mut recon = DMatrix::<C64>::zeros(12, 12);
    for (e, v) in fs.quasienergies.iter().zip(&fs.modes) {
        let a = v.amplitudes();
        recon += a * a.adjoint() * C64::from_polar(1.0, -e * tau);
    }
    assert!((recon - u.matrix()).camax() < 1e-10);
}

#[test]
fn propagator_options_roundtrip_json() {
    let o = PropagatorOptions::default();
    let text = serde_json::to_string(&o).unwrap();
    assert!(text.contains("\"max_step\":null"));
    assert_eq!(serde_json::from_str::<PropagatorOptions>(&text).unwrap(), o);
    let capped: PropagatorOptions = serde_json::from_str(r#"{"max_step": 0.5}"#).unwrap();
    assert_eq!(capped.max_step, 0.5);
}
