use std::f64::consts::PI;

use kerrcat::cat::{build_projectors, fgr_rate, semiclassical_splitting, AreaSource, ChaoticClassification, SemiclassicalModel};
use kerrcat::classical::{effective_classical_hamiltonian, polygon_area, stationary_points, stroboscopic_map, PhasePoint};
use kerrcat::floquet::calibrate::seed_drive;
use kerrcat::floquet::{
    exact_evolution, floquet_spectrum, floquet_spectrum_from_period, match_states, propagate_period, quasienergy_splitting, MatchOptions,
    PropagatorOptions,
};
use kerrcat::fockspace::{build_effective_hamiltonian, eigendecompose};
use kerrcat::{EffectiveParams, FockOperator};
use proptest::prelude::*;

fn shallow(k: f64) -> EffectiveParams {
    EffectiveParams::from_ratios(k, 10.0, 0.2).unwrap()
}

#[test]
fn lab_propagator_is_unitary_and_period_doubled() {
    let p = shallow(1e-3);
    let (d, _) = seed_drive(&p, 0.02 / 3.0, 1e-8 / 4.0).unwrap();
    let prop = propagate_period(&d, 48, &PropagatorOptions::default()).unwrap();
    assert!(prop.unitarity_defect < 1e-8, "{}", prop.unitarity_defect);
    assert!((prop.tau - 4.0 * PI / d.omegad).abs() < 1e-12 * prop.tau);
    let squared = prop.half.compose(&prop.half);
    assert!((squared.matrix() - prop.full.matrix()).camax() < 1e-12);
}

#[test]
fn small_kerr_floquet_ground_pair_follows_the_effective_model() {
    let p = shallow(1e-4);
    let dim = 48;
    let (d, frame) = seed_drive(&p, 0.02 / 3.0, 1e-8 / 4.0).unwrap();
    let prop = propagate_period(&d, dim, &PropagatorOptions::default()).unwrap();
    let v = frame.operator(dim).unwrap();
    let mut fs = floquet_spectrum_from_period(&prop.half, d.period(), d.omegad).unwrap().transformed(&v.adjoint()).unwrap();
    let eff = eigendecompose(&build_effective_hamiltonian(&p, dim).unwrap()).unwrap();
    match_states(&eff, &mut fs, &MatchOptions::default()).unwrap();
    for n in 0..2 {
        assert!(fs.matched(n).unwrap().fidelity > 0.99, "state {n}");
    }
    let (de_f, de_e) = (quasienergy_splitting(&fs).unwrap(), eff.ground_splitting());
    assert!((de_f / de_e - 1.0).abs() < 0.1, "{de_f} vs {de_e}");
}

#[test]
fn static_evolution_reproduces_eigenphases() {
    let p = shallow(1e-3);
    let h = build_effective_hamiltonian(&p, 30).unwrap();
    let eff = eigendecompose(&h).unwrap();
    let tau = 4.0 * PI / 2.1;
    let mut fs = floquet_spectrum(&exact_evolution(&h, tau).unwrap(), tau, 2.1).unwrap();
    match_states(&eff, &mut fs, &MatchOptions::default()).unwrap();
    let m = fs.modulus();
    for n in 0..30 {
        let got = fs.quasienergies[fs.matched(n).unwrap().floquet];
        let want = eff.energies[n].rem_euclid(m);
        let dist = (got - want).abs().min(m - (got - want).abs());
        assert!(dist < 1e-10, "state {n}");
    }
}

#[test]
fn wells_are_stationary() {
    for (e, dk) in [(50.0, 10.0), (10.0, 0.2), (30.0, 10.0), (4.0, -3.0)] {
        let p = EffectiveParams::from_ratios(1e-3, e, dk).unwrap();
        let st = stationary_points(&p).unwrap();
        let h = 1e-5;
        for q in st.wells.iter().chain([&st.saddle]) {
            let f = |dx: f64, dp: f64| effective_classical_hamiltonian(PhasePoint::new(q.x + dx, q.p + dp), &p);
            let gx = (f(h, 0.0) - f(-h, 0.0)) / (2.0 * h);
            let gp = (f(0.0, h) - f(0.0, -h)) / (2.0 * h);
            assert!(gx.abs().max(gp.abs()) < 1e-8, "{q:?}: ({gx}, {gp})");
        }
    }
}

#[test]
fn stroboscopic_map_preserves_area() {
    let p = EffectiveParams::from_ratios(1e-3, 50.0, 10.0).unwrap();
    let (d, _) = seed_drive(&p, 0.02 / 3.0, 1e-8 / 4.0).unwrap();
    let st = stationary_points(&p).unwrap();
    let c = PhasePoint::new(-0.4 * st.wells[1].x, -2.0);
    let ring: Vec<PhasePoint> = (0..32)
        .map(|k| {
            let a = 2.0 * PI * k as f64 / 32.0;
            PhasePoint::new(c.x + 2e-3 * a.cos(), c.p + 1e-3 * a.sin())
        })
        .collect();
    let mut pts = ring.clone();
    for period in 1..=3 {
        pts = pts.iter().map(|&q| stroboscopic_map(&d, q, 1e-12).unwrap()).collect();
        let ratio = polygon_area(&pts) / polygon_area(&ring);
        assert!((ratio - 1.0).abs() < 1e-3 * period as f64, "period {period}: {ratio}");
    }
}

#[test]
fn semiclassical_formula_at_unit_argument() {
    for (c0, hbar) in [(1.0, 1.0), (0.37, 1.0), (5.0, 0.5)] {
        let m = SemiclassicalModel { c0, hbar, area_source: AreaSource::DrivenIsland };
        let de = semiclassical_splitting(PI * hbar, &m).unwrap();
        assert!((de - c0 * hbar * (-2.0f64).exp()).abs() < 1e-12);
    }
}

fn effective(dim: usize) -> (kerrcat::Spectrum, FockOperator) {
    let p = EffectiveParams::from_ratios(1e-3, 3.0, 1.0).unwrap();
    let h = build_effective_hamiltonian(&p, dim).unwrap();
    (eigendecompose(&h).unwrap(), h)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projectors_resolve_the_identity(mask in proptest::collection::vec(any::<bool>(), 20)) {
        let dim = 20;
        let (eff, _) = effective(dim);
        let chaotic: Vec<usize> = (0..dim).filter(|&k| mask[k]).collect();
        let c = ChaoticClassification {
            regular_indices: (0..dim).filter(|&k| !mask[k]).collect(),
            chaotic_indices: chaotic.clone(),
            ..ChaoticClassification::all_regular(dim)
        };
        let pr = build_projectors(&c, &eff).unwrap();
        let (r, ch) = (pr.regular.matrix.matrix(), pr.chaotic.matrix.matrix());
        prop_assert!(pr.chaotic.idempotency_defect() < 1e-10);
        prop_assert!(pr.regular.idempotency_defect() < 1e-10);
        prop_assert!((pr.chaotic.trace() - chaotic.len() as f64).abs() < 1e-10);
        prop_assert!((r * ch).camax() < 1e-10);
        prop_assert!((r + ch - nalgebra::DMatrix::identity(dim, dim)).camax() < 1e-10);
    }

    #[test]
    fn stationary_states_leak_nothing(t in 0.1f64..1e4, n in 0usize..6) {
        let dim = 24;
        let (eff, h) = effective(dim);
        let c = ChaoticClassification {
            regular_indices: (0..8).collect(),
            chaotic_indices: (8..dim).collect(),
            ..ChaoticClassification::all_regular(dim)
        };
        let pr = build_projectors(&c, &eff).unwrap();
        let u = exact_evolution(&h, t).unwrap();
        prop_assert!(fgr_rate(&pr.chaotic, &u, &eff.states[n]).unwrap() < 1e-10);
    }

    #[test]
    fn semiclassical_splitting_decreases_with_area(a in 0.5f64..200.0, grow in 1.01f64..3.0) {
        let m = SemiclassicalModel { c0: 1.0, hbar: 1.0, area_source: AreaSource::DrivenIsland };
        prop_assert!(semiclassical_splitting(a * grow, &m).unwrap() < semiclassical_splitting(a, &m).unwrap());
    }
}
