//! End-to-end checks across modules: profile, field, Kraus set, calibration,
//! joint statistics and witness estimates.

use dualbasis::metasurface::{sample_field, FieldSource, PhaseProfile};
use dualbasis::polarization::{correlator, pauli, Axis, BellKind, TwoQubitState, C64};
use dualbasis::povm::{calibrate_visibilities, kraus_closed_form, kraus_decompose, PortAssignment, Quadrature, Visibilities};
use dualbasis::witness::{
    bell_parity_sampler, estimate_from_counts, exact_correlators, joint_probabilities, sequential_run, simulate_counts, AnalyzerModel,
    Basis, CoincidenceTable, Dataset, WitnessError,
};
use proptest::prelude::*;

fn werner(p: f64, k: BellKind) -> TwoQubitState {
    TwoQubitState::werner(p, k).unwrap()
}

#[test]
fn half_depth_device_calibrates_the_same_on_both_paths() {
    let prof = PhaseProfile::sawtooth(8.0, 8.0, 0.5, 0.5).unwrap();
    let closed = kraus_closed_form(&prof, 8, 8);
    let field = sample_field(FieldSource::Profile(&prof), 256, 256).unwrap();
    let grid = kraus_decompose(&field, 8, 8, Quadrature::EndCorrected).unwrap();
    let ports = PortAssignment::standard();
    let a = calibrate_visibilities(&closed, &ports).unwrap();
    let b = calibrate_visibilities(&grid, &ports).unwrap();
    // sinc² weights of the ±1 orders at half depth
    assert!((a.eta_z - 12.0 / 25.0).abs() < 1e-6, "{}", a.eta_z);
    assert!((a.eta_y - 4.0 / 5.0).abs() < 1e-6, "{}", a.eta_y);
    for (x, y) in [(a.eta_z, b.eta_z), (a.eta_y, b.eta_y), (a.capture, b.capture)] {
        assert!((x - y).abs() < 1e-6);
    }
}

#[test]
fn pbs_visibility_scales_correlators_by_its_square() {
    for p in [0.3, 0.7, 1.0] {
        let rho = werner(p, BellKind::PhiPlus);
        for (basis, axis) in [(Basis::Z, Axis::Z), (Basis::Y, Axis::Y)] {
            let a = AnalyzerModel::pbs(basis, 0.9).unwrap();
            let (cz, cy) = exact_correlators(&rho, &a, &a).unwrap();
            let got = cz.or(cy).unwrap();
            let truth = correlator(&rho, &pauli(axis), &pauli(axis));
            assert!((got - 0.81 * truth).abs() < 1e-12);
        }
    }
}

#[test]
fn bell_parity_sampler_sign_patterns() {
    let t = bell_parity_sampler(&TwoQubitState::bell(BellKind::PhiMinus), 5_000, 1);
    let plus_plus: u64 = t
        .row_labels
        .iter()
        .zip(&t.counts)
        .filter(|(l, _)| l.sx == 1 && l.sy == 1)
        .map(|(_, r)| r.iter().sum::<u64>())
        .sum();
    assert_eq!(plus_plus, 5_000);

    let p = 0.6;
    let a = AnalyzerModel::bell_parity();
    let j = joint_probabilities(&werner(p, BellKind::PsiMinus), &a, &a).unwrap();
    let mm: f64 = j
        .row_labels
        .iter()
        .zip(&j.probs)
        .filter(|(l, _)| l.sx == -1 && l.sy == -1)
        .map(|(_, r)| r.iter().sum::<f64>())
        .sum();
    assert!((mm - (1.0 + 3.0 * p) / 4.0).abs() < 1e-12);
}

#[test]
fn counts_and_loss_add_up_with_imperfect_detectors() {
    let prof = PhaseProfile::sawtooth(8.0, 8.0, 0.6, 0.7).unwrap();
    let k = kraus_closed_form(&prof, 8, 8);
    let a = AnalyzerModel::metasurface(&k, &PortAssignment::standard())
        .unwrap()
        .with_detectors(0.8, 0.01)
        .unwrap();
    let b = AnalyzerModel::pbs(Basis::Y, 0.95).unwrap().with_detectors(0.7, 0.002).unwrap();
    for seed in 0..20 {
        let t = simulate_counts(&werner(0.8, BellKind::PhiPlus), &a, &b, 12_345, seed).unwrap();
        assert_eq!(t.coincidences() + t.loss_count, 12_345);
    }
}

#[test]
fn zero_efficiency_yields_no_coincidences() {
    let dead = AnalyzerModel::pbs(Basis::Z, 1.0).unwrap().with_detectors(0.0, 0.0).unwrap();
    let live = AnalyzerModel::pbs(Basis::Z, 1.0).unwrap();
    let t = simulate_counts(&TwoQubitState::bell(BellKind::PhiPlus), &dead, &live, 1_000, 0).unwrap();
    assert_eq!(t.coincidences(), 0);
    let v = Visibilities::IDEAL;
    let e = estimate_from_counts(&Dataset::Simultaneous { table: t }, &v, &v, 10, 0).unwrap_err();
    assert!(matches!(e, WitnessError::NoCoincidences));
}

#[test]
fn expected_counts_reproduce_exact_correlators() {
    let rho = werner(0.75, BellKind::PsiPlus);
    let a = AnalyzerModel::bell_parity();
    let table = joint_probabilities(&rho, &a, &a).unwrap();
    let n = 1_000_000;
    let counts = CoincidenceTable::from_expected(&table, n);
    let r = estimate_from_counts(
        &Dataset::Simultaneous { table: counts },
        &Visibilities::IDEAL,
        &Visibilities::IDEAL,
        0,
        0,
    )
    .unwrap();
    let (cz, cy) = exact_correlators(&rho, &a, &a).unwrap();
    assert!((r.c_z_obs.unwrap() - cz.unwrap()).abs() <= 4.0 / n as f64);
    assert!((r.c_y_obs.unwrap() - cy.unwrap()).abs() <= 4.0 / n as f64);
}

#[test]
fn sampled_correlators_cover_the_truth() {
    // |Ĉ − C| ≤ 4·SE in at least 99% of seeded runs
    let rho = werner(0.9, BellKind::PsiMinus);
    let truth = -0.9;
    let a = AnalyzerModel::bell_parity();
    let mut covered = 0;
    for seed in 0..500 {
        let t = simulate_counts(&rho, &a, &a, 100_000, seed).unwrap();
        let r = estimate_from_counts(
            &Dataset::Simultaneous { table: t },
            &Visibilities::IDEAL,
            &Visibilities::IDEAL,
            0,
            seed,
        )
        .unwrap();
        let u = r.uncertainty.unwrap();
        let ok_z = (r.c_z_obs.unwrap() - truth).abs() <= 4.0 * u.se_c_z;
        let ok_y = (r.c_y_obs.unwrap() - truth).abs() <= 4.0 * u.se_c_y;
        covered += (ok_z && ok_y) as usize;
    }
    assert!(covered >= 495, "{covered}/500");
}

#[test]
fn sequential_run_matches_projective_statistics() {
    let r = sequential_run(&TwoQubitState::bell(BellKind::PhiPlus), 200_000, 1.0, 100, 4).unwrap();
    assert_eq!(r.c_z_obs, Some(1.0));
    let u = r.uncertainty.unwrap();
    assert_eq!(u.se_c_z, 0.0);
    assert!((r.c_y_obs.unwrap() + 1.0).abs() <= 4.0 * u.se_c_y + 1e-12);
    assert!(matches!(
        sequential_run(&TwoQubitState::bell(BellKind::PhiPlus), 3, 1.0, 10, 0),
        Err(WitnessError::OddPairs(3))
    ));
}

#[test]
fn datasets_round_trip_through_json() {
    let t = bell_parity_sampler(&werner(0.5, BellKind::PhiPlus), 1_000, 8);
    let d = Dataset::Simultaneous { table: t };
    let text = serde_json::to_string(&d).unwrap();
    let back: Dataset = serde_json::from_str(&text).unwrap();
    assert_eq!(back, d);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bell_parity_correlators_match_on_bell_diagonal_states(w in proptest::array::uniform4(0.0f64..1.0)) {
        let total: f64 = w.iter().sum::<f64>().max(1e-9);
        let mut rho = TwoQubitState::bell(BellKind::ALL[0]).rho() * C64::new(w[0] / total, 0.0);
        for (k, wk) in BellKind::ALL.iter().zip(w).skip(1) {
            rho += TwoQubitState::bell(*k).rho() * C64::new(wk / total, 0.0);
        }
        let s = TwoQubitState::new(rho).unwrap();
        let a = AnalyzerModel::bell_parity();
        let (cz, cy) = exact_correlators(&s, &a, &a).unwrap();
        prop_assert!((cz.unwrap() - correlator(&s, &pauli(Axis::Z), &pauli(Axis::Z))).abs() <= 1e-12);
        prop_assert!((cy.unwrap() - correlator(&s, &pauli(Axis::Y), &pauli(Axis::Y))).abs() <= 1e-12);
    }
}
