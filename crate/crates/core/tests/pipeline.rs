use proptest::prelude::*;
use qxai::circuits::{build_z_feature_map, build_zz_feature_map, Entanglement, ParamCircuit};
use qxai::data::{load_csv, split, Scaler};
use qxai::explain::{explain_decision_function, DecisionMode, ShapleySettings};
use qxai::models::{fit_qsvc, qsvc_decisions, quantum_kernel, score, SmoSettings};
use qxai::qsim::run_circuit;

#[test]
fn empty_circuit_leaves_ground_state() {
    let c = ParamCircuit::new("empty", 2, vec![], vec![], vec![]).unwrap();
    let s = run_circuit(&c, &[]).unwrap();
    let amps = s.amplitudes();
    assert_eq!(amps.len(), 4);
    assert!((amps[0].re - 1.0).abs() < 1e-15 && amps[0].im == 0.0);
    assert!(amps[1..].iter().all(|a| a.norm() == 0.0));
}

#[test]
fn csv_to_explanation() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("toy.csv");
    let mut text = String::from("a,b,y\n");
    for i in 0..30 {
        let a = i as f64 / 29.0;
        let b = ((i * 7) % 30) as f64 / 29.0;
        text.push_str(&format!("{a},{b},{}\n", u8::from(a > 0.5)));
    }
    std::fs::write(&path, text).unwrap();

    let ds = load_csv(&path, "y").unwrap();
    let (train, test, _) = split(&ds, 0.2, 1).unwrap();
    let scaler = Scaler::fit(&train).unwrap();
    let (train, _) = scaler.transform_dataset(&train).unwrap();
    let (test, _) = scaler.transform_dataset(&test).unwrap();
    let fm = build_z_feature_map(2, 2).unwrap();
    let (model, k) = fit_qsvc(&fm, &train.rows, &train.labels, &SmoSettings::default()).unwrap();
    assert!(k.check().unwrap().is_valid());
    let pred: Vec<u8> = qsvc_decisions(&model, &test.rows).unwrap().iter().map(|&d| u8::from(d > 0.0)).collect();
    assert!(score(&pred, &test.labels).accuracy >= 0.8);

    let ids: Vec<usize> = (0..test.len()).collect();
    let e = explain_decision_function(
        &model,
        &test.rows,
        &ids,
        DecisionMode::Direct,
        &train.rows,
        &train.feature_names,
        &ShapleySettings::default(),
    )
    .unwrap();
    // only `a` decides the label
    assert_eq!(e.feature_names[e.ranking()[0]], "a");
    for r in &e.reports {
        assert!(r.efficiency_gap().abs() < 1e-9);
    }
}

fn fidelity_map() -> impl Strategy<Value = (usize, usize, u8)> {
    (2usize..=4, 1usize..=2, 0u8..3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn generated_kernels_are_valid(
        (n, reps, kind) in fidelity_map(),
        seed in prop::collection::vec(0.0f64..1.0, 40),
    ) {
        let fm = match kind {
            0 => build_z_feature_map(n, reps).unwrap(),
            1 => build_zz_feature_map(n, reps, Entanglement::Linear).unwrap(),
            _ => build_zz_feature_map(n, reps, Entanglement::Full).unwrap(),
        };
        let xs: Vec<Vec<f64>> = seed.chunks(n).filter(|c| c.len() == n).map(<[f64]>::to_vec).collect();
        let c = quantum_kernel(&xs, &fm).unwrap().check().unwrap();
        prop_assert!(c.max_asymmetry <= 1e-10);
        prop_assert!(c.max_diagonal_error <= 1e-10);
        prop_assert!(c.min_eigenvalue >= -1e-8, "{}", c.min_eigenvalue);
    }
}
