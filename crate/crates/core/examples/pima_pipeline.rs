//! QSVC on the Pima diabetes data: kernel spectrum, clusters and
//! decision-function attribution.

use std::time::Instant;

use qxai::circuits::build_z_feature_map;
use qxai::data::{load_csv, split, Scaler};
use qxai::explain::{explain_decision_function, DecisionMode, ShapleySettings};
use qxai::models::{fit_qsvc, qsvc_decisions, score, SmoSettings};
use qxai::spectra::{components_for_variance, eig_symmetric, explained_variance, kernel_pca_project, kmeans};

fn main() -> qxai::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/pima-indians-diabetes.csv".into());
    let t = Instant::now();
    let ds = load_csv(&path, "Outcome")?;
    let (train, test, _) = split(&ds, 0.09, 42)?;
    let scaler = Scaler::fit(&train)?;
    let (train, _) = scaler.transform_dataset(&train)?;
    let (test, clipped) = scaler.transform_dataset(&test)?;
    println!("train {} test {} clipped {clipped}", train.len(), test.len());

    let fm = build_z_feature_map(8, 2)?;
    let (model, k) = fit_qsvc(&fm, &train.rows, &train.labels, &SmoSettings::default())?;
    println!("qsvc: {} SVs, {} iterations, gap {:.2e} [{:?}]", model.support_ids.len(), model.iterations, model.kkt_violation, t.elapsed());
    let d = qsvc_decisions(&model, &test.rows)?;
    let pred: Vec<u8> = d.iter().map(|&v| u8::from(v > 0.0)).collect();
    println!("test {:?}", score(&pred, &test.labels));

    let eig = eig_symmetric(&qxai::spectra::double_center(&k.entries))?;
    let cum = explained_variance(&eig)?;
    println!("99% at {} of {} [{:?}] sweeps {}", components_for_variance(&cum, 0.99), train.len(), t.elapsed(), eig.sweeps);
    let proj = kernel_pca_project(&k.entries, &[0, 1, 2], true)?;
    let labels: Vec<usize> = train.labels.iter().map(|&l| l as usize).collect();
    let cl = kmeans(&proj.coords, &labels, 2, 42)?;
    println!("clusters {:?} sizes {:?} majority {:?}", cl.composition, cl.sizes, cl.majority_share());

    let ids: Vec<usize> = (0..test.len()).collect();
    for mode in [DecisionMode::Direct, DecisionMode::Surrogate] {
        let e = explain_decision_function(&model, &test.rows, &ids, mode, &train.rows, &train.feature_names, &ShapleySettings::default())?;
        let rank: Vec<&str> = e.ranking().iter().map(|&j| train.feature_names[j].as_str()).collect();
        println!("{mode:?}: {rank:?} surrogate {:?} [{:?}]", e.surrogate, t.elapsed());
    }
    Ok(())
}
