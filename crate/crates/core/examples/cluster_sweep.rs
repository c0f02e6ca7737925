//! k-means cluster composition of the kernel-PCA space across split seeds.

use qxai::circuits::build_z_feature_map;
use qxai::data::{load_csv, split, Scaler};
use qxai::models::quantum_kernel;
use qxai::spectra::{kernel_pca_project, kmeans};

fn main() -> qxai::Result<()> {
    let ds = load_csv("data/pima-indians-diabetes.csv", "Outcome")?;
    let fm = build_z_feature_map(8, 2)?;
    for seed in 0..8u64 {
        let (train, _, _) = split(&ds, 0.09, seed)?;
        let (train, _) = Scaler::fit(&train)?.transform_dataset(&train)?;
        let k = quantum_kernel(&train.rows, &fm)?;
        let labels: Vec<usize> = train.labels.iter().map(|&l| l as usize).collect();
        for centered in [true, false] {
            let proj = kernel_pca_project(&k.entries, &[0, 1, 2], centered)?;
            let shares: Vec<Vec<f64>> = (0..3).map(|s| kmeans(&proj.coords, &labels, 2, s).map(|c| c.majority_share())).collect::<Result<_, _>>()?;
            println!("split {seed} centered {centered}: {shares:.1?}");
        }
    }
    Ok(())
}
