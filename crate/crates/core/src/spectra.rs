//! Kernel spectral analysis: symmetric eigendecomposition (cyclic Jacobi),
//! explained variance, kernel-PCA coordinates and k-means cluster make-up.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;
const SYMMETRY_TOL: f64 = 1e-9;

/// Eigenpairs sorted by descending eigenvalue; column `i` of `eigenvectors`
/// belongs to `eigenvalues[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub sweeps: usize,
}

/// Full spectrum of a symmetric matrix by cyclic Jacobi rotations.
pub fn eig_symmetric(m: &DMatrix<f64>) -> Result<EigenDecomposition> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::Shape(format!("{}x{} matrix is not square", n, m.ncols())));
    }
    for i in 0..n {
        for j in i + 1..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL {
                return Err(Error::Shape(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    if n == 0 {
        return Ok(EigenDecomposition { eigenvalues: vec![], eigenvectors: DMatrix::zeros(0, 0), sweeps: 0 });
    }

    // row-major working copies; symmetrize exactly
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            a[i * n + j] = 0.5 * (m[(i, j)] + m[(j, i)]);
        }
    }
    // v holds eigenvectors as rows so both rotations touch contiguous memory
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let mut sweeps = 0;
    loop {
        let off: f64 = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .map(|(i, j)| 2.0 * a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off < OFF_DIAGONAL_TOL {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::numerical(format!(
                "Jacobi did not converge in {MAX_SWEEPS} sweeps (off-diagonal norm {off:e})"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let g = 100.0 * apq.abs();
                // negligible relative to both diagonal entries
                if sweeps > 4 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[p * n + q] = 0.0;
                    a[q * n + p] = 0.0;
                    continue;
                }
                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_infinite() {
                    1.0 / (2.0 * theta)
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                a[p * n + p] = app - t * apq;
                a[q * n + q] = aqq + t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                let (head, tail) = v.split_at_mut(q * n);
                let vp = &mut head[p * n..p * n + n];
                let vq = &mut tail[..n];
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].total_cmp(&a[i * n + i]).then(i.cmp(&j)));
    let eigenvalues = order.iter().map(|&i| a[i * n + i]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |row, col| v[order[col] * n + row]);
    Ok(EigenDecomposition { eigenvalues, eigenvectors, sweeps })
}

/// Cumulative explained-variance ratios of the (clamped) spectrum.
pub fn explained_variance(eig: &EigenDecomposition) -> Result<Vec<f64>> {
    let clamped: Vec<f64> = eig.eigenvalues.iter().map(|l| l.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("spectrum has no positive eigenvalue".into()));
    }
    let mut acc = 0.0;
    Ok(clamped
        .iter()
        .map(|l| {
            acc += l;
            acc / total
        })
        .collect())
}

/// Number of leading components whose cumulative ratio reaches `threshold`.
pub fn components_for_variance(cumulative: &[f64], threshold: f64) -> usize {
    cumulative
        .iter()
        .position(|&c| c >= threshold)
        .map_or(cumulative.len(), |i| i + 1)
}

/// `H K H` with `H = I - 11^T / n`.
pub fn double_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    if n == 0 {
        return k.clone();
    }
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Decomposed kernel ready for projection.
#[derive(Clone, Debug)]
pub struct KernelPca {
    pub centered: bool,
    pub eig: EigenDecomposition,
}

/// Kernel-PCA coordinates for a set of requested components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// 0-based component indices, in request order.
    pub components: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    /// `coords[sample][c]` is the coordinate on `components[c]`.
    pub coords: Vec<Vec<f64>>,
    /// Components whose eigenvalue is numerically zero (their column is zero).
    pub zero_components: Vec<usize>,
    pub centered: bool,
}

impl KernelPca {
    pub fn fit(k: &DMatrix<f64>, centered: bool) -> Result<Self> {
        let m = if centered { double_center(k) } else { k.clone() };
        Ok(KernelPca { centered, eig: eig_symmetric(&m)? })
    }

    pub fn project(&self, components: &[usize]) -> Result<Projection> {
        let n = self.eig.eigenvalues.len();
        if let Some(&c) = components.iter().find(|&&c| c >= n) {
            return Err(Error::Index(format!("component {c} outside spectrum of size {n}")));
        }
        let lmax = self.eig.eigenvalues.first().copied().unwrap_or(0.0).max(1.0);
        let mut zero_components = Vec::new();
        let scales: Vec<f64> = components
            .iter()
            .map(|&c| {
                let l = self.eig.eigenvalues[c].max(0.0);
                if l <= 1e-12 * lmax {
                    zero_components.push(c);
                    0.0
                } else {
                    l.sqrt()
                }
            })
            .collect();
        let coords = (0..n)
            .map(|j| {
                components
                    .iter()
                    .zip(&scales)
                    .map(|(&c, s)| s * self.eig.eigenvectors[(j, c)])
                    .collect()
            })
            .collect();
        Ok(Projection {
            components: components.to_vec(),
            eigenvalues: components.iter().map(|&c| self.eig.eigenvalues[c]).collect(),
            coords,
            zero_components,
            centered: self.centered,
        })
    }
}

/// Decomposes `k` (double-centered when `centered`) and projects onto `components`.
pub fn kernel_pca_project(k: &DMatrix<f64>, components: &[usize], centered: bool) -> Result<Projection> {
    KernelPca::fit(k, centered)?.project(components)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub sizes: Vec<usize>,
    /// `composition[cluster][class]` in percent (0..=100).
    pub composition: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after every Lloyd update.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl ClusterSummary {
    /// Percentage of the cluster's majority class, per cluster.
    pub fn majority_share(&self) -> Vec<f64> {
        self.composition
            .iter()
            .map(|c| c.iter().copied().fold(0.0, f64::max))
            .collect()
    }

    /// Fraction of points belonging to their cluster's majority class.
    pub fn purity(&self) -> f64 {
        let n: usize = self.sizes.iter().sum();
        let hits: f64 = self
            .majority_share()
            .iter()
            .zip(&self.sizes)
            .map(|(share, &size)| share / 100.0 * size as f64)
            .sum();
        hits / n as f64
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(p, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

const KMEANS_MAX_ITER: usize = 300;

/// Lloyd's k-means with k-means++ seeding; `labels` are class ids used for
/// the composition table.
pub fn kmeans(points: &[Vec<f64>], labels: &[usize], k: usize, seed: u64) -> Result<ClusterSummary> {
    if labels.len() != points.len() {
        return Err(Error::Shape(format!("{} labels for {} points", labels.len(), points.len())));
    }
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    let dim = points.first().map_or(0, |p| p.len());
    if points.iter().any(|p| p.len() != dim) {
        return Err(Error::Shape("points have mixed dimensions".into()));
    }
    let mut distinct: Vec<Vec<u64>> = points.iter().map(|p| p.iter().map(|v| v.to_bits()).collect()).collect();
    distinct.sort();
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::Argument(format!("k = {k} exceeds {} distinct points", distinct.len())));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].clone()];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let mut target = rng.random::<f64>() * total;
        let mut pick = d2.iter().rposition(|&d| d > 0.0).unwrap();
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        centroids.push(points[pick].clone());
    }

    let mut assignments = vec![usize::MAX; points.len()];
    let mut inertia_history = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut changed = false;
        for (i, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centroids);
            if assignments[i] != c {
                assignments[i] = c;
                changed = true;
            }
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = points.iter().zip(&assignments).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            for d in 0..dim {
                centroid[d] = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
            }
        }
        inertia_history.push(points.iter().zip(&assignments).map(|(p, &a)| sq_dist(p, &centroids[a])).sum());
        if !changed {
            break;
        }
    }

    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    let mut counts = vec![vec![0usize; n_classes]; k];
    for (&a, &l) in assignments.iter().zip(labels) {
        sizes[a] += 1;
        counts[a][l] += 1;
    }
    let composition = counts
        .iter()
        .zip(&sizes)
        .map(|(row, &size)| {
            row.iter()
                .map(|&c| if size == 0 { 0.0 } else { 100.0 * c as f64 / size as f64 })
                .collect()
        })
        .collect();
    Ok(ClusterSummary { assignments, centroids, sizes, composition, inertia_history, iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use proptest::prelude::*;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    fn check_decomposition(m: &DMatrix<f64>) {
        let e = eig_symmetric(m).unwrap();
        let n = m.nrows();
        let v = &e.eigenvectors;
        let recon = v * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(e.eigenvalues.clone())) * v.transpose();
        assert!(max_abs(&(recon - m)) < 1e-8);
        assert!(max_abs(&(v.transpose() * v - DMatrix::identity(n, n))) < 1e-8);
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn small_spectra() {
        let e = eig_symmetric(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);

        let d = DMatrix::from_row_slice(2, 2, &[3.0, 0.0, 0.0, 1.0]);
        let e = eig_symmetric(&d).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert!((e.eigenvectors[(0, 0)].abs() - 1.0).abs() < 1e-15);

        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let e = eig_symmetric(&m).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-12 && (e.eigenvalues[1] - 1.0).abs() < 1e-12);
        check_decomposition(&m);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(eig_symmetric(&m), Err(Error::Shape(_))));
        assert!(matches!(eig_symmetric(&DMatrix::zeros(2, 3)), Err(Error::Shape(_))));
    }

    #[test]
    fn random_symmetric_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..50 {
            let n = 1 + trial % 32;
            let mut m = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = rng.random_range(-2.0..2.0);
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            check_decomposition(&m);
        }
    }

    #[test]
    fn explained_variance_examples() {
        let mk = |l: Vec<f64>| EigenDecomposition { eigenvectors: DMatrix::identity(l.len(), l.len()), eigenvalues: l, sweeps: 0 };
        assert_eq!(explained_variance(&mk(vec![4.0, 0.0, 0.0])).unwrap(), vec![1.0, 1.0, 1.0]);
        assert_eq!(explained_variance(&mk(vec![2.0, 1.0, 1.0])).unwrap(), vec![0.5, 0.75, 1.0]);
        assert!(matches!(explained_variance(&mk(vec![0.0, -1e-9])), Err(Error::Degenerate(_))));
        assert_eq!(components_for_variance(&[0.5, 0.75, 1.0], 0.7), 2);
    }

    #[test]
    fn identical_samples_project_to_origin() {
        let k = DMatrix::from_element(5, 5, 1.0);
        let p = kernel_pca_project(&k, &[0, 1], true).unwrap();
        assert!(p.coords.iter().flatten().all(|&c| c == 0.0));
        assert_eq!(p.zero_components, vec![0, 1]);
    }

    #[test]
    fn orthogonal_groups_split_on_first_component() {
        // samples {0,1} share one state, {2,3} an orthogonal one
        let k = DMatrix::from_row_slice(4, 4, &[
            1.0, 1.0, 0.0, 0.0, //
            1.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 1.0, //
            0.0, 0.0, 1.0, 1.0,
        ]);
        // centered matrix has a single nonzero eigenvalue 2 with sign-split eigenvector
        let p = kernel_pca_project(&k, &[0], true).unwrap();
        let c: Vec<f64> = p.coords.iter().map(|r| r[0]).collect();
        assert!((p.eigenvalues[0] - 2.0).abs() < 1e-12);
        assert!(c[0] * c[2] < 0.0 && (c[0] - c[1]).abs() < 1e-12 && (c[2] - c[3]).abs() < 1e-12);
        assert!((c[0].abs() - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn projection_column_energy_equals_eigenvalue() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pts: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        let k = DMatrix::from_fn(10, 10, |i, j| (-sq_dist(&pts[i], &pts[j])).exp());
        let pca = KernelPca::fit(&k, true).unwrap();
        let p = pca.project(&[0, 1, 2]).unwrap();
        for c in 0..3 {
            let energy: f64 = p.coords.iter().map(|r| r[c] * r[c]).sum();
            assert!((energy - pca.eig.eigenvalues[c]).abs() < 1e-10);
        }
        assert!(pca.project(&[10]).is_err());
    }

    #[test]
    fn kmeans_blobs_and_degenerate() {
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..40 {
            let c = if i < 20 { 0.0 } else { 10.0 };
            pts.push(vec![c + rng.random_range(-0.5..0.5), c + rng.random_range(-0.5..0.5)]);
            labels.push(usize::from(i >= 20));
        }
        let s = kmeans(&pts, &labels, 2, 7).unwrap();
        assert_eq!(s.purity(), 1.0);
        for row in &s.composition {
            assert!((row.iter().sum::<f64>() - 100.0).abs() < 0.01);
        }
        assert_eq!(kmeans(&pts, &labels, 2, 7).unwrap(), s);

        let same = vec![vec![1.5, -2.0]; 6];
        let s = kmeans(&same, &[0; 6], 1, 0).unwrap();
        assert_eq!(s.centroids, vec![vec![1.5, -2.0]]);
        assert!(matches!(kmeans(&same, &[0; 6], 2, 0), Err(Error::Argument(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn lloyd_inertia_nonincreasing(
            pts in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 6..40),
            k in 1usize..4,
            seed in 0u64..1000,
        ) {
            let labels = vec![0; pts.len()];
            if let Ok(s) = kmeans(&pts, &labels, k, seed) {
                prop_assert!(s.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
            }
        }
    }
}
