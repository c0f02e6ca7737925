//! The two hybrid classifiers: a variational quantum classifier with parity
//! readout, and a support vector machine over the fidelity kernel.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::ParamCircuit;
use crate::error::{Error, Result};
use crate::optimize::{cobyla_minimize, CobylaSettings, OptimResult};
use crate::qsim::{run_circuit, state_fidelity, StateVector};
use crate::spectra::eig_symmetric;

/// Probability clamp used inside the cross-entropy.
const P_CLAMP: f64 = 1e-12;

/// Encodes a scaled feature vector by binding it to the map's parameters.
pub fn encode(feature_map: &ParamCircuit, x: &[f64]) -> Result<StateVector> {
    if x.len() != feature_map.n_params() {
        return Err(Error::Shape(format!(
            "{} features for a map with {} parameters",
            x.len(),
            feature_map.n_params()
        )));
    }
    if let Some(j) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("feature {j} is not finite")));
    }
    run_circuit(feature_map, x)
}

/// Encodes every row; a bad row is reported by index.
pub fn encode_all(feature_map: &ParamCircuit, xs: &[Vec<f64>]) -> Result<Vec<StateVector>> {
    xs.par_iter()
        .enumerate()
        .map(|(i, x)| {
            encode(feature_map, x).map_err(|e| match e {
                Error::Argument(m) => Error::Data { row: i, message: m },
                other => other,
            })
        })
        .collect()
}

/// Gram matrix of pairwise state fidelities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub entries: DMatrix<f64>,
    pub row_ids: Vec<usize>,
}

/// Worst deviations from the kernel invariants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelCheck {
    pub max_asymmetry: f64,
    pub max_diagonal_error: f64,
    pub min_eigenvalue: f64,
}

impl KernelCheck {
    pub fn is_valid(&self) -> bool {
        self.max_asymmetry <= 1e-10 && self.max_diagonal_error <= 1e-10 && self.min_eigenvalue >= -1e-8
    }
}

impl KernelMatrix {
    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    pub fn check(&self) -> Result<KernelCheck> {
        let n = self.len();
        let k = &self.entries;
        let mut max_asymmetry = 0.0f64;
        let mut max_diagonal_error = 0.0f64;
        for i in 0..n {
            max_diagonal_error = max_diagonal_error.max((k[(i, i)] - 1.0).abs());
            for j in 0..i {
                max_asymmetry = max_asymmetry.max((k[(i, j)] - k[(j, i)]).abs());
            }
        }
        let min_eigenvalue = eig_symmetric(k)?.eigenvalues.last().copied().unwrap_or(0.0);
        Ok(KernelCheck { max_asymmetry, max_diagonal_error, min_eigenvalue })
    }
}

/// Kernel over already encoded states. Pairs are evaluated in parallel.
pub fn kernel_from_states(states: &[StateVector]) -> Result<KernelMatrix> {
    let n = states.len();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (i..n).map(|j| state_fidelity(&states[i], &states[j])).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut entries = DMatrix::zeros(n, n);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            let v = v.max(0.0);
            entries[(i, j)] = v;
            entries[(j, i)] = v;
        }
    }
    Ok(KernelMatrix { entries, row_ids: (0..n).collect() })
}

/// `K_ij = |<psi(x_i)|psi(x_j)>|^2`, each sample encoded once.
pub fn quantum_kernel(xs: &[Vec<f64>], feature_map: &ParamCircuit) -> Result<KernelMatrix> {
    if xs.is_empty() {
        return Err(Error::Argument("kernel needs at least one sample".into()));
    }
    kernel_from_states(&encode_all(feature_map, xs)?)
}

/// Fidelities of `x` against each reference sample.
pub fn kernel_row(x: &[f64], refs: &[Vec<f64>], feature_map: &ParamCircuit) -> Result<Vec<f64>> {
    let psi = encode(feature_map, x).map_err(|e| match e {
        Error::Argument(m) => Error::Data { row: 0, message: m },
        other => other,
    })?;
    let states = encode_all(feature_map, refs)?;
    states.iter().map(|s| state_fidelity(&psi, s)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoSettings {
    pub c: f64,
    /// Stopping threshold on the maximal KKT violation gap.
    pub tol: f64,
    /// Cap on sweeps of `n` iterations each; `None` means `10 * n`.
    pub max_passes: Option<usize>,
}

impl Default for SmoSettings {
    fn default() -> Self {
        SmoSettings { c: 1.0, tol: 1e-3, max_passes: None }
    }
}

/// Soft-margin SVM trained on a precomputed fidelity kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QsvcModel {
    /// Dual coefficients, one per training sample.
    pub alphas: Vec<f64>,
    /// Training labels in `{-1, +1}`.
    pub labels: Vec<f64>,
    pub bias: f64,
    pub support_ids: Vec<usize>,
    pub c: f64,
    pub iterations: usize,
    /// Final gap between the most violating pair.
    pub kkt_violation: f64,
    pub converged: bool,
    /// Kernel needed eigenvalue clamping before training.
    pub psd_repaired: bool,
    /// `f(x_i) - y_i` for every training sample at termination, bias included.
    pub training_errors: Vec<f64>,
    /// Feature map and support-vector features, attached for inference.
    pub feature_map: Option<ParamCircuit>,
    pub support_vectors: Vec<Vec<f64>>,
}

impl QsvcModel {
    /// Retains the support-vector features so new points can be scored.
    pub fn attach(mut self, feature_map: ParamCircuit, train_xs: &[Vec<f64>]) -> Result<Self> {
        if train_xs.len() != self.alphas.len() {
            return Err(Error::Shape(format!("{} rows for {} dual coefficients", train_xs.len(), self.alphas.len())));
        }
        self.support_vectors = self.support_ids.iter().map(|&i| train_xs[i].clone()).collect();
        self.feature_map = Some(feature_map);
        Ok(self)
    }

    /// Decision value from fidelities against every training sample.
    pub fn decision_from_training_row(&self, row: &[f64]) -> f64 {
        self.support_ids.iter().map(|&i| self.alphas[i] * self.labels[i] * row[i]).sum::<f64>() + self.bias
    }

    /// Decision value from fidelities against the support vectors, in order.
    pub fn decision_from_support_row(&self, row: &[f64]) -> f64 {
        self.support_ids
            .iter()
            .zip(row)
            .map(|(&i, &k)| self.alphas[i] * self.labels[i] * k)
            .sum::<f64>()
            + self.bias
    }

    /// `sum_i a_i - 1/2 sum_ij a_i a_j y_i y_j K_ij`.
    pub fn dual_objective(&self, k: &KernelMatrix) -> f64 {
        dual_objective(&k.entries, &self.labels, &self.alphas)
    }
}

pub fn dual_objective(k: &DMatrix<f64>, y: &[f64], a: &[f64]) -> f64 {
    let n = a.len();
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            quad += a[i] * a[j] * y[i] * y[j] * k[(i, j)];
        }
    }
    a.iter().sum::<f64>() - 0.5 * quad
}

/// Returns a PSD copy of `k`, or `None` if `k` already is PSD within 1e-8.
fn psd_repair(k: &DMatrix<f64>) -> Result<Option<DMatrix<f64>>> {
    let n = k.nrows();
    let shifted = k + DMatrix::identity(n, n) * 1e-8;
    if shifted.cholesky().is_some() {
        return Ok(None);
    }
    let eig = eig_symmetric(k)?;
    let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| l.max(0.0))));
    let fixed = &eig.eigenvectors * lam * eig.eigenvectors.transpose();
    Ok(Some((&fixed + fixed.transpose()) * 0.5))
}

/// Sequential minimal optimization with maximal-violating-pair selection.
pub fn smo_fit(k: &KernelMatrix, y: &[f64], settings: &SmoSettings) -> Result<QsvcModel> {
    let n = k.len();
    if y.len() != n {
        return Err(Error::Shape(format!("{} labels for a {n}x{n} kernel", y.len())));
    }
    if let Some(v) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::Training(format!("label {v} is not -1 or +1")));
    }
    if !y.contains(&1.0) || !y.contains(&-1.0) {
        return Err(Error::Training("training labels contain a single class".into()));
    }
    if !(settings.c > 0.0) || !(settings.tol > 0.0) {
        return Err(Error::Argument("C and tol must be positive".into()));
    }
    let repaired = psd_repair(&k.entries)?;
    if repaired.is_some() {
        log::warn!("kernel is not PSD within 1e-8; negative eigen-directions clamped");
    }
    let km = repaired.as_ref().unwrap_or(&k.entries);
    let c = settings.c;
    let max_iter = settings.max_passes.unwrap_or(10 * n) * n;

    let mut alpha = vec![0.0; n];
    // err[t] = f(x_t) - y_t without the bias term
    let mut err: Vec<f64> = y.iter().map(|&yt| -yt).collect();
    let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
    let in_low = |a: f64, yt: f64| (yt < 0.0 && a < c) || (yt > 0.0 && a > 0.0);

    let mut iterations = 0;
    let mut gap;
    let mut converged = false;
    loop {
        // i maximizes -E over I_up, j minimizes -E over I_low
        let (mut i, mut up) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut low) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            if in_up(alpha[t], y[t]) && -err[t] > up {
                up = -err[t];
                i = t;
            }
            if in_low(alpha[t], y[t]) && -err[t] < low {
                low = -err[t];
                j = t;
            }
        }
        gap = if i == usize::MAX || j == usize::MAX { 0.0 } else { up - low };
        if gap <= settings.tol {
            converged = true;
            break;
        }
        if iterations >= max_iter {
            break;
        }
        iterations += 1;

        let eta = (km[(i, i)] + km[(j, j)] - 2.0 * km[(i, j)]).max(1e-12);
        let (lo, hi) = if y[i] != y[j] {
            ((alpha[j] - alpha[i]).max(0.0), (c + alpha[j] - alpha[i]).min(c))
        } else {
            ((alpha[i] + alpha[j] - c).max(0.0), (alpha[i] + alpha[j]).min(c))
        };
        let aj = (alpha[j] + y[j] * (err[i] - err[j]) / eta).clamp(lo, hi);
        let dj = aj - alpha[j];
        let di = -y[i] * y[j] * dj;
        alpha[j] = aj;
        alpha[i] += di;
        // snap to the box against drift
        for t in [i, j] {
            if alpha[t] < 1e-14 * c {
                alpha[t] = 0.0;
            } else if alpha[t] > c * (1.0 - 1e-14) {
                alpha[t] = c;
            }
        }
        let (si, sj) = (y[i] * di, y[j] * dj);
        for t in 0..n {
            err[t] += si * km[(i, t)] + sj * km[(j, t)];
        }
    }

    let free: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0 && alpha[t] < c).collect();
    let bias = if free.is_empty() {
        // midpoint of the feasible bias interval
        let (mut up, mut low) = (f64::NEG_INFINITY, f64::INFINITY);
        for t in 0..n {
            if in_up(alpha[t], y[t]) {
                up = up.max(-err[t]);
            }
            if in_low(alpha[t], y[t]) {
                low = low.min(-err[t]);
            }
        }
        match (up.is_finite(), low.is_finite()) {
            (true, true) => 0.5 * (up + low),
            (true, false) => up,
            (false, true) => low,
            _ => 0.0,
        }
    } else {
        free.iter().map(|&t| -err[t]).sum::<f64>() / free.len() as f64
    };

    let support_ids: Vec<usize> = (0..n).filter(|&t| alpha[t] > 0.0).collect();
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations with KKT gap {gap:.3e}");
    }
    Ok(QsvcModel {
        alphas: alpha,
        labels: y.to_vec(),
        bias,
        support_ids,
        c,
        iterations,
        kkt_violation: gap,
        converged,
        psd_repaired: repaired.is_some(),
        training_errors: err.iter().map(|e| e + bias).collect(),
        feature_map: None,
        support_vectors: Vec::new(),
    })
}

/// Maps `{0, 1}` labels to `{-1, +1}`.
pub fn signed_labels(labels: &[u8]) -> Vec<f64> {
    labels.iter().map(|&l| if l == 1 { 1.0 } else { -1.0 }).collect()
}

/// Kernel, SMO and support-vector attachment in one call.
pub fn fit_qsvc(
    feature_map: &ParamCircuit,
    xs: &[Vec<f64>],
    labels: &[u8],
    settings: &SmoSettings,
) -> Result<(QsvcModel, KernelMatrix)> {
    let k = quantum_kernel(xs, feature_map)?;
    let model = smo_fit(&k, &signed_labels(labels), settings)?.attach(feature_map.clone(), xs)?;
    Ok((model, k))
}

/// `sum_i a_i y_i K(x_i, x) + b` over the support vectors.
pub fn qsvc_decision(model: &QsvcModel, x: &[f64]) -> Result<f64> {
    let fm = model
        .feature_map
        .as_ref()
        .ok_or_else(|| Error::State("QSVC has no attached support vectors; train it first".into()))?;
    let row = kernel_row(x, &model.support_vectors, fm)?;
    Ok(model.decision_from_support_row(&row))
}

/// Decision values for many points, each encoded once.
pub fn qsvc_decisions(model: &QsvcModel, xs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let fm = model
        .feature_map
        .as_ref()
        .ok_or_else(|| Error::State("QSVC has no attached support vectors; train it first".into()))?;
    let sv = encode_all(fm, &model.support_vectors)?;
    let states = encode_all(fm, xs)?;
    states
        .par_iter()
        .map(|s| {
            let row = sv.iter().map(|v| state_fidelity(s, v)).collect::<Result<Vec<_>>>()?;
            Ok(model.decision_from_support_row(&row))
        })
        .collect()
}

/// Feature map, ansatz and trained angles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqcModel {
    pub feature_map: ParamCircuit,
    pub ansatz: ParamCircuit,
    /// Empty until trained.
    pub theta: Vec<f64>,
    pub train_history: Option<OptimResult>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct VqcSettings {
    pub optimizer: CobylaSettings,
    pub seed: u64,
}

impl VqcModel {
    pub fn untrained(feature_map: ParamCircuit, ansatz: ParamCircuit) -> Result<Self> {
        if feature_map.n_qubits() != ansatz.n_qubits() {
            return Err(Error::Shape(format!(
                "feature map has {} qubits, ansatz {}",
                feature_map.n_qubits(),
                ansatz.n_qubits()
            )));
        }
        Ok(VqcModel { feature_map, ansatz, theta: Vec::new(), train_history: None })
    }

    pub fn with_theta(mut self, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != self.ansatz.n_params() {
            return Err(Error::Shape(format!("{} angles for {} ansatz parameters", theta.len(), self.ansatz.n_params())));
        }
        self.theta = theta;
        Ok(self)
    }

    pub fn is_trained(&self) -> bool {
        !self.theta.is_empty() || self.ansatz.n_params() == 0
    }

    /// State after the ansatz with angles `theta` acts on `encoded`.
    pub fn evolve(&self, encoded: &StateVector, theta: &[f64]) -> Result<StateVector> {
        let gates = self.ansatz.bind_positional(theta)?;
        let mut s = encoded.clone();
        s.apply_all(&gates)?;
        Ok(s)
    }

    /// `[p0, p1]` with the trained angles.
    pub fn predict_proba(&self, x: &[f64]) -> Result<[f64; 2]> {
        self.require_trained()?;
        let p1 = vqc_forward(self, x, &self.theta)?;
        Ok([1.0 - p1, p1])
    }

    fn require_trained(&self) -> Result<()> {
        if self.is_trained() {
            Ok(())
        } else {
            Err(Error::State("VQC has no trained parameters; train it first".into()))
        }
    }
}

/// Class-1 probability: total odd-parity mass of the output state.
pub fn vqc_forward(model: &VqcModel, x: &[f64], theta: &[f64]) -> Result<f64> {
    if theta.len() != model.ansatz.n_params() {
        return Err(Error::Shape(format!("{} angles for {} ansatz parameters", theta.len(), model.ansatz.n_params())));
    }
    let encoded = encode(&model.feature_map, x)?;
    Ok(model.evolve(&encoded, theta)?.odd_parity_probability().clamp(0.0, 1.0))
}

/// Probabilities this close to 1/2 count as a tie.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// Label for a class-1 probability; ties go to class 0.
pub fn label_for(p1: f64) -> u8 {
    u8::from(p1 > 0.5 + TIE_TOLERANCE)
}

/// Label by argmax of `(p0, p1)`, with ties broken toward class 0.
pub fn vqc_predict(model: &VqcModel, x: &[f64]) -> Result<(u8, f64)> {
    let [_, p1] = model.predict_proba(x)?;
    Ok((label_for(p1), p1))
}

fn bce(p: f64, y: u8) -> f64 {
    let p = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Minimizes mean binary cross-entropy with COBYLA from a seeded start.
pub fn vqc_train(
    feature_map: ParamCircuit,
    ansatz: ParamCircuit,
    xs: &[Vec<f64>],
    ys: &[u8],
    settings: &VqcSettings,
) -> Result<VqcModel> {
    if xs.len() != ys.len() || xs.is_empty() {
        return Err(Error::Shape(format!("{} rows and {} labels", xs.len(), ys.len())));
    }
    if let Some(&l) = ys.iter().find(|&&l| l > 1) {
        return Err(Error::Training(format!("label {l} is not 0/1")));
    }
    let model = VqcModel::untrained(feature_map, ansatz)?;
    let arity = model.ansatz.n_params();
    if arity == 0 {
        return Ok(model);
    }
    let encoded = encode_all(&model.feature_map, xs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let theta0: Vec<f64> = (0..arity).map(|_| rng.random_range(-std::f64::consts::PI..=std::f64::consts::PI)).collect();

    let loss = |theta: &[f64]| -> f64 {
        let Ok(gates) = model.ansatz.bind_positional(theta) else { return f64::NAN };
        let terms: Vec<f64> = encoded
            .par_iter()
            .zip(ys.par_iter())
            .map(|(s, &y)| {
                let mut out = s.clone();
                for g in &gates {
                    out.apply_unchecked(g);
                }
                bce(out.odd_parity_probability(), y)
            })
            .collect();
        terms.iter().sum::<f64>() / terms.len() as f64
    };
    let opt = &settings.optimizer;
    let result = cobyla_minimize(loss, &theta0, opt.rho_begin, opt.rho_end, opt.budget(arity))?;
    let mut trained = model.with_theta(result.best_params.clone())?;
    trained.train_history = Some(result);
    Ok(trained)
}

/// Accuracy and F1 of the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub accuracy: f64,
    pub f1: f64,
}

pub fn score(predicted: &[u8], truth: &[u8]) -> Scores {
    let n = truth.len().max(1) as f64;
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fneg = 0.0;
    let mut correct = 0.0;
    for (&p, &t) in predicted.iter().zip(truth) {
        if p == t {
            correct += 1.0;
        }
        match (p, t) {
            (1, 1) => tp += 1.0,
            (1, 0) => fp += 1.0,
            (0, 1) => fneg += 1.0,
            _ => {}
        }
    }
    let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
    Scores { accuracy: correct / n, f1 }
}
