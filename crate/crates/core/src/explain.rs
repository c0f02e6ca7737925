//! Fidelity pseudo-models and the attribution engines that run on them:
//! exact and kernel-regression Shapley values, accumulated local effects, and
//! decision-function attribution through an optional kernel ridge surrogate.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::circuits::ParamCircuit;
use crate::data::{class_references, column_means, ClassReference, ReferenceKind};
use crate::error::{Error, Result};
use crate::models::{encode, encode_all, QsvcModel, VqcModel};
use crate::qsim::{state_fidelity, StateVector};

/// Largest arity accepted by full enumeration.
pub const MAX_EXACT_ARITY: usize = 20;

/// How absent players are filled in; recorded in every report.
pub const MASKING_RULE: &str = "absent players take baseline values";

type ValueFn = dyn Fn(&[f64]) -> Result<f64> + Send + Sync;

/// Scalar value function over player assignments, with the baseline used to
/// fill in absent players.
#[derive(Clone)]
pub struct PseudoModel {
    arity: usize,
    baseline: Vec<f64>,
    description: String,
    value_fn: Arc<ValueFn>,
}

impl fmt::Debug for PseudoModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PseudoModel")
            .field("arity", &self.arity)
            .field("baseline", &self.baseline)
            .field("description", &self.description)
            .finish_non_exhaustive()
    }
}

impl PseudoModel {
    pub fn new<F>(baseline: Vec<f64>, description: impl Into<String>, value: F) -> Self
    where
        F: Fn(&[f64]) -> Result<f64> + Send + Sync + 'static,
    {
        PseudoModel { arity: baseline.len(), baseline, description: description.into(), value_fn: Arc::new(value) }
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn baseline(&self) -> &[f64] {
        &self.baseline
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn value(&self, assignment: &[f64]) -> Result<f64> {
        if assignment.len() != self.arity {
            return Err(Error::Shape(format!("{} values for a {}-player model", assignment.len(), self.arity)));
        }
        (self.value_fn)(assignment)
    }

    /// Assignment where player `i` keeps `x[i]` iff bit `i` of `mask` is set.
    pub fn masked(&self, x: &[f64], mask: u64) -> Vec<f64> {
        (0..self.arity).map(|i| if mask >> i & 1 == 1 { x[i] } else { self.baseline[i] }).collect()
    }

    fn coalition_value(&self, x: &[f64], mask: u64) -> Result<f64> {
        self.value(&self.masked(x, mask))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    KernelRegression,
}

/// Which model component a report explains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Target {
    FeatureMapGeneral,
    FeatureMapClass { class: u8 },
    AnsatzParams,
    KernelClass { class: u8 },
    DecisionFunction,
    Custom,
}

impl Target {
    pub fn slug(&self) -> String {
        match self {
            Target::FeatureMapGeneral => "feature_map_general".into(),
            Target::FeatureMapClass { class } => format!("feature_map_class{class}"),
            Target::AnsatzParams => "ansatz_params".into(),
            Target::KernelClass { class } => format!("kernel_class{class}"),
            Target::DecisionFunction => "decision_function".into(),
            Target::Custom => "custom".into(),
        }
    }
}

/// Shapley attribution of one assignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributionReport {
    pub target: Target,
    pub method: Method,
    pub player_names: Vec<String>,
    pub shap_values: Vec<f64>,
    pub base_value: f64,
    pub observed_value: f64,
    pub assignment: Vec<f64>,
    pub baseline: Vec<f64>,
    pub masking: String,
    pub description: String,
    pub n_coalitions: usize,
    /// The regression system was singular and a ridge term was added.
    pub ridge_fallback: bool,
    pub seed: Option<u64>,
    pub sample_index: Option<usize>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl AttributionReport {
    /// `observed - base - sum(phi)`.
    pub fn efficiency_gap(&self) -> f64 {
        self.observed_value - self.base_value - self.shap_values.iter().sum::<f64>()
    }

    /// Player indices by descending `|phi|`, ties by index.
    pub fn waterfall_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.shap_values.len()).collect();
        idx.sort_by(|&a, &b| self.shap_values[b].abs().total_cmp(&self.shap_values[a].abs()).then(a.cmp(&b)));
        idx
    }

    /// Waterfall table: one row per player, largest `|phi|` first, with the
    /// running total starting at the base value.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "player", "value", "baseline", "shap_value", "cumulative"])?;
        let mut running = self.base_value;
        for (rank, i) in self.waterfall_order().into_iter().enumerate() {
            running += self.shap_values[i];
            w.write_record([
                (rank + 1).to_string(),
                self.player_names[i].clone(),
                self.assignment[i].to_string(),
                self.baseline[i].to_string(),
                self.shap_values[i].to_string(),
                running.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    fn new(pm: &PseudoModel, x: &[f64], method: Method, phi: Vec<f64>, base: f64, observed: f64) -> Self {
        AttributionReport {
            target: Target::Custom,
            method,
            player_names: (0..pm.arity()).map(|i| format!("p{i}")).collect(),
            shap_values: phi,
            base_value: base,
            observed_value: observed,
            assignment: x.to_vec(),
            baseline: pm.baseline().to_vec(),
            masking: MASKING_RULE.into(),
            description: pm.description().to_string(),
            n_coalitions: 0,
            ridge_fallback: false,
            seed: None,
            sample_index: None,
            warnings: Vec::new(),
        }
    }

    pub fn with_target(mut self, target: Target, names: &[String]) -> Self {
        self.target = target;
        if names.len() == self.player_names.len() {
            self.player_names = names.to_vec();
        }
        self
    }
}

fn check_assignment(pm: &PseudoModel, x: &[f64]) -> Result<()> {
    if x.len() != pm.arity() {
        return Err(Error::Shape(format!("{} values for a {}-player model", x.len(), pm.arity())));
    }
    if pm.arity() == 0 {
        return Err(Error::Argument("a game needs at least one player".into()));
    }
    Ok(())
}

/// Shapley values by evaluating every coalition.
pub fn shapley_exact(pm: &PseudoModel, x: &[f64]) -> Result<AttributionReport> {
    check_assignment(pm, x)?;
    let m = pm.arity();
    if m > MAX_EXACT_ARITY {
        return Err(Error::Capacity(format!(
            "{m} players exceed the exact limit of {MAX_EXACT_ARITY}; use kernel regression"
        )));
    }
    let n_masks = 1u64 << m;
    let values: Vec<f64> = (0..n_masks).into_par_iter().map(|mask| pm.coalition_value(x, mask)).collect::<Result<_>>()?;
    // weight of a coalition of size s not containing i: s!(m-s-1)!/m!
    let mut weight = vec![0.0; m];
    let mut w = 1.0 / m as f64;
    for (s, slot) in weight.iter_mut().enumerate() {
        *slot = w;
        w *= (s + 1) as f64 / (m - s - 1).max(1) as f64;
    }
    let phi: Vec<f64> = (0..m)
        .into_par_iter()
        .map(|i| {
            let bit = 1u64 << i;
            let mut acc = 0.0;
            for mask in 0..n_masks {
                if mask & bit == 0 {
                    acc += weight[mask.count_ones() as usize] * (values[(mask | bit) as usize] - values[mask as usize]);
                }
            }
            acc
        })
        .collect();
    let mut report = AttributionReport::new(pm, x, Method::Exact, phi, values[0], values[(n_masks - 1) as usize]);
    report.n_coalitions = n_masks as usize;
    Ok(report)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Coalitions (excluding the empty and full sets) with Shapley-kernel weights.
fn kernel_coalitions(m: usize, budget: usize, rng: &mut ChaCha8Rng) -> Vec<(u64, f64)> {
    let mass = |s: usize| (m - 1) as f64 / (s * (m - s)) as f64;
    let coalition_weight = |s: usize| mass(s) / binomial(m, s);
    let total_proper = 2f64.powi(m as i32) - 2.0;
    if total_proper <= budget as f64 {
        return (1..(1u64 << m) - 1).map(|mask| (mask, coalition_weight(mask.count_ones() as usize))).collect();
    }

    // Whole size classes (paired s, m-s) while the budget covers them.
    let mut out = Vec::new();
    let mut left = budget;
    let mut open: Vec<usize> = (1..m).collect();
    let mut s = 1;
    while s <= m / 2 {
        let sizes: Vec<usize> = if s == m - s { vec![s] } else { vec![s, m - s] };
        let count: f64 = sizes.iter().map(|&k| binomial(m, k)).sum();
        let open_mass: f64 = open.iter().map(|&k| mass(k)).sum();
        let pair_mass: f64 = sizes.iter().map(|&k| mass(k)).sum();
        if count > left as f64 * pair_mass / open_mass {
            break;
        }
        for &k in &sizes {
            for mask in subsets_of_size(m, k) {
                out.push((mask, coalition_weight(k)));
            }
        }
        left -= count as usize;
        open.retain(|k| !sizes.contains(k));
        s += 1;
    }
    if open.is_empty() || left == 0 {
        return out;
    }

    // Remaining sizes: draw size by kernel mass, then a uniform subset.
    let open_mass: f64 = open.iter().map(|&k| mass(k)).sum();
    let mut counts: BTreeMap<u64, usize> = BTreeMap::new();
    let mut draws = 0usize;
    while counts.len() < left && draws < 20 * left {
        let mut r = rng.random::<f64>() * open_mass;
        let mut size = *open.last().unwrap();
        for &k in &open {
            if r < mass(k) {
                size = k;
                break;
            }
            r -= mass(k);
        }
        let mask = rand::seq::index::sample(rng, m, size).iter().fold(0u64, |acc, p| acc | 1 << p);
        *counts.entry(mask).or_default() += 1;
        draws += 1;
    }
    let per_draw = open_mass / draws as f64;
    out.extend(counts.into_iter().map(|(mask, c)| (mask, c as f64 * per_draw)));
    out
}

fn subsets_of_size(m: usize, k: usize) -> Vec<u64> {
    // Gosper's hack
    let mut out = Vec::new();
    let mut v: u64 = (1 << k) - 1;
    let limit = 1u64 << m;
    while v < limit {
        out.push(v);
        let c = v & v.wrapping_neg();
        let r = v + c;
        v = (((r ^ v) >> 2) / c) | r;
    }
    out
}

/// Shapley-kernel weighted least squares with efficiency imposed exactly by
/// eliminating the last player.
pub fn shapley_kernel_regression(pm: &PseudoModel, x: &[f64], n_coalitions: usize, seed: u64) -> Result<AttributionReport> {
    check_assignment(pm, x)?;
    let m = pm.arity();
    if n_coalitions < m + 2 {
        return Err(Error::Argument(format!("{n_coalitions} coalitions is fewer than arity + 2 = {}", m + 2)));
    }
    if m > 63 {
        return Err(Error::Capacity(format!("{m} players exceed the 63-player mask limit")));
    }
    let full = if m == 64 { u64::MAX } else { (1u64 << m) - 1 };
    let base = pm.coalition_value(x, 0)?;
    let observed = pm.coalition_value(x, full)?;
    let delta = observed - base;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coalitions = kernel_coalitions(m, n_coalitions - 2, &mut rng);
    let values: Vec<f64> =
        coalitions.par_iter().map(|&(mask, _)| pm.coalition_value(x, mask)).collect::<Result<_>>()?;

    let mut phi = vec![0.0; m];
    let mut ridge_fallback = false;
    if m == 1 {
        phi[0] = delta;
    } else {
        let k = m - 1;
        let last = 1u64 << k;
        let mut ata = DMatrix::<f64>::zeros(k, k);
        let mut aty = DVector::<f64>::zeros(k);
        for (&(mask, w), &v) in coalitions.iter().zip(&values) {
            let z_last = if mask & last != 0 { 1.0 } else { 0.0 };
            let row: Vec<f64> = (0..k).map(|i| (mask >> i & 1) as f64 - z_last).collect();
            let target = v - base - z_last * delta;
            for a in 0..k {
                if row[a] == 0.0 {
                    continue;
                }
                aty[a] += w * row[a] * target;
                for b in 0..k {
                    ata[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        let scale = (0..k).map(|i| ata[(i, i)]).sum::<f64>() / k as f64;
        let solved = ata.clone().cholesky().filter(|c| {
            let d = c.l_dirty().diagonal();
            d.min() > 1e-7 * d.max()
        });
        let beta = match solved {
            Some(c) => c.solve(&aty),
            None => {
                ridge_fallback = true;
                let reg = &ata + DMatrix::identity(k, k) * (1e-8 * scale.max(1e-300));
                reg.cholesky().ok_or_else(|| Error::numerical("ridge-stabilized Shapley system is singular"))?.solve(&aty)
            }
        };
        for i in 0..k {
            phi[i] = beta[i];
        }
        phi[k] = delta - beta.iter().sum::<f64>();
    }

    let mut report = AttributionReport::new(pm, x, Method::KernelRegression, phi, base, observed);
    report.n_coalitions = coalitions.len() + 2;
    report.ridge_fallback = ridge_fallback;
    report.seed = Some(seed);
    if ridge_fallback {
        report.warnings.push("regression system singular; ridge-stabilized solve used".into());
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleySettings {
    /// Arity up to which exact enumeration is used.
    pub exact_max_arity: usize,
    pub n_coalitions: usize,
    pub seed: u64,
}

impl Default for ShapleySettings {
    fn default() -> Self {
        ShapleySettings { exact_max_arity: 15, n_coalitions: 2048, seed: 0 }
    }
}

/// Exact enumeration for small games, kernel regression otherwise.
pub fn shapley(pm: &PseudoModel, x: &[f64], settings: &ShapleySettings) -> Result<AttributionReport> {
    if pm.arity() <= settings.exact_max_arity.min(MAX_EXACT_ARITY) {
        shapley_exact(pm, x)
    } else {
        shapley_kernel_regression(pm, x, settings.n_coalitions, settings.seed)
    }
}

/// Per-class reference vectors together with their encoded states.
#[derive(Clone, Debug)]
pub struct ReferenceStates {
    pub refs: Vec<ClassReference>,
    pub states: Vec<StateVector>,
}

impl ReferenceStates {
    pub fn build(feature_map: &ParamCircuit, rows: &[Vec<f64>], labels: &[u8], kind: ReferenceKind) -> Result<Self> {
        let refs = class_references(rows, labels, kind)?;
        let vectors: Vec<Vec<f64>> = refs.iter().map(|r| r.vector.clone()).collect();
        let states = encode_all(feature_map, &vectors)?;
        Ok(ReferenceStates { refs, states })
    }

    pub fn get(&self, class: u8) -> Result<(&ClassReference, &StateVector)> {
        self.refs
            .iter()
            .position(|r| r.label == class)
            .map(|i| (&self.refs[i], &self.states[i]))
            .ok_or_else(|| Error::Configuration(format!("no reference for class {class}")))
    }

    pub fn classes(&self) -> Vec<u8> {
        self.refs.iter().map(|r| r.label).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMapTarget {
    General,
    Class(u8),
}

fn fidelity_model(feature_map: &ParamCircuit, target: StateVector, baseline: Vec<f64>, description: String) -> PseudoModel {
    let fm = feature_map.clone();
    PseudoModel::new(baseline, description, move |x| state_fidelity(&encode(&fm, x)?, &target))
}

/// Fidelity of the encoded input to either the encoded background mean
/// (general) or a class reference state.
pub fn feature_map_pseudo_model(
    feature_map: &ParamCircuit,
    target: FeatureMapTarget,
    refs: Option<&ReferenceStates>,
    background: &[Vec<f64>],
) -> Result<PseudoModel> {
    if background.is_empty() {
        return Err(Error::Argument("background set is empty".into()));
    }
    let mean = column_means(background);
    let state = match target {
        FeatureMapTarget::General => encode(feature_map, &mean)?,
        FeatureMapTarget::Class(k) => {
            let refs = refs.ok_or_else(|| Error::Configuration("class mode needs reference states".into()))?;
            refs.get(k)?.1.clone()
        }
    };
    let description = match target {
        FeatureMapTarget::General => "fidelity to the encoded background mean".to_string(),
        FeatureMapTarget::Class(k) => format!("fidelity to the encoded class-{k} reference"),
    };
    Ok(fidelity_model(feature_map, state, mean, description))
}

/// Fidelity of the encoded input to the encoded `class_ref`.
pub fn kernel_pseudo_model(feature_map: &ParamCircuit, class_ref: &[f64], baseline: Vec<f64>) -> Result<PseudoModel> {
    let state = encode(feature_map, class_ref)?;
    Ok(fidelity_model(feature_map, state, baseline, "kernel fidelity to a class central sample".into()))
}

/// Players are ansatz angles; absent ones are shifted by `delta`.
pub fn ansatz_pseudo_model(model: &VqcModel, delta: f64, probe_input: &[f64]) -> Result<PseudoModel> {
    if !model.is_trained() {
        return Err(Error::State("VQC has no trained parameters; train it first".into()));
    }
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::Degenerate("perturbation delta must be nonzero; every coalition would score 1".into()));
    }
    let encoded = encode(&model.feature_map, probe_input)?;
    let reference = model.evolve(&encoded, &model.theta)?;
    let baseline: Vec<f64> = model.theta.iter().map(|t| t + delta).collect();
    let vqc = model.clone();
    Ok(PseudoModel::new(baseline, format!("ansatz fidelity under a {delta} rad perturbation"), move |theta| {
        state_fidelity(&reference, &vqc.evolve(&encoded, theta)?)
    }))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMapMode {
    General,
    Class,
}

/// Feature-map attribution of one scaled sample; one report per class in
/// class mode.
pub fn explain_feature_map(
    feature_map: &ParamCircuit,
    sample: &[f64],
    mode: FeatureMapMode,
    refs: &ReferenceStates,
    background: &[Vec<f64>],
    feature_names: &[String],
    settings: &ShapleySettings,
) -> Result<Vec<AttributionReport>> {
    let targets: Vec<(FeatureMapTarget, Target)> = match mode {
        FeatureMapMode::General => vec![(FeatureMapTarget::General, Target::FeatureMapGeneral)],
        FeatureMapMode::Class => refs
            .classes()
            .into_iter()
            .map(|k| (FeatureMapTarget::Class(k), Target::FeatureMapClass { class: k }))
            .collect(),
    };
    targets
        .into_iter()
        .map(|(fm_target, target)| {
            let pm = feature_map_pseudo_model(feature_map, fm_target, Some(refs), background)?;
            Ok(shapley(&pm, sample, settings)?.with_target(target, feature_names))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAggregate {
    pub layer: usize,
    pub signed_sum: f64,
    pub absolute_sum: f64,
    pub n_params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnsatzExplanation {
    pub report: AttributionReport,
    pub delta: f64,
    pub probe_input: Vec<f64>,
    pub layers: Vec<LayerAggregate>,
}

impl AnsatzExplanation {
    pub fn write_layers_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for l in &self.layers {
            w.serialize(l)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Attribution over trained ansatz angles, summed per repetition layer.
pub fn explain_ansatz(
    model: &VqcModel,
    delta: f64,
    probe_input: &[f64],
    settings: &ShapleySettings,
) -> Result<AnsatzExplanation> {
    let pm = ansatz_pseudo_model(model, delta, probe_input)?;
    let report = shapley(&pm, &model.theta, settings)?.with_target(Target::AnsatzParams, model.ansatz.param_names());
    let layer_of = model.ansatz.param_layers();
    let layers = (0..model.ansatz.n_layers())
        .map(|layer| {
            let members: Vec<f64> =
                report.shap_values.iter().zip(layer_of).filter(|(_, &l)| l == layer).map(|(&v, _)| v).collect();
            LayerAggregate {
                layer,
                signed_sum: members.iter().sum(),
                absolute_sum: members.iter().map(|v| v.abs()).sum(),
                n_params: members.len(),
            }
        })
        .collect();
    Ok(AnsatzExplanation { report, delta, probe_input: probe_input.to_vec(), layers })
}

/// Centered accumulated local effects of one feature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AleCurve {
    pub feature_name: String,
    pub feature_index: usize,
    pub bin_edges: Vec<f64>,
    /// Centered effect at each edge.
    pub accumulated_effects: Vec<f64>,
    pub bin_counts: Vec<usize>,
    /// Constant subtracted from the uncentered curve.
    pub centering: f64,
    pub n_bins_requested: usize,
    /// The feature takes a single value in the background set.
    pub constant_feature: bool,
}

impl AleCurve {
    /// Bin holding `v`: the first bin is closed on both ends, the rest are
    /// `(lo, hi]`. Values outside the edges go to the end bins.
    pub fn bin_of(&self, v: f64) -> usize {
        let k = self.bin_counts.len();
        self.bin_edges[1..k].iter().take_while(|&&e| e < v).count()
    }

    /// Centered effect at `v`, linear between edges.
    pub fn interpolate(&self, v: f64) -> f64 {
        let b = self.bin_of(v);
        let (lo, hi) = (self.bin_edges[b], self.bin_edges[b + 1]);
        let (a, c) = (self.accumulated_effects[b], self.accumulated_effects[b + 1]);
        if hi > lo {
            a + (c - a) * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
        } else {
            a
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["edge", "effect", "bin_count"])?;
        for (i, (&e, &a)) in self.bin_edges.iter().zip(&self.accumulated_effects).enumerate() {
            let count = if i == 0 { String::new() } else { self.bin_counts[i - 1].to_string() };
            w.write_record([e.to_string(), a.to_string(), count])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Linearly interpolated quantile, `q` in `[0, 1]`, of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// ALE over quantile bins. Duplicate edges are merged. The curve is centered
/// so the mean of the per-sample interpolated effects is zero.
pub fn ale_curve(
    pm: &PseudoModel,
    feature_index: usize,
    feature_name: &str,
    background: &[Vec<f64>],
    n_bins: usize,
) -> Result<AleCurve> {
    if n_bins == 0 {
        return Err(Error::Argument("ALE needs at least one bin".into()));
    }
    if background.is_empty() {
        return Err(Error::Argument("ALE background is empty".into()));
    }
    if feature_index >= pm.arity() {
        return Err(Error::Index(format!("feature {feature_index} outside {} players", pm.arity())));
    }
    let mut sorted: Vec<f64> = background.iter().map(|r| r[feature_index]).collect();
    sorted.sort_by(f64::total_cmp);
    let mut edges: Vec<f64> = (0..=n_bins).map(|k| quantile(&sorted, k as f64 / n_bins as f64)).collect();
    edges.dedup();

    if edges.len() < 2 {
        return Ok(AleCurve {
            feature_name: feature_name.into(),
            feature_index,
            bin_edges: vec![edges[0], edges[0]],
            accumulated_effects: vec![0.0, 0.0],
            bin_counts: vec![background.len()],
            centering: 0.0,
            n_bins_requested: n_bins,
            constant_feature: true,
        });
    }

    let k = edges.len() - 1;
    let mut curve = AleCurve {
        feature_name: feature_name.into(),
        feature_index,
        bin_edges: edges,
        accumulated_effects: vec![0.0; k + 1],
        bin_counts: vec![0; k],
        centering: 0.0,
        n_bins_requested: n_bins,
        constant_feature: false,
    };
    let bins: Vec<usize> = background.iter().map(|r| curve.bin_of(r[feature_index])).collect();
    let diffs: Vec<f64> = background
        .par_iter()
        .zip(bins.par_iter())
        .map(|(row, &b)| {
            let mut hi = row.clone();
            hi[feature_index] = curve.bin_edges[b + 1];
            let mut lo = row.clone();
            lo[feature_index] = curve.bin_edges[b];
            Ok(pm.value(&hi)? - pm.value(&lo)?)
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; k];
    for (&b, &d) in bins.iter().zip(&diffs) {
        sums[b] += d;
        curve.bin_counts[b] += 1;
    }
    for b in 0..k {
        let local = if curve.bin_counts[b] > 0 { sums[b] / curve.bin_counts[b] as f64 } else { 0.0 };
        curve.accumulated_effects[b + 1] = curve.accumulated_effects[b] + local;
    }
    let centering = background.iter().map(|r| curve.interpolate(r[feature_index])).sum::<f64>() / background.len() as f64;
    for a in &mut curve.accumulated_effects {
        *a -= centering;
    }
    curve.centering = centering;
    Ok(curve)
}

/// Kernel ridge regression with an RBF kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KrrSurrogate {
    pub train_xs: Vec<Vec<f64>>,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub bandwidth: f64,
    pub ridge: f64,
    /// Coefficient of determination on the fitting pairs.
    pub r2: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

impl KrrSurrogate {
    /// Fits `(xs, ys)` with the bandwidth set to the median pairwise distance.
    pub fn fit(xs: &[Vec<f64>], ys: &[f64], ridge: f64) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::Shape(format!("{n} inputs and {} targets", ys.len())));
        }
        let mut dists: Vec<f64> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| sq_dist(&xs[i], &xs[j]).sqrt()).collect();
        dists.sort_by(f64::total_cmp);
        let bandwidth = quantile(&dists, 0.5);
        if !(bandwidth > 0.0) {
            return Err(Error::Degenerate("median pairwise distance is zero".into()));
        }
        let gamma = 0.5 / (bandwidth * bandwidth);
        let intercept = ys.iter().sum::<f64>() / n as f64;
        let gram = DMatrix::from_fn(n, n, |i, j| (-gamma * sq_dist(&xs[i], &xs[j])).exp());
        let system = &gram + DMatrix::identity(n, n) * ridge;
        let rhs = DVector::from_iterator(n, ys.iter().map(|y| y - intercept));
        let coef = system.cholesky().ok_or_else(|| Error::numerical("surrogate system is not positive definite"))?.solve(&rhs);
        let mut s = KrrSurrogate {
            train_xs: xs.to_vec(),
            coefficients: coef.iter().copied().collect(),
            intercept,
            bandwidth,
            ridge,
            r2: 0.0,
        };
        let fitted = &gram * &coef;
        s.r2 = r_squared(ys, &fitted.iter().map(|f| f + intercept).collect::<Vec<_>>());
        Ok(s)
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let gamma = 0.5 / (self.bandwidth * self.bandwidth);
        self.train_xs.iter().zip(&self.coefficients).map(|(t, c)| c * (-gamma * sq_dist(t, x)).exp()).sum::<f64>()
            + self.intercept
    }
}

pub fn r_squared(truth: &[f64], predicted: &[f64]) -> f64 {
    let mean = truth.iter().sum::<f64>() / truth.len() as f64;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = truth.iter().zip(predicted).map(|(t, p)| (t - p).powi(2)).sum();
    if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecisionMode {
    Direct,
    Surrogate,
}

/// R² below which surrogate attributions are flagged as non-faithful.
pub const SURROGATE_R2_WARNING: f64 = 0.9;
pub const SURROGATE_RIDGE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSummary {
    pub r2: f64,
    /// R² against the true decision values of the explained samples.
    pub r2_explained: f64,
    pub bandwidth: f64,
    pub ridge: f64,
    pub faithful: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sample: usize,
    pub feature: String,
    pub shap_value: f64,
    pub feature_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionExplanation {
    pub mode: DecisionMode,
    pub feature_names: Vec<String>,
    pub reports: Vec<AttributionReport>,
    /// Mean `|phi|` per feature over the explained samples.
    pub global_importance: Vec<f64>,
    pub surrogate: Option<SurrogateSummary>,
    pub warnings: Vec<String>,
}

impl DecisionExplanation {
    /// Feature indices by descending mean `|phi|`.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.global_importance.len()).collect();
        idx.sort_by(|&a, &b| self.global_importance[b].total_cmp(&self.global_importance[a]).then(a.cmp(&b)));
        idx
    }

    pub fn summary_rows(&self) -> Vec<SummaryRow> {
        self.reports
            .iter()
            .enumerate()
            .flat_map(|(s, r)| {
                (0..r.shap_values.len()).map(move |j| SummaryRow {
                    sample: r.sample_index.unwrap_or(s),
                    feature: self.feature_names[j].clone(),
                    shap_value: r.shap_values[j],
                    feature_value: r.assignment[j],
                })
            })
            .collect()
    }

    pub fn write_importance_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["rank", "feature", "mean_abs_shap"])?;
        for (rank, j) in self.ranking().into_iter().enumerate() {
            w.write_record([(rank + 1).to_string(), self.feature_names[j].clone(), self.global_importance[j].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in self.summary_rows() {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Pseudo-model returning the QSVC decision value; support-vector states
/// are encoded once.
pub fn decision_pseudo_model(model: &QsvcModel, baseline: Vec<f64>) -> Result<PseudoModel> {
    let fm = model
        .feature_map
        .clone()
        .ok_or_else(|| Error::State("QSVC has no attached support vectors; train it first".into()))?;
    let sv = encode_all(&fm, &model.support_vectors)?;
    let m = model.clone();
    Ok(PseudoModel::new(baseline, "QSVC decision value", move |x| {
        let psi = encode(&fm, x)?;
        let row = sv.iter().map(|s| state_fidelity(&psi, s)).collect::<Result<Vec<_>>>()?;
        Ok(m.decision_from_support_row(&row))
    }))
}

/// Attributes QSVC decision values of `xs` directly, or through a kernel
/// ridge surrogate fitted on the background points and their decision values.
pub fn explain_decision_function(
    model: &QsvcModel,
    xs: &[Vec<f64>],
    sample_ids: &[usize],
    mode: DecisionMode,
    background: &[Vec<f64>],
    feature_names: &[String],
    settings: &ShapleySettings,
) -> Result<DecisionExplanation> {
    if background.is_empty() {
        return Err(Error::Argument("background set is empty".into()));
    }
    let baseline = column_means(background);
    let direct = decision_pseudo_model(model, baseline.clone())?;
    let mut warnings = Vec::new();
    let (pm, surrogate) = match mode {
        DecisionMode::Direct => (direct, None),
        DecisionMode::Surrogate => {
            let scores: Vec<f64> = background.par_iter().map(|x| direct.value(x)).collect::<Result<_>>()?;
            let fit = KrrSurrogate::fit(background, &scores, SURROGATE_RIDGE)?;
            let truth: Vec<f64> = xs.par_iter().map(|x| direct.value(x)).collect::<Result<_>>()?;
            let approx: Vec<f64> = xs.iter().map(|x| fit.predict(x)).collect();
            let faithful = fit.r2 >= SURROGATE_R2_WARNING;
            if !faithful {
                warnings.push(format!("surrogate R^2 {:.4} below {SURROGATE_R2_WARNING}; attributions are not faithful", fit.r2));
            }
            let summary = SurrogateSummary {
                r2: fit.r2,
                r2_explained: if xs.len() > 1 { r_squared(&truth, &approx) } else { f64::NAN },
                bandwidth: fit.bandwidth,
                ridge: fit.ridge,
                faithful,
            };
            let fit = Arc::new(fit);
            let pm = PseudoModel::new(baseline, "kernel ridge surrogate of the QSVC decision value", move |x| Ok(fit.predict(x)));
            (pm, Some(summary))
        }
    };
    let mut reports = Vec::with_capacity(xs.len());
    for (i, x) in xs.iter().enumerate() {
        let mut r = shapley(&pm, x, settings)?.with_target(Target::DecisionFunction, feature_names);
        r.sample_index = sample_ids.get(i).copied();
        r.warnings.extend(warnings.iter().cloned());
        reports.push(r);
    }
    let d = pm.arity();
    let global_importance = (0..d)
        .map(|j| reports.iter().map(|r| r.shap_values[j].abs()).sum::<f64>() / reports.len().max(1) as f64)
        .collect();
    Ok(DecisionExplanation {
        mode,
        feature_names: feature_names.to_vec(),
        reports,
        global_importance,
        surrogate,
        warnings,
    })
}
