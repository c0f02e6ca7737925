//! Run configuration: one JSON document, every field optional.

use std::path::{Path, PathBuf};

use anyhow::Context;
use qxai::circuits::{
    build_efficient_su2, build_identity_map, build_real_amplitudes, build_z_feature_map, build_zz_feature_map,
    Entanglement, ParamCircuit,
};
use qxai::data::ReferenceKind;
use qxai::explain::{DecisionMode, ShapleySettings};
use qxai::models::{SmoSettings, VqcSettings};
use qxai::optimize::CobylaSettings;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Output root used when neither the config nor `--out` names one.
pub const DEFAULT_OUT: &str = "qxai-out";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMapKind {
    Z,
    Zz,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureMapConfig {
    pub kind: FeatureMapKind,
    pub reps: usize,
    pub entanglement: Entanglement,
}

impl Default for FeatureMapConfig {
    fn default() -> Self {
        FeatureMapConfig { kind: FeatureMapKind::Z, reps: 2, entanglement: Entanglement::Linear }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnsatzKind {
    RealAmplitudes,
    EfficientSu2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnsatzConfig {
    pub kind: AnsatzKind,
    pub reps: usize,
    pub entanglement: Entanglement,
}

impl Default for AnsatzConfig {
    fn default() -> Self {
        AnsatzConfig { kind: AnsatzKind::RealAmplitudes, reps: 3, entanglement: Entanglement::Linear }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub rho_begin: f64,
    pub rho_end: f64,
    /// `None` means 100 evaluations per ansatz parameter.
    pub max_evals: Option<usize>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let d = CobylaSettings::default();
        OptimizerConfig { rho_begin: d.rho_begin, rho_end: d.rho_end, max_evals: d.max_evals }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub c: f64,
    pub tol: f64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        let d = SmoSettings::default();
        SvmConfig { c: d.c, tol: d.tol }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainConfig {
    /// Ansatz perturbation in radians.
    pub delta: f64,
    pub ale_bins: usize,
    pub n_coalitions: usize,
    pub exact_max_arity: usize,
    pub reference: ReferenceKind,
    pub decision_mode: DecisionMode,
    /// Cap on explained test samples for the decision function; `None` = all.
    pub decision_samples: Option<usize>,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        let s = ShapleySettings::default();
        ExplainConfig {
            delta: 0.1,
            ale_bins: 10,
            n_coalitions: s.n_coalitions,
            exact_max_arity: s.exact_max_arity,
            reference: ReferenceKind::Mean,
            decision_mode: DecisionMode::Surrogate,
            decision_samples: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectraConfig {
    /// 1-based principal component triples to project on.
    pub component_sets: Vec<Vec<usize>>,
    pub clusters: usize,
    pub centered: bool,
    pub scree_count: usize,
    pub variance_threshold: f64,
}

impl Default for SpectraConfig {
    fn default() -> Self {
        SpectraConfig {
            component_sets: vec![vec![1, 2, 3], vec![1, 2, 4]],
            clusters: 2,
            centered: true,
            scree_count: 20,
            variance_threshold: 0.99,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Vqc,
    Qsvc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub label_column: String,
    /// Columns whose zeros are replaced by the column median. Off by default.
    pub impute_zero_median: Vec<String>,
    pub test_fraction: f64,
    pub seed: u64,
    pub feature_map: FeatureMapConfig,
    pub ansatz: AnsatzConfig,
    pub optimizer: OptimizerConfig,
    pub svm: SvmConfig,
    pub explain: ExplainConfig,
    pub spectra: SpectraConfig,
    pub models: Vec<ModelKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: PathBuf::from("data/pima-indians-diabetes.csv"),
            label_column: "Outcome".into(),
            impute_zero_median: Vec::new(),
            test_fraction: 0.09,
            seed: 42,
            feature_map: FeatureMapConfig::default(),
            ansatz: AnsatzConfig::default(),
            optimizer: OptimizerConfig::default(),
            svm: SvmConfig::default(),
            explain: ExplainConfig::default(),
            spectra: SpectraConfig::default(),
            models: vec![ModelKind::Vqc, ModelKind::Qsvc],
            output_dir: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Canonical serialization: sorted keys, output location left out so
    /// identical runs into different directories share a hash.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        // serde_json maps are sorted by key
        let value = serde_json::to_value(&c).expect("config serializes");
        serde_json::to_string(&value).expect("value serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn out_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn build_feature_map(&self, n_features: usize) -> qxai::Result<ParamCircuit> {
        let fm = &self.feature_map;
        match fm.kind {
            FeatureMapKind::Z => build_z_feature_map(n_features, fm.reps),
            FeatureMapKind::Zz => build_zz_feature_map(n_features, fm.reps, fm.entanglement),
            FeatureMapKind::None => build_identity_map(n_features),
        }
    }

    pub fn build_ansatz(&self, n_qubits: usize) -> qxai::Result<ParamCircuit> {
        let a = &self.ansatz;
        match a.kind {
            AnsatzKind::RealAmplitudes => build_real_amplitudes(n_qubits, a.reps, a.entanglement),
            AnsatzKind::EfficientSu2 => build_efficient_su2(n_qubits, a.reps, a.entanglement),
        }
    }

    pub fn smo_settings(&self) -> SmoSettings {
        SmoSettings { c: self.svm.c, tol: self.svm.tol, max_passes: None }
    }

    pub fn vqc_settings(&self) -> VqcSettings {
        let o = &self.optimizer;
        VqcSettings {
            optimizer: CobylaSettings { rho_begin: o.rho_begin, rho_end: o.rho_end, max_evals: o.max_evals },
            seed: self.seed,
        }
    }

    pub fn shapley_settings(&self) -> ShapleySettings {
        ShapleySettings {
            exact_max_arity: self.explain.exact_max_arity,
            n_coalitions: self.explain.n_coalitions,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_documents_fill_defaults() {
        let c: RunConfig = serde_json::from_str(r#"{"seed": 7, "svm": {"c": 2.0}}"#).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.svm.c, 2.0);
        assert_eq!(c.svm.tol, 1e-3);
        assert_eq!(c.feature_map.reps, 2);
        assert!(serde_json::from_str::<RunConfig>(r#"{"sed": 7}"#).is_err());
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        let round: RunConfig = serde_json::from_str(&a.canonical_json()).unwrap();
        assert_eq!(round, a);
    }
}
