//! The `train`, `explain`, `spectra` and `report` verbs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{anyhow, bail, Context};
use qxai::data::{column_means, load_csv, split, Dataset, Scaler, SplitManifest};
use qxai::explain::{
    ale_curve, explain_ansatz, explain_decision_function, explain_feature_map, feature_map_pseudo_model,
    kernel_pseudo_model, shapley, AleCurve, AttributionReport, DecisionExplanation, DecisionMode, FeatureMapMode,
    FeatureMapTarget, ReferenceStates, Target,
};
use qxai::models::{fit_qsvc, qsvc_decisions, quantum_kernel, score, vqc_predict, vqc_train, QsvcModel, Scores, VqcModel};
use qxai::optimize::{record_trace, write_trace_csv};
use qxai::spectra::{components_for_variance, explained_variance, kmeans, ClusterSummary, KernelPca};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ModelKind, RunConfig};
use crate::plot;

pub const MANIFEST: &str = "manifest.json";
pub const FAILED_MARKER: &str = ".failed";

/// Tags a core error with the module it came from.
fn m<T>(module: &str, r: qxai::Result<T>) -> anyhow::Result<T> {
    r.map_err(|e| anyhow!("[{module}] {e}"))
}

/// Writes artifacts below the output root and remembers what it wrote.
pub struct Output {
    root: PathBuf,
}

impl Output {
    pub fn new(root: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Output { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn bytes(&self, rel: &str, data: &[u8]) -> anyhow::Result<()> {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        fs::write(&path, data).with_context(|| format!("writing {}", path.display()))
    }

    pub fn json<T: Serialize>(&self, rel: &str, value: &T) -> anyhow::Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.bytes(rel, text.as_bytes())
    }

    pub fn csv(&self, rel: &str, fill: impl FnOnce(&mut Vec<u8>) -> qxai::Result<()>) -> anyhow::Result<()> {
        let mut buf = Vec::new();
        m("io", fill(&mut buf))?;
        self.bytes(rel, &buf)
    }

    /// Writes `stem.svg` and its `stem.csv` twin.
    pub fn plot(&self, stem: &str, svg: String, csv: impl FnOnce(&mut Vec<u8>) -> qxai::Result<()>) -> anyhow::Result<()> {
        self.csv(&format!("{stem}.csv"), csv)?;
        self.bytes(&format!("{stem}.svg"), svg.as_bytes())
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str, hint: &str) -> anyhow::Result<T> {
        let path = self.root.join(rel);
        let text = fs::read_to_string(&path)
            .map_err(|_| anyhow!("[state] missing {}; run `qxai {hint}` first", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

fn rows_csv(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> impl FnOnce(&mut Vec<u8>) -> qxai::Result<()> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = rows.into_iter().collect();
    move |buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(&header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Scaled train/test splits.
pub struct Prepared {
    pub train: Dataset,
    pub test: Dataset,
    pub scaler: Scaler,
    pub split: SplitManifest,
    pub clipped: usize,
}

pub fn prepare(cfg: &RunConfig) -> anyhow::Result<Prepared> {
    let mut ds = m("data", load_csv(&cfg.dataset, &cfg.label_column))?;
    if !cfg.impute_zero_median.is_empty() {
        let cols: Vec<&str> = cfg.impute_zero_median.iter().map(String::as_str).collect();
        ds = m("data", ds.impute_zero_median(&cols))?;
    }
    let (train, test, split) = m("data", split(&ds, cfg.test_fraction, cfg.seed))?;
    let scaler = m("data", Scaler::fit(&train))?;
    let (train, _) = m("data", scaler.transform_dataset(&train))?;
    let (test, clipped) = m("data", scaler.transform_dataset(&test))?;
    Ok(Prepared { train, test, scaler, split, clipped })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Preprocess {
    pub config_hash: String,
    pub feature_names: Vec<String>,
    pub scaler: Scaler,
    pub split: SplitManifest,
    pub clipped_test_cells: usize,
    pub train_class_counts: [usize; 2],
    pub test_class_counts: [usize; 2],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint<M> {
    pub config_hash: String,
    pub seed: u64,
    pub model: M,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainSummary {
    pub qsvc: Option<Scores>,
    pub vqc: Option<Scores>,
}

fn require_models(cfg: &RunConfig, kind: ModelKind) -> bool {
    cfg.models.contains(&kind)
}

pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<TrainSummary> {
    let out = Output::new(&cfg.out_dir())?;
    let hash = cfg.hash();
    let p = prepare(cfg)?;
    out.json("split.json", &p.split)?;
    out.json(
        "checkpoints/preprocess.json",
        &Preprocess {
            config_hash: hash.clone(),
            feature_names: p.train.feature_names.clone(),
            scaler: p.scaler.clone(),
            split: p.split.clone(),
            clipped_test_cells: p.clipped,
            train_class_counts: p.train.class_counts(),
            test_class_counts: p.test.class_counts(),
        },
    )?;
    let fm = m("circuits", cfg.build_feature_map(p.train.n_features()))?;
    let mut summary = TrainSummary::default();

    if require_models(cfg, ModelKind::Qsvc) {
        let (model, _) = m("models", fit_qsvc(&fm, &p.train.rows, &p.train.labels, &cfg.smo_settings()))?;
        let d = m("models", qsvc_decisions(&model, &p.test.rows))?;
        let pred: Vec<u8> = d.iter().map(|&v| u8::from(v > 0.0)).collect();
        let s = score(&pred, &p.test.labels);
        println!(
            "qsvc: {} support vectors, test accuracy {:.4}, F1 {:.4}",
            model.support_ids.len(),
            s.accuracy,
            s.f1
        );
        out.json("checkpoints/qsvc.json", &Checkpoint { config_hash: hash.clone(), seed: cfg.seed, model })?;
        summary.qsvc = Some(s);
    }

    if require_models(cfg, ModelKind::Vqc) {
        let ansatz = m("circuits", cfg.build_ansatz(fm.n_qubits()))?;
        let model = m("models", vqc_train(fm.clone(), ansatz, &p.train.rows, &p.train.labels, &cfg.vqc_settings()))?;
        let pred: Vec<u8> = p.test.rows.iter().map(|x| vqc_predict(&model, x).map(|r| r.0)).collect::<qxai::Result<_>>().map_err(|e| anyhow!("[models] {e}"))?;
        let s = score(&pred, &p.test.labels);
        println!("vqc: test accuracy {:.4}, F1 {:.4}", s.accuracy, s.f1);
        if let Some(hist) = &model.train_history {
            let rows = record_trace(hist);
            let xs: Vec<f64> = rows.iter().map(|r| r.iteration as f64).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.cost).collect();
            let svg = plot::line("VQC training loss", "improvement", "cross-entropy", &xs, &ys, None);
            out.plot("vqc_trace", svg, |buf| write_trace_csv(&rows, buf))?;
        }
        out.json("checkpoints/vqc.json", &Checkpoint { config_hash: hash.clone(), seed: cfg.seed, model })?;
        summary.vqc = Some(s);
    }
    out.json("metrics.json", &summary)?;
    Ok(summary)
}

/// Which test samples to explain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleSel {
    Index(usize),
    All,
}

impl std::str::FromStr for SampleSel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "all" {
            return Ok(SampleSel::All);
        }
        s.parse().map(SampleSel::Index).map_err(|_| format!("expected a sample index or 'all', got '{s}'"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExplainTarget {
    FeatureMap,
    Ansatz,
    Kernel,
    Decision,
}

impl std::str::FromStr for ExplainTarget {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "feature-map" => Ok(ExplainTarget::FeatureMap),
            "ansatz" => Ok(ExplainTarget::Ansatz),
            "kernel" => Ok(ExplainTarget::Kernel),
            "decision" => Ok(ExplainTarget::Decision),
            other => Err(format!("unknown target '{other}' (feature-map, ansatz, kernel, decision)")),
        }
    }
}

/// Loaded state shared by the explain and spectra verbs.
struct Loaded {
    out: Output,
    prepared: Prepared,
}

fn load(cfg: &RunConfig) -> anyhow::Result<Loaded> {
    let out = Output::new(&cfg.out_dir())?;
    let pre: Preprocess = out.read_json("checkpoints/preprocess.json", "train")?;
    if pre.config_hash != cfg.hash() {
        bail!("[state] checkpoints in {} come from config {}; run `qxai train` with this config", out.root().display(), &pre.config_hash[..12]);
    }
    let prepared = prepare(cfg)?;
    if prepared.split != pre.split {
        bail!("[state] split no longer matches the checkpoint; rerun `qxai train`");
    }
    Ok(Loaded { out, prepared })
}

fn select(sel: SampleSel, n: usize) -> anyhow::Result<Vec<usize>> {
    match sel {
        SampleSel::All => Ok((0..n).collect()),
        SampleSel::Index(i) if i < n => Ok(vec![i]),
        SampleSel::Index(i) => bail!("[cli] sample {i} outside the {n}-row test split"),
    }
}

fn write_report(out: &Output, stem: &str, r: &AttributionReport, title: &str) -> anyhow::Result<()> {
    out.json(&format!("{stem}.json"), r)?;
    let steps: Vec<(String, f64)> = r.waterfall_order().into_iter().map(|i| (r.player_names[i].clone(), r.shap_values[i])).collect();
    out.plot(stem, plot::waterfall(title, r.base_value, &steps), |buf| r.write_csv(buf))
}

fn write_ale(out: &Output, stem: &str, c: &AleCurve, title: &str) -> anyhow::Result<()> {
    let svg = plot::line(title, &format!("{} (scaled)", c.feature_name), "accumulated effect", &c.bin_edges, &c.accumulated_effects, None);
    out.plot(stem, svg, |buf| c.write_csv(buf))
}

pub fn cmd_explain(
    cfg: &RunConfig,
    target: ExplainTarget,
    mode: Option<&str>,
    sample: SampleSel,
) -> anyhow::Result<()> {
    let Loaded { out, prepared: p } = load(cfg)?;
    let names = p.train.feature_names.clone();
    let shap = cfg.shapley_settings();
    match target {
        ExplainTarget::FeatureMap => {
            let mode = match mode.unwrap_or("class") {
                "general" => FeatureMapMode::General,
                "class" => FeatureMapMode::Class,
                other => bail!("[cli] feature-map mode must be general or class, not '{other}'"),
            };
            let fm = m("circuits", cfg.build_feature_map(p.train.n_features()))?;
            let refs = m("explain", ReferenceStates::build(&fm, &p.train.rows, &p.train.labels, cfg.explain.reference))?;
            out.json("explain/feature_map/references.json", &refs.refs)?;
            for i in select(sample, p.test.len())? {
                let reports = m(
                    "explain",
                    explain_feature_map(&fm, &p.test.rows[i], mode, &refs, &p.train.rows, &names, &shap),
                )?;
                for mut r in reports {
                    r.sample_index = Some(i);
                    let slug = r.target.slug();
                    write_report(&out, &format!("explain/feature_map/{slug}_sample{i}"), &r, &format!("Feature map SHAP, {slug}, test sample {i}"))?;
                }
            }
            let targets: Vec<FeatureMapTarget> = match mode {
                FeatureMapMode::General => vec![FeatureMapTarget::General],
                FeatureMapMode::Class => refs.classes().into_iter().map(FeatureMapTarget::Class).collect(),
            };
            for t in targets {
                let pm = m("explain", feature_map_pseudo_model(&fm, t, Some(&refs), &p.train.rows))?;
                let slug = match t {
                    FeatureMapTarget::General => Target::FeatureMapGeneral.slug(),
                    FeatureMapTarget::Class(k) => Target::FeatureMapClass { class: k }.slug(),
                };
                for (j, name) in names.iter().enumerate() {
                    let c = m("explain", ale_curve(&pm, j, name, &p.train.rows, cfg.explain.ale_bins))?;
                    write_ale(&out, &format!("explain/feature_map/ale/{slug}_{name}"), &c, &format!("ALE of {name}, {slug}"))?;
                }
            }
        }
        ExplainTarget::Kernel => {
            let ck: Checkpoint<QsvcModel> = out.read_json("checkpoints/qsvc.json", "train")?;
            let fm = ck.model.feature_map.clone().ok_or_else(|| anyhow!("[state] QSVC checkpoint lacks its feature map; rerun `qxai train`"))?;
            let refs = m("explain", ReferenceStates::build(&fm, &p.train.rows, &p.train.labels, cfg.explain.reference))?;
            let baseline = column_means(&p.train.rows);
            for i in select(sample, p.test.len())? {
                for r in &refs.refs {
                    let pm = m("explain", kernel_pseudo_model(&fm, &r.vector, baseline.clone()))?;
                    let mut rep = m("explain", shapley(&pm, &p.test.rows[i], &shap))?
                        .with_target(Target::KernelClass { class: r.label }, &names);
                    rep.sample_index = Some(i);
                    let slug = rep.target.slug();
                    write_report(&out, &format!("explain/kernel/{slug}_sample{i}"), &rep, &format!("Kernel SHAP vs class {} centre, test sample {i}", r.label))?;
                }
            }
        }
        ExplainTarget::Ansatz => {
            let ck: Checkpoint<VqcModel> = out.read_json("checkpoints/vqc.json", "train")?;
            let probe = column_means(&p.train.rows);
            let e = m("explain", explain_ansatz(&ck.model, cfg.explain.delta, &probe, &shap))?;
            write_report(&out, "explain/ansatz/params", &e.report, "Ansatz parameter SHAP")?;
            let items: Vec<(String, f64)> = e.layers.iter().map(|l| (format!("layer {}", l.layer), l.signed_sum)).collect();
            out.plot("explain/ansatz/layers", plot::hbar("Ansatz layer SHAP (signed sums)", "sum of SHAP values", &items), |buf| e.write_layers_csv(buf))?;
            out.json("explain/ansatz/explanation.json", &e)?;
        }
        ExplainTarget::Decision => {
            let ck: Checkpoint<QsvcModel> = out.read_json("checkpoints/qsvc.json", "train")?;
            let dmode = match mode {
                None => cfg.explain.decision_mode,
                Some("direct") => DecisionMode::Direct,
                Some("surrogate") => DecisionMode::Surrogate,
                Some(other) => bail!("[cli] decision mode must be direct or surrogate, not '{other}'"),
            };
            let n = cfg.explain.decision_samples.unwrap_or(p.test.len()).min(p.test.len());
            let ids: Vec<usize> = (0..n).collect();
            let xs: Vec<Vec<f64>> = ids.iter().map(|&i| p.test.rows[i].clone()).collect();
            let e = m("explain", explain_decision_function(&ck.model, &xs, &ids, dmode, &p.train.rows, &names, &shap))?;
            for w in &e.warnings {
                log::warn!("{w}");
            }
            write_decision(&out, &e, sample)?;
        }
    }
    Ok(())
}

fn write_decision(out: &Output, e: &DecisionExplanation, sample: SampleSel) -> anyhow::Result<()> {
    let dir = match e.mode {
        DecisionMode::Direct => "explain/decision/direct",
        DecisionMode::Surrogate => "explain/decision/surrogate",
    };
    out.json(&format!("{dir}/explanation.json"), e)?;
    let items: Vec<(String, f64)> = e.ranking().into_iter().map(|j| (e.feature_names[j].clone(), e.global_importance[j])).collect();
    out.plot(&format!("{dir}/importance"), plot::hbar("Global importance (mean |SHAP|)", "mean |SHAP|", &items), |buf| e.write_importance_csv(buf))?;
    let index: BTreeMap<&str, usize> = e.feature_names.iter().enumerate().map(|(j, f)| (f.as_str(), j)).collect();
    let rows: Vec<(usize, f64, f64)> = e.summary_rows().iter().map(|r| (index[r.feature.as_str()], r.shap_value, r.feature_value)).collect();
    out.plot(&format!("{dir}/summary"), plot::summary("SHAP summary", &e.feature_names, &rows), |buf| e.write_summary_csv(buf))?;
    let local = match sample {
        SampleSel::Index(i) => e.reports.iter().find(|r| r.sample_index == Some(i)),
        SampleSel::All => e.reports.first(),
    };
    if let Some(r) = local {
        let i = r.sample_index.unwrap_or(0);
        write_report(out, &format!("{dir}/waterfall_sample{i}"), r, &format!("Decision function SHAP, test sample {i}"))?;
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectraSummary {
    pub n_train: usize,
    pub centered: bool,
    pub variance_threshold: f64,
    /// Number of leading components reaching the threshold.
    pub components_for_threshold: usize,
    pub top_eigenvalues: Vec<f64>,
    pub zero_components: Vec<usize>,
    pub clusters: ClusterSummary,
}

pub fn cmd_spectra(cfg: &RunConfig) -> anyhow::Result<SpectraSummary> {
    let Loaded { out, prepared: p } = load(cfg)?;
    let ck: Checkpoint<QsvcModel> = out.read_json("checkpoints/qsvc.json", "train")?;
    let fm = ck.model.feature_map.clone().ok_or_else(|| anyhow!("[state] QSVC checkpoint lacks its feature map; rerun `qxai train`"))?;
    let sc = &cfg.spectra;
    let k = m("models", quantum_kernel(&p.train.rows, &fm))?;
    let pca = m("spectra", KernelPca::fit(&k.entries, sc.centered))?;
    let lam = &pca.eig.eigenvalues;
    let cumulative = m("spectra", explained_variance(&pca.eig))?;
    let crossing = components_for_variance(&cumulative, sc.variance_threshold);
    let total: f64 = lam.iter().map(|l| l.max(0.0)).sum();

    let top = sc.scree_count.min(lam.len());
    let scree: Vec<f64> = lam[..top].to_vec();
    out.plot(
        "spectra/scree",
        plot::vbar(&format!("Kernel spectrum, first {top} eigenvalues"), "component", "eigenvalue", &scree),
        rows_csv(&["component", "eigenvalue", "explained_ratio"], scree.iter().enumerate().map(|(i, l)| vec![(i + 1).to_string(), l.to_string(), (l.max(0.0) / total).to_string()])),
    )?;
    let xs: Vec<f64> = (1..=cumulative.len()).map(|i| i as f64).collect();
    out.plot(
        "spectra/variance",
        plot::line(&format!("Cumulative explained variance ({crossing} components reach {})", sc.variance_threshold), "components", "cumulative ratio", &xs, &cumulative, Some(crossing as f64)),
        rows_csv(&["components", "cumulative_ratio", "at_threshold"], cumulative.iter().enumerate().map(|(i, c)| vec![(i + 1).to_string(), c.to_string(), (i + 1 == crossing).to_string()])),
    )?;

    let labels: Vec<usize> = p.train.labels.iter().map(|&l| l as usize).collect();
    let legend = vec!["class 0".to_string(), "class 1".to_string()];
    let mut zero_components = Vec::new();
    let mut cluster_coords = None;
    for set in &sc.component_sets {
        if set.contains(&0) {
            bail!("[cli] component sets are 1-based");
        }
        let idx: Vec<usize> = set.iter().map(|c| c - 1).collect();
        let proj = m("spectra", pca.project(&idx))?;
        zero_components.extend(proj.zero_components.iter().map(|c| c + 1));
        let tag = set.iter().map(|c| c.to_string()).collect::<Vec<_>>().join("_");
        let mut header = vec!["sample".to_string(), "label".to_string()];
        header.extend(set.iter().map(|c| format!("pc{c}")));
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        out.csv(
            &format!("spectra/projection_{tag}.csv"),
            rows_csv(&h, proj.coords.iter().enumerate().map(|(s, row)| {
                let mut r = vec![p.split.train_indices[s].to_string(), labels[s].to_string()];
                r.extend(row.iter().map(|v| v.to_string()));
                r
            })),
        )?;
        for a in 0..set.len() {
            for b in a + 1..set.len() {
                let pts: Vec<plot::Point> = proj.coords.iter().zip(&labels).map(|(r, &l)| plot::Point { x: r[a], y: r[b], group: l }).collect();
                let stem = format!("spectra/projection_{tag}_pc{}_pc{}", set[a], set[b]);
                let svg = plot::scatter(&format!("Kernel PCA, PC{} vs PC{}", set[a], set[b]), &format!("PC{}", set[a]), &format!("PC{}", set[b]), &pts, &legend);
                out.plot(&stem, svg, rows_csv(&["x", "y", "label"], pts.iter().map(|q| vec![q.x.to_string(), q.y.to_string(), q.group.to_string()])))?;
            }
        }
        if cluster_coords.is_none() {
            cluster_coords = Some(proj.coords);
        }
    }
    zero_components.sort_unstable();
    zero_components.dedup();
    let coords = match cluster_coords {
        Some(c) => c,
        None => m("spectra", pca.project(&[0, 1, 2.min(lam.len().saturating_sub(1))]))?.coords,
    };
    let clusters = m("spectra", kmeans(&coords, &labels, sc.clusters, cfg.seed))?;
    out.csv(
        "spectra/clusters.csv",
        rows_csv(&["cluster", "size", "class0_pct", "class1_pct", "majority_pct"], (0..clusters.sizes.len()).map(|c| {
            vec![
                c.to_string(),
                clusters.sizes[c].to_string(),
                clusters.composition[c][0].to_string(),
                clusters.composition[c].get(1).copied().unwrap_or(0.0).to_string(),
                clusters.majority_share()[c].to_string(),
            ]
        })),
    )?;
    let pts: Vec<plot::Point> = coords.iter().zip(&clusters.assignments).map(|(r, &g)| plot::Point { x: r[0], y: r.get(1).copied().unwrap_or(0.0), group: g }).collect();
    let cl_legend: Vec<String> = (0..sc.clusters).map(|c| format!("cluster {c}")).collect();
    out.plot(
        "spectra/cluster_points",
        plot::scatter("k-means clusters in kernel PCA space", "first component", "second component", &pts, &cl_legend),
        rows_csv(&["x", "y", "cluster", "label"], pts.iter().zip(&labels).map(|(q, l)| vec![q.x.to_string(), q.y.to_string(), q.group.to_string(), l.to_string()])),
    )?;

    let summary = SpectraSummary {
        n_train: p.train.len(),
        centered: sc.centered,
        variance_threshold: sc.variance_threshold,
        components_for_threshold: crossing,
        top_eigenvalues: scree,
        zero_components,
        clusters,
    };
    out.json("spectra/summary.json", &summary)?;
    Ok(summary)
}

/// Train, explain every component, analyze the kernel.
pub fn cmd_report(cfg: &RunConfig) -> anyhow::Result<()> {
    cmd_train(cfg)?;
    cmd_explain(cfg, ExplainTarget::FeatureMap, Some("general"), SampleSel::Index(0))?;
    cmd_explain(cfg, ExplainTarget::FeatureMap, Some("class"), SampleSel::Index(0))?;
    if require_models(cfg, ModelKind::Vqc) {
        cmd_explain(cfg, ExplainTarget::Ansatz, None, SampleSel::Index(0))?;
    }
    if require_models(cfg, ModelKind::Qsvc) {
        cmd_explain(cfg, ExplainTarget::Kernel, None, SampleSel::Index(0))?;
        cmd_explain(cfg, ExplainTarget::Decision, None, SampleSel::Index(0))?;
        cmd_spectra(cfg)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub created_unix: u64,
    pub config: RunConfig,
    pub files: Vec<FileEntry>,
    pub highlights: BTreeMap<String, serde_json::Value>,
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<FileEntry>) -> anyhow::Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<Result<_, _>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let path = e.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
            continue;
        }
        let rel = path.strip_prefix(root)?.to_string_lossy().replace('\\', "/");
        if rel == MANIFEST || rel == FAILED_MARKER {
            continue;
        }
        let data = fs::read(&path)?;
        out.push(FileEntry { path: rel, sha256: hex::encode(Sha256::digest(&data)), bytes: data.len() as u64 });
    }
    Ok(())
}

/// Lists every file under the output root with its digest.
pub fn write_manifest(cfg: &RunConfig, command: &str) -> anyhow::Result<Manifest> {
    let root = cfg.out_dir();
    let mut files = Vec::new();
    collect_files(&root, &root, &mut files)?;
    let mut highlights = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(root.join("spectra/summary.json")) {
        let s: SpectraSummary = serde_json::from_str(&text)?;
        highlights.insert("variance_threshold".into(), serde_json::json!(s.variance_threshold));
        highlights.insert("components_for_threshold".into(), serde_json::json!(s.components_for_threshold));
        highlights.insert("cluster_majority_pct".into(), serde_json::json!(s.clusters.majority_share()));
    }
    if let Ok(text) = fs::read_to_string(root.join("metrics.json")) {
        highlights.insert("test_metrics".into(), serde_json::from_str(&text)?);
    }
    let manifest = Manifest {
        tool: "qxai".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        config_hash: cfg.hash(),
        created_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        config: cfg.clone(),
        files,
        highlights,
    };
    Output::new(&root)?.json(MANIFEST, &manifest)?;
    Ok(manifest)
}

/// Runs a verb; failures leave a `.failed` marker naming the error.
pub fn run_marked<T>(cfg: &RunConfig, command: &str, f: impl FnOnce() -> anyhow::Result<T>) -> anyhow::Result<T> {
    let root = cfg.out_dir();
    let marker = root.join(FAILED_MARKER);
    match f().and_then(|v| write_manifest(cfg, command).map(|_| v)) {
        Ok(v) => {
            if marker.exists() {
                fs::remove_file(&marker)?;
            }
            Ok(v)
        }
        Err(e) => {
            let e = e.context(format!("config {}", &cfg.hash()[..12]));
            if fs::create_dir_all(&root).is_ok() {
                let _ = fs::write(&marker, format!("{command} failed: {e:#}\n"));
            }
            Err(e)
        }
    }
}
