use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qxai_cli::commands::{Manifest, FAILED_MARKER, MANIFEST};

fn repo(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// Toy config with absolute dataset path, written into `dir`.
fn toy_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("config.json");
    let text = format!(
        r#"{{"dataset": {:?}, "label_column": "label", "test_fraction": 0.2, "seed": 3{extra}}}"#,
        repo("data/toy.csv")
    );
    fs::write(&path, text).unwrap();
    path
}

fn qxai(config: &Path, out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qxai"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn files_under(dir: &Path, ext: &str, found: &mut Vec<PathBuf>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            files_under(&p, ext, found);
        } else if p.extension().is_some_and(|x| x == ext) {
            found.push(p);
        }
    }
}

#[test]
fn missing_dataset_fails_with_schema_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"dataset": "/nonexistent/data.csv"}"#).unwrap();
    let out = tmp.path().join("out");
    let r = qxai(&cfg, &out, &["train"]);
    assert!(!r.status.success());
    let err = text(&r.stderr);
    assert!(err.contains("schema error"), "{err}");
    assert!(err.contains("[data]"), "{err}");
    assert!(out.join(FAILED_MARKER).exists());
}

#[test]
fn toy_train_prints_accuracy_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let r = qxai(&cfg, &out, &["train"]);
    assert!(r.status.success(), "{}", text(&r.stderr));
    let stdout = text(&r.stdout);
    for model in ["qsvc", "vqc"] {
        let line = stdout.lines().find(|l| l.starts_with(model)).expect(model);
        let acc: f64 = line.split("accuracy ").nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
        assert!(acc >= 0.9, "{line}");
    }
    let first: Vec<Vec<u8>> = ["qsvc.json", "vqc.json"].iter().map(|f| fs::read(out.join("checkpoints").join(f)).unwrap()).collect();
    assert!(qxai(&cfg, &out, &["train"]).status.success());
    let second: Vec<Vec<u8>> = ["qsvc.json", "vqc.json"].iter().map(|f| fs::read(out.join("checkpoints").join(f)).unwrap()).collect();
    assert_eq!(first, second);
    assert!(out.join("split.json").exists() && out.join("vqc_trace.csv").exists());
    assert!(!out.join(FAILED_MARKER).exists());
}

#[test]
fn explain_before_train_names_the_train_command() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let r = qxai(&cfg, &out, &["explain", "--target", "ansatz"]);
    assert!(!r.status.success());
    let err = text(&r.stderr);
    assert!(err.contains("[state]") && err.contains("qxai train"), "{err}");
}

#[test]
fn explain_without_vqc_checkpoint_is_a_state_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), r#", "models": ["qsvc"]"#);
    let out = tmp.path().join("out");
    assert!(qxai(&cfg, &out, &["train"]).status.success());
    let r = qxai(&cfg, &out, &["explain", "--target", "ansatz"]);
    assert!(!r.status.success());
    assert!(text(&r.stderr).contains("vqc.json"));
    assert!(qxai(&cfg, &out, &["explain", "--target", "kernel"]).status.success());
}

#[test]
fn changed_config_invalidates_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = toy_config(tmp.path(), "");
    assert!(qxai(&cfg, &out, &["train"]).status.success());
    let r = Command::new(env!("CARGO_BIN_EXE_qxai"))
        .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--seed", "9", "spectra"])
        .output()
        .unwrap();
    assert!(!r.status.success());
    assert!(text(&r.stderr).contains("[state]"));
}

#[test]
fn bad_arguments_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), "");
    let out = tmp.path().join("out");
    assert!(!qxai(&cfg, &out, &["explain", "--target", "everything"]).status.success());
    assert!(qxai(&cfg, &out, &["train"]).status.success());
    assert!(!qxai(&cfg, &out, &["explain", "--target", "decision", "--mode", "class"]).status.success());
    assert!(!qxai(&cfg, &out, &["explain", "--target", "kernel", "--sample", "999"]).status.success());
    assert!(out.join(FAILED_MARKER).exists());
    assert!(qxai(&cfg, &out, &["explain", "--target", "kernel"]).status.success());
    assert!(!out.join(FAILED_MARKER).exists());
}

#[test]
fn report_bundle() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy_config(tmp.path(), "");
    let out = tmp.path().join("out");
    let r = qxai(&cfg, &out, &["report"]);
    assert!(r.status.success(), "{}", text(&r.stderr));

    // class mode: one waterfall pair per class
    for k in [0, 1] {
        for ext in ["csv", "svg"] {
            assert!(out.join(format!("explain/feature_map/feature_map_class{k}_sample0.{ext}")).exists());
        }
    }
    assert!(out.join("explain/ansatz/params.svg").exists() && out.join("explain/ansatz/layers.csv").exists());
    let e: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("explain/decision/surrogate/explanation.json")).unwrap()).unwrap();
    assert!(e["surrogate"]["r2"].is_number());

    // a one-qubit kernel has rank at most three
    let var = fs::read_to_string(out.join("spectra/variance.csv")).unwrap();
    let third: f64 = var.lines().nth(3).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    assert!(third > 1.0 - 1e-9, "{var}");
    for set in ["1_2_3", "1_2_4"] {
        assert!(out.join(format!("spectra/projection_{set}.csv")).exists());
    }

    let mut svgs = Vec::new();
    files_under(&out, "svg", &mut svgs);
    assert!(svgs.len() > 10);
    for p in &svgs {
        let s = fs::read_to_string(p).unwrap();
        assert!(s.len() < 2 * 1024 * 1024);
        let doc = roxmltree::Document::parse(&s).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(doc.root_element().tag_name().name(), "svg");
        assert!(p.with_extension("csv").exists(), "{} lacks its CSV", p.display());
    }

    let m: Manifest = serde_json::from_str(&fs::read_to_string(out.join(MANIFEST)).unwrap()).unwrap();
    let mut all = Vec::new();
    for ext in ["csv", "svg", "json"] {
        files_under(&out, ext, &mut all);
    }
    assert_eq!(m.files.len(), all.len() - 1);
    assert!(m.highlights.contains_key("components_for_threshold"));
    assert_eq!(m.config.label_column, "label");
}
