mod common;

use std::path::Path;
use std::process::Command;

use attrcons::pipeline::{run_pipeline_in, Manifest, PipelineConfig};
use attrcons::Error;

use common::*;

fn small_config(out: &Path) -> PipelineConfig {
    let text = format!(
        r#"
seed = 3
out = "{out}"
[base]
checkpoint = "{ckpt}"
[corpus]
domains = ["alpha", "beta"]
n = 60
[bank]
k = 3
attribution = {{ method = "lime", n_samples = 40 }}
limit = 8
[train.dpo]
beta = 0.5
epochs = 2
batch_size = 4
grad_accum = 1
adapter = {{ rank = 2, alpha = 4.0 }}
seed = 1
optimizer = {{ lr = 1e-3 }}
[eval]
modes = ["BB", "TT"]
limit = 4
[agreement]
methods = [{{ method = "lig", steps = 8 }}]
limit = 3
"#,
        out = out.display(),
        ckpt = fixture("toy_base.ckpt").display()
    );
    PipelineConfig::from_toml(&text).unwrap()
}

#[test]
fn runs_resumes_and_reruns_only_what_changed() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("run");
    let cfg = small_config(&root);

    let first = run_pipeline_in(&cfg, &root).unwrap();
    assert!(first.skipped.is_empty());
    let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(root.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(Some(&manifest), first.manifest.as_ref());
    let artifacts: usize = manifest.stages.iter().map(|s| s.artifacts.len()).sum();
    assert!(artifacts >= 4);
    for s in &manifest.stages {
        for a in &s.artifacts {
            assert_eq!(attrcons::pipeline::file_digest(&root.join(&a.path)).unwrap(), a.sha256);
        }
    }
    for stage in ["base", "corpus-alpha", "bank-beta", "bank-alpha-lig", "train-dpo-alpha", "train-sft-beta", "eval-dpo-alpha-on-beta", "report"] {
        assert!(first.ran.iter().any(|s| s == stage), "missing stage {stage}: {:?}", first.ran);
    }
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(root.join("report/report.json")).unwrap()).unwrap();
    assert!(report["cross"].as_array().unwrap().len() >= 4);
    assert_eq!(report["agreement"].as_array().unwrap().len(), 4);

    let second = run_pipeline_in(&cfg, &root).unwrap();
    assert!(second.ran.is_empty(), "{:?}", second.ran);
    assert_eq!(second.manifest, first.manifest);

    // a damaged artifact is rebuilt
    std::fs::write(root.join("eval-base-on-alpha/bb.json"), "{}").unwrap();
    let third = run_pipeline_in(&cfg, &root).unwrap();
    assert_eq!(third.ran, vec!["eval-base-on-alpha".to_string()]);
    assert_eq!(third.manifest, first.manifest);

    // an eval-only change leaves upstream stages alone
    let mut changed = cfg.clone();
    changed.eval.limit = Some(3);
    let fourth = run_pipeline_in(&changed, &root).unwrap();
    assert!(fourth.ran.iter().all(|s| s.starts_with("eval-") || s == "report"), "{:?}", fourth.ran);
    assert!(fourth.skipped.iter().any(|s| s == "train-dpo-alpha"));
}

#[test]
fn config_digest_ignores_output_root() {
    let a = small_config(Path::new("/tmp/a"));
    let mut b = small_config(Path::new("/tmp/b"));
    assert_eq!(a.digest(), b.digest());
    b.seed += 1;
    assert_ne!(a.digest(), b.digest());
}

#[test]
fn validation_names_the_field() {
    let bad = format!(
        "out = \"x\"\n[base]\ncheckpoint = \"{}\"\n[corpus]\nsplit = [0.6, 0.2, 0.1]\n",
        fixture("toy_base.ckpt").display()
    );
    match PipelineConfig::from_toml(&bad) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "split"),
        other => panic!("{other:?}"),
    }
    let bad = "out = \"x\"\n[base]\ncheckpoint = \"a\"\n[corpus]\ndomains = [\"gamma\"]\n";
    match PipelineConfig::from_toml(bad) {
        Err(Error::Config { field, .. }) => assert_eq!(field, "corpus.domains"),
        other => panic!("{other:?}"),
    }
    let typo = "out = \"x\"\n[base]\ncheckpoint = \"a\"\n[eval]\nmodez = [\"BB\"]\n";
    assert!(matches!(PipelineConfig::from_toml(typo), Err(Error::Config { .. })));
}

#[test]
fn shipped_configs_parse() {
    for name in ["toy.toml", "acceptance.toml", "cross-domain.toml"] {
        PipelineConfig::load(&config_file(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn cli_exit_status_and_output_root_override() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("p.toml");
    let bad = "out = \"x\"\n[base]\ncheckpoint = \"a\"\n[corpus]\nsplit = [0.5, 0.2, 0.1]\n";
    std::fs::write(&cfg_path, bad).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_attrcons"))
        .args(["pipeline", "run", "--config"])
        .arg(&cfg_path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("split"));

    let corpus = dir.path().join("c.jsonl");
    let out = Command::new(env!("CARGO_BIN_EXE_attrcons"))
        .args(["corpus", "gen", "--n", "10"])
        .env("ATTRCONS_OUT", &corpus)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(std::fs::read_to_string(&corpus).unwrap().lines().count(), 11);
}
