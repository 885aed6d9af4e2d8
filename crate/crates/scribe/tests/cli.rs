//! The `scribe` binary driven stage by stage.

use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"
seed = 3

[synth]
n_repetitions = 3

[cebra]
batch_size = 32
steps = 4

[train]
max_epochs = 2

[[models]]
kind = "baseline_cnn"

[[models]]
kind = "fusion"
d_embed = 2

[projections]
tsne_perplexity = 5.0
tsne_iters = 50
embedding_stride = 50
"#;

fn scribe(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scribe"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

#[test]
fn stages_run_in_sequence() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let out = dir.path().join("out");

    let early = scribe(&["run"], &cfg, &out);
    assert!(!early.status.success());
    assert!(String::from_utf8_lossy(&early.stderr).contains("train-embed") || String::from_utf8_lossy(&early.stderr).contains("preprocess"));

    for stage in ["generate", "preprocess", "train-embed", "run"] {
        let o = scribe(&[stage], &cfg, &out);
        assert!(o.status.success(), "{stage}: {}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "session/eeg.stk",
        "session/truth/mixing.stk",
        "folds/manifest.json",
        "folds/fold4_labels.stk",
        "encoders/d2/fold0/manifest.json",
        "encoders/d2/fold3/test_embedding.stk",
        "models/baseline_cnn/fold2/manifest.json",
        "models/fusion_d2/fold4/manifest.json",
        "results/per_fold.csv",
        "results/aggregate.csv",
        "results/projections/pca_eeg.csv",
        "results/projections/tsne_embedding_d2.csv",
        "results/manifest.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let agg = std::fs::read_to_string(out.join("results/aggregate.csv")).unwrap();
    let rows: Vec<&str> = agg.lines().skip(1).collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("baseline_cnn,,"));
    assert!(rows[1].starts_with("fusion,2,"));
}

#[test]
fn bad_config_exits_nonzero_with_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[[models]]\nkind = \"fusion\"\n").unwrap();
    let o = scribe(&["generate"], &cfg, &dir.path().join("out"));
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("[config]"));
}

#[test]
fn files_source_cannot_be_generated() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("files.toml");
    std::fs::write(&cfg, "[data]\nsource = \"files\"\neeg = \"a.stk\"\nevents = \"b.csv\"\nkinematics = \"c.csv\"\n").unwrap();
    let o = scribe(&["generate"], &cfg, &dir.path().join("out"));
    assert!(!o.status.success());
}
