mod common;

use common::*;
use tempfile::tempdir;

#[test]
fn usage_errors_exit_two() {
    let dir = tempdir().unwrap();
    assert_eq!(cgssl(&[], None).status.code(), Some(2));
    assert_eq!(cgssl(&["split"], None).status.code(), Some(2), "no run dir anywhere");
    let o = cgssl(&["split", "--set", "mixmatch.no_such_key=1"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"));
    let o = cgssl(&["split", "--set", "mixmatch.beta"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("config.json").exists());
}

#[test]
fn filter_without_baseline_names_the_checkpoint() {
    let dir = tempdir().unwrap();
    assert_ok(&cgssl(&with_tiny(&["split"]), Some(dir.path())));
    let o = cgssl(&["filter"], Some(dir.path()));
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("filter") && err.contains("baseline"), "{err}");
}

#[test]
fn overrides_persist_verbatim_and_env_run_dir() {
    let dir = tempdir().unwrap();
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_cgssl"))
        .args(with_tiny(&["split", "--set", "mixmatch.beta=7.5", "--seed", "11"]))
        .env("CGSSL_RUN_DIR", dir.path())
        .output()
        .unwrap();
    assert_ok(&o);
    let cfg = json(dir.path().join("config.json"));
    assert_eq!(cfg["mixmatch"]["beta"], serde_json::json!(7.5));
    assert_eq!(cfg["seed"], serde_json::json!(11));
    assert_eq!(cfg["dataset"]["per_class"], serde_json::json!(12));
    assert_eq!(cfg["schema_version"], serde_json::json!(1));
    for split in ["train", "val", "ref", "test"] {
        assert!(dir.path().join("splits").join(split).join("manifest.json").exists());
    }
}

fn run_stages(dir: &std::path::Path) {
    assert_ok(&cgssl(&with_tiny(&["split"]), Some(dir)));
    for stage in ["train-supervised", "filter", "train-vae", "generate"] {
        assert_ok(&cgssl(&[stage], Some(dir)));
    }
    let trace = dir.join("trace.json");
    assert_ok(&cgssl(&["train-mixmatch", "--trace", trace.to_str().unwrap()], Some(dir)));
}

#[test]
fn stage_by_stage_layout_and_determinism() {
    let a = tempdir().unwrap();
    let b = tempdir().unwrap();
    run_stages(a.path());
    run_stages(b.path());
    let d = a.path();

    for f in [
        "config.json",
        "checkpoints/baseline.bin",
        "checkpoints/baseline.json",
        "checkpoints/mixmatch.bin",
        "filter_report.json",
        "filter_histogram.png",
        "augmented/rec/manifest.json",
        "augmented/synth/manifest.json",
        "history/supervised.jsonl",
        "history/vae.jsonl",
        "history/mixmatch.jsonl",
    ] {
        assert!(d.join(f).exists(), "missing {f}");
    }
    assert_eq!(json(d.join("checkpoints/baseline.json"))["schema_version"], serde_json::json!(1));
    let filter = json(d.join("filter_report.json"));
    assert!(filter["gamma"].is_number() && filter["schema_version"].is_number());

    let synth = json(d.join("augmented/synth/manifest.json"));
    let entries = synth["entries"].as_array().unwrap();
    assert_eq!(entries.len(), 10);
    for e in entries {
        assert_eq!(e["source"], "synth");
        assert!(e["seed_id"].is_null() && e["label"].is_null() && e["id"].is_u64());
    }
    let rec = json(d.join("augmented/rec/manifest.json"));
    for e in rec["entries"].as_array().unwrap() {
        assert_eq!(e["source"], "rec");
        assert!(e["seed_id"].is_u64() && e["label"].is_u64());
    }

    let trace = json(d.join("trace.json"));
    for key in ["labeled_ids", "guessed_labels", "lambdas_x", "mixed_targets_x"] {
        assert!(trace.get(key).is_some(), "trace lacks {key}");
    }

    for f in [
        "history/supervised.jsonl",
        "history/vae.jsonl",
        "history/mixmatch.jsonl",
        "augmented/rec/manifest.json",
        "augmented/synth/manifest.json",
        "filter_report.json",
        "trace.json",
    ] {
        assert_eq!(read(d.join(f)), read(b.path().join(f)), "{f} differs between runs");
    }

    assert_ok(&cgssl(&["grid", "--count", "4"], Some(d)));
    assert!(d.join("grids/synthetic.png").exists());
}

#[test]
fn run_then_read_only_report() {
    let dir = tempdir().unwrap();
    let d = dir.path();
    let o = cgssl(&with_tiny(&["run"]), Some(d));
    assert_ok(&o);
    assert!(d.join("iter_2/filter_report.json").exists());

    let report = json(d.join("report.json"));
    assert_eq!(report["schema_version"], serde_json::json!(1));
    let run = &report["runs"][0];
    assert!(run["baseline"]["test_accuracy"].is_number());
    assert_eq!(run["iterations"].as_array().unwrap().len(), 2);

    let before = tree_digest(d);
    let table = cgssl(&["report"], Some(d));
    assert_ok(&table);
    let as_json = cgssl(&["report", "--json"], Some(d));
    assert_ok(&as_json);
    assert_eq!(before, tree_digest(d), "report modified the run directory");

    let printed: serde_json::Value = serde_json::from_slice(&as_json.stdout).unwrap();
    assert_eq!(printed, report);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("supervised") && text.contains("mixmatch (iter. 2)"), "{text}");
}
