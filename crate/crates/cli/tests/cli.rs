//! End-to-end checks of the command-line surface: flags, file formats, exit
//! codes, determinism.

use std::path::Path;
use std::process::{Command, Output};

fn fetseg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fetseg"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("read {}: {e}", path.display()))
}

const TINY_MODEL: &str = r#"{"stage_dims": [4, 8, 12, 16], "epochs": 1, "batch_size": 4}"#;

#[test]
fn gen_synth_is_deterministic_and_validated() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let r = fetseg(
            &[
                "gen-synth",
                "--n",
                "3",
                "--size",
                "64",
                "--classes",
                "4",
                "--seed",
                "7",
                "--out",
                out.to_str().unwrap(),
            ],
            dir.path(),
        );
        assert_ok(&r);
    }
    assert_eq!(read(&a.join("index.json")), read(&b.join("index.json")));
    assert_eq!(read(&a.join("img_00000.ften")), read(&b.join("img_00000.ften")));
    assert_eq!(read(&a.join("lab_00002.ften")), read(&b.join("lab_00002.ften")));
    assert!(a.join("effective_config.json").exists());

    // Invalid size must exit nonzero.
    let bad = fetseg(
        &["gen-synth", "--n", "1", "--size", "60", "--out", "bad"],
        dir.path(),
    );
    assert!(!bad.status.success());
}

#[test]
fn train_eval_resume_cycle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfgp = dir.path().join("tiny.json");
    std::fs::write(&cfgp, TINY_MODEL).unwrap();
    assert_ok(&fetseg(
        &[
            "gen-synth",
            "--n",
            "8",
            "--seed",
            "3",
            "--out",
            data.to_str().unwrap(),
        ],
        dir.path(),
    ));

    // Uninterrupted two-epoch run in f64.
    let full = dir.path().join("full");
    assert_ok(&fetseg(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--config",
            cfgp.to_str().unwrap(),
            "--epochs",
            "2",
            "--precision",
            "f64",
            "--seed",
            "5",
            "--checkpoint-every",
            "1",
            "--out",
            full.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let metrics_full = std::fs::read_to_string(full.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics_full.lines().count(), 2);
    for line in metrics_full.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for key in ["epoch", "loss", "dice", "ce", "val_dsc"] {
            assert!(v.get(key).is_some(), "missing {key} in {line}");
        }
    }
    assert!(full.join("checkpoint/manifest.json").exists());
    assert!(full.join("checkpoint/config.json").exists());
    assert!(full.join("ckpt_0001/state.json").exists());

    // One epoch, then resume for the second; the epoch-1 record must match
    // the uninterrupted run bit for bit.
    let part = dir.path().join("part");
    assert_ok(&fetseg(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--config",
            cfgp.to_str().unwrap(),
            "--epochs",
            "1",
            "--precision",
            "f64",
            "--seed",
            "5",
            "--out",
            part.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let resumed = dir.path().join("resumed");
    assert_ok(&fetseg(
        &[
            "train",
            "--data",
            data.to_str().unwrap(),
            "--config",
            cfgp.to_str().unwrap(),
            "--epochs",
            "2",
            "--precision",
            "f64",
            "--seed",
            "5",
            "--resume",
            part.join("checkpoint").to_str().unwrap(),
            "--out",
            resumed.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let metrics_resumed = std::fs::read_to_string(resumed.join("metrics.jsonl")).unwrap();
    assert_eq!(
        metrics_full.lines().nth(1).unwrap(),
        metrics_resumed.lines().next().unwrap(),
        "resumed epoch-1 record differs from the uninterrupted run"
    );

    // Evaluate the final checkpoint; repeated eval is byte-identical.
    let eval1 = dir.path().join("eval1");
    assert_ok(&fetseg(
        &[
            "eval",
            "--checkpoint",
            full.join("checkpoint").to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--precision",
            "f64",
            "--out",
            eval1.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let eval2 = dir.path().join("eval2");
    assert_ok(&fetseg(
        &[
            "eval",
            "--checkpoint",
            full.join("checkpoint").to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--precision",
            "f64",
            "--out",
            eval2.to_str().unwrap(),
        ],
        dir.path(),
    ));
    assert_eq!(read(&eval1.join("eval.json")), read(&eval2.join("eval.json")));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(eval1.join("eval.json")).unwrap()).unwrap();
    assert!(report["mean_dsc"].as_f64().unwrap() >= 0.0);

    // Precision mismatch against the checkpoint must fail.
    let bad = fetseg(
        &[
            "eval",
            "--checkpoint",
            full.join("checkpoint").to_str().unwrap(),
            "--data",
            data.to_str().unwrap(),
            "--precision",
            "f32",
            "--out",
            dir.path().join("evalbad").to_str().unwrap(),
        ],
        dir.path(),
    );
    assert!(!bad.status.success());
}

#[test]
fn bench_attn_emits_the_declared_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench");
    assert_ok(&fetseg(
        &[
            "bench-attn",
            "--n-list",
            "8,16",
            "--dim",
            "8",
            "--trials",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let csv = std::fs::read_to_string(out.join("bench_attn.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "impl,n,D,median_seconds");
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 4, "row {line}");
        assert!(cols[0] == "standard" || cols[0] == "efficient");
        cols[1].parse::<usize>().unwrap();
        cols[2].parse::<usize>().unwrap();
        cols[3].parse::<f64>().unwrap();
    }
    assert!(out.join("bench_attn_slopes.json").exists());

    // Unordered n-list is a contract violation.
    let bad = fetseg(
        &["bench-attn", "--n-list", "16,8", "--out", "x"],
        dir.path(),
    );
    assert!(!bad.status.success());
}

#[test]
fn spectral_emits_csv_and_spectra() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("spec");
    assert_ok(&fetseg(
        &[
            "spectral",
            "--depth",
            "1",
            "--seeds",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let csv = std::fs::read_to_string(out.join("spectral.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "kind,depth,input_id,seed,hf_ratio");
    let mut rows = 0;
    for line in lines {
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(cols.len(), 5);
        assert!(cols[0] == "standard" || cols[0] == "fet");
        let ratio: f64 = cols[4].parse().unwrap();
        assert!((0.0..=1.0).contains(&ratio));
        rows += 1;
    }
    // 2 kinds x 16 inputs x depths {0,1}.
    assert_eq!(rows, 2 * 16 * 2);
    let spectra: Vec<_> = std::fs::read_dir(out.join("spectra")).unwrap().collect();
    assert!(!spectra.is_empty());
}

#[test]
fn gradcheck_subcommand_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    let r = fetseg(
        &[
            "gradcheck",
            "--instances",
            "1",
            "--seed",
            "2",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    );
    assert_ok(&r);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("gradcheck.json")).unwrap())
            .unwrap();
    assert_eq!(report["passed"], serde_json::Value::Bool(true));
}

#[test]
fn ablate_msce_emits_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    assert_ok(&fetseg(
        &["gen-synth", "--n", "6", "--seed", "2", "--out", data.to_str().unwrap()],
        dir.path(),
    ));
    let cfgp = dir.path().join("tiny.json");
    std::fs::write(&cfgp, TINY_MODEL).unwrap();
    let out = dir.path().join("abl");
    assert_ok(&fetseg(
        &[
            "ablate-msce",
            "--data",
            data.to_str().unwrap(),
            "--config",
            cfgp.to_str().unwrap(),
            "--seeds",
            "1",
            "--epochs",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
        dir.path(),
    ));
    let rows: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("ablation.json")).unwrap())
            .unwrap();
    let arr = rows.as_array().unwrap();
    assert_eq!(arr.len(), 2);
    let variants: Vec<&str> = arr.iter().map(|r| r["variant"].as_str().unwrap()).collect();
    assert!(variants.contains(&"with-msce"));
    assert!(variants.contains(&"without-msce"));
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(csv.starts_with("variant,seed,best_val_dsc,final_val_dsc"));
}
