use std::path::Path;
use std::process::{Command, Output};

fn tcnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcnn"))
        .args(args)
        .env_remove("TCNN_SEED")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn long_flags(help: &str) -> Vec<String> {
    help.split_whitespace()
        .filter(|w| w.starts_with("--"))
        .map(|w| w.trim_end_matches(|c: char| !c.is_ascii_alphanumeric()).to_string())
        .collect()
}

#[test]
fn help_lists_every_visible_flag() {
    let expected: &[(&str, &[&str])] = &[
        (
            "train",
            &[
                "--config", "--variant", "--model-seed", "--optimizer", "--lr", "--momentum", "--weight-decay",
                "--schedule", "--gamma", "--milestones", "--factor", "--batch-size", "--epochs", "--seed", "--data",
                "--train-images", "--train-labels", "--test-images", "--test-labels", "--train-csv", "--test-csv",
                "--synthetic", "--samples", "--classes", "--separation", "--train-fraction", "--limit-train",
                "--limit-test", "--data-seed", "--output-dir",
            ],
        ),
        ("eval", &["--checkpoint", "--config", "--data", "--test-images", "--test-csv", "--output"]),
        (
            "count-ops",
            &["--variant", "--input-shape", "--preset", "--classes", "--batch", "--theta", "--exact-adds", "--output"],
        ),
        ("gradcheck", &["--seed", "--cases", "--max-coords", "--output"]),
    ];
    for (cmd, flags) in expected {
        let out = tcnn(&[cmd, "--help"]);
        assert!(out.status.success(), "{cmd} --help");
        let listed = long_flags(&stdout(&out));
        for f in *flags {
            assert!(listed.iter().any(|l| l == f), "{cmd} --help lacks {f}");
        }
        assert!(!listed.iter().any(|l| l.contains("fault")), "{cmd} shows a hidden flag");
    }
}

#[test]
fn roster_has_seventeen_variants() {
    let out = tcnn(&["list-variants"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 17);
    for key in ["LeNet", "F1", "C_ab", "PM_ab", "CPM"] {
        assert!(text.lines().any(|l| l.split_whitespace().next() == Some(key)), "missing {key}");
    }
}

fn quickstart(dir: &Path) -> Output {
    tcnn(&[
        "train",
        "--variant",
        "C_ab",
        "--synthetic",
        "blobs-2d",
        "--samples",
        "200",
        "--epochs",
        "2",
        "--batch-size",
        "32",
        "--output-dir",
        dir.to_str().unwrap(),
    ])
}

#[test]
fn quickstart_is_reproducible_and_eval_agrees() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out = quickstart(a.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(quickstart(b.path()).status.success());
    for f in ["metrics.json", "train_log.csv", "checkpoint.tcnn"] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.path().join(f)).unwrap(), "{f} differs between runs");
    }
    let log = std::fs::read_to_string(a.path().join("train_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(a.path().join("metrics.json")).unwrap()).unwrap();
    for key in ["accuracy", "auc", "f1", "precision", "recall", "confusion"] {
        assert!(metrics.get(key).is_some(), "metrics.json lacks {key}");
    }

    let run = a.path().join("run.json");
    let spec: serde_json::Value = serde_json::from_slice(&std::fs::read(&run).unwrap()).unwrap();
    assert_eq!(spec["train"]["lr"], 0.001);
    assert_eq!(spec["train"]["batch_size"], 32);
    let ck = a.path().join("checkpoint.tcnn");
    let out = tcnn(&["eval", "--checkpoint", ck.to_str().unwrap(), "--config", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let evaluated: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(evaluated, metrics);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.json");
    std::fs::write(
        &cfg,
        r#"{"model": {"variant": "F1"}, "train": {"epochs": 5, "lr": 0.0},
            "data": {"kind": "synthetic", "synthetic": "blobs-1d", "samples": 60}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = tcnn(&["train", "--config", cfg.to_str().unwrap(), "--epochs", "1", "--output-dir", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let spec: serde_json::Value = serde_json::from_slice(&std::fs::read(out_dir.join("run.json")).unwrap()).unwrap();
    assert_eq!(spec["train"]["epochs"], 1);
    assert_eq!(spec["train"]["lr"], 0.0);
    assert_eq!(spec["model"]["variant"], "F1");
    assert_eq!(spec["model"]["input_shape"], serde_json::json!([1, 128]));
}

#[test]
fn exit_codes() {
    let missing = tcnn(&["eval", "--checkpoint", "/nonexistent/checkpoint.tcnn"]);
    assert_eq!(missing.status.code(), Some(3));

    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"train": {"epoch": 3}}"#).unwrap();
    assert_eq!(tcnn(&["train", "--config", bad.to_str().unwrap()]).status.code(), Some(2));
    assert_eq!(tcnn(&["train", "--synthetic", "blobs-2d"]).status.code(), Some(2));
    assert_eq!(tcnn(&["count-ops", "--variant", "F1", "--preset", "imagenet"]).status.code(), Some(2));

    let images = dir.path().join("img.idx");
    std::fs::write(&images, b"garbage").unwrap();
    let out = tcnn(&[
        "train",
        "--variant",
        "LeNet",
        "--train-images",
        images.to_str().unwrap(),
        "--train-labels",
        images.to_str().unwrap(),
        "--output-dir",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

fn total_row(csv: &str) -> Vec<f64> {
    let last = csv.lines().last().unwrap();
    assert!(last.starts_with("total,"));
    last.split(',').skip(2).map(|v| v.parse().unwrap()).collect()
}

#[test]
fn count_ops_tables() {
    let lenet = stdout(&tcnn(&["count-ops", "--variant", "LeNet", "--preset", "mnist"]));
    assert!(lenet.starts_with("layer,kind,mults,adds,comparisons,omega_u\n"));
    assert!(total_row(&lenet)[0] > 0.0);

    let f1 = stdout(&tcnn(&["count-ops", "--variant", "F1", "--preset", "mnist"]));
    for line in f1.lines().filter(|l| l.contains("PlusSumConv")) {
        assert_eq!(line.split(',').nth(2), Some("0"), "{line}");
    }

    let t10 = total_row(&stdout(&tcnn(&["count-ops", "--variant", "C_ab", "--preset", "mnist"])));
    let t1 = total_row(&stdout(&tcnn(&["count-ops", "--variant", "C_ab", "--preset", "mnist", "--theta", "1"])));
    assert_eq!(t10[..3], t1[..3]);
    assert_eq!(t10[3] - t1[3], 9.0 * t10[0]);

    let exact = total_row(&stdout(&tcnn(&["count-ops", "--variant", "LeNet", "--preset", "mnist", "--exact-adds"])));
    assert!(exact[1] > total_row(&lenet)[1]);

    let batch = total_row(&stdout(&tcnn(&["count-ops", "--variant", "LeNet", "--input-shape", "1,28,28", "--batch", "4"])));
    assert_eq!(batch[0], 4.0 * total_row(&lenet)[0]);
}

#[test]
fn gradcheck_passes_and_catches_a_fault() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("grad.csv");
    let ok = tcnn(&["gradcheck", "--cases", "1", "--max-coords", "8", "--output", report.to_str().unwrap()]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let csv = std::fs::read_to_string(&report).unwrap();
    assert!(csv.starts_with("suite,target,checked,passed,skipped,pass_rate,worst_rel_err\n"));
    assert!(csv.contains("MinPlusSumConv-3d"));

    let bad = tcnn(&["gradcheck", "--cases", "1", "--max-coords", "8", "--inject-sign-fault"]);
    assert_eq!(bad.status.code(), Some(4));
}
