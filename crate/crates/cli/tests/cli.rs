use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cotforge_cli::config::DESK_CONFIG;

/// The desk config with `overrides` applied (`None` deletes the key) and
/// shortened training so these tests stay quick.
fn config_text(overrides: &[(&str, Option<&str>)]) -> String {
    let mut quick = vec![
        ("corpus.sft_records", Some("16")),
        ("corpus.rft_records", Some("8")),
        ("corpus.eval_records", Some("8")),
        ("sft.stage1.epochs", Some("5")),
        ("sft.stage2.epochs", Some("5")),
        ("grpo.steps", Some("3")),
    ];
    quick.extend_from_slice(overrides);
    let mut out = String::new();
    for line in DESK_CONFIG.lines() {
        let key = line.split('=').next().unwrap().trim();
        match quick.iter().rev().find(|(k, _)| *k == key) {
            Some((k, Some(v))) => out.push_str(&format!("{k} = {v}\n")),
            Some((_, None)) => {}
            None => {
                out.push_str(line);
                out.push('\n');
            }
        }
    }
    for (k, v) in overrides {
        if let Some(v) = v {
            if !DESK_CONFIG.lines().any(|l| l.split('=').next().unwrap().trim() == *k) {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
    }
    out
}

fn write_config(dir: &Path, overrides: &[(&str, Option<&str>)]) -> PathBuf {
    let p = dir.join("exp.conf");
    std::fs::write(&p, config_text(overrides)).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cotforge"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn missing_group_size_is_a_config_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[("grpo.G", None)]);
    let out = run(&["pipeline", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grpo.G"));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn unknown_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[("grpo.group", Some("8"))]);
    let out = run(&["gen-corpus", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grpo.group"));
}

#[test]
fn missing_dataset_is_a_stage_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[]);
    let o = tmp.path().join("o");
    let out = run(&["sft", "--config", s(&cfg), "--out", s(&o), "--data", s(&tmp.path().join("nope.jsonl"))]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(manifest(&o)["failed_stage"], "sft");
}

#[test]
fn dead_teacher_is_a_backend_failure_and_keeps_earlier_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("dead.jsonl"), "{\"match\": \"\", \"fail\": true}\n").unwrap();
    let cfg = write_config(
        tmp.path(),
        &[("backend.teacher", Some("scripted")), ("backend.teacher_script", Some("dead.jsonl"))],
    );
    let o = tmp.path().join("o");
    let out = run(&["pipeline", "--config", s(&cfg), "--out", s(&o), "--workers", "2"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&o);
    assert_eq!(m["failed_stage"], "collect-cot");
    assert!(o.join("datasets/sft.jsonl").exists());
    assert!(o.join("checkpoints/stage1.json").exists());
    assert!(m["artifacts"]["checkpoints/stage1.json"].is_string());
    assert!(!o.join("checkpoints/stage2.json").exists());
}

#[test]
fn standalone_stages_chain_together() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[]);
    let c = s(&cfg);
    let d = |name: &str| tmp.path().join(name);
    let ok = |out: Output| assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    ok(run(&["gen-corpus", "--config", c, "--out", s(&d("corpus"))]));
    let sft_data = d("corpus").join("datasets/sft.jsonl");
    ok(run(&["sft", "--config", c, "--out", s(&d("s1")), "--data", s(&sft_data)]));
    ok(run(&["collect-cot", "--config", c, "--out", s(&d("col")), "--data", s(&sft_data), "--workers", "3"]));
    let collected = d("col").join("datasets/cot_collected.jsonl");
    ok(run(&["filter-cot", "--config", c, "--out", s(&d("fil")), "--data", s(&collected)]));
    let stage1 = d("s1").join("checkpoints/stage1.json");
    ok(run(&[
        "sft-cot",
        "--config",
        c,
        "--out",
        s(&d("s2")),
        "--data",
        s(&d("fil").join("datasets/cot.jsonl")),
        "--init",
        s(&stage1),
    ]));
    let stage2 = d("s2").join("checkpoints/stage2.json");
    ok(run(&[
        "rft",
        "--config",
        c,
        "--out",
        s(&d("s3")),
        "--data",
        s(&d("corpus").join("datasets/rft.jsonl")),
        "--init",
        s(&stage2),
    ]));
    let curve = std::fs::read_to_string(d("s3").join("curves/rft_reward.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);
    assert!(curve.starts_with(cotforge::grpo::REWARD_CSV_HEADER));

    let csv = d("eval.csv");
    ok(run(&[
        "evaluate",
        "--config",
        c,
        "--checkpoint",
        s(&d("s3").join("checkpoints/stage3.json")),
        "--data",
        s(&d("corpus").join("datasets/cross_eval.jsonl")),
        "--out",
        s(&csv),
        "--name",
        "stage3",
    ]));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with(cotforge::metrics::REPORT_CSV_HEADER));
    assert!(text.lines().nth(1).unwrap().starts_with("stage3,"));
}

#[test]
fn evaluating_a_foreign_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let cross_cfg = write_config(tmp.path(), &[("corpus.grammar", Some("cross")), ("corpus.cross_grammar", Some("default"))]);
    let o = tmp.path().join("cross");
    let out = run(&["gen-corpus", "--config", s(&cross_cfg), "--out", s(&o)]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&[
        "sft",
        "--config",
        s(&cross_cfg),
        "--out",
        s(&o),
        "--data",
        s(&o.join("datasets/sft.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(0));

    let cfg = tmp.path().join("default.conf");
    std::fs::write(&cfg, config_text(&[])).unwrap();
    let out = run(&[
        "evaluate",
        "--config",
        s(&cfg),
        "--checkpoint",
        s(&o.join("checkpoints/stage1.json")),
        "--data",
        s(&o.join("datasets/cross_eval.jsonl")),
        "--out",
        s(&tmp.path().join("e.csv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("grammar"));
}

#[test]
fn seed_flag_overrides_every_stage_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &[]);
    let o = tmp.path().join("o");
    let out = run(&["gen-corpus", "--config", s(&cfg), "--out", s(&o), "--seed", "42"]);
    assert_eq!(out.status.code(), Some(0));
    let m = manifest(&o);
    for k in ["corpus", "sft", "cot", "grpo"] {
        assert_eq!(m["seeds"][k], 42);
    }
    let plain = tmp.path().join("p");
    run(&["gen-corpus", "--config", s(&cfg), "--out", s(&plain)]);
    assert_ne!(manifest(&plain)["config_hash"], m["config_hash"]);
}

#[test]
fn metric_subcommands() {
    let tmp = tempfile::tempdir().unwrap();
    let hyp = tmp.path().join("hyp.jsonl");
    let reference = tmp.path().join("ref.jsonl");
    std::fs::write(&hyp, "\"the cat sat\"\n").unwrap();
    std::fs::write(&reference, "{\"text\": \"the cat sat on the mat\"}\n").unwrap();
    let out = run(&["metrics", "text", "--hyp", s(&hyp), "--ref", s(&reference)]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout).to_string();
    assert!(stdout.lines().nth(1).unwrap().starts_with("input,0.367879,"), "{stdout}");

    let scores = tmp.path().join("auc.jsonl");
    std::fs::write(
        &scores,
        "{\"label\": true, \"score\": 0.9}\n{\"label\": false, \"score\": 0.8}\n{\"label\": true, \"score\": 0.4}\n{\"label\": false, \"score\": 0.3}\n",
    )
    .unwrap();
    let out = run(&["metrics", "auc", "--input", s(&scores)]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "auc 0.750000");

    let boxes = tmp.path().join("boxes.jsonl");
    std::fs::write(&boxes, "{\"pred\": [0, 0, 2, 2], \"gt\": [1, 1, 3, 3]}\n{\"pred\": [0, 0, 1, 1], \"gt\": [0, 0, 1, 1]}\n").unwrap();
    let out = run(&["metrics", "iou", "--input", s(&boxes), "--threshold", "0.5"]);
    let want_miou = (1.0 / 7.0 + 1.0) / 2.0;
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), format!("miou {want_miou:.6} acc 0.500000"));

    let empty = tmp.path().join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    assert_eq!(run(&["metrics", "auc", "--input", s(&empty)]).status.code(), Some(3));
}
