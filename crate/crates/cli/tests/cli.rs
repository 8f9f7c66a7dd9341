//! End-to-end runs of the `rerank-diag` binary on small synthetic worlds.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rerank-diag"))
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn lines(path: &Path) -> usize {
    std::fs::read_to_string(path).unwrap().lines().count()
}

/// Exports a small world into `dir` and returns the world spec path.
fn synth(dir: &Path) -> std::path::PathBuf {
    let out = dir.join("world");
    ok(bin()
        .args(["synth", "--set", "catalog_size=600", "--set", "user_count=40", "--set", "embed_dim=16"])
        .args(["--set", "export_pool_size=100", "--out"])
        .arg(&out)
        .output()
        .unwrap());
    out
}

#[test]
fn synth_exports_every_interchange_file() {
    let dir = tempfile::tempdir().unwrap();
    let world = synth(dir.path());
    for f in ["world.conf", "catalog.csv", "users.jsonl", "embeddings.txt", "queries.txt", "scores.jsonl"] {
        assert!(world.join(f).exists(), "{f}");
    }
    assert_eq!(lines(&world.join("users.jsonl")), 40);
    assert_eq!(lines(&world.join("scores.jsonl")), 40 * 100);
}

#[test]
fn run_writes_one_line_per_sampled_user() {
    let dir = tempfile::tempdir().unwrap();
    let world = synth(dir.path());
    let out = dir.path().join("run");
    let stdout = ok(bin()
        .args(["run", "--world"])
        .arg(world.join("world.conf"))
        .args(["--n-users", "10", "--seeds", "42", "7", "--pool-sizes", "50", "--out"])
        .arg(&out)
        .output()
        .unwrap());
    assert!(stdout.contains("reranked"));
    let logs: Vec<_> = std::fs::read_dir(out.join("runs")).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(logs.len(), 5 * 2);
    for log in &logs {
        assert_eq!(lines(log), 10, "{}", log.display());
    }
    let master: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("master.json")).unwrap()).unwrap();
    assert_eq!(master["meta"]["seeds"], serde_json::json!([42, 7]));
    assert!(master["reranked"]["hr@10"]["mean"].is_number());
}

#[test]
fn exported_files_run_like_the_world() {
    let dir = tempfile::tempdir().unwrap();
    let world = synth(dir.path());
    let run = |args: &[&str], out: &Path| {
        ok(bin()
            .args(["run", "--n-users", "15", "--seeds", "42", "--pool-sizes", "60"])
            .args(args)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap())
    };
    let files = dir.path().join("files");
    let w = |f: &str| world.join(f).to_string_lossy().into_owned();
    run(
        &["--catalog", &w("catalog.csv"), "--users", &w("users.jsonl"), "--embeddings", &w("embeddings.txt")]
            .iter()
            .chain(&["--queries", &w("queries.txt"), "--scores", &w("scores.jsonl")])
            .map(|s| s.as_ref())
            .collect::<Vec<&str>>(),
        &files,
    );
    let direct = dir.path().join("direct");
    run(&["--world", &w("world.conf")], &direct);
    // The exported score table holds the synthetic scorer's values, so even
    // the reranked logs must agree.
    for name in ["candidates_only__seed42.jsonl", "popularity__seed42.jsonl", "random__seed42.jsonl", "reranked__seed42.jsonl"] {
        assert_eq!(
            std::fs::read_to_string(files.join("runs").join(name)).unwrap().lines().map(strip).collect::<Vec<_>>(),
            std::fs::read_to_string(direct.join("runs").join(name)).unwrap().lines().map(strip).collect::<Vec<_>>(),
            "{name}"
        );
    }
}

fn strip(line: &str) -> String {
    let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
    v.as_object_mut().unwrap().remove("rerank_seconds");
    v.to_string()
}

#[test]
fn ablate_analyze_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let world = synth(dir.path());
    let out = dir.path().join("run");
    let conf = world.join("world.conf");
    ok(bin().args(["run", "--world"]).arg(&conf).args(["--n-users", "20", "--out"]).arg(&out).output().unwrap());
    ok(bin()
        .args(["ablate", "--world"])
        .arg(&conf)
        .args(["--n-users", "20", "--pool-sizes", "50", "100", "200", "--out"])
        .arg(&out)
        .output()
        .unwrap());
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(lines(&out.join("ablation/runs/reranked@100__seed42.jsonl")), 20);
    assert_eq!(csv.lines().filter(|l| l.starts_with("reranked,")).count(), 3, "{csv}");

    let stdout = ok(bin()
        .args(["analyze", "--world"])
        .arg(&conf)
        .args(["--resamples", "1000", "--out"])
        .arg(&out)
        .output()
        .unwrap());
    assert!(stdout.contains("score separation"));
    for f in ["stat_tests.json", "separation.json", "gt_positions.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    ok(bin().args(["report", "--out"]).arg(&out).output().unwrap());
    for f in ["ablation.txt", "stat_tests.tex", "exposure.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let first = std::fs::read(out.join("main_results.csv")).unwrap();
    ok(bin().args(["report", "--out"]).arg(&out).output().unwrap());
    assert_eq!(first, std::fs::read(out.join("main_results.csv")).unwrap());
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let world = synth(dir.path());
    std::fs::copy(world.join("world.conf"), dir.path().join("w.conf")).unwrap();
    let config = dir.path().join("exp.conf");
    std::fs::write(
        &config,
        "world = w.conf\nn_users = 12\nseeds = 5\nout = from_config\n\n[pipeline pop]\nretriever = popularity\npool_size = 10\n",
    )
    .unwrap();
    ok(bin().arg("run").arg("--config").arg(&config).output().unwrap());
    assert_eq!(lines(&dir.path().join("from_config/runs/pop__seed5.jsonl")), 12);

    let out = dir.path().join("flagged");
    ok(bin().arg("run").arg("--config").arg(&config).args(["--n-users", "7", "--out"]).arg(&out).output().unwrap());
    assert_eq!(lines(&out.join("runs/pop__seed5.jsonl")), 7);
}

#[test]
fn ingest_reports_missing_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let world = synth(dir.path());
    let users = dir.path().join("users.jsonl");
    let mut text = std::fs::read_to_string(world.join("users.jsonl")).unwrap();
    text.push_str("{\"id\":\"ghost\",\"profile_text\":\"likes nothing\",\"gt_items\":[\"nope\"]}\n");
    std::fs::write(&users, text).unwrap();
    let out = dir.path().join("ingested");
    let stdout = ok(bin()
        .args(["ingest", "--catalog"])
        .arg(world.join("catalog.csv"))
        .arg("--users")
        .arg(&users)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap());
    assert!(stdout.contains("1 missing"), "{stdout}");
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("missing_gt.json")).unwrap()).unwrap();
    assert_eq!(report["users_emptied"], serde_json::json!(["ghost"]));
}

#[test]
fn exit_codes() {
    assert_eq!(bin().args(["run", "--no-such-flag"]).output().unwrap().status.code(), Some(1));
    assert_eq!(bin().arg("--help").output().unwrap().status.code(), Some(0));
    let missing = bin().args(["run", "--world", "/nonexistent/world.conf", "--out", "/tmp/x"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    std::fs::write(&bad, "alignment = 2\n").unwrap();
    let invalid = bin().args(["synth", "--config"]).arg(&bad).arg("--out").arg(dir.path()).output().unwrap();
    assert_eq!(invalid.status.code(), Some(1));
}
