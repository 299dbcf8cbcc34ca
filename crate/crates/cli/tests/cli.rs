use std::path::Path;
use std::process::Command;

fn htsp(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_htsp")).args(args).env("RUST_LOG", "warn").output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = htsp(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn heuristic_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst");
    let tours = dir.path().join("tours");
    let eval = dir.path().join("eval");
    ok(&["generate", "--n", "1000", "--count", "2", "--seed", "3", "--out-dir", s(&inst), "--reference-kicks", "50"]);
    ok(&["solve", "--instances", s(&inst), "--upper", "random", "--lower", "farthest", "--out-dir", s(&tours)]);
    let stdout = ok(&["eval", "--instances", s(&inst), "--tours", s(&tours), "--references", s(&inst), "--out-dir", s(&eval)]);
    assert!(stdout.contains("2 instances"));
    let csv = std::fs::read_to_string(eval.join("eval.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "instance_id,n,length,ref_length,gap_pct,seconds");
    assert_eq!(csv.lines().count(), 3);
    for line in csv.lines().skip(1) {
        let gap: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert!(gap > 0.0 && gap < 40.0, "{line}");
        let secs: f64 = line.split(',').nth(5).unwrap().parse().unwrap();
        assert!(secs > 0.0);
    }
    let report = dir.path().join("report");
    ok(&["report", "--eval", &format!("fi={}", s(&eval.join("eval.csv"))), "--out-dir", s(&report)]);
    let sizes = std::fs::read_to_string(report.join("gap_vs_size.csv")).unwrap();
    assert!(sizes.lines().nth(1).unwrap().starts_with("fi,1000,2,"));
}

#[test]
fn eval_against_itself_is_zero_gap() {
    let dir = tempfile::tempdir().unwrap();
    let inst = dir.path().join("inst");
    let tours = dir.path().join("tours");
    ok(&["generate", "--n", "300", "--count", "1", "--out-dir", s(&inst), "--format", "tsplib"]);
    ok(&["solve", "--instances", s(&inst), "--upper", "random", "--lower", "farthest", "--out-dir", s(&tours)]);
    let eval = dir.path().join("eval");
    ok(&["eval", "--instances", s(&inst), "--tours", s(&tours), "--references", s(&tours), "--out-dir", s(&eval)]);
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(eval.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["mean_gap_pct"].as_f64().unwrap(), 0.0);
}

#[test]
fn train_then_solve_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(
        &cfg,
        "seed = 2\n\
         [problem]\nn = 100\nk = 8\nsub_length = 20\nmax_num = 12\n\
         [upper]\ngrid_h = 8\ngrid_w = 8\nhidden = 16\n\
         [lower]\ndim = 8\nheads = 2\nencoder_layers = 1\nff_hidden = 16\n\
         [warmup]\nepochs = 1\nbatches_per_epoch = 1\nbatch_size = 4\ninstance_n = 50\nsub_length = 10\nmax_num = 5\nval_size = 4\nval_nodes = 6\n\
         [joint]\nepochs = 1\nepisodes_per_epoch = 2\n\
         [eval]\ninstances = 1\nreference_kicks = 2\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out-dir", s(&run)]);
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 2);
    let inst = dir.path().join("inst");
    ok(&["generate", "--n", "200", "--count", "2", "--out-dir", s(&inst)]);
    let tours = dir.path().join("tours");
    ok(&["solve", "--instances", s(&inst), "--checkpoint", s(&run.join("final.ckpt")), "--out-dir", s(&tours), "--workers", "2"]);
    assert!(tours.join("n200_s0_0001.tour").exists());
    let report = dir.path().join("report");
    ok(&["report", "--metrics", &format!("tiny={}", s(&run.join("metrics.jsonl"))), "--out-dir", s(&report)]);
    assert_eq!(std::fs::read_to_string(report.join("training_curve.csv")).unwrap().lines().count(), 3);
}

#[test]
fn bad_inputs_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing");
    let out = htsp(&["solve", "--instances", s(&missing), "--upper", "random", "--lower", "farthest", "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no such instance"));
    let out = htsp(&["solve", "--instances", s(dir.path()), "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
    let out = htsp(&["generate", "--n", "1", "--out-dir", s(dir.path())]);
    assert!(!out.status.success());
}

#[test]
fn env_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_htsp"))
        .args(["generate", "--count", "1", "--out-dir", s(dir.path())])
        .env("HTSP_N", "40")
        .env("HTSP_SEED", "9")
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("n40_s9_0000.json").exists());
}
