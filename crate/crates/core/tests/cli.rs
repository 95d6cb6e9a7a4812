use std::path::Path;
use std::process::{Command, Output};

fn equisel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_equisel"))
        .args(args)
        .output()
        .expect("spawn equisel")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_evaluate_rank_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let dumps = dir.path().join("dumps");
    let out = equisel(&[
        "synth", "--task", "radius-reg", "--models", "inv,plain", "--n-train", "64", "--n-test", "40",
        "--points", "8", "--epochs", "5", "--out", s(&dumps),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let out = equisel(&["validate", "--dump", s(&dumps.join("invariant"))]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok: invariant"));

    let mut evals = Vec::new();
    for m in ["invariant", "plain"] {
        let file = dir.path().join(format!("{m}.json"));
        let out = equisel(&[
            "evaluate", "--dump", s(&dumps.join(m)), "--resamples", "10", "--hessian", "diag",
            "--delta-grid", "1e-2,1e2,9", "--sigma-grid", "0.05,1,5", "--out", s(&file),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        evals.push(file);
    }

    let report = dir.path().join("rank.txt");
    let mut args = vec!["rank", "--error-metric", "mae", "--out", s(&report), "--evals"];
    args.extend(evals.iter().map(|p| s(p)));
    let out = equisel(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&report).unwrap();
    assert!(text.contains("error metric: mae"));
    assert!(text.contains("interval_width"));

    let out = equisel(&[
        "laplace-grid", "--dump", s(&dumps.join("plain")), "--delta-grid", "1e-1,1e1,3",
        "--sigma-grid", "0.1,1,2",
    ]);
    assert!(out.status.success());
    let csv = String::from_utf8_lossy(&out.stdout);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("model,delta,sigma,log_marglik"));
    assert_eq!(lines.count(), 6);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    // Missing manifest: validation error naming the file.
    let out = equisel(&["validate", "--dump", s(&dir.path().join("absent"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("manifest"));

    // Output below a regular file cannot be created: I/O error.
    let blocker = dir.path().join("blocker");
    std::fs::write(&blocker, "x").unwrap();
    let eval = dir.path().join("e.json");
    std::fs::write(
        &eval,
        r#"{"model_name":"a","constraint_tag":"plain","scores":{"mae":0.1}}"#,
    )
    .unwrap();
    let out = equisel(&[
        "rank", "--error-metric", "mae", "--out", s(&blocker.join("r.txt")), "--evals", s(&eval), s(&eval),
    ]);
    // Duplicate names are rejected before any output is written.
    assert_eq!(out.status.code(), Some(2));
    let eval2 = dir.path().join("f.json");
    std::fs::write(
        &eval2,
        r#"{"model_name":"b","constraint_tag":"plain","scores":{"mae":0.2}}"#,
    )
    .unwrap();
    let out = equisel(&[
        "rank", "--error-metric", "mae", "--out", s(&blocker.join("r.txt")), "--evals", s(&eval), s(&eval2),
    ]);
    assert_eq!(out.status.code(), Some(4));

    // Malformed manifest: validation error.
    std::fs::write(dir.path().join("manifest.toml"), "schema_version = \"x\"\n").unwrap();
    let out = equisel(&["validate", "--dump", s(dir.path())]);
    assert_eq!(out.status.code(), Some(2));

    // Malformed grid argument: configuration error.
    let out = equisel(&["laplace-grid", "--dump", s(dir.path()), "--delta-grid", "1,2"]);
    assert_eq!(out.status.code(), Some(2));
}
