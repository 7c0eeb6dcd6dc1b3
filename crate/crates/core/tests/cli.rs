use std::path::Path;
use std::process::{Command, Output};

fn heat(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_heat"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// The JSON record is the last line of standard output.
fn record(o: &Output) -> serde_json::Value {
    serde_json::from_str(stdout(o).lines().last().unwrap()).unwrap()
}

#[test]
fn unknown_flags_and_bad_values_are_validation_errors() {
    let dir = tempfile::tempdir().unwrap();
    let o = heat(&["gradcheck", "--frobnicate"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(heat(&["no-such-command"], dir.path()).status.code(), Some(1));
    assert_eq!(
        heat(&["train-bugs", "--data", "missing.jsonl", "--out", "ck"], dir.path())
            .status
            .code(),
        Some(1)
    );
    std::fs::write(dir.path().join("empty.jsonl"), "").unwrap();
    let o = heat(
        &["train-bugs", "--data", "empty.jsonl", "--out", "ck", "--dim", "10", "--heads", "4"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("multiple of heads"));
    assert_eq!(heat(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn checks_exit_zero_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = heat(&["golden-test"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(record(&o)["passed"], true);
    let o = heat(&["degeneration-test", "--cases", "4"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(record(&o)["max_abs_diff"].as_f64().unwrap() < 1e-5);
    let o = heat(&["gradcheck", "--seed", "7", "--cases", "2"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("max rel err"));
    assert!(record(&o)["max_rel_err"].as_f64().unwrap() < 1e-4);
}

#[test]
fn extraction_reports_syntax_errors_with_positions() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    std::fs::create_dir(&src).unwrap();
    std::fs::write(src.join("ok.py"), "def f(a):\n    b = a + 1\n    return b\n").unwrap();
    std::fs::write(src.join("broken.py"), "def f(a):\n    return (a\n").unwrap();
    let o = heat(&["extract", "src", "--out", "g.jsonl", "--chunk-len", "16"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.lines()
            .any(|l| l.starts_with("src/broken.py:") && l.split(':').nth(2).is_some_and(|c| c.parse::<usize>().is_ok())),
        "{err}"
    );
    let graphs = std::fs::read_to_string(dir.path().join("g.jsonl")).unwrap();
    assert_eq!(graphs.lines().count(), 1);
    let o = heat(&["pack-stats", "--data", "g.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let r = record(&o);
    assert!(r["packing_cost"].as_u64().is_some() && r["fill_ratio"].as_f64().unwrap() > 0.0);
}

#[test]
fn bug_pipeline_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let o = heat(&["inject-bugs", "--programs", "40", "--seed", "5", "--out", "s.jsonl"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let train = |out: &str| {
        heat(
            &[
                "train-bugs",
                "--data",
                "s.jsonl",
                "--valid",
                "s.jsonl",
                "--seed",
                "1",
                "--epochs",
                "1",
                "--dim",
                "16",
                "--heads",
                "2",
                "--ffn-dim",
                "32",
                "--out",
                out,
            ],
            dir.path(),
        )
    };
    let (a, b) = (train("a"), train("b"));
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let err = String::from_utf8_lossy(&a.stderr);
    assert!(err.contains("resolved config") && err.contains("ffn_dim = 32"));
    let read = |p: &str| std::fs::read(dir.path().join(p)).unwrap();
    assert_eq!(read("a/params.ckpt"), read("b/params.ckpt"));
    let e = heat(&["eval-bugs", "--ckpt", "a", "--data", "s.jsonl"], dir.path());
    assert_eq!(e.status.code(), Some(0));
    assert_eq!(record(&e)["joint"], record(&a)["valid"]["joint"]);
    assert_eq!(heat(&["eval-kg", "--ckpt", "a", "--data", "."], dir.path()).status.code(), Some(1));
}

#[test]
fn kg_pipeline_round_trips_through_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let o = heat(
        &[
            "train-kg",
            "--synthetic",
            "--epochs",
            "1",
            "--dim",
            "16",
            "--heads",
            "2",
            "--ffn-dim",
            "32",
            "--out",
            "kg",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let e = heat(&["eval-kg", "--ckpt", "kg", "--data", "kg/dataset", "--split", "valid"], dir.path());
    assert_eq!(e.status.code(), Some(0));
    assert_eq!(record(&e)["mrr"], record(&o)["valid"]["mrr"]);
    assert_eq!(
        heat(&["eval-kg", "--ckpt", "kg", "--data", "kg/dataset", "--split", "nope"], dir.path())
            .status
            .code(),
        Some(1)
    );
}
