use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fluctlab(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fluctlab"))
        .args(args)
        .current_dir(cwd)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .env_remove("FLUCTLAB_OUT")
        .output()
        .expect("spawn fluctlab")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn gen_writes_header_and_rows() {
    let dir = tempfile::tempdir().unwrap();
    let text = ok(&fluctlab(&["gen", "--shape", "spiral"], dir.path()));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 501);
    assert_eq!(lines[0], "x,y");
    for l in &lines[1..] {
        let (x, y) = l.split_once(',').unwrap();
        for v in [x, y] {
            let v: f64 = v.parse().unwrap();
            assert!((-1.0..=1.0).contains(&v));
        }
    }
    let again = ok(&fluctlab(&["gen", "--shape", "spiral"], dir.path()));
    assert_eq!(text, again);

    ok(&fluctlab(
        &[
            "gen", "--shape", "hexagon", "--count", "7", "--out", "d/h.csv",
        ],
        dir.path(),
    ));
    assert_eq!(
        fs::read_to_string(dir.path().join("d/h.csv"))
            .unwrap()
            .lines()
            .count(),
        8
    );
}

#[test]
fn unknown_shape_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = fluctlab(&["gen", "--shape", "nonagon"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nonagon"));
    assert_eq!(
        fluctlab(&["train", "--epochs", "0"], dir.path())
            .status
            .code(),
        Some(2)
    );
    assert_eq!(fluctlab(&["frobnicate"], dir.path()).status.code(), Some(2));
}

#[test]
fn train_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = ok(&fluctlab(
        &["train", "--epochs", "8", "--samples", "60", "--outdir", "o"],
        p,
    ));
    assert!(out.contains("snapshots=8"));
    let run = "o/runs/spiral_0.01_8.nfl";
    assert!(p.join(run).exists());

    let json = ok(&fluctlab(&["analyze", "--run", run], p));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["snapshot_count"], 8);
    assert_eq!(v["channels"].as_object().unwrap().len(), 5);

    let table = ok(&fluctlab(
        &[
            "analyze",
            "--run",
            run,
            "--out",
            "a/rep.json",
            "--epsilon",
            "1e-3",
        ],
        p,
    ));
    assert!(table.starts_with('|'));
    assert!(p.join("a/rep.json").exists());

    ok(&fluctlab(&["report", "--run", run, "--outdir", "o"], p));
    for f in [
        "reports/spiral_0.01_8.table.md",
        "figures/spiral_0.01_8.recon.svg",
        "figures/spiral_0.01_8.weights.hist.svg",
    ] {
        assert!(p.join("o").join(f).exists(), "{f}");
    }
}

#[test]
fn outdir_from_environment_and_config_precedence() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    fs::write(
        p.join("cfg.json"),
        r#"{"shape":"circle","epochs":4,"samples":40,"learning_rate":0.001}"#,
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_fluctlab"))
        .args(["train", "--config", "cfg.json", "--epochs", "3"])
        .current_dir(p)
        .env("FLUCTLAB_OUT", "envout")
        .output()
        .unwrap();
    ok(&out);
    assert!(p.join("envout/runs/circle_0.001_3.nfl").exists());
}

#[test]
fn compare_runs_of_one_shape() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&fluctlab(
        &[
            "all",
            "--outdir",
            "o",
            "--epochs",
            "6",
            "--samples",
            "50",
            "--lr",
            "0.01,0.0001",
        ],
        p,
    ));
    let runs = "o/runs/spiral_0.01_6.nfl,o/runs/spiral_0.0001_6.nfl";
    let text = ok(&fluctlab(&["compare", "--runs", runs], p));
    assert!(text.contains("lowest-mse"));
    let json = ok(&fluctlab(&["compare", "--runs", runs, "--json"], p));
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 2);

    ok(&fluctlab(
        &[
            "train",
            "--shape",
            "square",
            "--epochs",
            "3",
            "--samples",
            "50",
            "--outdir",
            "o",
        ],
        p,
    ));
    let mixed = fluctlab(
        &[
            "compare",
            "--runs",
            "o/runs/spiral_0.01_6.nfl,o/runs/square_0.01_3.nfl",
        ],
        p,
    );
    assert_eq!(mixed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&mixed.stderr).contains("different shapes"));
}

#[test]
fn analyze_rejects_missing_and_incomplete_runs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    assert_eq!(
        fluctlab(&["analyze", "--run", "nope.nfl"], p).status.code(),
        Some(1)
    );
    fs::write(p.join("junk.nfl"), b"not a run file at all").unwrap();
    assert_ne!(
        fluctlab(&["analyze", "--run", "junk.nfl"], p).status.code(),
        Some(0)
    );
}
