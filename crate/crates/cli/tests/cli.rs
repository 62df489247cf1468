use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use seft::traceio::{write_trace, TraceFile, TraceRecord};

fn seft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seft"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

const SMALL: &[&str] = &[
    "--layers",
    "4",
    "--dim",
    "16",
    "--heads",
    "2",
    "--train-n",
    "192",
    "--test-n",
    "48",
];

fn train(extra: &[&str], out: &Path) -> Output {
    let mut args = vec!["train", "--task", "trigger", "--out", out.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    seft(&args)
}

#[test]
fn plan_budget_prints_quotas_and_saving() {
    let o = seft(&[
        "plan-budget",
        "--growth",
        "geometric",
        "--layers",
        "4",
        "--batches",
        "15",
    ]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let quotas: Vec<&str> = text
        .lines()
        .skip(2)
        .take(4)
        .map(|l| l.split_whitespace().nth(1).unwrap())
        .collect();
    assert_eq!(quotas, ["1", "2", "4", "8"]);
    assert!(stdout(&o).contains("bf order: 0 1 1 2 2 2 2 3 3 3 3 3 3 3 3"));

    let o = seft(&[
        "plan-budget",
        "--growth",
        "arithmetic",
        "--layers",
        "32",
        "--batches",
        "16896",
    ]);
    assert!(
        stdout(&o).contains("expected saving 0.645833"),
        "{}",
        stdout(&o)
    );

    let o = seft(&[
        "plan-budget",
        "--growth",
        "arith",
        "--layers",
        "2",
        "--batches",
        "30",
        "--order",
        "df",
    ]);
    assert!(
        stdout(&o).contains("       0  10\n       1  20\n"),
        "{}",
        stdout(&o)
    );
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(
        code(&seft(&[
            "plan-budget",
            "--growth",
            "cubic",
            "--layers",
            "4",
            "--batches",
            "8"
        ])),
        2
    );
    assert_eq!(code(&seft(&["train", "--policy", "bogus"])), 2);
    assert_eq!(code(&seft(&["train", "--no-such-flag"])), 2);
    assert_eq!(code(&seft(&["train", "--classes", "1"])), 2);
    assert_eq!(code(&seft(&["train", "--grid", "--policy", "seft"])), 2);
    assert_eq!(code(&seft(&["--help"])), 0);
}

#[test]
fn naive_full_report_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&["--policy", "naive_full", "--seed", "3"], out);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let runs = fs::read_to_string(a.join("runs.csv")).unwrap();
    let header: Vec<&str> = runs.lines().next().unwrap().split(',').collect();
    let row: Vec<&str> = runs.lines().nth(1).unwrap().split(',').collect();
    let saving = header.iter().position(|&h| h == "cost_saving").unwrap();
    assert_eq!(row[saving].parse::<f64>().unwrap(), 0.0);

    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n == "manifest.json"));
    for name in names.iter().filter(|n| *n != "manifest.json") {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name:?}"
        );
    }
}

#[test]
fn config_file_is_overridden_by_flags_and_reruns_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    fs::write(
        &config,
        r#"{"policy": "naive_half", "experiment": {"epochs": 1}, "task": {"seed": 5}}"#,
    )
    .unwrap();
    let first = dir.path().join("first");
    let o = train(
        &[
            "--config",
            config.to_str().unwrap(),
            "--policy",
            "lift_front",
        ],
        &first,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(first.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["resolved"]["policy"], "lift_front");
    assert_eq!(manifest["resolved"]["experiment"]["epochs"], 1);
    assert_eq!(manifest["resolved"]["task"]["seed"], 5);

    let again = dir.path().join("again");
    let resolved = first.join("config.json");
    let o = seft(&[
        "train",
        "--config",
        resolved.to_str().unwrap(),
        "--out",
        again.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        fs::read(first.join("summary.json")).unwrap(),
        fs::read(again.join("summary.json")).unwrap()
    );
}

#[test]
fn divergence_has_its_own_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(
        &["--policy", "naive_full", "--lr", "1e300", "--epochs", "1"],
        dir.path(),
    );
    assert_eq!(code(&o), 4);
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn budget_run_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(&["--plan", "arithmetic/df", "--epochs", "1"], dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_dir(dir.path()).unwrap().any(|e| e
        .unwrap()
        .file_name()
        .to_string_lossy()
        .starts_with("ledger_")));
    let o = seft(&["report", "--from", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    assert!(
        stdout(&o).contains("| trigger_token | seft (arithmetic/df) | 1 |"),
        "{}",
        stdout(&o)
    );
    assert!(dir.path().join("report/report.md").exists());
    assert!(dir.path().join("report/manifest.json").exists());
}

/// Every latent equals the shared input/output base row, so every layer ties
/// at zero deviation and each record picks the deepest interior boundary.
fn perfect_route_trace(m: usize, n: usize) -> TraceFile {
    let v = 4;
    let identity: Vec<f32> = (0..v * v)
        .map(|i| if i % (v + 1) == 0 { 1.0 } else { 0.0 })
        .collect();
    let records = (0..n)
        .map(|i| {
            let t = i % v;
            TraceRecord {
                medium_token: t as u32,
                label: t as u32,
                latents: (0..m + 1)
                    .flat_map(|_| identity[t * v..(t + 1) * v].to_vec())
                    .collect(),
            }
        })
        .collect();
    TraceFile::new(
        "perfect",
        m,
        v,
        v,
        Some(identity.clone()),
        Some(identity),
        records,
    )
    .unwrap()
}

#[test]
fn analyze_trace_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let (m, n) = (6, 10);
    let path = dir.path().join("perfect.seft");
    write_trace(&path, &perfect_route_trace(m, n)).unwrap();
    let out = dir.path().join("analysis");
    let o = seft(&[
        "analyze-trace",
        path.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let summary: serde_json::Value =
        serde_json::from_slice(&fs::read(out.join("analysis.json")).unwrap()).unwrap();
    let expected = summary["expected_saving"].as_f64().unwrap();
    assert!(
        (expected - (m - 1) as f64 / m as f64).abs() < 1e-12,
        "{expected}"
    );

    let violin = fs::read_to_string(out.join("violin.csv")).unwrap();
    assert_eq!(violin.lines().count(), 1 + (m + 1));
    let records = fs::read_to_string(out.join("records.csv")).unwrap();
    assert_eq!(records.lines().count(), 1 + n);
    let histogram = fs::read_to_string(out.join("histogram.csv")).unwrap();
    assert_eq!(histogram.lines().count(), 1 + m);
    assert!(out.join("plans.json").exists() && out.join("manifest.json").exists());
}

#[test]
fn analyze_trace_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("absent.seft");
    let o = seft(&["analyze-trace", missing.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("not found"));

    let bad = dir.path().join("bad.seft");
    fs::write(&bad, b"NOTATRACE").unwrap();
    let o = seft(&["analyze-trace", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr)
        .to_lowercase()
        .contains("magic"));

    let o = seft(&[
        "analyze-trace",
        missing.to_str().unwrap(),
        "--measure",
        "nope",
    ]);
    assert_eq!(code(&o), 2);
}
