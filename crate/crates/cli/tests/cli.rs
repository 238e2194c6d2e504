use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ddc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddc")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_trace_and_solution() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("trace.csv");
    let out = dir.path().join("solution.json");
    let run = ddc(&[
        "solve",
        "--model",
        "bus",
        "--n-states",
        "20",
        "--beta",
        "0.95",
        "--formulation",
        "ev",
        "--method",
        "hybrid",
        "--tol",
        "1e-12",
        "--trace",
        trace.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));

    let csv = fs::read_to_string(&trace).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "k,method,sup_diff,residual,step_time_s");
    let rows: Vec<&str> = lines.collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().any(|r| r.contains(",Newton,")));

    let json = read_json(&out);
    assert_eq!(json["formulation"], "ev");
    assert_eq!(json["converged"], true);
    assert_eq!(json["solution"].as_array().unwrap().len(), 40);
    assert_eq!(json["iterations"].as_u64().unwrap() as usize, rows.len());
    assert!(json["ccp"].is_array());
}

#[test]
fn newton_only_and_vfi_methods_run() {
    for method in ["newton", "vfi"] {
        let run = ddc(&[
            "solve",
            "--model",
            "storable",
            "--n-states",
            "12",
            "--formulation",
            "w",
            "--method",
            method,
        ]);
        assert_eq!(code(&run), 0, "{method}: {}", String::from_utf8_lossy(&run.stderr));
    }
}

#[test]
fn non_convergence_exits_with_two() {
    let run = ddc(&[
        "solve",
        "--model",
        "bus",
        "--n-states",
        "20",
        "--formulation",
        "w",
        "--method",
        "vfi",
        "--max-iters",
        "3",
    ]);
    assert_eq!(code(&run), 2);
}

#[test]
fn invalid_input_exits_with_one() {
    let cases: &[&[&str]] = &[
        &["solve", "--model", "nope", "--formulation", "w"],
        &["solve", "--model", "bus", "--formulation", "x"],
        &["solve", "--model", "bus", "--formulation", "w", "--beta", "1.5"],
        &["solve", "--model", "bus", "--formulation", "w", "--tol", "-1"],
        &["solve", "--model", "json:/does/not/exist.json", "--formulation", "w"],
        &["bench", "--model", "bus", "--sizes", "", "--out", "x.csv"],
        &[
            "diagnose-bus",
            "--variant",
            "other",
            "--n-states",
            "10",
            "--out",
            "x.json",
        ],
    ];
    for args in cases {
        assert_eq!(code(&ddc(args)), 1, "{args:?}");
    }
}

#[test]
fn solve_reads_json_model() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    let model = serde_json::json!({
        "n_states": 2,
        "n_choices": 2,
        "beta": 0.9,
        "utility": [[1.0, 0.0], [0.0, 1.0]],
        "transitions": [[[0.5, 0.5], [0.5, 0.5]], [[0.5, 0.5], [0.5, 0.5]]],
    });
    fs::write(&path, model.to_string()).unwrap();
    let out = dir.path().join("out.json");
    let spec = format!("json:{}", path.display());
    let run = ddc(&[
        "solve",
        "--model",
        &spec,
        "--formulation",
        "w",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let w: Vec<f64> = read_json(&out)["solution"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    // Symmetric model: W(0) = W(1) = ln(1 + e) / (1 - beta).
    let want = (1.0 + 1f64.exp()).ln() / 0.1;
    assert!(w.iter().all(|v| (v - want).abs() < 1e-10), "{w:?}");

    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"n_states": 1, "n_choices": 1, "beta": 0.9, "utility": [[0.0]], "transitions": [[[0.7]]]}"#,
    )
    .unwrap();
    let spec = format!("json:{}", bad.display());
    assert_eq!(code(&ddc(&["solve", "--model", &spec, "--formulation", "w"])), 1);
}

#[test]
fn bench_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.csv");
    let run = ddc(&[
        "bench",
        "--model",
        "storable",
        "--sizes",
        "12,22",
        "--reps",
        "3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let csv = fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "model,n_states,n_choices,reps,time_step_ev_s,time_step_w_s,time_total_ev_s,time_total_w_s,ratio_step,ratio_total"
    );
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("storable,12,3,3,"));
    assert!(lines[2].starts_with("storable,22,3,3,"));
}

#[test]
fn bench_help_documents_total_boundary() {
    let run = ddc(&["bench", "--help"]);
    assert_eq!(code(&run), 0);
    let text = String::from_utf8_lossy(&run.stdout).to_lowercase();
    assert!(text.contains("total"));
    assert!(text.contains("step"));
}

#[test]
fn mpec_stats_ratio_is_number_of_choices() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mpec.json");
    let run = ddc(&[
        "mpec-stats",
        "--model",
        "storable",
        "--n-states",
        "12",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&run), 0);
    let json = read_json(&out);
    assert_eq!(json["formulation_w"]["n_constraints"], 12);
    assert_eq!(json["formulation_ev"]["n_constraints"], 36);
    assert_eq!(json["ratio_constraints"], 3.0);
}

#[test]
fn diagnose_bus_reports_both_variants() {
    let dir = tempfile::tempdir().unwrap();
    for (variant, identity) in [("corrected", true), ("rust_original_faulty", false)] {
        let out = dir.path().join(format!("{variant}.json"));
        let run = ddc(&[
            "diagnose-bus",
            "--variant",
            variant,
            "--n-states",
            "30",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code(&run), 0, "{variant}: {}", String::from_utf8_lossy(&run.stderr));
        let json = read_json(&out);
        assert_eq!(json["variant"], variant);
        assert_eq!(json["n_states"], 30);
        assert_eq!(json["ev2_constant"], true);
        assert_eq!(json["identity_holds"], identity);
        let gap = json["gap"].as_f64().unwrap();
        if identity {
            assert!(gap.abs() <= 1e-9, "{gap}");
        } else {
            assert!(gap > 0.0);
        }
    }
}
