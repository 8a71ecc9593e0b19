use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reachmap::models::{ReachabilityMap, ReachabilityModel};

fn reachmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reachmap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = reachmap(args);
    assert!(
        out.status.success(),
        "reachmap {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small 2-DoF model trained through the CLI.
fn trained_model(dir: &Path) -> PathBuf {
    let chain = dir.join("arm2.json");
    let data = dir.join("s.csv");
    let model = dir.join("m.json");
    ok(&["chain", "--name", "arm2", "--out", s(&chain)]);
    ok(&[
        "sample",
        "--chain",
        s(&chain),
        "--method",
        "ik",
        "--count",
        "600",
        "--seed",
        "3",
        "--bounds",
        "-2.2:2.2,-2.2:2.2",
        "--out",
        s(&data),
    ]);
    ok(&[
        "train",
        "--model",
        "svm",
        "--data",
        s(&data),
        "--out",
        s(&model),
    ]);
    model
}

#[test]
fn sample_writes_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    let chain = dir.path().join("arm2.json");
    let out = dir.path().join("s.csv");
    ok(&["chain", "--name", "arm2", "--out", s(&chain)]);
    ok(&[
        "sample",
        "--chain",
        s(&chain),
        "--method",
        "fk",
        "--count",
        "250",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "space,method,seed,count");
    assert_eq!(lines[1], "R2,fk,1,250");
    assert_eq!(lines.len(), 252);
    assert!(lines[2..].iter().all(|l| l.ends_with(",1")));
}

#[test]
fn usage_errors_exit_2() {
    let out = reachmap(&["eval", "--model", "m.json"]);
    assert_eq!(out.status.code(), Some(2));
    let out = reachmap(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = reachmap(&[
        "train",
        "--model",
        "perceptron",
        "--data",
        "a",
        "--out",
        "b",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_1_with_kind_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    let out = reachmap(&[
        "eval",
        "--model",
        s(&missing),
        "--test",
        s(&missing),
        "--out",
        s(&dir.path().join("r.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.starts_with("error: io: "), "{err}");

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "not,a,sample,file\n").unwrap();
    let out = reachmap(&[
        "train",
        "--model",
        "svm",
        "--data",
        s(&bad),
        "--out",
        s(&missing),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .starts_with("error: "));

    let chain = dir.path().join("arm2.json");
    ok(&["chain", "--name", "arm2", "--out", s(&chain)]);
    let out = reachmap(&[
        "sample",
        "--chain",
        s(&chain),
        "--method",
        "ik",
        "--count",
        "5",
        "--bounds",
        "1:0,0:1",
        "--out",
        s(&dir.path().join("x.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn heatmap_matches_direct_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let model_path = trained_model(dir.path());
    let heat = dir.path().join("h.csv");
    ok(&[
        "heatmap",
        "--model",
        s(&model_path),
        "--slice",
        "theta=0",
        "--res",
        "7",
        "--bounds",
        "-1.5:1.5,-0.5:2",
        "--out",
        s(&heat),
    ]);
    let model = ReachabilityModel::load(&model_path).unwrap();
    let text = std::fs::read_to_string(&heat).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x,y,value"));
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 49);
    assert_eq!((rows[0][0], rows[0][1]), (-1.5, -0.5));
    assert_eq!((rows[6][0], rows[6][1]), (1.5, -0.5));
    assert_eq!((rows[48][0], rows[48][1]), (1.5, 2.0));
    for r in &rows {
        assert_eq!(r[2], model.eval_value(&[r[0], r[1]]).unwrap());
    }
}

#[test]
fn eval_report_csv_and_offset_override() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained_model(dir.path());
    let chain = dir.path().join("arm2.json");
    let grid = dir.path().join("t.csv");
    ok(&[
        "grid",
        "--chain",
        s(&chain),
        "--res",
        "30",
        "--oracle-res",
        "201",
        "--out",
        s(&grid),
    ]);
    let report = dir.path().join("r.csv");
    let stdout = ok(&[
        "eval",
        "--model",
        s(&model),
        "--test",
        s(&grid),
        "--out",
        s(&report),
    ]);
    assert!(stdout.contains("IoU"));
    let text = std::fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "model_kind,test_set,rho,iou,tp,fp,fn,tn");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(&fields[..3], &["svm", "t.csv", "0.1"]);
    let counts: usize = fields[4..]
        .iter()
        .map(|v| v.parse::<usize>().unwrap())
        .sum();
    assert_eq!(counts, 900);

    // An offset so large every point is predicted reachable: IoU = positive fraction.
    ok(&[
        "eval",
        "--model",
        s(&model),
        "--test",
        s(&grid),
        "--rho",
        "100",
        "--out",
        s(&report),
    ]);
    let text = std::fs::read_to_string(&report).unwrap();
    let fields: Vec<String> = text
        .lines()
        .nth(1)
        .unwrap()
        .split(',')
        .map(String::from)
        .collect();
    let (tp, fp, fn_, tn): (usize, usize, usize, usize) = (
        fields[4].parse().unwrap(),
        fields[5].parse().unwrap(),
        fields[6].parse().unwrap(),
        fields[7].parse().unwrap(),
    );
    assert_eq!((fn_, tn), (0, 0));
    assert_eq!(tp + fp, 900);
}

#[test]
fn plan_writes_csv_and_rerun_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained_model(dir.path());
    let problem = dir.path().join("basic.json");
    std::fs::write(
        &problem,
        format!(
            r#"{{"kind": "basic", "model": "{}", "target": [0.8, 1.2]}}"#,
            model.file_name().unwrap().to_str().unwrap()
        ),
    )
    .unwrap();
    let plan = dir.path().join("plan.csv");
    let stdout = ok(&["plan", "--problem", s(&problem), "--out", s(&plan)]);
    assert!(stdout.contains("converged"));
    let text = std::fs::read_to_string(&plan).unwrap();
    assert!(text.starts_with("kind,index,x,y,f_r\n"));

    let manifest = dir.path().join("plan.csv.manifest.json");
    let recorded: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(recorded["command"], "plan");
    assert!(Path::new(recorded["args"]["problem"].as_str().unwrap()).is_absolute());

    let again = dir.path().join("again");
    ok(&["rerun", "--manifest", s(&manifest), "--out-dir", s(&again)]);
    assert_eq!(
        std::fs::read(&plan).unwrap(),
        std::fs::read(again.join("plan.csv")).unwrap()
    );
}

#[test]
fn manifest_records_resolved_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let model = trained_model(dir.path());
    let manifest = format!("{}.manifest.json", s(&model));
    let recorded: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    assert_eq!(recorded["tool"], "reachmap");
    assert_eq!(recorded["args"]["offset"], 0.1);
    assert_eq!(recorded["args"]["gamma"], 30.0);
    let first = std::fs::read(&model).unwrap();
    ok(&["rerun", "--manifest", &manifest]);
    assert_eq!(std::fs::read(&model).unwrap(), first);
}

#[test]
fn rejects_malformed_plan_file() {
    let dir = tempfile::tempdir().unwrap();
    let problem = dir.path().join("p.json");
    std::fs::write(
        &problem,
        r#"{"kind": "basic", "model": "m.json", "target": [1, 2], "oops": 1}"#,
    )
    .unwrap();
    let out = reachmap(&[
        "plan",
        "--problem",
        s(&problem),
        "--out",
        s(&dir.path().join("o.csv")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}
