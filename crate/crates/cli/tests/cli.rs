use std::process::{Command, Output};

use serde_json::Value;

fn curvlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_curvlab")).args(args).output().expect("binary runs")
}

fn json_report(args: &[&str]) -> (i32, Value) {
    let mut full = args.to_vec();
    full.extend(["--format", "json"]);
    let out = curvlab(&full);
    let v: Value = serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&out.stderr)));
    (out.status.code().unwrap(), v)
}

/// `pass` must be recomputable from the checks alone.
fn assert_self_consistent(r: &Value) {
    assert_eq!(r["schema"], "curvlab-report/1");
    let mut all = true;
    for c in r["checks"].as_array().unwrap() {
        let (v, t) = (c["value"].as_f64().unwrap(), c["tolerance"].as_f64().unwrap());
        let ok = match c["relation"].as_str().unwrap() {
            "<=" => v <= t,
            ">=" => v >= t,
            "==" => v == t,
            other => panic!("relation {other}"),
        };
        assert_eq!(c["pass"].as_bool().unwrap(), ok, "{c}");
        all &= ok;
    }
    assert_eq!(r["pass"].as_bool().unwrap(), all);
}

fn first_point(r: &Value) -> &Value {
    &r["payload"]["points"][0]
}

#[test]
fn curvature_examples() {
    let (code, r) = json_report(&["curvature", "--model", "torus(4)", "--m", "2"]);
    assert_eq!(code, 0);
    assert_self_consistent(&r);
    assert_eq!(first_point(&r)["c_m"].as_f64().unwrap(), 0.0);
    assert_eq!(first_point(&r)["scal"].as_f64().unwrap(), 0.0);

    let (code, r) = json_report(&["curvature", "--model", "sphere(4,1)", "--m", "2"]);
    assert_eq!(code, 0);
    assert!((first_point(&r)["c_m"].as_f64().unwrap() - 5.0).abs() < 1e-12);

    let (_, r) = json_report(&["curvature", "--model", "product(sphere(2,1),torus(2))", "--m", "3", "--frame", "torus-first"]);
    assert!((first_point(&r)["c_m"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn curvature_fd_route_and_random_frames() {
    let (code, r) = json_report(&["curvature", "--model", "sphere(5,0.7)", "--m", "2", "--route", "fd", "--frame", "random", "--points", "32"]);
    assert_eq!(code, 0, "{}", r["checks"]);
    assert_eq!(r["payload"]["points"].as_array().unwrap().len(), 32);
    assert_eq!(first_point(&r)["source"], "FiniteDifference");
}

#[test]
fn certify_examples() {
    let (code, r) = json_report(&["certify", "--model", "product(sphere(2,1.0),torus(2))", "--m", "3", "--expect", "positive"]);
    assert_eq!(code, 0);
    assert_self_consistent(&r);
    assert!((r["payload"]["min"].as_f64().unwrap() - 1.0).abs() < 1e-4);

    let (code, _) = json_report(&["certify", "--model", "product(sphere(2,1.0),torus(2))", "--m", "2", "--expect", "nonnegative"]);
    assert_eq!(code, 0);

    let (code, r) = json_report(&["certify", "--model", "torus(3)", "--m", "1", "--expect", "nonnegative"]);
    assert_eq!(code, 0);
    assert!(r["payload"]["min"].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn failed_expectation_exits_with_one() {
    let (code, r) = json_report(&["certify", "--model", "torus(3)", "--m", "1", "--expect", "positive"]);
    assert_eq!(code, 1);
    assert_eq!(r["pass"], false);
}

#[test]
fn dimension_table_csv() {
    let out = curvlab(&["dimension-table", "--n-max", "9", "--format", "csv"]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert!(csv.starts_with("n,m,lhs,rhs,feasible,coefficient_num,coefficient_den\n"));
    for line in ["8,3,8,7,false", "8,4,16,14,false", "9,5,27,23,false", "7,3,7,7,true"] {
        assert!(csv.lines().any(|l| l.starts_with(line)), "missing {line}");
    }
    assert!(!csv.lines().filter(|l| l.starts_with(|c: char| c.is_ascii_digit())).any(|l| {
        let f: Vec<&str> = l.split(',').collect();
        f[0].parse::<i64>().unwrap() <= 7 && f[4] == "false"
    }));
}

#[test]
fn verify_lemmas_feasible_and_forced() {
    let (code, r) = json_report(&["verify-lemmas", "--n", "7", "--m", "3", "--trials", "100000"]);
    assert_eq!(code, 0);
    assert_self_consistent(&r);
    assert_eq!(r["payload"]["violations"], 0);
    assert_eq!(r["payload"]["zero_data_slack"].as_f64().unwrap(), 0.0);

    let out = curvlab(&["verify-lemmas", "--n", "8", "--m", "3"]);
    assert_eq!(out.status.code(), Some(2));

    let (code, r) = json_report(&["verify-lemmas", "--n", "8", "--m", "3", "--force-coefficient", "--trials", "2000"]);
    assert_eq!(code, 0);
    assert_eq!(r["payload"]["feasible"], false);
    let flips = r["payload"]["expected_sign_flip"].as_array().unwrap();
    assert!(!flips.is_empty());
    assert!(flips.iter().all(|w| w["value"].as_f64().unwrap() < 0.0));
}

#[test]
fn variation_check_defaults_pass() {
    let (code, r) = json_report(&["variation-check", "--resolution", "32", "--trials", "2"]);
    assert_eq!(code, 0, "{}", r["checks"]);
    assert_self_consistent(&r);
    assert!((r["payload"]["equator_lambda"].as_f64().unwrap() + 2.0).abs() < 1e-2);
    assert!(r["payload"]["flat_graph_first_variation"].as_f64().unwrap() < 1e-12);
}

#[test]
fn slicing_demo_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let c = dir.path().join("c.json");
    let run = |extra: &[&str]| {
        let out = curvlab(&[&["slicing-demo", "--resolution", "24", "--seed", "3", "--format", "json"], extra].concat());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    };
    run(&["--output", a.to_str().unwrap()]);
    run(&["--output", b.to_str().unwrap(), "--threads", "1"]);
    let read = |p: &std::path::Path| -> Value { serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap() };
    let (ra, rb) = (read(&a), read(&b));
    assert_eq!(serde_json::to_string(&ra["payload"]).unwrap(), serde_json::to_string(&rb["payload"]).unwrap());
    assert_self_consistent(&ra);

    // the embedded config re-runs the same computation
    let out = curvlab(&["slicing-demo", "--config", a.to_str().unwrap(), "--output", c.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(read(&c)["payload"], ra["payload"]);
    assert!(ra["payload"]["terms"]["main_integral"].as_f64().unwrap() <= 5e-4);
}

#[test]
fn flat_slicing_terms_vanish() {
    let dir = tempfile::tempdir().unwrap();
    let (code, r) = json_report(&["slicing-demo", "--amplitude", "0", "--resolution", "16", "--dump-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code, 0, "{}", r["checks"]);
    let t = &r["payload"]["terms"];
    assert!(t["main_integral"].as_f64().unwrap().abs() < 1e-12);
    for key in ["r", "e", "g", "cm"] {
        assert!(t["integrated"][key].as_f64().unwrap().abs() < 1e-12, "{key}");
    }
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 4);
}

#[test]
fn config_errors_exit_with_two() {
    assert_eq!(curvlab(&["curvature", "--model", "sphere(0"]).status.code(), Some(2));
    assert_eq!(curvlab(&["certify", "--m", "9"]).status.code(), Some(2));
    assert_eq!(curvlab(&["slicing-demo", "--model", "sphere(3,1.0)"]).status.code(), Some(2));
    assert_eq!(curvlab(&["curvature", "--tolerance-scale", "-1"]).status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "colour = red\n").unwrap();
    assert_eq!(curvlab(&["curvature", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn thread_count_from_environment() {
    let out = Command::new(env!("CARGO_BIN_EXE_curvlab")).env("CURVLAB_THREADS", "2").args(["dimension-table", "--format", "json"]).output().unwrap();
    assert!(out.status.success());
    let bad = Command::new(env!("CARGO_BIN_EXE_curvlab")).env("CURVLAB_THREADS", "many").args(["dimension-table"]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
