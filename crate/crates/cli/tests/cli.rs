use std::path::Path;
use std::process::{Command, Output};

fn gps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gps")).args(args).env_remove("GPS_THREADS").output().expect("spawn gps")
}

fn two_point_config(dir: &Path) -> String {
    let p = dir.join("tp.json");
    std::fs::write(&p, r#"{"kernel": {"two_point": {"p": 0.5, "q": 0.25}}, "geometry": {"gamma": 2.0}}"#).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn fe_reports_the_two_point_tilt() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_point_config(dir.path());
    let o = gps(&["--config", &cfg, "--format", "json", "fe"]);
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let nh = rows[0]["nh"].as_f64().unwrap();
    assert!((nh - 0.846).abs() < 1e-3, "nh = {nh}");
    let f = rows[0]["f"].as_f64().unwrap();
    assert!((f - (1.0 + 0.25f64.ln())).abs() < 1e-9, "f = {f}");
}

#[test]
fn zc_of_a_two_by_two_box() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_point_config(dir.path());
    let o = gps(&["--config", &cfg, "--format", "jsonl", "zc", "--N", "2", "--M", "2"]);
    let row: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    // only two (1,1) loops fit: (e K(2))^2 with K(2) = 1/2
    let want = 2.0 + 0.25f64.ln();
    assert!((row["log_zc"].as_f64().unwrap() - want).abs() < 1e-12);
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(gps(&["zc", "--bogus"]).status.code(), Some(64));
    assert_eq!(gps(&["nonsense"]).status.code(), Some(64));
    assert_eq!(gps(&["--help"]).status.code(), Some(0));
}

#[test]
fn infeasible_event_sequences_exit_2() {
    let o = gps(&["events", "--N", "100", "--M", "300", "--samples", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("infeasible"));
}

#[test]
fn bad_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    std::fs::write(&p, r#"{"kernel": "delta", "n_grid": []}"#).unwrap();
    assert_eq!(gps(&["--config", p.to_str().unwrap(), "fe"]).status.code(), Some(1));
}

#[test]
fn out_and_format_are_honoured() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("law.csv");
    let o = gps(&["--out", out.to_str().unwrap(), "law", "--s-max", "5"]);
    assert!(o.status.success());
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("s,k"));
    assert_eq!(lines.count(), 4);

    let o = gps(&["--format", "jsonl", "law", "--s-max", "3"]);
    let first: serde_json::Value = serde_json::from_str(stdout(&o).lines().next().unwrap()).unwrap();
    assert_eq!(first["s"], 2);
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = two_point_config(dir.path());
    let run = |seed: &str| gps(&["--config", &cfg, "--seed", seed, "--samples", "50", "sample", "--N", "12", "--M", "12"]);
    let a = stdout(&run("7"));
    assert_eq!(a, stdout(&run("7")));
    assert_ne!(a, stdout(&run("8")));
    assert_eq!(a.lines().count(), 51);
}

#[test]
fn exact_and_naive_hitting_agree() {
    let o = gps(&["--format", "json", "--samples", "200000", "hitprob", "--N", "40", "--M", "40", "--method", "all"]);
    let rows: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let exact = rows[0]["p"].as_f64().unwrap();
    let naive = rows[1]["p"].as_f64().unwrap();
    let se = rows[1]["stderr"].as_f64().unwrap();
    assert!((exact - naive).abs() < 5.0 * se, "exact {exact} naive {naive} se {se}");
}
