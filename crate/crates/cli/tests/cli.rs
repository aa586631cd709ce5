use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_proxregime"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], out: &Path) {
    let o = run(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_writes_the_requested_rows() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["simulate", "--scenario", "2", "--n-train", "150", "--n-test", "40", "--seed", "3"], dir.path());
    let train = fs::read_to_string(dir.path().join("train.csv")).unwrap();
    let test = fs::read_to_string(dir.path().join("test.csv")).unwrap();
    assert_eq!(train.lines().count(), 151);
    assert_eq!(test.lines().count(), 41);
    assert!(train.starts_with("x1,x2,a,z,w,y"));
}

#[test]
fn experiment_values_do_not_depend_on_parallelism() {
    let one = tempfile::tempdir().unwrap();
    let eight = tempfile::tempdir().unwrap();
    let args = ["experiment", "--scenario", "1", "--reps", "5", "--seed", "7", "--n-train", "300", "--n-test", "2000", "--pilot-n", "0"];
    let with = |p: &'static str| args.iter().copied().chain(["--parallelism", p]).collect::<Vec<_>>();
    ok(&with("1"), one.path());
    ok(&with("8"), eight.path());
    let a = fs::read(one.path().join("values.csv")).unwrap();
    let b = fs::read(eight.path().join("values.csv")).unwrap();
    assert_eq!(a, b);
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 1 + 5 * 6);
    let info: serde_json::Value = serde_json::from_str(&fs::read_to_string(one.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(info["replication_seeds"], serde_json::json!([8, 9, 10, 11, 12]));
    assert_eq!(info["config_sha256"].as_str().unwrap().len(), 64);
    assert!(one.path().join("summary.csv").exists());
}

#[test]
fn fitting_learning_and_evaluation_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(&["simulate", "--n-train", "300", "--n-test", "10", "--seed", "5"], p);
    let data = p.join("train.csv");
    let data = data.to_str().unwrap();
    ok(&["fit-bridges", "--data", data, "--seed", "5"], p);
    let bridges: serde_json::Value = serde_json::from_str(&fs::read_to_string(p.join("bridges.json")).unwrap()).unwrap();
    assert!(bridges.get("h").is_some());
    ok(&["learn", "--data", data, "--seed", "5"], p);
    for f in ["d_z.json", "d_w.json", "d_union.json", "d_zw.json"] {
        assert!(p.join("regimes").join(f).exists(), "{f}");
    }
    ok(&["evaluate", "--n-train", "300", "--n-test", "2000", "--seed", "5", "--pilot-n", "0"], p);
    let values = fs::read_to_string(p.join("values.csv")).unwrap();
    assert_eq!(values.lines().count(), 7);
    assert!(p.join("run.json").exists());
}

#[test]
fn unknown_scenario_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["simulate", "--scenario", "9", "--n-train", "10", "--n-test", "10"], dir.path());
    assert!(!o.status.success());
    assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
}
