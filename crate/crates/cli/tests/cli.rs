use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pose-sim"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(format!("{name}.json"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn run_into(name: &str, dir: &Path) -> Output {
    bin().arg("run").arg(scenario(name)).arg("--out").arg(dir).env_remove("POSE_SIM_SEED").output().unwrap()
}

#[test]
fn honest_run_writes_trace_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into("rps_honest", dir.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["schema_version"], 1);
    assert_eq!(m["metrics"]["onchain"], 2);
    assert_eq!(m["violations"].as_array().unwrap().len(), 0);
    assert!(dir.path().join("trace.jsonl").exists());
}

#[test]
fn silent_executor_run_records_one_challenge() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_into("executor_silent", dir.path());
    assert_eq!(code(&o), 0);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metrics.json")).unwrap()).unwrap();
    let c = &m["metrics"]["contracts"]["0"];
    assert_eq!(c["executor_challenges"], 1);
    assert_eq!(c["challenge_txs"], 2);
}

#[test]
fn replay_accepts_own_output_and_rejects_damage() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into("watchdog_silent", dir.path())), 0);
    let path = dir.path().join("trace.jsonl");
    let o = bin().arg("replay").arg(&path).output().unwrap();
    assert_eq!(code(&o), 0);

    let text = fs::read_to_string(&path).unwrap();
    // flip one hex digit inside a block hash
    let at = text.find("\"hash\":\"").unwrap() + 8;
    let mut bytes = text.clone().into_bytes();
    bytes[at] = if bytes[at] == b'0' { b'1' } else { b'0' };
    let flipped = dir.path().join("flipped.jsonl");
    fs::write(&flipped, bytes).unwrap();
    assert_eq!(code(&bin().arg("replay").arg(&flipped).output().unwrap()), 1);

    let cut = dir.path().join("cut.jsonl");
    let lines: Vec<&str> = text.lines().collect();
    fs::write(&cut, lines[..lines.len() / 2].join("\n")).unwrap();
    assert_eq!(code(&bin().arg("replay").arg(&cut).output().unwrap()), 2);
}

#[test]
fn seed_override_changes_the_trace() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(code(&run_into("rps_honest", a.path())), 0);
    let o = bin()
        .arg("run")
        .arg(scenario("rps_honest"))
        .arg("--out")
        .arg(b.path())
        .env("POSE_SIM_SEED", "12345")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(b.path().join("metrics.json")).unwrap()).unwrap();
    assert_eq!(m["seed"], 12345);
    assert_ne!(fs::read(a.path().join("trace.jsonl")).unwrap(), fs::read(b.path().join("trace.jsonl")).unwrap());

    let o = bin().arg("check").arg(scenario("rps_honest")).env("POSE_SIM_SEED", "x").output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn config_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{ not json").unwrap();
    assert_eq!(code(&bin().arg("run").arg(&bad).output().unwrap()), 2);
    assert_eq!(code(&bin().arg("check").arg(&bad).output().unwrap()), 2);
    assert_eq!(code(&bin().arg("check").arg(scenario("sidechain")).output().unwrap()), 0);
    assert_eq!(code(&bin().args(["analyze", "10", "3", "11"]).output().unwrap()), 2);
    assert_eq!(code(&bin().args(["analyze", "10", "3", "2", "--bogus"]).output().unwrap()), 2);
}

#[test]
fn analyze_prints_the_worked_numbers() {
    let o = bin().args(["--jobs", "2", "analyze", "100", "70", "7"]).output().unwrap();
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("epsilon  0.925111968339"), "{}", stdout(&o));

    // flags may come before the positionals
    let o = bin().args(["analyze", "--json", "--contracts", "40000000", "10000", "1000", "11"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["no_crash"].as_f64().unwrap() > 0.99);

    let o = bin().args(["analyze", "100", "70", "7", "--trials", "200000", "--seed", "4", "--json"]).output().unwrap();
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let mc = &v["monte_carlo"];
    assert_eq!(mc["trials"], 200000);
    assert!(mc["lo"].as_f64().unwrap() <= v["crash"].as_f64().unwrap());
}

#[test]
fn sweep_writes_csv_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("grid.json");
    fs::write(&grid, r#"{"n":[100],"byzantine_percent":[10,50],"s":[3,7],"contracts":[1,1000]}"#).unwrap();
    let csv = dir.path().join("out.csv");
    let o = bin().arg("sweep").arg("--grid").arg(&grid).arg("--out").arg(&csv).output().unwrap();
    assert_eq!(code(&o), 0);
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 8);
    assert!(text.starts_with("n,m,s,contracts,epsilon,no_crash"));

    let o = bin().arg("sweep").arg("--grid").arg(&grid).args(["--format", "json"]).output().unwrap();
    let rows: Vec<serde_json::Value> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(rows.len(), 8);
}

#[test]
fn batch_runs_get_one_directory_each() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["--jobs", "2", "run"])
        .arg(scenario("rps_honest"))
        .arg(scenario("escrow_payout"))
        .arg("--out")
        .arg(dir.path())
        .env_remove("POSE_SIM_SEED")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(dir.path().join("rps_honest/trace.jsonl").exists());
    assert!(dir.path().join("escrow_payout/metrics.json").exists());
}
