use std::fs;
use std::path::Path;
use std::process::Command;

use transfer_bo::run::{read_trace_csv, TRACE_HEADER};
use transfer_bo::{run_experiment, ExperimentConfig};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_transfer-bo"))
}

fn forrester_config(models: &str, iterations: usize, seeds: &str) -> String {
    format!(
        r#"
n_s = 1
points_per_source = 8
sigma_s = 0.1
sigma_t = 0.1
models = [{models}]
iterations = {iterations}
seeds = {seeds}
restarts = 2
timing = false

[benchmark]
family = "forrester"
"#
    )
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn single_gpbo_run_writes_two_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, forrester_config("\"gpbo\"", 2, "1")).unwrap();
    let out = dir.path().join("out");
    let status = bin().arg("run").arg(&cfg_path).arg("--out").arg(&out).arg("--jobs").arg("1").output().unwrap().status;
    assert!(status.success());
    let text = fs::read_to_string(out.join("traces.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), TRACE_HEADER);
    assert_eq!(text.lines().count(), 3);
    let rows = read_trace_csv(&out.join("runs/gpbo_task0_seed0.csv")).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r.adtm.is_some_and(|a| (0.0..=1.0).contains(&a))));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["models"][0]["mean_regret"].as_array().unwrap().len(), 2);
    assert_eq!(summary["models"][0]["sem_regret"][0], 0.0);
}

#[test]
fn reruns_are_byte_identical_and_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::from_toml(&forrester_config("\"gpbo\", \"shgp\", \"hgp\"", 3, "2")).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let first = run_experiment(&cfg, &a, 2).unwrap();
    assert_eq!(first.total, 6);
    assert_eq!(first.resumed, 0);
    run_experiment(&cfg, &b, 1).unwrap();
    for name in ["traces.csv", "summary.json", "runs/shgp_task0_seed1.csv"] {
        assert_eq!(read(&a.join(name)), read(&b.join(name)), "{name}");
    }
    let again = run_experiment(&cfg, &a, 2).unwrap();
    assert_eq!(again.resumed, 6);
    assert_eq!(read(&a.join("traces.csv")), read(&b.join("traces.csv")));
}

#[test]
fn adding_a_model_keeps_other_runs() {
    let dir = tempfile::tempdir().unwrap();
    let one = ExperimentConfig::from_toml(&forrester_config("\"mhgp\"", 2, "1")).unwrap();
    let two = ExperimentConfig::from_toml(&forrester_config("\"gpbo\", \"mhgp\"", 2, "1")).unwrap();
    run_experiment(&one, &dir.path().join("one"), 1).unwrap();
    run_experiment(&two, &dir.path().join("two"), 1).unwrap();
    let p = "runs/mhgp_task0_seed0.csv";
    assert_eq!(read(&dir.path().join("one").join(p)), read(&dir.path().join("two").join(p)));
}

#[test]
fn discrete_benchmark_runs() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("task_id,a,b,objective\n");
    for t in 0..3 {
        for i in 0..12 {
            let (a, b) = (i as f64 / 11.0, ((i * 7) % 12) as f64 / 11.0);
            csv.push_str(&format!("t{t},{a},{b},{}\n", (a - 0.3).powi(2) + (b - 0.6).powi(2) + 0.1 * t as f64));
        }
    }
    fs::write(dir.path().join("table.csv"), csv).unwrap();
    let cfg = r#"
n_s = 2
points_per_source = 6
sigma_s = 0.0
sigma_t = 0.0
models = ["gpbo", "mhgp", "wsgp"]
iterations = 4
seeds = 2
restarts = 2

[benchmark]
file = "table.csv"
target_task = "t1"
"#;
    fs::write(dir.path().join("exp.toml"), cfg).unwrap();
    let cfg = ExperimentConfig::load(&dir.path().join("exp.toml")).unwrap();
    let out = run_experiment(&cfg, &dir.path().join("out"), 2).unwrap();
    assert_eq!(out.failed, 0);
    let rows = read_trace_csv(&dir.path().join("out/traces.csv")).unwrap();
    assert_eq!(rows.len(), 3 * 2 * 4);
    // candidates are never proposed twice
    for seed in 0..2 {
        let mut xs: Vec<&str> = rows.iter().filter(|r| r.seed == seed && r.model.name() == "wsgp").map(|r| r.x_json.as_str()).collect();
        let n = xs.len();
        xs.sort_unstable();
        xs.dedup();
        assert_eq!(xs.len(), n);
    }
}

#[test]
fn verify_scope_none_is_empty_success() {
    let out = bin().args(["verify", "--scope", "none"]).output().unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("0 checks, 0 failed"));
}

#[test]
fn verify_rejects_unknown_scope() {
    let out = bin().args(["verify", "--scope", "everything"]).output().unwrap();
    assert!(!out.status.success());
}

#[test]
fn timing_with_empty_kinds_fails() {
    let out = bin().args(["timing", "kinds=;source_points=10;target_points=5;reps=3"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("at least one model kind"));
}

#[test]
fn timing_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["timing", "kinds=mhgp;source_points=10,20;target_points=5;reps=3", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "kind,stage,n_s,N_s,N_t,rep,ms");
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
    assert!(fs::read_to_string(dir.path().join("timing_slopes.csv")).unwrap().contains("mhgp,target-train"));
}

#[test]
fn families_list_prints_every_family() {
    let out = bin().args(["families", "list"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for f in ["forrester", "alpine", "branin", "hartmann3", "hartmann6"] {
        assert!(text.contains(f), "{f}");
    }
}

#[test]
fn jobs_fall_back_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("exp.toml");
    fs::write(&cfg_path, forrester_config("\"gpbo\"", 1, "1")).unwrap();
    let out = bin()
        .arg("run")
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.path().join("o"))
        .env("TRANSFER_BO_JOBS", "0")
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--jobs"));
}
