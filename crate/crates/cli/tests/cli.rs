use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mapdd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mapdd"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MAPDD_WORKERS")
        .output()
        .expect("binary runs")
}

fn gen(dir: &Path, name: &str, seed: &str) -> Output {
    mapdd(
        &["gen", "--tasks", "151", "--agents", "15", "--release", "dense", "--deadline", "short", "--seed", seed, "--out", name],
        dir,
    )
}

#[test]
fn gen_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "a.instance", "1").status.success());
    assert!(gen(dir.path(), "b.instance", "1").status.success());
    assert!(gen(dir.path(), "c.instance", "2").status.success());
    let a = fs::read(dir.path().join("a.instance")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b.instance")).unwrap());
    assert_ne!(a, fs::read(dir.path().join("c.instance")).unwrap());
    assert!(String::from_utf8(a).unwrap().starts_with("mapd-d instance v1\n"));
}

#[test]
fn gen_with_map_file() {
    let dir = tempfile::tempdir().unwrap();
    let map = "mapd-d map v1\n6 3\nE.T..T\nE.....\nE.T..T\n";
    fs::write(dir.path().join("warehouse.map"), map).unwrap();
    let out = mapdd(
        &["gen", "--map", "warehouse.map", "--tasks", "5", "--agents", "2", "--release", "sparse", "--deadline", "long", "--seed", "3", "--out", "i.instance"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("i.instance")).unwrap();
    assert!(text.lines().nth(1).unwrap().starts_with("map warehouse.map "));
    let out = mapdd(&["run", "--instance", "i.instance", "--algo", "dtp", "--alpha", "0.2"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn zero_agents_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mapdd(&["gen", "--agents", "0", "--release", "dense", "--deadline", "short", "--seed", "1"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tp_with_alpha_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "i.instance", "1").status.success());
    let out = mapdd(&["run", "--instance", "i.instance", "--algo", "tp", "--alpha", "0.3"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));
}

#[test]
fn missing_instance_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mapdd(&["run", "--instance", "nope.instance", "--algo", "tp"], dir.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn run_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "i1.instance", "4").status.success());
    let out = mapdd(
        &["run", "--instance", "i1.instance", "--algo", "dtpts", "--alpha", "0.1", "--swap", "--switch", "--seed", "7", "--trace", "t.jsonl", "--results", "r.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("r.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "instance_id,regime,algo,alpha,swap,switch,seed,cumulative_tardiness,failure_count,makespan,wall_ms,status"
    );
    let row: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(&row[..7], &["i1", "custom", "dtpts", "0.1", "true", "true", "7"]);
    assert!(row[7].parse::<u64>().is_ok());
    assert_eq!(row[11], "ok");

    let out = mapdd(&["validate", "--instance", "i1.instance", "--trace", "t.jsonl"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("violations=0"));
}

#[test]
fn corrupted_trace_fails_validation() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "i.instance", "5").status.success());
    assert!(mapdd(&["run", "--instance", "i.instance", "--algo", "tp", "--trace", "t.jsonl"], dir.path()).status.success());
    let trace = fs::read_to_string(dir.path().join("t.jsonl")).unwrap();
    let kept: Vec<&str> = trace.lines().filter(|l| !l.contains("\"kind\":\"pickup\"")).collect();
    fs::write(dir.path().join("bad.jsonl"), kept.join("\n")).unwrap();
    let out = mapdd(&["validate", "--instance", "i.instance", "--trace", "bad.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(5));
}

#[test]
fn liveness_cap_exits_with_trace() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "i.instance", "6").status.success());
    let out = mapdd(
        &["run", "--instance", "i.instance", "--algo", "tp", "--step-cap", "20", "--trace", "t.jsonl"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(4));
    assert!(dir.path().join("t.jsonl").exists());
}

#[test]
fn sweep_resumes_without_duplicates() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "sweep", "--out", "s.csv", "--seeds", "2", "--alphas", "0,0.1", "--regimes", "sparse-long", "--tasks", "20", "--workers", "2",
    ];
    assert!(mapdd(&args, dir.path()).status.success());
    let first = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(first.lines().count(), 1 + 2 * 2 * 4);

    // drop the last two rows, as if interrupted
    let truncated: Vec<&str> = first.lines().take(first.lines().count() - 2).collect();
    fs::write(dir.path().join("s.csv"), truncated.join("\n") + "\n").unwrap();
    assert!(mapdd(&args, dir.path()).status.success());
    let second = fs::read_to_string(dir.path().join("s.csv")).unwrap();
    assert_eq!(second.lines().count(), first.lines().count());
    let mut keys: Vec<String> = second.lines().skip(1).map(|l| l.split(',').take(7).collect::<Vec<_>>().join(",")).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), 16);

    let summary = fs::read_to_string(dir.path().join("s_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 4);
}

#[test]
fn bad_regime_in_sweep_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mapdd(&["sweep", "--out", "s.csv", "--regimes", "dense-medium"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}
