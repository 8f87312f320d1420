use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_interconnect"))
}

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn finality_table_single_row() {
    let o = bin()
        .args(["finality-table", "--q", "0.1", "--interval", "10", "--epsilon", "0.001"])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), "q,T,epsilon,z,advisory_seconds\n0.1,10,0.001,5,50\n");
}

#[test]
fn finality_table_levels_and_halt() {
    let o = bin()
        .args(["finality-table", "--q", "0.3", "--interval", "600", "--level", "LOW"])
        .output()
        .unwrap();
    assert_eq!(stdout(&o).lines().nth(1), Some("0.3,600,0.01,16,9600"));

    let o = bin()
        .args(["finality-table", "--q", "0.55", "--interval", "10"])
        .output()
        .unwrap();
    assert!(o.status.success());
    assert_eq!(stdout(&o).lines().nth(1), Some("0.55,10,0.001,halted,"));

    let o = bin()
        .args(["finality-table", "--q", "0.1", "--interval", "10", "--level", "EXTREME"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn finality_table_from_scenario() {
    let o = bin()
        .args(["finality-table", "--scenario"])
        .arg(scenario("double_spend.toml"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<_> = stdout(&o).lines().skip(1).map(str::to_owned).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.contains(&"0.3,10,0.01,16,160".to_string()), "{rows:?}");
}

#[test]
fn validate_accepts_shipped_scenarios() {
    for entry in std::fs::read_dir(scenario("")).unwrap() {
        let path = entry.unwrap().path();
        let o = bin().arg("validate").arg("--scenario").arg(&path).output().unwrap();
        assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
        assert!(stdout(&o).starts_with("ok:"));
    }
}

#[test]
fn validate_reports_every_problem_with_lines() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "seed = 1\nduration = 100.0\n\n[[chain]]\nname = \"A\"\nminers = 3\nblock_interval = 5.0\n\n\
         [[chain]]\nname = \"B\"\nminers = 3\nblock_interval = -1.0\n\n\
         [[traffic]]\nsource = \"A\"\ndest = \"B\"\ncount = 3\nstart = 0.0\n",
    )
    .unwrap();
    let o = bin().arg("validate").arg("--scenario").arg(&path).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("missing collaboration policy for A -> B"), "{err}");
    assert!(err.contains("line "), "{err}");
}

#[test]
fn missing_file_is_an_error() {
    let o = bin()
        .args(["validate", "--scenario", "/nonexistent/scenario.toml"])
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = bin()
        .arg("run")
        .arg("--scenario")
        .arg(scenario("fault_tolerance.toml"))
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["metrics.csv", "transfers.csv", "ledger.csv", "flags.csv", "finality.csv", "summary.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let summary: String = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 1"), "{summary}");
    assert_eq!(std::fs::read_to_string(out.join("ledger.csv")).unwrap().lines().count(), 181);
}

#[test]
fn run_output_dir_from_env_and_seed_override() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["run", "--seed", "42", "--scenario"])
        .arg(scenario("breaker.toml"))
        .env("INTERCONNECT_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = std::fs::read_to_string(dir.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"seed\": 42"), "{summary}");
}

#[test]
fn batch_mode_writes_trials() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin()
        .args(["run", "--trials", "3", "--scenario"])
        .arg(scenario("breaker.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("trials.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    let o = bin()
        .args(["run", "--trials", "0", "--scenario"])
        .arg(scenario("breaker.toml"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
}
