use std::process::Command;

fn studyhook(dir: &std::path::Path) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_studyhook"));
    cmd.current_dir(dir).env_remove("STUDYHOOK_CONFIG").env_remove("STUDYHOOK_STORE");
    cmd
}

#[test]
fn seed_is_reproducible_and_report_reads_it() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = studyhook(dir.path()).args(["--store", name, "seed", "--students", "4", "--weeks", "2", "--seed", "3"]).output().unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::read(dir.path().join(name)).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));

    let report = studyhook(dir.path()).args(["--store", "a.json", "report", "--student", "stu-001"]).output().unwrap();
    assert!(report.status.success());
    let value: serde_json::Value = serde_json::from_slice(&report.stdout).unwrap();
    assert_eq!(value["student"]["student_id"], "stu-001");
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = studyhook(dir.path()).args(["--store", "none.json", "report", "--student", "stu-001"]).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&missing.stderr).starts_with("error:"));

    studyhook(dir.path()).args(["--store", "s.json", "seed", "--students", "2", "--weeks", "1"]).output().unwrap();
    let unknown = studyhook(dir.path()).args(["--store", "s.json", "report", "--student", "nobody"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(1));
}

#[test]
fn simulate_prints_metrics_for_each_profile() {
    let dir = tempfile::tempdir().unwrap();
    let out = studyhook(dir.path()).args(["simulate", "--students", "3", "--weeks", "2", "--seed", "1"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let value: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(value["students"].as_array().unwrap().len(), 3);
}
