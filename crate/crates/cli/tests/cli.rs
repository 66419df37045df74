use std::path::PathBuf;
use std::process::{Command, Output};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn rmi(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmi")).args(args).current_dir(root()).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn sta_memcpy_left_fails_at_line_3() {
    let o = rmi(&["sta", "corpus/memcpy_left.s"]);
    assert_eq!(o.status.code(), Some(2));
    let out = stdout(&o);
    assert!(out.contains("past line 3"), "{out}");
    assert!(out.contains("len == 0"), "{out}");
}

#[test]
fn sta_memcpy_right_passes() {
    let o = rmi(&["sta", "corpus/memcpy_right.s"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn sta_json_names_leaked_registers() {
    let o = rmi(&["--json", "sta", "corpus/memcpy_left.s"]);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["verdict"], "fail");
    let regs: Vec<&str> = v["leaked_initial_registers"].as_array().unwrap().iter().map(|l| l["register"].as_str().unwrap()).collect();
    assert!(regs.contains(&"a1") && regs.contains(&"a2"));
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(rmi(&["frobnicate"]).status.code(), Some(64));
    assert_eq!(rmi(&["trace"]).status.code(), Some(64));
    assert_eq!(rmi(&["ni", "corpus/memcpy_left.s", "--observer", "shm-nope"]).status.code(), Some(64));
    assert_eq!(rmi(&["cache", "--table", "x.json", "--ways", "0"]).status.code(), Some(64));
    assert_eq!(rmi(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_an_error() {
    assert_eq!(rmi(&["sta", "does/not/exist.s"]).status.code(), Some(3));
}

#[test]
fn corpus_verify_passes_and_is_deterministic() {
    let a = rmi(&["--json", "corpus-verify"]);
    let b = rmi(&["--json", "corpus-verify"]);
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let d = rmi(&["--json", "corpus-verify", "--dir", "corpus"]);
    assert_eq!(a.stdout, d.stdout);
}

#[test]
fn corpus_verify_reports_a_broken_expectation() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::copy(root().join("corpus/memcpy_right.s"), dir.path().join("m.s")).unwrap();
    let side = std::fs::read_to_string(root().join("corpus/memcpy_right.json")).unwrap();
    let side = side.replacen(r#""outcome": "pass""#, r#""outcome": "fail""#, 1);
    std::fs::write(dir.path().join("m.json"), side).unwrap();
    let o = rmi(&["corpus-verify", "--dir", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL memcpy-right"));
}

#[test]
fn ni_spectre_direct_and_safe() {
    assert_eq!(rmi(&["ni", "corpus/spectre_v1.s", "--observer", "shm-spec"]).status.code(), Some(1));
    assert_eq!(rmi(&["ni", "corpus/spectre_v1.s", "--observer", "safe"]).status.code(), Some(0));
    let o = rmi(&["ni", "corpus/memcpy_left.s", "--premise", "shm-seq", "--observer", "shm-stl", "--sample", "3000", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn trace_with_state_file() {
    let dir = tempfile::tempdir().unwrap();
    let prog = dir.path().join("p.s");
    std::fs::write(&prog, "  beq x0, x0, e\n  lbu a0, 0(a1)\ne:\n").unwrap();
    let st = dir.path().join("s.json");
    std::fs::write(&st, r#"{"regs": {"a1": 32768}}"#).unwrap();
    let p = prog.to_str().unwrap();
    let s = st.to_str().unwrap();
    let o = rmi(&["trace", p, "--state", s, "--contract", "shm-spec"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.contains("2 trace(s)") && out.contains("shared 0x8000, rollback"), "{out}");
    let o = rmi(&["trace", p, "--state", s, "--mode", "safe"]);
    assert!(stdout(&o).contains("1 trace(s)"));
}

#[test]
fn cache_flush_costs() {
    let o = rmi(&["--json", "cache", "--table", "layouts/enclave_split.json", "--show-flush-cost", "--verify-flush"]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let rows = v["regions"].as_array().unwrap();
    assert_eq!(rows[2]["flush_cost"], 4096);
    assert_eq!(rows[10]["flush_cost"], 16);
    assert!(rows.iter().all(|r| r["remaining_after_flush"] == 0));
}

#[test]
fn cache_rejects_overlap() {
    let dir = tempfile::tempdir().unwrap();
    let t = dir.path().join("t.json");
    std::fs::write(&t, r#"{"0": {"base": 0, "size": 8}, "1": {"base": 4, "size": 8}}"#).unwrap();
    let o = rmi(&["cache", "--table", t.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("overlapping"));
}
