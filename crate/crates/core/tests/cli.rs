mod common;

use std::path::Path;
use std::process::{Command, Output};

fn tileforge(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tileforge")).args(args).current_dir(cwd).output().unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn config() -> String {
    common::root().join("configs/u200.toml").display().to_string()
}

fn kernel(name: &str) -> String {
    common::kernel_path(name).display().to_string()
}

fn write_config(dir: &Path, dsp: u64, mem: u64) -> String {
    let base = std::fs::read_to_string(config()).unwrap();
    let p = dir.join("platform.toml");
    let body = base
        .replace("dsp_available = 6840", &format!("dsp_available = {dsp}"))
        .replace("mem_bytes = 7.2e6", &format!("mem_bytes = {mem}"));
    std::fs::write(&p, body).unwrap();
    p.display().to_string()
}

#[test]
fn unknown_subcommand_prints_usage() {
    let dir = tempfile::tempdir().unwrap();
    let out = tileforge(&["frobnicate"], dir.path());
    assert_eq!(out.status.code(), Some(64));
    assert!(text(&out.stderr).contains("Usage"));
    let out = tileforge(&["--help"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    for sub in ["parse", "deps", "space", "solve", "emit", "verify", "optimize"] {
        assert!(text(&out.stdout).contains(sub), "{sub} missing from help");
    }
}

#[test]
fn missing_config_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = tileforge(&["optimize", &kernel("gemm_small"), "--config", "absent.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("config not found"));
}

#[test]
fn staged_run_matches_optimize() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config();
    for name in ["gemm_small", "bicg"] {
        let one = d.join(format!("{name}_one"));
        let two = d.join(format!("{name}_two"));
        let out = tileforge(
            &["optimize", &kernel(name), "--config", &cfg, "--out-dir", one.to_str().unwrap(), "--dump-deps", "--dump-space"],
            d,
        );
        assert!(out.status.success(), "{}", text(&out.stderr));
        assert!(text(&out.stdout).contains("modeled"));
        std::fs::create_dir_all(&two).unwrap();
        let p = |f: &str| two.join(f).display().to_string();
        assert!(tileforge(&["deps", &kernel(name), "-o", &p("deps.json")], d).status.success());
        assert!(tileforge(&["space", &kernel(name), "--config", &cfg, "-o", &p("space.json")], d).status.success());
        assert!(tileforge(&["solve", "--space", &p("space.json"), "--config", &cfg, "-o", &p("solution.json")], d).status.success());
        let out = tileforge(
            &["emit", "--space", &p("space.json"), "--config", &cfg, "--solution", &p("solution.json"), "--out-dir", two.to_str().unwrap()],
            d,
        );
        assert!(out.status.success(), "{}", text(&out.stderr));
        let files = ["deps.json", "space.json", "solution.json", "report.json"]
            .map(String::from)
            .into_iter()
            .chain([format!("{name}_opt.c"), format!("{name}_harness.c")]);
        for f in files {
            let a = std::fs::read(one.join(&f)).unwrap();
            let b = std::fs::read(two.join(&f)).unwrap();
            assert!(a == b, "{name}: {f} differs between staged and one-shot runs");
        }
    }
}

#[test]
fn ir_json_round_trips_through_parse() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ir = d.join("ir.json");
    assert!(tileforge(&["parse", &kernel("doitgen"), "-o", ir.to_str().unwrap()], d).status.success());
    let a = tileforge(&["space", &kernel("doitgen")], d);
    let b = tileforge(&["space", "--ir-json", ir.to_str().unwrap()], d);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn infeasible_platform_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 6840, 0);
    let out = tileforge(&["optimize", &kernel("gemm_small"), "--config", &cfg, "--out-dir", "o"], dir.path());
    assert_eq!(out.status.code(), Some(2), "{}", text(&out.stderr));
    assert!(text(&out.stderr).contains("infeasible"));
}

#[test]
fn pins_and_trace_are_honored() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let trace = d.join("trace.jsonl");
    let out = tileforge(
        &[
            "optimize",
            &kernel("gemm_small"),
            "--config",
            &config(),
            "--out-dir",
            "o",
            "--pin",
            "S1.perm=k,j,i",
            "--pin",
            "S1.cache.A=after-k0",
            "--trace",
            trace.to_str().unwrap(),
        ],
        d,
    );
    assert!(out.status.success(), "{}", text(&out.stderr));
    let sol: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("o/solution.json")).unwrap()).unwrap();
    let s1 = sol["bodies"].as_array().unwrap().iter().find(|b| b["id"] == "S1").unwrap();
    assert_eq!(s1["perm"], serde_json::json!(["k", "j", "i"]));
    assert_eq!(s1["cache"]["A"], "after-k0");
    let lines: Vec<serde_json::Value> =
        std::fs::read_to_string(&trace).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.first().unwrap()["event"], "start");
    assert_eq!(lines.last().unwrap()["event"], "done");
    let bad = tileforge(&["optimize", &kernel("gemm_small"), "--config", &config(), "--pin", "S1.perm=i,i,i"], d);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn verify_flags_tampered_solutions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = config();
    assert!(tileforge(&["optimize", &kernel("gemm_small"), "--config", &cfg, "--out-dir", "o"], d).status.success());
    let ok = tileforge(
        &["verify", "--kernel", &kernel("gemm_small"), "--config", &cfg, "--solution", "o/solution.json", "--design", "o/gemm_small_opt.c"],
        d,
    );
    assert_eq!(ok.status.code(), Some(0), "{}", text(&ok.stdout));
    let mut sol: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("o/solution.json")).unwrap()).unwrap();
    sol["objective"] = serde_json::json!(sol["objective"].as_u64().unwrap() - 1);
    std::fs::write(d.join("bad.json"), sol.to_string()).unwrap();
    let bad = tileforge(&["verify", "--kernel", &kernel("gemm_small"), "--config", &cfg, "--solution", "bad.json"], d);
    assert_eq!(bad.status.code(), Some(1));
    assert!(text(&bad.stdout).contains("OBJECTIVE"));
    let design = std::fs::read_to_string(d.join("o/gemm_small_opt.c")).unwrap();
    std::fs::write(d.join("bad.c"), design.replacen("#pragma HLS pipeline", "// ", 1)).unwrap();
    let bad = tileforge(
        &["verify", "--kernel", &kernel("gemm_small"), "--config", &cfg, "--solution", "o/solution.json", "--design", "bad.c"],
        d,
    );
    assert_eq!(bad.status.code(), Some(1));
    assert!(text(&bad.stdout).contains("PRAGMA"));
}

#[test]
fn emitted_harness_passes() {
    if !common::have_cc() {
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(tileforge(&["optimize", &kernel("two_mm"), "--config", &config(), "--out-dir", "o", "--budget", "2"], d).status.success());
    common::run_harness(&d.join("o"), "two_mm_harness.c", 1..4).unwrap();
}
