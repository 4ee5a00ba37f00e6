use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ddnsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ddnsim")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

/// Flush-then-update trace over ids `0..n` with fixed eight-cell payloads.
fn update_trace(n: usize) -> String {
    (0..n).map(|i| format!("W {i} 0x123456\nF\nU {i} 0xabcdef\nT 1\n")).collect()
}

#[test]
fn print_config_shows_defaults() {
    let o = ddnsim(&["--print-config"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for line in [
        "t_read_us = 49",
        "t_program_us = 600",
        "t_gen_us = 100",
        "t_erase_us = 4000",
        "bits_per_cell = 3",
        "nop_limit = 4",
        "device_kind = non-overwritable",
    ] {
        assert!(text.lines().any(|l| l == line), "missing {line:?} in\n{text}");
    }
}

#[test]
fn default_costs_on_update_trace() {
    let dir = tempfile::tempdir().unwrap();
    let trace = write(dir.path(), "t.trace", &update_trace(8));
    let o = ddnsim(&["--trace", &trace, "--policy", "ddn-random,erase-based,mark-only"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("POLICY,DELETIONS,RD,WR,GEN,ERASE,GC,TOTAL_US,REMANENCE"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    let ddn = &rows[0];
    assert_eq!(ddn[0], "DdnRandom");
    assert_eq!(ddn[1], "8");
    assert_eq!(&ddn[2..8], ["49.000", "600.000", "100.000", "0.000", "0.000", "5992"]);
    let erase = &rows[1];
    assert_eq!(erase[0], "EraseBased");
    assert!(erase[7].parse::<u64>().unwrap() >= 8 * 4000);
    assert_eq!(erase[8], "0.000000");
    assert_eq!(rows[2][0], "MarkOnly");
    assert_eq!(rows[2][7], "0");
    assert_eq!(rows[2][8], "1.000000");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.jsonl");
    let b = dir.path().join("b.jsonl");
    for out in [&a, &b] {
        let o = ddnsim(&["--synthetic", "200", "--seed", "5", "--format", "jsonl", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stdout.is_empty());
    }
    let a = fs::read(a).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, fs::read(b).unwrap());
    let first = std::str::from_utf8(a.split(|c| *c == b'\n').next().unwrap()).unwrap();
    let record: serde_json::Value = serde_json::from_str(first).unwrap();
    assert_eq!(record.as_object().unwrap().len(), 10);
    let keys = ["tick", "cache_id", "policy", "rd_us", "wr_us", "gen_us", "erase_us", "gc_us", "residual_cells", "slot_cells"];
    let positions: Vec<usize> = keys.iter().map(|k| first.find(&format!("\"{k}\":")).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]), "{first}");
}

#[test]
fn config_file_and_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.cfg", "# small device\nblocks = 4\npolicies = mark-only\nformat = jsonl\n");
    let o = ddnsim(&["--config", &cfg, "--print-config", "--seed", "9", "--format", "csv"]);
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("blocks = 4\n"));
    assert!(text.contains("policies = MarkOnly\n"));
    assert!(text.contains("seed = 9\n"));
    assert!(text.contains("format = csv\n"));
}

#[test]
fn error_classes_have_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad_cfg = write(dir.path(), "bad.cfg", "colour = red\n");
    let good = write(dir.path(), "good.trace", &update_trace(1));
    let bad_trace = write(dir.path(), "bad.trace", "W 1 0x12\n");
    let unknown = write(dir.path(), "unknown.trace", "U 1 0x123456\n");
    let tiny = write(dir.path(), "tiny.cfg", "blocks = 1\npages_per_block = 1\nreclaim_on_full = false\n");
    let full = write(dir.path(), "full.trace", "W 1 0x000000\nW 2 0x000000\nW 3 0x000000\nF\n");

    let code = |args: &[&str]| ddnsim(args).status.code().unwrap();
    assert_eq!(code(&["--config", &bad_cfg, "--trace", &good]), 3);
    assert_eq!(code(&["--policy", "wipe", "--trace", &good]), 3);
    assert_eq!(code(&["--trace", &bad_trace]), 4);
    assert_eq!(code(&["--trace", &unknown]), 4);
    assert_eq!(code(&["--config", &tiny, "--trace", &full]), 5);
    assert_eq!(code(&["--trace", dir.path().join("missing").to_str().unwrap()]), 7);
    assert_eq!(code(&["--trace", &good, "--synthetic", "3"]), 2);

    let o = ddnsim(&["--trace", &bad_trace]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("ddnsim: ") && err.contains("line 1"), "{err}");
}
