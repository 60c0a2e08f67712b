//! End-to-end checks of the mtl-lab binary: exit codes, diagnostics, and
//! output files.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mtl_lab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtl-lab"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

#[test]
fn landscape_run_exits_zero_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("race.cfg"),
        "suite = landscape\nmethods = ew\noptimizers = adam\nlr_list = 1.0\nbudget = 400\n",
    )
    .unwrap();
    let out = mtl_lab(
        &["landscape", "--config", "race.cfg", "--out", "results"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("landscape_records.csv"), "{stdout}");
    assert!(dir.path().join("results/landscape_records.csv").exists());
    assert!(dir.path().join("results/run_config.json").exists());
}

#[test]
fn suite_positional_fills_in_missing_config_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("min.cfg"),
        "methods = ew\noptimizers = adam\nlr_list = 1.0\nbudget = 50\n",
    )
    .unwrap();
    let out = mtl_lab(
        &["landscape", "--config", "min.cfg", "--out", "o"],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn suite_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("c.cfg"), "suite = landscape\n").unwrap();
    let out = mtl_lab(&["ood", "--config", "c.cfg"], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("suite = landscape"), "{stderr}");
}

#[test]
fn unknown_config_key_reports_line_number() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("bad.cfg"),
        "suite = landscape\nnot_a_key = 1\n",
    )
    .unwrap();
    let out = mtl_lab(&["landscape", "--config", "bad.cfg"], dir.path());
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
    assert!(stderr.contains("not_a_key"), "{stderr}");
}

#[test]
fn missing_config_file_is_a_clean_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = mtl_lab(&["landscape", "--config", "absent.cfg"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.cfg"));
}

#[test]
fn cli_overrides_shrink_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("race.cfg"),
        "suite = landscape\nbudget = 400\n",
    )
    .unwrap();
    let out = mtl_lab(
        &[
            "landscape",
            "--config",
            "race.cfg",
            "--method",
            "ew",
            "--optimizer",
            "adam",
            "--lr-list",
            "1.0",
            "--out",
            "o",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(dir.path().join("o/landscape_records.csv")).unwrap();
    // 1 method x 1 optimizer x 1 lr x 3 starts.
    assert_eq!(text.lines().count(), 1 + 3, "{text}");
    assert!(text.lines().skip(1).all(|l| l.starts_with("ew,adam,1,")));
}
