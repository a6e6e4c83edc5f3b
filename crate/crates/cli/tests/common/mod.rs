#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

pub fn pdm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdm")).args(args).output().expect("spawn pdm")
}

/// Runs `pdm` and panics with its stderr unless it exits 0.
pub fn pdm_ok(args: &[&str]) -> String {
    let out = pdm(args);
    assert!(
        out.status.success(),
        "pdm {args:?} exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Value printed by `evaluate` on the line starting with `label`.
pub fn score(stdout: &str, label: &str) -> f64 {
    let line = stdout.lines().find(|l| l.starts_with(label)).unwrap_or_else(|| panic!("no `{label}` in {stdout}"));
    line[label.len()..].trim().parse().unwrap()
}

/// `(epoch, train_mse, validation_mse)` rows of a training report.
pub fn report_rows(csv: &str) -> Vec<(usize, f64, f64)> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("epoch,train_mse,validation_mse"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!(f.len(), 3, "row `{l}`");
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

/// Frames of a one-reading-per-period log, in time order: `(timestamp, values)`
/// with columns in the order the first timestamp lists them.
pub fn parse_log(text: &str) -> (Vec<String>, Vec<(i64, Vec<f64>)>) {
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("pdm-log v1"));
    let mut names: Vec<String> = Vec::new();
    let mut rows: Vec<(i64, Vec<f64>)> = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let (ts, name, v): (i64, &str, f64) = (f[0].parse().unwrap(), f[2], f[3].parse().unwrap());
        if rows.last().is_none_or(|r| r.0 != ts) {
            rows.push((ts, Vec::new()));
        }
        if rows.len() == 1 {
            names.push(name.to_string());
        }
        let row = rows.last_mut().unwrap();
        assert_eq!(names[row.1.len()], name, "column order changes at {ts}");
        row.1.push(v);
    }
    rows.sort_by_key(|r| r.0);
    (names, rows)
}
