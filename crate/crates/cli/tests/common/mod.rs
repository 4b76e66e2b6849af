#![allow(dead_code)]

use std::path::Path;

pub struct Output {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

/// Runs the CLI in-process.
pub fn cli(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("linknet").chain(args.iter().copied());
    let code = linknet_cli::run(argv, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).expect("utf-8 stdout"),
        stderr: String::from_utf8(err).expect("utf-8 stderr"),
    }
}

/// Runs the CLI and panics with its stderr unless it exits 0.
pub fn cli_ok(args: &[&str]) -> String {
    let o = cli(args);
    assert_eq!(o.code, 0, "linknet {args:?} failed:\n{}", o.stderr);
    o.stdout
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

/// Value of `total\t<name>\t<v>` in `cost --records` output.
pub fn record_total(records: &str, name: &str) -> u64 {
    records
        .lines()
        .filter_map(|l| l.strip_prefix("total\t"))
        .find_map(|l| l.strip_prefix(name).and_then(|r| r.strip_prefix('\t')))
        .unwrap_or_else(|| panic!("no total `{name}` in\n{records}"))
        .parse()
        .expect("integer total")
}

/// `(epoch, loss, miou)` rows of a training log.
pub fn parse_log(text: &str) -> Vec<(usize, f64, f64)> {
    text.lines()
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            assert_eq!(f.len(), 3, "bad log line `{l}`");
            (
                f[0].parse().unwrap(),
                f[1].parse().unwrap(),
                f[2].parse().unwrap(),
            )
        })
        .collect()
}

/// The value after `mIoU=` in eval output.
pub fn parse_miou(text: &str) -> f64 {
    text.split_whitespace()
        .find_map(|t| t.strip_prefix("mIoU="))
        .unwrap_or_else(|| panic!("no mIoU in\n{text}"))
        .parse()
        .unwrap()
}
