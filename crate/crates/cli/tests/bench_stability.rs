//! Kept in its own test binary so no other test competes for the CPU while
//! timing.

mod common;

use common::cli_ok;

fn median_ms() -> f64 {
    let out = cli_ok(&[
        "bench",
        "--height",
        "128",
        "--width",
        "128",
        "--iters",
        "20",
        "--warmup",
        "3",
        "--width-divisor",
        "4",
    ]);
    out.lines()
        .nth(1)
        .unwrap()
        .split_whitespace()
        .nth(2)
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn median_is_stable_across_runs() {
    let a = median_ms();
    let b = median_ms();
    let rel = (a - b).abs() / a.min(b);
    assert!(
        rel < 0.2,
        "medians {a} ms and {b} ms differ by {:.1}%",
        rel * 100.0
    );
}
