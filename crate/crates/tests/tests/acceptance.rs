//! Acceptance criteria A1 to A10. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any criterion fails.

mod common;

use std::collections::HashSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{cli, cli_ok, parse_log, parse_miou, path_str, record_total};
use linknet_core::metrics::{
    class_average_instance_sizes, class_weights, ConfusionMatrix, IiouAccumulator,
};
use linknet_core::model::{LinkConfig, LinkNet};
use linknet_core::rng::Prng;
use linknet_core::Tensor;
use tempfile::TempDir;

// Frozen golden value for the 20-class model.
const GOLDEN_PARAMS: u64 = 11_535_764;
const PARAM_BAND: (u64, u64) = (10_900_000, 12_100_000);
const PUBLISHED_GFLOPS: f64 = 21.2;
const FLOPS_REL_TOL: f64 = 0.25;
const PUBLISHED_SIZE: f64 = 22.0;
const SIZE_REL_TOL: f64 = 0.10;
const COST_TIME_LIMIT: Duration = Duration::from_secs(1);
const GRADCHECK_SEEDS: usize = 10;
const GRADCHECK_TIME_LIMIT: Duration = Duration::from_secs(120);
const MIN_TEST_MIOU: f64 = 0.80;
const MAX_LOSS_RATIO: f64 = 0.5;
const TRAIN_TIME_LIMIT: Duration = Duration::from_secs(600);
const METRIC_TRIALS: u64 = 100;
const STATED_W0: f64 = 50.497871;
const STATED_W1: f64 = 1.421765;
const WEIGHT_TOL: f64 = 1e-6;

/// Outcome of one criterion: pass flag and a one-line detail.
type Verdict = (bool, String);

struct Toy {
    dir: TempDir,
    train: PathBuf,
    test: PathBuf,
}

impl Toy {
    /// 4 classes, 64×64, 200 training and 50 test samples.
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let train = dir.path().join("train");
        let test = dir.path().join("test");
        let make = |out: &Path, n: &str, seed: &str| {
            cli_ok(&[
                "make-toy-data",
                "--out",
                path_str(out),
                "--samples",
                n,
                "--height",
                "64",
                "--width",
                "64",
                "--classes",
                "4",
                "--seed",
                seed,
            ]);
        };
        make(&train, "200", "7");
        make(&test, "50", "8");
        Self { dir, train, test }
    }

    /// Width ÷4, lr 5e-4, batch 4, 15 epochs, seed 7.
    fn train(&self, name: &str, extra: &[&str]) -> Run {
        let ckpt = self.dir.path().join(format!("{name}.lkpt"));
        let mut args = vec![
            "train",
            "--data",
            path_str(&self.train),
            "--out",
            path_str(&ckpt),
            "--width-divisor",
            "4",
            "--lr",
            "5e-4",
            "--batch",
            "4",
            "--epochs",
            "15",
            "--seed",
            "7",
        ];
        args.extend_from_slice(extra);
        let start = Instant::now();
        cli_ok(&args);
        let elapsed = start.elapsed();
        let log = parse_log(&std::fs::read_to_string(ckpt.with_extension("log")).unwrap());
        let eval = cli_ok(&[
            "eval",
            "--checkpoint",
            path_str(&ckpt),
            "--data",
            path_str(&self.test),
        ]);
        Run {
            checkpoint: std::fs::read(&ckpt).unwrap(),
            log,
            test_miou: parse_miou(&eval),
            elapsed,
        }
    }
}

struct Run {
    checkpoint: Vec<u8>,
    log: Vec<(usize, f64, f64)>,
    test_miou: f64,
    elapsed: Duration,
}

impl Run {
    fn loss_ratio(&self) -> f64 {
        self.log.last().unwrap().1 / self.log[0].1
    }
}

fn cost_records() -> (String, Duration) {
    let start = Instant::now();
    let rec = cli_ok(&[
        "cost",
        "--records",
        "--classes",
        "20",
        "--height",
        "360",
        "--width",
        "640",
    ]);
    (rec, start.elapsed())
}

fn a1() -> Verdict {
    let (rec, t) = cost_records();
    let p = record_total(&rec, "params");
    let ok =
        (PARAM_BAND.0..=PARAM_BAND.1).contains(&p) && p == GOLDEN_PARAMS && t < COST_TIME_LIMIT;
    (
        ok,
        format!(
            "params={p} band=[{}, {}] golden={GOLDEN_PARAMS} time={t:.2?}",
            PARAM_BAND.0, PARAM_BAND.1
        ),
    )
}

fn a2() -> Verdict {
    let (rec, t) = cost_records();
    let macs = record_total(&rec, "macs");
    let flops = record_total(&rec, "flops");
    let g = flops as f64 / 1e9;
    let rel = (g - PUBLISHED_GFLOPS).abs() / PUBLISHED_GFLOPS;
    let ok = flops == 2 * macs && rel <= FLOPS_REL_TOL && t < COST_TIME_LIMIT;
    (
        ok,
        format!(
            "MACs={macs} FLOPs={flops} ({g:.3} G, {:+.1}% vs {PUBLISHED_GFLOPS} G, input padded to 384x640) time={t:.2?}",
            100.0 * (g - PUBLISHED_GFLOPS) / PUBLISHED_GFLOPS
        ),
    )
}

fn a3() -> Verdict {
    let (rec, _) = cost_records();
    let bytes = record_total(&rec, "size_fp16_bytes");
    let mib = bytes as f64 / (1024.0 * 1024.0);
    let rel = (mib - PUBLISHED_SIZE).abs() / PUBLISHED_SIZE;
    let ok = rel <= SIZE_REL_TOL && record_total(&rec, "params") == GOLDEN_PARAMS;
    (
        ok,
        format!(
            "fp16 size={bytes} bytes = {mib:.3} MiB ({:.3} MB), {:+.2}% vs {PUBLISHED_SIZE}",
            bytes as f64 / 1e6,
            100.0 * (mib - PUBLISHED_SIZE) / PUBLISHED_SIZE
        ),
    )
}

fn a4() -> Verdict {
    let start = Instant::now();
    let o = cli(&[
        "gradcheck",
        "--seed",
        "0",
        "--seeds",
        &GRADCHECK_SEEDS.to_string(),
    ]);
    let t = start.elapsed();
    let lines: Vec<&str> = o
        .stdout
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
        .collect();
    let failed = lines.iter().filter(|l| l.starts_with("FAIL")).count();
    let e2e = lines
        .iter()
        .filter(|l| l.contains("end-to-end") && l.starts_with("PASS"))
        .count();
    let ok = o.code == 0 && failed == 0 && e2e == GRADCHECK_SEEDS && t < GRADCHECK_TIME_LIMIT;
    (
        ok,
        format!(
            "{} checks over {GRADCHECK_SEEDS} seeds, {failed} failed, exit {} time={t:.1?}",
            lines.len(),
            o.code
        ),
    )
}

fn a5(run: &Run) -> Verdict {
    let ratio = run.loss_ratio();
    let ok =
        run.test_miou >= MIN_TEST_MIOU && ratio < MAX_LOSS_RATIO && run.elapsed < TRAIN_TIME_LIMIT;
    (
        ok,
        format!(
            "test mIoU={:.6} (>= {MIN_TEST_MIOU}) loss {:.6} -> {:.6} ratio={ratio:.4} (< {MAX_LOSS_RATIO}) time={:.1?}",
            run.test_miou,
            run.log[0].1,
            run.log.last().unwrap().1,
            run.elapsed
        ),
    )
}

fn a6(toy: &Toy, with: &Run) -> Verdict {
    let total = |extra: &[&str]| -> String {
        let mut args = vec![
            "summary",
            "--classes",
            "4",
            "--height",
            "64",
            "--width",
            "64",
        ];
        args.extend_from_slice(extra);
        cli_ok(&args)
            .lines()
            .find(|l| l.starts_with("total parameters"))
            .unwrap()
            .to_string()
    };
    let same_params = total(&[]) == total(&["--no-bypass"]);
    let without = toy.train("no_bypass", &["--no-bypass"]);
    let finite = |r: &Run| r.log.len() == 15 && r.log.iter().all(|e| e.1.is_finite());
    let ok = same_params && finite(with) && finite(&without);
    (
        ok,
        format!(
            "identical params={same_params} finite losses={}/{} bypass mIoU={:.6} no-bypass mIoU={:.6} difference={:+.6}",
            finite(with),
            finite(&without),
            with.test_miou,
            without.test_miou,
            with.test_miou - without.test_miou
        ),
    )
}

/// IoU per class from pixel index sets.
fn set_iou(labels: &[i32], preds: &[i32], classes: usize, ignore: i32) -> Vec<Option<f64>> {
    (0..classes as i32)
        .map(|c| {
            let truth: HashSet<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let pred: HashSet<usize> = (0..labels.len())
                .filter(|&i| labels[i] != ignore && preds[i] == c)
                .collect();
            let union = truth.union(&pred).count();
            (union > 0).then(|| truth.intersection(&pred).count() as f64 / union as f64)
        })
        .collect()
}

fn a7() -> Verdict {
    let ignore = 255;
    let mut rng = Prng::new(2024);
    let mut mismatches = 0;
    for _ in 0..METRIC_TRIALS {
        let classes = rng.range(2, 7);
        let draw = |rng: &mut Prng| -> i32 {
            if rng.uniform() < 0.05 {
                ignore
            } else {
                rng.range(0, classes) as i32
            }
        };
        let labels: Vec<i32> = (0..64).map(|_| draw(&mut rng)).collect();
        let preds: Vec<i32> = (0..64).map(|_| rng.range(0, classes) as i32).collect();
        let mut cm = ConfusionMatrix::new(classes);
        cm.accumulate(&labels, &preds, ignore).unwrap();
        if cm.class_iou() != set_iou(&labels, &preds, classes, ignore) {
            mismatches += 1;
        }
    }
    // class 1 has instances of 1 and 3 pixels; only the larger one is predicted
    let labels = [1, 1, 1, 1, 0, 0];
    let instances = [1, 2, 2, 2, 0, 0];
    let preds = [0, 1, 1, 1, 0, 0];
    let avg = class_average_instance_sizes([(&labels[..], &instances[..])], 2, ignore).unwrap();
    let mut acc = IiouAccumulator::new(avg, ignore);
    acc.add(&labels, &instances, &preds).unwrap();
    let iiou = acc.class_iiou()[1];
    let iou = acc.confusion().class_iou()[1];
    let ok = mismatches == 0 && iiou == Some(0.5) && iou == Some(0.75);
    (ok, format!("{mismatches}/{METRIC_TRIALS} IoU mismatches vs set oracle; worked example iIoU={iiou:?} IoU={iou:?}"))
}

fn a8() -> Verdict {
    let w = class_weights(&[0.0, 1.0]).unwrap();
    let (d0, d1) = ((w[0] - STATED_W0).abs(), (w[1] - STATED_W1).abs());
    let ok = d0 <= WEIGHT_TOL && d1 <= WEIGHT_TOL;
    (
        ok,
        format!(
            "w(0)={:.9} vs {STATED_W0} (|d|={d0:.2e}), w(1)={:.9} vs {STATED_W1} (|d|={d1:.2e}), tol {WEIGHT_TOL:.0e}",
            w[0], w[1]
        ),
    )
}

fn a9() -> Verdict {
    let mut bad = Vec::new();
    let mut checked = 0;
    let mut rng = Prng::new(9);
    for &classes in &[2usize, 12, 20] {
        for &h in &[64usize, 96, 128] {
            for &w in &[64usize, 96, 128] {
                let model = LinkNet::new(LinkConfig::new(classes, (h, w)), 1).unwrap();
                let n = 2;
                let x = Tensor::from_vec(
                    [n, 3, h, w],
                    (0..n * 3 * h * w).map(|_| rng.uniform() as f32).collect(),
                )
                .unwrap();
                let logits = model.logits(&x).unwrap();
                checked += 1;
                if logits.shape() != [n, classes, h, w] {
                    bad.push(format!("C={classes} {h}x{w} -> {:?}", logits.shape()));
                }
            }
        }
    }
    let rejected: Vec<i32> = [("100", "64"), ("64", "80"), ("360", "640")]
        .iter()
        .map(|(h, w)| cli(&["summary", "--height", h, "--width", w]).code)
        .collect();
    let built_rejects = [(100, 64), (64, 80)]
        .iter()
        .all(|&hw| LinkNet::new(LinkConfig::new(2, hw), 0).is_err());
    let ok = bad.is_empty() && rejected.iter().all(|&c| c == 2) && built_rejects;
    (
        ok,
        format!(
            "{checked} shapes checked, {} wrong {bad:?}; indivisible sizes exit codes {rejected:?}",
            bad.len()
        ),
    )
}

fn a10(toy: &Toy, first: &Run) -> Verdict {
    let second = toy.train("repeat", &[]);
    let ok = first.checkpoint == second.checkpoint;
    (
        ok,
        format!(
            "checkpoints of {} and {} bytes, identical={ok}",
            first.checkpoint.len(),
            second.checkpoint.len()
        ),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(v) => v,
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    }
}

fn main() {
    // `cargo test -- <filter>` passes arguments; this binary always runs everything.
    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut record = |id: &'static str, v: Verdict| {
        println!("{id}: {} {}", if v.0 { "PASS" } else { "FAIL" }, v.1);
        results.push((id, v));
    };
    record("A1", guarded(a1));
    record("A2", guarded(a2));
    record("A3", guarded(a3));
    record("A4", guarded(a4));
    let toy = Toy::new();
    let run = catch_unwind(AssertUnwindSafe(|| toy.train("bypass", &[])));
    match &run {
        Ok(run) => {
            record("A5", guarded(|| a5(run)));
            record("A6", guarded(|| a6(&toy, run)));
        }
        Err(_) => {
            record("A5", (false, "training run panicked".into()));
            record("A6", (false, "training run panicked".into()));
        }
    }
    record("A7", guarded(a7));
    record("A8", guarded(a8));
    record("A9", guarded(a9));
    match &run {
        Ok(run) => record("A10", guarded(|| a10(&toy, run))),
        Err(_) => record("A10", (false, "training run panicked".into())),
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|(_, v)| !v.0)
        .map(|(id, _)| *id)
        .collect();
    println!(
        "acceptance: {}/{} passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
