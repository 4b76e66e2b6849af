use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use linknet_core::analyze::{block_summary, count_params, CostReport};
use linknet_core::io::{
    load_dataset, load_model, load_tensor, save_dataset, save_model, save_tensor, AnyTensor,
};
use linknet_core::metrics::DEFAULT_IGNORE_LABEL;
use linknet_core::model::{
    build_linknet, padded_hw, EndToEndCheck, LinkConfig, LinkNet, DOWNSAMPLE_FACTOR,
    END_TO_END_TOLERANCE,
};
use linknet_core::ops::gradcheck::{
    check_primitives, corrupted_gradient_check, PRIMITIVE_TOLERANCE,
};
use linknet_core::rng::Prng;
use linknet_core::train::{
    evaluate, make_toy_dataset, score_predictions, train_loop, Sample, TrainConfig,
};
use linknet_core::{Error, IntTensor, Result, Tensor};

use crate::{
    BenchArgs, Command, CostArgs, EvalArgs, GradcheckArgs, MakeToyDataArgs, PredictArgs,
    SummaryArgs, TrainArgs, EXIT_FAILURE, EXIT_OK,
};

/// Resolutions timed by `bench` when none is given, as (width, height).
pub const BENCH_RESOLUTIONS: [(usize, usize); 3] = [(480, 320), (640, 360), (1280, 720)];

pub(crate) fn execute(command: Command, out: &mut dyn Write) -> Result<i32> {
    match command {
        Command::Summary(a) => summary(a, out),
        Command::Cost(a) => cost(a, out),
        Command::Gradcheck(a) => gradcheck(a, out),
        Command::MakeToyData(a) => make_toy_data(a, out),
        Command::Train(a) => train(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Bench(a) => bench(a, out),
    }
}

fn shape_str([c, h, w]: [usize; 3]) -> String {
    format!("{c}x{h}x{w}")
}

fn summary(a: SummaryArgs, out: &mut dyn Write) -> Result<i32> {
    let config = LinkConfig::new(a.classes, (a.height, a.width)).with_bypass(!a.no_bypass);
    let graph = build_linknet(&config)?;
    let mut s = format!(
        "{:<6}  {:>5}  {:>5}  {:>14}  {:>14}  {:>10}\n",
        "block", "in", "out", "input", "output", "params"
    );
    for row in block_summary(&graph) {
        let _ = writeln!(
            s,
            "{:<6}  {:>5}  {:>5}  {:>14}  {:>14}  {:>10}",
            row.name,
            row.input[0],
            row.output[0],
            shape_str(row.input),
            shape_str(row.output),
            row.params
        );
    }
    let _ = writeln!(s, "bypass: {}", if config.bypass { "on" } else { "off" });
    let _ = writeln!(s, "total parameters: {}", count_params(&graph));
    out.write_all(s.as_bytes())?;
    Ok(EXIT_OK)
}

fn cost(a: CostArgs, out: &mut dyn Write) -> Result<i32> {
    if a.height == 0 || a.width == 0 {
        return Err(Error::InvalidArgument(
            "height and width must be positive".into(),
        ));
    }
    let (h, w) = padded_hw(a.height, a.width);
    let config = LinkConfig::new(a.classes, (h, w)).with_bypass(!a.no_bypass);
    let report = CostReport::new(&build_linknet(&config)?);
    let padded = (h, w) != (a.height, a.width);
    let scale = (a.height * a.width) as f64 / (h * w) as f64;
    let mut s = String::new();
    if a.records {
        if a.nodes {
            s.push_str(&report.to_records());
        } else {
            s.extend(
                report
                    .to_records()
                    .lines()
                    .filter(|l| l.starts_with("total\t"))
                    .map(|l| format!("{l}\n")),
            );
        }
        let _ = writeln!(
            s,
            "total\tflops_area_scaled\t{}",
            (report.flops() as f64 * scale).round() as u64
        );
    } else {
        if padded {
            let _ = writeln!(
                s,
                "note: {}x{} padded to {h}x{w} (multiples of {DOWNSAMPLE_FACTOR})",
                a.height, a.width
            );
        }
        if a.nodes {
            s.push_str(&report.to_table());
        } else {
            s.push_str(&report.totals_text());
        }
        if padded {
            let _ = writeln!(
                s,
                "FLOPs scaled to {}x{} by area: {:.3} G",
                a.height,
                a.width,
                report.flops() as f64 * scale / 1e9
            );
        }
    }
    out.write_all(s.as_bytes())?;
    Ok(EXIT_OK)
}

fn gradcheck(a: GradcheckArgs, out: &mut dyn Write) -> Result<i32> {
    if a.seeds == 0 {
        return Err(Error::InvalidArgument("--seeds must be at least 1".into()));
    }
    let mut all_pass = true;
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    for seed in a.seed..a.seed + a.seeds {
        for (name, r) in check_primitives(seed, PRIMITIVE_TOLERANCE) {
            all_pass &= r.passed();
            writeln!(
                out,
                "{} seed={seed} {name} max_rel_err={:.3e} tol={:.0e} checked={}",
                verdict(r.passed()),
                r.max_rel_error,
                r.tolerance,
                r.checked
            )?;
        }
        let r = EndToEndCheck::default().run(seed)?;
        all_pass &= r.passed();
        writeln!(
            out,
            "{} seed={seed} end-to-end max_rel_err={:.3e} tol={:.0e} checked={}",
            verdict(r.passed()),
            r.max_rel_error,
            END_TO_END_TOLERANCE,
            r.checked
        )?;
        // A checker that accepts a gradient scaled by 1.01 is broken.
        let r = corrupted_gradient_check(seed, PRIMITIVE_TOLERANCE);
        let rejected = !r.passed();
        all_pass &= rejected;
        writeln!(
            out,
            "{} seed={seed} self-test corrupted gradient {} max_rel_err={:.3e}",
            verdict(rejected),
            if rejected { "rejected" } else { "accepted" },
            r.max_rel_error
        )?;
    }
    writeln!(
        out,
        "{}",
        if all_pass {
            "all checks passed"
        } else {
            "some checks failed"
        }
    )?;
    Ok(if all_pass { EXIT_OK } else { EXIT_FAILURE })
}

fn make_toy_data(a: MakeToyDataArgs, out: &mut dyn Write) -> Result<i32> {
    let samples = make_toy_dataset(a.samples, (a.height, a.width), a.classes, a.seed)?;
    save_dataset(&a.out, &samples)?;
    writeln!(
        out,
        "wrote {} samples ({}x{}, {} classes) to {}",
        samples.len(),
        a.height,
        a.width,
        a.classes,
        a.out.display()
    )?;
    Ok(EXIT_OK)
}

fn infer_classes(dataset: &[Sample]) -> Result<usize> {
    let max = dataset
        .iter()
        .flat_map(|s| s.labels.data().iter().copied())
        .filter(|&l| l != DEFAULT_IGNORE_LABEL)
        .max()
        .ok_or_else(|| Error::InvalidArgument("dataset has no labelled pixels".into()))?;
    if max < 0 {
        return Err(Error::InvalidArgument(format!("negative label {max}")));
    }
    Ok(max as usize + 1)
}

fn dataset_hw(dataset: &[Sample]) -> Result<(usize, usize)> {
    let first = dataset
        .first()
        .ok_or_else(|| Error::InvalidArgument("dataset is empty".into()))?;
    Ok(first.hw())
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<i32> {
    let dataset = load_dataset(&a.data)?;
    let classes = match a.classes {
        Some(c) => c,
        None => infer_classes(&dataset)?,
    };
    let config = LinkConfig::new(classes, dataset_hw(&dataset)?)
        .with_in_channels(dataset[0].image.shape()[0])
        .with_bypass(!a.no_bypass)
        .with_width_divisor(a.width_divisor)?;
    let train_config = TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        seed: a.seed,
        use_class_weights: !a.no_class_weights,
        ..TrainConfig::default()
    };
    train_config.validate()?;
    let LinkNet {
        config,
        graph,
        params,
    } = LinkNet::new(config, a.seed)?;
    let log_path = a.log.clone().unwrap_or_else(|| a.out.with_extension("log"));

    let mut log_text = String::new();
    let mut write_err = None;
    let outcome = train_loop(&graph, params, &dataset, &train_config, |entry| {
        let line = entry.record();
        let _ = writeln!(log_text, "{line}");
        if let Err(e) = writeln!(out, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    let model = LinkNet {
        config,
        graph,
        params: outcome.params,
    };
    save_model(&a.out, &model)?;
    write_file(&log_path, log_text.as_bytes())?;
    writeln!(out, "checkpoint: {}", a.out.display())?;
    writeln!(out, "log: {}", log_path.display())?;
    Ok(EXIT_OK)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io(e).in_file(path))
}

fn sorted_ltn_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::Io(e).in_file(dir))? {
        let path = entry.map_err(|e| Error::Io(e).in_file(dir))?.path();
        if path.extension().is_some_and(|e| e == "ltn") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn eval(a: EvalArgs, out: &mut dyn Write) -> Result<i32> {
    let dataset = load_dataset(&a.data)?;
    let report = match (&a.checkpoint, &a.predictions) {
        (Some(ckpt), _) => {
            let model = load_model(ckpt)?;
            evaluate(&model.graph, &model.params, &dataset, DEFAULT_IGNORE_LABEL)?
        }
        (None, Some(dir)) => {
            let classes = match a.classes {
                Some(c) => c,
                None => infer_classes(&dataset)?,
            };
            let predictions = sorted_ltn_files(dir)?
                .iter()
                .map(|p| load_tensor(p)?.into_int32().map_err(|e| e.in_file(p)))
                .collect::<Result<Vec<IntTensor>>>()?;
            score_predictions(&dataset, &predictions, classes, DEFAULT_IGNORE_LABEL)?
        }
        (None, None) => {
            return Err(Error::InvalidArgument(
                "either --checkpoint or --predictions is required".into(),
            ))
        }
    };
    let text = if a.records {
        report.to_records()
    } else {
        report.to_table()
    };
    out.write_all(text.as_bytes())?;
    Ok(EXIT_OK)
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<i32> {
    let model = load_model(&a.checkpoint)?;
    let image = load_tensor(&a.input)?
        .into_real32()
        .map_err(|e| e.in_file(&a.input))?;
    let (c, h, w) = match *image.shape() {
        [c, h, w] | [1, c, h, w] => (c, h, w),
        ref s => {
            return Err(Error::InvalidArgument(format!(
                "input must be [C, H, W] or [1, C, H, W], got {s:?}"
            )))
        }
    };
    if c != model.config.in_channels {
        return Err(Error::ShapeMismatch {
            op: "predict input channels",
            lhs: vec![model.config.in_channels],
            rhs: vec![c],
        });
    }
    // Parameters do not depend on the spatial size, so the graph is rebuilt
    // for the image at hand.
    let config = model.config.clone().with_input_hw((h, w));
    let model = LinkNet::with_params(config, model.params)?;
    let labels = model
        .predict(&image.reshape([1, c, h, w])?)?
        .reshape([h, w])?;
    save_tensor(&a.out, &AnyTensor::from(labels))?;
    writeln!(out, "wrote {h}x{w} label map to {}", a.out.display())?;
    Ok(EXIT_OK)
}

/// Linear-interpolated quantile of sorted samples.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn bench(a: BenchArgs, out: &mut dyn Write) -> Result<i32> {
    if a.iters == 0 {
        return Err(Error::InvalidArgument("--iters must be at least 1".into()));
    }
    let resolutions = match (a.width, a.height) {
        (Some(w), Some(h)) => vec![(w, h)],
        _ => BENCH_RESOLUTIONS.to_vec(),
    };
    writeln!(
        out,
        "{:>9}  {:>9}  {:>10}  {:>10}  {:>10}  {:>8}  {:>14}",
        "size", "padded", "median_ms", "p10_ms", "p90_ms", "fps", "macs"
    )?;
    for (w, h) in resolutions {
        if w == 0 || h == 0 {
            return Err(Error::InvalidArgument(
                "height and width must be positive".into(),
            ));
        }
        let (ph, pw) = padded_hw(h, w);
        let config = LinkConfig::new(a.classes, (ph, pw)).with_width_divisor(a.width_divisor)?;
        let model = LinkNet::new(config, a.seed)?;
        let macs = CostReport::new(&model.graph).macs;
        let mut rng = Prng::new(a.seed);
        let x = Tensor::from_vec(
            [1, 3, ph, pw],
            (0..3 * ph * pw).map(|_| rng.uniform() as f32).collect(),
        )?;
        for _ in 0..a.warmup {
            model.logits(&x)?;
        }
        let mut times = Vec::with_capacity(a.iters);
        for _ in 0..a.iters {
            let start = Instant::now();
            model.logits(&x)?;
            times.push(start.elapsed().as_secs_f64() * 1e3);
        }
        times.sort_by(f64::total_cmp);
        let median = quantile(&times, 0.5);
        writeln!(
            out,
            "{:>9}  {:>9}  {:>10.3}  {:>10.3}  {:>10.3}  {:>8.3}  {:>14}",
            format!("{w}x{h}"),
            format!("{pw}x{ph}"),
            median,
            quantile(&times, 0.1),
            quantile(&times, 0.9),
            1000.0 / median,
            macs
        )?;
    }
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.1) - 1.3).abs() < 1e-12);
        assert_eq!(quantile(&[7.0], 0.9), 7.0);
    }
}
