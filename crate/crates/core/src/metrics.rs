//! Segmentation metrics: confusion matrices, IoU, instance-weighted iIoU and
//! class-balancing weights.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const DEFAULT_IGNORE_LABEL: i32 = 255;

fn check_len(op: &'static str, a: &[i32], b: &[i32]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: vec![a.len()],
            rhs: vec![b.len()],
        });
    }
    Ok(())
}

fn class_index(v: i32, classes: usize, what: &str) -> Result<usize> {
    if v < 0 || v as usize >= classes {
        return Err(Error::InvalidArgument(format!(
            "{what} {v} outside [0, {classes})"
        )));
    }
    Ok(v as usize)
}

/// `counts[t][p]`: pixels of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    /// Number of scored pixels.
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds one pixel per position, skipping `ignore_label` in `labels`.
    pub fn accumulate(
        &mut self,
        labels: &[i32],
        predictions: &[i32],
        ignore_label: i32,
    ) -> Result<()> {
        check_len("confusion accumulate", labels, predictions)?;
        for (&t, &p) in labels.iter().zip(predictions) {
            if t == ignore_label {
                continue;
            }
            let t = class_index(t, self.classes, "label")?;
            let p = class_index(p, self.classes, "prediction")?;
            self.counts[t * self.classes + p] += 1;
        }
        Ok(())
    }

    /// Entrywise sum.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::ShapeMismatch {
                op: "confusion merge",
                lhs: vec![self.classes],
                rhs: vec![other.classes],
            });
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    fn tp_fp_fn(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let row: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        let col: u64 = (0..self.classes).map(|t| self.get(t, c)).sum();
        (tp, col - tp, row - tp)
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the class never occurs
    /// in either labels or predictions.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let (tp, fp, fn_) = self.tp_fp_fn(c);
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Unweighted mean over classes with a defined IoU.
    pub fn mean_iou(&self) -> Option<f64> {
        mean_defined(&self.class_iou())
    }
}

pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

/// Pixel count and class of every instance in one image. Instance id 0 and
/// ignored pixels are skipped.
fn instances_of(
    labels: &[i32],
    instances: &[i32],
    classes: usize,
    ignore_label: i32,
) -> Result<HashMap<i32, (usize, u64)>> {
    check_len("instance map", labels, instances)?;
    let mut map: HashMap<i32, (usize, u64)> = HashMap::new();
    for (&t, &id) in labels.iter().zip(instances) {
        if id == 0 || t == ignore_label {
            continue;
        }
        let c = class_index(t, classes, "label")?;
        let entry = map.entry(id).or_insert((c, 0));
        if entry.0 != c {
            return Err(Error::InvalidArgument(format!(
                "instance {id} spans classes {} and {c}",
                entry.0
            )));
        }
        entry.1 += 1;
    }
    Ok(map)
}

/// Mean instance size per class over a set of `(labels, instances)` images;
/// `None` for classes without instances.
pub fn class_average_instance_sizes<'a>(
    images: impl IntoIterator<Item = (&'a [i32], &'a [i32])>,
    classes: usize,
    ignore_label: i32,
) -> Result<Vec<Option<f64>>> {
    let mut total = vec![0u64; classes];
    let mut count = vec![0u64; classes];
    for (labels, instances) in images {
        for (c, size) in instances_of(labels, instances, classes, ignore_label)?.into_values() {
            total[c] += size;
            count[c] += 1;
        }
    }
    Ok((0..classes)
        .map(|c| (count[c] > 0).then(|| total[c] as f64 / count[c] as f64))
        .collect())
}

/// Instance-weighted IoU. True-positive and false-negative pixels of an
/// instance are weighted by `class average size / instance size`; false
/// positives count 1. Classes without instances fall back to plain IoU.
/// Pixels of an instance class that belong to no instance are not scored.
#[derive(Debug, Clone)]
pub struct IiouAccumulator {
    avg_sizes: Vec<Option<f64>>,
    itp: Vec<f64>,
    ifn: Vec<f64>,
    fp: Vec<u64>,
    confusion: ConfusionMatrix,
    ignore_label: i32,
}

impl IiouAccumulator {
    pub fn new(avg_sizes: Vec<Option<f64>>, ignore_label: i32) -> Self {
        let c = avg_sizes.len();
        Self {
            avg_sizes,
            itp: vec![0.0; c],
            ifn: vec![0.0; c],
            fp: vec![0; c],
            confusion: ConfusionMatrix::new(c),
            ignore_label,
        }
    }

    pub fn add(&mut self, labels: &[i32], instances: &[i32], predictions: &[i32]) -> Result<()> {
        let classes = self.avg_sizes.len();
        check_len("iiou predictions", labels, predictions)?;
        let sizes = instances_of(labels, instances, classes, self.ignore_label)?;
        self.confusion
            .accumulate(labels, predictions, self.ignore_label)?;
        for ((&t, &id), &p) in labels.iter().zip(instances).zip(predictions) {
            if t == self.ignore_label {
                continue;
            }
            let (t, p) = (t as usize, p as usize);
            if p != t {
                self.fp[p] += 1;
            }
            let Some(avg) = self.avg_sizes[t] else {
                continue;
            };
            let Some(&(_, size)) = sizes.get(&id).filter(|_| id != 0) else {
                continue;
            };
            let w = avg / size as f64;
            if p == t {
                self.itp[t] += w;
            } else {
                self.ifn[t] += w;
            }
        }
        Ok(())
    }

    pub fn class_iiou(&self) -> Vec<Option<f64>> {
        let iou = self.confusion.class_iou();
        (0..self.avg_sizes.len())
            .map(|c| match self.avg_sizes[c] {
                None => iou[c],
                Some(_) => {
                    let denom = self.itp[c] + self.fp[c] as f64 + self.ifn[c];
                    (denom > 0.0).then(|| self.itp[c] / denom)
                }
            })
            .collect()
    }

    pub fn confusion(&self) -> &ConfusionMatrix {
        &self.confusion
    }
}

/// `w = 1 / ln(1.02 + p)` per class.
pub fn class_weights(pixel_frequencies: &[f64]) -> Result<Vec<f64>> {
    pixel_frequencies
        .iter()
        .map(|&p| {
            if (0.0..=1.0).contains(&p) {
                Ok(1.0 / (1.02 + p).ln())
            } else {
                Err(Error::InvalidArgument(format!(
                    "pixel frequency {p} outside [0, 1]"
                )))
            }
        })
        .collect()
}

/// Fraction of scored pixels per class over all label maps.
pub fn pixel_frequencies<'a>(
    label_maps: impl IntoIterator<Item = &'a [i32]>,
    classes: usize,
    ignore_label: i32,
) -> Result<Vec<f64>> {
    let mut counts = vec![0u64; classes];
    for labels in label_maps {
        for &t in labels {
            if t != ignore_label {
                counts[class_index(t, classes, "label")?] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::InvalidArgument("no scored pixels".into()));
    }
    Ok(counts.iter().map(|&n| n as f64 / total as f64).collect())
}

/// Per-class and mean IoU / iIoU.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub class_iou: Vec<Option<f64>>,
    pub class_iiou: Vec<Option<f64>>,
    pub mean_iou: Option<f64>,
    pub mean_iiou: Option<f64>,
}

pub fn format_metric(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.6}"),
        None => "nan".into(),
    }
}

impl MetricsReport {
    pub fn new(class_iou: Vec<Option<f64>>, class_iiou: Vec<Option<f64>>) -> Self {
        Self {
            mean_iou: mean_defined(&class_iou),
            mean_iiou: mean_defined(&class_iiou),
            class_iou,
            class_iiou,
        }
    }

    /// `mIoU=<v> iIoU=<v>`
    pub fn summary_line(&self) -> String {
        format!(
            "mIoU={} iIoU={}",
            format_metric(self.mean_iou),
            format_metric(self.mean_iiou)
        )
    }

    /// Per-class table followed by the summary line.
    pub fn to_table(&self) -> String {
        let mut s = format!("{:>5}  {:>8}  {:>8}\n", "class", "IoU", "iIoU");
        for (c, (iou, iiou)) in self.class_iou.iter().zip(&self.class_iiou).enumerate() {
            let _ = writeln!(
                s,
                "{c:>5}  {:>8}  {:>8}",
                format_metric(*iou),
                format_metric(*iiou)
            );
        }
        s.push_str(&self.summary_line());
        s.push('\n');
        s
    }

    /// Tab-separated `class <c> <iou> <iiou>` lines and a `mean` line.
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for (c, (iou, iiou)) in self.class_iou.iter().zip(&self.class_iiou).enumerate() {
            let _ = writeln!(
                s,
                "class\t{c}\t{}\t{}",
                format_metric(*iou),
                format_metric(*iiou)
            );
        }
        let _ = writeln!(
            s,
            "mean\t{}\t{}",
            format_metric(self.mean_iou),
            format_metric(self.mean_iiou)
        );
        s
    }
}
