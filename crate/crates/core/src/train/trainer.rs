use crate::error::{Error, Result};
use crate::metrics::{
    class_average_instance_sizes, class_weights, format_metric, pixel_frequencies, IiouAccumulator,
    MetricsReport, DEFAULT_IGNORE_LABEL,
};
use crate::model::{argmax_classes, backward, forward, Graph, ParamStore};
use crate::ops::Mode;
use crate::rng::Prng;
use crate::tensor::{IntTensor, Tensor};
use crate::train::data::Sample;
use crate::train::loss::weighted_cross_entropy;
use crate::train::optim::{OptState, RmsProp};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub rms_decay: f64,
    pub rms_epsilon: f64,
    /// Weight the loss by `1 / ln(1.02 + p)` of each class's pixel frequency.
    pub use_class_weights: bool,
    pub ignore_label: i32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 4,
            epochs: 10,
            seed: 0,
            rms_decay: 0.9,
            rms_epsilon: 1e-8,
            use_class_weights: true,
            ignore_label: DEFAULT_IGNORE_LABEL,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> RmsProp {
        RmsProp {
            learning_rate: self.learning_rate,
            decay: self.rms_decay,
            epsilon: self.rms_epsilon,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        self.optimizer().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    /// Mean of the batch losses.
    pub loss: f64,
    /// Inference-mode mIoU on the training set after the epoch.
    pub miou: Option<f64>,
}

impl EpochLog {
    /// `epoch loss miou`
    pub fn record(&self) -> String {
        format!(
            "{} {:.6} {}",
            self.epoch,
            self.loss,
            format_metric(self.miou)
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ParamStore<f32>,
    pub log: Vec<EpochLog>,
}

fn check_dataset(graph: &Graph, dataset: &[Sample]) -> Result<usize> {
    let [c, h, w] = graph.input_shape();
    let classes = graph.output_shape()[0];
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    for (i, s) in dataset.iter().enumerate() {
        if s.image.shape() != [c, h, w] || s.labels.shape() != [h, w] {
            return Err(Error::InvalidArgument(format!(
                "sample {i} has image {:?} / labels {:?}, model expects {:?} / {:?}",
                s.image.shape(),
                s.labels.shape(),
                [c, h, w],
                [h, w]
            )));
        }
    }
    Ok(classes)
}

fn batch_of(dataset: &[Sample], indices: &[usize]) -> Result<(Tensor<f32>, IntTensor)> {
    let images: Vec<&Tensor<f32>> = indices.iter().map(|&i| &dataset[i].image).collect();
    let labels: Vec<&IntTensor> = indices.iter().map(|&i| &dataset[i].labels).collect();
    Ok((Tensor::stack(&images)?, Tensor::stack(&labels)?))
}

/// Loss weights per class: `1 / ln(1.02 + p)` or all ones.
pub fn loss_weights(dataset: &[Sample], classes: usize, config: &TrainConfig) -> Result<Vec<f64>> {
    if config.use_class_weights {
        let freqs = pixel_frequencies(
            dataset.iter().map(|s| s.labels.data()),
            classes,
            config.ignore_label,
        )?;
        class_weights(&freqs)
    } else {
        Ok(vec![1.0; classes])
    }
}

/// Trains with RMSProp, shuffling the sample order every epoch.
/// `on_epoch` sees each log entry as soon as it is complete.
pub fn train_loop(
    graph: &Graph,
    params: ParamStore<f32>,
    dataset: &[Sample],
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    params.check_matches(graph)?;
    let classes = check_dataset(graph, dataset)?;
    let weights = loss_weights(dataset, classes, config)?;
    let optimizer = config.optimizer();
    let mut rng = Prng::new(config.seed);
    let mut params = params;
    let mut state = OptState::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let (x, labels) = batch_of(dataset, chunk)?;
            let (logits, cache) = forward(graph, &params, &x, Mode::Train)?;
            let (loss, grad) =
                weighted_cross_entropy(&logits, &labels, &weights, config.ignore_label)?;
            if !loss.is_finite() || !grad.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let grads = backward(graph, &params, &cache, &grad)?;
            optimizer.step(&mut params, &grads, &mut state)?;
            params.apply_running_stats(&cache)?;
            loss_sum += loss;
            batches += 1;
        }
        let report = evaluate(graph, &params, dataset, config.ignore_label)?;
        let entry = EpochLog {
            epoch,
            loss: loss_sum / batches as f64,
            miou: report.mean_iou,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { params, log })
}

/// Samples per inference batch in [`predict_dataset`].
const EVAL_BATCH: usize = 8;

/// Inference-mode label maps for every sample.
pub fn predict_dataset(
    graph: &Graph,
    params: &ParamStore<f32>,
    dataset: &[Sample],
) -> Result<Vec<IntTensor>> {
    check_dataset(graph, dataset)?;
    let mut out = Vec::with_capacity(dataset.len());
    let indices: Vec<usize> = (0..dataset.len()).collect();
    for chunk in indices.chunks(EVAL_BATCH) {
        let (x, _) = batch_of(dataset, chunk)?;
        let (logits, _) = forward(graph, params, &x, Mode::Infer)?;
        let labels = argmax_classes(&logits)?;
        for k in 0..chunk.len() {
            let map = labels.slice_outer(k)?;
            out.push(map);
        }
    }
    Ok(out)
}

/// IoU and iIoU of `predictions` against the dataset's labels. Average
/// instance sizes come from the dataset itself.
pub fn score_predictions(
    dataset: &[Sample],
    predictions: &[IntTensor],
    classes: usize,
    ignore_label: i32,
) -> Result<MetricsReport> {
    if predictions.len() != dataset.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} samples",
            predictions.len(),
            dataset.len()
        )));
    }
    let empty: Vec<Vec<i32>> = dataset
        .iter()
        .map(|s| {
            if s.instances.is_some() {
                Vec::new()
            } else {
                vec![0; s.labels.numel()]
            }
        })
        .collect();
    let inst = |i: usize| -> &[i32] {
        match &dataset[i].instances {
            Some(t) => t.data(),
            None => &empty[i],
        }
    };
    let avg = class_average_instance_sizes(
        (0..dataset.len()).map(|i| (dataset[i].labels.data(), inst(i))),
        classes,
        ignore_label,
    )?;
    let mut acc = IiouAccumulator::new(avg, ignore_label);
    for (i, pred) in predictions.iter().enumerate() {
        acc.add(dataset[i].labels.data(), inst(i), pred.data())?;
    }
    Ok(MetricsReport::new(
        acc.confusion().class_iou(),
        acc.class_iiou(),
    ))
}

/// Inference-mode forward, per-pixel argmax, IoU and iIoU.
pub fn evaluate(
    graph: &Graph,
    params: &ParamStore<f32>,
    dataset: &[Sample],
    ignore_label: i32,
) -> Result<MetricsReport> {
    let predictions = predict_dataset(graph, params, dataset)?;
    score_predictions(dataset, &predictions, graph.output_shape()[0], ignore_label)
}
