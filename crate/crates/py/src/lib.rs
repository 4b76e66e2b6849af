//! Python bindings. Tensors cross the boundary as flat row-major lists
//! together with their shape.

use std::path::PathBuf;

use linknet_core::analyze::{block_summary, CostReport};
use linknet_core::io::{load_dataset, load_model, save_dataset, save_model};
use linknet_core::metrics::{self, ConfusionMatrix, DEFAULT_IGNORE_LABEL};
use linknet_core::model::{padded_hw, EndToEndCheck, LinkConfig};
use linknet_core::ops::gradcheck::{check_primitives, PRIMITIVE_TOLERANCE};
use linknet_core::train::{self, TrainConfig};
use linknet_core::{Error, Tensor};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else if matches!(e, Error::Io(_)) {
        PyIOError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

type Flat<T> = (Vec<T>, Vec<usize>);

/// Encoder-decoder segmentation network with its parameters.
#[pyclass(name = "LinkNet", module = "linknet")]
pub struct PyLinkNet {
    inner: linknet_core::model::LinkNet,
}

#[pymethods]
impl PyLinkNet {
    #[new]
    #[pyo3(signature = (num_classes, height, width, bypass = true, width_divisor = 1, seed = 0))]
    fn new(
        num_classes: usize,
        height: usize,
        width: usize,
        bypass: bool,
        width_divisor: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let config = LinkConfig::new(num_classes, (height, width))
            .with_bypass(bypass)
            .with_width_divisor(width_divisor)
            .map_err(to_py)?;
        Ok(Self {
            inner: linknet_core::model::LinkNet::new(config, seed).map_err(to_py)?,
        })
    }

    /// Loads a checkpoint file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: load_model(&path).map_err(to_py)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&path, &self.inner).map_err(to_py)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.config.num_classes
    }

    #[getter]
    fn input_shape(&self) -> [usize; 3] {
        self.inner.graph.input_shape()
    }

    #[getter]
    fn bypass(&self) -> bool {
        self.inner.config.bypass
    }

    /// Trainable parameter count.
    fn param_count(&self) -> u64 {
        linknet_core::analyze::count_params(&self.inner.graph)
    }

    /// `{"params", "macs", "flops", "other_ops", "size_fp16_bytes"}`.
    fn cost(&self) -> std::collections::BTreeMap<&'static str, u64> {
        let r = CostReport::new(&self.inner.graph);
        [
            ("params", r.params),
            ("macs", r.macs),
            ("flops", r.flops()),
            ("other_ops", r.other_ops),
            ("size_fp16_bytes", r.size_bytes(2)),
        ]
        .into_iter()
        .collect()
    }

    /// `(block, input [C, H, W], output [C, H, W], params)` per stage.
    fn summary(&self) -> Vec<(String, [usize; 3], [usize; 3], u64)> {
        block_summary(&self.inner.graph)
            .into_iter()
            .map(|r| (r.name, r.input, r.output, r.params))
            .collect()
    }

    /// Inference-mode logits for a flat `[N, C, H, W]` batch.
    fn logits(&self, data: Vec<f32>, shape: Vec<usize>) -> PyResult<Flat<f32>> {
        let x = Tensor::from_vec(shape, data).map_err(to_py)?;
        let y = self.inner.logits(&x).map_err(to_py)?;
        let shape = y.shape().to_vec();
        Ok((y.into_data(), shape))
    }

    /// Per-pixel argmax labels `[N, H, W]`.
    fn predict(&self, data: Vec<f32>, shape: Vec<usize>) -> PyResult<Flat<i32>> {
        let x = Tensor::from_vec(shape, data).map_err(to_py)?;
        let y = self.inner.predict(&x).map_err(to_py)?;
        let shape = y.shape().to_vec();
        Ok((y.into_data(), shape))
    }

    /// Trains in place on a dataset directory and returns the epoch log as
    /// `(epoch, loss, miou)` tuples.
    #[pyo3(signature = (data_dir, epochs = 10, lr = 5e-4, batch = 4, seed = 0, class_weights = true))]
    fn fit(
        &mut self,
        data_dir: PathBuf,
        epochs: usize,
        lr: f64,
        batch: usize,
        seed: u64,
        class_weights: bool,
    ) -> PyResult<Vec<(usize, f64, Option<f64>)>> {
        let dataset = load_dataset(&data_dir).map_err(to_py)?;
        let config = TrainConfig {
            learning_rate: lr,
            batch_size: batch,
            epochs,
            seed,
            use_class_weights: class_weights,
            ..TrainConfig::default()
        };
        let outcome = train::train_loop(
            &self.inner.graph,
            self.inner.params.clone(),
            &dataset,
            &config,
            |_| {},
        )
        .map_err(to_py)?;
        self.inner.params = outcome.params;
        Ok(outcome
            .log
            .iter()
            .map(|e| (e.epoch, e.loss, e.miou))
            .collect())
    }

    /// `(mIoU, iIoU)` on a dataset directory.
    fn evaluate(&self, data_dir: PathBuf) -> PyResult<(Option<f64>, Option<f64>)> {
        let dataset = load_dataset(&data_dir).map_err(to_py)?;
        let r = train::evaluate(
            &self.inner.graph,
            &self.inner.params,
            &dataset,
            DEFAULT_IGNORE_LABEL,
        )
        .map_err(to_py)?;
        Ok((r.mean_iou, r.mean_iiou))
    }

    fn __repr__(&self) -> String {
        let [c, h, w] = self.inner.graph.input_shape();
        format!(
            "LinkNet(num_classes={}, input={c}x{h}x{w}, bypass={}, params={})",
            self.inner.config.num_classes,
            self.inner.config.bypass,
            self.param_count()
        )
    }
}

/// `1 / ln(1.02 + p)` per class.
#[pyfunction]
fn class_weights(pixel_frequencies: Vec<f64>) -> PyResult<Vec<f64>> {
    metrics::class_weights(&pixel_frequencies).map_err(to_py)
}

/// Per-class IoU (None where undefined) and their mean.
#[pyfunction]
#[pyo3(signature = (labels, predictions, num_classes, ignore_label = DEFAULT_IGNORE_LABEL))]
fn iou(
    labels: Vec<i32>,
    predictions: Vec<i32>,
    num_classes: usize,
    ignore_label: i32,
) -> PyResult<(Vec<Option<f64>>, Option<f64>)> {
    let mut cm = ConfusionMatrix::new(num_classes);
    cm.accumulate(&labels, &predictions, ignore_label)
        .map_err(to_py)?;
    Ok((cm.class_iou(), cm.mean_iou()))
}

/// Writes a synthetic shapes dataset directory.
#[pyfunction]
#[pyo3(signature = (out_dir, samples, height, width, num_classes, seed = 0))]
fn make_toy_data(
    out_dir: PathBuf,
    samples: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    seed: u64,
) -> PyResult<()> {
    let data =
        train::make_toy_dataset(samples, (height, width), num_classes, seed).map_err(to_py)?;
    save_dataset(&out_dir, &data).map_err(to_py)
}

/// Rounds a spatial size up to the network's downsampling multiple.
#[pyfunction]
fn padded_size(height: usize, width: usize) -> (usize, usize) {
    padded_hw(height, width)
}

/// `(name, max_rel_error, passed)` for every primitive and the end-to-end check.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn gradcheck(seed: u64) -> PyResult<Vec<(String, f64, bool)>> {
    let mut out: Vec<_> = check_primitives(seed, PRIMITIVE_TOLERANCE)
        .into_iter()
        .map(|(name, r)| (name, r.max_rel_error, r.passed()))
        .collect();
    let r = EndToEndCheck::default().run(seed).map_err(to_py)?;
    out.push(("end-to-end".into(), r.max_rel_error, r.passed()));
    Ok(out)
}

#[pymodule]
fn linknet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLinkNet>()?;
    m.add_function(wrap_pyfunction!(class_weights, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(make_toy_data, m)?)?;
    m.add_function(wrap_pyfunction!(padded_size, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
