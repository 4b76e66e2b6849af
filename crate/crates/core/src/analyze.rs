//! Static cost analysis: parameters, multiply-accumulates and model size.
//!
//! Counts are per image (batch dimension excluded). Convolutions and
//! transposed convolutions cost `Cout·Cin·kh·kw·Hout·Wout` MACs. Batch norm
//! costs `2·C·H·W` and ReLU, pooling and additions one op per output
//! element; these are reported as "other ops", separately from MACs.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::model::{Graph, Layer};

pub const MIB: f64 = 1024.0 * 1024.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostRow {
    pub path: String,
    pub kind: &'static str,
    pub params: u64,
    pub macs: u64,
    pub other_ops: u64,
    pub output_shape: [usize; 3],
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CostReport {
    pub input_shape: [usize; 3],
    pub rows: Vec<CostRow>,
    pub params: u64,
    pub macs: u64,
    pub other_ops: u64,
}

fn kind(layer: &Layer) -> &'static str {
    match layer {
        Layer::Input => "input",
        Layer::Conv(_) => "conv",
        Layer::FullConv(_) => "fullconv",
        Layer::BatchNorm => "batchnorm",
        Layer::Relu => "relu",
        Layer::MaxPool(_) => "maxpool",
        Layer::Add => "add",
    }
}

impl CostReport {
    pub fn new(graph: &Graph) -> Self {
        let mut rows = Vec::new();
        for node in graph.nodes().iter().skip(1) {
            let [c, h, w] = node.shape;
            let elems = (c * h * w) as u64;
            let (params, macs, other) = match &node.layer {
                Layer::Conv(s) | Layer::FullConv(s) => {
                    let k = (s.in_channels * s.out_channels * s.kernel.0 * s.kernel.1) as u64;
                    let bias = if s.has_bias { s.out_channels as u64 } else { 0 };
                    (k + bias, k * (h * w) as u64, 0)
                }
                Layer::BatchNorm => (2 * c as u64, 0, 2 * elems),
                Layer::Relu | Layer::MaxPool(_) | Layer::Add => (0, 0, elems),
                Layer::Input => (0, 0, 0),
            };
            rows.push(CostRow {
                path: node.path.clone(),
                kind: kind(&node.layer),
                params,
                macs,
                other_ops: other,
                output_shape: node.shape,
            });
        }
        Self {
            input_shape: graph.input_shape(),
            params: rows.iter().map(|r| r.params).sum(),
            macs: rows.iter().map(|r| r.macs).sum(),
            other_ops: rows.iter().map(|r| r.other_ops).sum(),
            rows,
        }
    }

    /// `2 · macs`.
    pub fn flops(&self) -> u64 {
        2 * self.macs
    }

    pub fn size_bytes(&self, bytes_per_param: u64) -> u64 {
        self.params * bytes_per_param
    }

    /// Aligned per-node table followed by totals.
    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.path.len())
            .max()
            .unwrap_or(4)
            .max(4);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<width$}  {:<9}  {:>14}  {:>10}  {:>14}  {:>12}",
            "node", "kind", "output", "params", "macs", "other_ops"
        );
        for r in &self.rows {
            let [c, h, w] = r.output_shape;
            let _ = writeln!(
                s,
                "{:<width$}  {:<9}  {:>14}  {:>10}  {:>14}  {:>12}",
                r.path,
                r.kind,
                format!("{c}x{h}x{w}"),
                r.params,
                r.macs,
                r.other_ops
            );
        }
        s.push_str(&self.totals_text());
        s
    }

    /// Summary lines: parameters, MACs, FLOPs, other ops and model sizes.
    pub fn totals_text(&self) -> String {
        let [c, h, w] = self.input_shape;
        let fp16 = self.size_bytes(2);
        format!(
            "input: {c}x{h}x{w}\n\
             parameters: {} ({:.3} M)\n\
             MACs: {} ({:.3} G)\n\
             FLOPs (2*MACs): {} ({:.3} G)\n\
             other ops (batchnorm, relu, pool, add): {} ({:.3} G)\n\
             model size fp16: {} bytes ({:.2} MiB, {:.2} MB)\n\
             model size fp32: {} bytes ({:.2} MiB)\n",
            self.params,
            self.params as f64 / 1e6,
            self.macs,
            self.macs as f64 / 1e9,
            self.flops(),
            self.flops() as f64 / 1e9,
            self.other_ops,
            self.other_ops as f64 / 1e9,
            fp16,
            fp16 as f64 / MIB,
            fp16 as f64 / 1e6,
            self.size_bytes(4),
            self.size_bytes(4) as f64 / MIB,
        )
    }

    /// One tab-separated record per node, then one per total:
    /// `node <path> <kind> <CxHxW> <params> <macs> <other_ops>` and
    /// `total <name> <value>`.
    pub fn to_records(&self) -> String {
        let mut s = String::new();
        for r in &self.rows {
            let [c, h, w] = r.output_shape;
            let _ = writeln!(
                s,
                "node\t{}\t{}\t{c}x{h}x{w}\t{}\t{}\t{}",
                r.path, r.kind, r.params, r.macs, r.other_ops
            );
        }
        for (name, v) in [
            ("params", self.params),
            ("macs", self.macs),
            ("flops", self.flops()),
            ("other_ops", self.other_ops),
            ("size_fp16_bytes", self.size_bytes(2)),
            ("size_fp32_bytes", self.size_bytes(4)),
        ] {
            let _ = writeln!(s, "total\t{name}\t{v}");
        }
        s
    }
}

/// Trainable parameters (kernels, biases, gamma, beta); running statistics
/// are excluded.
pub fn count_params(graph: &Graph) -> u64 {
    graph
        .params()
        .iter()
        .filter(|p| p.role.trainable())
        .map(|p| p.numel() as u64)
        .sum()
}

/// Convolution MACs for one image of shape `input_shape`, which must be the
/// shape the graph was built for.
pub fn count_macs(graph: &Graph, input_shape: [usize; 3]) -> Result<u64> {
    if input_shape != graph.input_shape() {
        return Err(Error::ShapeMismatch {
            op: "count_macs input",
            lhs: graph.input_shape().to_vec(),
            rhs: input_shape.to_vec(),
        });
    }
    Ok(CostReport::new(graph).macs)
}

pub fn model_size_bytes(graph: &Graph, bytes_per_param: u64) -> u64 {
    count_params(graph) * bytes_per_param
}

/// Input and output shape of one network stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockRow {
    pub name: String,
    pub input: [usize; 3],
    pub output: [usize; 3],
    pub params: u64,
}

/// Per-stage view: initial block, encoders, decoders (deepest first), final block.
pub fn block_summary(graph: &Graph) -> Vec<BlockRow> {
    let mut names = vec!["init".to_string()];
    names.extend((1..=4).map(|i| format!("enc{i}")));
    names.extend((1..=4).rev().map(|i| format!("dec{i}")));
    names.push("final".into());
    let mut rows = Vec::new();
    for name in names {
        let prefix = format!("{name}.");
        let ids: Vec<usize> = (0..graph.nodes().len())
            .filter(|&i| graph.node(i).path.starts_with(&prefix))
            .collect();
        let (Some(&first), Some(&last)) = (ids.first(), ids.last()) else {
            continue;
        };
        let params = graph
            .params()
            .iter()
            .filter(|p| p.role.trainable() && p.key.starts_with(&prefix))
            .map(|p| p.numel() as u64)
            .sum();
        rows.push(BlockRow {
            input: graph.node(graph.node(first).inputs[0]).shape,
            output: graph.node(last).shape,
            name,
            params,
        });
    }
    rows
}
