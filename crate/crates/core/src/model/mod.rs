//! The segmentation network: configuration, graph construction, parameters
//! and execution.

mod check;
mod config;
mod exec;
mod graph;
mod params;

pub use check::{EndToEndCheck, END_TO_END_TOLERANCE};
pub use config::{padded_hw, LinkConfig, DECODER_WIDTHS, DOWNSAMPLE_FACTOR, ENCODER_WIDTHS};
pub use exec::{argmax_classes, backward, backward_with_input, forward, ForwardCache};
pub use graph::{build_linknet, Graph, GraphBuilder, Layer, Node, NodeId, ParamRole, ParamSpec};
pub use params::{GradStore, ParamStore};

use crate::error::Result;
use crate::ops::Mode;
use crate::tensor::{IntTensor, Tensor};

/// A built graph together with its parameters.
#[derive(Debug, Clone)]
pub struct LinkNet {
    pub config: LinkConfig,
    pub graph: Graph,
    pub params: ParamStore<f32>,
}

impl LinkNet {
    /// Builds the graph and initializes parameters from `seed`.
    pub fn new(config: LinkConfig, seed: u64) -> Result<Self> {
        let graph = build_linknet(&config)?;
        let params = ParamStore::init(&graph, seed)?;
        Ok(Self {
            config,
            graph,
            params,
        })
    }

    /// Pairs a configuration with existing parameters, checking they fit.
    pub fn with_params(config: LinkConfig, params: ParamStore<f32>) -> Result<Self> {
        let graph = build_linknet(&config)?;
        params.check_matches(&graph)?;
        Ok(Self {
            config,
            graph,
            params,
        })
    }

    /// Inference-mode logits for a `[N, C, H, W]` batch.
    pub fn logits(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(forward(&self.graph, &self.params, x, Mode::Infer)?.0)
    }

    /// Per-pixel class labels `[N, H, W]`.
    pub fn predict(&self, x: &Tensor<f32>) -> Result<IntTensor> {
        argmax_classes(&self.logits(x)?)
    }
}
