use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};
use crate::model::config::LinkConfig;
use crate::ops::{ConvSpec, PoolSpec};

pub type NodeId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Input,
    Conv(ConvSpec),
    /// Transposed ("full") convolution.
    FullConv(ConvSpec),
    BatchNorm,
    Relu,
    MaxPool(PoolSpec),
    Add,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub path: String,
    pub layer: Layer,
    pub inputs: Vec<NodeId>,
    /// Per-sample output shape `[C, H, W]`.
    pub shape: [usize; 3],
}

impl Node {
    pub fn input_shape<'a>(&self, graph: &'a Graph) -> &'a [usize; 3] {
        &graph.nodes[self.inputs[0]].shape
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight { fan_in: usize },
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    pub fn trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub key: String,
    pub shape: Vec<usize>,
    pub role: ParamRole,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Layer graph in topological order. Node 0 is the single input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<ParamSpec>,
    output: NodeId,
    last_use: Vec<NodeId>,
}

impl Graph {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id]
    }

    pub fn find(&self, path: &str) -> Option<NodeId> {
        self.nodes.iter().position(|n| n.path == path)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.nodes[0].shape
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn output_shape(&self) -> [usize; 3] {
        self.nodes[self.output].shape
    }

    /// Parameter tensors in creation order.
    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn param_shapes(&self) -> BTreeMap<String, Vec<usize>> {
        self.params
            .iter()
            .map(|p| (p.key.clone(), p.shape.clone()))
            .collect()
    }

    /// Index of the last node that reads `id`'s output (`id` itself if none).
    pub(crate) fn last_use(&self, id: NodeId) -> NodeId {
        self.last_use[id]
    }
}

pub(crate) fn weight_key(path: &str) -> String {
    format!("{path}.weight")
}
pub(crate) fn bias_key(path: &str) -> String {
    format!("{path}.bias")
}

/// Appends layers one by one, inferring shapes and rejecting mismatches as
/// they are introduced.
#[derive(Debug)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
    params: Vec<ParamSpec>,
    paths: HashSet<String>,
}

impl GraphBuilder {
    /// Starts a graph whose input node has per-sample shape `[C, H, W]`.
    pub fn new(input_shape: [usize; 3]) -> (Self, NodeId) {
        let mut b = Self {
            nodes: Vec::new(),
            params: Vec::new(),
            paths: HashSet::new(),
        };
        b.paths.insert("input".into());
        b.nodes.push(Node {
            path: "input".into(),
            layer: Layer::Input,
            inputs: vec![],
            shape: input_shape,
        });
        (b, 0)
    }

    pub fn shape(&self, id: NodeId) -> [usize; 3] {
        self.nodes[id].shape
    }

    fn push(
        &mut self,
        path: &str,
        layer: Layer,
        inputs: Vec<NodeId>,
        shape: [usize; 3],
    ) -> Result<NodeId> {
        if !self.paths.insert(path.to_string()) {
            return Err(Error::Config(format!("duplicate node path `{path}`")));
        }
        if let Some(&bad) = inputs.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(Error::Config(format!(
                "node `{path}` reads unknown node {bad}"
            )));
        }
        self.nodes.push(Node {
            path: path.to_string(),
            layer,
            inputs,
            shape,
        });
        Ok(self.nodes.len() - 1)
    }

    fn param(&mut self, key: String, shape: Vec<usize>, role: ParamRole) {
        self.params.push(ParamSpec { key, shape, role });
    }

    fn check_channels(&self, path: &str, input: NodeId, expected: usize) -> Result<()> {
        let got = self.shape(input)[0];
        if got != expected {
            return Err(Error::Config(format!(
                "node `{path}` expects {expected} input channels, got {got}"
            )));
        }
        Ok(())
    }

    pub fn conv(&mut self, path: &str, input: NodeId, spec: ConvSpec) -> Result<NodeId> {
        self.check_channels(path, input, spec.in_channels)?;
        let [_, h, w] = self.shape(input);
        let (oh, ow) = spec.conv_output_hw(h, w).map_err(|e| e.at_node(path))?;
        let id = self.push(
            path,
            Layer::Conv(spec),
            vec![input],
            [spec.out_channels, oh, ow],
        )?;
        let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
        self.param(
            weight_key(path),
            spec.conv_weight_shape().to_vec(),
            ParamRole::Weight { fan_in },
        );
        if spec.has_bias {
            self.param(bias_key(path), vec![spec.out_channels], ParamRole::Bias);
        }
        Ok(id)
    }

    pub fn full_conv(&mut self, path: &str, input: NodeId, spec: ConvSpec) -> Result<NodeId> {
        self.check_channels(path, input, spec.in_channels)?;
        let [_, h, w] = self.shape(input);
        let (oh, ow) = spec
            .transposed_output_hw(h, w)
            .map_err(|e| e.at_node(path))?;
        let id = self.push(
            path,
            Layer::FullConv(spec),
            vec![input],
            [spec.out_channels, oh, ow],
        )?;
        let fan_in = spec.in_channels * spec.kernel.0 * spec.kernel.1;
        self.param(
            weight_key(path),
            spec.transposed_weight_shape().to_vec(),
            ParamRole::Weight { fan_in },
        );
        if spec.has_bias {
            self.param(bias_key(path), vec![spec.out_channels], ParamRole::Bias);
        }
        Ok(id)
    }

    pub fn batch_norm(&mut self, path: &str, input: NodeId) -> Result<NodeId> {
        let shape = self.shape(input);
        let id = self.push(path, Layer::BatchNorm, vec![input], shape)?;
        let c = vec![shape[0]];
        self.param(format!("{path}.gamma"), c.clone(), ParamRole::Gamma);
        self.param(format!("{path}.beta"), c.clone(), ParamRole::Beta);
        self.param(
            format!("{path}.running_mean"),
            c.clone(),
            ParamRole::RunningMean,
        );
        self.param(format!("{path}.running_var"), c, ParamRole::RunningVar);
        Ok(id)
    }

    pub fn relu(&mut self, path: &str, input: NodeId) -> Result<NodeId> {
        let shape = self.shape(input);
        self.push(path, Layer::Relu, vec![input], shape)
    }

    pub fn max_pool(&mut self, path: &str, input: NodeId, spec: PoolSpec) -> Result<NodeId> {
        let [c, h, w] = self.shape(input);
        let (oh, ow) = spec.output_hw(h, w).map_err(|e| e.at_node(path))?;
        self.push(path, Layer::MaxPool(spec), vec![input], [c, oh, ow])
    }

    pub fn add(&mut self, path: &str, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Config(format!(
                "node `{path}` adds tensors of different shapes {sa:?} and {sb:?}"
            )));
        }
        self.push(path, Layer::Add, vec![a, b], sa)
    }

    fn conv_bn(
        &mut self,
        prefix: &str,
        tag: &str,
        input: NodeId,
        spec: ConvSpec,
        full: bool,
    ) -> Result<NodeId> {
        let conv_path = format!("{prefix}.conv{tag}");
        let x = if full {
            self.full_conv(&conv_path, input, spec)?
        } else {
            self.conv(&conv_path, input, spec)?
        };
        self.batch_norm(&format!("{prefix}.bn{tag}"), x)
    }

    fn conv_bn_relu(
        &mut self,
        prefix: &str,
        tag: &str,
        input: NodeId,
        spec: ConvSpec,
        full: bool,
    ) -> Result<NodeId> {
        let x = self.conv_bn(prefix, tag, input, spec, full)?;
        self.relu(&format!("{prefix}.relu{tag}"), x)
    }

    /// 7×7/2 conv, BN, ReLU, 3×3/2 max-pool: spatial ÷4.
    pub fn initial_block(&mut self, input: NodeId, out_channels: usize) -> Result<NodeId> {
        let cin = self.shape(input)[0];
        let spec = ConvSpec::new(cin, out_channels, 7)
            .stride(2)
            .pad(3)
            .bias(false);
        let x = self.conv_bn_relu("init", "", input, spec, false)?;
        self.max_pool("init.pool", x, PoolSpec::STEM)
    }

    /// Post-activation residual unit: two 3×3 convs with a projection
    /// shortcut when the shape changes.
    fn residual_unit(
        &mut self,
        prefix: &str,
        input: NodeId,
        m: usize,
        n: usize,
        stride: usize,
    ) -> Result<NodeId> {
        let a = ConvSpec::new(m, n, 3).stride(stride).pad(1).bias(false);
        let x = self.conv_bn_relu(prefix, "1", input, a, false)?;
        let b = ConvSpec::new(n, n, 3).pad(1).bias(false);
        let x = self.conv_bn(prefix, "2", x, b, false)?;
        let shortcut = if m != n || stride != 1 {
            let p = ConvSpec::new(m, n, 1).stride(stride).bias(false);
            let s = self.conv(&format!("{prefix}.shortcut.conv"), input, p)?;
            self.batch_norm(&format!("{prefix}.shortcut.bn"), s)?
        } else {
            input
        };
        let sum = self.add(&format!("{prefix}.add"), x, shortcut)?;
        self.relu(&format!("{prefix}.relu"), sum)
    }

    pub fn encoder_block(
        &mut self,
        i: usize,
        m: usize,
        n: usize,
        downsample: bool,
        input: NodeId,
    ) -> Result<NodeId> {
        let stride = if downsample { 2 } else { 1 };
        let x = self.residual_unit(&format!("enc{i}.unit1"), input, m, n, stride)?;
        self.residual_unit(&format!("enc{i}.unit2"), x, n, n, 1)
    }

    /// 1×1 (m→m/4), 3×3 full-conv (×2 when upsampling), 1×1 (m/4→n), each
    /// followed by BN and ReLU.
    pub fn decoder_block(
        &mut self,
        i: usize,
        m: usize,
        n: usize,
        upsample: bool,
        input: NodeId,
    ) -> Result<NodeId> {
        if !m.is_multiple_of(4) || m == 0 {
            return Err(Error::Config(format!(
                "decoder block {i} input width {m} is not a positive multiple of 4"
            )));
        }
        let prefix = format!("dec{i}");
        let q = m / 4;
        let x = self.conv_bn_relu(
            &prefix,
            "1",
            input,
            ConvSpec::new(m, q, 1).bias(false),
            false,
        )?;
        let up = if upsample {
            ConvSpec::new(q, q, 3).stride(2).pad(1).output_pad(1)
        } else {
            ConvSpec::new(q, q, 3).pad(1)
        };
        let x = self.conv_bn_relu(&prefix, "2", x, up.bias(false), true)?;
        self.conv_bn_relu(&prefix, "3", x, ConvSpec::new(q, n, 1).bias(false), false)
    }

    /// Two transposed convs restoring the ÷4 resolution, with a 3×3 conv
    /// between; the last layer emits biased logits.
    pub fn final_block(&mut self, input: NodeId, mid: usize, num_classes: usize) -> Result<NodeId> {
        let cin = self.shape(input)[0];
        let a = ConvSpec::new(cin, mid, 3)
            .stride(2)
            .pad(1)
            .output_pad(1)
            .bias(false);
        let x = self.conv_bn_relu("final", "1", input, a, true)?;
        let b = ConvSpec::new(mid, mid, 3).pad(1).bias(false);
        let x = self.conv_bn_relu("final", "2", x, b, false)?;
        let c = ConvSpec::new(mid, num_classes, 2).stride(2).bias(true);
        self.full_conv("final.conv3", x, c)
    }

    /// Freezes the graph with `output` as its single output node.
    pub fn finish(self, output: NodeId) -> Graph {
        let mut last_use: Vec<NodeId> = (0..self.nodes.len()).collect();
        for (id, node) in self.nodes.iter().enumerate() {
            for &i in &node.inputs {
                last_use[i] = last_use[i].max(id);
            }
        }
        Graph {
            nodes: self.nodes,
            params: self.params,
            output,
            last_use,
        }
    }
}

pub fn build_linknet(config: &LinkConfig) -> Result<Graph> {
    config.validate()?;
    let (h, w) = config.input_hw;
    let (mut b, input) = GraphBuilder::new([config.in_channels, h, w]);
    let stem = b.initial_block(input, config.stem_width())?;
    let mut enc_inputs = [stem; 4];
    let mut x = stem;
    for (i, &(m, n)) in config.encoder_widths.iter().enumerate() {
        enc_inputs[i] = x;
        x = b.encoder_block(i + 1, m, n, i > 0, x)?;
    }
    for i in (0..4).rev() {
        let (m, n) = config.decoder_widths[i];
        x = b.decoder_block(i + 1, m, n, i > 0, x)?;
        if config.bypass {
            x = b.add(&format!("dec{}.bypass", i + 1), x, enc_inputs[i])?;
        }
    }
    let out = b.final_block(x, config.final_width(), config.num_classes)?;
    Ok(b.finish(out))
}
