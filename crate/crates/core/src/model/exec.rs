use crate::error::{Error, Result};
use crate::model::graph::{bias_key, weight_key, Graph, Layer, NodeId};
use crate::model::params::{GradStore, ParamStore};
use crate::ops::{
    batchnorm2d, batchnorm2d_vjp, conv2d, conv2d_vjp, conv_transpose2d, conv_transpose2d_vjp,
    maxpool2d, maxpool2d_vjp, relu, relu_vjp, BatchNormCache, Mode,
};
use crate::tensor::{IntTensor, Real, Tensor};

/// Activations kept by [`forward`] for [`backward`], plus the running
/// statistics a training-mode pass would commit.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    mode: Mode,
    values: Vec<Option<Tensor<T>>>,
    bn: Vec<Option<BatchNormCache<T>>>,
    argmax: Vec<Option<Vec<usize>>>,
    running: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ForwardCache<T> {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Updated `running_mean` / `running_var` entries (training mode only).
    pub fn running_stats(&self) -> &[(String, Tensor<T>)] {
        &self.running
    }

    /// Activation of the node at `path`, if still held.
    pub fn value(&self, graph: &Graph, path: &str) -> Option<&Tensor<T>> {
        graph.find(path).and_then(|id| self.values[id].as_ref())
    }
}

impl<T: Real> ParamStore<T> {
    /// Commits the running statistics computed by a training-mode forward.
    pub fn apply_running_stats(&mut self, cache: &ForwardCache<T>) -> Result<()> {
        for (key, t) in &cache.running {
            *self.get_mut(key)? = t.clone();
        }
        Ok(())
    }
}

fn value<'a, T>(
    values: &'a [Option<Tensor<T>>],
    id: NodeId,
    graph: &Graph,
) -> Result<&'a Tensor<T>> {
    values[id].as_ref().ok_or_else(|| {
        Error::InvalidArgument(format!(
            "activation of `{}` was not kept",
            graph.node(id).path
        ))
    })
}

/// Runs the graph on a batch `x` of shape `[N, C, H, W]`.
///
/// Training mode normalizes with batch statistics and keeps everything
/// backward needs; inference mode uses running statistics and frees each
/// activation after its last reader.
pub fn forward<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    x: &Tensor<T>,
    mode: Mode,
) -> Result<(Tensor<T>, ForwardCache<T>)> {
    let [_, c, h, w] = x.dims4("forward").map_err(|e| e.at_node("input"))?;
    let expected = graph.input_shape();
    if [c, h, w] != expected {
        return Err(Error::ShapeMismatch {
            op: "network input",
            lhs: expected.to_vec(),
            rhs: x.shape().to_vec(),
        }
        .at_node("input"));
    }
    let n_nodes = graph.nodes().len();
    let mut cache = ForwardCache {
        mode,
        values: vec![None; n_nodes],
        bn: vec![None; n_nodes],
        argmax: vec![None; n_nodes],
        running: Vec::new(),
    };
    for (id, node) in graph.nodes().iter().enumerate() {
        let out = eval_node(graph, params, &mut cache, id, x).map_err(|e| e.at_node(&node.path))?;
        cache.values[id] = Some(out);
        if mode == Mode::Infer {
            for &i in &node.inputs {
                if graph.last_use(i) == id && i != graph.output() {
                    cache.values[i] = None;
                }
            }
        }
    }
    let logits = cache.values[graph.output()]
        .clone()
        .expect("output computed");
    Ok((logits, cache))
}

fn eval_node<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    cache: &mut ForwardCache<T>,
    id: NodeId,
    x: &Tensor<T>,
) -> Result<Tensor<T>> {
    let node = graph.node(id);
    let path = node.path.as_str();
    let input = |k: usize| value(&cache.values, node.inputs[k], graph);
    let bias = |has: bool| -> Result<Option<&Tensor<T>>> {
        if has {
            params.get(&bias_key(path)).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(match node.layer {
        Layer::Input => x.clone(),
        Layer::Conv(spec) => conv2d(
            input(0)?,
            &spec,
            params.get(&weight_key(path))?,
            bias(spec.has_bias)?,
        )?,
        Layer::FullConv(spec) => conv_transpose2d(
            input(0)?,
            &spec,
            params.get(&weight_key(path))?,
            bias(spec.has_bias)?,
        )?,
        Layer::BatchNorm => {
            let state = params.bn_state(path)?;
            let (y, next, bn_cache) = batchnorm2d(input(0)?, &state, cache.mode)?;
            if cache.mode == Mode::Train {
                let c = next.channels();
                cache.running.push((
                    format!("{path}.running_mean"),
                    Tensor::from_vec([c], next.running_mean)?,
                ));
                cache.running.push((
                    format!("{path}.running_var"),
                    Tensor::from_vec([c], next.running_var)?,
                ));
                cache.bn[id] = bn_cache;
            }
            y
        }
        Layer::Relu => relu(input(0)?),
        Layer::MaxPool(spec) => {
            let (y, argmax) = maxpool2d(input(0)?, &spec)?;
            if cache.mode == Mode::Train {
                cache.argmax[id] = Some(argmax);
            }
            y
        }
        Layer::Add => input(0)?.add(input(1)?)?,
    })
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, g: Tensor<T>) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

/// Reverse sweep from `grad_logits` (gradient of the loss with respect to
/// the logits). Returns one gradient per trainable parameter.
pub fn backward<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    cache: &ForwardCache<T>,
    grad_logits: &Tensor<T>,
) -> Result<GradStore<T>> {
    Ok(backward_with_input(graph, params, cache, grad_logits)?.0)
}

/// [`backward`] that also returns the gradient with respect to the network input.
pub fn backward_with_input<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    cache: &ForwardCache<T>,
    grad_logits: &Tensor<T>,
) -> Result<(GradStore<T>, Tensor<T>)> {
    if cache.mode != Mode::Train {
        return Err(Error::InvalidArgument(
            "backward needs a cache from a training-mode forward".into(),
        ));
    }
    let out_id = graph.output();
    let out = value(&cache.values, out_id, graph)?;
    if out.shape() != grad_logits.shape() {
        return Err(Error::ShapeMismatch {
            op: "backward grad_logits",
            lhs: out.shape().to_vec(),
            rhs: grad_logits.shape().to_vec(),
        });
    }
    let mut grads: Vec<Option<Tensor<T>>> = vec![None; graph.nodes().len()];
    grads[out_id] = Some(grad_logits.clone());
    let mut store = GradStore::new();
    for id in (1..graph.nodes().len()).rev() {
        let node = graph.node(id);
        let Some(g) = grads[id].take() else { continue };
        backward_node(graph, params, cache, id, g, &mut grads, &mut store)
            .map_err(|e| e.at_node(&node.path))?;
    }
    let grad_input = match grads[0].take() {
        Some(g) => g,
        None => value(&cache.values, 0, graph)?.zeros_like(),
    };
    Ok((store, grad_input))
}

fn backward_node<T: Real>(
    graph: &Graph,
    params: &ParamStore<T>,
    cache: &ForwardCache<T>,
    id: NodeId,
    g: Tensor<T>,
    grads: &mut [Option<Tensor<T>>],
    store: &mut GradStore<T>,
) -> Result<()> {
    let node = graph.node(id);
    let path = node.path.as_str();
    match node.layer {
        Layer::Input => {}
        Layer::Conv(spec) | Layer::FullConv(spec) => {
            let x = value(&cache.values, node.inputs[0], graph)?;
            let w = params.get(&weight_key(path))?;
            let cg = if matches!(node.layer, Layer::Conv(_)) {
                conv2d_vjp(x, &spec, w, &g)?
            } else {
                conv_transpose2d_vjp(x, &spec, w, &g)?
            };
            store.insert(weight_key(path), cg.weight);
            if let Some(b) = cg.bias {
                store.insert(bias_key(path), b);
            }
            accumulate(&mut grads[node.inputs[0]], cg.x)?;
        }
        Layer::BatchNorm => {
            let bn = cache.bn[id]
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("missing batch-norm cache".into()))?;
            let bg = batchnorm2d_vjp(bn, &g)?;
            store.insert(format!("{path}.gamma"), bg.gamma);
            store.insert(format!("{path}.beta"), bg.beta);
            accumulate(&mut grads[node.inputs[0]], bg.x)?;
        }
        Layer::Relu => {
            let x = value(&cache.values, node.inputs[0], graph)?;
            accumulate(&mut grads[node.inputs[0]], relu_vjp(x, &g)?)?;
        }
        Layer::MaxPool(_) => {
            let x = value(&cache.values, node.inputs[0], graph)?;
            let argmax = cache.argmax[id]
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("missing pooling indices".into()))?;
            accumulate(
                &mut grads[node.inputs[0]],
                maxpool2d_vjp(argmax, &g, x.shape())?,
            )?;
        }
        Layer::Add => {
            accumulate(&mut grads[node.inputs[0]], g.clone())?;
            accumulate(&mut grads[node.inputs[1]], g)?;
        }
    }
    Ok(())
}

/// Per-pixel class with the largest score (first index on ties):
/// `[N, C, H, W]` logits to `[N, H, W]` labels.
pub fn argmax_classes<T: Real>(logits: &Tensor<T>) -> Result<IntTensor> {
    let [n, c, h, w] = logits.dims4("argmax_classes")?;
    let plane = h * w;
    let d = logits.data();
    let mut out = Vec::with_capacity(n * plane);
    for s in 0..n {
        for p in 0..plane {
            let mut best = 0;
            let mut best_v = d[s * c * plane + p];
            for k in 1..c {
                let v = d[(s * c + k) * plane + p];
                if v > best_v {
                    best = k;
                    best_v = v;
                }
            }
            out.push(best as i32);
        }
    }
    Tensor::from_vec([n, h, w], out)
}
