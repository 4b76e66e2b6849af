use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::model::graph::{Graph, ParamRole};
use crate::ops::{BatchNormState, DEFAULT_EPSILON, DEFAULT_MOMENTUM};
use crate::rng::{he_normal_init, Prng};
use crate::tensor::{Real, Tensor};

/// Named tensors keyed by parameter path (`<node>.weight`, `<node>.gamma`, ...).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T = f32> {
    tensors: BTreeMap<String, Tensor<T>>,
}

/// Gradients share the store layout, without running statistics.
pub type GradStore<T = f32> = ParamStore<T>;

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            tensors: BTreeMap::new(),
        }
    }

    /// He-normal kernels, gamma 1, beta 0, running mean 0, running variance 1,
    /// biases 0. Kernels draw from one generator in graph order.
    pub fn init(graph: &Graph, seed: u64) -> Result<Self> {
        let mut rng = Prng::new(seed);
        let mut store = Self::new();
        for p in graph.params() {
            let t = match p.role {
                ParamRole::Weight { fan_in } => he_normal_init(&mut rng, &p.shape, fan_in)?,
                ParamRole::Bias | ParamRole::Beta | ParamRole::RunningMean => {
                    Tensor::zeros(p.shape.clone())?
                }
                ParamRole::Gamma | ParamRole::RunningVar => {
                    Tensor::full(p.shape.clone(), T::one())?
                }
            };
            store.insert(p.key.clone(), t);
        }
        Ok(store)
    }

    pub fn insert(&mut self, key: impl Into<String>, tensor: Tensor<T>) -> Option<Tensor<T>> {
        self.tensors.insert(key.into(), tensor)
    }

    pub fn get(&self, key: &str) -> Result<&Tensor<T>> {
        self.tensors
            .get(key)
            .ok_or_else(|| Error::MissingParam(key.to_string()))
    }

    pub fn get_mut(&mut self, key: &str) -> Result<&mut Tensor<T>> {
        self.tensors
            .get_mut(key)
            .ok_or_else(|| Error::MissingParam(key.to_string()))
    }

    pub fn contains(&self, key: &str) -> bool {
        self.tensors.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    /// Entries in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Total element count.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Checks that keys and shapes agree exactly with the graph.
    pub fn check_matches(&self, graph: &Graph) -> Result<()> {
        let expected = graph.param_shapes();
        for (key, shape) in &expected {
            let t = self.get(key)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "parameter shape",
                    lhs: shape.clone(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        if let Some(extra) = self.keys().find(|k| !expected.contains_key(*k)) {
            return Err(Error::InvalidArgument(format!(
                "parameter `{extra}` is not part of the model"
            )));
        }
        Ok(())
    }

    pub(crate) fn bn_state(&self, path: &str) -> Result<BatchNormState<T>> {
        let vec = |name: &str| -> Result<Vec<T>> {
            Ok(self.get(&format!("{path}.{name}"))?.data().to_vec())
        };
        Ok(BatchNormState {
            gamma: vec("gamma")?,
            beta: vec("beta")?,
            running_mean: vec("running_mean")?,
            running_var: vec("running_var")?,
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        })
    }
}
