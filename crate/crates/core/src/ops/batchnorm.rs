use crate::error::{Error, Result};
use crate::ops::Mode;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_EPSILON: f64 = 1e-5;
/// Weight of the current batch in the running-statistics update.
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T> {
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub epsilon: f64,
    pub momentum: f64,
}

impl<T: Real> BatchNormState<T> {
    /// gamma 1, beta 0, running mean 0, running variance 1.
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            epsilon: DEFAULT_EPSILON,
            momentum: DEFAULT_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    fn validate(&self) -> Result<()> {
        let c = self.gamma.len();
        if self.beta.len() != c || self.running_mean.len() != c || self.running_var.len() != c {
            return Err(Error::InvalidArgument(
                "batch-norm state vectors differ in length".into(),
            ));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0)
            || !(self.momentum > 0.0 && self.momentum < 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "batch-norm epsilon {} / momentum {} out of range",
                self.epsilon, self.momentum
            )));
        }
        Ok(())
    }
}

/// Saved by a training-mode forward for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    x_hat: Tensor<T>,
    inv_std: Vec<f64>,
    gamma: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNormGrads<T> {
    pub x: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Output, updated state and (in training mode) the backward cache.
pub type BatchNormOutput<T> = (Tensor<T>, BatchNormState<T>, Option<BatchNormCache<T>>);

/// Per-channel normalization over `(N, H, W)`.
///
/// Training mode normalizes with the (biased) batch variance and folds the
/// unbiased batch variance into the running statistics:
/// `running = (1 − momentum)·running + momentum·batch`.
/// Inference mode uses the running statistics and returns no cache.
pub fn batchnorm2d<T: Real>(
    x: &Tensor<T>,
    state: &BatchNormState<T>,
    mode: Mode,
) -> Result<BatchNormOutput<T>> {
    state.validate()?;
    let [n, c, h, w] = x.dims4("batchnorm2d")?;
    if c != state.channels() {
        return Err(Error::ShapeMismatch {
            op: "batchnorm2d channels",
            lhs: vec![state.channels()],
            rhs: vec![c],
        });
    }
    let plane = h * w;
    let count = n * plane;
    let mut y = x.zeros_like();
    let mut next = state.clone();

    match mode {
        Mode::Infer => {
            for ch in 0..c {
                let inv_std = 1.0 / (state.running_var[ch].as_f64() + state.epsilon).sqrt();
                let scale = T::from_f64(state.gamma[ch].as_f64() * inv_std);
                let shift = T::from_f64(
                    state.beta[ch].as_f64()
                        - state.gamma[ch].as_f64() * inv_std * state.running_mean[ch].as_f64(),
                );
                for s in 0..n {
                    let start = (s * c + ch) * plane;
                    for (yo, &xi) in y.data_mut()[start..start + plane]
                        .iter_mut()
                        .zip(&x.data()[start..start + plane])
                    {
                        *yo = xi * scale + shift;
                    }
                }
            }
            Ok((y, next, None))
        }
        Mode::Train => {
            if count < 2 {
                return Err(Error::InvalidArgument(format!(
                    "training-mode batch norm needs at least 2 values per channel, got {count}"
                )));
            }
            let mut x_hat = x.zeros_like();
            let mut inv_stds = Vec::with_capacity(c);
            for ch in 0..c {
                let planes = (0..n).map(|s| (s * c + ch) * plane);
                let sum: f64 = planes
                    .clone()
                    .flat_map(|st| &x.data()[st..st + plane])
                    .map(|v| v.as_f64())
                    .sum();
                let mean = sum / count as f64;
                let sq: f64 = planes
                    .clone()
                    .flat_map(|st| &x.data()[st..st + plane])
                    .map(|v| (v.as_f64() - mean).powi(2))
                    .sum();
                // two-pass variance cannot go negative beyond rounding
                let var = (sq / count as f64).max(0.0);
                let inv_std = 1.0 / (var + state.epsilon).sqrt();
                inv_stds.push(inv_std);
                let (g, b) = (state.gamma[ch], state.beta[ch]);
                for st in planes {
                    for i in st..st + plane {
                        let xh = T::from_f64((x.data()[i].as_f64() - mean) * inv_std);
                        x_hat.data_mut()[i] = xh;
                        y.data_mut()[i] = g * xh + b;
                    }
                }
                let m = state.momentum;
                let unbiased = sq / (count - 1) as f64;
                next.running_mean[ch] =
                    T::from_f64((1.0 - m) * state.running_mean[ch].as_f64() + m * mean);
                next.running_var[ch] =
                    T::from_f64((1.0 - m) * state.running_var[ch].as_f64() + m * unbiased);
            }
            let cache = BatchNormCache {
                x_hat,
                inv_std: inv_stds,
                gamma: state.gamma.clone(),
            };
            Ok((y, next, Some(cache)))
        }
    }
}

/// Backward pass of training-mode [`batchnorm2d`].
pub fn batchnorm2d_vjp<T: Real>(
    cache: &BatchNormCache<T>,
    grad_out: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    if grad_out.shape() != cache.x_hat.shape() {
        return Err(Error::ShapeMismatch {
            op: "batchnorm2d_vjp",
            lhs: cache.x_hat.shape().to_vec(),
            rhs: grad_out.shape().to_vec(),
        });
    }
    let [n, c, h, w] = grad_out.dims4("batchnorm2d_vjp")?;
    let plane = h * w;
    let count = (n * plane) as f64;
    let mut gx = grad_out.zeros_like();
    let mut g_gamma = Vec::with_capacity(c);
    let mut g_beta = Vec::with_capacity(c);
    let (g, xh) = (grad_out.data(), cache.x_hat.data());
    for ch in 0..c {
        let starts: Vec<usize> = (0..n).map(|s| (s * c + ch) * plane).collect();
        let (mut sum_g, mut sum_gx) = (0.0f64, 0.0f64);
        for &st in &starts {
            for i in st..st + plane {
                sum_g += g[i].as_f64();
                sum_gx += g[i].as_f64() * xh[i].as_f64();
            }
        }
        let scale = cache.gamma[ch].as_f64() * cache.inv_std[ch] / count;
        for &st in &starts {
            for i in st..st + plane {
                let v = scale * (count * g[i].as_f64() - sum_g - xh[i].as_f64() * sum_gx);
                gx.data_mut()[i] = T::from_f64(v);
            }
        }
        g_gamma.push(T::from_f64(sum_gx));
        g_beta.push(T::from_f64(sum_g));
    }
    Ok(BatchNormGrads {
        x: gx,
        gamma: Tensor::from_vec([c], g_gamma)?,
        beta: Tensor::from_vec([c], g_beta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::{gradcheck, random_tensor};
    use crate::rng::Prng;

    #[test]
    fn infer_with_identity_stats_is_near_identity() {
        let x = random_tensor(&mut Prng::new(1), &[2, 3, 4, 4]);
        let (y, next, cache) = batchnorm2d(&x, &BatchNormState::identity(3), Mode::Infer).unwrap();
        assert!(cache.is_none());
        assert_eq!(next, BatchNormState::identity(3));
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= DEFAULT_EPSILON * b.abs() + 1e-6);
        }
    }

    #[test]
    fn train_two_values() {
        let x = Tensor::from_vec([1, 1, 1, 2], vec![1.0f64, 3.0]).unwrap();
        let (y, next, _) = batchnorm2d(&x, &BatchNormState::identity(1), Mode::Train).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-4);
        assert!((y.data()[1] - 1.0).abs() < 1e-4);
        // running: 0.9·0 + 0.1·2 and 0.9·1 + 0.1·(unbiased var 2)
        assert!((next.running_mean[0] - 0.2).abs() < 1e-12);
        assert!((next.running_var[0] - 1.1).abs() < 1e-12);
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = Prng::new(4);
        let x = random_tensor(&mut rng, &[3, 2, 5, 5]).map(|v| 3.0 * v + 1.5);
        let (y, _, _) = batchnorm2d(&x, &BatchNormState::identity(2), Mode::Train).unwrap();
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3)
                .flat_map(|s| (0..25).map(move |i| (s, i)))
                .map(|(s, i)| y.data()[(s * 2 + ch) * 25 + i])
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() <= 1e-5);
            assert!((var - 1.0).abs() <= 1e-3);
        }
    }

    #[test]
    fn rejects_single_value_channels_and_mismatch() {
        let x = Tensor::<f64>::zeros([1, 2, 1, 1]).unwrap();
        assert!(batchnorm2d(&x, &BatchNormState::identity(2), Mode::Train).is_err());
        assert!(batchnorm2d(&x, &BatchNormState::identity(3), Mode::Infer).is_err());
    }

    #[test]
    fn beta_grad_is_channel_sum() {
        let mut rng = Prng::new(8);
        let x = random_tensor(&mut rng, &[2, 3, 3, 3]);
        let g = random_tensor(&mut rng, &[2, 3, 3, 3]);
        let (_, _, cache) = batchnorm2d(&x, &BatchNormState::identity(3), Mode::Train).unwrap();
        let grads = batchnorm2d_vjp(&cache.unwrap(), &g).unwrap();
        for ch in 0..3 {
            let expect: f64 = (0..2)
                .map(|s| {
                    g.data()[(s * 3 + ch) * 9..(s * 3 + ch + 1) * 9]
                        .iter()
                        .sum::<f64>()
                })
                .sum();
            assert!((grads.beta.data()[ch] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn input_grad_sums_to_zero_per_channel() {
        let mut rng = Prng::new(12);
        let x = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let g = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let (_, _, cache) = batchnorm2d(&x, &BatchNormState::identity(2), Mode::Train).unwrap();
        let grads = batchnorm2d_vjp(&cache.unwrap(), &g).unwrap();
        for ch in 0..2 {
            let s: f64 = (0..2)
                .map(|n| {
                    grads.x.data()[(n * 2 + ch) * 9..(n * 2 + ch + 1) * 9]
                        .iter()
                        .sum::<f64>()
                })
                .sum();
            assert!(s.abs() < 1e-10, "channel {ch}: {s}");
        }
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = Prng::new(33);
        let x = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let g = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let mut state = BatchNormState::identity(2);
        state.gamma = vec![1.3, -0.7];
        state.beta = vec![0.2, 0.5];
        let (_, _, cache) = batchnorm2d(&x, &state, Mode::Train).unwrap();
        let grads = batchnorm2d_vjp(&cache.unwrap(), &g).unwrap();
        let report = gradcheck(
            |v| {
                let xi = Tensor::from_vec([2, 2, 3, 3], v.to_vec()).unwrap();
                batchnorm2d(&xi, &state, Mode::Train)
                    .unwrap()
                    .0
                    .dot(&g)
                    .unwrap()
            },
            x.data(),
            grads.x.data(),
            None,
            1e-5,
            1e-5,
        );
        assert!(report.passed(), "{report:?}");
        let report = gradcheck(
            |v| {
                let mut s = state.clone();
                s.gamma = v.to_vec();
                batchnorm2d(&x, &s, Mode::Train).unwrap().0.dot(&g).unwrap()
            },
            &state.gamma,
            grads.gamma.data(),
            None,
            1e-5,
            1e-5,
        );
        assert!(report.passed(), "{report:?}");
    }
}
