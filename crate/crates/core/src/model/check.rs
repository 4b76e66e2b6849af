use crate::error::Result;
use crate::model::exec::{backward, forward};
use crate::model::params::ParamStore;
use crate::model::{build_linknet, LinkConfig};
use crate::ops::gradcheck::{gradcheck, random_tensor, GradcheckReport, DEFAULT_STEP};
use crate::ops::Mode;
use crate::rng::Prng;
use crate::tensor::Tensor;
use crate::train::weighted_cross_entropy;

/// Tolerance for the whole-network check.
pub const END_TO_END_TOLERANCE: f64 = 1e-4;

/// Finite-difference check of the loss gradient through the whole network.
#[derive(Debug, Clone)]
pub struct EndToEndCheck {
    pub config: LinkConfig,
    pub batch: usize,
    /// Number of randomly chosen trainable coordinates to probe.
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
}

impl Default for EndToEndCheck {
    /// Widths ÷16, 3×32×32 input, 3 classes, 20 probed parameters.
    fn default() -> Self {
        Self {
            config: LinkConfig::new(3, (32, 32))
                .with_width_divisor(16)
                .expect("16 divides the default widths"),
            batch: 4,
            samples: 20,
            step: DEFAULT_STEP,
            tolerance: END_TO_END_TOLERANCE,
        }
    }
}

impl EndToEndCheck {
    pub fn run(&self, seed: u64) -> Result<GradcheckReport> {
        let graph = build_linknet(&self.config)?;
        let params = ParamStore::<f64>::init(&graph, seed)?;
        let mut rng = Prng::new(seed ^ 0x5eed);
        let (h, w) = self.config.input_hw;
        let classes = self.config.num_classes;
        let x = random_tensor(&mut rng, &[self.batch, self.config.in_channels, h, w]);
        let labels = Tensor::from_vec(
            [self.batch, h, w],
            (0..self.batch * h * w)
                .map(|_| rng.range(0, classes) as i32)
                .collect(),
        )?;
        let weights: Vec<f64> = (0..classes).map(|k| 1.0 + k as f64 * 0.5).collect();

        let (logits, cache) = forward(&graph, &params, &x, Mode::Train)?;
        let (_, grad_logits) = weighted_cross_entropy(&logits, &labels, &weights, 255)?;
        let grads = backward(&graph, &params, &cache, &grad_logits)?;

        let keys: Vec<String> = grads.keys().map(String::from).collect();
        let mut flat = Vec::new();
        let mut analytic = Vec::new();
        for k in &keys {
            flat.extend_from_slice(params.get(k)?.data());
            analytic.extend_from_slice(grads.get(k)?.data());
        }
        let indices: Vec<usize> = (0..self.samples)
            .map(|_| rng.range(0, flat.len()))
            .collect();

        let mut probe = params.clone();
        let mut failure = None;
        let report = gradcheck(
            |v| {
                let mut offset = 0;
                for k in &keys {
                    let t = probe.get_mut(k).expect("key from store");
                    let len = t.numel();
                    t.data_mut().copy_from_slice(&v[offset..offset + len]);
                    offset += len;
                }
                match forward(&graph, &probe, &x, Mode::Train)
                    .and_then(|(y, _)| weighted_cross_entropy(&y, &labels, &weights, 255))
                {
                    Ok((loss, _)) => loss,
                    Err(e) => {
                        failure.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            &flat,
            &analytic,
            Some(&indices),
            self.step,
            self.tolerance,
        );
        match failure {
            Some(e) => Err(e),
            None => Ok(report),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_network_passes() {
        for seed in [0, 1, 2] {
            let report = EndToEndCheck::default().run(seed).unwrap();
            assert_eq!(report.checked, 20);
            assert!(report.passed(), "seed {seed}: {report:?}");
        }
    }
}
