//! Finite-difference verification of analytic gradients.
//!
//! Every check works on a scalar objective. Vector-valued ops are reduced
//! with a fixed random cotangent `g`, so the objective is `⟨op(x), g⟩` and
//! the analytic gradient is the op's vjp evaluated at `g`.

use crate::ops::{
    batchnorm2d, batchnorm2d_vjp, conv2d, conv2d_vjp, conv_transpose2d, conv_transpose2d_vjp,
    maxpool2d, maxpool2d_vjp, relu, relu_vjp, BatchNormState, ConvSpec, Mode, PoolSpec,
};
use crate::rng::Prng;
use crate::tensor::Tensor;

/// Tolerance for individual primitives.
pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    /// Coordinate where `max_rel_error` occurred.
    pub worst_index: usize,
    pub checked: usize,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

/// `|a − n| / (|a| + |n| + 1e-12)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs() + 1e-12)
}

/// Compares `analytic` against central differences of `objective` around `x`
/// with step `step`, over every coordinate or just `indices`.
pub fn gradcheck(
    mut objective: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    indices: Option<&[usize]>,
    step: f64,
    tolerance: f64,
) -> GradcheckReport {
    assert_eq!(
        x.len(),
        analytic.len(),
        "gradient length differs from input length"
    );
    let all: Vec<usize>;
    let indices = match indices {
        Some(i) => i,
        None => {
            all = (0..x.len()).collect();
            &all
        }
    };
    let mut probe = x.to_vec();
    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        checked: indices.len(),
        tolerance,
    };
    for &i in indices {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = objective(&probe);
        probe[i] = orig - step;
        let minus = objective(&probe);
        probe[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let err = relative_error(analytic[i], numeric);
        if err > report.max_rel_error || err.is_nan() {
            report.max_rel_error = if err.is_nan() { f64::INFINITY } else { err };
            report.worst_index = i;
        }
    }
    report
}

/// Standard-normal entries.
pub fn random_tensor(rng: &mut Prng, shape: &[usize]) -> Tensor<f64> {
    let len = shape.iter().product();
    Tensor::from_vec(
        shape.to_vec(),
        (0..len).map(|_| rng.normal(0.0, 1.0)).collect(),
    )
    .expect("valid shape")
}

/// Entries are a random permutation of a grid spaced 0.05 apart, so window
/// maxima stay unique under small perturbations.
pub fn distinct_tensor(rng: &mut Prng, shape: &[usize]) -> Tensor<f64> {
    let len: usize = shape.iter().product();
    let mut vals: Vec<f64> = (0..len)
        .map(|i| i as f64 * 0.05 - len as f64 * 0.025)
        .collect();
    rng.shuffle(&mut vals);
    Tensor::from_vec(shape.to_vec(), vals).expect("valid shape")
}

/// Entries with `|x| ≥ 0.1`, away from the ReLU kink.
fn off_kink_tensor(rng: &mut Prng, shape: &[usize]) -> Tensor<f64> {
    random_tensor(rng, shape).map(|v| {
        if v.abs() < 0.1 {
            v.signum() * 0.1 + v
        } else {
            v
        }
    })
}

type Objective<'a> = Box<dyn Fn(&[f64]) -> f64 + 'a>;

fn check_one(
    name: &'static str,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    f: Objective<'_>,
    tol: f64,
) -> (String, GradcheckReport) {
    (
        name.to_string(),
        gradcheck(f, x.data(), analytic.data(), None, DEFAULT_STEP, tol),
    )
}

/// Runs the finite-difference check for every differentiable primitive (and
/// each of its differentiable inputs) on small random tensors.
pub fn check_primitives(seed: u64, tolerance: f64) -> Vec<(String, GradcheckReport)> {
    let mut rng = Prng::new(seed);
    let mut out = Vec::new();
    let batch = 2;

    // conv2d: 3×3, stride 2, bias
    {
        let spec = ConvSpec::new(2, 3, 3).stride(2).pad(1).bias(true);
        let x = random_tensor(&mut rng, &[batch, 2, 4, 4]);
        let w = random_tensor(&mut rng, &spec.conv_weight_shape());
        let b = random_tensor(&mut rng, &[3]);
        let g = random_tensor(&mut rng, &[batch, 3, 2, 2]);
        let grads = conv2d_vjp(&x, &spec, &w, &g).expect("conv2d_vjp");
        let xs = x.shape().to_vec();
        out.push(check_one(
            "conv2d.x",
            &x,
            &grads.x,
            Box::new(|v| {
                conv2d(
                    &Tensor::from_vec(xs.clone(), v.to_vec()).unwrap(),
                    &spec,
                    &w,
                    Some(&b),
                )
                .unwrap()
                .dot(&g)
                .unwrap()
            }),
            tolerance,
        ));
        out.push(check_one(
            "conv2d.weight",
            &w,
            &grads.weight,
            Box::new(|v| {
                conv2d(
                    &x,
                    &spec,
                    &Tensor::from_vec(spec.conv_weight_shape(), v.to_vec()).unwrap(),
                    Some(&b),
                )
                .unwrap()
                .dot(&g)
                .unwrap()
            }),
            tolerance,
        ));
        let gb = grads.bias.expect("bias grad");
        out.push(check_one(
            "conv2d.bias",
            &b,
            &gb,
            Box::new(|v| {
                conv2d(
                    &x,
                    &spec,
                    &w,
                    Some(&Tensor::from_vec([3], v.to_vec()).unwrap()),
                )
                .unwrap()
                .dot(&g)
                .unwrap()
            }),
            tolerance,
        ));
    }

    // transposed conv: 3×3, stride 2, output padding 1, bias
    {
        let spec = ConvSpec::new(3, 2, 3)
            .stride(2)
            .pad(1)
            .output_pad(1)
            .bias(true);
        let x = random_tensor(&mut rng, &[batch, 3, 2, 2]);
        let w = random_tensor(&mut rng, &spec.transposed_weight_shape());
        let b = random_tensor(&mut rng, &[2]);
        let g = random_tensor(&mut rng, &[batch, 2, 4, 4]);
        let grads = conv_transpose2d_vjp(&x, &spec, &w, &g).expect("conv_transpose2d_vjp");
        let xs = x.shape().to_vec();
        out.push(check_one(
            "conv_transpose2d.x",
            &x,
            &grads.x,
            Box::new(|v| {
                conv_transpose2d(
                    &Tensor::from_vec(xs.clone(), v.to_vec()).unwrap(),
                    &spec,
                    &w,
                    Some(&b),
                )
                .unwrap()
                .dot(&g)
                .unwrap()
            }),
            tolerance,
        ));
        out.push(check_one(
            "conv_transpose2d.weight",
            &w,
            &grads.weight,
            Box::new(|v| {
                conv_transpose2d(
                    &x,
                    &spec,
                    &Tensor::from_vec(spec.transposed_weight_shape(), v.to_vec()).unwrap(),
                    Some(&b),
                )
                .unwrap()
                .dot(&g)
                .unwrap()
            }),
            tolerance,
        ));
        let gb = grads.bias.expect("bias grad");
        out.push(check_one(
            "conv_transpose2d.bias",
            &b,
            &gb,
            Box::new(|v| {
                conv_transpose2d(
                    &x,
                    &spec,
                    &w,
                    Some(&Tensor::from_vec([2], v.to_vec()).unwrap()),
                )
                .unwrap()
                .dot(&g)
                .unwrap()
            }),
            tolerance,
        ));
    }

    // batch norm (training mode) with non-trivial affine parameters
    {
        let c = 3;
        let x = random_tensor(&mut rng, &[batch, c, 3, 3]);
        let g = random_tensor(&mut rng, &[batch, c, 3, 3]);
        let mut state = BatchNormState::identity(c);
        state.gamma = (0..c).map(|_| rng.normal(1.0, 0.5)).collect();
        state.beta = (0..c).map(|_| rng.normal(0.0, 0.5)).collect();
        let (_, _, cache) = batchnorm2d(&x, &state, Mode::Train).expect("batchnorm2d");
        let grads = batchnorm2d_vjp(&cache.expect("train cache"), &g).expect("batchnorm2d_vjp");
        let xs = x.shape().to_vec();
        out.push(check_one(
            "batchnorm2d.x",
            &x,
            &grads.x,
            Box::new(|v| {
                batchnorm2d(
                    &Tensor::from_vec(xs.clone(), v.to_vec()).unwrap(),
                    &state,
                    Mode::Train,
                )
                .unwrap()
                .0
                .dot(&g)
                .unwrap()
            }),
            tolerance,
        ));
        let gamma = Tensor::from_vec([c], state.gamma.clone()).unwrap();
        out.push(check_one(
            "batchnorm2d.gamma",
            &gamma,
            &grads.gamma,
            Box::new(|v| {
                let mut s = state.clone();
                s.gamma = v.to_vec();
                batchnorm2d(&x, &s, Mode::Train).unwrap().0.dot(&g).unwrap()
            }),
            tolerance,
        ));
        let beta = Tensor::from_vec([c], state.beta.clone()).unwrap();
        out.push(check_one(
            "batchnorm2d.beta",
            &beta,
            &grads.beta,
            Box::new(|v| {
                let mut s = state.clone();
                s.beta = v.to_vec();
                batchnorm2d(&x, &s, Mode::Train).unwrap().0.dot(&g).unwrap()
            }),
            tolerance,
        ));
    }

    // relu
    {
        let x = off_kink_tensor(&mut rng, &[batch, 2, 4, 4]);
        let g = random_tensor(&mut rng, &[batch, 2, 4, 4]);
        let gx = relu_vjp(&x, &g).expect("relu_vjp");
        let xs = x.shape().to_vec();
        out.push(check_one(
            "relu.x",
            &x,
            &gx,
            Box::new(|v| {
                relu(&Tensor::from_vec(xs.clone(), v.to_vec()).unwrap())
                    .dot(&g)
                    .unwrap()
            }),
            tolerance,
        ));
    }

    // max pool
    {
        let x = distinct_tensor(&mut rng, &[batch, 2, 4, 4]);
        let (y, idx) = maxpool2d(&x, &PoolSpec::STEM).expect("maxpool2d");
        let g = random_tensor(&mut rng, y.shape());
        let gx = maxpool2d_vjp(&idx, &g, x.shape()).expect("maxpool2d_vjp");
        let xs = x.shape().to_vec();
        out.push(check_one(
            "maxpool2d.x",
            &x,
            &gx,
            Box::new(|v| {
                maxpool2d(
                    &Tensor::from_vec(xs.clone(), v.to_vec()).unwrap(),
                    &PoolSpec::STEM,
                )
                .unwrap()
                .0
                .dot(&g)
                .unwrap()
            }),
            tolerance,
        ));
    }

    out
}

/// Checks a conv2d weight gradient deliberately scaled by 1.01. A working
/// checker must report this as a failure.
pub fn corrupted_gradient_check(seed: u64, tolerance: f64) -> GradcheckReport {
    let mut rng = Prng::new(seed);
    let spec = ConvSpec::new(2, 3, 3).stride(2).pad(1);
    let x = random_tensor(&mut rng, &[2, 2, 4, 4]);
    let w = random_tensor(&mut rng, &spec.conv_weight_shape());
    let g = random_tensor(&mut rng, &[2, 3, 2, 2]);
    let grads = conv2d_vjp(&x, &spec, &w, &g).expect("conv2d_vjp");
    let corrupted = grads.weight.map(|v| v * 1.01);
    gradcheck(
        |v| {
            conv2d(
                &x,
                &spec,
                &Tensor::from_vec(spec.conv_weight_shape(), v.to_vec()).unwrap(),
                None,
            )
            .unwrap()
            .dot(&g)
            .unwrap()
        },
        w.data(),
        corrupted.data(),
        None,
        DEFAULT_STEP,
        tolerance,
    )
}
