use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Passes `grad_out` where `x > 0`; the subgradient at exactly zero is 0.
pub fn relu_vjp<T: Real>(x: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if x.shape() != grad_out.shape() {
        return Err(Error::ShapeMismatch {
            op: "relu_vjp",
            lhs: x.shape().to_vec(),
            rhs: grad_out.shape().to_vec(),
        });
    }
    let data = x
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(x.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::gradcheck::gradcheck;
    use crate::rng::Prng;

    #[test]
    fn forward_examples() {
        let x = Tensor::from_vec([3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn backward_examples() {
        let x = Tensor::from_vec([3], vec![-5.0f64, 3.0, 0.0]).unwrap();
        let g = Tensor::from_vec([3], vec![2.0, 7.0, 1.0]).unwrap();
        assert_eq!(relu_vjp(&x, &g).unwrap().data(), &[0.0, 7.0, 0.0]);
    }

    #[test]
    fn finite_differences_away_from_kink() {
        let mut rng = Prng::new(3);
        let x: Vec<f64> = (0..32)
            .map(|_| {
                let v = rng.uniform() * 2.0 - 1.0;
                if v.abs() <= 1e-2 {
                    0.5
                } else {
                    v
                }
            })
            .collect();
        let g: Vec<f64> = (0..32).map(|_| rng.normal(0.0, 1.0)).collect();
        let xt = Tensor::from_vec([32], x.clone()).unwrap();
        let gt = Tensor::from_vec([32], g.clone()).unwrap();
        let analytic = relu_vjp(&xt, &gt).unwrap();
        let report = gradcheck(
            |v| {
                relu(&Tensor::from_vec([32], v.to_vec()).unwrap())
                    .dot(&gt)
                    .unwrap()
            },
            &x,
            analytic.data(),
            None,
            1e-4,
            1e-6,
        );
        assert!(report.passed(), "{report:?}");
    }
}
