use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolSpec {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl PoolSpec {
    /// 3×3 window, stride 2, padding 1.
    pub const STEM: PoolSpec = PoolSpec {
        window: (3, 3),
        stride: (2, 2),
        pad: (1, 1),
    };

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.window;
        if kh == 0 || kw == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::InvalidSpec(format!(
                "degenerate pooling spec {self:?}"
            )));
        }
        // a window made only of padding would have no defined maximum
        if self.pad.0 >= kh || self.pad.1 >= kw {
            return Err(Error::InvalidSpec(format!(
                "pooling padding {:?} must be smaller than the window {:?}",
                self.pad, self.window
            )));
        }
        let axis = |size: usize, k: usize, s: usize, p: usize| {
            if size + 2 * p < k {
                Err(Error::InvalidSpec(format!(
                    "window {k} larger than padded input"
                )))
            } else {
                Ok((size + 2 * p - k) / s + 1)
            }
        };
        Ok((
            axis(h, kh, self.stride.0, self.pad.0)?,
            axis(w, kw, self.stride.1, self.pad.1)?,
        ))
    }
}

/// Windowed maximum with `−∞` padding. Returns the output and, per output
/// element, the flat offset of the winning input element (ties go to the
/// smallest offset).
pub fn maxpool2d<T: Real>(x: &Tensor<T>, spec: &PoolSpec) -> Result<(Tensor<T>, Vec<usize>)> {
    let [n, c, h, w] = x.dims4("maxpool2d")?;
    let (oh, ow) = spec.output_hw(h, w)?;
    let mut y = Tensor::zeros([n, c, oh, ow])?;
    let mut argmax = vec![0usize; n * c * oh * ow];
    let data = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            let r0 = (i * spec.stride.0) as i64 - spec.pad.0 as i64;
            let rows = r0.max(0) as usize..((r0 + spec.window.0 as i64) as usize).min(h);
            for j in 0..ow {
                let c0 = (j * spec.stride.1) as i64 - spec.pad.1 as i64;
                let cols = c0.max(0) as usize..((c0 + spec.window.1 as i64) as usize).min(w);
                let mut best = T::neg_infinity();
                let mut best_at = usize::MAX;
                for r in rows.clone() {
                    for col in cols.clone() {
                        let off = base + r * w + col;
                        // row-major scan: strict > keeps the smallest offset on ties
                        if data[off] > best || best_at == usize::MAX {
                            best = data[off];
                            best_at = off;
                        }
                    }
                }
                let out = (plane * oh + i) * ow + j;
                y.data_mut()[out] = best;
                argmax[out] = best_at;
            }
        }
    }
    Ok((y, argmax))
}

/// Routes each output gradient to its argmax input, accumulating collisions.
pub fn maxpool2d_vjp<T: Real>(
    argmax: &[usize],
    grad_out: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if argmax.len() != grad_out.numel() {
        return Err(Error::InvalidArgument(format!(
            "{} argmax entries for {} output gradients",
            argmax.len(),
            grad_out.numel()
        )));
    }
    let mut gx = Tensor::zeros(input_shape.to_vec())?;
    for (&idx, &g) in argmax.iter().zip(grad_out.data()) {
        let slot = gx
            .data_mut()
            .get_mut(idx)
            .ok_or_else(|| Error::InvalidArgument(format!("argmax offset {idx} outside input")))?;
        *slot += g;
    }
    Ok(gx)
}
