//! Strided convolution and its adjoint, transposed ("full") convolution.
//!
//! Both run through an im2col/GEMM formulation. The direct loop versions in
//! [`reference`] define the semantics and gate the fast path in tests.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
    /// Extra rows/columns appended to a transposed convolution's output.
    pub output_pad: (usize, usize),
    pub has_bias: bool,
}

impl ConvSpec {
    /// Square kernel, stride 1, no padding, no bias.
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel: (kernel, kernel),
            stride: (1, 1),
            pad: (0, 0),
            output_pad: (0, 0),
            has_bias: false,
        }
    }

    pub fn stride(mut self, s: usize) -> Self {
        self.stride = (s, s);
        self
    }

    pub fn pad(mut self, p: usize) -> Self {
        self.pad = (p, p);
        self
    }

    pub fn output_pad(mut self, p: usize) -> Self {
        self.output_pad = (p, p);
        self
    }

    pub fn bias(mut self, has_bias: bool) -> Self {
        self.has_bias = has_bias;
        self
    }

    fn check_common(&self) -> Result<()> {
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidSpec(format!(
                "zero channel count in {self:?}"
            )));
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.stride.0 == 0 || self.stride.1 == 0 {
            return Err(Error::InvalidSpec(format!(
                "kernel and stride must be at least 1 in {self:?}"
            )));
        }
        Ok(())
    }

    /// Output size of a strided convolution over an `h×w` input.
    pub fn conv_output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.check_common()?;
        let axis = |size: usize, k: usize, s: usize, p: usize| {
            let padded = size + 2 * p;
            if padded < k {
                Err(Error::InvalidSpec(format!(
                    "kernel {k} larger than padded input {padded}"
                )))
            } else {
                Ok((padded - k) / s + 1)
            }
        };
        Ok((
            axis(h, self.kernel.0, self.stride.0, self.pad.0)?,
            axis(w, self.kernel.1, self.stride.1, self.pad.1)?,
        ))
    }

    /// Output size of a transposed convolution over an `h×w` input.
    pub fn transposed_output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        self.check_common()?;
        if self.output_pad.0 >= self.stride.0 || self.output_pad.1 >= self.stride.1 {
            return Err(Error::InvalidSpec(format!(
                "output_pad {:?} must be smaller than stride {:?}",
                self.output_pad, self.stride
            )));
        }
        let axis = |size: usize, k: usize, s: usize, p: usize, op: usize| {
            let out = (size as i64 - 1) * s as i64 - 2 * p as i64 + k as i64 + op as i64;
            if out < 1 {
                Err(Error::InvalidSpec(format!(
                    "transposed convolution output size {out} is not positive"
                )))
            } else {
                Ok(out as usize)
            }
        };
        Ok((
            axis(
                h,
                self.kernel.0,
                self.stride.0,
                self.pad.0,
                self.output_pad.0,
            )?,
            axis(
                w,
                self.kernel.1,
                self.stride.1,
                self.pad.1,
                self.output_pad.1,
            )?,
        ))
    }

    /// `[out, in, kh, kw]`
    pub fn conv_weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    /// `[in, out, kh, kw]`
    pub fn transposed_weight_shape(&self) -> [usize; 4] {
        [
            self.in_channels,
            self.out_channels,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn weight_count(&self) -> usize {
        self.in_channels * self.out_channels * self.kernel.0 * self.kernel.1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.pad == (0, 0)
    }
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub x: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Sliding-window geometry between an "image" (`channels × h × w`) and the
/// column matrix (`channels·kh·kw × oh·ow`) of a strided convolution over it.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.spec.kernel.0 * self.spec.kernel.1
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Range of output indices `j` whose input coordinate `j·s + k − p` is in `[0, size)`.
    #[inline]
    fn valid_range(out: usize, size: usize, k: usize, s: usize, p: usize) -> (usize, usize) {
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let hi = if size + p > k {
            ((size + p - k - 1) / s + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Visits each `(col row, col offset, image offset)` triple of the mapping.
    #[inline]
    fn for_each(&self, mut f: impl FnMut(usize, usize, usize)) {
        let ConvSpec {
            kernel: (kh, kw),
            stride: (sh, sw),
            pad: (ph, pw),
            ..
        } = self.spec;
        for c in 0..self.channels {
            for u in 0..kh {
                let (i_lo, i_hi) = Self::valid_range(self.oh, self.h, u, sh, ph);
                for v in 0..kw {
                    let (j_lo, j_hi) = Self::valid_range(self.ow, self.w, v, sw, pw);
                    let row = (c * kh + u) * kw + v;
                    for i in i_lo..i_hi {
                        let y = i * sh + u - ph;
                        let img_row = (c * self.h + y) * self.w;
                        let col_row = row * self.cols() + i * self.ow;
                        for j in j_lo..j_hi {
                            f(row, col_row + j, img_row + j * sw + v - pw);
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Real>(&self, img: &[T], cols: &mut [T]) {
        cols.fill(T::zero());
        self.for_each(|_, col, src| cols[col] = img[src]);
    }

    /// Adjoint of `im2col`: scatter-adds columns back into the image.
    fn col2im<T: Real>(&self, cols: &[T], img: &mut [T]) {
        img.fill(T::zero());
        self.for_each(|_, col, dst| img[dst] += cols[col]);
    }
}

fn check_bias<T: Real>(spec: &ConvSpec, bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    match (spec.has_bias, bias) {
        (true, Some(b)) if b.shape() == [channels] => Ok(()),
        (true, Some(b)) => Err(Error::ShapeMismatch {
            op: "conv bias",
            lhs: vec![channels],
            rhs: b.shape().to_vec(),
        }),
        (true, None) => Err(Error::InvalidSpec(
            "spec has bias but none was given".into(),
        )),
        (false, Some(_)) => Err(Error::InvalidSpec("bias given for a bias-free spec".into())),
        (false, None) => Ok(()),
    }
}

fn check_weight<T: Real>(weight: &Tensor<T>, expected: [usize; 4]) -> Result<()> {
    if weight.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "conv weight",
            lhs: expected.to_vec(),
            rhs: weight.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_channels(x_channels: usize, expected: usize) -> Result<()> {
    if x_channels != expected {
        return Err(Error::ShapeMismatch {
            op: "conv input channels",
            lhs: vec![expected],
            rhs: vec![x_channels],
        });
    }
    Ok(())
}

fn add_bias<T: Real>(y: &mut Tensor<T>, bias: Option<&Tensor<T>>) {
    if let Some(b) = bias {
        let [n, c, h, w] = y.dims4("bias").expect("rank 4");
        let plane = h * w;
        let data = y.data_mut();
        for s in 0..n {
            for (o, &bv) in b.data().iter().enumerate().take(c) {
                let start = (s * c + o) * plane;
                data[start..start + plane].iter_mut().for_each(|v| *v += bv);
            }
        }
    }
}

fn bias_grad<T: Real>(grad_out: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = grad_out.dims4("bias grad").expect("rank 4");
    let plane = h * w;
    let mut out = vec![T::zero(); c];
    for s in 0..n {
        for (o, acc) in out.iter_mut().enumerate() {
            let start = (s * c + o) * plane;
            let sum: f64 = grad_out.data()[start..start + plane]
                .iter()
                .map(|v| v.as_f64())
                .sum();
            *acc += T::from_f64(sum);
        }
    }
    Tensor::from_vec([c], out).expect("non-empty")
}

/// `y[n,o,i,j] = Σ x[n,c,i·sh+u−ph, j·sw+v−pw]·w[o,c,u,v] (+ bias[o])`,
/// reading out-of-range inputs as zero.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("conv2d")?;
    check_channels(c, spec.in_channels)?;
    check_weight(weight, spec.conv_weight_shape())?;
    check_bias(spec, bias, spec.out_channels)?;
    let (oh, ow) = spec.conv_output_hw(h, w)?;
    let geo = Geometry {
        channels: c,
        h,
        w,
        oh,
        ow,
        spec: *spec,
    };
    let (k, p, cout) = (geo.rows(), geo.cols(), spec.out_channels);
    let mut y = Tensor::zeros([n, cout, oh, ow])?;
    let mut cols = vec![T::zero(); if spec.is_pointwise() { 0 } else { k * p }];
    for s in 0..n {
        let xs = &x.data()[s * c * h * w..(s + 1) * c * h * w];
        let b: &[T] = if spec.is_pointwise() {
            xs
        } else {
            geo.im2col(xs, &mut cols);
            &cols
        };
        let ys = &mut y.data_mut()[s * cout * p..(s + 1) * cout * p];
        T::gemm(cout, k, p, weight.data(), false, b, false, T::zero(), ys);
    }
    add_bias(&mut y, bias);
    Ok(y)
}

/// Gradients of [`conv2d`] with respect to its input, weight and bias.
pub fn conv2d_vjp<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let [n, c, h, w] = x.dims4("conv2d_vjp")?;
    check_channels(c, spec.in_channels)?;
    check_weight(weight, spec.conv_weight_shape())?;
    let (oh, ow) = spec.conv_output_hw(h, w)?;
    let cout = spec.out_channels;
    if grad_out.shape() != [n, cout, oh, ow] {
        return Err(Error::ShapeMismatch {
            op: "conv2d_vjp grad_out",
            lhs: vec![n, cout, oh, ow],
            rhs: grad_out.shape().to_vec(),
        });
    }
    let geo = Geometry {
        channels: c,
        h,
        w,
        oh,
        ow,
        spec: *spec,
    };
    let (k, p) = (geo.rows(), geo.cols());
    let mut gx = x.zeros_like();
    let mut gw = weight.zeros_like();
    let pointwise = spec.is_pointwise();
    let mut cols = vec![T::zero(); if pointwise { 0 } else { k * p }];
    let mut gcols = vec![T::zero(); if pointwise { 0 } else { k * p }];
    for s in 0..n {
        let xs = &x.data()[s * c * h * w..(s + 1) * c * h * w];
        let gs = &grad_out.data()[s * cout * p..(s + 1) * cout * p];
        let gxs = &mut gx.data_mut()[s * c * h * w..(s + 1) * c * h * w];
        if pointwise {
            T::gemm(cout, p, k, gs, false, xs, true, T::one(), gw.data_mut());
            T::gemm(k, cout, p, weight.data(), true, gs, false, T::zero(), gxs);
        } else {
            geo.im2col(xs, &mut cols);
            T::gemm(cout, p, k, gs, false, &cols, true, T::one(), gw.data_mut());
            T::gemm(
                k,
                cout,
                p,
                weight.data(),
                true,
                gs,
                false,
                T::zero(),
                &mut gcols,
            );
            geo.col2im(&gcols, gxs);
        }
    }
    Ok(ConvGrads {
        x: gx,
        weight: gw,
        bias: spec.has_bias.then(|| bias_grad(grad_out)),
    })
}

/// Transposed convolution: every input pixel scatter-adds `x[n,c,i,j]·w[c,o,·,·]`
/// into the output window anchored at `(i·sh − ph, j·sw − pw)`. This is the
/// adjoint of [`conv2d`] with the same spec.
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.dims4("conv_transpose2d")?;
    check_channels(c, spec.in_channels)?;
    check_weight(weight, spec.transposed_weight_shape())?;
    check_bias(spec, bias, spec.out_channels)?;
    let (oh, ow) = spec.transposed_output_hw(h, w)?;
    let cout = spec.out_channels;
    // The output plays the image role; the input is the column side.
    let geo = Geometry {
        channels: cout,
        h: oh,
        w: ow,
        oh: h,
        ow: w,
        spec: *spec,
    };
    let (k, p) = (geo.rows(), geo.cols());
    let mut y = Tensor::zeros([n, cout, oh, ow])?;
    let pointwise = spec.is_pointwise();
    let mut cols = vec![T::zero(); if pointwise { 0 } else { k * p }];
    for s in 0..n {
        let xs = &x.data()[s * c * p..(s + 1) * c * p];
        let ys = &mut y.data_mut()[s * cout * oh * ow..(s + 1) * cout * oh * ow];
        if pointwise {
            T::gemm(k, c, p, weight.data(), true, xs, false, T::zero(), ys);
        } else {
            T::gemm(
                k,
                c,
                p,
                weight.data(),
                true,
                xs,
                false,
                T::zero(),
                &mut cols,
            );
            geo.col2im(&cols, ys);
        }
    }
    add_bias(&mut y, bias);
    Ok(y)
}

/// Gradients of [`conv_transpose2d`]. The input gradient is a strided
/// convolution of `grad_out` with the same weight.
pub fn conv_transpose2d_vjp<T: Real>(
    x: &Tensor<T>,
    spec: &ConvSpec,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let [n, c, h, w] = x.dims4("conv_transpose2d_vjp")?;
    check_channels(c, spec.in_channels)?;
    check_weight(weight, spec.transposed_weight_shape())?;
    let (oh, ow) = spec.transposed_output_hw(h, w)?;
    let cout = spec.out_channels;
    if grad_out.shape() != [n, cout, oh, ow] {
        return Err(Error::ShapeMismatch {
            op: "conv_transpose2d_vjp grad_out",
            lhs: vec![n, cout, oh, ow],
            rhs: grad_out.shape().to_vec(),
        });
    }
    let geo = Geometry {
        channels: cout,
        h: oh,
        w: ow,
        oh: h,
        ow: w,
        spec: *spec,
    };
    let (k, p) = (geo.rows(), geo.cols());
    let mut gx = x.zeros_like();
    let mut gw = weight.zeros_like();
    let pointwise = spec.is_pointwise();
    let mut gcols = vec![T::zero(); if pointwise { 0 } else { k * p }];
    for s in 0..n {
        let xs = &x.data()[s * c * p..(s + 1) * c * p];
        let gs = &grad_out.data()[s * cout * oh * ow..(s + 1) * cout * oh * ow];
        let b: &[T] = if pointwise {
            gs
        } else {
            geo.im2col(gs, &mut gcols);
            &gcols
        };
        let gxs = &mut gx.data_mut()[s * c * p..(s + 1) * c * p];
        T::gemm(c, k, p, weight.data(), false, b, false, T::zero(), gxs);
        T::gemm(c, p, k, xs, false, b, true, T::one(), gw.data_mut());
    }
    Ok(ConvGrads {
        x: gx,
        weight: gw,
        bias: spec.has_bias.then(|| bias_grad(grad_out)),
    })
}

/// Direct-summation definitions, kept as the semantic reference.
pub mod reference {
    use super::*;

    pub fn conv2d<T: Real>(
        x: &Tensor<T>,
        spec: &ConvSpec,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.dims4("conv2d")?;
        check_channels(c, spec.in_channels)?;
        check_weight(weight, spec.conv_weight_shape())?;
        check_bias(spec, bias, spec.out_channels)?;
        let (oh, ow) = spec.conv_output_hw(h, w)?;
        let (kh, kw) = spec.kernel;
        let mut y = Tensor::zeros([n, spec.out_channels, oh, ow])?;
        for s in 0..n {
            for o in 0..spec.out_channels {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bias.map_or(0.0, |b| b.data()[o].as_f64());
                        for ci in 0..c {
                            for u in 0..kh {
                                for v in 0..kw {
                                    let yy = (i * spec.stride.0 + u) as i64 - spec.pad.0 as i64;
                                    let xx = (j * spec.stride.1 + v) as i64 - spec.pad.1 as i64;
                                    if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
                                        continue;
                                    }
                                    acc += x.at4(s, ci, yy as usize, xx as usize).as_f64()
                                        * weight.at4(o, ci, u, v).as_f64();
                                }
                            }
                        }
                        let off = y.offset4(s, o, i, j);
                        y.data_mut()[off] = T::from_f64(acc);
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn conv_transpose2d<T: Real>(
        x: &Tensor<T>,
        spec: &ConvSpec,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let [n, c, h, w] = x.dims4("conv_transpose2d")?;
        check_channels(c, spec.in_channels)?;
        check_weight(weight, spec.transposed_weight_shape())?;
        check_bias(spec, bias, spec.out_channels)?;
        let (oh, ow) = spec.transposed_output_hw(h, w)?;
        let (kh, kw) = spec.kernel;
        let cout = spec.out_channels;
        let mut acc = vec![0.0f64; n * cout * oh * ow];
        for s in 0..n {
            for ci in 0..c {
                for i in 0..h {
                    for j in 0..w {
                        let xv = x.at4(s, ci, i, j).as_f64();
                        for o in 0..cout {
                            for u in 0..kh {
                                for v in 0..kw {
                                    let yy = (i * spec.stride.0 + u) as i64 - spec.pad.0 as i64;
                                    let xx = (j * spec.stride.1 + v) as i64 - spec.pad.1 as i64;
                                    if yy < 0 || xx < 0 || yy >= oh as i64 || xx >= ow as i64 {
                                        continue;
                                    }
                                    let off =
                                        ((s * cout + o) * oh + yy as usize) * ow + xx as usize;
                                    acc[off] += xv * weight.at4(ci, o, u, v).as_f64();
                                }
                            }
                        }
                    }
                }
            }
        }
        if let Some(b) = bias {
            for (idx, a) in acc.iter_mut().enumerate() {
                *a += b.data()[(idx / (oh * ow)) % cout].as_f64();
            }
        }
        Tensor::from_vec(
            [n, cout, oh, ow],
            acc.into_iter().map(T::from_f64).collect(),
        )
    }
}
