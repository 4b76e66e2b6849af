//! Dense row-major tensors.
//!
//! Rank-4 tensors use NCHW layout: element `(n, c, h, w)` lives at flat offset
//! `((n * C + c) * H + h) * W + w`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};

/// Element type storable in a [`Tensor`].
pub trait Element: Copy + Default + PartialEq + Debug + Send + Sync + 'static {
    /// Tag used by the tensor file format.
    const DTYPE: DType;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    Real32,
    Int32,
    Real64,
}

impl Element for f32 {
    const DTYPE: DType = DType::Real32;
}

impl Element for f64 {
    const DTYPE: DType = DType::Real64;
}

impl Element for i32 {
    const DTYPE: DType = DType::Int32;
}

/// Real scalar the differentiable ops are generic over. Training runs in
/// `f32`; finite-difference checks run in `f64`.
pub trait Real: Element + Float + Sum + AddAssign + SubAssign + MulAssign {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// `c = a·b + beta·c` where `a` is `m×k` and `b` is `k×n`, both row-major
    /// unless flagged transposed (then stored `k×m` / `n×k`).
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        a_t: bool,
        b: &[Self],
        b_t: bool,
        beta: Self,
        c: &mut [Self],
    );
}

fn gemm_strides(rows: usize, cols: usize, transposed: bool) -> (isize, isize) {
    if transposed {
        (1, rows as isize)
    } else {
        (cols as isize, 1)
    }
}

macro_rules! impl_real {
    ($t:ty, $kernel:path) => {
        impl Real for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                a: &[Self],
                a_t: bool,
                b: &[Self],
                b_t: bool,
                beta: Self,
                c: &mut [Self],
            ) {
                assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
                if m == 0 || n == 0 {
                    return;
                }
                let (rsa, csa) = gemm_strides(m, k, a_t);
                let (rsb, csb) = gemm_strides(k, n, b_t);
                // SAFETY: the assert above bounds every index the kernel can touch
                // for the given dimensions and strides.
                unsafe {
                    $kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

pub type IntTensor = Tensor<i32>;

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}…", &self.data[..SHOWN])
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::EmptyShape);
    }
    if shape.contains(&0) {
        return Err(Error::ZeroDim(shape.to_vec()));
    }
    Ok(shape.iter().product())
}

impl<T: Element> Tensor<T> {
    pub fn from_vec(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let expected = check_shape(&shape)?;
        if expected != data.len() {
            return Err(Error::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; len],
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, T::default())
    }

    /// Same shape as `self`, filled with zeros.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![T::default(); self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::from_vec(shape, self.data)
    }

    /// `[N, C, H, W]` of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<[usize; 4]> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok([n, c, h, w]),
            _ => Err(Error::Rank {
                op,
                expected: 4,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Flat offset of `(n, c, h, w)` in a rank-4 tensor.
    #[inline]
    pub fn offset4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        let s = &self.shape;
        ((n * s[1] + c) * s[2] + h) * s[3] + w
    }

    #[inline]
    pub fn at4(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset4(n, c, h, w)]
    }

    /// Row-major offset for an arbitrary-rank index.
    pub fn offset(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut off = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            off = off * d + i;
        }
        Some(off)
    }

    pub fn get(&self, index: &[usize]) -> Option<T> {
        self.offset(index).map(|o| self.data[o])
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Sub-tensor `index` along the leading axis.
    pub fn slice_outer(&self, index: usize) -> Result<Self> {
        let outer = self.shape[0];
        if index >= outer {
            return Err(Error::InvalidArgument(format!(
                "index {index} out of range for leading dimension {outer}"
            )));
        }
        let inner: Vec<usize> = if self.shape.len() == 1 {
            vec![1]
        } else {
            self.shape[1..].to_vec()
        };
        let len: usize = inner.iter().product();
        Self::from_vec(inner, self.data[index * len..(index + 1) * len].to_vec())
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[&Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot stack zero tensors".into()))?;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if t.shape != first.shape {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    lhs: first.shape.clone(),
                    rhs: t.shape.clone(),
                });
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        Self::from_vec(shape, data)
    }
}

impl<T: Real> Tensor<T> {
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        self.map(|v| U::from_f64(v.as_f64()))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| a + b)
                .collect(),
        })
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "add_assign",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Inner product accumulated in `f64`.
    pub fn dot(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op: "dot",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a.as_f64() * b.as_f64())
            .sum())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Pads the two spatial axes of an NCHW tensor, filling the border with `fill`.
    pub fn pad2d(&self, pad: Pad2d, fill: T) -> Result<Self> {
        let [n, c, h, w] = self.dims4("pad2d")?;
        let oh = h + pad.top + pad.bottom;
        let ow = w + pad.left + pad.right;
        let mut out = Self::full([n, c, oh, ow], fill)?;
        for plane in 0..n * c {
            let src = &self.data[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out.data[plane * oh * ow..(plane + 1) * oh * ow];
            for row in 0..h {
                let d0 = (row + pad.top) * ow + pad.left;
                dst[d0..d0 + w].copy_from_slice(&src[row * w..(row + 1) * w]);
            }
        }
        Ok(out)
    }
}

/// Spatial padding amounts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Pad2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad2d {
    pub fn uniform(p: usize) -> Self {
        Self {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    /// Builds a padding from signed amounts, rejecting negatives.
    pub fn try_new(top: i64, bottom: i64, left: i64, right: i64) -> Result<Self> {
        let conv = |v: i64, side: &str| {
            usize::try_from(v)
                .map_err(|_| Error::InvalidArgument(format!("negative {side} padding {v}")))
        };
        Ok(Self {
            top: conv(top, "top")?,
            bottom: conv(bottom, "bottom")?,
            left: conv(left, "left")?,
            right: conv(right, "right")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_examples() {
        let t = Tensor::<f32>::zeros([1, 1, 2, 2]).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let t = Tensor::<f32>::zeros([3]).unwrap();
        assert_eq!(t.data(), &[0.0; 3]);
        assert_eq!(Tensor::<f32>::zeros([2, 3]).unwrap().numel(), 6);
    }

    #[test]
    fn zeros_rejects_bad_shapes() {
        assert!(matches!(
            Tensor::<f32>::zeros(Vec::new()),
            Err(Error::EmptyShape)
        ));
        assert!(matches!(
            Tensor::<f32>::zeros([2, 0]),
            Err(Error::ZeroDim(_))
        ));
        assert!(matches!(
            Tensor::<f32>::from_vec([2, 2], vec![1.0; 3]),
            Err(Error::DataLength { .. })
        ));
    }

    #[test]
    fn add_examples() {
        let a = Tensor::from_vec([2], vec![1.0f32, 2.0]).unwrap();
        let z = Tensor::from_vec([2], vec![0.0f32, 0.0]).unwrap();
        let b = Tensor::from_vec([2], vec![3.0f32, 4.0]).unwrap();
        assert_eq!(a.add(&z).unwrap().data(), &[1.0, 2.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
    }

    #[test]
    fn add_reports_both_shapes() {
        let a = Tensor::<f32>::zeros([2, 3]).unwrap();
        let b = Tensor::<f32>::zeros([3, 2]).unwrap();
        let msg = a.add(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[3, 2]"), "{msg}");
    }

    #[test]
    fn pad2d_examples() {
        let x = Tensor::from_vec([1, 1, 1, 1], vec![5.0f32]).unwrap();
        let y = x.pad2d(Pad2d::uniform(1), 0.0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.data(), &[0., 0., 0., 0., 5., 0., 0., 0., 0.]);

        let x = Tensor::from_vec([1, 2, 2, 3], (0..12).map(|v| v as f32).collect()).unwrap();
        assert_eq!(x.pad2d(Pad2d::default(), 9.0).unwrap(), x);

        let asym = Pad2d {
            top: 0,
            bottom: 2,
            left: 1,
            right: 0,
        };
        let y = x.pad2d(asym, -1.0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 4]);
        assert_eq!(y.at4(0, 1, 1, 3), 11.0);
        assert_eq!(y.at4(0, 1, 3, 3), -1.0);
    }

    #[test]
    fn pad2d_neg_inf_is_neutral_for_max() {
        let x = Tensor::from_vec([1, 1, 2, 2], vec![-3.0f32, -7.0, -2.0, -5.0]).unwrap();
        let y = x.pad2d(Pad2d::uniform(1), f32::NEG_INFINITY).unwrap();
        // top-left 3x3 window of the padded map covers interior pixels only partly
        let window_max = (0..3)
            .flat_map(|r| (0..3).map(move |c| (r, c)))
            .map(|(r, c)| y.at4(0, 0, r, c))
            .fold(f32::NEG_INFINITY, f32::max);
        assert_eq!(window_max, -2.0);
    }

    #[test]
    fn negative_padding_rejected() {
        assert!(Pad2d::try_new(0, -1, 0, 0).is_err());
        assert_eq!(Pad2d::try_new(1, 1, 1, 1).unwrap(), Pad2d::uniform(1));
    }

    #[test]
    fn stack_and_slice() {
        let a = Tensor::from_vec([2], vec![1.0f32, 2.0]).unwrap();
        let b = Tensor::from_vec([2], vec![3.0f32, 4.0]).unwrap();
        let s = Tensor::stack(&[&a, &b]).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.slice_outer(1).unwrap().data(), b.data());
    }

    fn small_shape() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..=8, 1..=4)
    }

    proptest! {
        #[test]
        fn offset_matches_nested_loops(shape in small_shape()) {
            let len: usize = shape.iter().product();
            let t = Tensor::from_vec(shape.clone(), (0..len as i32).collect()).unwrap();
            // nested-loop oracle: enumerate indices lexicographically
            let mut index = vec![0usize; shape.len()];
            for expected in 0..len {
                prop_assert_eq!(t.offset(&index), Some(expected));
                for axis in (0..shape.len()).rev() {
                    index[axis] += 1;
                    if index[axis] < shape[axis] { break; }
                    index[axis] = 0;
                }
            }
        }

        #[test]
        fn nchw_offset_formula(n in 1usize..4, c in 1usize..5, h in 1usize..6, w in 1usize..6) {
            let t = Tensor::<f32>::zeros([n, c, h, w]).unwrap();
            for (i, j, k, l) in [(0, 0, 0, 0), (n - 1, c - 1, h - 1, w - 1), (n / 2, c / 2, h / 2, w / 2)] {
                prop_assert_eq!(t.offset4(i, j, k, l), t.offset(&[i, j, k, l]).unwrap());
                prop_assert_eq!(t.offset4(i, j, k, l), ((i * c + j) * h + k) * w + l);
            }
        }

        #[test]
        fn add_commutes(v in prop::collection::vec(-1e3f32..1e3, 1..32)) {
            let a = Tensor::from_vec([v.len()], v.clone()).unwrap();
            let b = Tensor::from_vec([v.len()], v.iter().rev().copied().collect()).unwrap();
            prop_assert_eq!(a.add(&b).unwrap(), b.add(&a).unwrap());
        }
    }

    #[test]
    fn gemm_matches_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|v| v as f64 * 0.5 - 1.0).collect();
        let b: Vec<f64> = (0..k * n).map(|v| (v as f64).sin()).collect();
        let mut naive = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                naive[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        let mut c = vec![0.0; m * n];
        f64::gemm(m, k, n, &a, false, &b, false, 0.0, &mut c);
        for (x, y) in c.iter().zip(&naive) {
            assert!((x - y).abs() < 1e-12);
        }
        // transposed operands: a^T stored k×m, b^T stored n×k
        let at: Vec<f64> = (0..k * m).map(|i| a[(i % m) * k + i / m]).collect();
        let bt: Vec<f64> = (0..n * k).map(|i| b[(i % k) * n + i / k]).collect();
        let mut c2 = vec![0.0; m * n];
        f64::gemm(m, k, n, &at, true, &bt, true, 0.0, &mut c2);
        for (x, y) in c2.iter().zip(&naive) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
