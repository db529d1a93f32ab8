//! Dense row-major tensors and the differentiable primitives every layer is
//! built from.
//!
//! Spatial tensors use height-width-channel layout (`[H, W, C]`). Batches are
//! plain `Vec`s of spatial tensors because pyramid levels of one batch have
//! different extents.

mod conv;
mod gemm;
mod matmul;
mod pool;
mod upsample;

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive};

use crate::error::{shape_err, Result};

pub use conv::{conv2d, conv2d_backward, ConvGrads};
pub(crate) use conv::conv2d_backward_select;
pub(crate) use gemm::{gemm, Layout};
pub use matmul::{matmul, matmul_backward};
pub use pool::{maxpool2d, maxpool2d_backward, PoolIndices};
pub use upsample::{upsample_nearest, upsample_nearest_backward};
pub(crate) use upsample::source_index;

/// Floating-point element type. `f32` is used for training and inference,
/// `f64` for gradient checking.
pub trait Scalar:
    Float
    + FromPrimitive
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    /// `c = a·b (+ c when accumulate)`, all operands described by row/column strides.
    ///
    /// # Safety
    /// Strides and extents must describe memory inside the given pointers.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("finite f64 converts to scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Scalar for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Dense n-dimensional array (at most four axes).
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return shape_err(format!("tensors have 1 to 4 axes, got {}", shape.len()));
        }
        if shape.contains(&0) {
            return shape_err(format!("extents must be positive: {shape:?}"));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return shape_err(format!(
                "shape {shape:?} holds {n} elements but {} were supplied",
                data.len()
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n]).expect("valid shape")
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect()).expect("valid shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Extents of a spatial `[H, W, C]` tensor.
    pub fn hwc(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [h, w, c] => Ok((h, w, c)),
            _ => shape_err(format!("expected [H, W, C], got {:?}", self.shape)),
        }
    }

    /// Last-axis extent (channels for spatial tensors).
    pub fn channels(&self) -> usize {
        *self.shape.last().expect("non-empty shape")
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() || shape.is_empty() || shape.len() > 4 {
            return shape_err(format!("cannot reshape {:?} into {shape:?}", self.shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn at3(&self, i: usize, j: usize, c: usize) -> T {
        let (_, w, ch) = (self.shape[0], self.shape[1], self.shape[2]);
        self.data[(i * w + j) * ch + c]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::of(x.to_f64_lossy())).collect(),
        }
    }

    pub fn sum_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err(format!("cannot add {:?} to {:?}", other.shape, self.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Concatenate spatial tensors of identical extents along channels.
    pub fn concat_channels(parts: &[Tensor<T>]) -> Result<Self> {
        let Some(first) = parts.first() else {
            return shape_err("nothing to concatenate");
        };
        let (h, w, _) = first.hwc()?;
        let mut total = 0;
        for p in parts {
            let (ph, pw, pc) = p.hwc()?;
            if (ph, pw) != (h, w) {
                return shape_err(format!(
                    "channel concat needs equal extents, got {h}x{w} and {ph}x{pw}"
                ));
            }
            total += pc;
        }
        let mut data = Vec::with_capacity(h * w * total);
        for px in 0..h * w {
            for p in parts {
                let c = p.channels();
                data.extend_from_slice(&p.data[px * c..(px + 1) * c]);
            }
        }
        Tensor::new(&[h, w, total], data)
    }

    /// Channels `[from, to)` of a spatial tensor.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Self> {
        let (h, w, c) = self.hwc()?;
        if from >= to || to > c {
            return shape_err(format!("channel range {from}..{to} outside 0..{c}"));
        }
        let mut data = Vec::with_capacity(h * w * (to - from));
        for px in 0..h * w {
            data.extend_from_slice(&self.data[px * c + from..px * c + to]);
        }
        Tensor::new(&[h, w, to - from], data)
    }
}

/// Debug-build guard: finite inputs must produce finite outputs.
#[inline]
pub(crate) fn debug_check_finite<T: Scalar>(op: &str, inputs_finite: bool, out: &[T]) {
    if cfg!(debug_assertions) && inputs_finite {
        debug_assert!(
            out.iter().all(|x| x.is_finite()),
            "{op} produced a non-finite value from finite inputs"
        );
    }
}

#[inline]
pub(crate) fn all_finite<T: Scalar>(xs: &[T]) -> bool {
    !cfg!(debug_assertions) || xs.iter().all(|x| x.is_finite())
}
