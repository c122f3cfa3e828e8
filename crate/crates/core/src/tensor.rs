//! Dense row-major tensors.
//!
//! `Tensor` stores 32-bit floats; the autodiff tape evaluates the same
//! kernels on a 64-bit twin (`Tensor64`) so finite-difference checks are
//! not drowned by storage rounding. All kernels accumulate in f64
//! regardless of the storage element.

use crate::error::{Error, Result};

/// Storage element of a tensor. Implemented for `f32` and `f64`; all
/// kernel arithmetic goes through `to_f64`/`from_f64` so accumulation is
/// always 64-bit.
pub trait Elem: Copy + PartialOrd + std::fmt::Debug + Send + Sync + 'static {
    const ZERO: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Elem for f32 {
    const ZERO: Self = 0.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Elem for f64 {
    const ZERO: Self = 0.0;
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline]
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense numeric array, row-major, last axis fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBase<E: Elem> {
    shape: Vec<usize>,
    data: Vec<E>,
}

/// The public 32-bit tensor every operator consumes and produces.
pub type Tensor = TensorBase<f32>;
/// 64-bit twin used by the autodiff tape and the finite-difference checks.
pub type Tensor64 = TensorBase<f64>;

impl<E: Elem> TensorBase<E> {
    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::check_shape(shape)?;
        Ok(TensorBase {
            shape: shape.to_vec(),
            data: vec![E::ZERO; shape.iter().product()],
        })
    }

    pub fn full(shape: &[usize], v: f64) -> Result<Self> {
        Self::check_shape(shape)?;
        Ok(TensorBase {
            shape: shape.to_vec(),
            data: vec![E::from_f64(v); shape.iter().product()],
        })
    }

    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        Self::check_shape(shape)?;
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::dim(
                "data",
                format!("shape {:?} needs {} values, got {}", shape, n, data.len()),
            ));
        }
        Ok(TensorBase {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Build from an element-index function, row-major order.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        Self::check_shape(shape)?;
        let n: usize = shape.iter().product();
        Ok(TensorBase {
            shape: shape.to_vec(),
            data: (0..n).map(|i| E::from_f64(f(i))).collect(),
        })
    }

    fn check_shape(shape: &[usize]) -> Result<()> {
        if shape.is_empty() {
            return Err(Error::Rank {
                expected: 1,
                got: 0,
            });
        }
        if let Some(pos) = shape.iter().position(|&d| d == 0) {
            return Err(Error::dim(
                "shape",
                format!("extent {} of {:?} is zero; all extents must be >= 1", pos, shape),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[E] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn into_raw(self) -> (Vec<usize>, Vec<E>) {
        (self.shape, self.data)
    }

    /// Reinterpret the buffer under a new shape of identical volume.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        Self::check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(
                "shape",
                format!(
                    "cannot reshape {:?} ({} values) into {:?} ({} values)",
                    self.shape,
                    self.data.len(),
                    shape,
                    n
                ),
            ));
        }
        Ok(TensorBase {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.shape[axis]
    }

    /// Extent check helper: rank-4 (N, C, H, W).
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        if self.rank() != 4 {
            return Err(Error::Rank {
                expected: 4,
                got: self.rank(),
            });
        }
        Ok((self.shape[0], self.shape[1], self.shape[2], self.shape[3]))
    }

    /// Extent check helper: rank-5 (N, C, D, H, W).
    pub fn dims5(&self) -> Result<(usize, usize, usize, usize, usize)> {
        if self.rank() != 5 {
            return Err(Error::Rank {
                expected: 5,
                got: self.rank(),
            });
        }
        Ok((
            self.shape[0],
            self.shape[1],
            self.shape[2],
            self.shape[3],
            self.shape[4],
        ))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.to_f64().is_finite())
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.data {
            let v = v.to_f64();
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    /// Largest absolute elementwise difference. Errors on shape mismatch.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "shape",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a.to_f64() - b.to_f64()).abs())
            .fold(0.0, f64::max))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        TensorBase {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| E::from_f64(f(v.to_f64()))).collect(),
        }
    }

    pub fn to_f32(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.to_f64() as f32).collect(),
        }
    }

    pub fn to_f64(&self) -> Tensor64 {
        Tensor64 {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.to_f64()).collect(),
        }
    }
}

/// Convolution weights plus the layer hyperparameters.
///
/// `weight` is (out_c, in_c/groups, kh, kw) for 2-D layers and
/// (out_c, in_c/groups, kd, kh, kw) for 3-D ones; `bias`, when present,
/// has one entry per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Option<Vec<f32>>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Option<Vec<f32>>) -> Result<Self> {
        Self::with(weight, bias, 1, 0, 1)
    }

    pub fn with(
        weight: Tensor,
        bias: Option<Vec<f32>>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self> {
        if weight.rank() != 4 && weight.rank() != 5 {
            return Err(Error::Rank {
                expected: 4,
                got: weight.rank(),
            });
        }
        if stride == 0 {
            return Err(Error::param("stride", "must be >= 1"));
        }
        if groups == 0 {
            return Err(Error::param("groups", "must be >= 1"));
        }
        let out_c = weight.dim(0);
        if !out_c.is_multiple_of(groups) {
            return Err(Error::dim(
                "out_channels",
                format!("{} not divisible by groups {}", out_c, groups),
            ));
        }
        if let Some(b) = &bias {
            if b.len() != out_c {
                return Err(Error::dim(
                    "bias",
                    format!("length {} != out_channels {}", b.len(), out_c),
                ));
            }
        }
        Ok(ConvParams {
            weight,
            bias,
            stride,
            padding,
            groups,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim(0)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim(1) * self.groups
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }
}
