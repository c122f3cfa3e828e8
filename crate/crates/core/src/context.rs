//! Evaluation contexts.
//!
//! Composite blocks (DySample, TFE/DSSFF/CPAM, DyHead) are written once
//! against [`Context`] and run either eagerly on f32 tensors or on the
//! autodiff tape in f64. The tape path is what makes whole-block
//! gradient checks possible without a second implementation.

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::ops::{self, Activation, BinaryOp, PoolMode};
use crate::tensor::{ConvParams, Tensor};

pub trait Context {
    type T: Clone;

    /// Fixed data: coordinate grids, Gaussian kernels.
    fn constant(&mut self, t: Tensor) -> Self::T;
    /// Model parameter (differentiable on the tape).
    fn param(&mut self, t: &Tensor) -> Self::T;
    fn shape(&self, t: &Self::T) -> Vec<usize>;
    fn check_finite(&self, t: &Self::T, what: &str) -> Result<()>;

    fn conv2d(
        &mut self,
        x: &Self::T,
        w: &Self::T,
        b: Option<&Self::T>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self::T>;
    fn conv3d(
        &mut self,
        x: &Self::T,
        w: &Self::T,
        b: Option<&Self::T>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Self::T>;
    fn pool2d(&mut self, x: &Self::T, mode: PoolMode, k: usize, stride: usize) -> Result<Self::T>;
    fn resize_nearest_to(&mut self, x: &Self::T, oh: usize, ow: usize) -> Result<Self::T>;
    fn sample_grid(&mut self, x: &Self::T, coords: &Self::T) -> Result<Self::T>;
    fn sample_px(&mut self, x: &Self::T, coords: &Self::T) -> Result<Self::T>;
    fn depth_to_space(&mut self, x: &Self::T, r: usize) -> Result<Self::T>;
    fn conv1d_channels(&mut self, x: &Self::T, w: &Self::T, b: Option<&Self::T>)
        -> Result<Self::T>;
    fn activation(&mut self, x: &Self::T, kind: Activation) -> Result<Self::T>;
    fn reduce_mean(&mut self, x: &Self::T, axes: &[usize]) -> Result<Self::T>;
    fn binary(&mut self, op: BinaryOp, a: &Self::T, b: &Self::T) -> Result<Self::T>;
    fn affine(&mut self, x: &Self::T, scale: f64, shift: f64) -> Result<Self::T>;
    fn clamp(&mut self, x: &Self::T, lo: f64, hi: f64) -> Result<Self::T>;
    fn rsqrt(&mut self, x: &Self::T, eps: f64) -> Result<Self::T>;
    fn concat_channels(&mut self, xs: &[Self::T]) -> Result<Self::T>;
    fn slice_channels(&mut self, x: &Self::T, start: usize, len: usize) -> Result<Self::T>;
    fn gather_channels(&mut self, x: &Self::T, idx: &[usize]) -> Result<Self::T>;
    fn stack_depth(&mut self, xs: &[Self::T]) -> Result<Self::T>;
    fn reshape(&mut self, x: &Self::T, shape: &[usize]) -> Result<Self::T>;

    fn add(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        self.binary(BinaryOp::Add, a, b)
    }
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        self.binary(BinaryOp::Sub, a, b)
    }
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        self.binary(BinaryOp::Mul, a, b)
    }
    fn maximum(&mut self, a: &Self::T, b: &Self::T) -> Result<Self::T> {
        self.binary(BinaryOp::Max, a, b)
    }
}

/// Lifted convolution parameters: the weights as context values.
#[derive(Clone)]
pub struct ConvNodes<T> {
    pub w: T,
    pub b: Option<T>,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl<T> ConvNodes<T> {
    pub fn lift<C: Context<T = T>>(cx: &mut C, p: &ConvParams) -> Self {
        let w = cx.param(&p.weight);
        let b = p.bias.as_ref().map(|b| {
            let t = Tensor::from_vec(&[b.len()], b.clone()).expect("bias vector");
            cx.param(&t)
        });
        ConvNodes {
            w,
            b,
            stride: p.stride,
            padding: p.padding,
            groups: p.groups,
        }
    }
}

pub fn apply_conv2d<C: Context>(cx: &mut C, x: &C::T, p: &ConvNodes<C::T>) -> Result<C::T> {
    cx.conv2d(x, &p.w, p.b.as_ref(), p.stride, p.padding, p.groups)
}

pub fn apply_conv3d<C: Context>(cx: &mut C, x: &C::T, p: &ConvNodes<C::T>) -> Result<C::T> {
    cx.conv3d(x, &p.w, p.b.as_ref(), p.stride, p.padding, p.groups)
}

/// Immediate f32 evaluation.
pub struct Eager;

impl Context for Eager {
    type T = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn param(&mut self, t: &Tensor) -> Tensor {
        t.clone()
    }
    fn shape(&self, t: &Tensor) -> Vec<usize> {
        t.shape().to_vec()
    }
    fn check_finite(&self, t: &Tensor, what: &str) -> Result<()> {
        if t.is_finite() {
            Ok(())
        } else {
            Err(Error::Contract(format!("non-finite {}", what)))
        }
    }

    fn conv2d(
        &mut self,
        x: &Tensor,
        w: &Tensor,
        b: Option<&Tensor>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor> {
        ops::conv2d_g(x, w, b.map(|b| b.data()), stride, padding, groups)
    }
    fn conv3d(
        &mut self,
        x: &Tensor,
        w: &Tensor,
        b: Option<&Tensor>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Tensor> {
        ops::conv3d_g(x, w, b.map(|b| b.data()), stride, padding, groups)
    }
    fn pool2d(&mut self, x: &Tensor, mode: PoolMode, k: usize, stride: usize) -> Result<Tensor> {
        Ok(ops::pool2d_g(x, mode, k, stride)?.0)
    }
    fn resize_nearest_to(&mut self, x: &Tensor, oh: usize, ow: usize) -> Result<Tensor> {
        ops::resize_nearest_to_g(x, oh, ow)
    }
    fn sample_grid(&mut self, x: &Tensor, coords: &Tensor) -> Result<Tensor> {
        ops::sample_bilinear_grid_g(x, coords)
    }
    fn sample_px(&mut self, x: &Tensor, coords: &Tensor) -> Result<Tensor> {
        ops::sample_bilinear_px_g(x, coords)
    }
    fn depth_to_space(&mut self, x: &Tensor, r: usize) -> Result<Tensor> {
        ops::depth_to_space_g(x, r)
    }
    fn conv1d_channels(&mut self, x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
        ops::conv1d_channels_g(x, w, b.map(|b| b.data()[0]))
    }
    fn activation(&mut self, x: &Tensor, kind: Activation) -> Result<Tensor> {
        Ok(x.map(|v| kind.eval(v)))
    }
    fn reduce_mean(&mut self, x: &Tensor, axes: &[usize]) -> Result<Tensor> {
        ops::reduce_mean_g(x, axes)
    }
    fn binary(&mut self, op: BinaryOp, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        ops::binary_g(op, a, b)
    }
    fn affine(&mut self, x: &Tensor, scale: f64, shift: f64) -> Result<Tensor> {
        Ok(x.map(|v| v * scale + shift))
    }
    fn clamp(&mut self, x: &Tensor, lo: f64, hi: f64) -> Result<Tensor> {
        Ok(x.map(|v| v.clamp(lo, hi)))
    }
    fn rsqrt(&mut self, x: &Tensor, eps: f64) -> Result<Tensor> {
        Ok(x.map(|v| 1.0 / (v + eps).sqrt()))
    }
    fn concat_channels(&mut self, xs: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = xs.iter().collect();
        ops::concat_channels_g(&refs)
    }
    fn slice_channels(&mut self, x: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        ops::slice_channels_g(x, start, len)
    }
    fn gather_channels(&mut self, x: &Tensor, idx: &[usize]) -> Result<Tensor> {
        ops::gather_channels_g(x, idx)
    }
    fn stack_depth(&mut self, xs: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = xs.iter().collect();
        ops::stack_depth_g(&refs)
    }
    fn reshape(&mut self, x: &Tensor, shape: &[usize]) -> Result<Tensor> {
        x.reshape(shape)
    }
}

/// Recording evaluation on an autodiff [`Tape`], in f64.
pub struct Taped<'t> {
    pub tape: &'t mut Tape,
}

impl<'t> Taped<'t> {
    pub fn new(tape: &'t mut Tape) -> Self {
        Taped { tape }
    }
}

impl Context for Taped<'_> {
    type T = NodeId;

    fn constant(&mut self, t: Tensor) -> NodeId {
        self.tape.constant(t.to_f64())
    }
    fn param(&mut self, t: &Tensor) -> NodeId {
        self.tape.leaf(t.to_f64())
    }
    fn shape(&self, t: &NodeId) -> Vec<usize> {
        self.tape.value(*t).expect("node exists").shape().to_vec()
    }
    fn check_finite(&self, t: &NodeId, what: &str) -> Result<()> {
        if self.tape.value(*t)?.is_finite() {
            Ok(())
        } else {
            Err(Error::Contract(format!("non-finite {}", what)))
        }
    }

    fn conv2d(
        &mut self,
        x: &NodeId,
        w: &NodeId,
        b: Option<&NodeId>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<NodeId> {
        self.tape.conv2d(*x, *w, b.copied(), stride, padding, groups)
    }
    fn conv3d(
        &mut self,
        x: &NodeId,
        w: &NodeId,
        b: Option<&NodeId>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<NodeId> {
        self.tape.conv3d(*x, *w, b.copied(), stride, padding, groups)
    }
    fn pool2d(&mut self, x: &NodeId, mode: PoolMode, k: usize, stride: usize) -> Result<NodeId> {
        self.tape.pool2d(*x, mode, k, stride)
    }
    fn resize_nearest_to(&mut self, x: &NodeId, oh: usize, ow: usize) -> Result<NodeId> {
        self.tape.resize_nearest_to(*x, oh, ow)
    }
    fn sample_grid(&mut self, x: &NodeId, coords: &NodeId) -> Result<NodeId> {
        self.tape.sample_grid(*x, *coords)
    }
    fn sample_px(&mut self, x: &NodeId, coords: &NodeId) -> Result<NodeId> {
        self.tape.sample_px(*x, *coords)
    }
    fn depth_to_space(&mut self, x: &NodeId, r: usize) -> Result<NodeId> {
        self.tape.depth_to_space(*x, r)
    }
    fn conv1d_channels(&mut self, x: &NodeId, w: &NodeId, b: Option<&NodeId>) -> Result<NodeId> {
        self.tape.conv1d_channels(*x, *w, b.copied())
    }
    fn activation(&mut self, x: &NodeId, kind: Activation) -> Result<NodeId> {
        self.tape.activation(*x, kind)
    }
    fn reduce_mean(&mut self, x: &NodeId, axes: &[usize]) -> Result<NodeId> {
        self.tape.reduce_mean(*x, axes)
    }
    fn binary(&mut self, op: BinaryOp, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.tape.binary(op, *a, *b)
    }
    fn affine(&mut self, x: &NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.tape.affine(*x, scale, shift)
    }
    fn clamp(&mut self, x: &NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        self.tape.clamp(*x, lo, hi)
    }
    fn rsqrt(&mut self, x: &NodeId, eps: f64) -> Result<NodeId> {
        self.tape.rsqrt(*x, eps)
    }
    fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.tape.concat_channels(xs)
    }
    fn slice_channels(&mut self, x: &NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.tape.slice_channels(*x, start, len)
    }
    fn gather_channels(&mut self, x: &NodeId, idx: &[usize]) -> Result<NodeId> {
        self.tape.gather_channels(*x, idx)
    }
    fn stack_depth(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.tape.stack_depth(xs)
    }
    fn reshape(&mut self, x: &NodeId, shape: &[usize]) -> Result<NodeId> {
        self.tape.reshape(*x, shape)
    }
}
