//! Reverse-mode differentiation over the operator set.
//!
//! The tape exists for verification, not training: one record per
//! operator call, no fusion, values held in f64 so finite-difference
//! comparisons are not dominated by storage rounding.

use crate::error::{Error, Result};
use crate::ops::{self, Activation, BinaryOp, PoolMode};
use crate::tensor::Tensor64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Record {
    Leaf,
    Constant,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: usize,
        groups: usize,
    },
    Conv3d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: usize,
        groups: usize,
    },
    Pool2d {
        x: NodeId,
        mode: PoolMode,
        k: usize,
        stride: usize,
        argmax: Option<Vec<usize>>,
    },
    ResizeNearestTo {
        x: NodeId,
    },
    SampleGrid {
        x: NodeId,
        coords: NodeId,
    },
    SamplePx {
        x: NodeId,
        coords: NodeId,
    },
    DepthToSpace {
        x: NodeId,
        r: usize,
    },
    Conv1dChannels {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Activation {
        x: NodeId,
        kind: Activation,
    },
    ReduceMean {
        x: NodeId,
        axes: Vec<usize>,
    },
    Binary {
        op: BinaryOp,
        a: NodeId,
        b: NodeId,
    },
    Affine {
        x: NodeId,
        scale: f64,
    },
    Clamp {
        x: NodeId,
        lo: f64,
        hi: f64,
    },
    Rsqrt {
        x: NodeId,
        eps: f64,
    },
    ConcatChannels {
        xs: Vec<NodeId>,
    },
    SliceChannels {
        x: NodeId,
        start: usize,
    },
    GatherChannels {
        x: NodeId,
        idx: Vec<usize>,
    },
    StackDepth {
        xs: Vec<NodeId>,
    },
    Reshape {
        x: NodeId,
    },
    SumAll {
        x: NodeId,
    },
}

struct Node {
    value: Tensor64,
    rec: Record,
}

/// Append-only record of a forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar output with respect to every tape node that
/// received one.
pub struct Gradients {
    grads: Vec<Option<Tensor64>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor64> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    /// Gradient for a node, zero-filled with the node's shape when no
    /// path reached it.
    pub fn get_or_zeros(&self, id: NodeId, shape: &[usize]) -> Tensor64 {
        match self.get(id) {
            Some(g) => g.clone(),
            None => Tensor64::zeros(shape).expect("leaf shape"),
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor64> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or_else(|| Error::Lookup(format!("no node with id {}", id.0)))
    }

    fn push(&mut self, value: Tensor64, rec: Record) -> NodeId {
        self.nodes.push(Node { value, rec });
        NodeId(self.nodes.len() - 1)
    }

    /// Differentiable input.
    pub fn leaf(&mut self, value: Tensor64) -> NodeId {
        self.push(value, Record::Leaf)
    }

    /// Non-differentiable input (grids, fixed kernels).
    pub fn constant(&mut self, value: Tensor64) -> NodeId {
        self.push(value, Record::Constant)
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<NodeId> {
        let bias = match b {
            Some(bi) => Some(self.value(bi)?.data().to_vec()),
            None => None,
        };
        let v = ops::conv2d_g(
            self.value(x)?,
            self.value(w)?,
            bias.as_deref(),
            stride,
            padding,
            groups,
        )?;
        Ok(self.push(
            v,
            Record::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
                groups,
            },
        ))
    }

    pub fn conv3d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<NodeId> {
        let bias = match b {
            Some(bi) => Some(self.value(bi)?.data().to_vec()),
            None => None,
        };
        let v = ops::conv3d_g(
            self.value(x)?,
            self.value(w)?,
            bias.as_deref(),
            stride,
            padding,
            groups,
        )?;
        Ok(self.push(
            v,
            Record::Conv3d {
                x,
                w,
                b,
                stride,
                padding,
                groups,
            },
        ))
    }

    pub fn pool2d(&mut self, x: NodeId, mode: PoolMode, k: usize, stride: usize) -> Result<NodeId> {
        let (v, argmax) = ops::pool2d_g(self.value(x)?, mode, k, stride)?;
        Ok(self.push(
            v,
            Record::Pool2d {
                x,
                mode,
                k,
                stride,
                argmax,
            },
        ))
    }

    pub fn resize_nearest_to(&mut self, x: NodeId, oh: usize, ow: usize) -> Result<NodeId> {
        let v = ops::resize_nearest_to_g(self.value(x)?, oh, ow)?;
        Ok(self.push(v, Record::ResizeNearestTo { x }))
    }

    pub fn sample_grid(&mut self, x: NodeId, coords: NodeId) -> Result<NodeId> {
        let v = ops::sample_bilinear_grid_g(self.value(x)?, self.value(coords)?)?;
        Ok(self.push(v, Record::SampleGrid { x, coords }))
    }

    pub fn sample_px(&mut self, x: NodeId, coords: NodeId) -> Result<NodeId> {
        let v = ops::sample_bilinear_px_g(self.value(x)?, self.value(coords)?)?;
        Ok(self.push(v, Record::SamplePx { x, coords }))
    }

    pub fn depth_to_space(&mut self, x: NodeId, r: usize) -> Result<NodeId> {
        let v = ops::depth_to_space_g(self.value(x)?, r)?;
        Ok(self.push(v, Record::DepthToSpace { x, r }))
    }

    pub fn conv1d_channels(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let bias = match b {
            Some(bi) => Some(self.value(bi)?.data()[0]),
            None => None,
        };
        let v = ops::conv1d_channels_g(self.value(x)?, self.value(w)?, bias)?;
        Ok(self.push(v, Record::Conv1dChannels { x, w, b }))
    }

    pub fn activation(&mut self, x: NodeId, kind: Activation) -> Result<NodeId> {
        let v = self.value(x)?.map(|v| kind.eval(v));
        Ok(self.push(v, Record::Activation { x, kind }))
    }

    pub fn reduce_mean(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        let v = ops::reduce_mean_g(self.value(x)?, axes)?;
        Ok(self.push(
            v,
            Record::ReduceMean {
                x,
                axes: axes.to_vec(),
            },
        ))
    }

    pub fn binary(&mut self, op: BinaryOp, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::binary_g(op, self.value(a)?, self.value(b)?)?;
        Ok(self.push(v, Record::Binary { op, a, b }))
    }

    pub fn affine(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        let v = self.value(x)?.map(|v| v * scale + shift);
        Ok(self.push(v, Record::Affine { x, scale }))
    }

    pub fn clamp(&mut self, x: NodeId, lo: f64, hi: f64) -> Result<NodeId> {
        let v = self.value(x)?.map(|v| v.clamp(lo, hi));
        Ok(self.push(v, Record::Clamp { x, lo, hi }))
    }

    pub fn rsqrt(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        let v = self.value(x)?.map(|v| 1.0 / (v + eps).sqrt());
        Ok(self.push(v, Record::Rsqrt { x, eps }))
    }

    pub fn concat_channels(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor64> = xs.iter().map(|&i| self.value(i)).collect::<Result<_>>()?;
        let v = ops::concat_channels_g(&vals)?;
        Ok(self.push(v, Record::ConcatChannels { xs: xs.to_vec() }))
    }

    pub fn slice_channels(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = ops::slice_channels_g(self.value(x)?, start, len)?;
        Ok(self.push(v, Record::SliceChannels { x, start }))
    }

    pub fn gather_channels(&mut self, x: NodeId, idx: &[usize]) -> Result<NodeId> {
        let v = ops::gather_channels_g(self.value(x)?, idx)?;
        Ok(self.push(
            v,
            Record::GatherChannels {
                x,
                idx: idx.to_vec(),
            },
        ))
    }

    pub fn stack_depth(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        let vals: Vec<&Tensor64> = xs.iter().map(|&i| self.value(i)).collect::<Result<_>>()?;
        let v = ops::stack_depth_g(&vals)?;
        Ok(self.push(v, Record::StackDepth { xs: xs.to_vec() }))
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(x)?.reshape(shape)?;
        Ok(self.push(v, Record::Reshape { x }))
    }

    pub fn sum_all(&mut self, x: NodeId) -> Result<NodeId> {
        let v = ops::sum_all_g(self.value(x)?);
        Ok(self.push(v, Record::SumAll { x }))
    }

    /// Reverse sweep from a scalar output. Returns a gradient per node;
    /// leaves read theirs via [`Gradients::get`].
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        if output.0 >= self.nodes.len() {
            return Err(Error::Lookup(format!("no node with id {}", output.0)));
        }
        if self.nodes[output.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.nodes[output.0].value.shape()
            )));
        }

        let mut grads: Vec<Option<Tensor64>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(
            Tensor64::full(self.nodes[output.0].value.shape(), 1.0).expect("seed"),
        );

        for i in (0..=output.0).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.step_backward(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(grads: &mut [Option<Tensor64>], id: NodeId, delta: Tensor64) {
        match &mut grads[id.0] {
            Some(g) => {
                for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                    *a += *b;
                }
            }
            slot @ None => *slot = Some(delta),
        }
    }

    fn step_backward(
        &self,
        i: usize,
        g: &Tensor64,
        grads: &mut [Option<Tensor64>],
    ) -> Result<()> {
        let node = &self.nodes[i];
        match &node.rec {
            Record::Leaf | Record::Constant => {}
            Record::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
                groups,
            } => {
                let (dx, dw, db) = ops::conv2d_backward_g(
                    self.value(*x)?,
                    self.value(*w)?,
                    g,
                    *stride,
                    *padding,
                    *groups,
                )?;
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *w, dw);
                if let Some(bi) = b {
                    Self::accumulate(grads, *bi, Tensor64::from_vec(&[db.len()], db)?);
                }
            }
            Record::Conv3d {
                x,
                w,
                b,
                stride,
                padding,
                groups,
            } => {
                let (dx, dw, db) = ops::conv3d_backward_g(
                    self.value(*x)?,
                    self.value(*w)?,
                    g,
                    *stride,
                    *padding,
                    *groups,
                )?;
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *w, dw);
                if let Some(bi) = b {
                    Self::accumulate(grads, *bi, Tensor64::from_vec(&[db.len()], db)?);
                }
            }
            Record::Pool2d {
                x,
                mode,
                k,
                stride,
                argmax,
            } => {
                let xv = self.value(*x)?;
                let mut dx = Tensor64::zeros(xv.shape())?;
                match mode {
                    PoolMode::Max => {
                        let arg = argmax.as_ref().expect("argmax saved for max pooling");
                        for (o, &src) in arg.iter().enumerate() {
                            dx.data_mut()[src] += g.data()[o];
                        }
                    }
                    PoolMode::Avg => {
                        let (n, c, h, w) = xv.dims4()?;
                        let (_, _, oh, ow) = g.dims4()?;
                        let inv = 1.0 / (k * k) as f64;
                        for ni in 0..n {
                            for ci in 0..c {
                                let base = (ni * c + ci) * h * w;
                                for yo in 0..oh {
                                    for xo in 0..ow {
                                        let gv =
                                            g.data()[((ni * c + ci) * oh + yo) * ow + xo] * inv;
                                        for ky in 0..*k {
                                            for kx in 0..*k {
                                                dx.data_mut()[base
                                                    + (yo * stride + ky) * w
                                                    + xo * stride
                                                    + kx] += gv;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Record::ResizeNearestTo { x } => {
                let xv = self.value(*x)?;
                let (n, c, h, w) = xv.dims4()?;
                let (_, _, oh, ow) = g.dims4()?;
                let mut dx = Tensor64::zeros(xv.shape())?;
                for ni in 0..n {
                    for ci in 0..c {
                        let base = (ni * c + ci) * h * w;
                        let obase = (ni * c + ci) * oh * ow;
                        for yo in 0..oh {
                            let yi = (yo * h / oh).min(h - 1);
                            for xo in 0..ow {
                                let xi = (xo * w / ow).min(w - 1);
                                dx.data_mut()[base + yi * w + xi] += g.data()[obase + yo * ow + xo];
                            }
                        }
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Record::SampleGrid { x, coords } => {
                let (dx, dc) =
                    ops::sample_bilinear_grid_backward_g(self.value(*x)?, self.value(*coords)?, g)?;
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *coords, dc);
            }
            Record::SamplePx { x, coords } => {
                let (dx, dc) =
                    ops::sample_bilinear_px_backward_g(self.value(*x)?, self.value(*coords)?, g)?;
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *coords, dc);
            }
            Record::DepthToSpace { x, r } => {
                Self::accumulate(grads, *x, ops::space_to_depth_g(g, *r)?);
            }
            Record::Conv1dChannels { x, w, b } => {
                let xv = self.value(*x)?;
                let wv = self.value(*w)?;
                let (n, c, h, wd) = xv.dims4()?;
                let k = wv.len();
                let half = (k / 2) as isize;
                let mut dx = Tensor64::zeros(xv.shape())?;
                let mut dw = vec![0.0f64; k];
                let mut db = 0.0f64;
                for ni in 0..n {
                    for ci in 0..c as isize {
                        for y in 0..h {
                            for xw in 0..wd {
                                let gv = g.data()[((ni * c + ci as usize) * h + y) * wd + xw];
                                if gv == 0.0 {
                                    continue;
                                }
                                db += gv;
                                for t in 0..k as isize {
                                    let cc = ci + t - half;
                                    if cc < 0 || cc >= c as isize {
                                        continue;
                                    }
                                    let xi = ((ni * c + cc as usize) * h + y) * wd + xw;
                                    dx.data_mut()[xi] += gv * wv.data()[t as usize];
                                    dw[t as usize] += gv * xv.data()[xi];
                                }
                            }
                        }
                    }
                }
                Self::accumulate(grads, *x, dx);
                Self::accumulate(grads, *w, Tensor64::from_vec(&[k], dw)?);
                if let Some(bi) = b {
                    Self::accumulate(grads, *bi, Tensor64::from_vec(&[1], vec![db])?);
                }
            }
            Record::Activation { x, kind } => {
                let xv = self.value(*x)?;
                let mut dx = Tensor64::zeros(xv.shape())?;
                for ((d, xi), gi) in dx.data_mut().iter_mut().zip(xv.data()).zip(g.data()) {
                    *d = gi * kind.grad(*xi);
                }
                Self::accumulate(grads, *x, dx);
            }
            Record::ReduceMean { x, axes } => {
                let xv = self.value(*x)?;
                let count: usize = axes.iter().map(|&a| xv.shape()[a]).product();
                let scaled = g.map(|v| v / count as f64);
                // broadcast back over the reduced (size-1) axes
                let ones = Tensor64::zeros(xv.shape())?;
                let dx = ops::binary_g(BinaryOp::Add, &ones, &scaled)?;
                Self::accumulate(grads, *x, dx);
            }
            Record::Binary { op, a, b } => {
                let av = self.value(*a)?;
                let bv = self.value(*b)?;
                match op {
                    BinaryOp::Add => {
                        Self::accumulate(grads, *a, ops::reduce_to_shape_g(g, av.shape())?);
                        Self::accumulate(grads, *b, ops::reduce_to_shape_g(g, bv.shape())?);
                    }
                    BinaryOp::Sub => {
                        Self::accumulate(grads, *a, ops::reduce_to_shape_g(g, av.shape())?);
                        let neg = g.map(|v| -v);
                        Self::accumulate(grads, *b, ops::reduce_to_shape_g(&neg, bv.shape())?);
                    }
                    BinaryOp::Mul => {
                        let da_full = ops::binary_g(BinaryOp::Mul, g, bv)?;
                        let db_full = ops::binary_g(BinaryOp::Mul, g, av)?;
                        Self::accumulate(grads, *a, ops::reduce_to_shape_g(&da_full, av.shape())?);
                        Self::accumulate(grads, *b, ops::reduce_to_shape_g(&db_full, bv.shape())?);
                    }
                    BinaryOp::Max => {
                        // route to the winning operand; ties go to `a`
                        let win_a = mask_ge(av, bv)?;
                        let win_b = win_a.map(|v| 1.0 - v);
                        let da_full = ops::binary_g(BinaryOp::Mul, g, &win_a)?;
                        let db_full = ops::binary_g(BinaryOp::Mul, g, &win_b)?;
                        Self::accumulate(grads, *a, ops::reduce_to_shape_g(&da_full, av.shape())?);
                        Self::accumulate(grads, *b, ops::reduce_to_shape_g(&db_full, bv.shape())?);
                    }
                }
            }
            Record::Affine { x, scale } => {
                Self::accumulate(grads, *x, g.map(|v| v * scale));
            }
            Record::Clamp { x, lo, hi } => {
                let xv = self.value(*x)?;
                let mut dx = Tensor64::zeros(xv.shape())?;
                for ((d, xi), gi) in dx.data_mut().iter_mut().zip(xv.data()).zip(g.data()) {
                    if *xi > *lo && *xi < *hi {
                        *d = *gi;
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Record::Rsqrt { x, eps } => {
                let xv = self.value(*x)?;
                let mut dx = Tensor64::zeros(xv.shape())?;
                for ((d, xi), gi) in dx.data_mut().iter_mut().zip(xv.data()).zip(g.data()) {
                    *d = gi * -0.5 * (xi + eps).powf(-1.5);
                }
                Self::accumulate(grads, *x, dx);
            }
            Record::ConcatChannels { xs } => {
                let mut start = 0usize;
                for &xi in xs {
                    let len = self.value(xi)?.dim(1);
                    Self::accumulate(grads, xi, ops::slice_channels_g(g, start, len)?);
                    start += len;
                }
            }
            Record::SliceChannels { x, start } => {
                let xv = self.value(*x)?;
                let (n, c, h, w) = xv.dims4()?;
                let len = g.dim(1);
                let mut dx = Tensor64::zeros(&[n, c, h, w])?;
                let plane = h * w;
                for ni in 0..n {
                    for li in 0..len {
                        let dst = (ni * c + start + li) * plane;
                        let src = (ni * len + li) * plane;
                        for p in 0..plane {
                            dx.data_mut()[dst + p] += g.data()[src + p];
                        }
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Record::GatherChannels { x, idx } => {
                let xv = self.value(*x)?;
                let (n, c, h, w) = xv.dims4()?;
                let mut dx = Tensor64::zeros(&[n, c, h, w])?;
                let plane = h * w;
                for ni in 0..n {
                    for (o, &i) in idx.iter().enumerate() {
                        let dst = (ni * c + i) * plane;
                        let src = (ni * idx.len() + o) * plane;
                        for p in 0..plane {
                            dx.data_mut()[dst + p] += g.data()[src + p];
                        }
                    }
                }
                Self::accumulate(grads, *x, dx);
            }
            Record::StackDepth { xs } => {
                let (n, c, d, h, w) = g.dims5()?;
                let plane = h * w;
                for (di, &xi) in xs.iter().enumerate() {
                    let mut dx = Tensor64::zeros(&[n, c, h, w])?;
                    for ni in 0..n {
                        for ci in 0..c {
                            let src = ((ni * c + ci) * d + di) * plane;
                            let dst = (ni * c + ci) * plane;
                            dx.data_mut()[dst..dst + plane]
                                .copy_from_slice(&g.data()[src..src + plane]);
                        }
                    }
                    Self::accumulate(grads, xi, dx);
                }
            }
            Record::Reshape { x } => {
                let shape = self.value(*x)?.shape().to_vec();
                Self::accumulate(grads, *x, g.reshape(&shape)?);
            }
            Record::SumAll { x } => {
                let xv = self.value(*x)?;
                Self::accumulate(grads, *x, Tensor64::full(xv.shape(), g.data()[0])?);
            }
        }
        Ok(())
    }
}

fn mask_ge(a: &Tensor64, b: &Tensor64) -> Result<Tensor64> {
    // 1.0 where a >= b under broadcasting, else 0.0
    let diff = ops::binary_g(BinaryOp::Sub, a, b)?;
    Ok(diff.map(|v| if v >= 0.0 { 1.0 } else { 0.0 }))
}

// ---------------------------------------------------------------------------
// Finite-difference checking
// ---------------------------------------------------------------------------

/// Max relative error between the tape gradient and central finite
/// differences, over every coordinate of every input:
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
///
/// `f` rebuilds the forward pass from fresh leaves; its output is summed
/// to a scalar internally.
pub fn gradcheck_n<F>(inputs: &[Tensor64], f: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
{
    if eps <= 0.0 {
        return Err(Error::param("eps", "must be > 0"));
    }

    let run = |vals: &[Tensor64]| -> Result<(Tape, Vec<NodeId>, NodeId)> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = vals.iter().map(|v| tape.leaf(v.clone())).collect();
        let out = f(&mut tape, &ids)?;
        let loss = tape.sum_all(out)?;
        Ok((tape, ids, loss))
    };

    let eval = |vals: &[Tensor64]| -> Result<f64> {
        let (tape, _, loss) = run(vals)?;
        let v = tape.value(loss)?.data()[0];
        if !v.is_finite() {
            return Err(Error::Eval(format!("non-finite value {} during finite differences", v)));
        }
        Ok(v)
    };

    let (tape, ids, loss) = run(inputs)?;
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor64> = inputs.to_vec();
    for (j, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(ids[j], input.shape());
        for i in 0..input.len() {
            let orig = input.data()[i];
            work[j].data_mut()[i] = orig + eps;
            let plus = eval(&work)?;
            work[j].data_mut()[i] = orig - eps;
            let minus = eval(&work)?;
            work[j].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

/// Single-input convenience wrapper around [`gradcheck_n`].
pub fn gradcheck<F>(f: F, x: &Tensor64, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, NodeId) -> Result<NodeId>,
{
    gradcheck_n(std::slice::from_ref(x), |tape, ids| f(tape, ids[0]), eps)
}

pub const DEFAULT_EPS: f64 = 1e-5;
