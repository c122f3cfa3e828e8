//! Dynamic head: scale-aware, spatial-aware and task-aware attention
//! composed into repeatable blocks over a stack of pyramid levels
//! resized to a common grid.

use crate::context::{apply_conv2d, ConvNodes, Context, Eager};
use crate::error::{Error, Result};
use crate::ops::{self, Activation};
use crate::tensor::{ConvParams, Tensor};

/// Deformable taps per location: the 3×3 pattern.
pub const SPATIAL_TAPS: usize = 9;

/// Pyramid levels resized onto one spatial grid, all sharing a channel
/// count. `strides` keeps each level's original stride for bookkeeping.
#[derive(Debug, Clone)]
pub struct LevelStack {
    pub levels: Vec<Tensor>,
    pub strides: Vec<usize>,
}

impl LevelStack {
    pub fn new(levels: Vec<Tensor>, strides: Vec<usize>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::param("levels", "need at least one level"));
        }
        if strides.len() != levels.len() {
            return Err(Error::param("strides", "one stride per level"));
        }
        let shape = levels[0].shape().to_vec();
        for l in &levels {
            l.dims4()?;
            if l.shape() != shape {
                return Err(Error::dim(
                    "shape",
                    format!("levels must share a shape: {:?} vs {:?}", shape, l.shape()),
                ));
            }
        }
        Ok(LevelStack { levels, strides })
    }

    /// Resize pyramid maps (nearest) onto the median level's grid.
    /// Returns the stack plus each level's original (H, W) so the output
    /// can be mapped back with [`LevelStack::to_pyramid`].
    pub fn from_pyramid(maps: &[Tensor], strides: &[usize]) -> Result<(Self, Vec<(usize, usize)>)> {
        if maps.is_empty() {
            return Err(Error::param("levels", "need at least one level"));
        }
        let sizes: Vec<(usize, usize)> = maps
            .iter()
            .map(|m| m.dims4().map(|(_, _, h, w)| (h, w)))
            .collect::<Result<_>>()?;
        let (mh, mw) = sizes[maps.len() / 2];
        let levels = maps
            .iter()
            .map(|m| ops::resize_nearest_to_g(m, mh, mw))
            .collect::<Result<Vec<_>>>()?;
        Ok((LevelStack::new(levels, strides.to_vec())?, sizes))
    }

    /// Resize each level back to its original grid.
    pub fn to_pyramid(&self, sizes: &[(usize, usize)]) -> Result<Vec<Tensor>> {
        if sizes.len() != self.levels.len() {
            return Err(Error::param("sizes", "one size per level"));
        }
        self.levels
            .iter()
            .zip(sizes)
            .map(|(l, &(h, w))| ops::resize_nearest_to_g(l, h, w))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn grid(&self) -> (usize, usize) {
        let s = self.levels[0].shape();
        (s[2], s[3])
    }

    pub fn channels(&self) -> usize {
        self.levels[0].shape()[1]
    }
}

/// Parameters of one dynamic-head block (shared when blocks repeat).
#[derive(Debug, Clone)]
pub struct DyHeadParams {
    /// Scalar 1×1 layer applied to the pooled level descriptor.
    pub scale_fc: ConvParams,
    /// 3×3 convolution C -> 27 on the median level: 18 offset channels
    /// (x, y per tap) followed by 9 mask logits.
    pub offset_conv: ConvParams,
    /// Per-level, per-tap aggregation weights, shape (L, 9).
    pub spatial_weights: Tensor,
    /// Channel-descriptor MLP producing the four dynamic-relu vectors.
    pub task_fc1: ConvParams,
    pub task_fc2: ConvParams,
    pub block_count: usize,
}

impl DyHeadParams {
    pub fn validate(&self, levels: usize, channels: usize) -> Result<()> {
        if self.offset_conv.out_channels() != 3 * SPATIAL_TAPS {
            return Err(Error::dim(
                "channel",
                format!(
                    "offset conv must produce {} channels, got {}",
                    3 * SPATIAL_TAPS,
                    self.offset_conv.out_channels()
                ),
            ));
        }
        if self.spatial_weights.shape() != [levels, SPATIAL_TAPS] {
            return Err(Error::dim(
                "shape",
                format!(
                    "spatial weights {:?} must be ({}, {})",
                    self.spatial_weights.shape(),
                    levels,
                    SPATIAL_TAPS
                ),
            ));
        }
        if self.task_fc2.out_channels() != 4 * channels {
            return Err(Error::dim(
                "channel",
                format!(
                    "task fc2 must produce 4C = {} channels, got {}",
                    4 * channels,
                    self.task_fc2.out_channels()
                ),
            ));
        }
        Ok(())
    }

    /// Hidden width of the task-attention MLP for a channel count.
    pub fn task_hidden(channels: usize) -> usize {
        (channels / 4).max(4)
    }
}

#[derive(Clone)]
pub struct DyHeadNodes<T> {
    pub scale_fc: ConvNodes<T>,
    pub offset_conv: ConvNodes<T>,
    pub spatial_weights: Vec<f32>,
    pub task_fc1: ConvNodes<T>,
    pub task_fc2: ConvNodes<T>,
    pub block_count: usize,
}

impl<T> DyHeadNodes<T> {
    pub fn lift<C: Context<T = T>>(cx: &mut C, p: &DyHeadParams) -> Self {
        DyHeadNodes {
            scale_fc: ConvNodes::lift(cx, &p.scale_fc),
            offset_conv: ConvNodes::lift(cx, &p.offset_conv),
            spatial_weights: p.spatial_weights.data().to_vec(),
            task_fc1: ConvNodes::lift(cx, &p.task_fc1),
            task_fc2: ConvNodes::lift(cx, &p.task_fc2),
            block_count: p.block_count,
        }
    }
}

// ---------------------------------------------------------------------------
// The three attentions
// ---------------------------------------------------------------------------

/// Per level: a = hard_sigmoid(relu(fc(mean over S and C))); level * a.
pub fn scale_attention_cx<C: Context>(
    cx: &mut C,
    levels: &[C::T],
    p: &DyHeadNodes<C::T>,
) -> Result<Vec<C::T>> {
    let mut out = Vec::with_capacity(levels.len());
    for level in levels {
        let m = cx.reduce_mean(level, &[1, 2, 3])?; // (N, 1, 1, 1)
        let z = apply_conv2d(cx, &m, &p.scale_fc)?;
        let r = cx.activation(&z, Activation::Relu)?;
        let a = cx.activation(&r, Activation::HardSigmoid)?;
        out.push(cx.mul(level, &a)?);
    }
    Ok(out)
}

/// Base sampling positions for tap `j` of the 3×3 pattern on an H×W grid,
/// as a (1, 2, H, W) pixel-coordinate map.
fn tap_base(j: usize, h: usize, w: usize) -> Result<Tensor> {
    let dy = (j / 3) as f64 - 1.0;
    let dx = (j % 3) as f64 - 1.0;
    let mut t = Tensor::zeros(&[1, 2, h, w])?;
    for y in 0..h {
        for x in 0..w {
            t.data_mut()[y * w + x] = (x as f64 + dx) as f32;
            t.data_mut()[h * w + y * w + x] = (y as f64 + dy) as f32;
        }
    }
    Ok(t)
}

/// Deformable aggregation across levels and taps (offsets and mask
/// logits predicted from the median level, shared by all levels):
/// fused = (1/L) Σ_l Σ_j w[l,j] · sample(F_l, p_j + Δp_j) · σ(mask_j).
/// Every output level receives the fused map.
pub fn spatial_attention_cx<C: Context>(
    cx: &mut C,
    levels: &[C::T],
    p: &DyHeadNodes<C::T>,
) -> Result<Vec<C::T>> {
    let l_count = levels.len();
    let shape = cx.shape(&levels[0]);
    let (h, w) = (shape[2], shape[3]);
    if h < 3 || w < 3 {
        return Err(Error::dim(
            "height",
            format!("spatial attention needs a grid of at least 3x3, got {}x{}", h, w),
        ));
    }
    if p.spatial_weights.len() != l_count * SPATIAL_TAPS {
        return Err(Error::dim(
            "shape",
            format!(
                "spatial weights hold {} entries, need L*K = {}",
                p.spatial_weights.len(),
                l_count * SPATIAL_TAPS
            ),
        ));
    }
    let mid = l_count / 2;
    let off = apply_conv2d(cx, &levels[mid], &p.offset_conv)?; // (N, 27, H, W)

    let mut fused: Option<C::T> = None;
    for j in 0..SPATIAL_TAPS {
        let delta = cx.slice_channels(&off, 2 * j, 2)?;
        let base = cx.constant(tap_base(j, h, w)?);
        let coords = cx.add(&delta, &base)?;
        let logit = cx.slice_channels(&off, 2 * SPATIAL_TAPS + j, 1)?;
        let mask = cx.activation(&logit, Activation::Sigmoid)?;
        for (l, level) in levels.iter().enumerate() {
            let wlj = p.spatial_weights[l * SPATIAL_TAPS + j] as f64 / l_count as f64;
            if wlj == 0.0 {
                continue;
            }
            let sampled = cx.sample_px(level, &coords)?;
            let masked = cx.mul(&sampled, &mask)?;
            let term = cx.affine(&masked, wlj, 0.0)?;
            fused = Some(match fused {
                Some(acc) => cx.add(&acc, &term)?,
                None => term,
            });
        }
    }
    let fused = match fused {
        Some(f) => f,
        // all weights zero: the aggregation is identically zero
        None => {
            let z = Tensor::zeros(&cx.shape(&levels[0]))?;
            cx.constant(z)
        }
    };
    Ok(vec![fused; l_count])
}

/// Dynamic-relu task attention: pooled L×S descriptor through a two-layer
/// MLP yields per-channel (α¹, α², β¹, β²); α is squashed to [-1, 1] and
/// β damped by 0.1; output = max(α¹F + β¹, α²F + β²).
pub fn task_attention_cx<C: Context>(
    cx: &mut C,
    levels: &[C::T],
    p: &DyHeadNodes<C::T>,
) -> Result<Vec<C::T>> {
    let l_count = levels.len();
    let c = cx.shape(&levels[0])[1];

    let mut desc: Option<C::T> = None;
    for level in levels {
        let m = cx.reduce_mean(level, &[2, 3])?; // (N, C, 1, 1)
        desc = Some(match desc {
            Some(acc) => cx.add(&acc, &m)?,
            None => m,
        });
    }
    let desc = cx.affine(&desc.expect("levels nonempty"), 1.0 / l_count as f64, 0.0)?;

    let z1 = apply_conv2d(cx, &desc, &p.task_fc1)?;
    let r1 = cx.activation(&z1, Activation::Relu)?;
    let z2 = apply_conv2d(cx, &r1, &p.task_fc2)?; // (N, 4C, 1, 1)

    let a1_raw = cx.slice_channels(&z2, 0, c)?;
    let a2_raw = cx.slice_channels(&z2, c, c)?;
    let b1_raw = cx.slice_channels(&z2, 2 * c, c)?;
    let b2_raw = cx.slice_channels(&z2, 3 * c, c)?;
    let hs1 = cx.activation(&a1_raw, Activation::HardSigmoid)?;
    let hs2 = cx.activation(&a2_raw, Activation::HardSigmoid)?;
    let a1 = cx.affine(&hs1, 2.0, -1.0)?;
    let a2 = cx.affine(&hs2, 2.0, -1.0)?;
    let b1 = cx.affine(&b1_raw, 0.1, 0.0)?;
    let b2 = cx.affine(&b2_raw, 0.1, 0.0)?;

    let mut out = Vec::with_capacity(l_count);
    for level in levels {
        let u1m = cx.mul(level, &a1)?;
        let u1 = cx.add(&u1m, &b1)?;
        let u2m = cx.mul(level, &a2)?;
        let u2 = cx.add(&u2m, &b2)?;
        out.push(cx.maximum(&u1, &u2)?);
    }
    Ok(out)
}

/// One block is task(spatial(scale(F))); `block_count` repeats share the
/// same parameters, and zero repeats is the identity.
pub fn dyhead_block_cx<C: Context>(
    cx: &mut C,
    levels: &[C::T],
    p: &DyHeadNodes<C::T>,
) -> Result<Vec<C::T>> {
    let mut cur = levels.to_vec();
    for _ in 0..p.block_count {
        cur = scale_attention_cx(cx, &cur, p)?;
        cur = spatial_attention_cx(cx, &cur, p)?;
        cur = task_attention_cx(cx, &cur, p)?;
    }
    Ok(cur)
}

// ---------------------------------------------------------------------------
// Eager wrappers
// ---------------------------------------------------------------------------

fn run_eager(
    f: &LevelStack,
    p: &DyHeadParams,
    op: impl FnOnce(&mut Eager, &[Tensor], &DyHeadNodes<Tensor>) -> Result<Vec<Tensor>>,
) -> Result<LevelStack> {
    p.validate(f.len(), f.channels())?;
    let mut cx = Eager;
    let nodes = DyHeadNodes::lift(&mut cx, p);
    let levels = op(&mut cx, &f.levels, &nodes)?;
    LevelStack::new(levels, f.strides.clone())
}

pub fn scale_attention(f: &LevelStack, p: &DyHeadParams) -> Result<LevelStack> {
    run_eager(f, p, scale_attention_cx)
}

pub fn spatial_attention(f: &LevelStack, p: &DyHeadParams) -> Result<LevelStack> {
    run_eager(f, p, spatial_attention_cx)
}

pub fn task_attention(f: &LevelStack, p: &DyHeadParams) -> Result<LevelStack> {
    run_eager(f, p, task_attention_cx)
}

pub fn dyhead_block(f: &LevelStack, p: &DyHeadParams) -> Result<LevelStack> {
    run_eager(f, p, dyhead_block_cx)
}
