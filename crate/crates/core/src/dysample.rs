//! Point-sampling dynamic upsampler.
//!
//! A 1×1 offset generator predicts per-location sampling offsets, the
//! offsets are damped by a static scope factor, added to a normalized
//! target coordinate grid, clamped to [-1, 1], rearranged to the target
//! resolution by pixel shuffle, and resolved by bilinear grid sampling.
//! With a zeroed offset generator the pipeline reduces exactly to plain
//! bilinear resizing, which is the main correctness anchor.
//!
//! Offset channel layout (fixed so the pixel shuffle lands each
//! sub-position correctly): channel = group * 2s² + subcell * 2 + axis,
//! with subcell = qi * s + qj (row-major inside the s×s block) and
//! axis 0 = x, axis 1 = y.

use crate::context::{apply_conv2d, ConvNodes, Context, Eager};
use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Tensor};

pub const DEFAULT_SCOPE_FACTOR: f32 = 0.25;

#[derive(Debug, Clone)]
pub struct DySampleParams {
    /// 1×1 convolution C -> 2·g·s² producing raw offsets.
    pub offset_gen: ConvParams,
    /// Upsampling ratio s.
    pub scale: usize,
    /// Channel groups sharing one offset set each.
    pub groups: usize,
    /// Static multiplier bounding the offset range.
    pub scope_factor: f32,
}

impl DySampleParams {
    pub fn new(offset_gen: ConvParams, scale: usize, groups: usize) -> Result<Self> {
        if scale < 1 {
            return Err(Error::param("scale", "must be >= 1"));
        }
        if groups < 1 {
            return Err(Error::param("groups", "must be >= 1"));
        }
        let want = 2 * groups * scale * scale;
        if offset_gen.out_channels() != want {
            return Err(Error::dim(
                "channel",
                format!(
                    "offset generator produces {} channels, need 2*g*s^2 = {}",
                    offset_gen.out_channels(),
                    want
                ),
            ));
        }
        if !offset_gen.in_channels().is_multiple_of(groups) {
            return Err(Error::dim(
                "channel",
                format!(
                    "input channels {} not divisible by groups {}",
                    offset_gen.in_channels(),
                    groups
                ),
            ));
        }
        Ok(DySampleParams {
            offset_gen,
            scale,
            groups,
            scope_factor: DEFAULT_SCOPE_FACTOR,
        })
    }

    /// Zero offset generator (with bias): upsampling degenerates to plain
    /// bilinear resize.
    pub fn zeroed(channels: usize, scale: usize, groups: usize) -> Result<Self> {
        let oc = 2 * groups * scale * scale;
        let w = Tensor::zeros(&[oc, channels, 1, 1])?;
        let p = ConvParams::new(w, Some(vec![0.0; oc]))?;
        DySampleParams::new(p, scale, groups)
    }

    pub fn in_channels(&self) -> usize {
        self.offset_gen.in_channels()
    }
}

/// Trainable-parameter count of the upsampler: C·2gs², plus 2gs² when the
/// offset generator carries a bias.
pub fn dysample_param_count(p: &DySampleParams) -> usize {
    p.offset_gen.param_count()
}

/// Normalized target coordinate grid (2, sH, sW) in the source map's
/// [-1, 1] align-corners space; channel 0 = x, channel 1 = y. Sampling a
/// map with this grid and zero offsets reproduces bilinear s× resize.
pub fn make_init_grid(h: usize, w: usize, s: usize) -> Result<Tensor> {
    if h < 1 || w < 1 || s < 1 {
        return Err(Error::param("size", "H, W, s must all be >= 1"));
    }
    let (sh, sw) = (s * h, s * w);
    let mut grid = Tensor::zeros(&[2, sh, sw])?;
    for yo in 0..sh {
        let gy = norm_target(yo, h, sh);
        for xo in 0..sw {
            let gx = norm_target(xo, w, sw);
            grid.data_mut()[yo * sw + xo] = gx as f32;
            grid.data_mut()[sh * sw + yo * sw + xo] = gy as f32;
        }
    }
    Ok(grid)
}

/// Normalized coordinate of target pixel `i` of `out` on a source axis of
/// `extent` pixels. A degenerate source axis maps everything to its
/// single pixel centre.
#[inline]
fn norm_target(i: usize, extent: usize, out: usize) -> f64 {
    if extent == 1 || out == 1 {
        0.0
    } else {
        2.0 * i as f64 / (out as f64 - 1.0) - 1.0
    }
}

/// Sub-cell component of the target grid: depends only on the position
/// inside the s×s block, so it broadcasts over all coarse cells. This is
/// the "initial position" added to the scoped offsets.
fn init_positions(h: usize, w: usize, s: usize, groups: usize) -> Result<Tensor> {
    let (sh, sw) = (s * h, s * w);
    let c = 2 * groups * s * s;
    let mut t = Tensor::zeros(&[1, c, 1, 1])?;
    for g in 0..groups {
        for qi in 0..s {
            for qj in 0..s {
                let q = qi * s + qj;
                let sub_x = if w == 1 { 0.0 } else { 2.0 * qj as f64 / (sw as f64 - 1.0) };
                let sub_y = if h == 1 { 0.0 } else { 2.0 * qi as f64 / (sh as f64 - 1.0) };
                t.data_mut()[g * 2 * s * s + q * 2] = sub_x as f32;
                t.data_mut()[g * 2 * s * s + q * 2 + 1] = sub_y as f32;
            }
        }
    }
    Ok(t)
}

/// Coarse-cell component of the target grid, laid out per offset channel.
/// init_positions + coarse_grid folds exactly into `make_init_grid`.
fn coarse_grid(h: usize, w: usize, s: usize, groups: usize) -> Result<Tensor> {
    let (sh, sw) = (s * h, s * w);
    let c = 2 * groups * s * s;
    let mut t = Tensor::zeros(&[1, c, h, w])?;
    for g in 0..groups {
        for q in 0..s * s {
            for i in 0..h {
                for j in 0..w {
                    let cx = if w == 1 {
                        0.0
                    } else {
                        2.0 * (s * j) as f64 / (sw as f64 - 1.0) - 1.0
                    };
                    let cy = if h == 1 {
                        0.0
                    } else {
                        2.0 * (s * i) as f64 / (sh as f64 - 1.0) - 1.0
                    };
                    let base = (g * 2 * s * s + q * 2) * h * w + i * w + j;
                    t.data_mut()[base] = cx as f32;
                    t.data_mut()[base + h * w] = cy as f32;
                }
            }
        }
    }
    Ok(t)
}

/// Lifted parameters for context evaluation.
#[derive(Clone)]
pub struct DySampleNodes<T> {
    pub offset_gen: ConvNodes<T>,
    pub scale: usize,
    pub groups: usize,
    pub scope_factor: f32,
}

impl<T> DySampleNodes<T> {
    pub fn lift<C: Context<T = T>>(cx: &mut C, p: &DySampleParams) -> Self {
        DySampleNodes {
            offset_gen: ConvNodes::lift(cx, &p.offset_gen),
            scale: p.scale,
            groups: p.groups,
            scope_factor: p.scope_factor,
        }
    }
}

/// Clamped sampling coordinates before the pixel shuffle, shape
/// (N, 2·g·s², H, W). Every value lies in [-1, 1].
pub fn dysample_coords_cx<C: Context>(
    cx: &mut C,
    x: &C::T,
    p: &DySampleNodes<C::T>,
) -> Result<C::T> {
    let shape = cx.shape(x);
    let (h, w) = (shape[2], shape[3]);
    let raw = apply_conv2d(cx, x, &p.offset_gen)?;
    cx.check_finite(&raw, "offsets")?;
    let scoped = cx.affine(&raw, p.scope_factor as f64, 0.0)?;
    let init = cx.constant(init_positions(h, w, p.scale, p.groups)?);
    let with_init = cx.add(&scoped, &init)?;
    let coarse = cx.constant(coarse_grid(h, w, p.scale, p.groups)?);
    let summed = cx.add(&with_init, &coarse)?;
    cx.clamp(&summed, -1.0, 1.0)
}

/// Full upsampling pipeline over any context.
pub fn dysample_forward<C: Context>(
    cx: &mut C,
    x: &C::T,
    p: &DySampleNodes<C::T>,
) -> Result<C::T> {
    let shape = cx.shape(x);
    if shape.len() != 4 {
        return Err(Error::Rank {
            expected: 4,
            got: shape.len(),
        });
    }
    let c = shape[1];
    let in_c = {
        let ws = cx.shape(&p.offset_gen.w);
        ws[1] * p.offset_gen.groups
    };
    if c != in_c {
        return Err(Error::dim(
            "channel",
            format!("input has {} channels, offset generator expects {}", c, in_c),
        ));
    }
    if c % p.groups != 0 {
        return Err(Error::dim(
            "channel",
            format!("channels {} not divisible by groups {}", c, p.groups),
        ));
    }
    let s = p.scale;
    let clamped = dysample_coords_cx(cx, x, p)?;

    let per_group = c / p.groups;
    let mut outs = Vec::with_capacity(p.groups);
    for g in 0..p.groups {
        // reorder this group's channels from (q, axis) to (axis, q) so the
        // shuffle emits an (N, 2, sH, sW) coordinate map
        let mut idx = Vec::with_capacity(2 * s * s);
        for a in 0..2 {
            for q in 0..s * s {
                idx.push(g * 2 * s * s + q * 2 + a);
            }
        }
        let planes = cx.gather_channels(&clamped, &idx)?;
        let coords = cx.depth_to_space(&planes, s)?;
        let xs = cx.slice_channels(x, g * per_group, per_group)?;
        outs.push(cx.sample_grid(&xs, &coords)?);
    }
    if outs.len() == 1 {
        Ok(outs.pop().unwrap())
    } else {
        cx.concat_channels(&outs)
    }
}

/// Upsample (N, C, H, W) to (N, C, sH, sW).
pub fn dysample_upsample(x: &Tensor, p: &DySampleParams) -> Result<Tensor> {
    let mut cx = Eager;
    let nodes = DySampleNodes::lift(&mut cx, p);
    dysample_forward(&mut cx, x, &nodes)
}

/// Eager view of the clamped sampling coordinates (for contract checks).
pub fn dysample_coords(x: &Tensor, p: &DySampleParams) -> Result<Tensor> {
    let mut cx = Eager;
    let nodes = DySampleNodes::lift(&mut cx, p);
    dysample_coords_cx(&mut cx, x, &nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_grid_degenerate_1x1() {
        for s in [1, 2, 4] {
            let g = make_init_grid(1, 1, s).unwrap();
            assert_eq!(g.shape(), &[2, s, s]);
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn init_grid_corners_at_scale_1() {
        let g = make_init_grid(2, 2, 1).unwrap();
        assert_eq!(g.shape(), &[2, 2, 2]);
        // x channel rows: [-1, 1] twice; y channel: [-1,-1],[1,1]
        assert_eq!(&g.data()[0..4], &[-1.0, 1.0, -1.0, 1.0]);
        assert_eq!(&g.data()[4..8], &[-1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn folded_components_reassemble_init_grid() {
        // init_positions + coarse_grid must equal make_init_grid after the
        // (q, axis) -> (axis, q) gather and pixel shuffle
        let (h, w, s) = (3, 5, 2);
        let init = init_positions(h, w, s, 1).unwrap();
        let coarse = coarse_grid(h, w, s, 1).unwrap();
        let full = make_init_grid(h, w, s).unwrap();
        let mut folded = Tensor::zeros(&[1, 2 * s * s, h, w]).unwrap();
        for ch in 0..2 * s * s {
            for i in 0..h {
                for j in 0..w {
                    folded.data_mut()[ch * h * w + i * w + j] =
                        init.data()[ch] + coarse.data()[ch * h * w + i * w + j];
                }
            }
        }
        let mut idx = Vec::new();
        for a in 0..2 {
            for q in 0..s * s {
                idx.push(q * 2 + a);
            }
        }
        let planes = crate::ops::gather_channels_g(&folded, &idx).unwrap();
        let shuffled = crate::ops::depth_to_space_g(&planes, s).unwrap();
        let full = full.reshape(&[1, 2, s * h, s * w]).unwrap();
        assert!(shuffled.max_abs_diff(&full).unwrap() < 1e-7);
    }

    #[test]
    fn output_shape_matches_scale() {
        let x = Tensor::from_fn(&[1, 8, 5, 6], |i| (i as f64 * 0.13).sin()).unwrap();
        let p = DySampleParams::zeroed(8, 2, 4).unwrap();
        let y = dysample_upsample(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 8, 10, 12]);
    }

    #[test]
    fn constant_input_stays_constant() {
        // convexity of bilinear weights: any offsets leave a constant field constant
        let x = Tensor::full(&[1, 4, 4, 4], 2.5).unwrap();
        let w = Tensor::from_fn(&[2 * 4, 4, 1, 1], |i| ((i * 37 % 11) as f64 - 5.0) * 0.3)
            .unwrap();
        let p =
            DySampleParams::new(ConvParams::new(w, None).unwrap(), 2, 1).unwrap();
        let y = dysample_upsample(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| (v - 2.5).abs() < 1e-5));
    }

    #[test]
    fn param_count_examples() {
        let p = DySampleParams::zeroed(64, 2, 4).unwrap();
        assert_eq!(dysample_param_count(&p), 64 * 32 + 32); // 2080
        let w = Tensor::zeros(&[2, 1, 1, 1]).unwrap();
        let p1 = DySampleParams::new(ConvParams::new(w, None).unwrap(), 1, 1).unwrap();
        assert_eq!(dysample_param_count(&p1), 2);
        // doubling s quadruples the count (no bias)
        let w2 = Tensor::zeros(&[2 * 4, 3, 1, 1]).unwrap();
        let w4 = Tensor::zeros(&[2 * 16, 3, 1, 1]).unwrap();
        let c2 = dysample_param_count(
            &DySampleParams::new(ConvParams::new(w2, None).unwrap(), 2, 1).unwrap(),
        );
        let c4 = dysample_param_count(
            &DySampleParams::new(ConvParams::new(w4, None).unwrap(), 4, 1).unwrap(),
        );
        assert_eq!(c4, 4 * c2);
    }

    #[test]
    fn offset_channel_count_validated() {
        let w = Tensor::zeros(&[7, 4, 1, 1]).unwrap();
        assert!(DySampleParams::new(ConvParams::new(w, None).unwrap(), 2, 1).is_err());
    }

    #[test]
    fn non_finite_offsets_rejected() {
        let p = DySampleParams::zeroed(2, 2, 1).unwrap();
        let clean = Tensor::full(&[1, 2, 3, 3], 1.0).unwrap();
        assert!(dysample_upsample(&clean, &p).is_ok());
        let mut poisoned = clean.clone();
        poisoned.data_mut()[0] = f32::NAN;
        assert!(matches!(
            dysample_upsample(&poisoned, &p),
            Err(crate::error::Error::Contract(_))
        ));
    }
}
