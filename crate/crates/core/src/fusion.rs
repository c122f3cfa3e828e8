//! Neck fusion blocks: triple feature encoding across adjacent pyramid
//! levels, Gaussian-smoothed scale-sequence fusion with dynamic
//! upsampling and a 3-D convolution, and the channel/position attention
//! pair that joins the two paths.

use crate::context::{apply_conv2d, apply_conv3d, ConvNodes, Context, Eager};
use crate::dysample::{dysample_forward, DySampleNodes, DySampleParams};
use crate::error::{Error, Result};
use crate::ops::{Activation, PoolMode};
use crate::tensor::{ConvParams, Tensor};

// ---------------------------------------------------------------------------
// Gaussian smoothing
// ---------------------------------------------------------------------------

/// Smoothing schedule for the scale sequence: one sigma per pyramid
/// level, deeper levels blurrier.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub kernel_size: usize,
    pub sigmas: Vec<f32>,
}

impl GaussianSpec {
    pub fn new(kernel_size: usize, sigmas: Vec<f32>) -> Result<Self> {
        if kernel_size.is_multiple_of(2) {
            return Err(Error::param("kernel_size", "must be odd"));
        }
        if sigmas.is_empty() {
            return Err(Error::param("sigmas", "need at least one level"));
        }
        if sigmas.iter().any(|&s| s <= 0.0) {
            return Err(Error::param("sigmas", "must be > 0"));
        }
        if sigmas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("sigmas", "must be strictly increasing with level depth"));
        }
        Ok(GaussianSpec {
            kernel_size,
            sigmas,
        })
    }
}

impl Default for GaussianSpec {
    fn default() -> Self {
        GaussianSpec {
            kernel_size: 5,
            sigmas: vec![0.5, 1.0, 2.0],
        }
    }
}

/// Discrete 2-D Gaussian, normalized to sum 1.
pub fn gaussian_kernel(sigma: f64, ksize: usize) -> Result<Tensor> {
    if sigma <= 0.0 {
        return Err(Error::param("sigma", "must be > 0"));
    }
    if ksize.is_multiple_of(2) {
        return Err(Error::param("ksize", "must be odd"));
    }
    let c = (ksize / 2) as f64;
    let mut k = Tensor::zeros(&[ksize, ksize])?;
    let mut sum = 0.0f64;
    for i in 0..ksize {
        for j in 0..ksize {
            let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
            let v = (-d2 / (2.0 * sigma * sigma)).exp();
            k.data_mut()[i * ksize + j] = v as f32;
            sum += v;
        }
    }
    for v in k.data_mut() {
        *v = (*v as f64 / sum) as f32;
    }
    Ok(k)
}

fn depthwise_gaussian(channels: usize, sigma: f64, ksize: usize) -> Result<Tensor> {
    let k = gaussian_kernel(sigma, ksize)?;
    let mut w = Tensor::zeros(&[channels, 1, ksize, ksize])?;
    for c in 0..channels {
        w.data_mut()[c * ksize * ksize..(c + 1) * ksize * ksize].copy_from_slice(k.data());
    }
    Ok(w)
}

pub fn smooth_cx<C: Context>(
    cx: &mut C,
    x: &C::T,
    g: &GaussianSpec,
    level: usize,
) -> Result<C::T> {
    let sigma = *g
        .sigmas
        .get(level)
        .ok_or_else(|| Error::param("level", format!("{} out of {} levels", level, g.sigmas.len())))?;
    let channels = cx.shape(x)[1];
    let w = cx.constant(depthwise_gaussian(channels, sigma as f64, g.kernel_size)?);
    cx.conv2d(x, &w, None, 1, g.kernel_size / 2, channels)
}

/// Per-channel Gaussian blur with zero padding; shape preserved.
pub fn smooth(x: &Tensor, g: &GaussianSpec, level: usize) -> Result<Tensor> {
    smooth_cx(&mut Eager, x, g, level)
}

// ---------------------------------------------------------------------------
// Triple feature encoding
// ---------------------------------------------------------------------------

/// Channel-alignment convolutions for the three branches; all map onto
/// the same output channel count.
#[derive(Debug, Clone)]
pub struct TfeParams {
    pub align_large: ConvParams,
    pub align_medium: ConvParams,
    pub align_small: ConvParams,
}

impl TfeParams {
    pub fn new(
        align_large: ConvParams,
        align_medium: ConvParams,
        align_small: ConvParams,
    ) -> Result<Self> {
        let oc = align_medium.out_channels();
        if align_large.out_channels() != oc || align_small.out_channels() != oc {
            return Err(Error::dim(
                "channel",
                format!(
                    "branch alignment must agree: large {}, medium {}, small {}",
                    align_large.out_channels(),
                    oc,
                    align_small.out_channels()
                ),
            ));
        }
        Ok(TfeParams {
            align_large,
            align_medium,
            align_small,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.align_medium.out_channels()
    }
}

#[derive(Clone)]
pub struct TfeNodes<T> {
    pub align_large: ConvNodes<T>,
    pub align_medium: ConvNodes<T>,
    pub align_small: ConvNodes<T>,
}

impl<T> TfeNodes<T> {
    pub fn lift<C: Context<T = T>>(cx: &mut C, p: &TfeParams) -> Self {
        TfeNodes {
            align_large: ConvNodes::lift(cx, &p.align_large),
            align_medium: ConvNodes::lift(cx, &p.align_medium),
            align_small: ConvNodes::lift(cx, &p.align_small),
        }
    }
}

pub fn tfe_fuse_cx<C: Context>(
    cx: &mut C,
    large: &C::T,
    medium: &C::T,
    small: &C::T,
    p: &TfeNodes<C::T>,
) -> Result<C::T> {
    let (lh, lw) = spatial(cx, large);
    let (mh, mw) = spatial(cx, medium);
    let (sh, sw) = spatial(cx, small);
    if lh != 2 * mh || lw != 2 * mw {
        return Err(Error::dim(
            "height",
            format!("large {}x{} must be 2x medium {}x{}", lh, lw, mh, mw),
        ));
    }
    if sh * 2 != mh || sw * 2 != mw {
        return Err(Error::dim(
            "height",
            format!("small {}x{} must be half of medium {}x{}", sh, sw, mh, mw),
        ));
    }

    // large: align, then the max+avg downsampling pair averaged together
    let l = apply_conv2d(cx, large, &p.align_large)?;
    let lmax = cx.pool2d(&l, PoolMode::Max, 2, 2)?;
    let lavg = cx.pool2d(&l, PoolMode::Avg, 2, 2)?;
    let lsum = cx.add(&lmax, &lavg)?;
    let ldown = cx.affine(&lsum, 0.5, 0.0)?;

    let m = apply_conv2d(cx, medium, &p.align_medium)?;

    let s = apply_conv2d(cx, small, &p.align_small)?;
    let sup = cx.resize_nearest_to(&s, mh, mw)?;

    cx.concat_channels(&[ldown, m, sup])
}

/// Fuse three adjacent pyramid levels at the middle level's grid:
/// aligned channels, pooled large branch, nearest-upsampled small branch,
/// channel concatenation (3× aligned channels out).
pub fn tfe_fuse(large: &Tensor, medium: &Tensor, small: &Tensor, p: &TfeParams) -> Result<Tensor> {
    let mut cx = Eager;
    let nodes = TfeNodes::lift(&mut cx, p);
    tfe_fuse_cx(&mut cx, large, medium, small, &nodes)
}

fn spatial<C: Context>(cx: &C, t: &C::T) -> (usize, usize) {
    let s = cx.shape(t);
    (s[s.len() - 2], s[s.len() - 1])
}

// ---------------------------------------------------------------------------
// Dynamic scale-sequence fusion
// ---------------------------------------------------------------------------

/// Run-time per-channel standardization over (D, H, W) with a learned
/// affine, applied after the 3-D convolution.
#[derive(Debug, Clone)]
pub struct Norm3dParams {
    pub scale: Vec<f32>,
    pub shift: Vec<f32>,
    pub eps: f32,
}

impl Norm3dParams {
    pub fn identity_affine(channels: usize) -> Self {
        Norm3dParams {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            eps: 1e-5,
        }
    }
}

/// Which upsampler feeds the scale stack. `Nearest` is the pre-dynamic
/// baseline kept for the ablation toggle and the benchmark comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsffUpsampling {
    Dynamic,
    Nearest,
}

#[derive(Debug, Clone)]
pub struct SsffParams {
    pub dysample_p4: DySampleParams,
    pub dysample_p5: DySampleParams,
    pub conv3d_p: ConvParams,
    pub norm: Option<Norm3dParams>,
    pub act: Option<Activation>,
    pub gaussian: GaussianSpec,
}

impl SsffParams {
    pub fn validate(&self) -> Result<()> {
        if self.dysample_p4.scale != 2 {
            return Err(Error::param("dysample_p4", "scale must be 2"));
        }
        if self.dysample_p5.scale != 4 {
            return Err(Error::param("dysample_p5", "scale must be 4"));
        }
        let w = &self.conv3d_p.weight;
        if w.rank() != 5 {
            return Err(Error::Rank {
                expected: 5,
                got: w.rank(),
            });
        }
        if w.dim(2) != 3 {
            return Err(Error::dim(
                "depth",
                format!("3-D kernel depth {} must cover the 3 stacked levels", w.dim(2)),
            ));
        }
        if self.gaussian.sigmas.len() < 3 {
            return Err(Error::param("gaussian", "needs sigmas for 3 levels"));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct SsffNodes<T> {
    pub dysample_p4: DySampleNodes<T>,
    pub dysample_p5: DySampleNodes<T>,
    pub conv3d_p: ConvNodes<T>,
    pub norm: Option<(T, T, f32)>,
    pub act: Option<Activation>,
    pub gaussian: GaussianSpec,
    pub mode: SsffUpsampling,
}

impl<T> SsffNodes<T> {
    pub fn lift<C: Context<T = T>>(cx: &mut C, p: &SsffParams, mode: SsffUpsampling) -> Self {
        let norm = p.norm.as_ref().map(|n| {
            let c = n.scale.len();
            let scale = Tensor::from_vec(&[1, c, 1, 1, 1], n.scale.clone()).expect("norm scale");
            let shift = Tensor::from_vec(&[1, c, 1, 1, 1], n.shift.clone()).expect("norm shift");
            (cx.param(&scale), cx.param(&shift), n.eps)
        });
        SsffNodes {
            dysample_p4: DySampleNodes::lift(cx, &p.dysample_p4),
            dysample_p5: DySampleNodes::lift(cx, &p.dysample_p5),
            conv3d_p: ConvNodes::lift(cx, &p.conv3d_p),
            norm,
            act: p.act,
            gaussian: p.gaussian.clone(),
            mode,
        }
    }
}

pub fn ssff_forward_cx<C: Context>(
    cx: &mut C,
    p3: &C::T,
    p4: &C::T,
    p5: &C::T,
    p: &SsffNodes<C::T>,
) -> Result<C::T> {
    let (h3, w3) = spatial(cx, p3);
    let (h4, w4) = spatial(cx, p4);
    let (h5, w5) = spatial(cx, p5);
    if h4 * 2 != h3 || w4 * 2 != w3 || h5 * 4 != h3 || w5 * 4 != w3 {
        return Err(Error::dim(
            "height",
            format!(
                "pyramid ratios must be 1 : 1/2 : 1/4, got {}x{}, {}x{}, {}x{}",
                h3, w3, h4, w4, h5, w5
            ),
        ));
    }
    let c3 = cx.shape(p3)[1];
    if cx.shape(p4)[1] != c3 || cx.shape(p5)[1] != c3 {
        return Err(Error::dim("channel", "levels must share a channel count"));
    }

    let sm3 = smooth_cx(cx, p3, &p.gaussian, 0)?;
    let sm4 = smooth_cx(cx, p4, &p.gaussian, 1)?;
    let sm5 = smooth_cx(cx, p5, &p.gaussian, 2)?;

    let (up4, up5) = match p.mode {
        SsffUpsampling::Dynamic => (
            dysample_forward(cx, &sm4, &p.dysample_p4)?,
            dysample_forward(cx, &sm5, &p.dysample_p5)?,
        ),
        SsffUpsampling::Nearest => (
            cx.resize_nearest_to(&sm4, h3, w3)?,
            cx.resize_nearest_to(&sm5, h3, w3)?,
        ),
    };

    let stacked = cx.stack_depth(&[sm3, up4, up5])?;
    let mut y = apply_conv3d(cx, &stacked, &p.conv3d_p)?;

    if let Some((scale, shift, eps)) = &p.norm {
        let m = cx.reduce_mean(&y, &[2, 3, 4])?;
        let d = cx.sub(&y, &m)?;
        let sq = cx.mul(&d, &d)?;
        let var = cx.reduce_mean(&sq, &[2, 3, 4])?;
        let r = cx.rsqrt(&var, *eps as f64)?;
        let std1 = cx.mul(&d, &r)?;
        let scaled = cx.mul(&std1, scale)?;
        y = cx.add(&scaled, shift)?;
    }
    if let Some(act) = p.act {
        y = cx.activation(&y, act)?;
    }

    let ys = cx.shape(&y);
    cx.reshape(&y, &[ys[0], ys[1], ys[3], ys[4]])
}

/// Scale-sequence fusion with dynamic upsampling: smooth each level,
/// upsample P4 (2×) and P5 (4×) to P3's grid, stack along a depth axis,
/// and fuse with a 3-D convolution (+ optional normalization and
/// activation). Output is (N, C_out, H3, W3).
pub fn dssff_fuse(p3: &Tensor, p4: &Tensor, p5: &Tensor, p: &SsffParams) -> Result<Tensor> {
    ssff_fuse_with(p3, p4, p5, p, SsffUpsampling::Dynamic)
}

pub fn ssff_fuse_with(
    p3: &Tensor,
    p4: &Tensor,
    p5: &Tensor,
    p: &SsffParams,
    mode: SsffUpsampling,
) -> Result<Tensor> {
    p.validate()?;
    let mut cx = Eager;
    let nodes = SsffNodes::lift(&mut cx, p, mode);
    ssff_forward_cx(&mut cx, p3, p4, p5, &nodes)
}

// ---------------------------------------------------------------------------
// Channel / position attention
// ---------------------------------------------------------------------------

/// Local cross-channel interaction coverage: floor(log2(C)/2 + 1/2),
/// bumped to the next odd number, at least 3.
pub fn eca_kernel_size(channels: usize) -> usize {
    let t = (channels.max(1) as f64).log2() / 2.0 + 0.5;
    let mut k = t.floor() as usize;
    if k.is_multiple_of(2) {
        k += 1;
    }
    k.max(3)
}

/// Single shared 1-D filter over the channel axis plus scalar bias; no
/// dimensionality reduction.
#[derive(Debug, Clone)]
pub struct ChannelAttentionParams {
    pub weight: Vec<f32>,
    pub bias: f32,
}

impl ChannelAttentionParams {
    pub fn zeroed(k: usize) -> Result<Self> {
        if k.is_multiple_of(2) || k < 1 {
            return Err(Error::param("k", "kernel length must be odd"));
        }
        Ok(ChannelAttentionParams {
            weight: vec![0.0; k],
            bias: 0.0,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.weight.len()
    }
}

pub fn channel_attention_cx<C: Context>(
    cx: &mut C,
    x: &C::T,
    w: &C::T,
    b: &C::T,
) -> Result<C::T> {
    let d = cx.reduce_mean(x, &[2, 3])?;
    let z = cx.conv1d_channels(&d, w, Some(b))?;
    let wgt = cx.activation(&z, Activation::Sigmoid)?;
    cx.mul(x, &wgt)
}

/// Scale each channel by a sigmoid weight derived from the global
/// average descriptor via a k-tap channel convolution.
pub fn channel_attention(x: &Tensor, p: &ChannelAttentionParams) -> Result<Tensor> {
    let mut cx = Eager;
    let w = cx.param(&Tensor::from_vec(&[p.weight.len()], p.weight.clone())?);
    let b = cx.param(&Tensor::from_vec(&[1], vec![p.bias])?);
    channel_attention_cx(&mut cx, x, &w, &b)
}

/// Channel and position attention joining the TFE and DSSFF paths.
#[derive(Debug, Clone)]
pub struct CpamParams {
    pub channel: ChannelAttentionParams,
    pub pos_h: ConvParams,
    pub pos_w: ConvParams,
    /// 1×1 alignment applied to the DSSFF features when their channel
    /// count differs from the TFE path.
    pub align: Option<ConvParams>,
}

#[derive(Clone)]
pub struct CpamNodes<T> {
    pub ch_w: T,
    pub ch_b: T,
    pub pos_h: ConvNodes<T>,
    pub pos_w: ConvNodes<T>,
    pub align: Option<ConvNodes<T>>,
}

impl<T> CpamNodes<T> {
    pub fn lift<C: Context<T = T>>(cx: &mut C, p: &CpamParams) -> Self {
        let ch_w = cx.param(
            &Tensor::from_vec(&[p.channel.weight.len()], p.channel.weight.clone())
                .expect("channel filter"),
        );
        let ch_b = cx.param(&Tensor::from_vec(&[1], vec![p.channel.bias]).expect("channel bias"));
        CpamNodes {
            ch_w,
            ch_b,
            pos_h: ConvNodes::lift(cx, &p.pos_h),
            pos_w: ConvNodes::lift(cx, &p.pos_w),
            align: p.align.as_ref().map(|a| ConvNodes::lift(cx, a)),
        }
    }
}

pub fn position_attention_cx<C: Context>(
    cx: &mut C,
    x: &C::T,
    pos_h: &ConvNodes<C::T>,
    pos_w: &ConvNodes<C::T>,
) -> Result<C::T> {
    let ph = cx.reduce_mean(x, &[3])?; // (N, C, H, 1)
    let pw = cx.reduce_mean(x, &[2])?; // (N, C, 1, W)
    let zh = apply_conv2d(cx, &ph, pos_h)?;
    let zw = apply_conv2d(cx, &pw, pos_w)?;
    let ah = cx.activation(&zh, Activation::Sigmoid)?;
    let aw = cx.activation(&zw, Activation::Sigmoid)?;
    let xh = cx.mul(x, &ah)?;
    cx.mul(&xh, &aw)
}

/// Coordinate-style position attention: axis-pooled profiles, per-axis
/// 1×1 convolutions, sigmoid gates broadcast back over the map.
pub fn position_attention(x: &Tensor, p: &CpamParams) -> Result<Tensor> {
    let mut cx = Eager;
    let nodes = CpamNodes::lift(&mut cx, p);
    position_attention_cx(&mut cx, x, &nodes.pos_h, &nodes.pos_w)
}

pub fn cpam_forward_cx<C: Context>(
    cx: &mut C,
    tfe_out: &C::T,
    dssff_out: &C::T,
    p: &CpamNodes<C::T>,
) -> Result<C::T> {
    let (th, tw) = spatial(cx, tfe_out);
    let (dh, dw) = spatial(cx, dssff_out);
    if (th, tw) != (dh, dw) {
        return Err(Error::dim(
            "height",
            format!("TFE {}x{} and DSSFF {}x{} grids differ", th, tw, dh, dw),
        ));
    }
    let u = channel_attention_cx(cx, tfe_out, &p.ch_w, &p.ch_b)?;
    let d = match &p.align {
        Some(a) => apply_conv2d(cx, dssff_out, a)?,
        None => dssff_out.clone(),
    };
    if cx.shape(&u)[1] != cx.shape(&d)[1] {
        return Err(Error::dim(
            "channel",
            format!(
                "channel counts differ after alignment: {} vs {}",
                cx.shape(&u)[1],
                cx.shape(&d)[1]
            ),
        ));
    }
    let v = cx.add(&u, &d)?;
    position_attention_cx(cx, &v, &p.pos_h, &p.pos_w)
}

/// u = channel_attention(tfe_out); v = u + aligned(dssff_out);
/// output = position_attention(v).
pub fn cpam_forward(tfe_out: &Tensor, dssff_out: &Tensor, p: &CpamParams) -> Result<Tensor> {
    let mut cx = Eager;
    let nodes = CpamNodes::lift(&mut cx, p);
    cpam_forward_cx(&mut cx, tfe_out, dssff_out, &nodes)
}
