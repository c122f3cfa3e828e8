//! Finite-difference verification suite over every differentiable
//! operator and composite block.
//!
//! Inputs are drawn away from the non-smooth points of each case (relu
//! at 0, hard-sigmoid at ±1, bilinear kinks at integer pixel positions,
//! clamp boundaries, max ties) by construction or rejection, per-case
//! margins of at least 1e-3. Offset generators get a constant bias so
//! sampling positions sit far from the bilinear kinks while the weights
//! stay free.

use crate::autodiff::{gradcheck_n, NodeId, Tape};
use crate::context::{ConvNodes, Context, Taped};
use crate::dyhead::{
    dyhead_block_cx, scale_attention_cx, spatial_attention_cx, task_attention_cx, DyHeadNodes,
};
use crate::dysample::{dysample_forward, DySampleNodes};
use crate::error::{Error, Result};
use crate::fusion::{
    channel_attention_cx, cpam_forward_cx, position_attention_cx, smooth_cx, ssff_forward_cx,
    CpamNodes, GaussianSpec, SsffNodes, SsffUpsampling,
};
use crate::ops::{Activation, BinaryOp, PoolMode};
use crate::tensor::{Tensor, Tensor64};
use crate::weights::Rng64;

/// Pass threshold on the max relative error.
pub const TOLERANCE: f64 = 1e-4;

pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteModule {
    TensorCore,
    DySample,
    ScaleFusion,
    DyHead,
}

impl SuiteModule {
    pub const ALL: [SuiteModule; 4] = [
        SuiteModule::TensorCore,
        SuiteModule::DySample,
        SuiteModule::ScaleFusion,
        SuiteModule::DyHead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SuiteModule::TensorCore => "tensor-core",
            SuiteModule::DySample => "dysample",
            SuiteModule::ScaleFusion => "scale-fusion",
            SuiteModule::DyHead => "dyhead",
        }
    }

    /// "tensor-core" | "dysample" | "scale-fusion" | "dyhead" | "all"
    pub fn parse(s: &str) -> Option<Vec<SuiteModule>> {
        match s {
            "all" => Some(Self::ALL.to_vec()),
            other => Self::ALL
                .iter()
                .find(|m| m.name() == other)
                .map(|m| vec![*m]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseResult {
    pub module: &'static str,
    pub case: &'static str,
    pub max_rel_err: f64,
}

impl CaseResult {
    pub fn passed(&self) -> bool {
        self.max_rel_err < TOLERANCE
    }
}

// ---------------------------------------------------------------------------
// Input builders
// ---------------------------------------------------------------------------

fn uniform(rng: &mut Rng64, shape: &[usize], lo: f64, hi: f64) -> Tensor64 {
    Tensor64::from_fn(shape, |_| lo + (hi - lo) * rng.uniform()).expect("shape")
}

/// Uniform in ±[lo, hi]: magnitudes bounded away from zero, signs mixed.
fn uniform_signed(rng: &mut Rng64, shape: &[usize], lo: f64, hi: f64) -> Tensor64 {
    Tensor64::from_fn(shape, |_| {
        let mag = lo + (hi - lo) * rng.uniform();
        if rng.uniform() < 0.5 {
            -mag
        } else {
            mag
        }
    })
    .expect("shape")
}

fn normal(rng: &mut Rng64, shape: &[usize], std: f64) -> Tensor64 {
    Tensor64::from_fn(shape, |_| rng.normal(std)).expect("shape")
}

/// Normalized coordinates whose pixel-space positions stay at least
/// `margin` pixels away from every integer (bilinear kinks) and inside
/// (-1, 1) by the equivalent margin.
fn grid_coords(rng: &mut Rng64, n: usize, gh: usize, gw: usize, extent: usize) -> Tensor64 {
    let margin = 1e-2;
    let to_px = (extent as f64 - 1.0) / 2.0;
    Tensor64::from_fn(&[n, 2, gh, gw], |_| loop {
        let g = -0.95 + 1.9 * rng.uniform();
        let px = (g + 1.0) * to_px;
        if (px - px.round()).abs() > margin {
            return g;
        }
    })
    .expect("coords")
}

/// Pixel coordinates for zero-padded sampling, fractional parts bounded
/// away from integers and positions inside the map.
fn px_coords(rng: &mut Rng64, n: usize, gh: usize, gw: usize, extent: usize) -> Tensor64 {
    let margin = 5e-2;
    Tensor64::from_fn(&[n, 2, gh, gw], |_| loop {
        let p = 0.2 + (extent as f64 - 1.4) * rng.uniform();
        if (p - p.round()).abs() > margin {
            return p;
        }
    })
    .expect("coords")
}

// ---------------------------------------------------------------------------
// Cases
// ---------------------------------------------------------------------------

struct Case {
    name: &'static str,
    err: f64,
}

fn check(
    out: &mut Vec<Case>,
    name: &'static str,
    inputs: &[Tensor64],
    eps: f64,
    f: impl Fn(&mut Tape, &[NodeId]) -> Result<NodeId>,
) -> Result<()> {
    // a perturbation large enough to break an operator contract is a
    // failed check, not an aborted suite
    let err = gradcheck_n(inputs, f, eps).unwrap_or(f64::INFINITY);
    out.push(Case { name, err });
    Ok(())
}

fn tensor_core_cases(seed: u64, eps: f64) -> Result<Vec<Case>> {
    let mut rng = Rng64::for_tensor(seed, "gradsuite.tensor-core");
    let mut out = Vec::new();

    let x = uniform_signed(&mut rng, &[1, 3, 5, 5], 0.1, 0.9);
    let w = normal(&mut rng, &[4, 3, 3, 3], 0.3);
    let b = normal(&mut rng, &[4], 0.3);
    check(&mut out, "conv2d", &[x, w, b], eps, |t, ids| {
        t.conv2d(ids[0], ids[1], Some(ids[2]), 1, 1, 1)
    })?;

    let x = uniform_signed(&mut rng, &[1, 4, 6, 6], 0.1, 0.9);
    let w = normal(&mut rng, &[6, 2, 3, 3], 0.3);
    check(&mut out, "conv2d_grouped_strided", &[x, w], eps, |t, ids| {
        t.conv2d(ids[0], ids[1], None, 2, 0, 2)
    })?;

    let x = uniform_signed(&mut rng, &[1, 2, 3, 4, 4], 0.1, 0.9);
    let w = normal(&mut rng, &[3, 2, 3, 1, 1], 0.3);
    let b = normal(&mut rng, &[3], 0.3);
    check(&mut out, "conv3d", &[x, w, b], eps, |t, ids| {
        t.conv3d(ids[0], ids[1], Some(ids[2]), 1, 0, 1)
    })?;

    let x = uniform_signed(&mut rng, &[1, 2, 6, 6], 0.1, 0.9);
    check(&mut out, "pool2d_avg", &[x], eps, |t, ids| {
        t.pool2d(ids[0], PoolMode::Avg, 2, 2)
    })?;

    let x = uniform_signed(&mut rng, &[1, 2, 4, 5], 0.1, 0.9);
    check(&mut out, "resize_nearest", &[x], eps, |t, ids| {
        t.resize_nearest_to(ids[0], 8, 10)
    })?;

    let x = uniform_signed(&mut rng, &[1, 3, 6, 6], 0.1, 0.9);
    let coords = grid_coords(&mut rng, 1, 4, 4, 6);
    check(&mut out, "sample_bilinear_grid", &[x, coords], eps, |t, ids| {
        t.sample_grid(ids[0], ids[1])
    })?;

    let x = uniform_signed(&mut rng, &[1, 2, 5, 5], 0.1, 0.9);
    let coords = px_coords(&mut rng, 1, 3, 3, 5);
    check(&mut out, "sample_bilinear_px", &[x, coords], eps, |t, ids| {
        t.sample_px(ids[0], ids[1])
    })?;

    let x = uniform_signed(&mut rng, &[1, 8, 3, 3], 0.1, 0.9);
    check(&mut out, "depth_to_space", &[x], eps, |t, ids| {
        t.depth_to_space(ids[0], 2)
    })?;

    // activations sampled away from their kinks
    let x = uniform_signed(&mut rng, &[2, 3, 4], 0.1, 0.9);
    check(&mut out, "activation_relu", std::slice::from_ref(&x), eps, |t, ids| {
        t.activation(ids[0], Activation::Relu)
    })?;
    check(&mut out, "activation_silu", std::slice::from_ref(&x), eps, |t, ids| {
        t.activation(ids[0], Activation::Silu)
    })?;
    check(&mut out, "activation_sigmoid", std::slice::from_ref(&x), eps, |t, ids| {
        t.activation(ids[0], Activation::Sigmoid)
    })?;
    check(&mut out, "activation_hard_sigmoid", &[x], eps, |t, ids| {
        t.activation(ids[0], Activation::HardSigmoid)
    })?;

    let x = uniform_signed(&mut rng, &[2, 3, 4, 5], 0.1, 0.9);
    check(&mut out, "reduce_mean", &[x], eps, |t, ids| {
        t.reduce_mean(ids[0], &[0, 2])
    })?;

    let x = uniform_signed(&mut rng, &[1, 6, 2, 2], 0.1, 0.9);
    let w = normal(&mut rng, &[3], 0.4);
    let b = normal(&mut rng, &[1], 0.2);
    check(&mut out, "conv1d_channels", &[x, w, b], eps, |t, ids| {
        t.conv1d_channels(ids[0], ids[1], Some(ids[2]))
    })?;

    let a = uniform_signed(&mut rng, &[1, 3, 4, 4], 0.1, 0.9);
    let bb = uniform_signed(&mut rng, &[1, 3, 1, 1], 0.1, 0.9);
    check(&mut out, "mul_broadcast", &[a.clone(), bb.clone()], eps, |t, ids| {
        t.binary(BinaryOp::Mul, ids[0], ids[1])
    })?;
    check(&mut out, "add_broadcast", &[a.clone(), bb], eps, |t, ids| {
        t.binary(BinaryOp::Add, ids[0], ids[1])
    })?;

    // max with a tie margin
    let m1 = uniform_signed(&mut rng, &[2, 3, 3], 0.1, 0.9);
    let m2 = Tensor64::from_fn(&[2, 3, 3], |i| {
        let v = m1.data()[i];
        loop {
            let cand = -0.95 + 1.9 * rng.uniform();
            if (cand - v).abs() > 0.05 {
                return cand;
            }
        }
    })?;
    check(&mut out, "max_elementwise", &[m1, m2], eps, |t, ids| {
        t.binary(BinaryOp::Max, ids[0], ids[1])
    })?;

    let x = uniform(&mut rng, &[1, 4, 1, 1, 1], 0.2, 0.9);
    check(&mut out, "rsqrt", &[x], eps, |t, ids| t.rsqrt(ids[0], 1e-5))?;

    Ok(out)
}

fn dysample_cases(seed: u64, eps: f64) -> Result<Vec<Case>> {
    let mut rng = Rng64::for_tensor(seed, "gradsuite.dysample");
    let mut out = Vec::new();

    // Offsets biased by +0.3 normalized units: clamped coordinates stay
    // clear of the clamp boundary and of integer pixel positions.
    let (c, s, g) = (4usize, 2usize, 2usize);
    let oc = 2 * g * s * s;
    let x = uniform(&mut rng, &[1, c, 4, 4], 0.1, 0.9);
    let w = normal(&mut rng, &[oc, c, 1, 1], 0.02);
    let b = Tensor64::full(&[oc], 0.3)?;
    check(
        &mut out,
        "dysample_upsample",
        &[x, w, b],
        eps,
        move |tape, ids| {
            let mut cx = Taped::new(tape);
            let nodes = DySampleNodes {
                offset_gen: ConvNodes {
                    w: ids[1],
                    b: Some(ids[2]),
                    stride: 1,
                    padding: 0,
                    groups: 1,
                },
                scale: s,
                groups: g,
                scope_factor: 0.25,
            };
            dysample_forward(&mut cx, &ids[0], &nodes)
        },
    )?;

    Ok(out)
}

fn scale_fusion_cases(seed: u64, eps: f64) -> Result<Vec<Case>> {
    let mut rng = Rng64::for_tensor(seed, "gradsuite.scale-fusion");
    let mut out = Vec::new();
    let gaussian = GaussianSpec::default();

    let x = uniform_signed(&mut rng, &[1, 3, 6, 6], 0.1, 0.9);
    let g = gaussian.clone();
    check(&mut out, "smooth", &[x], eps, move |tape, ids| {
        smooth_cx(&mut Taped::new(tape), &ids[0], &g, 1)
    })?;

    // DSSFF with the full normalization + silu tail; offset generators
    // biased off the sampling kinks.
    let c = 3usize;
    let p3 = uniform(&mut rng, &[1, c, 8, 8], 0.1, 0.9);
    let p4 = uniform(&mut rng, &[1, c, 4, 4], 0.1, 0.9);
    let p5 = uniform(&mut rng, &[1, c, 2, 2], 0.1, 0.9);
    let w4 = normal(&mut rng, &[2 * 4, c, 1, 1], 0.02).to_f32();
    let w5 = normal(&mut rng, &[2 * 16, c, 1, 1], 0.02).to_f32();
    let w3d = normal(&mut rng, &[c, c, 3, 1, 1], 0.3).to_f32();
    let norm_scale = uniform(&mut rng, &[1, c, 1, 1, 1], 0.5, 1.5).to_f32();
    let norm_shift = uniform_signed(&mut rng, &[1, c, 1, 1, 1], 0.0, 0.3).to_f32();
    let gaussian2 = gaussian.clone();
    check(
        &mut out,
        "dssff_fuse",
        &[p3, p4, p5],
        eps,
        move |tape, ids| {
            let mut cx = Taped::new(tape);
            let mk_dys = |cx: &mut Taped, w: &Tensor, s: usize| {
                let oc = w.shape()[0];
                let wid = cx.param(w);
                let bid = cx.param(&Tensor::full(&[oc], 0.3).unwrap());
                DySampleNodes {
                    offset_gen: ConvNodes {
                        w: wid,
                        b: Some(bid),
                        stride: 1,
                        padding: 0,
                        groups: 1,
                    },
                    scale: s,
                    groups: 1,
                    scope_factor: 0.25,
                }
            };
            let dys4 = mk_dys(&mut cx, &w4, 2);
            let dys5 = mk_dys(&mut cx, &w5, 4);
            let conv3 = ConvNodes {
                w: cx.param(&w3d),
                b: None,
                stride: 1,
                padding: 0,
                groups: 1,
            };
            let scale_id = cx.param(&norm_scale);
            let shift_id = cx.param(&norm_shift);
            let nodes = SsffNodes {
                dysample_p4: dys4,
                dysample_p5: dys5,
                conv3d_p: conv3,
                norm: Some((scale_id, shift_id, 1e-5)),
                act: Some(Activation::Silu),
                gaussian: gaussian2.clone(),
                mode: SsffUpsampling::Dynamic,
            };
            ssff_forward_cx(&mut cx, &ids[0], &ids[1], &ids[2], &nodes)
        },
    )?;

    let x = uniform_signed(&mut rng, &[1, 6, 3, 3], 0.1, 0.9);
    let w = normal(&mut rng, &[3], 0.4);
    let b = normal(&mut rng, &[1], 0.2);
    check(&mut out, "channel_attention", &[x, w, b], eps, |tape, ids| {
        channel_attention_cx(&mut Taped::new(tape), &ids[0], &ids[1], &ids[2])
    })?;

    let x = uniform_signed(&mut rng, &[1, 3, 4, 5], 0.1, 0.9);
    let wh = normal(&mut rng, &[3, 3, 1, 1], 0.3);
    let ww = normal(&mut rng, &[3, 3, 1, 1], 0.3);
    check(
        &mut out,
        "position_attention",
        &[x, wh, ww],
        eps,
        |tape, ids| {
            let mut cx = Taped::new(tape);
            let mk = |w: NodeId| ConvNodes {
                w,
                b: None,
                stride: 1,
                padding: 0,
                groups: 1,
            };
            position_attention_cx(&mut cx, &ids[0], &mk(ids[1]), &mk(ids[2]))
        },
    )?;

    let tfe = uniform_signed(&mut rng, &[1, 4, 4, 4], 0.1, 0.9);
    let dss = uniform_signed(&mut rng, &[1, 2, 4, 4], 0.1, 0.9);
    let chw = normal(&mut rng, &[3], 0.4).to_f32();
    let chb = normal(&mut rng, &[1], 0.2).to_f32();
    let align = normal(&mut rng, &[4, 2, 1, 1], 0.3).to_f32();
    let ph = normal(&mut rng, &[4, 4, 1, 1], 0.3).to_f32();
    let pw = normal(&mut rng, &[4, 4, 1, 1], 0.3).to_f32();
    check(&mut out, "cpam_forward", &[tfe, dss], eps, move |tape, ids| {
        let mut cx = Taped::new(tape);
        let mk = |cx: &mut Taped, w: &Tensor| ConvNodes {
            w: cx.param(w),
            b: None,
            stride: 1,
            padding: 0,
            groups: 1,
        };
        let nodes = CpamNodes {
            ch_w: cx.param(&chw),
            ch_b: cx.param(&chb),
            pos_h: mk(&mut cx, &ph),
            pos_w: mk(&mut cx, &pw),
            align: Some(mk(&mut cx, &align)),
        };
        cpam_forward_cx(&mut cx, &ids[0], &ids[1], &nodes)
    })?;

    Ok(out)
}

/// DyHead parameters with every pre-activation biased away from the
/// non-smooth points: scale fc sits at +0.3 before relu/hard-sigmoid,
/// offsets at +0.3 px, task alphas split by distinct biases so the two
/// affine branches never tie on positive inputs.
fn dyhead_nodes_for_check(
    cx: &mut Taped,
    rng: &mut Rng64,
    levels: usize,
    c: usize,
    offset_w: Option<(NodeId, NodeId)>,
) -> DyHeadNodes<NodeId> {
    let scale_fc = ConvNodes {
        w: cx.param(&Tensor::from_vec(&[1, 1, 1, 1], vec![0.5]).unwrap()),
        b: Some(cx.param(&Tensor::from_vec(&[1], vec![0.3]).unwrap())),
        stride: 1,
        padding: 0,
        groups: 1,
    };
    let offset_conv = match offset_w {
        Some((w, b)) => ConvNodes {
            w,
            b: Some(b),
            stride: 1,
            padding: 1,
            groups: 1,
        },
        None => {
            let w = normal(rng, &[27, c, 3, 3], 0.01).to_f32();
            let mut bias = vec![0.3f32; 27];
            for m in bias.iter_mut().skip(18) {
                *m = 0.4;
            }
            ConvNodes {
                w: cx.param(&w),
                b: Some(cx.param(&Tensor::from_vec(&[27], bias).unwrap())),
                stride: 1,
                padding: 1,
                groups: 1,
            }
        }
    };
    let hidden = (c / 4).max(4);
    let t1 = ConvNodes {
        w: cx.param(&normal(rng, &[hidden, c, 1, 1], 0.01).to_f32()),
        b: Some(cx.param(&Tensor::from_vec(&[hidden], vec![0.2; hidden]).unwrap())),
        stride: 1,
        padding: 0,
        groups: 1,
    };
    let mut fc2_bias = vec![0.0f32; 4 * c];
    for i in 0..c {
        fc2_bias[i] = 0.3; // alpha1
        fc2_bias[c + i] = -0.2; // alpha2
        fc2_bias[2 * c + i] = 0.5; // beta1 (damped to 0.05)
        fc2_bias[3 * c + i] = -0.4; // beta2
    }
    let t2 = ConvNodes {
        w: cx.param(&normal(rng, &[4 * c, hidden, 1, 1], 0.01).to_f32()),
        b: Some(cx.param(&Tensor::from_vec(&[4 * c], fc2_bias).unwrap())),
        stride: 1,
        padding: 0,
        groups: 1,
    };
    DyHeadNodes {
        scale_fc,
        offset_conv,
        spatial_weights: vec![1.0 / 9.0; levels * 9],
        task_fc1: t1,
        task_fc2: t2,
        block_count: 1,
    }
}

fn dyhead_cases(seed: u64, eps: f64) -> Result<Vec<Case>> {
    let mut rng = Rng64::for_tensor(seed, "gradsuite.dyhead");
    let mut out = Vec::new();

    let l0 = uniform(&mut rng, &[1, 3, 4, 4], 0.1, 0.9);
    let l1 = uniform(&mut rng, &[1, 3, 4, 4], 0.1, 0.9);
    let seed_scale = rng.next_u64();
    check(
        &mut out,
        "scale_attention",
        &[l0, l1],
        eps,
        move |tape, ids| {
            let mut cx = Taped::new(tape);
            let mut rng = Rng64::new(seed_scale);
            let nodes = dyhead_nodes_for_check(&mut cx, &mut rng, 2, 3, None);
            let outs = scale_attention_cx(&mut cx, &[ids[0], ids[1]], &nodes)?;
            sum_levels(&mut cx, &outs)
        },
    )?;

    // spatial attention checked against both the input level and the
    // offset-predictor weights, on a single 1x4x5x5 level
    let x = uniform(&mut rng, &[1, 4, 5, 5], 0.1, 0.9);
    let ow = normal(&mut rng, &[27, 4, 3, 3], 0.01);
    let mut ob = Tensor64::full(&[27], 0.3)?;
    for i in 18..27 {
        ob.data_mut()[i] = 0.4;
    }
    let seed_spatial = rng.next_u64();
    check(
        &mut out,
        "spatial_attention",
        &[x, ow, ob],
        eps,
        move |tape, ids| {
            let mut cx = Taped::new(tape);
            let mut rng = Rng64::new(seed_spatial);
            let nodes = dyhead_nodes_for_check(&mut cx, &mut rng, 1, 4, Some((ids[1], ids[2])));
            let outs = spatial_attention_cx(&mut cx, &[ids[0]], &nodes)?;
            Ok(outs[0])
        },
    )?;

    let l0 = uniform(&mut rng, &[1, 4, 3, 3], 0.1, 0.9);
    let l1 = uniform(&mut rng, &[1, 4, 3, 3], 0.1, 0.9);
    let seed_task = rng.next_u64();
    check(&mut out, "task_attention", &[l0, l1], eps, move |tape, ids| {
        let mut cx = Taped::new(tape);
        let mut rng = Rng64::new(seed_task);
        let nodes = dyhead_nodes_for_check(&mut cx, &mut rng, 2, 4, None);
        let outs = task_attention_cx(&mut cx, &[ids[0], ids[1]], &nodes)?;
        sum_levels(&mut cx, &outs)
    })?;

    let l0 = uniform(&mut rng, &[1, 4, 5, 5], 0.1, 0.9);
    let l1 = uniform(&mut rng, &[1, 4, 5, 5], 0.1, 0.9);
    let seed_block = rng.next_u64();
    check(&mut out, "dyhead_block", &[l0, l1], eps, move |tape, ids| {
        let mut cx = Taped::new(tape);
        let mut rng = Rng64::new(seed_block);
        let nodes = dyhead_nodes_for_check(&mut cx, &mut rng, 2, 4, None);
        let outs = dyhead_block_cx(&mut cx, &[ids[0], ids[1]], &nodes)?;
        sum_levels(&mut cx, &outs)
    })?;

    Ok(out)
}

fn sum_levels(cx: &mut Taped, levels: &[NodeId]) -> Result<NodeId> {
    let mut acc = levels[0];
    for l in &levels[1..] {
        acc = cx.add(&acc, l)?;
    }
    Ok(acc)
}

// ---------------------------------------------------------------------------
// Runner
// ---------------------------------------------------------------------------

pub fn run_module(module: SuiteModule, seed: u64, eps: f64) -> Result<Vec<CaseResult>> {
    if eps <= 0.0 {
        return Err(Error::param("eps", "must be > 0"));
    }
    let cases = match module {
        SuiteModule::TensorCore => tensor_core_cases(seed, eps)?,
        SuiteModule::DySample => dysample_cases(seed, eps)?,
        SuiteModule::ScaleFusion => scale_fusion_cases(seed, eps)?,
        SuiteModule::DyHead => dyhead_cases(seed, eps)?,
    };
    Ok(cases
        .into_iter()
        .map(|c| CaseResult {
            module: module.name(),
            case: c.name,
            max_rel_err: c.err,
        })
        .collect())
}

pub fn run_modules(modules: &[SuiteModule], seed: u64, eps: f64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for m in modules {
        out.extend(run_module(*m, seed, eps)?);
    }
    Ok(out)
}
