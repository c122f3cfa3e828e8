//! End-to-end assembly: shape-faithful backbone stub, TFE/DSSFF/CPAM
//! neck wiring, per-scale heads with optional DyHead blocks, anchor-free
//! decoding and greedy class-wise NMS.

use serde::{Deserialize, Serialize};

use crate::dyhead::{dyhead_block, DyHeadParams, LevelStack, SPATIAL_TAPS};
use crate::dysample::DySampleParams;
use crate::error::{Error, Result};
use crate::fusion::{
    cpam_forward, eca_kernel_size, ssff_fuse_with, tfe_fuse, ChannelAttentionParams, CpamParams,
    GaussianSpec, Norm3dParams, SsffParams, SsffUpsampling, TfeParams,
};
use crate::ops::{self, Activation};
use crate::tensor::{ConvParams, Tensor};
use crate::weights::{Init, ParamSource, RandomSource, StoreSource, WeightStore};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Input (height, width); both must be divisible by 32.
    pub input_size: (usize, usize),
    pub stem_channels: usize,
    /// Backbone channels for P2..P5.
    pub channels: [usize; 4],
    /// Strides for P2..P5; must strictly double.
    pub strides: [usize; 4],
    pub num_classes: usize,
    /// Common width of the neck outputs consumed by the heads.
    pub head_channels: usize,
    pub dyhead_blocks: usize,
    pub confidence: f32,
    pub iou: f32,
    /// Dynamic upsampling inside the scale-sequence fusion; off falls
    /// back to the nearest-neighbour baseline.
    pub dssff: bool,
    /// The extra stride-4 (x-small) detection head.
    pub xsmall: bool,
    /// DyHead blocks in front of the per-scale branches.
    pub dyhead: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: (640, 640),
            stem_channels: 16,
            channels: [32, 64, 128, 256],
            strides: [4, 8, 16, 32],
            num_classes: 10,
            head_channels: 64,
            dyhead_blocks: 2,
            confidence: 0.25,
            iou: 0.45,
            dssff: true,
            xsmall: true,
            dyhead: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.input_size;
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::Config(format!(
                "input size {}x{} must be divisible by 32",
                h, w
            )));
        }
        for win in self.strides.windows(2) {
            if win[1] != 2 * win[0] {
                return Err(Error::Config(format!(
                    "strides {:?} must strictly double",
                    self.strides
                )));
            }
        }
        // confidence 1.0 is meaningful (sigmoid never reaches it: no
        // detections survive); an IoU threshold of 1.0 is not
        if !(self.confidence > 0.0 && self.confidence <= 1.0) {
            return Err(Error::Config(format!(
                "confidence {} must lie in (0, 1]",
                self.confidence
            )));
        }
        if !(self.iou > 0.0 && self.iou < 1.0) {
            return Err(Error::Config(format!("iou {} must lie in (0, 1)", self.iou)));
        }
        if self.num_classes == 0 || self.head_channels == 0 {
            return Err(Error::Config("num_classes and head_channels must be >= 1".into()));
        }
        Ok(())
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: ModelConfig =
            serde_json::from_str(s).map_err(|e| Error::Config(format!("config JSON: {}", e)))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Active head scales, finest first: strides plus grid sizes for the
    /// configured input.
    pub fn head_scales(&self) -> Vec<usize> {
        if self.xsmall {
            self.strides.to_vec()
        } else {
            self.strides[1..].to_vec()
        }
    }

    pub fn level_count(&self) -> usize {
        if self.xsmall {
            4
        } else {
            3
        }
    }
}

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub class_id: usize,
    pub score: f32,
    /// (x1, y1, x2, y2) in image pixels; x1 < x2 and y1 < y2.
    pub bbox: (f32, f32, f32, f32),
}

impl Detection {
    pub fn iou(&self, other: &Detection) -> f32 {
        let (ax1, ay1, ax2, ay2) = self.bbox;
        let (bx1, by1, bx2, by2) = other.bbox;
        let ix = (ax2.min(bx2) - ax1.max(bx1)).max(0.0);
        let iy = (ay2.min(by2) - ay1.max(by1)).max(0.0);
        let inter = ix * iy;
        let union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct NeckWeights {
    pub tfe1: TfeParams,
    pub tfe2: TfeParams,
    pub ssff_align: [ConvParams; 3],
    pub ssff: SsffParams,
    pub cpam: CpamParams,
    pub p2_merge: Option<ConvParams>,
    pub p3_out: ConvParams,
    pub p4_out: ConvParams,
    pub p5_out: ConvParams,
}

#[derive(Debug, Clone)]
pub struct HeadBranch {
    pub cls: ConvParams,
    pub boxes: ConvParams,
}

#[derive(Debug, Clone)]
pub struct HeadWeights {
    pub dyhead: Option<DyHeadParams>,
    pub branches: Vec<HeadBranch>,
}

#[derive(Debug, Clone)]
pub struct DetectorWeights {
    pub backbone: Vec<ConvParams>,
    pub neck: NeckWeights,
    pub head: HeadWeights,
}

const CONV_STD: f64 = 0.02;
const OFFSET_STD: f64 = 0.001;

#[allow(clippy::too_many_arguments)]
fn conv_param(
    src: &mut dyn ParamSource,
    name: &str,
    out_c: usize,
    in_c: usize,
    k: usize,
    stride: usize,
    padding: usize,
    std: f64,
) -> Result<ConvParams> {
    let w = src.take(&format!("{}.weight", name), &[out_c, in_c, k, k], Init::Normal(std))?;
    let b = src.take(&format!("{}.bias", name), &[out_c], Init::Zeros)?;
    ConvParams::with(w, Some(b.data().to_vec()), stride, padding, 1)
}

fn dysample_param(
    src: &mut dyn ParamSource,
    name: &str,
    channels: usize,
    scale: usize,
    groups: usize,
) -> Result<DySampleParams> {
    let oc = 2 * groups * scale * scale;
    let gen = conv_param(
        src,
        &format!("{}.offset_gen", name),
        oc,
        channels,
        1,
        1,
        0,
        OFFSET_STD,
    )?;
    DySampleParams::new(gen, scale, groups)
}

/// Build (or bind) every model parameter in one fixed order.
fn build_weights(cfg: &ModelConfig, src: &mut dyn ParamSource) -> Result<DetectorWeights> {
    cfg.validate()?;
    let hc = cfg.head_channels;
    let [c2, c3, c4, c5] = cfg.channels;

    // backbone: five stride-2 stages down to P5
    let stage_io = [
        (cfg.stem_channels, 3),
        (c2, cfg.stem_channels),
        (c3, c2),
        (c4, c3),
        (c5, c4),
    ];
    let mut backbone = Vec::with_capacity(stage_io.len());
    for (i, &(oc, ic)) in stage_io.iter().enumerate() {
        backbone.push(conv_param(
            src,
            &format!("backbone.stage{}", i),
            oc,
            ic,
            3,
            2,
            1,
            CONV_STD,
        )?);
    }

    let tfe1 = TfeParams::new(
        conv_param(src, "neck.tfe1.align_large", hc, c2, 1, 1, 0, CONV_STD)?,
        conv_param(src, "neck.tfe1.align_medium", hc, c3, 1, 1, 0, CONV_STD)?,
        conv_param(src, "neck.tfe1.align_small", hc, c4, 1, 1, 0, CONV_STD)?,
    )?;
    let tfe2 = TfeParams::new(
        conv_param(src, "neck.tfe2.align_large", hc, c3, 1, 1, 0, CONV_STD)?,
        conv_param(src, "neck.tfe2.align_medium", hc, c4, 1, 1, 0, CONV_STD)?,
        conv_param(src, "neck.tfe2.align_small", hc, c5, 1, 1, 0, CONV_STD)?,
    )?;

    let ssff_align = [
        conv_param(src, "neck.dssff.align_p3", hc, c3, 1, 1, 0, CONV_STD)?,
        conv_param(src, "neck.dssff.align_p4", hc, c4, 1, 1, 0, CONV_STD)?,
        conv_param(src, "neck.dssff.align_p5", hc, c5, 1, 1, 0, CONV_STD)?,
    ];

    // The dynamic upsamplers only exist when the dynamic toggle is on;
    // the nearest-neighbour fallback has no parameters.
    let (dys4, dys5) = if cfg.dssff {
        (
            dysample_param(src, "neck.dssff.dysample_p4", hc, 2, 4)?,
            dysample_param(src, "neck.dssff.dysample_p5", hc, 4, 4)?,
        )
    } else {
        (
            DySampleParams::zeroed(hc, 2, 4)?,
            DySampleParams::zeroed(hc, 4, 4)?,
        )
    };
    let conv3_w = src.take(
        "neck.dssff.conv3d.weight",
        &[hc, hc, 3, 1, 1],
        Init::Normal(CONV_STD),
    )?;
    let conv3_b = src.take("neck.dssff.conv3d.bias", &[hc], Init::Zeros)?;
    let norm_scale = src.take("neck.dssff.norm.scale", &[hc], Init::Ones)?;
    let norm_shift = src.take("neck.dssff.norm.shift", &[hc], Init::Zeros)?;
    let ssff = SsffParams {
        dysample_p4: dys4,
        dysample_p5: dys5,
        conv3d_p: ConvParams::new(conv3_w, Some(conv3_b.data().to_vec()))?,
        norm: Some(Norm3dParams {
            scale: norm_scale.data().to_vec(),
            shift: norm_shift.data().to_vec(),
            eps: 1e-5,
        }),
        act: Some(Activation::Silu),
        gaussian: GaussianSpec::default(),
    };

    let tfe_c = 3 * hc;
    let k = eca_kernel_size(tfe_c);
    let ch_w = src.take("neck.cpam.channel.weight", &[k], Init::Normal(CONV_STD))?;
    let ch_b = src.take("neck.cpam.channel.bias", &[1], Init::Zeros)?;
    let cpam = CpamParams {
        channel: ChannelAttentionParams {
            weight: ch_w.data().to_vec(),
            bias: ch_b.data()[0],
        },
        pos_h: conv_param(src, "neck.cpam.pos_h", tfe_c, tfe_c, 1, 1, 0, CONV_STD)?,
        pos_w: conv_param(src, "neck.cpam.pos_w", tfe_c, tfe_c, 1, 1, 0, CONV_STD)?,
        align: Some(conv_param(src, "neck.cpam.align", tfe_c, hc, 1, 1, 0, CONV_STD)?),
    };

    let p2_merge = if cfg.xsmall {
        Some(conv_param(src, "neck.p2_merge", hc, c2 + hc, 1, 1, 0, CONV_STD)?)
    } else {
        None
    };
    let p3_out = conv_param(src, "neck.p3_out", hc, tfe_c, 1, 1, 0, CONV_STD)?;
    let p4_out = conv_param(src, "neck.p4_out", hc, tfe_c, 1, 1, 0, CONV_STD)?;
    let p5_out = conv_param(src, "neck.p5_out", hc, c5, 1, 1, 0, CONV_STD)?;

    let levels = cfg.level_count();
    let dyhead = if cfg.dyhead {
        let hidden = DyHeadParams::task_hidden(hc);
        // the task MLP bias starts with its alpha-1 section at 1 so the
        // dynamic relu begins as a plain relu and the block passes signal
        let fc2_w = src.take(
            "head.dyhead.task_fc2.weight",
            &[4 * hc, hidden, 1, 1],
            Init::Normal(CONV_STD),
        )?;
        let fc2_b = src.take("head.dyhead.task_fc2.bias", &[4 * hc], Init::PrefixOnes(hc))?;
        Some(DyHeadParams {
            scale_fc: conv_param(src, "head.dyhead.scale_fc", 1, 1, 1, 1, 0, CONV_STD)?,
            offset_conv: conv_param(
                src,
                "head.dyhead.offset_conv",
                3 * SPATIAL_TAPS,
                hc,
                3,
                1,
                1,
                OFFSET_STD,
            )?,
            spatial_weights: src.take(
                "head.dyhead.spatial_weights",
                &[levels, SPATIAL_TAPS],
                Init::Const(1.0 / SPATIAL_TAPS as f32),
            )?,
            task_fc1: conv_param(src, "head.dyhead.task_fc1", hidden, hc, 1, 1, 0, CONV_STD)?,
            task_fc2: ConvParams::new(fc2_w, Some(fc2_b.data().to_vec()))?,
            block_count: cfg.dyhead_blocks,
        })
    } else {
        None
    };

    let mut branches = Vec::with_capacity(levels);
    for &stride in &cfg.head_scales() {
        branches.push(HeadBranch {
            cls: conv_param(
                src,
                &format!("head.p{}.cls", stride_level(stride)),
                cfg.num_classes,
                hc,
                1,
                1,
                0,
                CONV_STD,
            )?,
            boxes: conv_param(
                src,
                &format!("head.p{}.box", stride_level(stride)),
                4,
                hc,
                1,
                1,
                0,
                CONV_STD,
            )?,
        });
    }

    Ok(DetectorWeights {
        backbone,
        neck: NeckWeights {
            tfe1,
            tfe2,
            ssff_align,
            ssff,
            cpam,
            p2_merge,
            p3_out,
            p4_out,
            p5_out,
        },
        head: HeadWeights { dyhead, branches },
    })
}

fn stride_level(stride: usize) -> u32 {
    stride.trailing_zeros()
}

/// Deterministic random weight store for a configuration.
pub fn init_random(cfg: &ModelConfig, seed: u64) -> Result<WeightStore> {
    let mut src = RandomSource::new(seed);
    build_weights(cfg, &mut src)?;
    Ok(src.store)
}

/// Strict bind: every model parameter must resolve exactly once and no
/// store entry may remain unconsumed.
pub fn bind(cfg: &ModelConfig, store: &WeightStore) -> Result<DetectorWeights> {
    let mut src = StoreSource::new(store);
    let w = build_weights(cfg, &mut src)?;
    src.finish()?;
    Ok(w)
}

// ---------------------------------------------------------------------------
// Forward stages
// ---------------------------------------------------------------------------

/// Shape-faithful backbone stub: five stride-2 conv+silu stages; returns
/// (P2, P3, P4, P5) at strides 4/8/16/32.
pub fn backbone_forward(image: &Tensor, cfg: &ModelConfig, w: &DetectorWeights) -> Result<[Tensor; 4]> {
    let (_, c, h, wd) = image.dims4()?;
    if c != 3 {
        return Err(Error::dim("channel", format!("expected 3 input channels, got {}", c)));
    }
    let max_stride = cfg.strides[3];
    if h % max_stride != 0 || wd % max_stride != 0 {
        return Err(Error::dim(
            "height",
            format!("input {}x{} not divisible by {}", h, wd, max_stride),
        ));
    }
    let mut cur = image.clone();
    let mut pyramid = Vec::with_capacity(4);
    for (i, stage) in w.backbone.iter().enumerate() {
        cur = ops::activation(&ops::conv2d(&cur, stage)?, Activation::Silu);
        if i >= 1 {
            pyramid.push(cur.clone());
        }
    }
    Ok([
        pyramid[0].clone(),
        pyramid[1].clone(),
        pyramid[2].clone(),
        pyramid[3].clone(),
    ])
}

/// Per-scale fused neck features, finest first, paired with strides.
pub fn neck_forward(
    features: &[Tensor; 4],
    cfg: &ModelConfig,
    w: &DetectorWeights,
) -> Result<Vec<(usize, Tensor)>> {
    let [p2, p3, p4, p5] = features;
    let n = &w.neck;

    let tfe1 = tfe_fuse(p2, p3, p4, &n.tfe1)?; // P3 grid, 3*hc
    let tfe2 = tfe_fuse(p3, p4, p5, &n.tfe2)?; // P4 grid, 3*hc

    let a3 = ops::conv2d(p3, &n.ssff_align[0])?;
    let a4 = ops::conv2d(p4, &n.ssff_align[1])?;
    let a5 = ops::conv2d(p5, &n.ssff_align[2])?;
    let mode = if cfg.dssff {
        SsffUpsampling::Dynamic
    } else {
        SsffUpsampling::Nearest
    };
    let ssff = ssff_fuse_with(&a3, &a4, &a5, &n.ssff, mode)?; // P3 grid, hc

    let cpam = cpam_forward(&tfe1, &ssff, &n.cpam)?; // P3 grid, 3*hc

    let p3_out = ops::conv2d(&cpam, &n.p3_out)?;
    let p4_out = ops::conv2d(&tfe2, &n.p4_out)?;
    let p5_out = ops::conv2d(p5, &n.p5_out)?;

    let mut outs = Vec::with_capacity(cfg.level_count());
    if cfg.xsmall {
        let merge = n
            .p2_merge
            .as_ref()
            .ok_or_else(|| Error::Config("x-small head enabled but p2_merge weights missing".into()))?;
        let up = ops::resize_nearest(&p3_out, 2)?;
        let cat = ops::concat_channels_g(&[p2, &up])?;
        outs.push((cfg.strides[0], ops::conv2d(&cat, merge)?));
    }
    outs.push((cfg.strides[1], p3_out));
    outs.push((cfg.strides[2], p4_out));
    outs.push((cfg.strides[3], p5_out));
    Ok(outs)
}

/// Raw per-scale predictions.
#[derive(Debug, Clone)]
pub struct RawPrediction {
    pub stride: usize,
    /// (N, num_classes, H, W) logits.
    pub cls: Tensor,
    /// (N, 4, H, W) non-negative distances (left, top, right, bottom).
    pub boxes: Tensor,
    /// Image extent the predictions decode into.
    pub image_hw: (usize, usize),
}

/// DyHead blocks over the level stack (when enabled) followed by the
/// per-scale class/box 1×1 branches.
pub fn head_forward(
    fused: &[(usize, Tensor)],
    image_hw: (usize, usize),
    cfg: &ModelConfig,
    w: &DetectorWeights,
) -> Result<Vec<RawPrediction>> {
    let maps: Vec<Tensor> = fused.iter().map(|(_, t)| t.clone()).collect();
    let strides: Vec<usize> = fused.iter().map(|(s, _)| *s).collect();

    let maps = match (cfg.dyhead, &w.head.dyhead) {
        (true, Some(p)) => {
            let (stack, sizes) = LevelStack::from_pyramid(&maps, &strides)?;
            let out = dyhead_block(&stack, p)?;
            out.to_pyramid(&sizes)?
        }
        (true, None) => {
            return Err(Error::Config("DyHead enabled but weights missing".into()));
        }
        (false, _) => maps,
    };

    maps.iter()
        .zip(&strides)
        .zip(&w.head.branches)
        .map(|((m, &stride), br)| {
            let cls = ops::conv2d(m, &br.cls)?;
            let boxes = ops::activation(&ops::conv2d(m, &br.boxes)?, Activation::Relu);
            Ok(RawPrediction {
                stride,
                cls,
                boxes,
                image_hw,
            })
        })
        .collect()
}

/// Anchor-free decode: cell centres at (j+0.5)s, boxes as centre ±
/// distance·stride, sigmoid scores, confidence filter, clamp to the
/// image; zero-extent boxes are dropped.
pub fn decode_predictions(raw: &[RawPrediction], cfg: &ModelConfig) -> Result<Vec<Detection>> {
    let mut dets = Vec::new();
    for pred in raw {
        let (n, nc, h, w) = pred.cls.dims4()?;
        if n != 1 {
            return Err(Error::dim("batch", "decoding expects a single image"));
        }
        let (_, four, bh, bw) = pred.boxes.dims4()?;
        if four != 4 || bh != h || bw != w {
            return Err(Error::dim("channel", "box tensor must be (1, 4, H, W)"));
        }
        let (img_h, img_w) = (pred.image_hw.0 as f32, pred.image_hw.1 as f32);
        let s = pred.stride as f32;
        for i in 0..h {
            for j in 0..w {
                let cx = (j as f32 + 0.5) * s;
                let cy = (i as f32 + 0.5) * s;
                let d = |k: usize| pred.boxes.data()[(k * h + i) * w + j];
                let x1 = (cx - d(0) * s).clamp(0.0, img_w);
                let y1 = (cy - d(1) * s).clamp(0.0, img_h);
                let x2 = (cx + d(2) * s).clamp(0.0, img_w);
                let y2 = (cy + d(3) * s).clamp(0.0, img_h);
                if x1 >= x2 || y1 >= y2 {
                    continue;
                }
                for c in 0..nc {
                    let logit = pred.cls.data()[(c * h + i) * w + j];
                    let score = Activation::Sigmoid.eval(logit as f64) as f32;
                    if score > cfg.confidence {
                        dets.push(Detection {
                            class_id: c,
                            score,
                            bbox: (x1, y1, x2, y2),
                        });
                    }
                }
            }
        }
    }
    Ok(dets)
}

/// Greedy class-wise suppression, score-descending; a candidate survives
/// when its IoU with every kept detection of its class is <= the
/// threshold. Output is sorted by score.
pub fn nms(dets: &[Detection], iou_thresh: f32) -> Result<Vec<Detection>> {
    if !(iou_thresh > 0.0 && iou_thresh < 1.0) {
        return Err(Error::param("iou_thresh", "must lie in (0, 1)"));
    }
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<Detection> = Vec::new();
    let mut kept_by_class: std::collections::HashMap<usize, Vec<usize>> =
        std::collections::HashMap::new();
    for idx in order {
        let cand = &dets[idx];
        let peers = kept_by_class.entry(cand.class_id).or_default();
        if peers.iter().all(|&k| kept[k].iou(cand) <= iou_thresh) {
            peers.push(kept.len());
            kept.push(cand.clone());
        }
    }
    Ok(kept)
}

/// Stage-level record of one forward run.
#[derive(Debug, Clone)]
pub struct DetectTrace {
    /// (stride, tensor) for P2..P5.
    pub backbone: Vec<(usize, Tensor)>,
    pub neck: Vec<(usize, Tensor)>,
    pub raw: Vec<RawPrediction>,
    pub detections: Vec<Detection>,
}

pub fn detect_trace(image: &Tensor, cfg: &ModelConfig, w: &DetectorWeights) -> Result<DetectTrace> {
    let (_, _, h, wd) = image.dims4()?;
    let pyramid = backbone_forward(image, cfg, w)?;
    let neck = neck_forward(&pyramid, cfg, w)?;
    let raw = head_forward(&neck, (h, wd), cfg, w)?;
    let decoded = decode_predictions(&raw, cfg)?;
    let detections = nms(&decoded, cfg.iou)?;
    Ok(DetectTrace {
        backbone: cfg.strides.iter().copied().zip(pyramid).collect(),
        neck,
        raw,
        detections,
    })
}

/// Full pipeline: backbone -> neck -> heads -> decode -> NMS.
pub fn detect(image: &Tensor, cfg: &ModelConfig, w: &DetectorWeights) -> Result<Vec<Detection>> {
    Ok(detect_trace(image, cfg, w)?.detections)
}
