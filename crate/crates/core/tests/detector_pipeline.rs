//! Assembly-level contracts: stride/shape over input sizes, toggle
//! isolation, determinism, and constant-propagation through the neck.

mod common;

use dassf_core::detector::{
    backbone_forward, bind, detect, init_random, neck_forward, ModelConfig,
};
use dassf_core::tensor::Tensor;
use dassf_core::weights::Rng64;

/// Small configuration that keeps full forwards cheap.
fn small_cfg() -> ModelConfig {
    ModelConfig {
        input_size: (320, 320),
        stem_channels: 4,
        channels: [8, 16, 24, 32],
        head_channels: 16,
        num_classes: 3,
        dyhead_blocks: 1,
        ..ModelConfig::default()
    }
}

fn rand_image(rng: &mut Rng64, h: usize, w: usize) -> Tensor {
    common::rand_tensor(rng, &[1, 3, h, w], 0.0, 1.0)
}

#[test]
fn stride_shape_contract_over_input_sizes() {
    let cfg = small_cfg();
    let w = bind(&cfg, &init_random(&cfg, 1).unwrap()).unwrap();
    let mut rng = Rng64::for_tensor(50, "pipeline.sizes");
    for size in (320..=960).step_by(32) {
        let img = rand_image(&mut rng, size, size);
        let pyramid = backbone_forward(&img, &cfg, &w).unwrap();
        for (map, stride) in pyramid.iter().zip(cfg.strides) {
            let (_, _, h, wd) = map.dims4().unwrap();
            assert_eq!((h, wd), (size / stride, size / stride), "size {}", size);
        }
        let fused = neck_forward(&pyramid, &cfg, &w).unwrap();
        assert_eq!(fused.len(), 4);
        for (stride, map) in &fused {
            let (_, c, h, wd) = map.dims4().unwrap();
            assert_eq!(c, cfg.head_channels);
            assert_eq!((h, wd), (size / stride, size / stride));
        }
    }
}

#[test]
fn indivisible_input_rejected() {
    let cfg = small_cfg();
    let w = bind(&cfg, &init_random(&cfg, 1).unwrap()).unwrap();
    let img = Tensor::zeros(&[1, 3, 300, 320]).unwrap();
    assert!(backbone_forward(&img, &cfg, &w).is_err());
}

#[test]
fn xsmall_toggle_controls_head_count() {
    let mut rng = Rng64::for_tensor(51, "pipeline.xsmall");
    let img = rand_image(&mut rng, 320, 320);

    let on = small_cfg();
    let w_on = bind(&on, &init_random(&on, 2).unwrap()).unwrap();
    let pyramid = backbone_forward(&img, &on, &w_on).unwrap();
    let fused_on = neck_forward(&pyramid, &on, &w_on).unwrap();
    assert_eq!(fused_on.len(), 4);
    assert_eq!(fused_on[0].0, 4); // the added stride-4 head

    let off = ModelConfig {
        xsmall: false,
        ..small_cfg()
    };
    let w_off = bind(&off, &init_random(&off, 2).unwrap()).unwrap();
    let fused_off = neck_forward(&pyramid, &off, &w_off).unwrap();
    assert_eq!(fused_off.len(), 3);
    assert_eq!(
        fused_off.iter().map(|(s, _)| *s).collect::<Vec<_>>(),
        vec![8, 16, 32]
    );
}

#[test]
fn toggles_do_not_disturb_upstream_stages() {
    let mut rng = Rng64::for_tensor(52, "pipeline.isolation");
    let img = rand_image(&mut rng, 320, 320);
    let base = small_cfg();
    let seed = 9;

    let w_base = bind(&base, &init_random(&base, seed).unwrap()).unwrap();
    let py_base = backbone_forward(&img, &base, &w_base).unwrap();
    let neck_base = neck_forward(&py_base, &base, &w_base).unwrap();

    // flipping dssff must leave the backbone and the P4/P5 neck paths
    // bit-identical (they do not route through the scale-sequence fusion)
    let no_dssff = ModelConfig {
        dssff: false,
        ..small_cfg()
    };
    let w2 = bind(&no_dssff, &init_random(&no_dssff, seed).unwrap()).unwrap();
    let py2 = backbone_forward(&img, &no_dssff, &w2).unwrap();
    for (a, b) in py_base.iter().zip(&py2) {
        assert_eq!(a.data(), b.data(), "backbone must not depend on dssff");
    }
    let neck2 = neck_forward(&py2, &no_dssff, &w2).unwrap();
    for idx in [2usize, 3] {
        assert_eq!(
            neck_base[idx].1.data(),
            neck2[idx].1.data(),
            "P4/P5 neck outputs must not depend on dssff"
        );
    }
    // while the fused P3/P2 paths genuinely change
    assert_ne!(neck_base[1].1.data(), neck2[1].1.data());

    // flipping dyhead leaves every neck output untouched
    let no_dyhead = ModelConfig {
        dyhead: false,
        ..small_cfg()
    };
    let w3 = bind(&no_dyhead, &init_random(&no_dyhead, seed).unwrap()).unwrap();
    let py3 = backbone_forward(&img, &no_dyhead, &w3).unwrap();
    let neck3 = neck_forward(&py3, &no_dyhead, &w3).unwrap();
    for (a, b) in neck_base.iter().zip(&neck3) {
        assert_eq!(a.1.data(), b.1.data(), "neck must not depend on dyhead");
    }

    // flipping xsmall leaves the shared P3/P4/P5 paths untouched
    let no_xs = ModelConfig {
        xsmall: false,
        ..small_cfg()
    };
    let w4 = bind(&no_xs, &init_random(&no_xs, seed).unwrap()).unwrap();
    let py4 = backbone_forward(&img, &no_xs, &w4).unwrap();
    let neck4 = neck_forward(&py4, &no_xs, &w4).unwrap();
    for (idx_on, idx_off) in [(1usize, 0usize), (2, 1), (3, 2)] {
        assert_eq!(neck_base[idx_on].1.data(), neck4[idx_off].1.data());
    }
}

#[test]
fn detect_is_deterministic() {
    let cfg = small_cfg();
    let w = bind(&cfg, &init_random(&cfg, 4).unwrap()).unwrap();
    let mut rng = Rng64::for_tensor(53, "pipeline.determinism");
    let img = rand_image(&mut rng, 320, 320);
    let a = detect(&img, &cfg, &w).unwrap();
    let b = detect(&img, &cfg, &w).unwrap();
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.class_id, y.class_id);
        assert_eq!(x.score.to_bits(), y.score.to_bits());
        assert_eq!(x.bbox.0.to_bits(), y.bbox.0.to_bits());
        assert_eq!(x.bbox.3.to_bits(), y.bbox.3.to_bits());
    }
}

#[test]
fn detect_outputs_satisfy_invariants() {
    let cfg = small_cfg();
    let w = bind(&cfg, &init_random(&cfg, 5).unwrap()).unwrap();
    let mut rng = Rng64::for_tensor(54, "pipeline.invariants");
    let img = rand_image(&mut rng, 320, 320);
    let dets = detect(&img, &cfg, &w).unwrap();
    for d in &dets {
        assert!(d.class_id < cfg.num_classes);
        assert!(d.score.is_finite() && d.score > cfg.confidence && d.score < 1.0);
        let (x1, y1, x2, y2) = d.bbox;
        assert!(x1 < x2 && y1 < y2);
        assert!(x1 >= 0.0 && y1 >= 0.0 && x2 <= 320.0 && y2 <= 320.0);
    }
    // NMS postcondition: per-class pairwise IoU below the threshold
    for (i, a) in dets.iter().enumerate() {
        for b in dets.iter().skip(i + 1) {
            if a.class_id == b.class_id {
                assert!(a.iou(b) <= cfg.iou + 1e-6);
            }
        }
    }
}

#[test]
fn confidence_one_yields_no_detections() {
    let cfg = ModelConfig {
        confidence: 1.0,
        ..small_cfg()
    };
    cfg.validate().unwrap();
    let w = bind(&cfg, &init_random(&cfg, 6).unwrap()).unwrap();
    let mut rng = Rng64::for_tensor(55, "pipeline.conf1");
    let img = rand_image(&mut rng, 320, 320);
    assert!(detect(&img, &cfg, &w).unwrap().is_empty());
}

#[test]
fn constant_features_propagate_through_neck_interior() {
    // constant backbone outputs with zeroed attention convolutions: every
    // neck output is finite and constant away from the borders
    let cfg = small_cfg();
    let mut store = init_random(&cfg, 7).unwrap();
    for name in [
        "neck.cpam.channel.weight",
        "neck.cpam.pos_h.weight",
        "neck.cpam.pos_w.weight",
    ] {
        let shape = store.get(name).unwrap().shape().to_vec();
        store.set(name, Tensor::zeros(&shape).unwrap()).unwrap();
    }
    let w = bind(&cfg, &store).unwrap();

    let feats = [
        Tensor::full(&[1, 8, 80, 80], 0.6).unwrap(),
        Tensor::full(&[1, 16, 40, 40], 0.6).unwrap(),
        Tensor::full(&[1, 24, 20, 20], 0.6).unwrap(),
        Tensor::full(&[1, 32, 10, 10], 0.6).unwrap(),
    ];
    let fused = neck_forward(&feats, &cfg, &w).unwrap();
    for (stride, map) in &fused {
        assert!(map.is_finite(), "stride {} output must be finite", stride);
        let (_, c, h, wd) = map.dims4().unwrap();
        // margin scales with the resolution of the map
        let m = (h / 3).max(3).min(h / 2);
        for ci in 0..c {
            let centre = map.data()[(ci * h + h / 2) * wd + wd / 2];
            for i in m..h - m {
                for j in m..wd - m {
                    let v = map.data()[(ci * h + i) * wd + j];
                    assert!(
                        (v - centre).abs() < 1e-4,
                        "stride {} ch {} ({}, {}): {} vs centre {}",
                        stride,
                        ci,
                        i,
                        j,
                        v,
                        centre
                    );
                }
            }
        }
    }
}
