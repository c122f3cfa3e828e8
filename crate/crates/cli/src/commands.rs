//! forward / gradcheck / inspect command bodies.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};

use dassf_core::detector::{
    self, backbone_forward, decode_predictions, head_forward, neck_forward, nms, DetectorWeights,
    ModelConfig,
};
use dassf_core::gradsuite::{self, SuiteModule, TOLERANCE};
use dassf_core::imgio;
use dassf_core::tensor::Tensor;
use dassf_core::weights::{self, WeightStore};

pub fn load_config(path: Option<&Path>) -> anyhow::Result<ModelConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            Ok(ModelConfig::from_json(&text)?)
        }
        None => Ok(ModelConfig::default()),
    }
}

pub fn load_store(
    cfg: &ModelConfig,
    weights: Option<&Path>,
    seed: Option<u64>,
) -> anyhow::Result<WeightStore> {
    match (weights, seed) {
        (Some(p), None) => {
            weights::load(p).with_context(|| format!("reading weights {}", p.display()))
        }
        (None, Some(s)) => Ok(detector::init_random(cfg, s)?),
        (None, None) => bail!("one of --weights or --seed is required"),
        (Some(_), Some(_)) => bail!("--weights and --seed are mutually exclusive"),
    }
}

fn shape_of(t: &Tensor) -> String {
    t.shape()
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("x")
}

pub fn cmd_forward(
    config: Option<PathBuf>,
    weights_path: Option<PathBuf>,
    seed: Option<u64>,
    image_path: &Path,
    out_path: &Path,
) -> anyhow::Result<()> {
    let cfg = load_config(config.as_deref())?;
    let store = load_store(&cfg, weights_path.as_deref(), seed)?;
    let w: DetectorWeights = detector::bind(&cfg, &store)?;
    let image = imgio::load_image(image_path)
        .with_context(|| format!("reading image {}", image_path.display()))?;
    let (_, _, ih, iw) = image.dims4()?;

    let t0 = Instant::now();
    let pyramid = backbone_forward(&image, &cfg, &w)?;
    let t_backbone = t0.elapsed();
    let names = ["P2", "P3", "P4", "P5"];
    let shapes: Vec<String> = pyramid
        .iter()
        .zip(names)
        .map(|(t, n)| format!("{} {}", n, shape_of(t)))
        .collect();
    println!("backbone   {:>9.1?}  {}", t_backbone, shapes.join("  "));

    let t1 = Instant::now();
    let fused = neck_forward(&pyramid, &cfg, &w)?;
    let t_neck = t1.elapsed();
    let shapes: Vec<String> = fused
        .iter()
        .map(|(s, t)| format!("stride{} {}", s, shape_of(t)))
        .collect();
    println!("neck       {:>9.1?}  {}", t_neck, shapes.join("  "));

    let t2 = Instant::now();
    let raw = head_forward(&fused, (ih, iw), &cfg, &w)?;
    let t_head = t2.elapsed();
    let grids: Vec<String> = raw
        .iter()
        .map(|r| {
            let (_, _, h, wd) = r.cls.dims4().expect("rank 4");
            format!("grid {}x{}", h, wd)
        })
        .collect();
    println!("head       {:>9.1?}  {}", t_head, grids.join("  "));

    let t3 = Instant::now();
    let decoded = decode_predictions(&raw, &cfg)?;
    let dets = nms(&decoded, cfg.iou)?;
    println!(
        "decode+nms {:>9.1?}  {} candidates -> {} detections",
        t3.elapsed(),
        decoded.len(),
        dets.len()
    );
    println!("total      {:>9.1?}", t0.elapsed());

    // compose the whole file before touching the path
    let mut text = String::new();
    for d in &dets {
        let (x1, y1, x2, y2) = d.bbox;
        writeln!(text, "{} {} {} {} {} {}", d.class_id, d.score, x1, y1, x2, y2)?;
    }
    std::fs::write(out_path, text)
        .with_context(|| format!("writing detections to {}", out_path.display()))?;
    Ok(())
}

/// Exit code 0 iff every case passes at the 1e-4 tolerance.
pub fn cmd_gradcheck(module: &str, seed: u64, eps: f64) -> anyhow::Result<i32> {
    let modules = SuiteModule::parse(module).ok_or_else(|| {
        anyhow::anyhow!(
            "unknown module `{}`; expected tensor-core, dysample, scale-fusion, dyhead or all",
            module
        )
    })?;
    let results = gradsuite::run_modules(&modules, seed, eps)?;
    println!(
        "gradient checks  seed={}  eps={:e}  tolerance={:e}",
        seed, eps, TOLERANCE
    );
    println!("{:<14} {:<26} {:>12}  result", "module", "operator", "max rel err");
    let mut failures = 0usize;
    for r in &results {
        println!(
            "{:<14} {:<26} {:>12.3e}  {}",
            r.module,
            r.case,
            r.max_rel_err,
            if r.passed() { "pass" } else { "FAIL" }
        );
        if !r.passed() {
            failures += 1;
        }
    }
    if failures > 0 {
        println!("{} of {} checks failed", failures, results.len());
        Ok(1)
    } else {
        println!("all {} checks passed", results.len());
        Ok(0)
    }
}

pub fn cmd_inspect(
    config: Option<PathBuf>,
    weights_path: Option<PathBuf>,
    seed: Option<u64>,
) -> anyhow::Result<()> {
    let cfg = load_config(config.as_deref())?;
    let store = load_store(&cfg, weights_path.as_deref(), seed)?;
    // strict bind validates shape and coverage before reporting
    let bound = detector::bind(&cfg, &store)?;

    let flag_for = |name: &str| -> String {
        if name.contains("dysample_p4") {
            let p = &bound.neck.ssff.dysample_p4;
            format!("  [offset gen s={} g={}]", p.scale, p.groups)
        } else if name.contains("dysample_p5") {
            let p = &bound.neck.ssff.dysample_p5;
            format!("  [offset gen s={} g={}]", p.scale, p.groups)
        } else if name.contains("dyhead.offset_conv") {
            "  [offset gen 3x3 deformable]".to_string()
        } else {
            String::new()
        }
    };

    println!(
        "toggles: dssff={} xsmall={} dyhead={}  input={}x{}  classes={}",
        cfg.dssff,
        cfg.xsmall,
        cfg.dyhead,
        cfg.input_size.0,
        cfg.input_size.1,
        cfg.num_classes
    );
    println!("{:<44} {:>16} {:>10}", "tensor", "shape", "params");
    let mut totals: Vec<(String, usize)> = Vec::new();
    for (name, t) in store.iter() {
        println!("{:<44} {:>16} {:>10}{}", name, shape_of(t), t.len(), flag_for(name));
        let top = name.split('.').next().unwrap_or("other").to_string();
        match totals.iter_mut().find(|(k, _)| *k == top) {
            Some((_, v)) => *v += t.len(),
            None => totals.push((top, t.len())),
        }
    }
    println!();
    for (k, v) in &totals {
        println!("{:<12} {:>10} params", k, v);
    }
    println!("{:<12} {:>10} params in {} tensors", "total", store.total_params(), store.len());
    Ok(())
}
