//! Upsampler micro-benchmark: nearest, bilinear and (zero-offset)
//! DySample on identical inputs. Medians over repeats with warmup runs
//! excluded; the deviation column doubles as an equivalence check since
//! zero-offset DySample must reproduce the bilinear result.

use std::time::Instant;

use serde::Serialize;

use dassf_core::dysample::{dysample_param_count, dysample_upsample, DySampleParams};
use dassf_core::error::{Error, Result};
use dassf_core::ops;
use dassf_core::tensor::Tensor;
use dassf_core::weights::Rng64;

pub const WARMUP_RUNS: usize = 2;
pub const MIN_REPEATS: usize = 5;

#[derive(Debug, Clone, Serialize)]
pub struct BenchEntry {
    /// (C, H, W) of the input tensor.
    pub size: (usize, usize, usize),
    pub method: String,
    pub median_ms: f64,
    pub throughput_per_s: f64,
    pub param_count: usize,
    pub max_abs_dev_vs_bilinear: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub scale: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub entries: Vec<BenchEntry>,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_method(repeats: usize, mut f: impl FnMut() -> Result<Tensor>) -> Result<(Tensor, f64)> {
    for _ in 0..WARMUP_RUNS {
        f()?;
    }
    let mut out = None;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t0 = Instant::now();
        let y = f()?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        out = Some(y);
    }
    Ok((out.expect("repeats >= 1"), median(times)))
}

pub fn run_bench(
    sizes: &[(usize, usize, usize)],
    scale: usize,
    repeats: usize,
    seed: u64,
) -> Result<BenchReport> {
    if repeats < MIN_REPEATS {
        return Err(Error::param(
            "repeats",
            format!("must be >= {}", MIN_REPEATS),
        ));
    }
    if sizes.is_empty() {
        return Err(Error::param("sizes", "need at least one (C, H, W)"));
    }
    let mut entries = Vec::new();
    for &(c, h, w) in sizes {
        let mut rng = Rng64::for_tensor(seed, &format!("bench.{}x{}x{}", c, h, w));
        let x = Tensor::from_fn(&[1, c, h, w], |_| rng.uniform() * 2.0 - 1.0)?;

        let groups = if c % 4 == 0 { 4 } else { 1 };
        let dys = DySampleParams::zeroed(c, scale, groups)?;

        let (bilinear_out, bilinear_ms) =
            time_method(repeats, || ops::resize_bilinear(&x, scale))?;
        let (nearest_out, nearest_ms) = time_method(repeats, || ops::resize_nearest(&x, scale))?;
        let (dys_out, dys_ms) = time_method(repeats, || dysample_upsample(&x, &dys))?;

        let mut push = |method: &str, ms: f64, params: usize, out: &Tensor| -> Result<()> {
            entries.push(BenchEntry {
                size: (c, h, w),
                method: method.to_string(),
                median_ms: ms,
                throughput_per_s: if ms > 0.0 { 1e3 / ms } else { f64::INFINITY },
                param_count: params,
                max_abs_dev_vs_bilinear: out.max_abs_diff(&bilinear_out)?,
            });
            Ok(())
        };
        push("nearest", nearest_ms, 0, &nearest_out)?;
        push("bilinear", bilinear_ms, 0, &bilinear_out)?;
        push("dysample", dys_ms, dysample_param_count(&dys), &dys_out)?;
    }
    Ok(BenchReport {
        scale,
        repeats,
        warmup: WARMUP_RUNS,
        entries,
    })
}

pub fn render_table(report: &BenchReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "upsampler benchmark  scale={}  repeats={} (median, {} warmup)\n",
        report.scale, report.repeats, report.warmup
    ));
    s.push_str(&format!(
        "{:<14} {:<10} {:>12} {:>14} {:>10} {:>16}\n",
        "size (CxHxW)", "method", "median (ms)", "tensors/s", "params", "max|dev| vs bil"
    ));
    for e in &report.entries {
        s.push_str(&format!(
            "{:<14} {:<10} {:>12.4} {:>14.1} {:>10} {:>16.3e}\n",
            format!("{}x{}x{}", e.size.0, e.size.1, e.size.2),
            e.method,
            e.median_ms,
            e.throughput_per_s,
            e.param_count,
            e.max_abs_dev_vs_bilinear,
        ));
    }
    s
}
