//! Brute-force scalar oracles, independent of the library kernels: the
//! oracles materialize padded buffers and walk every index instead of
//! bounds-checking inside accumulation loops.

#![allow(dead_code)]

use dassf_core::ops::PoolMode;
use dassf_core::tensor::Tensor;
use dassf_core::weights::Rng64;

pub fn rand_tensor(rng: &mut Rng64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| lo + (hi - lo) * rng.uniform()).unwrap()
}

fn at4(t: &Tensor, n: usize, c: usize, y: usize, x: usize) -> f64 {
    let s = t.shape();
    t.data()[((n * s[1] + c) * s[2] + y) * s[3] + x] as f64
}

/// Zero-pad a (N, C, H, W) tensor into an f64 buffer.
fn pad4(x: &Tensor, pad: usize) -> (Vec<f64>, usize, usize) {
    let (n, c, h, w) = x.dims4().unwrap();
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0f64; n * c * ph * pw];
    for ni in 0..n {
        for ci in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out[((ni * c + ci) * ph + y + pad) * pw + xx + pad] = at4(x, ni, ci, y, xx);
                }
            }
        }
    }
    (out, ph, pw)
}

pub fn conv2d_oracle(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
    groups: usize,
) -> Tensor {
    let (n, c, _, _) = x.dims4().unwrap();
    let (oc, wc, kh, kw) = w.dims4().unwrap();
    let (px, ph, pw) = pad4(x, pad);
    let oh = (ph - kh) / stride + 1;
    let ow = (pw - kw) / stride + 1;
    let cg = c / groups;
    let ocg = oc / groups;
    Tensor::from_fn(&[n, oc, oh, ow], |flat| {
        let xo = flat % ow;
        let yo = flat / ow % oh;
        let oci = flat / (ow * oh) % oc;
        let ni = flat / (ow * oh * oc);
        let g = oci / ocg;
        let mut acc = bias.map_or(0.0, |b| b[oci] as f64);
        for ic in 0..cg {
            let ici = g * cg + ic;
            for ky in 0..kh {
                for kx in 0..kw {
                    let xv = px[((ni * c + ici) * ph + yo * stride + ky) * pw + xo * stride + kx];
                    let wv = w.data()[((oci * wc + ic) * kh + ky) * kw + kx] as f64;
                    acc += xv * wv;
                }
            }
        }
        acc
    })
    .unwrap()
}

pub fn conv3d_oracle(
    x: &Tensor,
    w: &Tensor,
    bias: Option<&[f32]>,
    stride: usize,
    pad: usize,
) -> Tensor {
    let (n, c, d, h, wd) = x.dims5().unwrap();
    let (oc, _, kd, kh, kw) = w.dims5().unwrap();
    let (pd, ph, pw) = (d + 2 * pad, h + 2 * pad, wd + 2 * pad);
    let mut padded = vec![0.0f64; n * c * pd * ph * pw];
    for ni in 0..n {
        for ci in 0..c {
            for z in 0..d {
                for y in 0..h {
                    for xx in 0..wd {
                        padded[(((ni * c + ci) * pd + z + pad) * ph + y + pad) * pw + xx + pad] =
                            x.data()[(((ni * c + ci) * d + z) * h + y) * wd + xx] as f64;
                    }
                }
            }
        }
    }
    let od = (pd - kd) / stride + 1;
    let oh = (ph - kh) / stride + 1;
    let ow = (pw - kw) / stride + 1;
    Tensor::from_fn(&[n, oc, od, oh, ow], |flat| {
        let xo = flat % ow;
        let yo = flat / ow % oh;
        let zo = flat / (ow * oh) % od;
        let oci = flat / (ow * oh * od) % oc;
        let ni = flat / (ow * oh * od * oc);
        let mut acc = bias.map_or(0.0, |b| b[oci] as f64);
        for ic in 0..c {
            for kz in 0..kd {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let xv = padded[(((ni * c + ic) * pd + zo * stride + kz) * ph
                            + yo * stride
                            + ky)
                            * pw
                            + xo * stride
                            + kx];
                        let wv =
                            w.data()[(((oci * c + ic) * kd + kz) * kh + ky) * kw + kx] as f64;
                        acc += xv * wv;
                    }
                }
            }
        }
        acc
    })
    .unwrap()
}

pub fn pool2d_oracle(x: &Tensor, mode: PoolMode, k: usize, stride: usize) -> Tensor {
    let (n, c, h, w) = x.dims4().unwrap();
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    Tensor::from_fn(&[n, c, oh, ow], |flat| {
        let xo = flat % ow;
        let yo = flat / ow % oh;
        let ci = flat / (ow * oh) % c;
        let ni = flat / (ow * oh * c);
        let mut vals = Vec::with_capacity(k * k);
        for ky in 0..k {
            for kx in 0..k {
                vals.push(at4(x, ni, ci, yo * stride + ky, xo * stride + kx));
            }
        }
        match mode {
            PoolMode::Max => vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            PoolMode::Avg => vals.iter().sum::<f64>() / vals.len() as f64,
        }
    })
    .unwrap()
}

pub fn nearest_oracle(x: &Tensor, factor: usize) -> Tensor {
    let (n, c, h, w) = x.dims4().unwrap();
    Tensor::from_fn(&[n, c, h * factor, w * factor], |flat| {
        let ow = w * factor;
        let oh = h * factor;
        let xo = flat % ow;
        let yo = flat / ow % oh;
        let ci = flat / (ow * oh) % c;
        let ni = flat / (ow * oh * c);
        at4(x, ni, ci, yo / factor, xo / factor)
    })
    .unwrap()
}

/// Scalar-at-a-time bilinear interpolation at one normalized coordinate
/// under the align-corners convention.
pub fn bilinear_point_oracle(x: &Tensor, n: usize, c: usize, gx: f64, gy: f64) -> f64 {
    let (_, _, h, w) = x.dims4().unwrap();
    let px = (gx + 1.0) * (w as f64 - 1.0) / 2.0;
    let py = (gy + 1.0) * (h as f64 - 1.0) / 2.0;
    let x0 = px.floor().clamp(0.0, (w as f64 - 2.0).max(0.0)) as usize;
    let y0 = py.floor().clamp(0.0, (h as f64 - 2.0).max(0.0)) as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = if w > 1 { px - x0 as f64 } else { 0.0 };
    let fy = if h > 1 { py - y0 as f64 } else { 0.0 };
    at4(x, n, c, y0, x0) * (1.0 - fy) * (1.0 - fx)
        + at4(x, n, c, y0, x1) * (1.0 - fy) * fx
        + at4(x, n, c, y1, x0) * fy * (1.0 - fx)
        + at4(x, n, c, y1, x1) * fy * fx
}

/// Direct per-pixel bilinear s-times resize (align-corners).
pub fn bilinear_resize_oracle(x: &Tensor, s: usize) -> Tensor {
    let (n, c, h, w) = x.dims4().unwrap();
    let (oh, ow) = (h * s, w * s);
    Tensor::from_fn(&[n, c, oh, ow], |flat| {
        let xo = flat % ow;
        let yo = flat / ow % oh;
        let ci = flat / (ow * oh) % c;
        let ni = flat / (ow * oh * c);
        let gx = if ow > 1 && w > 1 {
            2.0 * xo as f64 / (ow as f64 - 1.0) - 1.0
        } else {
            0.0
        };
        let gy = if oh > 1 && h > 1 {
            2.0 * yo as f64 / (oh as f64 - 1.0) - 1.0
        } else {
            0.0
        };
        bilinear_point_oracle(x, ni, ci, gx, gy)
    })
    .unwrap()
}

// ---------------------------------------------------------------------------
// Randomized oracle-equivalence runners (shared by the regular tests and
// the acceptance suite, which runs them at higher counts)
// ---------------------------------------------------------------------------

pub struct OracleStats {
    pub cases: usize,
    pub max_abs_err: f64,
}

fn dim(rng: &mut Rng64, lo: usize, hi: usize) -> usize {
    lo + (rng.uniform() * (hi - lo + 1) as f64) as usize
}

pub fn run_conv2d_cases(cases: usize, seed: u64) -> OracleStats {
    let mut rng = Rng64::for_tensor(seed, "oracle.conv2d");
    let mut max_err = 0.0f64;
    for _ in 0..cases {
        let groups = [1, 2][dim(&mut rng, 0, 1)];
        let cg = dim(&mut rng, 1, 3);
        let c = cg * groups;
        let ocg = dim(&mut rng, 1, 3);
        let oc = ocg * groups;
        let k = dim(&mut rng, 1, 3);
        let stride = dim(&mut rng, 1, 2);
        let pad = dim(&mut rng, 0, 1);
        let h = dim(&mut rng, k.max(2), 9).max(k);
        let w = dim(&mut rng, k.max(2), 9).max(k);
        let n = dim(&mut rng, 1, 2);
        let x = rand_tensor(&mut rng, &[n, c, h, w], -1.0, 1.0);
        let wt = rand_tensor(&mut rng, &[oc, cg, k, k], -1.0, 1.0);
        let bias: Vec<f32> = (0..oc).map(|_| rng.uniform() as f32 - 0.5).collect();
        let p = dassf_core::ConvParams::with(wt.clone(), Some(bias.clone()), stride, pad, groups)
            .unwrap();
        let got = dassf_core::ops::conv2d(&x, &p).unwrap();
        let want = conv2d_oracle(&x, &wt, Some(&bias), stride, pad, groups);
        max_err = max_err.max(got.max_abs_diff(&want).unwrap());
    }
    OracleStats {
        cases,
        max_abs_err: max_err,
    }
}

pub fn run_conv3d_cases(cases: usize, seed: u64) -> OracleStats {
    let mut rng = Rng64::for_tensor(seed, "oracle.conv3d");
    let mut max_err = 0.0f64;
    for _ in 0..cases {
        let c = dim(&mut rng, 1, 3);
        let oc = dim(&mut rng, 1, 3);
        let k = dim(&mut rng, 1, 3);
        let stride = dim(&mut rng, 1, 2);
        let pad = dim(&mut rng, 0, 1);
        let d = dim(&mut rng, k, 5).max(k);
        let h = dim(&mut rng, k, 7).max(k);
        let w = dim(&mut rng, k, 7).max(k);
        let x = rand_tensor(&mut rng, &[1, c, d, h, w], -1.0, 1.0);
        let wt = rand_tensor(&mut rng, &[oc, c, k, k, k], -1.0, 1.0);
        let p = dassf_core::ConvParams::with(wt.clone(), None, stride, pad, 1).unwrap();
        let got = dassf_core::ops::conv3d(&x, &p).unwrap();
        let want = conv3d_oracle(&x, &wt, None, stride, pad);
        max_err = max_err.max(got.max_abs_diff(&want).unwrap());
    }
    OracleStats {
        cases,
        max_abs_err: max_err,
    }
}

pub fn run_pool_cases(cases: usize, seed: u64) -> OracleStats {
    let mut rng = Rng64::for_tensor(seed, "oracle.pool");
    let mut max_err = 0.0f64;
    for i in 0..cases {
        let mode = if i % 2 == 0 { PoolMode::Max } else { PoolMode::Avg };
        let k = dim(&mut rng, 1, 4);
        let stride = dim(&mut rng, 1, 3);
        let h = dim(&mut rng, k, 9).max(k);
        let w = dim(&mut rng, k, 9).max(k);
        let n = dim(&mut rng, 1, 2);
        let c = dim(&mut rng, 1, 3);
        let x = rand_tensor(&mut rng, &[n, c, h, w], -2.0, 2.0);
        let got = dassf_core::ops::pool2d(&x, mode, k, stride).unwrap();
        let want = pool2d_oracle(&x, mode, k, stride);
        max_err = max_err.max(got.max_abs_diff(&want).unwrap());
    }
    OracleStats {
        cases,
        max_abs_err: max_err,
    }
}

pub fn run_nearest_cases(cases: usize, seed: u64) -> OracleStats {
    let mut rng = Rng64::for_tensor(seed, "oracle.nearest");
    let mut max_err = 0.0f64;
    for _ in 0..cases {
        let factor = dim(&mut rng, 1, 4);
        let c = dim(&mut rng, 1, 3);
        let h = dim(&mut rng, 1, 8);
        let w = dim(&mut rng, 1, 8);
        let x = rand_tensor(&mut rng, &[1, c, h, w], -1.0, 1.0);
        let got = dassf_core::ops::resize_nearest(&x, factor).unwrap();
        let want = nearest_oracle(&x, factor);
        max_err = max_err.max(got.max_abs_diff(&want).unwrap());
    }
    OracleStats {
        cases,
        max_abs_err: max_err,
    }
}

pub fn run_grid_sample_cases(cases: usize, seed: u64) -> OracleStats {
    let mut rng = Rng64::for_tensor(seed, "oracle.grid_sample");
    let mut max_err = 0.0f64;
    for _ in 0..cases {
        let c = dim(&mut rng, 1, 3);
        let h = dim(&mut rng, 1, 9);
        let w = dim(&mut rng, 1, 9);
        let x = rand_tensor(&mut rng, &[1, c, h, w], -1.0, 1.0);
        let (gh, gw) = (dim(&mut rng, 1, 5), dim(&mut rng, 1, 5));
        let coords = rand_tensor(&mut rng, &[1, 2, gh, gw], -1.0, 1.0);
        let got = dassf_core::ops::sample_bilinear_grid(&x, &coords).unwrap();
        for ci in 0..c {
            for yo in 0..gh {
                for xo in 0..gw {
                    let gx = coords.data()[yo * gw + xo] as f64;
                    let gy = coords.data()[gh * gw + yo * gw + xo] as f64;
                    let want = bilinear_point_oracle(&x, 0, ci, gx, gy);
                    let gotv = got.data()[(ci * gh + yo) * gw + xo] as f64;
                    max_err = max_err.max((gotv - want).abs());
                }
            }
        }
    }
    OracleStats {
        cases,
        max_abs_err: max_err,
    }
}
