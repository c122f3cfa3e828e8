//! Primitive tensor operators.
//!
//! Every kernel is a direct (naive-order but cache-reasonable) loop with
//! f64 accumulation, generic over the storage element so the autodiff
//! tape can rerun the exact same code in 64-bit. Public `Tensor`
//! wrappers at the bottom fix the element to f32 and carry the
//! documented shape contracts.

use crate::error::{Error, Result};
use crate::tensor::{ConvParams, Elem, Tensor, TensorBase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Max,
    Avg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Silu,
    Sigmoid,
    HardSigmoid,
}

impl Activation {
    #[inline]
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Silu => x * sigmoid(x),
            Activation::Sigmoid => sigmoid(x),
            // clamp((x + 1) / 2, 0, 1)
            Activation::HardSigmoid => ((x + 1.0) / 2.0).clamp(0.0, 1.0),
        }
    }

    /// Derivative at `x` (one-sided value at the kinks; relu'(0) = 0,
    /// hard_sigmoid' = 0 outside the open interval (-1, 1)).
    #[inline]
    pub fn grad(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = sigmoid(x);
                s + x * s * (1.0 - s)
            }
            Activation::Sigmoid => {
                let s = sigmoid(x);
                s * (1.0 - s)
            }
            Activation::HardSigmoid => {
                if x > -1.0 && x < 1.0 {
                    0.5
                } else {
                    0.0
                }
            }
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn row_major_strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

fn conv_out_extent(axis: &'static str, input: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < k {
        return Err(Error::dim(
            axis,
            format!("extent {} (+2*{} pad) smaller than kernel {}", input, pad, k),
        ));
    }
    Ok((padded - k) / stride + 1)
}

pub fn conv2d_g<E: Elem>(
    x: &TensorBase<E>,
    w: &TensorBase<E>,
    bias: Option<&[E]>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<TensorBase<E>> {
    let (n, c, h, wd) = x.dims4()?;
    let (oc, wc, kh, kw) = w.dims4()?;
    if c % groups != 0 || oc % groups != 0 {
        return Err(Error::dim(
            "channel",
            format!("channels {} / out {} not divisible by groups {}", c, oc, groups),
        ));
    }
    if wc != c / groups {
        return Err(Error::dim(
            "channel",
            format!(
                "input has {} channels but kernel expects {} (groups {})",
                c,
                wc * groups,
                groups
            ),
        ));
    }
    if let Some(b) = bias {
        if b.len() != oc {
            return Err(Error::dim("bias", format!("{} != out channels {}", b.len(), oc)));
        }
    }
    let oh = conv_out_extent("height", h, kh, stride, padding)?;
    let ow = conv_out_extent("width", wd, kw, stride, padding)?;

    let mut out = TensorBase::<E>::zeros(&[n, oc, oh, ow])?;
    let xd = x.data();
    let wdt = w.data();
    let od = out.data_mut();
    let cg = c / groups;
    let ocg = oc / groups;

    for ni in 0..n {
        for g in 0..groups {
            for ocl in 0..ocg {
                let oci = g * ocg + ocl;
                let b0 = bias.map_or(0.0, |b| b[oci].to_f64());
                for yo in 0..oh {
                    for xo in 0..ow {
                        let mut acc = b0;
                        for ic in 0..cg {
                            let ici = g * cg + ic;
                            let xbase = ((ni * c + ici) * h) * wd;
                            let wbase = ((oci * cg + ic) * kh) * kw;
                            for ky in 0..kh {
                                let yi = (yo * stride + ky) as isize - padding as isize;
                                if yi < 0 || yi >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let xi = (xo * stride + kx) as isize - padding as isize;
                                    if xi < 0 || xi >= wd as isize {
                                        continue;
                                    }
                                    acc += xd[xbase + yi as usize * wd + xi as usize].to_f64()
                                        * wdt[wbase + ky * kw + kx].to_f64();
                                }
                            }
                        }
                        od[((ni * oc + oci) * oh + yo) * ow + xo] = E::from_f64(acc);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `conv2d_g` with respect to input, weight and bias.
pub fn conv2d_backward_g<E: Elem>(
    x: &TensorBase<E>,
    w: &TensorBase<E>,
    grad_out: &TensorBase<E>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<(TensorBase<E>, TensorBase<E>, Vec<E>)> {
    let (n, c, h, wd) = x.dims4()?;
    let (oc, _, kh, kw) = w.dims4()?;
    let (_, _, oh, ow) = grad_out.dims4()?;
    let cg = c / groups;
    let ocg = oc / groups;

    let mut dx = vec![0.0f64; x.len()];
    let mut dw = vec![0.0f64; w.len()];
    let mut db = vec![0.0f64; oc];
    let xd = x.data();
    let wdt = w.data();
    let gd = grad_out.data();

    for ni in 0..n {
        for g in 0..groups {
            for ocl in 0..ocg {
                let oci = g * ocg + ocl;
                for yo in 0..oh {
                    for xo in 0..ow {
                        let go = gd[((ni * oc + oci) * oh + yo) * ow + xo].to_f64();
                        if go == 0.0 {
                            continue;
                        }
                        db[oci] += go;
                        for ic in 0..cg {
                            let ici = g * cg + ic;
                            let xbase = ((ni * c + ici) * h) * wd;
                            let wbase = ((oci * cg + ic) * kh) * kw;
                            for ky in 0..kh {
                                let yi = (yo * stride + ky) as isize - padding as isize;
                                if yi < 0 || yi >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let xi = (xo * stride + kx) as isize - padding as isize;
                                    if xi < 0 || xi >= wd as isize {
                                        continue;
                                    }
                                    let xi_flat = xbase + yi as usize * wd + xi as usize;
                                    let wi_flat = wbase + ky * kw + kx;
                                    dx[xi_flat] += go * wdt[wi_flat].to_f64();
                                    dw[wi_flat] += go * xd[xi_flat].to_f64();
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let dx = TensorBase::from_vec(x.shape(), dx.into_iter().map(E::from_f64).collect())?;
    let dw = TensorBase::from_vec(w.shape(), dw.into_iter().map(E::from_f64).collect())?;
    Ok((dx, dw, db.into_iter().map(E::from_f64).collect()))
}

pub fn conv3d_g<E: Elem>(
    x: &TensorBase<E>,
    w: &TensorBase<E>,
    bias: Option<&[E]>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<TensorBase<E>> {
    let (n, c, d, h, wd) = x.dims5()?;
    let (oc, wc, kd, kh, kw) = w.dims5()?;
    if c % groups != 0 || oc % groups != 0 || wc != c / groups {
        return Err(Error::dim(
            "channel",
            format!("channels {} vs kernel {}x{} groups {}", c, oc, wc, groups),
        ));
    }
    let od_ = conv_out_extent("depth", d, kd, stride, padding)?;
    let oh = conv_out_extent("height", h, kh, stride, padding)?;
    let ow = conv_out_extent("width", wd, kw, stride, padding)?;

    let mut out = TensorBase::<E>::zeros(&[n, oc, od_, oh, ow])?;
    let xd = x.data();
    let wdt = w.data();
    let odata = out.data_mut();
    let cg = c / groups;
    let ocg = oc / groups;

    for ni in 0..n {
        for g in 0..groups {
            for ocl in 0..ocg {
                let oci = g * ocg + ocl;
                let b0 = bias.map_or(0.0, |b| b[oci].to_f64());
                for zo in 0..od_ {
                    for yo in 0..oh {
                        for xo in 0..ow {
                            let mut acc = b0;
                            for ic in 0..cg {
                                let ici = g * cg + ic;
                                for kz in 0..kd {
                                    let zi = (zo * stride + kz) as isize - padding as isize;
                                    if zi < 0 || zi >= d as isize {
                                        continue;
                                    }
                                    for ky in 0..kh {
                                        let yi = (yo * stride + ky) as isize - padding as isize;
                                        if yi < 0 || yi >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let xi =
                                                (xo * stride + kx) as isize - padding as isize;
                                            if xi < 0 || xi >= wd as isize {
                                                continue;
                                            }
                                            let xf = (((ni * c + ici) * d + zi as usize) * h
                                                + yi as usize)
                                                * wd
                                                + xi as usize;
                                            let wf = (((oci * cg + ic) * kd + kz) * kh + ky) * kw
                                                + kx;
                                            acc += xd[xf].to_f64() * wdt[wf].to_f64();
                                        }
                                    }
                                }
                            }
                            odata[(((ni * oc + oci) * od_ + zo) * oh + yo) * ow + xo] =
                                E::from_f64(acc);
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn conv3d_backward_g<E: Elem>(
    x: &TensorBase<E>,
    w: &TensorBase<E>,
    grad_out: &TensorBase<E>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<(TensorBase<E>, TensorBase<E>, Vec<E>)> {
    let (n, c, d, h, wd) = x.dims5()?;
    let (oc, _, kd, kh, kw) = w.dims5()?;
    let (_, _, od_, oh, ow) = grad_out.dims5()?;
    let cg = c / groups;
    let ocg = oc / groups;

    let mut dx = vec![0.0f64; x.len()];
    let mut dw = vec![0.0f64; w.len()];
    let mut db = vec![0.0f64; oc];
    let xd = x.data();
    let wdt = w.data();
    let gd = grad_out.data();

    for ni in 0..n {
        for g in 0..groups {
            for ocl in 0..ocg {
                let oci = g * ocg + ocl;
                for zo in 0..od_ {
                    for yo in 0..oh {
                        for xo in 0..ow {
                            let go =
                                gd[(((ni * oc + oci) * od_ + zo) * oh + yo) * ow + xo].to_f64();
                            if go == 0.0 {
                                continue;
                            }
                            db[oci] += go;
                            for ic in 0..cg {
                                let ici = g * cg + ic;
                                for kz in 0..kd {
                                    let zi = (zo * stride + kz) as isize - padding as isize;
                                    if zi < 0 || zi >= d as isize {
                                        continue;
                                    }
                                    for ky in 0..kh {
                                        let yi = (yo * stride + ky) as isize - padding as isize;
                                        if yi < 0 || yi >= h as isize {
                                            continue;
                                        }
                                        for kx in 0..kw {
                                            let xi =
                                                (xo * stride + kx) as isize - padding as isize;
                                            if xi < 0 || xi >= wd as isize {
                                                continue;
                                            }
                                            let xf = (((ni * c + ici) * d + zi as usize) * h
                                                + yi as usize)
                                                * wd
                                                + xi as usize;
                                            let wf = (((oci * cg + ic) * kd + kz) * kh + ky) * kw
                                                + kx;
                                            dx[xf] += go * wdt[wf].to_f64();
                                            dw[wf] += go * xd[xf].to_f64();
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let dx = TensorBase::from_vec(x.shape(), dx.into_iter().map(E::from_f64).collect())?;
    let dw = TensorBase::from_vec(w.shape(), dw.into_iter().map(E::from_f64).collect())?;
    Ok((dx, dw, db.into_iter().map(E::from_f64).collect()))
}

// ---------------------------------------------------------------------------
// Pooling / resizing
// ---------------------------------------------------------------------------

/// Windowed max/avg pooling. For max mode also returns, per output cell,
/// the flat input index of the chosen element (first maximal element in
/// row-major order on ties) so the backward pass can route gradients.
pub fn pool2d_g<E: Elem>(
    x: &TensorBase<E>,
    mode: PoolMode,
    k: usize,
    stride: usize,
) -> Result<(TensorBase<E>, Option<Vec<usize>>)> {
    let (n, c, h, w) = x.dims4()?;
    if k == 0 || stride == 0 {
        return Err(Error::param("k/stride", "must be >= 1"));
    }
    if k > h {
        return Err(Error::dim("height", format!("pool window {} > extent {}", k, h)));
    }
    if k > w {
        return Err(Error::dim("width", format!("pool window {} > extent {}", k, w)));
    }
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = TensorBase::<E>::zeros(&[n, c, oh, ow])?;
    let mut arg = if mode == PoolMode::Max {
        Some(vec![0usize; out.len()])
    } else {
        None
    };
    let xd = x.data();
    let od = out.data_mut();

    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            for yo in 0..oh {
                for xo in 0..ow {
                    let oflat = ((ni * c + ci) * oh + yo) * ow + xo;
                    match mode {
                        PoolMode::Avg => {
                            let mut acc = 0.0f64;
                            for ky in 0..k {
                                for kx in 0..k {
                                    acc += xd[base + (yo * stride + ky) * w + xo * stride + kx]
                                        .to_f64();
                                }
                            }
                            od[oflat] = E::from_f64(acc / (k * k) as f64);
                        }
                        PoolMode::Max => {
                            let mut best = f64::NEG_INFINITY;
                            let mut best_i = base + yo * stride * w + xo * stride;
                            for ky in 0..k {
                                for kx in 0..k {
                                    let i = base + (yo * stride + ky) * w + xo * stride + kx;
                                    let v = xd[i].to_f64();
                                    if v > best {
                                        best = v;
                                        best_i = i;
                                    }
                                }
                            }
                            od[oflat] = E::from_f64(best);
                            arg.as_mut().unwrap()[oflat] = best_i;
                        }
                    }
                }
            }
        }
    }
    Ok((out, arg))
}

/// Nearest-neighbour resize to an explicit output grid; source index is
/// `floor(i * in / out)`. Covers both integer upsampling (factor f maps
/// to `floor(i / f)`) and integer decimation.
pub fn resize_nearest_to_g<E: Elem>(
    x: &TensorBase<E>,
    oh: usize,
    ow: usize,
) -> Result<TensorBase<E>> {
    let (n, c, h, w) = x.dims4()?;
    if oh == 0 || ow == 0 {
        return Err(Error::param("size", "output extents must be >= 1"));
    }
    let mut out = TensorBase::<E>::zeros(&[n, c, oh, ow])?;
    let xd = x.data();
    let od = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let obase = (ni * c + ci) * oh * ow;
            for yo in 0..oh {
                let yi = (yo * h / oh).min(h - 1);
                for xo in 0..ow {
                    let xi = (xo * w / ow).min(w - 1);
                    od[obase + yo * ow + xo] = xd[base + yi * w + xi];
                }
            }
        }
    }
    Ok(out)
}

/// Plain bilinear resize under the align-corners convention, computed
/// directly per output pixel. Kept independent of `sample_bilinear_grid`
/// so the two can check each other.
pub fn resize_bilinear_g<E: Elem>(x: &TensorBase<E>, factor: usize) -> Result<TensorBase<E>> {
    let (n, c, h, w) = x.dims4()?;
    if factor < 1 {
        return Err(Error::param("factor", "must be >= 1"));
    }
    let oh = h * factor;
    let ow = w * factor;
    let mut out = TensorBase::<E>::zeros(&[n, c, oh, ow])?;
    let xd = x.data();
    let od = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            let base = (ni * c + ci) * h * w;
            let obase = (ni * c + ci) * oh * ow;
            for yo in 0..oh {
                let py = if oh > 1 {
                    yo as f64 * (h - 1) as f64 / (oh - 1) as f64
                } else {
                    0.0
                };
                let y0 = (py.floor() as usize).min(h.saturating_sub(2));
                let fy = if h > 1 { py - y0 as f64 } else { 0.0 };
                for xo in 0..ow {
                    let px = if ow > 1 {
                        xo as f64 * (w - 1) as f64 / (ow - 1) as f64
                    } else {
                        0.0
                    };
                    let x0 = (px.floor() as usize).min(w.saturating_sub(2));
                    let fx = if w > 1 { px - x0 as f64 } else { 0.0 };
                    let x1 = (x0 + 1).min(w - 1);
                    let y1 = (y0 + 1).min(h - 1);
                    let v = xd[base + y0 * w + x0].to_f64() * (1.0 - fy) * (1.0 - fx)
                        + xd[base + y0 * w + x1].to_f64() * (1.0 - fy) * fx
                        + xd[base + y1 * w + x0].to_f64() * fy * (1.0 - fx)
                        + xd[base + y1 * w + x1].to_f64() * fy * fx;
                    od[obase + yo * ow + xo] = E::from_f64(v);
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Grid sampling
// ---------------------------------------------------------------------------

/// Map a normalized coordinate in [-1, 1] to pixel units under the
/// align-corners convention (-1 is the centre of the first pixel, +1 the
/// centre of the last).
#[inline]
fn norm_to_px(g: f64, extent: usize) -> f64 {
    (g + 1.0) * (extent as f64 - 1.0) / 2.0
}

#[inline]
fn bilinear_cell(px: f64, extent: usize) -> (usize, usize, f64) {
    if extent == 1 {
        return (0, 0, 0.0);
    }
    let lo = (px.floor() as isize).clamp(0, extent as isize - 2) as usize;
    (lo, lo + 1, px - lo as f64)
}

/// Bilinear sampling at normalized coordinates.
///
/// `coords` is (N, 2, H', W') with channel 0 the x (width) coordinate and
/// channel 1 the y (height) coordinate, both in [-1, 1]; anything outside
/// is a contract violation.
pub fn sample_bilinear_grid_g<E: Elem>(
    x: &TensorBase<E>,
    coords: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    let (n, c, h, w) = x.dims4()?;
    let (cn, two, gh, gw) = coords.dims4()?;
    if cn != n {
        return Err(Error::dim("batch", format!("coords batch {} != input batch {}", cn, n)));
    }
    if two != 2 {
        return Err(Error::dim("channel", format!("coords must have 2 channels, got {}", two)));
    }
    let mut out = TensorBase::<E>::zeros(&[n, c, gh, gw])?;
    let xd = x.data();
    let cd = coords.data();
    let od = out.data_mut();

    for ni in 0..n {
        let cbase = ni * 2 * gh * gw;
        for yo in 0..gh {
            for xo in 0..gw {
                let gx = cd[cbase + yo * gw + xo].to_f64();
                let gy = cd[cbase + gh * gw + yo * gw + xo].to_f64();
                if !(-1.0..=1.0).contains(&gx) || !(-1.0..=1.0).contains(&gy) {
                    return Err(Error::Contract(format!(
                        "sampling coordinate ({}, {}) outside [-1, 1] at ({}, {})",
                        gx, gy, yo, xo
                    )));
                }
                let (x0, x1, fx) = bilinear_cell(norm_to_px(gx, w), w);
                let (y0, y1, fy) = bilinear_cell(norm_to_px(gy, h), h);
                for ci in 0..c {
                    let base = (ni * c + ci) * h * w;
                    let v = xd[base + y0 * w + x0].to_f64() * (1.0 - fy) * (1.0 - fx)
                        + xd[base + y0 * w + x1].to_f64() * (1.0 - fy) * fx
                        + xd[base + y1 * w + x0].to_f64() * fy * (1.0 - fx)
                        + xd[base + y1 * w + x1].to_f64() * fy * fx;
                    od[((ni * c + ci) * gh + yo) * gw + xo] = E::from_f64(v);
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of `sample_bilinear_grid_g` with respect to the source map
/// and the coordinate grid.
pub fn sample_bilinear_grid_backward_g<E: Elem>(
    x: &TensorBase<E>,
    coords: &TensorBase<E>,
    grad_out: &TensorBase<E>,
) -> Result<(TensorBase<E>, TensorBase<E>)> {
    let (n, c, h, w) = x.dims4()?;
    let (_, _, gh, gw) = coords.dims4()?;
    let mut dx = vec![0.0f64; x.len()];
    let mut dc = vec![0.0f64; coords.len()];
    let xd = x.data();
    let cd = coords.data();
    let gd = grad_out.data();

    for ni in 0..n {
        let cbase = ni * 2 * gh * gw;
        for yo in 0..gh {
            for xo in 0..gw {
                let gx = cd[cbase + yo * gw + xo].to_f64();
                let gy = cd[cbase + gh * gw + yo * gw + xo].to_f64();
                let (x0, x1, fx) = bilinear_cell(norm_to_px(gx, w), w);
                let (y0, y1, fy) = bilinear_cell(norm_to_px(gy, h), h);
                // d px / d g under align-corners
                let sx = (w as f64 - 1.0) / 2.0;
                let sy = (h as f64 - 1.0) / 2.0;
                let mut dfx = 0.0f64;
                let mut dfy = 0.0f64;
                for ci in 0..c {
                    let base = (ni * c + ci) * h * w;
                    let go = gd[((ni * c + ci) * gh + yo) * gw + xo].to_f64();
                    if go == 0.0 {
                        continue;
                    }
                    let v00 = xd[base + y0 * w + x0].to_f64();
                    let v01 = xd[base + y0 * w + x1].to_f64();
                    let v10 = xd[base + y1 * w + x0].to_f64();
                    let v11 = xd[base + y1 * w + x1].to_f64();
                    dx[base + y0 * w + x0] += go * (1.0 - fy) * (1.0 - fx);
                    dx[base + y0 * w + x1] += go * (1.0 - fy) * fx;
                    dx[base + y1 * w + x0] += go * fy * (1.0 - fx);
                    dx[base + y1 * w + x1] += go * fy * fx;
                    dfx += go * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                    dfy += go * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                }
                if w > 1 {
                    dc[cbase + yo * gw + xo] += dfx * sx;
                }
                if h > 1 {
                    dc[cbase + gh * gw + yo * gw + xo] += dfy * sy;
                }
            }
        }
    }
    let dx = TensorBase::from_vec(x.shape(), dx.into_iter().map(E::from_f64).collect())?;
    let dc = TensorBase::from_vec(coords.shape(), dc.into_iter().map(E::from_f64).collect())?;
    Ok((dx, dc))
}

/// Bilinear sampling at absolute pixel coordinates with zero padding
/// outside the map (deformable-convolution semantics). `coords` is
/// (N, 2, H', W'): channel 0 = x in pixels, channel 1 = y.
pub fn sample_bilinear_px_g<E: Elem>(
    x: &TensorBase<E>,
    coords: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    let (n, c, h, w) = x.dims4()?;
    let (cn, two, gh, gw) = coords.dims4()?;
    if cn != n || two != 2 {
        return Err(Error::dim("channel", "pixel coords must be (N, 2, H', W')"));
    }
    let mut out = TensorBase::<E>::zeros(&[n, c, gh, gw])?;
    let xd = x.data();
    let cd = coords.data();
    let od = out.data_mut();

    for ni in 0..n {
        let cbase = ni * 2 * gh * gw;
        for yo in 0..gh {
            for xo in 0..gw {
                let px = cd[cbase + yo * gw + xo].to_f64();
                let py = cd[cbase + gh * gw + yo * gw + xo].to_f64();
                if px <= -1.0 || px >= w as f64 || py <= -1.0 || py >= h as f64 {
                    continue; // fully outside: output stays zero
                }
                let x0 = px.floor() as isize;
                let y0 = py.floor() as isize;
                let fx = px - x0 as f64;
                let fy = py - y0 as f64;
                for ci in 0..c {
                    let base = (ni * c + ci) * h * w;
                    let tap = |yy: isize, xx: isize| -> f64 {
                        if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                            0.0
                        } else {
                            xd[base + yy as usize * w + xx as usize].to_f64()
                        }
                    };
                    let v = tap(y0, x0) * (1.0 - fy) * (1.0 - fx)
                        + tap(y0, x0 + 1) * (1.0 - fy) * fx
                        + tap(y0 + 1, x0) * fy * (1.0 - fx)
                        + tap(y0 + 1, x0 + 1) * fy * fx;
                    od[((ni * c + ci) * gh + yo) * gw + xo] = E::from_f64(v);
                }
            }
        }
    }
    Ok(out)
}

pub fn sample_bilinear_px_backward_g<E: Elem>(
    x: &TensorBase<E>,
    coords: &TensorBase<E>,
    grad_out: &TensorBase<E>,
) -> Result<(TensorBase<E>, TensorBase<E>)> {
    let (n, c, h, w) = x.dims4()?;
    let (_, _, gh, gw) = coords.dims4()?;
    let mut dx = vec![0.0f64; x.len()];
    let mut dc = vec![0.0f64; coords.len()];
    let xd = x.data();
    let cd = coords.data();
    let gd = grad_out.data();

    for ni in 0..n {
        let cbase = ni * 2 * gh * gw;
        for yo in 0..gh {
            for xo in 0..gw {
                let px = cd[cbase + yo * gw + xo].to_f64();
                let py = cd[cbase + gh * gw + yo * gw + xo].to_f64();
                if px <= -1.0 || px >= w as f64 || py <= -1.0 || py >= h as f64 {
                    continue;
                }
                let x0 = px.floor() as isize;
                let y0 = py.floor() as isize;
                let fx = px - x0 as f64;
                let fy = py - y0 as f64;
                let inside = |yy: isize, xx: isize| -> Option<usize> {
                    if yy < 0 || yy >= h as isize || xx < 0 || xx >= w as isize {
                        None
                    } else {
                        Some(yy as usize * w + xx as usize)
                    }
                };
                let mut dfx = 0.0f64;
                let mut dfy = 0.0f64;
                for ci in 0..c {
                    let base = (ni * c + ci) * h * w;
                    let go = gd[((ni * c + ci) * gh + yo) * gw + xo].to_f64();
                    if go == 0.0 {
                        continue;
                    }
                    let tap = |yy: isize, xx: isize| inside(yy, xx).map_or(0.0, |i| xd[base + i].to_f64());
                    let (v00, v01, v10, v11) =
                        (tap(y0, x0), tap(y0, x0 + 1), tap(y0 + 1, x0), tap(y0 + 1, x0 + 1));
                    let weights = [
                        (y0, x0, (1.0 - fy) * (1.0 - fx)),
                        (y0, x0 + 1, (1.0 - fy) * fx),
                        (y0 + 1, x0, fy * (1.0 - fx)),
                        (y0 + 1, x0 + 1, fy * fx),
                    ];
                    for (yy, xx, wt) in weights {
                        if let Some(i) = inside(yy, xx) {
                            dx[base + i] += go * wt;
                        }
                    }
                    dfx += go * ((1.0 - fy) * (v01 - v00) + fy * (v11 - v10));
                    dfy += go * ((1.0 - fx) * (v10 - v00) + fx * (v11 - v01));
                }
                dc[cbase + yo * gw + xo] += dfx;
                dc[cbase + gh * gw + yo * gw + xo] += dfy;
            }
        }
    }
    let dx = TensorBase::from_vec(x.shape(), dx.into_iter().map(E::from_f64).collect())?;
    let dc = TensorBase::from_vec(coords.shape(), dc.into_iter().map(E::from_f64).collect())?;
    Ok((dx, dc))
}

// ---------------------------------------------------------------------------
// Depth/space rearrangement
// ---------------------------------------------------------------------------

/// Pixel-shuffle: (N, C·r², H, W) -> (N, C, rH, rW). Channel block index
/// (i, j) of the r×r block maps to output sub-position (i, j).
pub fn depth_to_space_g<E: Elem>(x: &TensorBase<E>, r: usize) -> Result<TensorBase<E>> {
    let (n, c, h, w) = x.dims4()?;
    if r == 0 {
        return Err(Error::param("r", "must be >= 1"));
    }
    if c % (r * r) != 0 {
        return Err(Error::dim(
            "channel",
            format!("channels {} not divisible by r^2 = {}", c, r * r),
        ));
    }
    let oc = c / (r * r);
    let mut out = TensorBase::<E>::zeros(&[n, oc, h * r, w * r])?;
    let xd = x.data();
    let od = out.data_mut();
    for ni in 0..n {
        for co in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let ci = co * r * r + i * r + j;
                    for y in 0..h {
                        for xw in 0..w {
                            od[((ni * oc + co) * (h * r) + y * r + i) * (w * r) + xw * r + j] =
                                xd[((ni * c + ci) * h + y) * w + xw];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Inverse of `depth_to_space_g`: (N, C, rH, rW) -> (N, C·r², H, W).
pub fn space_to_depth_g<E: Elem>(x: &TensorBase<E>, r: usize) -> Result<TensorBase<E>> {
    let (n, c, h, w) = x.dims4()?;
    if r == 0 {
        return Err(Error::param("r", "must be >= 1"));
    }
    if h % r != 0 || w % r != 0 {
        return Err(Error::dim(
            "height",
            format!("spatial extents {}x{} not divisible by r = {}", h, w, r),
        ));
    }
    let (oh, ow) = (h / r, w / r);
    let oc = c * r * r;
    let mut out = TensorBase::<E>::zeros(&[n, oc, oh, ow])?;
    let xd = x.data();
    let od = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            for i in 0..r {
                for j in 0..r {
                    let co = ci * r * r + i * r + j;
                    for y in 0..oh {
                        for xw in 0..ow {
                            od[((ni * oc + co) * oh + y) * ow + xw] =
                                xd[((ni * c + ci) * h + y * r + i) * w + xw * r + j];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reductions and elementwise
// ---------------------------------------------------------------------------

/// Mean over the named axes; reduced axes are kept at size 1 so the
/// result broadcasts back against the input without reshaping.
pub fn reduce_mean_g<E: Elem>(x: &TensorBase<E>, axes: &[usize]) -> Result<TensorBase<E>> {
    let rank = x.rank();
    let mut reduce = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return Err(Error::param("axes", format!("axis {} out of range for rank {}", a, rank)));
        }
        if reduce[a] {
            return Err(Error::param("axes", format!("axis {} listed twice", a)));
        }
        reduce[a] = true;
    }
    let out_shape: Vec<usize> = x
        .shape()
        .iter()
        .enumerate()
        .map(|(i, &d)| if reduce[i] { 1 } else { d })
        .collect();
    let count: usize = x
        .shape()
        .iter()
        .enumerate()
        .filter(|(i, _)| reduce[*i])
        .map(|(_, &d)| d)
        .product();

    let in_strides = row_major_strides(x.shape());
    let out_strides = row_major_strides(&out_shape);
    let mut acc = vec![0.0f64; out_shape.iter().product()];
    for (flat, v) in x.data().iter().enumerate() {
        let mut o = 0usize;
        for ax in 0..rank {
            if !reduce[ax] {
                o += (flat / in_strides[ax] % x.shape()[ax]) * out_strides[ax];
            }
        }
        acc[o] += v.to_f64();
    }
    let inv = 1.0 / count as f64;
    TensorBase::from_vec(&out_shape, acc.into_iter().map(|v| E::from_f64(v * inv)).collect())
}

pub fn sum_all_g<E: Elem>(x: &TensorBase<E>) -> TensorBase<E> {
    let s: f64 = x.data().iter().map(|v| v.to_f64()).sum();
    TensorBase::from_vec(&[1], vec![E::from_f64(s)]).expect("scalar")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Max,
}

impl BinaryOp {
    #[inline]
    fn eval(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            // ties route to the left operand
            BinaryOp::Max => {
                if a >= b {
                    a
                } else {
                    b
                }
            }
        }
    }
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    if a.len() != b.len() {
        return Err(Error::Rank {
            expected: a.len(),
            got: b.len(),
        });
    }
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            if x == y || y == 1 {
                Ok(x.max(y))
            } else if x == 1 {
                Ok(y)
            } else {
                Err(Error::dim("shape", format!("cannot broadcast {:?} with {:?}", a, b)))
            }
        })
        .collect()
}

/// Elementwise binary op with size-1 broadcasting (same rank required).
pub fn binary_g<E: Elem>(
    op: BinaryOp,
    a: &TensorBase<E>,
    b: &TensorBase<E>,
) -> Result<TensorBase<E>> {
    let out_shape = broadcast_shape(a.shape(), b.shape())?;
    let rank = out_shape.len();
    let os = row_major_strides(&out_shape);
    let asx = row_major_strides(a.shape());
    let bsx = row_major_strides(b.shape());
    let n: usize = out_shape.iter().product();
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![E::ZERO; n];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut ai = 0usize;
        let mut bi = 0usize;
        for ax in 0..rank {
            let idx = flat / os[ax] % out_shape[ax];
            if a.shape()[ax] != 1 {
                ai += idx * asx[ax];
            }
            if b.shape()[ax] != 1 {
                bi += idx * bsx[ax];
            }
        }
        *slot = E::from_f64(op.eval(ad[ai].to_f64(), bd[bi].to_f64()));
    }
    TensorBase::from_vec(&out_shape, out)
}

/// Accumulate `grad` (shaped like the broadcast output) back into an
/// operand's shape by summing over broadcast axes.
pub fn reduce_to_shape_g<E: Elem>(
    grad: &TensorBase<E>,
    target: &[usize],
) -> Result<TensorBase<E>> {
    if grad.shape() == target {
        return Ok(grad.clone());
    }
    let rank = target.len();
    let gs = row_major_strides(grad.shape());
    let ts = row_major_strides(target);
    let mut acc = vec![0.0f64; target.iter().product()];
    for (flat, v) in grad.data().iter().enumerate() {
        let mut ti = 0usize;
        for ax in 0..rank {
            if target[ax] != 1 {
                ti += (flat / gs[ax] % grad.shape()[ax]) * ts[ax];
            }
        }
        acc[ti] += v.to_f64();
    }
    TensorBase::from_vec(target, acc.into_iter().map(E::from_f64).collect())
}

pub fn map_g<E: Elem>(x: &TensorBase<E>, f: impl Fn(f64) -> f64) -> TensorBase<E> {
    x.map(f)
}

/// 1-D convolution across the channel axis with zero padding, a single
/// shared filter of odd length, and an optional scalar bias. This is the
/// no-dimensionality-reduction channel interaction used by the channel
/// attention block.
pub fn conv1d_channels_g<E: Elem>(
    x: &TensorBase<E>,
    w: &TensorBase<E>,
    bias: Option<E>,
) -> Result<TensorBase<E>> {
    let (n, c, h, wd) = x.dims4()?;
    if w.rank() != 1 {
        return Err(Error::Rank {
            expected: 1,
            got: w.rank(),
        });
    }
    let k = w.len();
    if k.is_multiple_of(2) {
        return Err(Error::param("k", format!("kernel length {} must be odd", k)));
    }
    let half = (k / 2) as isize;
    let mut out = TensorBase::<E>::zeros(x.shape())?;
    let xd = x.data();
    let wdt = w.data();
    let od = out.data_mut();
    let b0 = bias.map_or(0.0, |b| b.to_f64());
    for ni in 0..n {
        for ci in 0..c as isize {
            for y in 0..h {
                for xw in 0..wd {
                    let mut acc = b0;
                    for t in 0..k as isize {
                        let cc = ci + t - half;
                        if cc < 0 || cc >= c as isize {
                            continue;
                        }
                        acc += xd[((ni * c + cc as usize) * h + y) * wd + xw].to_f64()
                            * wdt[t as usize].to_f64();
                    }
                    od[((ni * c + ci as usize) * h + y) * wd + xw] = E::from_f64(acc);
                }
            }
        }
    }
    Ok(out)
}

pub fn concat_channels_g<E: Elem>(xs: &[&TensorBase<E>]) -> Result<TensorBase<E>> {
    if xs.is_empty() {
        return Err(Error::param("inputs", "concat of zero tensors"));
    }
    let (n, _, h, w) = xs[0].dims4()?;
    let mut total_c = 0usize;
    for x in xs {
        let (xn, xc, xh, xw) = x.dims4()?;
        if xn != n || xh != h || xw != w {
            return Err(Error::dim("shape", "concat inputs must agree on N, H, W"));
        }
        total_c += xc;
    }
    let mut out = TensorBase::<E>::zeros(&[n, total_c, h, w])?;
    let od = out.data_mut();
    let plane = h * w;
    for ni in 0..n {
        let mut coff = 0usize;
        for x in xs {
            let xc = x.dim(1);
            let src = &x.data()[ni * xc * plane..(ni + 1) * xc * plane];
            let dst = &mut od[(ni * total_c + coff) * plane..(ni * total_c + coff + xc) * plane];
            dst.copy_from_slice(src);
            coff += xc;
        }
    }
    Ok(out)
}

pub fn slice_channels_g<E: Elem>(
    x: &TensorBase<E>,
    start: usize,
    len: usize,
) -> Result<TensorBase<E>> {
    let (n, c, h, w) = x.dims4()?;
    if start + len > c {
        return Err(Error::dim(
            "channel",
            format!("slice {}..{} out of {} channels", start, start + len, c),
        ));
    }
    let plane = h * w;
    let mut out = TensorBase::<E>::zeros(&[n, len, h, w])?;
    let od = out.data_mut();
    for ni in 0..n {
        let src = &x.data()[(ni * c + start) * plane..(ni * c + start + len) * plane];
        od[ni * len * plane..(ni + 1) * len * plane].copy_from_slice(src);
    }
    Ok(out)
}

/// Select/permute channels: output channel i copies input channel idx[i].
pub fn gather_channels_g<E: Elem>(x: &TensorBase<E>, idx: &[usize]) -> Result<TensorBase<E>> {
    let (n, c, h, w) = x.dims4()?;
    if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
        return Err(Error::dim("channel", format!("index {} out of {} channels", bad, c)));
    }
    let plane = h * w;
    let mut out = TensorBase::<E>::zeros(&[n, idx.len(), h, w])?;
    let od = out.data_mut();
    for ni in 0..n {
        for (o, &i) in idx.iter().enumerate() {
            let src = &x.data()[(ni * c + i) * plane..(ni * c + i + 1) * plane];
            od[(ni * idx.len() + o) * plane..(ni * idx.len() + o + 1) * plane]
                .copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Stack rank-4 maps along a new depth axis: k × (N, C, H, W) -> (N, C, k, H, W).
pub fn stack_depth_g<E: Elem>(xs: &[&TensorBase<E>]) -> Result<TensorBase<E>> {
    if xs.is_empty() {
        return Err(Error::param("inputs", "stack of zero tensors"));
    }
    let (n, c, h, w) = xs[0].dims4()?;
    for x in xs {
        if x.shape() != xs[0].shape() {
            return Err(Error::dim("shape", "stack inputs must share a shape"));
        }
    }
    let d = xs.len();
    let mut out = TensorBase::<E>::zeros(&[n, c, d, h, w])?;
    let od = out.data_mut();
    let plane = h * w;
    for ni in 0..n {
        for ci in 0..c {
            for (di, x) in xs.iter().enumerate() {
                let src = &x.data()[(ni * c + ci) * plane..(ni * c + ci + 1) * plane];
                let obase = ((ni * c + ci) * d + di) * plane;
                od[obase..obase + plane].copy_from_slice(src);
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Public f32 operator surface
// ---------------------------------------------------------------------------

/// Direct 2-D convolution with zero padding.
pub fn conv2d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    if p.weight.rank() != 4 {
        return Err(Error::Rank {
            expected: 4,
            got: p.weight.rank(),
        });
    }
    conv2d_g(x, &p.weight, p.bias.as_deref(), p.stride, p.padding, p.groups)
}

/// Direct 3-D convolution; the depth axis is treated like the spatial axes.
pub fn conv3d(x: &Tensor, p: &ConvParams) -> Result<Tensor> {
    if p.weight.rank() != 5 {
        return Err(Error::Rank {
            expected: 5,
            got: p.weight.rank(),
        });
    }
    conv3d_g(x, &p.weight, p.bias.as_deref(), p.stride, p.padding, p.groups)
}

/// Windowed max/avg pooling; avg divides by the full window size.
pub fn pool2d(x: &Tensor, mode: PoolMode, k: usize, stride: usize) -> Result<Tensor> {
    Ok(pool2d_g(x, mode, k, stride)?.0)
}

/// Integer-factor nearest-neighbour upsampling: each output pixel copies
/// the floor-division source pixel.
pub fn resize_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    if factor < 1 {
        return Err(Error::param("factor", "must be >= 1"));
    }
    let (_, _, h, w) = x.dims4()?;
    resize_nearest_to_g(x, h * factor, w * factor)
}

/// Integer-factor bilinear upsampling (align-corners).
pub fn resize_bilinear(x: &Tensor, factor: usize) -> Result<Tensor> {
    resize_bilinear_g(x, factor)
}

/// Bilinear sampling at normalized [-1, 1] coordinates (align-corners).
pub fn sample_bilinear_grid(x: &Tensor, coords: &Tensor) -> Result<Tensor> {
    sample_bilinear_grid_g(x, coords)
}

pub fn depth_to_space(x: &Tensor, r: usize) -> Result<Tensor> {
    depth_to_space_g(x, r)
}

pub fn space_to_depth(x: &Tensor, r: usize) -> Result<Tensor> {
    space_to_depth_g(x, r)
}

pub fn activation(x: &Tensor, kind: Activation) -> Tensor {
    x.map(|v| kind.eval(v))
}

pub fn reduce_mean(x: &Tensor, axes: &[usize]) -> Result<Tensor> {
    reduce_mean_g(x, axes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t4(shape: &[usize], v: &[f32]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_identity_kernel() {
        let x = t4(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]);
        let mut w = Tensor::zeros(&[1, 1, 3, 3]).unwrap();
        w.data_mut()[4] = 1.0; // centre one
        let p = ConvParams::with(w, None, 1, 1, 1).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv2d_channel_sum() {
        let x = Tensor::full(&[1, 2, 2, 2], 1.0).unwrap();
        let w = t4(&[1, 2, 1, 1], &[1., 1.]);
        let p = ConvParams::new(w, None).unwrap();
        let y = conv2d(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv2d_channel_mismatch_names_axis() {
        let x = Tensor::zeros(&[1, 3, 4, 4]).unwrap();
        let w = Tensor::zeros(&[2, 2, 3, 3]).unwrap();
        let p = ConvParams::new(w, None).unwrap();
        match conv2d(&x, &p) {
            Err(crate::error::Error::Dim { axis, .. }) => assert_eq!(axis, "channel"),
            other => panic!("expected channel dim error, got {:?}", other.map(|t| t.shape().to_vec())),
        }
    }

    #[test]
    fn conv3d_depth_sum() {
        let x = Tensor::from_fn(&[1, 1, 3, 2, 2], |i| (i + 1) as f64).unwrap();
        let w = Tensor::full(&[1, 1, 3, 1, 1], 1.0).unwrap();
        let p = ConvParams::new(w, None).unwrap();
        let y = conv3d(&x, &p).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 2, 2]);
        // each cell = sum over depth: (1+5+9, 2+6+10, 3+7+11, 4+8+12)
        assert_eq!(y.data(), &[15.0, 18.0, 21.0, 24.0]);
    }

    #[test]
    fn conv3d_identity_kernel() {
        let x = Tensor::from_fn(&[1, 2, 3, 3, 3], |i| (i as f64).sin()).unwrap();
        let mut w = Tensor::zeros(&[2, 2, 3, 3, 3]).unwrap();
        // single 1 at the centre of each matching in/out channel pair
        for c in 0..2 {
            let base = ((c * 2 + c) * 3 + 1) * 9 + 4;
            w.data_mut()[base] = 1.0;
        }
        let p = ConvParams::with(w, None, 1, 1, 1).unwrap();
        let y = conv3d(&x, &p).unwrap();
        assert_eq!(y.shape(), x.shape());
        assert!(y.max_abs_diff(&x).unwrap() < 1e-7);
    }

    #[test]
    fn conv3d_rejects_rank4() {
        let x = Tensor::zeros(&[1, 1, 3, 3]).unwrap();
        let w = Tensor::zeros(&[1, 1, 1, 1, 1]).unwrap();
        let p = ConvParams::new(w, None).unwrap();
        assert!(matches!(conv3d(&x, &p), Err(crate::error::Error::Rank { .. })));
    }

    #[test]
    fn pool_examples() {
        let x = t4(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let mx = pool2d(&x, PoolMode::Max, 2, 2).unwrap();
        assert_eq!(mx.data(), &[4.0]);
        let av = pool2d(&x, PoolMode::Avg, 2, 2).unwrap();
        assert_eq!(av.data(), &[2.5]);
        assert!(pool2d(&x, PoolMode::Max, 3, 1).is_err());
    }

    #[test]
    fn pool_preserves_constants() {
        let x = Tensor::full(&[2, 3, 5, 5], 0.7).unwrap();
        for mode in [PoolMode::Max, PoolMode::Avg] {
            let y = pool2d(&x, mode, 2, 1).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.7).abs() < 1e-7));
        }
    }

    #[test]
    fn resize_nearest_factor2() {
        let x = t4(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let y = resize_nearest(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(
            y.data(),
            &[1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
        let id = resize_nearest(&x, 1).unwrap();
        assert_eq!(id.data(), x.data());
        assert!(resize_nearest(&x, 0).is_err());
    }

    #[test]
    fn grid_sample_pixel_centers_and_midpoint() {
        // 1x1x1x2 row [0, 1]: centres at gx = -1 and +1, midpoint at 0.
        let x = t4(&[1, 1, 1, 2], &[0., 1.]);
        let coords = t4(&[1, 2, 1, 3], &[-1., 0., 1., 0., 0., 0.]);
        let y = sample_bilinear_grid(&x, &coords).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 3]);
        assert!((y.data()[0] - 0.0).abs() < 1e-7);
        assert!((y.data()[1] - 0.5).abs() < 1e-7);
        assert!((y.data()[2] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn grid_sample_out_of_range_is_contract_error() {
        let x = Tensor::zeros(&[1, 1, 2, 2]).unwrap();
        let coords = t4(&[1, 2, 1, 1], &[1.001, 0.]);
        assert!(matches!(
            sample_bilinear_grid(&x, &coords),
            Err(crate::error::Error::Contract(_))
        ));
    }

    #[test]
    fn depth_to_space_convention() {
        let x = t4(&[1, 4, 1, 1], &[1., 2., 3., 4.]);
        let y = depth_to_space(&x, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.data(), &[1., 2., 3., 4.]);
        let back = space_to_depth(&y, 2).unwrap();
        assert_eq!(back.data(), x.data());
        // r = 1 is the identity
        let id = depth_to_space(&x, 1).unwrap();
        assert_eq!(id.data(), x.data());
        assert!(depth_to_space(&t4(&[1, 3, 1, 1], &[0.; 3]), 2).is_err());
    }

    #[test]
    fn activation_values() {
        assert_eq!(Activation::HardSigmoid.eval(-1.0), 0.0);
        assert_eq!(Activation::HardSigmoid.eval(0.0), 0.5);
        assert_eq!(Activation::HardSigmoid.eval(1.0), 1.0);
        assert_eq!(Activation::Relu.eval(-3.0), 0.0);
        assert_eq!(Activation::Relu.eval(3.0), 3.0);
        assert_eq!(Activation::Sigmoid.eval(0.0), 0.5);
    }

    #[test]
    fn reduce_mean_examples() {
        let x = t4(&[1, 1, 2, 2], &[1., 2., 3., 4.]);
        let m = reduce_mean(&x, &[2, 3]).unwrap();
        assert_eq!(m.shape(), &[1, 1, 1, 1]);
        assert_eq!(m.data(), &[2.5]);
        let c = Tensor::full(&[2, 3, 4, 4], 1.25).unwrap();
        let mc = reduce_mean(&c, &[0, 2]).unwrap();
        assert!(mc.data().iter().all(|&v| (v - 1.25).abs() < 1e-7));
        assert!(reduce_mean(&x, &[4]).is_err());
    }

    #[test]
    fn broadcast_binary() {
        let a = t4(&[1, 2, 2, 2], &[1., 2., 3., 4., 5., 6., 7., 8.]);
        let w = t4(&[1, 2, 1, 1], &[10., 100.]);
        let y = binary_g(BinaryOp::Mul, &a, &w).unwrap();
        assert_eq!(y.data(), &[10., 20., 30., 40., 500., 600., 700., 800.]);
        let g = reduce_to_shape_g(&y, &[1, 2, 1, 1]).unwrap();
        assert_eq!(g.data(), &[100.0, 2600.0]);
    }

    #[test]
    fn conv1d_channels_identity_and_shift() {
        let x = t4(&[1, 3, 1, 1], &[1., 2., 3.]);
        let w = Tensor::from_vec(&[1], vec![1.0]).unwrap();
        let y = conv1d_channels_g(&x, &w, None).unwrap();
        assert_eq!(y.data(), x.data());
        let w3 = Tensor::from_vec(&[3], vec![0., 0., 1.]).unwrap(); // picks next channel
        let y3 = conv1d_channels_g(&x, &w3, None).unwrap();
        assert_eq!(y3.data(), &[2., 3., 0.]);
        assert!(conv1d_channels_g(&x, &Tensor::from_vec(&[2], vec![0.; 2]).unwrap(), None).is_err());
    }
}
