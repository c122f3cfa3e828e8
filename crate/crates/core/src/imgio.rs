//! Image and raw-tensor file input.
//!
//! Two input encodings: binary PPM (P6, 8-bit, values scaled to [0, 1],
//! emitted as a 1×3×H×W tensor) and a raw planar float tensor file with
//! magic "DAST", rank u8, dims u64 LE, then f32 LE data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const RAW_MAGIC: &[u8; 4] = b"DAST";

fn ppm_token<'a>(bytes: &'a [u8], pos: &mut usize, what: &str) -> Result<&'a str> {
    // skip whitespace and '#' comments
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
        } else {
            break;
        }
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format {
            offset: start as u64,
            msg: format!("missing {}", what),
        });
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format {
        offset: start as u64,
        msg: format!("{} is not ASCII", what),
    })
}

fn ppm_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let at = *pos;
    let tok = ppm_token(bytes, pos, what)?;
    tok.parse().map_err(|_| Error::Format {
        offset: at as u64,
        msg: format!("bad {}: {:?}", what, tok),
    })
}

/// Parse a binary P6 PPM into a planar float tensor in [0, 1].
pub fn read_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0usize;
    let magic = ppm_token(bytes, &mut pos, "magic")?;
    if magic != "P6" {
        return Err(Error::Format {
            offset: 0,
            msg: format!("expected P6 magic, got {:?}", magic),
        });
    }
    let w = ppm_number(bytes, &mut pos, "width")?;
    let h = ppm_number(bytes, &mut pos, "height")?;
    let maxval = ppm_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Format {
            offset: pos as u64,
            msg: format!("only 8-bit PPM supported, maxval {}", maxval),
        });
    }
    // exactly one whitespace byte separates header and payload
    pos += 1;
    let need = w * h * 3;
    if bytes.len() < pos + need {
        return Err(Error::Format {
            offset: bytes.len() as u64,
            msg: format!("pixel payload truncated: need {} bytes", need),
        });
    }
    let mut t = Tensor::zeros(&[1, 3, h, w])?;
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = bytes[pos + (y * w + x) * 3 + c] as f32 / 255.0;
                t.data_mut()[(c * h + y) * w + x] = v;
            }
        }
    }
    Ok(t)
}

/// Serialize an 8-bit P6 PPM from a 1×3×H×W tensor in [0, 1].
pub fn write_ppm(t: &Tensor) -> Result<Vec<u8>> {
    let (n, c, h, w) = t.dims4()?;
    if n != 1 || c != 3 {
        return Err(Error::dim("channel", "PPM needs a 1x3xHxW tensor"));
    }
    let mut out = format!("P6\n{} {}\n255\n", w, h).into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = t.data()[(ch * h + y) * w + x].clamp(0.0, 1.0);
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn read_raw_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 5 || &bytes[0..4] != RAW_MAGIC {
        return Err(Error::Format {
            offset: 0,
            msg: "expected DAST magic".into(),
        });
    }
    let rank = bytes[4] as usize;
    let mut pos = 5usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        if bytes.len() < pos + 8 {
            return Err(Error::Format {
                offset: pos as u64,
                msg: "truncated dimension header".into(),
            });
        }
        shape.push(u64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap()) as usize);
        pos += 8;
    }
    let numel: usize = shape.iter().product();
    if bytes.len() < pos + 4 * numel {
        return Err(Error::Format {
            offset: pos as u64,
            msg: format!("truncated payload: need {} floats", numel),
        });
    }
    let data = bytes[pos..pos + 4 * numel]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::from_vec(&shape, data).map_err(|e| Error::Format {
        offset: pos as u64,
        msg: e.to_string(),
    })
}

pub fn write_raw_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(5 + 8 * t.rank() + 4 * t.len());
    out.extend_from_slice(RAW_MAGIC);
    out.push(t.rank() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Load an image from a path: `.ppm` files as P6, anything else as a raw
/// tensor file.
pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
        read_ppm(&bytes)
    } else {
        read_raw_tensor(&bytes)
    }
}
