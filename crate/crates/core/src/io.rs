//! File formats: 8-bit binary PGM/PPM images and the ECPV raw vector
//! container.
//!
//! ECPV layout: magic `ECPV`, version byte, dtype byte (1 = f32, 2 = c64,
//! a complex number as two f64), element count as u32 LE, 6 reserved zero
//! bytes, then the little-endian payload.

use std::fs;
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::types::Image;

pub const ECPV_MAGIC: [u8; 4] = *b"ECPV";
pub const ECPV_VERSION: u8 = 1;
pub const ECPV_HEADER_LEN: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 1,
    C64 = 2,
}

impl Dtype {
    fn from_byte(b: u8) -> Result<Self> {
        match b {
            1 => Ok(Dtype::F32),
            2 => Ok(Dtype::C64),
            other => Err(format_err(format!("unknown ECPV dtype {other}"))),
        }
    }

    fn element_size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::C64 => 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Vector {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Vector {
    pub fn len(&self) -> usize {
        match self {
            Vector::Real(v) => v.len(),
            Vector::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn into_real(self) -> Result<Vec<f64>> {
        match self {
            Vector::Real(v) => Ok(v),
            Vector::Complex(_) => Err(format_err("expected a real vector, found complex")),
        }
    }

    pub fn into_complex(self) -> Result<Vec<Complex64>> {
        match self {
            Vector::Complex(v) => Ok(v),
            Vector::Real(_) => Err(format_err("expected a complex vector, found real")),
        }
    }
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

fn header(dtype: Dtype, len: usize) -> Result<[u8; ECPV_HEADER_LEN]> {
    let n = u32::try_from(len).map_err(|_| format_err(format!("vector of {len} elements is too long")))?;
    let mut h = [0u8; ECPV_HEADER_LEN];
    h[..4].copy_from_slice(&ECPV_MAGIC);
    h[4] = ECPV_VERSION;
    h[5] = dtype as u8;
    h[6..10].copy_from_slice(&n.to_le_bytes());
    Ok(h)
}

/// Encodes reals as f32.
pub fn encode_real(values: &[f64]) -> Result<Vec<u8>> {
    let mut out = header(Dtype::F32, values.len())?.to_vec();
    out.reserve(values.len() * 4);
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Encodes complex values as interleaved f64 (re, im); lossless.
pub fn encode_complex(values: &[Complex64]) -> Result<Vec<u8>> {
    let mut out = header(Dtype::C64, values.len())?.to_vec();
    out.reserve(values.len() * 16);
    for v in values {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_vector(bytes: &[u8]) -> Result<Vector> {
    if bytes.len() < ECPV_HEADER_LEN {
        return Err(format_err(format!("ECPV file is {} bytes, shorter than its header", bytes.len())));
    }
    if bytes[..4] != ECPV_MAGIC {
        return Err(format_err("bad ECPV magic"));
    }
    if bytes[4] != ECPV_VERSION {
        return Err(format_err(format!("unsupported ECPV version {}", bytes[4])));
    }
    let dtype = Dtype::from_byte(bytes[5])?;
    let n = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let payload = &bytes[ECPV_HEADER_LEN..];
    let expected = n * dtype.element_size();
    if payload.len() != expected {
        return Err(format_err(format!(
            "ECPV payload is {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    let out = match dtype {
        Dtype::F32 => Vector::Real(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
        ),
        Dtype::C64 => Vector::Complex(
            payload
                .chunks_exact(16)
                .map(|c| {
                    let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                    let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                    Complex64::new(re, im)
                })
                .collect(),
        ),
    };
    let finite = match &out {
        Vector::Real(v) => v.iter().all(|x| x.is_finite()),
        Vector::Complex(v) => v.iter().all(|x| x.is_finite()),
    };
    if !finite {
        return Err(format_err("ECPV payload contains non-finite values"));
    }
    Ok(out)
}

pub fn write_real(path: &Path, values: &[f64]) -> Result<()> {
    write_bytes(path, &encode_real(values)?)
}

pub fn write_complex(path: &Path, values: &[Complex64]) -> Result<()> {
    write_bytes(path, &encode_complex(values)?)
}

pub fn read_vector(path: &Path) -> Result<Vector> {
    decode_vector(&read_bytes(path)?).map_err(|e| with_path(e, path))
}

/// Binary PGM for one channel, PPM for three. Pixels are rounded and clipped
/// to `[0, 255]`.
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let (h, w, c) = img.shape();
    let tag = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{tag}\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * c);
    let n = img.plane_len();
    for p in 0..n {
        for ch in 0..c {
            out.push(img.pixels()[ch * n + p].round().clamp(0.0, 255.0) as u8);
        }
    }
    out
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Skip whitespace and comments.
        while pos < bytes.len() {
            match bytes[pos] {
                b'#' => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(format_err("truncated PNM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| format_err("bad PNM header"))?);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let channels = match fields[0] {
        "P5" => 1,
        "P6" => 3,
        other => return Err(format_err(format!("unsupported PNM type {other}"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| format_err(format!("bad PNM field {s:?}")));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(format_err(format!("unsupported PNM maxval {maxval}")));
    }
    let n = h.checked_mul(w).ok_or_else(|| format_err("PNM dimensions overflow"))?;
    let raster = bytes.get(pos..).unwrap_or_default();
    if Some(raster.len()) != n.checked_mul(channels) {
        return Err(format_err(format!(
            "PNM raster has {} bytes, expected {}",
            raster.len(),
            n * channels
        )));
    }
    let scale = 255.0 / maxval as f64;
    let mut pixels = vec![0.0; n * channels];
    for (p, px) in raster.chunks_exact(channels).enumerate() {
        for (ch, &b) in px.iter().enumerate() {
            pixels[ch * n + p] = b as f64 * scale;
        }
    }
    Image::new(h, w, channels, pixels)
}

pub fn write_pnm(path: &Path, img: &Image) -> Result<()> {
    write_bytes(path, &encode_pnm(img))
}

pub fn read_pnm(path: &Path) -> Result<Image> {
    decode_pnm(&read_bytes(path)?).map_err(|e| with_path(e, path))
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        Error::InvalidArgument(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    }
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}
