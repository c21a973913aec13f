//! Shared numeric types: real images and complex measurement-domain vectors.

use num_complex::Complex64;

use crate::error::{check_len, invalid, Result};

/// A vector in the measurement (z) domain.
pub type ComplexVector = Vec<Complex64>;

/// Real-valued pixel grid, row-major within a channel, channels stored as
/// consecutive planes. Nominal range is `[0, 255]` but intermediate images
/// (noisy statistics, denoiser inputs) may leave that range.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid(format!("image shape {height}x{width} is empty")));
        }
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("unsupported channel count {channels}")));
        }
        check_len(height * width * channels, pixels.len())?;
        if pixels.iter().any(|p| !p.is_finite()) {
            return Err(invalid("image contains non-finite pixels"));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::new(height, width, channels, vec![0.0; height * width * channels])
    }

    /// Builds an image from `f(channel, row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(height * width * channels);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    pixels.push(f(c, i, j));
                }
            }
        }
        Self::new(height, width, channels, pixels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Pixels per channel.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.pixels[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.pixels[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.pixels[(c * self.height + i) * self.width + j]
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    /// Same shape, new pixel buffer.
    pub fn with_pixels(&self, pixels: Vec<f64>) -> Result<Self> {
        Self::new(self.height, self.width, self.channels, pixels)
    }

    /// Builds a single-channel image from one plane.
    pub fn plane(&self, c: usize) -> Image {
        Image {
            height: self.height,
            width: self.width,
            channels: 1,
            pixels: self.channel(c).to_vec(),
        }
    }

    /// Stacks single-channel planes into one image.
    pub fn stack(planes: &[Image]) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| invalid("cannot stack zero planes"))?;
        let mut pixels = Vec::with_capacity(first.plane_len() * planes.len());
        for p in planes {
            if p.height != first.height || p.width != first.width || p.channels != 1 {
                return Err(invalid("planes must share one single-channel shape"));
            }
            pixels.extend_from_slice(&p.pixels);
        }
        Self::new(first.height, first.width, planes.len(), pixels)
    }

    /// Clamps to `[0, 255]` and rounds to 8-bit values.
    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels
            .iter()
            .map(|&p| p.clamp(0.0, 255.0).round() as u8)
            .collect()
    }
}

#[cfg(test)]
pub(crate) fn sq_norm(z: &[Complex64]) -> f64 {
    z.iter().map(|v| v.norm_sqr()).sum()
}

pub(crate) fn sq_dist(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum()
}

pub(crate) fn all_finite(z: &[Complex64]) -> bool {
    z.iter().all(|v| v.re.is_finite() && v.im.is_finite())
}

/// `sqrt(||a - b||^2 / m)`.
pub fn rms_error(a: &[Complex64], b: &[Complex64]) -> f64 {
    (sq_dist(a, b) / a.len().max(1) as f64).sqrt()
}

/// Measurement residual `||y - |z|||`.
pub fn magnitude_residual(y: &[f64], z: &[Complex64]) -> f64 {
    y.iter()
        .zip(z)
        .map(|(yi, zi)| (yi - zi.norm()).powi(2))
        .sum::<f64>()
        .sqrt()
}
