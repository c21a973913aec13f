//! Seeded synthetic test images: a smooth ramp background with overlaid
//! constant-valued rectangles.

use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::types::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub rectangles: usize,
}

impl PhantomSpec {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            rectangles: 6,
        }
    }
}

/// Pixel values stay in `[0, 255]`. Color channels share the geometry but
/// draw their own intensities.
pub fn phantom(spec: &PhantomSpec, seed: u64) -> Result<Image> {
    let PhantomSpec {
        height: h,
        width: w,
        channels,
        rectangles,
    } = *spec;
    if h < 2 || w < 2 {
        return Err(invalid("phantom needs at least 2x2 pixels"));
    }
    let mut rng = Rng::new(seed);
    let mut rects = Vec::with_capacity(rectangles);
    for _ in 0..rectangles {
        let rh = 1 + (h / 8).max(1) + (rng.uniform() * (h / 3) as f64) as usize;
        let rw = 1 + (w / 8).max(1) + (rng.uniform() * (w / 3) as f64) as usize;
        let top = (rng.uniform() * (h.saturating_sub(rh) + 1) as f64) as usize;
        let left = (rng.uniform() * (w.saturating_sub(rw) + 1) as f64) as usize;
        rects.push((top, left, rh.min(h), rw.min(w)));
    }
    let mut planes = Vec::with_capacity(channels);
    for _ in 0..channels {
        let base = 30.0 + 40.0 * rng.uniform();
        let slope = 60.0 * rng.uniform();
        let values: Vec<f64> = rects.iter().map(|_| 255.0 * rng.uniform()).collect();
        let mut plane = Image::from_fn(h, w, 1, |_, i, j| {
            base + slope * (i + j) as f64 / (h + w - 2) as f64
        })?;
        for (&(top, left, rh, rw), &val) in rects.iter().zip(&values) {
            let px = plane.pixels_mut();
            for i in top..top + rh {
                px[i * w + left..i * w + left + rw].fill(val);
            }
        }
        planes.push(plane);
    }
    Image::stack(&planes)
}

/// Binary `{0, 255}` blocks on an `h x w` grid whose outermost pixel ring is
/// nonzero.
pub fn binary_phantom(height: usize, width: usize, seed: u64) -> Result<Image> {
    let mut rng = Rng::new(seed);
    Image::from_fn(height, width, 1, |_, i, j| {
        let border = i == 0 || j == 0 || i + 1 == height || j + 1 == width;
        if border || rng.uniform() < 0.5 {
            255.0
        } else {
            0.0
        }
    })
}
