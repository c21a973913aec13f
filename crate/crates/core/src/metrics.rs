//! Image-quality metrics and alignment over the phase-retrieval ambiguity
//! group (180-degree rotations and circular shifts).

use num_complex::Complex64;

use crate::error::{invalid, Result};
use crate::fft::Fft2;
use crate::types::Image;

/// Peak signal-to-noise ratio in dB; `+inf` when the images are equal.
pub fn psnr(estimate: &Image, truth: &Image) -> Result<f64> {
    psnr_with_peak(estimate, truth, 255.0)
}

pub fn psnr_with_peak(estimate: &Image, truth: &Image, peak: f64) -> Result<f64> {
    require_same_shape(estimate, truth)?;
    let n = truth.pixels().len() as f64;
    let mse = estimate
        .pixels()
        .iter()
        .zip(truth.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

fn require_same_shape(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(invalid(format!("shape {:?} differs from {:?}", a.shape(), b.shape())))
    }
}

const SSIM_WIN: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn gaussian_window() -> [f64; SSIM_WIN] {
    let mut g = [0.0; SSIM_WIN];
    let c = (SSIM_WIN / 2) as f64;
    for (k, v) in g.iter_mut().enumerate() {
        let t = k as f64 - c;
        *v = (-t * t / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable valid-mode filtering with the SSIM window.
fn filter_valid(p: &[f64], h: usize, w: usize, g: &[f64; SSIM_WIN]) -> Vec<f64> {
    let (oh, ow) = (h - SSIM_WIN + 1, w - SSIM_WIN + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = (0..SSIM_WIN).map(|k| g[k] * p[i * w + j + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..SSIM_WIN).map(|k| g[k] * rows[(i + k) * ow + j]).sum();
        }
    }
    out
}

/// Mean structural similarity over all fully-contained 11x11 Gaussian
/// windows (sigma 1.5, K1 = 0.01, K2 = 0.03, peak 255), averaged over
/// channels.
pub fn ssim(estimate: &Image, truth: &Image) -> Result<f64> {
    require_same_shape(estimate, truth)?;
    let (h, w, c) = truth.shape();
    if h < SSIM_WIN || w < SSIM_WIN {
        return Err(invalid(format!("SSIM needs at least {SSIM_WIN}x{SSIM_WIN} pixels")));
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let g = gaussian_window();
    let mut total = 0.0;
    for ch in 0..c {
        let a = estimate.channel(ch);
        let b = truth.channel(ch);
        let prod = |f: fn(f64, f64) -> f64| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect() };
        let mu_a = filter_valid(a, h, w, &g);
        let mu_b = filter_valid(b, h, w, &g);
        let aa = filter_valid(&prod(|x, _| x * x), h, w, &g);
        let bb = filter_valid(&prod(|_, y| y * y), h, w, &g);
        let ab = filter_valid(&prod(|x, y| x * y), h, w, &g);
        let mut sum = 0.0;
        for k in 0..mu_a.len() {
            let (ma, mb) = (mu_a[k], mu_b[k]);
            let va = aa[k] - ma * ma;
            let vb = bb[k] - mb * mb;
            let cov = ab[k] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / mu_a.len() as f64;
    }
    Ok(total / c as f64)
}

/// Which ambiguities [`resolve_ambiguity`] searches over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct AmbiguityPolicy {
    pub resolve_flips: bool,
    pub resolve_translations: bool,
    /// Resolve the flip of each channel separately (channels recovered
    /// independently carry independent flips) before the joint search.
    pub per_channel_flip_align: bool,
}

impl AmbiguityPolicy {
    pub const IDENTITY: Self = Self {
        resolve_flips: false,
        resolve_translations: false,
        per_channel_flip_align: false,
    };

    pub fn osf_grayscale() -> Self {
        Self {
            resolve_flips: true,
            resolve_translations: true,
            per_channel_flip_align: false,
        }
    }

    pub fn osf_color() -> Self {
        Self {
            resolve_flips: true,
            resolve_translations: false,
            per_channel_flip_align: true,
        }
    }

    pub fn cdp() -> Self {
        Self::IDENTITY
    }
}

/// 180-degree rotation of every channel.
pub fn flip(img: &Image) -> Image {
    let mut out = img.clone();
    for c in 0..img.channels() {
        let src = img.channel(c);
        out.channel_mut(c)
            .iter_mut()
            .zip(src.iter().rev())
            .for_each(|(o, s)| *o = *s);
    }
    out
}

/// `out[i, j] = img[(i - dy) mod h, (j - dx) mod w]`, all channels.
pub fn circular_shift(img: &Image, dy: usize, dx: usize) -> Image {
    let (h, w, _) = img.shape();
    let mut out = img.clone();
    for c in 0..img.channels() {
        let src = img.channel(c);
        let dst = out.channel_mut(c);
        for i in 0..h {
            let si = (i + h - dy % h) % h;
            for j in 0..w {
                dst[i * w + j] = src[si * w + (j + w - dx % w) % w];
            }
        }
    }
    out
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Best circular shift `(dy, dx)` of `est` against `truth` by correlation,
/// summed over channels, plus the correlation value.
fn best_shift(est: &Image, truth: &Image, fft: &Fft2) -> (usize, usize, f64) {
    let (h, w, c) = truth.shape();
    let mut acc = vec![Complex64::new(0.0, 0.0); h * w];
    for ch in 0..c {
        let mut x: Vec<Complex64> = truth.channel(ch).iter().map(|&p| Complex64::new(p, 0.0)).collect();
        let mut y: Vec<Complex64> = est.channel(ch).iter().map(|&p| Complex64::new(p, 0.0)).collect();
        fft.forward(&mut x);
        fft.forward(&mut y);
        for k in 0..h * w {
            acc[k] += x[k] * y[k].conj();
        }
    }
    fft.inverse(&mut acc);
    // With the unitary transform, acc[s] = corr(s) / sqrt(hw).
    let scale = ((h * w) as f64).sqrt();
    let mut best = (0, 0, acc[0].re * scale);
    let tol = 1e-9 * acc.iter().map(|v| v.re.abs()).fold(0.0, f64::max) * scale;
    for (k, v) in acc.iter().enumerate() {
        let val = v.re * scale;
        if val > best.2 + tol {
            best = (k / w, k % w, val);
        }
    }
    best
}

/// Applies the transform from the enabled group (identity, optional flip,
/// optional circular shifts, one transform shared by all channels) that
/// maximizes correlation with `truth`. Ties keep the identity.
pub fn resolve_ambiguity(estimate: &Image, truth: &Image, policy: AmbiguityPolicy) -> Result<Image> {
    require_same_shape(estimate, truth)?;
    let mut base = estimate.clone();
    if policy.per_channel_flip_align {
        for c in 0..base.channels() {
            let plane = estimate.channel(c);
            let flipped: Vec<f64> = plane.iter().rev().copied().collect();
            if inner(&flipped, truth.channel(c)) > inner(plane, truth.channel(c)) {
                base.channel_mut(c).copy_from_slice(&flipped);
            }
        }
    }
    let mut candidates = vec![base.clone()];
    if policy.resolve_flips {
        candidates.push(flip(&base));
    }
    let (h, w, _) = truth.shape();
    let fft = policy.resolve_translations.then(|| Fft2::new(h, w));
    let mut best: Option<(Image, f64)> = None;
    for cand in candidates {
        let (img, score) = match &fft {
            Some(fft) => {
                let (dy, dx, _) = best_shift(&cand, truth, fft);
                let shifted = circular_shift(&cand, dy, dx);
                let score = inner(shifted.pixels(), truth.pixels());
                (shifted, score)
            }
            None => {
                let score = inner(cand.pixels(), truth.pixels());
                (cand, score)
            }
        };
        let better = match &best {
            None => true,
            Some((_, s)) => score > *s + 1e-12 * s.abs(),
        };
        if better {
            best = Some((img, score));
        }
    }
    Ok(best.expect("identity candidate").0)
}

/// Keeps channel 1 and replaces channels 2 and 3 by whichever of
/// {itself, its 180-degree rotation} correlates better with channel 1.
pub fn align_color_channels(img: &Image) -> Result<Image> {
    if img.channels() != 3 {
        return Err(invalid(format!("expected 3 channels, got {}", img.channels())));
    }
    let mut out = img.clone();
    let reference = img.channel(0).to_vec();
    for c in 1..3 {
        let plane = img.channel(c);
        let flipped: Vec<f64> = plane.iter().rev().copied().collect();
        if inner(&flipped, &reference) > inner(plane, &reference) {
            out.channel_mut(c).copy_from_slice(&flipped);
        }
    }
    Ok(out)
}
