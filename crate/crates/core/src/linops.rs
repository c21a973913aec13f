//! Column-orthogonal forward operators (`A^H A = I`) for phase retrieval.
//!
//! Both operators act per channel: a `c`-channel image maps to `c`
//! concatenated measurement blocks of `measurements_per_channel()` entries.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{check_len, invalid, Error, Result};
use crate::fft::Fft2;
use crate::rng::Rng;
use crate::types::Image;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

pub trait LinearOperator: Send + Sync {
    /// `(height, width)` of one image channel.
    fn image_dims(&self) -> (usize, usize);

    /// `m`, measurements per image channel.
    fn measurements_per_channel(&self) -> usize;

    /// Applies `A` to one channel. `x.len() == d`, `out.len() == m`.
    fn forward_plane(&self, x: &[Complex64], out: &mut [Complex64]);

    /// Applies `A^H` to one channel. `z.len() == m`, `out.len() == d`.
    fn adjoint_plane(&self, z: &[Complex64], out: &mut [Complex64]);

    fn pixels_per_channel(&self) -> usize {
        let (h, w) = self.image_dims();
        h * w
    }

    fn forward(&self, x: &Image) -> Result<Vec<Complex64>> {
        let (h, w) = self.image_dims();
        if x.height() != h || x.width() != w {
            return Err(invalid(format!(
                "image is {}x{}, operator expects {h}x{w}",
                x.height(),
                x.width()
            )));
        }
        let complex: Vec<Complex64> = x.pixels().iter().map(|&p| Complex64::new(p, 0.0)).collect();
        self.forward_complex(&complex)
    }

    /// Forward map of a complex image-domain vector (`c * d` entries).
    fn forward_complex(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        let (d, m) = (self.pixels_per_channel(), self.measurements_per_channel());
        let channels = channel_count(x.len(), d)?;
        let mut out = vec![ZERO; channels * m];
        for (xc, oc) in x.chunks_exact(d).zip(out.chunks_exact_mut(m)) {
            self.forward_plane(xc, oc);
        }
        Ok(out)
    }

    /// `A^H z`, a complex image-domain vector of `c * d` entries.
    fn adjoint(&self, z: &[Complex64]) -> Result<Vec<Complex64>> {
        let (d, m) = (self.pixels_per_channel(), self.measurements_per_channel());
        let channels = channel_count(z.len(), m)?;
        let mut out = vec![ZERO; channels * d];
        for (zc, oc) in z.chunks_exact(m).zip(out.chunks_exact_mut(d)) {
            self.adjoint_plane(zc, oc);
        }
        Ok(out)
    }

    /// `Re{A^H z}` shaped as an image. When `z = Ax + CN(0, v I)` with real
    /// `x`, the result is `x` plus real white noise of variance `v / 2`.
    fn sufficient_statistic(&self, zbar: &[Complex64]) -> Result<Image> {
        let (h, w) = self.image_dims();
        let back = self.adjoint(zbar)?;
        let channels = back.len() / (h * w);
        Image::new(h, w, channels, back.iter().map(|v| v.re).collect())
    }
}

fn channel_count(len: usize, per_channel: usize) -> Result<usize> {
    if len == 0 || !len.is_multiple_of(per_channel) || !(len / per_channel == 1 || len / per_channel == 3) {
        return Err(Error::DimensionMismatch {
            expected: per_channel,
            actual: len,
        });
    }
    Ok(len / per_channel)
}

/// Oversampled Fourier operator: zero-pad the `h x w` image into the top-left
/// corner of an `H x W` grid, then apply the unitary 2-D DFT.
#[derive(Clone, Debug)]
pub struct OsfOperator {
    height: usize,
    width: usize,
    fft: Fft2,
}

impl OsfOperator {
    pub fn new(height: usize, width: usize, padded_height: usize, padded_width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(invalid("OSF image dimensions must be positive"));
        }
        if padded_height < height || padded_width < width {
            return Err(invalid(format!(
                "padded grid {padded_height}x{padded_width} smaller than image {height}x{width}"
            )));
        }
        Ok(Self {
            height,
            width,
            fft: Fft2::new(padded_height, padded_width),
        })
    }

    /// Padded grid of `factor * h` by `factor * w`; `factor = 2` is 4x oversampling.
    pub fn with_oversampling(height: usize, width: usize, factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(invalid("oversampling factor must be positive"));
        }
        Self::new(height, width, factor * height, factor * width)
    }

    pub fn padded_dims(&self) -> (usize, usize) {
        self.fft.dims()
    }

    /// The square unitary DFT on the full padded grid. HIO iterates on this
    /// grid with the image region as its support.
    pub fn padded_transform(&self) -> OsfOperator {
        let (ph, pw) = self.padded_dims();
        OsfOperator {
            height: ph,
            width: pw,
            fft: self.fft.clone(),
        }
    }
}

impl LinearOperator for OsfOperator {
    fn image_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn measurements_per_channel(&self) -> usize {
        self.fft.len()
    }

    fn forward_plane(&self, x: &[Complex64], out: &mut [Complex64]) {
        let (_, pw) = self.fft.dims();
        out.fill(ZERO);
        for i in 0..self.height {
            out[i * pw..i * pw + self.width].copy_from_slice(&x[i * self.width..(i + 1) * self.width]);
        }
        self.fft.forward(out);
    }

    fn adjoint_plane(&self, z: &[Complex64], out: &mut [Complex64]) {
        let (_, pw) = self.fft.dims();
        let mut buf = z.to_vec();
        self.fft.inverse(&mut buf);
        for i in 0..self.height {
            out[i * self.width..(i + 1) * self.width].copy_from_slice(&buf[i * pw..i * pw + self.width]);
        }
    }
}

/// Unit-modulus modulation codes for a CDP operator, `K` vectors of `d` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct CdpCodes {
    pixels: usize,
    codes: Vec<Vec<Complex64>>,
}

impl CdpCodes {
    /// Normalizes every entry to unit modulus. Entries of zero modulus are rejected.
    pub fn new(codes: Vec<Vec<Complex64>>) -> Result<Self> {
        let pixels = codes.first().map(Vec::len).unwrap_or(0);
        if pixels == 0 {
            return Err(invalid("CDP needs at least one non-empty code"));
        }
        let mut out = Vec::with_capacity(codes.len());
        for code in codes {
            check_len(pixels, code.len())?;
            let mut normalized = Vec::with_capacity(pixels);
            for c in code {
                let r = c.norm();
                if !(r > 0.0) || !r.is_finite() {
                    return Err(invalid("CDP code entries must have finite nonzero modulus"));
                }
                normalized.push(c / r);
            }
            out.push(normalized);
        }
        Ok(Self { pixels, codes: out })
    }

    pub fn count(&self) -> usize {
        self.codes.len()
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn codes(&self) -> &[Vec<Complex64>] {
        &self.codes
    }
}

/// `K` code vectors of length `d` with phases uniform on `[0, 2pi)`.
pub fn make_cdp_codes(rng: &mut Rng, pixels: usize, count: usize) -> Result<CdpCodes> {
    if pixels == 0 || count == 0 {
        return Err(invalid("CDP code dimensions must be positive"));
    }
    let codes = (0..count)
        .map(|_| {
            (0..pixels)
                .map(|_| Complex64::from_polar(1.0, 2.0 * PI * rng.uniform()))
                .collect()
        })
        .collect();
    CdpCodes::new(codes)
}

/// Coded diffraction patterns: `A = K^{-1/2} [F diag(c_1); ...; F diag(c_K)]`.
#[derive(Clone, Debug)]
pub struct CdpOperator {
    height: usize,
    width: usize,
    codes: CdpCodes,
    fft: Fft2,
}

impl CdpOperator {
    pub fn new(height: usize, width: usize, codes: CdpCodes) -> Result<Self> {
        check_len(height * width, codes.pixels())?;
        Ok(Self {
            height,
            width,
            codes,
            fft: Fft2::new(height, width),
        })
    }

    pub fn random(height: usize, width: usize, count: usize, rng: &mut Rng) -> Result<Self> {
        let codes = make_cdp_codes(rng, height * width, count)?;
        Self::new(height, width, codes)
    }

    pub fn codes(&self) -> &CdpCodes {
        &self.codes
    }
}

impl LinearOperator for CdpOperator {
    fn image_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn measurements_per_channel(&self) -> usize {
        self.codes.count() * self.codes.pixels()
    }

    fn forward_plane(&self, x: &[Complex64], out: &mut [Complex64]) {
        let d = self.codes.pixels();
        let scale = 1.0 / (self.codes.count() as f64).sqrt();
        for (code, block) in self.codes.codes().iter().zip(out.chunks_exact_mut(d)) {
            for ((o, xi), ci) in block.iter_mut().zip(x).zip(code) {
                *o = xi * ci * scale;
            }
            self.fft.forward(block);
        }
    }

    fn adjoint_plane(&self, z: &[Complex64], out: &mut [Complex64]) {
        let d = self.codes.pixels();
        let scale = 1.0 / (self.codes.count() as f64).sqrt();
        out.fill(ZERO);
        let mut buf = vec![ZERO; d];
        for (code, block) in self.codes.codes().iter().zip(z.chunks_exact(d)) {
            buf.copy_from_slice(block);
            self.fft.inverse(&mut buf);
            for ((o, b), ci) in out.iter_mut().zip(&buf).zip(code) {
                *o += b * ci.conj() * scale;
            }
        }
    }
}

/// Either operator, for configuration-driven code paths.
#[derive(Clone, Debug)]
pub enum Operator {
    Osf(OsfOperator),
    Cdp(CdpOperator),
}

impl LinearOperator for Operator {
    fn image_dims(&self) -> (usize, usize) {
        match self {
            Operator::Osf(op) => op.image_dims(),
            Operator::Cdp(op) => op.image_dims(),
        }
    }

    fn measurements_per_channel(&self) -> usize {
        match self {
            Operator::Osf(op) => op.measurements_per_channel(),
            Operator::Cdp(op) => op.measurements_per_channel(),
        }
    }

    fn forward_plane(&self, x: &[Complex64], out: &mut [Complex64]) {
        match self {
            Operator::Osf(op) => op.forward_plane(x, out),
            Operator::Cdp(op) => op.forward_plane(x, out),
        }
    }

    fn adjoint_plane(&self, z: &[Complex64], out: &mut [Complex64]) {
        match self {
            Operator::Osf(op) => op.adjoint_plane(z, out),
            Operator::Cdp(op) => op.adjoint_plane(z, out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_real_gaussian;

    fn random_image(rng: &mut Rng, h: usize, w: usize, c: usize) -> Image {
        let px = sample_real_gaussian(rng, h * w * c, 100.0).unwrap();
        Image::new(h, w, c, px).unwrap()
    }

    fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
        a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
    }

    fn operators(rng: &mut Rng) -> Vec<Operator> {
        vec![
            Operator::Osf(OsfOperator::with_oversampling(6, 5, 2).unwrap()),
            Operator::Cdp(CdpOperator::random(6, 5, 3, rng).unwrap()),
        ]
    }

    #[test]
    fn osf_impulse_is_flat() {
        let op = OsfOperator::new(2, 2, 4, 4).unwrap();
        let mut px = vec![0.0; 4];
        px[0] = 1.0;
        let z = op.forward(&Image::new(2, 2, 1, px).unwrap()).unwrap();
        assert_eq!(z.len(), 16);
        for v in z {
            assert!((v.norm() - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let mut rng = Rng::new(3);
        for op in operators(&mut rng) {
            let z = op.forward(&Image::zeros(6, 5, 1).unwrap()).unwrap();
            assert!(z.iter().all(|v| v.norm() == 0.0));
            let back = op.adjoint(&vec![ZERO; op.measurements_per_channel()]).unwrap();
            assert!(back.iter().all(|v| v.norm() == 0.0));
        }
    }

    #[test]
    fn left_inverse_and_parseval() {
        let mut rng = Rng::new(4);
        for op in operators(&mut rng) {
            for _ in 0..20 {
                let x = random_image(&mut rng, 6, 5, 1);
                let z = op.forward(&x).unwrap();
                let xn: f64 = x.pixels().iter().map(|p| p * p).sum::<f64>().sqrt();
                let zn: f64 = z.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
                assert!((xn - zn).abs() <= 1e-10 * xn);
                let back = op.sufficient_statistic(&z).unwrap();
                for (a, b) in back.pixels().iter().zip(x.pixels()) {
                    assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn dot_product_adjoint_test() {
        let mut rng = Rng::new(5);
        for op in operators(&mut rng) {
            for _ in 0..20 {
                let d = op.pixels_per_channel();
                let m = op.measurements_per_channel();
                let x: Vec<Complex64> = (0..d)
                    .map(|_| Complex64::new(rng.standard_normal(), rng.standard_normal()))
                    .collect();
                let z: Vec<Complex64> = (0..m)
                    .map(|_| Complex64::new(rng.standard_normal(), rng.standard_normal()))
                    .collect();
                let lhs = inner(&op.forward_complex(&x).unwrap(), &z);
                let rhs = inner(&x, &op.adjoint(&z).unwrap());
                let scale = crate::types::sq_norm(&x).sqrt() * crate::types::sq_norm(&z).sqrt();
                assert!((lhs - rhs).norm() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn multichannel_is_blockwise() {
        let mut rng = Rng::new(6);
        let op = CdpOperator::random(4, 4, 2, &mut rng).unwrap();
        let x = random_image(&mut rng, 4, 4, 3);
        let z = op.forward(&x).unwrap();
        let m = op.measurements_per_channel();
        assert_eq!(z.len(), 3 * m);
        let z1 = op.forward(&x.plane(1)).unwrap();
        assert_eq!(&z[m..2 * m], &z1[..]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let op = OsfOperator::with_oversampling(4, 4, 2).unwrap();
        assert!(op.forward(&Image::zeros(4, 5, 1).unwrap()).is_err());
        assert!(op.adjoint(&vec![ZERO; 17]).is_err());
        assert!(op.sufficient_statistic(&vec![ZERO; 63]).is_err());
        assert!(OsfOperator::new(4, 4, 3, 8).is_err());
    }

    #[test]
    fn codes_are_unit_modulus_and_seeded() {
        let a = make_cdp_codes(&mut Rng::new(9), 50, 3).unwrap();
        let b = make_cdp_codes(&mut Rng::new(9), 50, 3).unwrap();
        assert_eq!(a, b);
        for code in a.codes() {
            for c in code {
                assert!((c.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn code_phases_pass_chi_square() {
        let codes = make_cdp_codes(&mut Rng::new(10), 250_000, 4).unwrap();
        let bins = 20;
        let mut counts = vec![0usize; bins];
        let mut total = 0usize;
        for code in codes.codes() {
            for c in code {
                let mut ph = c.arg();
                if ph < 0.0 {
                    ph += 2.0 * PI;
                }
                let b = ((ph / (2.0 * PI)) * bins as f64) as usize;
                counts[b.min(bins - 1)] += 1;
                total += 1;
            }
        }
        let expected = total as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 95th percentile of chi-square with 19 degrees of freedom.
        assert!(chi2 < 30.144, "chi2 = {chi2}");
    }
}
