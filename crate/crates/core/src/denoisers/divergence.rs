//! Monte-Carlo estimate of the denoiser divergence `tr(df/dr)` and the SURE
//! risk estimate built on it.

use crate::error::{invalid, Result};
use crate::rng::Rng;
use crate::types::Image;

use super::Denoiser;

/// `max(1e-3, 1e-3 * ||r||_inf)`.
pub fn default_delta(r: &Image) -> f64 {
    let inf = r.pixels().iter().fold(0.0f64, |a, p| a.max(p.abs()));
    (1e-3 * inf).max(1e-3)
}

/// `(1/C) sum_c p_c^T [f(r + delta p_c) - f(r)] / delta` with Rademacher
/// probes `p_c`. Costs `C + 1` denoiser calls.
pub fn mc_divergence(
    denoiser: &dyn Denoiser,
    r: &Image,
    v_in: f64,
    probes: usize,
    delta: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let base = denoiser.denoise(r, v_in)?;
    divergence_from(denoiser, r, &base, v_in, probes, delta, rng)
}

fn divergence_from(
    denoiser: &dyn Denoiser,
    r: &Image,
    base: &Image,
    v_in: f64,
    probes: usize,
    delta: f64,
    rng: &mut Rng,
) -> Result<f64> {
    if probes == 0 {
        return Err(invalid("need at least one probe"));
    }
    if !(delta > 0.0) {
        return Err(invalid("delta must be positive"));
    }
    let mut total = 0.0;
    for _ in 0..probes {
        let p: Vec<f64> = (0..r.pixels().len()).map(|_| rng.rademacher()).collect();
        let shifted = r.with_pixels(r.pixels().iter().zip(&p).map(|(a, b)| a + delta * b).collect())?;
        let out = denoiser.denoise(&shifted, v_in)?;
        total += out
            .pixels()
            .iter()
            .zip(base.pixels())
            .zip(&p)
            .map(|((a, b), pc)| pc * (a - b))
            .sum::<f64>()
            / delta;
    }
    Ok(total / probes as f64)
}

/// SURE estimate of the per-pixel output MSE of `f(r)` when
/// `r = x + N(0, v_in I)`:
/// `||f(r) - r||^2 / d - v_in + 2 v_in div / d`.
pub fn sure_mse(
    denoiser: &dyn Denoiser,
    r: &Image,
    output: &Image,
    v_in: f64,
    probes: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let d = r.pixels().len() as f64;
    let div = divergence_from(denoiser, r, output, v_in, probes, default_delta(r), rng)?;
    let fit: f64 = output
        .pixels()
        .iter()
        .zip(r.pixels())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(fit / d - v_in + 2.0 * v_in * div / d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::{GaussianMmse, IdentityDenoiser, ZeroDenoiser};
    use crate::error::Result;
    use crate::rng::sample_real_gaussian;

    fn random_image(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = Rng::new(seed);
        let p = sample_real_gaussian(&mut rng, h * w, 900.0).unwrap();
        Image::new(h, w, 1, p.into_iter().map(|v| v + 128.0).collect()).unwrap()
    }

    #[test]
    fn identity_divergence_is_dimension() {
        let r = random_image(0, 16, 16);
        let est = mc_divergence(&IdentityDenoiser, &r, 1.0, 3, 1e-3, &mut Rng::new(1)).unwrap();
        assert!((est - 256.0).abs() < 1e-6, "{est}");
    }

    #[test]
    fn zero_denoiser_divergence_vanishes() {
        let r = random_image(0, 8, 8);
        let est = mc_divergence(&ZeroDenoiser, &r, 1.0, 4, 1e-3, &mut Rng::new(1)).unwrap();
        assert_eq!(est, 0.0);
    }

    #[test]
    fn gaussian_mmse_divergence() {
        let r = random_image(2, 32, 32);
        let d = GaussianMmse::new(0.0, 1.0).unwrap();
        let est = mc_divergence(&d, &r, 1.0, 64, default_delta(&r), &mut Rng::new(3)).unwrap();
        let want = 1024.0 / 2.0;
        assert!((est - want).abs() <= 0.02 * want, "{est}");
    }

    /// 3x3 circular box blur: a linear smoother with non-diagonal Jacobian,
    /// so the Rademacher estimate has nonzero spread.
    struct BoxBlur;

    impl Denoiser for BoxBlur {
        fn name(&self) -> &str {
            "box"
        }

        fn denoise(&self, r: &Image, _v_in: f64) -> Result<Image> {
            let (h, w, _) = r.shape();
            let p = r.pixels();
            let mut out = vec![0.0; h * w];
            for i in 0..h {
                for j in 0..w {
                    let mut s = 0.0;
                    for di in [h - 1, 0, 1] {
                        for dj in [w - 1, 0, 1] {
                            s += p[((i + di) % h) * w + (j + dj) % w];
                        }
                    }
                    out[i * w + j] = s / 9.0;
                }
            }
            r.with_pixels(out)
        }
    }

    #[test]
    fn doubling_probes_shrinks_spread_by_sqrt2() {
        let r = random_image(5, 16, 16);
        let mut rng = Rng::new(6);
        let spread = |c: usize, rng: &mut Rng| {
            let est: Vec<f64> = (0..100)
                .map(|_| mc_divergence(&BoxBlur, &r, 1.0, c, 1.0, rng).unwrap())
                .collect();
            let mean = est.iter().sum::<f64>() / 100.0;
            (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 99.0).sqrt()
        };
        let s8 = spread(8, &mut rng);
        let s16 = spread(16, &mut rng);
        let ratio = s8 / s16;
        assert!((ratio - 2f64.sqrt()).abs() <= 0.2 * 2f64.sqrt(), "ratio {ratio}");
    }

    #[test]
    fn sure_tracks_true_mse_for_gaussian_prior() {
        let (tau, v) = (400.0, 100.0);
        let mut rng = Rng::new(9);
        let n = 128 * 128;
        let x = sample_real_gaussian(&mut rng, n, tau).unwrap();
        let noise = sample_real_gaussian(&mut rng, n, v).unwrap();
        let r = Image::new(128, 128, 1, x.iter().zip(&noise).map(|(a, b)| a + b).collect()).unwrap();
        let d = GaussianMmse::new(0.0, tau).unwrap();
        let out = d.denoise(&r, v).unwrap();
        let est = sure_mse(&d, &r, &out, v, 4, &mut rng).unwrap();
        let want = tau * v / (tau + v);
        assert!((est - want).abs() <= 0.05 * want, "{est} vs {want}");
    }
}
