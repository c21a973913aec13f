//! Isotropic total-variation denoising,
//! `min_x 0.5 ||x - r||^2 + lambda TV(x)`, solved per channel by projected
//! gradient on the dual (step 1/8, the inverse Lipschitz bound of `div grad`).

use crate::error::{invalid, Result};
use crate::types::Image;

use super::{check_input, Denoiser};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TvOptions {
    /// `lambda = lambda_scale * sqrt(v_in)`.
    pub lambda_scale: f64,
    pub max_inner_iters: usize,
    /// Stop once no pixel moves by more than this between inner iterations.
    pub tol: f64,
    /// Clip the output to `[lo, hi]`. Breaks the sign symmetry of the
    /// unconstrained problem.
    pub range: Option<(f64, f64)>,
}

impl Default for TvOptions {
    fn default() -> Self {
        Self {
            lambda_scale: 0.9,
            max_inner_iters: 100,
            tol: 1e-3,
            range: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TvDenoiser {
    options: TvOptions,
}

impl TvDenoiser {
    pub fn new(options: TvOptions) -> Result<Self> {
        if !(options.lambda_scale >= 0.0) || !options.lambda_scale.is_finite() {
            return Err(invalid("lambda_scale must be nonnegative"));
        }
        if !(options.tol >= 0.0) {
            return Err(invalid("tol must be nonnegative"));
        }
        if let Some((lo, hi)) = options.range {
            if !(lo < hi) {
                return Err(invalid(format!("empty output range [{lo}, {hi}]")));
            }
        }
        Ok(Self { options })
    }

    pub fn options(&self) -> &TvOptions {
        &self.options
    }
}

impl Denoiser for TvDenoiser {
    fn name(&self) -> &str {
        "tv"
    }

    fn denoise(&self, r: &Image, v_in: f64) -> Result<Image> {
        check_input(r, v_in)?;
        let o = &self.options;
        let mut x = solve(r, o.lambda_scale * v_in.sqrt(), o.max_inner_iters, o.tol);
        if let Some((lo, hi)) = o.range {
            x.pixels_mut().iter_mut().for_each(|p| *p = p.clamp(lo, hi));
        }
        Ok(x)
    }
}

/// TV denoising with `lambda = lambda_scale * sqrt(v_in)` and no early stop.
pub fn tv_denoise(r: &Image, v_in: f64, lambda_scale: f64, max_inner_iters: usize) -> Result<Image> {
    check_input(r, v_in)?;
    if !(lambda_scale >= 0.0) {
        return Err(invalid("lambda_scale must be nonnegative"));
    }
    Ok(solve(r, lambda_scale * v_in.sqrt(), max_inner_iters, 0.0))
}

/// Primal objective `0.5 ||x - r||^2 + lambda TV(x)`, summed over channels.
pub fn tv_objective(x: &Image, r: &Image, lambda: f64) -> f64 {
    let (h, w, _) = x.shape();
    let fit: f64 = x
        .pixels()
        .iter()
        .zip(r.pixels())
        .map(|(a, b)| 0.5 * (a - b) * (a - b))
        .sum();
    let mut tv = 0.0;
    for c in 0..x.channels() {
        let p = x.channel(c);
        for i in 0..h {
            for j in 0..w {
                let k = i * w + j;
                let gx = if j + 1 < w { p[k + 1] - p[k] } else { 0.0 };
                let gy = if i + 1 < h { p[k + w] - p[k] } else { 0.0 };
                tv += (gx * gx + gy * gy).sqrt();
            }
        }
    }
    fit + lambda * tv
}

fn solve(r: &Image, lambda: f64, max_iters: usize, tol: f64) -> Image {
    if lambda == 0.0 || max_iters == 0 {
        return r.clone();
    }
    let (h, w, c) = r.shape();
    let mut out = r.clone();
    for ch in 0..c {
        let x = solve_plane(r.channel(ch), h, w, lambda, max_iters, tol);
        out.channel_mut(ch).copy_from_slice(&x);
    }
    out
}

/// Forward-difference gradient with Neumann boundary.
fn grad(u: &[f64], h: usize, w: usize, gx: &mut [f64], gy: &mut [f64]) {
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            gx[k] = if j + 1 < w { u[k + 1] - u[k] } else { 0.0 };
            gy[k] = if i + 1 < h { u[k + w] - u[k] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`grad`].
fn div(px: &[f64], py: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let mut d = 0.0;
            if j + 1 < w {
                d += px[k];
            }
            if j > 0 {
                d -= px[k - 1];
            }
            if i + 1 < h {
                d += py[k];
            }
            if i > 0 {
                d -= py[k - w];
            }
            out[k] = d;
        }
    }
}

fn solve_plane(r: &[f64], h: usize, w: usize, lambda: f64, max_iters: usize, tol: f64) -> Vec<f64> {
    const STEP: f64 = 0.125;
    let n = h * w;
    let (mut px, mut py) = (vec![0.0; n], vec![0.0; n]);
    let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
    let mut d = vec![0.0; n];
    let mut u = vec![0.0; n];
    let mut x = r.to_vec();
    for _ in 0..max_iters {
        // u = div p - r / lambda, the negative scaled primal iterate.
        for k in 0..n {
            u[k] = d[k] - r[k] / lambda;
        }
        grad(&u, h, w, &mut gx, &mut gy);
        for k in 0..n {
            let qx = px[k] + STEP * gx[k];
            let qy = py[k] + STEP * gy[k];
            let scale = (qx * qx + qy * qy).sqrt().max(1.0);
            px[k] = qx / scale;
            py[k] = qy / scale;
        }
        div(&px, &py, h, w, &mut d);
        let mut change = 0.0f64;
        for k in 0..n {
            let next = r[k] - lambda * d[k];
            change = change.max((next - x[k]).abs());
            x[k] = next;
        }
        if change <= tol {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use crate::phantom::{phantom, PhantomSpec};
    use crate::rng::{sample_real_gaussian, Rng};

    #[test]
    fn div_is_negative_adjoint_of_grad() {
        let (h, w) = (5, 7);
        let mut rng = Rng::new(4);
        let u: Vec<f64> = (0..h * w).map(|_| rng.standard_normal()).collect();
        let px: Vec<f64> = (0..h * w).map(|_| rng.standard_normal()).collect();
        let py: Vec<f64> = (0..h * w).map(|_| rng.standard_normal()).collect();
        let (mut gx, mut gy, mut d) = (vec![0.0; h * w], vec![0.0; h * w], vec![0.0; h * w]);
        grad(&u, h, w, &mut gx, &mut gy);
        div(&px, &py, h, w, &mut d);
        let lhs: f64 = (0..h * w).map(|k| gx[k] * px[k] + gy[k] * py[k]).sum();
        let rhs: f64 = (0..h * w).map(|k| -u[k] * d[k]).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn constant_image_is_fixed() {
        let r = Image::new(8, 8, 1, vec![77.0; 64]).unwrap();
        let out = tv_denoise(&r, 100.0, 1.0, 50).unwrap();
        assert_eq!(out, r);
    }

    #[test]
    fn range_clips_output() {
        let mut rng = Rng::new(4);
        let r = Image::new(8, 8, 1, sample_real_gaussian(&mut rng, 64, 1e4).unwrap()).unwrap();
        let opts = TvOptions { range: Some((0.0, 50.0)), ..TvOptions::default() };
        let out = TvDenoiser::new(opts).unwrap().denoise(&r, 1.0).unwrap();
        assert!(out.pixels().iter().all(|p| (0.0..=50.0).contains(p)));
        assert!(out.pixels().contains(&0.0) && out.pixels().contains(&50.0));
        let bad = TvOptions { range: Some((1.0, 1.0)), ..TvOptions::default() };
        assert!(TvDenoiser::new(bad).is_err());
    }

    #[test]
    fn vanishing_lambda_returns_input() {
        let mut rng = Rng::new(1);
        let r = Image::new(6, 6, 1, sample_real_gaussian(&mut rng, 36, 100.0).unwrap()).unwrap();
        let out = tv_denoise(&r, 1.0, 1e-12, 100).unwrap();
        let err = out.pixels().iter().zip(r.pixels()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    fn noisy_phantom(seed: u64, sd: f64) -> (Image, Image) {
        let x = phantom(&PhantomSpec::new(64, 64, 1), seed).unwrap();
        let mut rng = Rng::new(seed + 100);
        let noise = sample_real_gaussian(&mut rng, x.pixels().len(), sd * sd).unwrap();
        let r = x.with_pixels(x.pixels().iter().zip(&noise).map(|(a, b)| a + b).collect()).unwrap();
        (x, r)
    }

    #[test]
    fn psnr_gain_on_noisy_phantom() {
        let (x, r) = noisy_phantom(0, 25.0);
        let out = TvDenoiser::new(TvOptions::default()).unwrap().denoise(&r, 625.0).unwrap();
        let gain = psnr(&out, &x).unwrap() - psnr(&r, &x).unwrap();
        assert!(gain >= 4.0, "gain {gain}");
    }

    #[test]
    fn primal_objective_is_nonincreasing() {
        let (_, r) = noisy_phantom(2, 25.0);
        let lambda = 0.9 * 25.0;
        let mut prev = tv_objective(&r, &r, lambda);
        for k in 1..=60 {
            let x = tv_denoise(&r, 625.0, 0.9, k).unwrap();
            let obj = tv_objective(&x, &r, lambda);
            assert!(obj <= prev * (1.0 + 1e-12), "iteration {k}: {obj} > {prev}");
            prev = obj;
        }
    }

    #[test]
    fn channels_are_independent() {
        let (_, a) = noisy_phantom(3, 10.0);
        let (_, b) = noisy_phantom(4, 10.0);
        let both = Image::stack(&[a.clone(), a.clone(), b.clone()]).unwrap();
        let out = tv_denoise(&both, 100.0, 1.0, 20).unwrap();
        assert_eq!(out.plane(0), tv_denoise(&a, 100.0, 1.0, 20).unwrap());
        assert_eq!(out.plane(2), tv_denoise(&b, 100.0, 1.0, 20).unwrap());
    }
}
