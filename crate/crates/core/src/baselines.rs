//! Fienup's hybrid input-output (HIO) algorithm and the initialization and
//! reporting protocols built on it.

use num_complex::Complex64;

use crate::error::{check_len, invalid, Result};
use crate::linops::{CdpOperator, LinearOperator, Operator, OsfOperator};
use crate::metrics::align_color_channels;
use crate::rng::Rng;
use crate::types::{magnitude_residual, Image};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HioConfig {
    /// Feedback parameter.
    pub step: f64,
    pub iters: usize,
    pub nonnegativity: bool,
}

impl Default for HioConfig {
    fn default() -> Self {
        Self {
            step: 0.9,
            iters: 1000,
            nonnegativity: true,
        }
    }
}

impl HioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step >= 0.0 && self.step <= 1.0) {
            return Err(invalid(format!("HIO step must lie in [0, 1], got {}", self.step)));
        }
        Ok(())
    }
}

/// One channel's HIO problem: the operator the iterate lives under, and
/// which of its pixels belong to the object support.
struct Problem<'a> {
    op: &'a dyn LinearOperator,
    support: Vec<bool>,
    /// Output-image pixel `k` sits at iterate index `embed[k]`.
    embed: Vec<usize>,
}

fn problem_for(op: &Operator) -> (Box<dyn LinearOperator>, Vec<bool>, Vec<usize>) {
    match op {
        Operator::Osf(osf) => {
            let (h, w) = osf.image_dims();
            let (ph, pw) = osf.padded_dims();
            let mut support = vec![false; ph * pw];
            let mut embed = Vec::with_capacity(h * w);
            for i in 0..h {
                for j in 0..w {
                    support[i * pw + j] = true;
                    embed.push(i * pw + j);
                }
            }
            (Box::new(osf.padded_transform()), support, embed)
        }
        Operator::Cdp(cdp) => {
            let d = cdp.pixels_per_channel();
            (Box::new(cdp.clone()), vec![true; d], (0..d).collect())
        }
    }
}

impl Problem<'_> {
    fn embed(&self, plane: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.support.len()];
        for (k, &p) in plane.iter().enumerate() {
            x[self.embed[k]] = p;
        }
        x
    }

    fn crop(&self, x: &[f64]) -> Vec<f64> {
        self.embed.iter().map(|&k| x[k]).collect()
    }

    /// Runs `iters` HIO iterations on the full iterate `x` in place.
    fn iterate(&self, y: &[f64], x: &mut [f64], config: &HioConfig) {
        let n = x.len();
        let m = y.len();
        let mut xc = vec![Complex64::new(0.0, 0.0); n];
        let mut z = vec![Complex64::new(0.0, 0.0); m];
        for _ in 0..config.iters {
            for (c, &v) in xc.iter_mut().zip(x.iter()) {
                *c = Complex64::new(v, 0.0);
            }
            self.op.forward_plane(&xc, &mut z);
            for (zi, &yi) in z.iter_mut().zip(y) {
                // Zero entries keep phase 0.
                *zi = Complex64::from_polar(yi, zi.arg());
            }
            self.op.adjoint_plane(&z, &mut xc);
            for k in 0..n {
                let proj = xc[k].re;
                let ok = self.support[k] && (!config.nonnegativity || proj >= 0.0);
                x[k] = if ok { proj } else { x[k] - config.step * proj };
            }
        }
    }
}

fn split_channels<'a>(y: &'a [f64], op: &Operator, channels: usize) -> Result<Vec<&'a [f64]>> {
    let m = op.measurements_per_channel();
    check_len(m * channels, y.len())?;
    Ok(y.chunks_exact(m).collect())
}

/// Runs HIO from `x0` and returns the support-restricted final iterate.
/// Each channel is recovered independently. For OSF the iterate lives on the
/// zero-padded grid, with the image region as support.
pub fn hio_run(y: &[f64], op: &Operator, config: &HioConfig, x0: &Image) -> Result<Image> {
    config.validate()?;
    let (h, w) = op.image_dims();
    if (x0.height(), x0.width()) != (h, w) {
        return Err(invalid("initial image does not match the operator"));
    }
    let (inner, support, embed) = problem_for(op);
    let problem = Problem {
        op: inner.as_ref(),
        support,
        embed,
    };
    let ys = split_channels(y, op, x0.channels())?;
    let mut out = x0.clone();
    for (c, yc) in ys.into_iter().enumerate() {
        let mut x = problem.embed(x0.channel(c));
        problem.iterate(yc, &mut x, config);
        out.channel_mut(c).copy_from_slice(&problem.crop(&x));
    }
    Ok(out)
}

/// `||y - |A x||| `.
pub fn measurement_residual(y: &[f64], op: &dyn LinearOperator, x: &Image) -> Result<f64> {
    let z = op.forward(x)?;
    check_len(y.len(), z.len())?;
    Ok(magnitude_residual(y, &z))
}

/// Index of the smallest residual; ties go to the lowest index.
pub fn argmin_residual(residuals: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, r) in residuals.iter().enumerate() {
        if best.is_none_or(|b| *r < residuals[b]) {
            best = Some(k);
        }
    }
    best
}

/// Runs `solver` once per restart with its own RNG substream and keeps the
/// result with the lowest residual (first one on ties).
pub fn run_with_restarts<T, S, R>(rng: &Rng, restarts: usize, mut solver: S, mut residual: R) -> Result<T>
where
    S: FnMut(&mut Rng) -> Result<T>,
    R: FnMut(&T) -> Result<f64>,
{
    if restarts == 0 {
        return Err(invalid("need at least one restart"));
    }
    let mut best: Option<(T, f64)> = None;
    for k in 0..restarts {
        let mut sub = rng.fork(k as u64);
        let candidate = solver(&mut sub)?;
        let r = residual(&candidate)?;
        if best.as_ref().is_none_or(|(_, b)| r < *b) {
            best = Some((candidate, r));
        }
    }
    Ok(best.expect("at least one restart").0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OsfInitOptions {
    pub restarts: usize,
    pub restart_iters: usize,
    pub final_iters: usize,
    pub step: f64,
}

impl Default for OsfInitOptions {
    fn default() -> Self {
        Self {
            restarts: 50,
            restart_iters: 50,
            final_iters: 1000,
            step: 0.9,
        }
    }
}

/// HIO initialization for oversampled Fourier data: many short runs from
/// uniform random images, keep the best by measurement residual, continue it,
/// and (for color) resolve each channel's flip against the first channel.
pub fn osf_init_protocol(
    y: &[f64],
    op: &OsfOperator,
    channels: usize,
    rng: &mut Rng,
    options: &OsfInitOptions,
) -> Result<Image> {
    let (h, w) = op.image_dims();
    let wrapped = Operator::Osf(op.clone());
    let (inner, support, embed) = problem_for(&wrapped);
    let problem = Problem {
        op: inner.as_ref(),
        support,
        embed,
    };
    let ys = split_channels(y, &wrapped, channels)?;
    let short = HioConfig {
        step: options.step,
        iters: options.restart_iters,
        nonnegativity: true,
    };
    short.validate()?;
    let long = HioConfig {
        iters: options.final_iters,
        ..short
    };
    let base = rng.fork(0x05f);
    let mut planes = Vec::with_capacity(channels);
    for (c, yc) in ys.into_iter().enumerate() {
        let mut x = run_with_restarts(
            &base.fork(c as u64),
            options.restarts,
            |sub| {
                let start: Vec<f64> = (0..h * w).map(|_| 255.0 * sub.uniform()).collect();
                let mut x = problem.embed(&start);
                problem.iterate(yc, &mut x, &short);
                Ok(x)
            },
            |x| {
                let plane = Image::new(h, w, 1, problem.crop(x))?;
                measurement_residual(yc, op, &plane)
            },
        )?;
        problem.iterate(yc, &mut x, &long);
        planes.push(Image::new(h, w, 1, problem.crop(&x))?);
    }
    let img = Image::stack(&planes)?;
    if channels == 3 {
        align_color_channels(&img)
    } else {
        Ok(img)
    }
}

/// CDP initialization `Re{ exp(-j angle(u)) * A^H y }`, elementwise per
/// channel, where `u = A^H |A 1|` is the back-projection of the measurements
/// of an all-ones image. For a constant image this returns `c |u|`, so the
/// code-induced phase pattern is removed.
pub fn cdp_init(y: &[f64], op: &CdpOperator, channels: usize) -> Result<Image> {
    let (h, w) = op.image_dims();
    let m = op.measurements_per_channel();
    check_len(m * channels, y.len())?;
    let mut ones = vec![Complex64::new(0.0, 0.0); m];
    op.forward_plane(&vec![Complex64::new(1.0, 0.0); h * w], &mut ones);
    ones.iter_mut().for_each(|v| *v = Complex64::new(v.norm(), 0.0));
    let mut u = vec![Complex64::new(0.0, 0.0); h * w];
    op.adjoint_plane(&ones, &mut u);
    let mut back = vec![Complex64::new(0.0, 0.0); h * w];
    let mut pixels = Vec::with_capacity(h * w * channels);
    for yc in y.chunks_exact(m) {
        let yz: Vec<Complex64> = yc.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        op.adjoint_plane(&yz, &mut back);
        pixels.extend(
            back.iter()
                .zip(&u)
                .map(|(b, ui)| (b * Complex64::from_polar(1.0, -ui.arg())).re),
        );
    }
    Image::new(h, w, channels, pixels)
}
