//! Measurement channels: shot-noise simulation and the Laplace-approximated
//! posterior of the amplitude likelihood `p(y | z) = N(y; |z|, v)`.

use num_complex::Complex64;

use crate::error::{check_len, invalid, Result};
use crate::rng::Rng;

/// `|zbar|` below this is floored before the Laplace update.
pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-8;

/// Shot-noise level `alpha` of `y^2 = |z|^2 + w`, `w ~ N(0, alpha^2 |z|^2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseModel {
    alpha: f64,
}

impl NoiseModel {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return Err(invalid(format!("alpha must be nonnegative, got {alpha}")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
}

/// Draws noisy magnitudes. Negative realizations of `y^2` are clamped at zero.
pub fn simulate_measurements(rng: &mut Rng, z: &[Complex64], noise: NoiseModel) -> Vec<f64> {
    let alpha = noise.alpha();
    z.iter()
        .map(|zi| {
            let mag = zi.norm();
            if alpha == 0.0 {
                return mag;
            }
            let w = alpha * mag * rng.standard_normal();
            (mag * mag + w).max(0.0).sqrt()
        })
        .collect()
}

/// Likelihood variance implied by shot-noise level `alpha`.
///
/// Linearizing `y = sqrt(|z|^2 + w)` around `w = 0` gives
/// `y ~ |z| + w / (2|z|)`, hence `Var(y) ~ alpha^2 / 4` independent of `|z|`.
pub fn alpha_to_v(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(invalid(format!("alpha must be positive, got {alpha}")));
    }
    Ok(alpha * alpha / 4.0)
}

/// Per-element Laplace approximation of the amplitude-channel posterior.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplitudeChannel {
    v: f64,
    epsilon_floor: f64,
}

/// Mode and trace-inverse-Hessian at the mode for one measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceEstimate {
    pub mean: Complex64,
    pub variance: f64,
    /// `|zbar|` was below the floor and was raised to it.
    pub floored: bool,
}

impl AmplitudeChannel {
    pub fn new(v: f64) -> Result<Self> {
        Self::with_floor(v, DEFAULT_EPSILON_FLOOR)
    }

    pub fn with_floor(v: f64, epsilon_floor: f64) -> Result<Self> {
        if !(v > 0.0) || !v.is_finite() {
            return Err(invalid(format!("likelihood variance must be positive, got {v}")));
        }
        if !(epsilon_floor > 0.0) {
            return Err(invalid("epsilon floor must be positive"));
        }
        Ok(Self { v, epsilon_floor })
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    pub fn epsilon_floor(&self) -> f64 {
        self.epsilon_floor
    }

    /// Mode of `N(y; |z|, v) CN(z; zbar, vbar1)` over complex `z`:
    /// `(vbar1 y + 2 v |zbar|) / (vbar1 + 2 v) * exp(j angle(zbar))`.
    pub fn laplace_map(&self, y: f64, zbar: Complex64, vbar1: f64) -> Result<Complex64> {
        Ok(self.laplace(y, zbar, vbar1)?.mean)
    }

    /// Trace of the inverse Hessian of the negative log posterior at its mode:
    /// `vbar1 (vbar1 y + 4 v |zbar|) / (2 |zbar| (vbar1 + 2 v))`.
    pub fn laplace_var(&self, y: f64, zbar: Complex64, vbar1: f64) -> Result<f64> {
        Ok(self.laplace(y, zbar, vbar1)?.variance)
    }

    pub fn laplace(&self, y: f64, zbar: Complex64, vbar1: f64) -> Result<LaplaceEstimate> {
        if !(vbar1 > 0.0) {
            return Err(invalid(format!("extrinsic variance must be positive, got {vbar1}")));
        }
        let v = self.v;
        let raw = zbar.norm();
        let floored = raw < self.epsilon_floor;
        let mag = raw.max(self.epsilon_floor);
        let phase = zbar.arg();
        let denom = vbar1 + 2.0 * v;
        let mean = Complex64::from_polar((vbar1 * y + 2.0 * v * mag) / denom, phase);
        let variance = vbar1 * (vbar1 * y + 4.0 * v * mag) / (2.0 * mag * denom);
        Ok(LaplaceEstimate {
            mean,
            variance,
            floored,
        })
    }
}

/// Output of a likelihood-side EC step.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelPosterior {
    pub mean: Vec<Complex64>,
    /// Average per-element posterior variance.
    pub variance: f64,
    /// Number of elements whose `|zbar|` was floored.
    pub floored: usize,
}

/// Elementwise Laplace posterior; the scalar variance is the arithmetic mean.
pub fn channel_posterior(
    channel: &AmplitudeChannel,
    y: &[f64],
    zbar1: &[Complex64],
    vbar1: f64,
) -> Result<ChannelPosterior> {
    check_len(y.len(), zbar1.len())?;
    if y.is_empty() {
        return Err(invalid("empty measurement vector"));
    }
    let mut mean = Vec::with_capacity(y.len());
    let mut total = 0.0;
    let mut floored = 0;
    for (&yi, &zi) in y.iter().zip(zbar1) {
        let est = channel.laplace(yi, zi, vbar1)?;
        mean.push(est.mean);
        total += est.variance;
        floored += usize::from(est.floored);
    }
    Ok(ChannelPosterior {
        mean,
        variance: total / y.len() as f64,
        floored,
    })
}

/// The likelihood factor of an EC iteration: given the pseudo-prior
/// `CN(zbar1, vbar1 I)`, return the posterior mean and average variance.
pub trait Likelihood: Send + Sync {
    fn len(&self) -> usize;

    fn posterior(&self, zbar1: &[Complex64], vbar1: f64) -> Result<ChannelPosterior>;

    /// `||y - |z|||` for amplitude data; `None` when not meaningful.
    fn residual(&self, _z: &[Complex64]) -> Option<f64> {
        None
    }
}

/// Phaseless amplitude measurements under [`AmplitudeChannel`].
#[derive(Clone, Debug)]
pub struct AmplitudeLikelihood {
    y: Vec<f64>,
    channel: AmplitudeChannel,
}

impl AmplitudeLikelihood {
    pub fn new(y: Vec<f64>, channel: AmplitudeChannel) -> Result<Self> {
        if y.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid("amplitude measurements must be finite and nonnegative"));
        }
        Ok(Self { y, channel })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn channel(&self) -> &AmplitudeChannel {
        &self.channel
    }
}

impl Likelihood for AmplitudeLikelihood {
    fn len(&self) -> usize {
        self.y.len()
    }

    fn posterior(&self, zbar1: &[Complex64], vbar1: f64) -> Result<ChannelPosterior> {
        channel_posterior(&self.channel, &self.y, zbar1, vbar1)
    }

    fn residual(&self, z: &[Complex64]) -> Option<f64> {
        Some(crate::types::magnitude_residual(&self.y, z))
    }
}

/// Complex AWGN observations `y = z + CN(0, noise_variance I)`. The EC
/// updates are exact under this channel, which makes it a test fixture.
#[derive(Clone, Debug)]
pub struct GaussianLikelihood {
    y: Vec<Complex64>,
    noise_variance: f64,
}

impl GaussianLikelihood {
    pub fn new(y: Vec<Complex64>, noise_variance: f64) -> Result<Self> {
        if !(noise_variance > 0.0) {
            return Err(invalid("noise variance must be positive"));
        }
        Ok(Self { y, noise_variance })
    }
}

impl Likelihood for GaussianLikelihood {
    fn len(&self) -> usize {
        self.y.len()
    }

    fn posterior(&self, zbar1: &[Complex64], vbar1: f64) -> Result<ChannelPosterior> {
        check_len(self.y.len(), zbar1.len())?;
        if !(vbar1 > 0.0) {
            return Err(invalid("extrinsic variance must be positive"));
        }
        let precision = 1.0 / vbar1 + 1.0 / self.noise_variance;
        let variance = 1.0 / precision;
        let mean = zbar1
            .iter()
            .zip(&self.y)
            .map(|(zb, yi)| (zb / vbar1 + yi / self.noise_variance) * variance)
            .collect();
        Ok(ChannelPosterior {
            mean,
            variance,
            floored: 0,
        })
    }
}
