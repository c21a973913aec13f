//! Image-domain denoisers `f(r, v_in) ~ E[x | r = x + N(0, v_in I)]`.

mod bank;
mod divergence;
pub mod remote;
mod tv;

use std::fmt;
use std::sync::Arc;

pub use bank::{DenoiserBank, SelectionPolicy};
pub use divergence::{default_delta, mc_divergence, sure_mse};
pub use remote::RemoteDenoiser;
pub use tv::{tv_denoise, tv_objective, TvDenoiser, TvOptions};

use crate::error::{invalid, Result};
use crate::types::Image;

pub trait Denoiser: Send + Sync {
    fn name(&self) -> &str;

    fn denoise(&self, r: &Image, v_in: f64) -> Result<Image>;

    /// Per-pixel output MSE at input variance `v_in`, when known in closed form.
    fn output_error_variance(&self, _v_in: f64) -> Option<f64> {
        None
    }
}

fn check_input(r: &Image, v_in: f64) -> Result<()> {
    if !(v_in > 0.0) || !v_in.is_finite() {
        return Err(invalid(format!("denoiser input variance must be positive, got {v_in}")));
    }
    debug_assert!(r.pixels().iter().all(|p| p.is_finite()));
    Ok(())
}

/// Returns its input.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn name(&self) -> &str {
        "identity"
    }

    fn denoise(&self, r: &Image, v_in: f64) -> Result<Image> {
        check_input(r, v_in)?;
        Ok(r.clone())
    }

    fn output_error_variance(&self, v_in: f64) -> Option<f64> {
        Some(v_in)
    }
}

/// Always returns zeros. Only useful as a degenerate test case.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn name(&self) -> &str {
        "zero"
    }

    fn denoise(&self, r: &Image, v_in: f64) -> Result<Image> {
        check_input(r, v_in)?;
        let (h, w, c) = r.shape();
        Image::zeros(h, w, c)
    }
}

/// Posterior mean under the i.i.d. prior `x ~ N(mean, tau)`:
/// `mean + tau / (tau + v_in) * (r - mean)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianMmse {
    mean: f64,
    tau: f64,
}

impl GaussianMmse {
    pub fn new(mean: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() || !mean.is_finite() {
            return Err(invalid("Gaussian prior needs finite mean and positive variance"));
        }
        Ok(Self { mean, tau })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn gain(&self, v_in: f64) -> f64 {
        self.tau / (self.tau + v_in)
    }
}

impl Denoiser for GaussianMmse {
    fn name(&self) -> &str {
        "gaussian-mmse"
    }

    fn denoise(&self, r: &Image, v_in: f64) -> Result<Image> {
        check_input(r, v_in)?;
        let g = self.gain(v_in);
        let mu = self.mean;
        r.with_pixels(r.pixels().iter().map(|&p| mu + g * (p - mu)).collect())
    }

    fn output_error_variance(&self, v_in: f64) -> Option<f64> {
        Some(self.tau * v_in / (self.tau + v_in))
    }
}

/// How the prior-side posterior variance `vhat2` is obtained from `vbar2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Beta {
    /// `vhat2 = beta * vbar2` with `0 < beta < 1`, in measurement-domain units.
    Fixed(f64),
    /// `vhat2 = (d / m) * mse`, using the denoiser's closed-form output MSE.
    Analytic,
    /// As `Analytic`, but the MSE is estimated by SURE with the given number
    /// of Monte-Carlo probes (one extra denoiser call per probe).
    Sure { probes: usize },
}

impl Beta {
    pub fn fixed(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(invalid(format!("beta must lie in (0, 1), got {beta}")));
        }
        Ok(Beta::Fixed(beta))
    }
}

/// A denoiser together with its variance model and range of validity.
#[derive(Clone)]
pub struct DenoiserSpec {
    pub denoiser: Arc<dyn Denoiser>,
    pub beta: Beta,
    /// Noise-SD interval `[lo, hi]` (pixel units) served by this denoiser.
    pub sd_range: (f64, f64),
    /// Iterations spent on this denoiser under a by-iteration schedule.
    /// `None` means unbounded.
    pub iteration_budget: Option<usize>,
}

impl fmt::Debug for DenoiserSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DenoiserSpec")
            .field("denoiser", &self.denoiser.name())
            .field("beta", &self.beta)
            .field("sd_range", &self.sd_range)
            .field("iteration_budget", &self.iteration_budget)
            .finish()
    }
}

impl DenoiserSpec {
    pub fn new(denoiser: Arc<dyn Denoiser>, beta: Beta) -> Result<Self> {
        if let Beta::Fixed(b) = beta {
            Beta::fixed(b)?;
        }
        if let Beta::Sure { probes: 0 } = beta {
            return Err(invalid("SURE needs at least one probe"));
        }
        if matches!(beta, Beta::Analytic) && denoiser.output_error_variance(1.0).is_none() {
            return Err(invalid(format!(
                "denoiser '{}' has no closed-form output variance",
                denoiser.name()
            )));
        }
        Ok(Self {
            denoiser,
            beta,
            sd_range: (0.0, f64::INFINITY),
            iteration_budget: None,
        })
    }

    pub fn with_sd_range(mut self, lo: f64, hi: f64) -> Result<Self> {
        if !(lo >= 0.0 && lo <= hi) {
            return Err(invalid(format!("bad SD range [{lo}, {hi}]")));
        }
        self.sd_range = (lo, hi);
        Ok(self)
    }

    pub fn with_budget(mut self, iterations: usize) -> Self {
        self.iteration_budget = Some(iterations);
        self
    }

    pub fn covers(&self, sd: f64) -> bool {
        self.sd_range.0 <= sd && sd <= self.sd_range.1
    }
}
