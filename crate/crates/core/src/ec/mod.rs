//! Expectation-consistent inference in the measurement domain.
//!
//! Side 2 is the image prior (reached through a denoiser), side 1 the
//! measurement channel. Each side turns the other's extrinsic message
//! `CN(zbar, vbar I)` into a posterior mean and average variance, and the
//! Gaussian quotient of posterior and message is sent back.

mod generic;
mod trace;

use log::debug;
use num_complex::Complex64;

pub use generic::{ec_run, ec_run_with, EcOptions, EcOutcome};
pub use trace::{IterationRecord, IterationTrace, TRACE_COLUMNS};

use crate::channel::Likelihood;
use crate::denoisers::{sure_mse, Beta, DenoiserBank, DenoiserSpec};
use crate::error::{check_len, invalid, Error, Result, SolverFailure};
use crate::linops::LinearOperator;
use crate::metrics::psnr;
use crate::rng::{sample_circular_complex_gaussian, Rng};
use crate::types::{all_finite, rms_error, sq_dist, Image};

/// Range every extrinsic and posterior variance is clamped to.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VarianceBounds {
    pub floor: f64,
    pub ceiling: f64,
}

impl Default for VarianceBounds {
    fn default() -> Self {
        Self {
            floor: 1e-9,
            ceiling: 1e12,
        }
    }
}

impl VarianceBounds {
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.floor, self.ceiling)
    }
}

/// Result of dividing a posterior by an incoming message.
#[derive(Clone, Debug, PartialEq)]
pub struct Extrinsic {
    pub zbar: Vec<Complex64>,
    pub vbar: f64,
    /// `vhat >= vbar`: the quotient has no finite positive variance and the
    /// ceiling was used instead.
    pub clamped: bool,
}

/// `vbar' = (1/vhat - 1/vbar)^-1`, `zbar' = (zhat/vhat - zbar/vbar) vbar'`.
///
/// When the posterior is not more precise than the message, `vbar'` is set
/// to the ceiling and `zbar'` to `zhat` (the limit of the mean as the
/// quotient precision goes to zero from above).
pub fn extrinsic_update(
    zhat: &[Complex64],
    vhat: f64,
    zbar: &[Complex64],
    vbar: f64,
    bounds: VarianceBounds,
) -> Result<Extrinsic> {
    check_len(zhat.len(), zbar.len())?;
    if !(vhat > 0.0) || !(vbar > 0.0) {
        return Err(invalid(format!("variances must be positive (vhat {vhat}, vbar {vbar})")));
    }
    let precision = 1.0 / vhat - 1.0 / vbar;
    if !(precision > 0.0) || 1.0 / precision > bounds.ceiling {
        debug!("extrinsic precision {precision:e} is not positive; clamping variance to {:e}", bounds.ceiling);
        return Ok(Extrinsic {
            zbar: zhat.to_vec(),
            vbar: bounds.ceiling,
            clamped: true,
        });
    }
    let raw = bounds.clamp(1.0 / precision);
    let (a, b) = (raw / vhat, raw / vbar);
    let out = zhat.iter().zip(zbar).map(|(h, z)| h * a - z * b).collect();
    Ok(Extrinsic {
        zbar: out,
        vbar: raw,
        clamped: false,
    })
}

fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu <= 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("damping factor must lie in (0, 1], got {mu}")))
    }
}

/// Damped variance `(mu sqrt(raw) + (1 - mu) sqrt(old))^2`.
pub fn damp_variance(raw: f64, old: f64, mu: f64) -> f64 {
    let s = mu * raw.sqrt() + (1.0 - mu) * old.sqrt();
    s * s
}

/// Convex combination of means, damped variance in the SD domain.
pub fn damp_deterministic(
    raw: (&[Complex64], f64),
    old: (&[Complex64], f64),
    mu: f64,
) -> Result<(Vec<Complex64>, f64)> {
    check_mu(mu)?;
    check_len(raw.0.len(), old.0.len())?;
    if mu == 1.0 {
        return Ok((raw.0.to_vec(), raw.1));
    }
    let z = raw.0.iter().zip(old.0).map(|(r, o)| r * mu + o * (1.0 - mu)).collect();
    Ok((z, damp_variance(raw.1, old.1, mu)))
}

/// Output of [`damp_stochastic`].
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticDamping {
    pub zbar: Vec<Complex64>,
    pub vbar: f64,
    /// Per-entry total variance of the added noise.
    pub injected: f64,
}

/// Damps the variance like [`damp_deterministic`] but keeps the raw mean,
/// adding `CN(0, vbar - vbar_raw)` noise so the mean's error level matches
/// the damped variance. Nothing is added when `vbar <= vbar_raw`.
pub fn damp_stochastic(
    rng: &mut Rng,
    raw: (&[Complex64], f64),
    old_vbar: f64,
    mu: f64,
) -> Result<StochasticDamping> {
    check_mu(mu)?;
    let vbar = if mu == 1.0 { raw.1 } else { damp_variance(raw.1, old_vbar, mu) };
    let injected = vbar - raw.1;
    if !(injected > 0.0) {
        return Ok(StochasticDamping {
            zbar: raw.0.to_vec(),
            vbar,
            injected: 0.0,
        });
    }
    let noise = sample_circular_complex_gaussian(rng, raw.0.len(), injected)?;
    let zbar = raw.0.iter().zip(&noise).map(|(z, n)| z + n).collect();
    Ok(StochasticDamping { zbar, vbar, injected })
}

/// `zbar2 = A x_init + CN(0, vbar_init I)`, `vbar2 = zeta vbar_init`.
pub fn init_z2(
    op: &dyn LinearOperator,
    x_init: &Image,
    vbar_init: f64,
    zeta: f64,
    rng: &mut Rng,
) -> Result<(Vec<Complex64>, f64)> {
    if !(zeta > 1.0) {
        return Err(invalid(format!("zeta must exceed 1, got {zeta}")));
    }
    if !(vbar_init > 0.0) {
        return Err(invalid(format!("vbar_init must be positive, got {vbar_init}")));
    }
    let mut z = op.forward(x_init)?;
    let noise = sample_circular_complex_gaussian(rng, z.len(), vbar_init)?;
    z.iter_mut().zip(&noise).for_each(|(a, n)| *a += n);
    Ok((z, zeta * vbar_init))
}

/// EM estimate of the AWGN level of `zbar2` around the prior posterior:
/// `||zbar2 - zhat2||^2 / m + vhat2`.
pub fn em_retune_vbar2(zbar2: &[Complex64], zhat2: &[Complex64], vhat2: f64) -> Result<f64> {
    check_len(zbar2.len(), zhat2.len())?;
    if zbar2.is_empty() {
        return Err(invalid("empty vectors"));
    }
    Ok(sq_dist(zbar2, zhat2) / zbar2.len() as f64 + vhat2)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DampingMode {
    #[default]
    Stochastic,
    Deterministic,
}

/// Hyperparameters of one reconstruction.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub mu1: f64,
    pub mu2: f64,
    pub zeta: f64,
    pub vbar_init: f64,
    pub iterations: usize,
    /// Iterations (from the first) during which `vbar2` is re-estimated by EM.
    pub em_iters: usize,
    pub damping: DampingMode,
    pub bounds: VarianceBounds,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mu1: 0.3,
            mu2: 0.075,
            zeta: 1.2,
            vbar_init: 70.0 * 70.0,
            iterations: 200,
            em_iters: 10,
            damping: DampingMode::Stochastic,
            bounds: VarianceBounds::default(),
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        check_mu(self.mu1)?;
        check_mu(self.mu2)?;
        if !(self.zeta > 1.0) {
            return Err(invalid("zeta must exceed 1"));
        }
        if !(self.vbar_init > 0.0) {
            return Err(invalid("vbar_init must be positive"));
        }
        if self.iterations == 0 {
            return Err(invalid("need at least one iteration"));
        }
        if !(self.bounds.floor > 0.0 && self.bounds.floor < self.bounds.ceiling) {
            return Err(invalid("variance bounds must satisfy 0 < floor < ceiling"));
        }
        Ok(())
    }
}

/// Output of [`deepecpr_run`].
#[derive(Clone, Debug)]
pub struct RunOutput {
    /// Final denoiser output.
    pub x: Image,
    pub zhat2: Vec<Complex64>,
    pub trace: IterationTrace,
}

impl RunOutput {
    pub fn denoiser_calls(&self) -> usize {
        self.trace.denoiser_calls()
    }
}

const STREAM_INIT: u64 = 1;
const STREAM_DAMPING: u64 = 2;
const STREAM_SURE: u64 = 3;

struct Guard<'a> {
    trace: &'a IterationTrace,
    iteration: usize,
}

impl Guard<'_> {
    fn vector(&self, z: &[Complex64], step: &'static str) -> Result<()> {
        if all_finite(z) {
            Ok(())
        } else {
            Err(self.fail(step))
        }
    }

    fn scalar(&self, v: f64, step: &'static str) -> Result<()> {
        if v.is_finite() {
            Ok(())
        } else {
            Err(self.fail(step))
        }
    }

    fn fail(&self, step: &'static str) -> Error {
        Error::Solver(Box::new(SolverFailure {
            iteration: self.iteration,
            step,
            trace: self.trace.clone(),
        }))
    }
}

fn prior_variance(
    spec: &DenoiserSpec,
    vbar2: f64,
    v_in: f64,
    ratio: f64,
    sure: (&Image, &Image, &mut Rng),
) -> Result<(f64, usize)> {
    match spec.beta {
        Beta::Fixed(b) => Ok((b * vbar2, 0)),
        Beta::Analytic => {
            let mse = spec
                .denoiser
                .output_error_variance(v_in)
                .ok_or_else(|| invalid("denoiser has no closed-form output variance"))?;
            Ok((ratio * mse, 0))
        }
        Beta::Sure { probes } => {
            let (r, x, rng) = sure;
            let mse = sure_mse(spec.denoiser.as_ref(), r, x, v_in, probes, rng)?;
            Ok((ratio * mse, probes))
        }
    }
}

/// Runs `config.iterations` iterations of EC with a denoiser prior.
///
/// `x_init` seeds the prior-side message; `truth`, when given, fills the
/// error and PSNR columns of the trace.
pub fn deepecpr_run(
    config: &RunConfig,
    likelihood: &dyn Likelihood,
    op: &dyn LinearOperator,
    bank: &DenoiserBank,
    x_init: &Image,
    truth: Option<&Image>,
) -> Result<RunOutput> {
    config.validate()?;
    let bounds = config.bounds;
    let root = Rng::new(config.seed);
    let mut damp_rng = root.fork(STREAM_DAMPING);
    let mut sure_rng = root.fork(STREAM_SURE);

    let (mut zbar2, mut vbar2) = init_z2(op, x_init, config.vbar_init, config.zeta, &mut root.fork(STREAM_INIT))?;
    let m = zbar2.len();
    check_len(m, likelihood.len())?;
    let d = x_init.pixels().len();
    let ratio = d as f64 / m as f64;
    let z_true = match truth {
        Some(t) => {
            if !t.same_shape(x_init) {
                return Err(invalid("ground truth and initial image differ in shape"));
            }
            Some(op.forward(t)?)
        }
        None => None,
    };
    let err = |z: &[Complex64]| z_true.as_ref().map(|t| rms_error(z, t));

    let mut trace = IterationTrace::default();
    let mut old1: Option<(Vec<Complex64>, f64)> = None;
    let mut calls = 0usize;
    let mut x_hat = x_init.clone();
    let mut zhat2 = Vec::new();

    for t in 1..=config.iterations {
        let guard = Guard { trace: &trace, iteration: t };

        // Prior side: denoise the sufficient statistic.
        let r = op.sufficient_statistic(&zbar2)?;
        let v_in = 0.5 * vbar2;
        let spec = bank.select(v_in.sqrt(), t)?;
        x_hat = spec.denoiser.denoise(&r, v_in)?;
        calls += 1;
        guard.scalar(x_hat.pixels().iter().sum(), "denoise")?;
        zhat2 = op.forward(&x_hat)?;
        let (mut vhat2, extra) = prior_variance(spec, vbar2, v_in, ratio, (&r, &x_hat, &mut sure_rng))?;
        calls += extra;
        vhat2 = bounds.clamp(vhat2);
        if t <= config.em_iters {
            // Re-estimate the prior-side input noise level. Under a fixed
            // beta the posterior variance follows it; the other rules
            // already describe the denoiser output that was produced.
            vbar2 = bounds.clamp(em_retune_vbar2(&zbar2, &zhat2, vhat2)?);
            if let Beta::Fixed(b) = spec.beta {
                vhat2 = bounds.clamp(b * vbar2);
            }
        }
        guard.vector(&zhat2, "prior posterior")?;
        guard.scalar(vhat2, "prior posterior")?;

        // Prior-to-channel message, damped from the second iteration on.
        let raw1 = extrinsic_update(&zhat2, vhat2, &zbar2, vbar2, bounds)?;
        let mut clamped = raw1.clamped;
        let (zbar1, vbar1) = match old1.take() {
            None => (raw1.zbar, raw1.vbar),
            Some((oz, ov)) => damp_deterministic((&raw1.zbar, raw1.vbar), (&oz, ov), config.mu1)?,
        };
        let vbar1 = bounds.clamp(vbar1);
        guard.vector(&zbar1, "prior extrinsic")?;
        guard.scalar(vbar1, "prior extrinsic")?;

        // Channel side.
        let post = likelihood.posterior(&zbar1, vbar1)?;
        let vhat1 = bounds.clamp(post.variance);
        guard.vector(&post.mean, "channel posterior")?;
        guard.scalar(vhat1, "channel posterior")?;

        // Channel-to-prior message.
        let raw2 = extrinsic_update(&post.mean, vhat1, &zbar1, vbar1, bounds)?;
        clamped |= raw2.clamped;
        let (next_z, next_v, injected) = match config.damping {
            DampingMode::Stochastic => {
                let s = damp_stochastic(&mut damp_rng, (&raw2.zbar, raw2.vbar), vbar2, config.mu2)?;
                (s.zbar, s.vbar, s.injected)
            }
            DampingMode::Deterministic => {
                let (z, v) = damp_deterministic((&raw2.zbar, raw2.vbar), (&zbar2, vbar2), config.mu2)?;
                (z, v, 0.0)
            }
        };
        guard.vector(&next_z, "channel extrinsic")?;
        guard.scalar(next_v, "channel extrinsic")?;

        let record = IterationRecord {
            iter: t,
            vbar1,
            vbar2: bounds.clamp(next_v),
            vhat1,
            vhat2,
            err_zbar1: err(&zbar1),
            err_zbar2: err(&next_z),
            err_zhat1: err(&post.mean),
            err_zhat2: err(&zhat2),
            injected_sd: injected.sqrt(),
            psnr: truth.map(|g| psnr(&x_hat, g)).transpose()?,
            denoiser_calls: calls,
            floored: post.floored,
            clamped,
        };
        old1 = Some((zbar1, vbar1));
        zbar2 = next_z;
        vbar2 = record.vbar2;
        trace.records.push(record);
    }

    Ok(RunOutput {
        x: x_hat,
        zhat2,
        trace,
    })
}

#[cfg(test)]
mod tests;
