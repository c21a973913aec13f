//! The undamped EC loop for arbitrary prior and channel moment maps.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

use super::{extrinsic_update, VarianceBounds};

/// A moment map `(zbar, vbar) -> (posterior mean, average posterior variance)`.
pub type Moments = (Vec<Complex64>, f64);

#[derive(Clone, Debug, PartialEq)]
pub struct EcOptions {
    pub max_iters: usize,
    /// Stop when `|vhat1 - vhat2| / vhat2 < tol`.
    pub tol: f64,
    pub bounds: VarianceBounds,
    /// Starting prior-side message; defaults to zeros at the ceiling variance.
    pub init: Option<(Vec<Complex64>, f64)>,
    /// Keep every iteration's states in [`EcOutcome::states`].
    pub record_states: bool,
}

impl Default for EcOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-12,
            bounds: VarianceBounds::default(),
            init: None,
            record_states: false,
        }
    }
}

/// All messages of one completed iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct EcState {
    pub zhat2: Vec<Complex64>,
    pub vhat2: f64,
    pub zbar1: Vec<Complex64>,
    pub vbar1: f64,
    pub zhat1: Vec<Complex64>,
    pub vhat1: f64,
    pub zbar2: Vec<Complex64>,
    pub vbar2: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EcOutcome {
    pub zhat2: Vec<Complex64>,
    pub vhat2: f64,
    pub zhat1: Vec<Complex64>,
    pub vhat1: f64,
    pub iterations: usize,
    pub converged: bool,
    pub states: Vec<EcState>,
}

/// Runs EC from a non-informative prior-side message and returns the final
/// prior-side posterior mean.
pub fn ec_run<P, C>(prior: P, channel: C, m: usize, max_iters: usize, tol: f64) -> Result<Vec<Complex64>>
where
    P: FnMut(&[Complex64], f64) -> Result<Moments>,
    C: FnMut(&[Complex64], f64) -> Result<Moments>,
{
    let options = EcOptions {
        max_iters,
        tol,
        ..EcOptions::default()
    };
    Ok(ec_run_with(prior, channel, m, &options)?.zhat2)
}

const DIVERGENCE_PATIENCE: usize = 5;

pub fn ec_run_with<P, C>(mut prior: P, mut channel: C, m: usize, options: &EcOptions) -> Result<EcOutcome>
where
    P: FnMut(&[Complex64], f64) -> Result<Moments>,
    C: FnMut(&[Complex64], f64) -> Result<Moments>,
{
    if m == 0 || options.max_iters == 0 {
        return Err(invalid("need m >= 1 and at least one iteration"));
    }
    let bounds = options.bounds;
    let (mut zbar2, mut vbar2) = match &options.init {
        Some((z, v)) => (z.clone(), *v),
        None => (vec![Complex64::new(0.0, 0.0); m], bounds.ceiling),
    };
    if zbar2.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            actual: zbar2.len(),
        });
    }
    let mut history: Vec<[f64; 4]> = Vec::new();
    let mut states = Vec::new();
    let mut at_ceiling = 0usize;
    let mut last: Option<(Vec<Complex64>, f64, Vec<Complex64>, f64)> = None;

    for it in 1..=options.max_iters {
        let (zhat2, vhat2) = prior(&zbar2, vbar2)?;
        let vhat2 = bounds.clamp(vhat2);
        let e1 = extrinsic_update(&zhat2, vhat2, &zbar2, vbar2, bounds)?;
        let (zhat1, vhat1) = channel(&e1.zbar, e1.vbar)?;
        let vhat1 = bounds.clamp(vhat1);
        let e2 = extrinsic_update(&zhat1, vhat1, &e1.zbar, e1.vbar, bounds)?;

        history.push([e1.vbar, e2.vbar, vhat1, vhat2]);
        if e1.clamped || e2.clamped {
            at_ceiling += 1;
            if at_ceiling >= DIVERGENCE_PATIENCE {
                return Err(Error::Divergence {
                    iterations: it,
                    reason: format!(
                        "extrinsic variance pinned at the ceiling for {DIVERGENCE_PATIENCE} iterations"
                    ),
                    trace: history,
                });
            }
        } else {
            at_ceiling = 0;
        }
        if options.record_states {
            states.push(EcState {
                zhat2: zhat2.clone(),
                vhat2,
                zbar1: e1.zbar.clone(),
                vbar1: e1.vbar,
                zhat1: zhat1.clone(),
                vhat1,
                zbar2: e2.zbar.clone(),
                vbar2: e2.vbar,
            });
        }
        let converged = at_ceiling == 0 && ((vhat1 - vhat2) / vhat2).abs() < options.tol;
        zbar2 = e2.zbar;
        vbar2 = e2.vbar;
        last = Some((zhat2, vhat2, zhat1, vhat1));
        if converged {
            let (zhat2, vhat2, zhat1, vhat1) = last.unwrap();
            return Ok(EcOutcome {
                zhat2,
                vhat2,
                zhat1,
                vhat1,
                iterations: it,
                converged: true,
                states,
            });
        }
    }
    let (zhat2, vhat2, zhat1, vhat1) = last.expect("at least one iteration");
    Ok(EcOutcome {
        zhat2,
        vhat2,
        zhat1,
        vhat1,
        iterations: options.max_iters,
        converged: false,
        states,
    })
}
