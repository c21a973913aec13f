use std::sync::Arc;

use num_complex::Complex64;

use super::*;
use crate::channel::{AmplitudeChannel, AmplitudeLikelihood, GaussianLikelihood};
use crate::denoisers::{Denoiser, DenoiserSpec, GaussianMmse, IdentityDenoiser};
use crate::linops::{CdpOperator, OsfOperator};
use crate::rng::sample_real_gaussian;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean) * (x - mean) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
}

#[test]
fn extrinsic_harmonic_case() {
    let e = extrinsic_update(&[c(0.0, 0.0)], 1.0, &[c(0.0, 0.0)], 2.0, VarianceBounds::default()).unwrap();
    assert_eq!(e.vbar, 2.0);
    assert!(!e.clamped);
}

#[test]
fn extrinsic_gaussian_division_identity() {
    let e = extrinsic_update(&[c(3.0, 0.0)], 0.5, &[c(1.0, 0.0)], 1.0, VarianceBounds::default()).unwrap();
    assert!((e.vbar - 1.0).abs() < 1e-15);
    assert!((e.zbar[0] - c(5.0, 0.0)).norm() < 1e-14);
    // N(x; zhat, vhat) / (N(x; zbar, vbar) N(x; zbar', vbar')) is constant in x.
    let ratio = |x: f64| normal_pdf(x, 3.0, 0.5) / (normal_pdf(x, 1.0, 1.0) * normal_pdf(x, 5.0, 1.0));
    let r0 = ratio(-1.0);
    for x in [0.0, 1.3, 2.0, 3.7, 6.0] {
        assert!((ratio(x) / r0 - 1.0).abs() < 1e-12);
    }
}

#[test]
fn extrinsic_clamp_path() {
    let b = VarianceBounds::default();
    let e = extrinsic_update(&[c(2.0, 1.0)], 3.0, &[c(0.0, 0.0)], 3.0, b).unwrap();
    assert!(e.clamped);
    assert_eq!(e.vbar, b.ceiling);
    assert_eq!(e.zbar, vec![c(2.0, 1.0)]);
    assert!(extrinsic_update(&[c(0.0, 0.0)], 0.0, &[c(0.0, 0.0)], 1.0, b).is_err());
}

#[test]
fn deterministic_damping_cases() {
    let raw = [c(1.0, 2.0), c(-3.0, 0.5)];
    let old = [c(0.0, 1.0), c(4.0, 4.0)];
    let (z, v) = damp_deterministic((&raw, 4.0), (&old, 16.0), 1.0).unwrap();
    assert_eq!((z.as_slice(), v), (&raw[..], 4.0));
    let (_, v) = damp_deterministic((&raw, 4.0), (&old, 16.0), 0.5).unwrap();
    assert_eq!(v, 9.0);
    let (z, _) = damp_deterministic((&raw, 4.0), (&raw, 16.0), 0.3).unwrap();
    for (a, b) in z.iter().zip(&raw) {
        assert!((a - b).norm() < 1e-15);
    }
    assert!(damp_deterministic((&raw, 4.0), (&old, 16.0), 0.0).is_err());
    assert!(damp_deterministic((&raw, 4.0), (&old, 16.0), 1.5).is_err());
}

#[test]
fn stochastic_damping_unit_mu_adds_nothing() {
    let raw = vec![c(1.0, 1.0); 1000];
    let s = damp_stochastic(&mut Rng::new(0), (&raw, 4.0), 16.0, 1.0).unwrap();
    assert_eq!(s.injected, 0.0);
    assert_eq!(s.vbar, 4.0);
    assert_eq!(s.zbar, raw);
}

#[test]
fn stochastic_damping_injected_variance() {
    let n = 1_000_000;
    let raw = vec![c(0.0, 0.0); n];
    let s = damp_stochastic(&mut Rng::new(1), (&raw, 4.0), 16.0, 0.5).unwrap();
    assert_eq!(s.vbar, 9.0);
    assert_eq!(s.injected, 5.0);
    let emp = s.zbar.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
    assert!((emp - 5.0).abs() <= 0.02 * 5.0, "{emp}");
}

#[test]
fn stochastic_damping_guard_branch() {
    let raw = vec![c(2.0, -1.0); 10];
    let s = damp_stochastic(&mut Rng::new(2), (&raw, 16.0), 4.0, 0.5).unwrap();
    assert_eq!(s.vbar, 9.0);
    assert_eq!(s.injected, 0.0);
    assert_eq!(s.zbar, raw);
}

#[test]
fn damping_preserves_fixed_points() {
    let z = vec![c(0.3, -0.2), c(1.0, 5.0)];
    let (dz, dv) = damp_deterministic((&z, 7.0), (&z, 7.0), 0.2).unwrap();
    assert!((dv - 7.0).abs() < 1e-12);
    assert!(dz.iter().zip(&z).all(|(a, b)| (a - b).norm() < 1e-15));
    let s = damp_stochastic(&mut Rng::new(3), (&z, 7.0), 7.0, 0.2).unwrap();
    assert!(s.injected.abs() < 1e-12 && s.zbar.iter().zip(&z).all(|(a, b)| (a - b).norm() < 1e-5));
}

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = Rng::new(seed);
    Image::from_fn(h, w, 1, |_, _, _| 255.0 * rng.uniform()).unwrap()
}

#[test]
fn init_z2_cases() {
    let op = OsfOperator::with_oversampling(8, 8, 2).unwrap();
    let x = random_image(8, 8, 0);
    let (_, v) = init_z2(&op, &x, 100.0 * 100.0, 1.2, &mut Rng::new(0)).unwrap();
    assert!((v - 12000.0).abs() < 1e-9);
    let (z, _) = init_z2(&op, &x, 1e-300, 1.2, &mut Rng::new(0)).unwrap();
    let clean = op.forward(&x).unwrap();
    assert!(z.iter().zip(&clean).all(|(a, b)| (a - b).norm() < 1e-100));
    assert!(init_z2(&op, &x, 1.0, 1.0, &mut Rng::new(0)).is_err());
}

#[test]
fn init_z2_noise_level() {
    let op = OsfOperator::with_oversampling(512, 512, 2).unwrap();
    let x = random_image(512, 512, 1);
    let (z, _) = init_z2(&op, &x, 25.0, 1.2, &mut Rng::new(1)).unwrap();
    let clean = op.forward(&x).unwrap();
    let emp = sq_dist(&z, &clean) / z.len() as f64;
    assert!((emp - 25.0).abs() <= 0.02 * 25.0, "{emp}");
}

#[test]
fn em_retune_cases() {
    let z = vec![c(1.0, 2.0), c(3.0, -1.0)];
    assert_eq!(em_retune_vbar2(&z, &z, 0.7).unwrap(), 0.7);
    let zhat = vec![c(0.0, 0.0); 2];
    let a = em_retune_vbar2(&z, &zhat, 0.0).unwrap();
    let z2: Vec<_> = z.iter().map(|v| v * 2.0).collect();
    assert_eq!(em_retune_vbar2(&z2, &zhat, 0.0).unwrap(), 4.0 * a);

    let n = 1_000_000;
    let truth = vec![c(5.0, -5.0); n];
    let noise = sample_circular_complex_gaussian(&mut Rng::new(4), n, 25.0).unwrap();
    let noisy: Vec<_> = truth.iter().zip(&noise).map(|(a, b)| a + b).collect();
    let v = em_retune_vbar2(&noisy, &truth, 0.0).unwrap();
    assert!((v - 25.0).abs() <= 0.5, "{v}");
}

/// Conjugate complex-Gaussian prior `CN(mu0, tau)` as a moment map.
fn gaussian_prior(mu0: Vec<Complex64>, tau: f64) -> impl FnMut(&[Complex64], f64) -> Result<generic::Moments> {
    move |zbar, vbar| {
        let mean = zbar.iter().zip(&mu0).map(|(z, m)| (m * vbar + z * tau) / (tau + vbar)).collect();
        Ok((mean, tau * vbar / (tau + vbar)))
    }
}

fn gaussian_channel(y: Vec<Complex64>, s2: f64) -> impl FnMut(&[Complex64], f64) -> Result<generic::Moments> {
    let lik = GaussianLikelihood::new(y, s2).unwrap();
    move |zbar, vbar| {
        let p = lik.posterior(zbar, vbar)?;
        Ok((p.mean, p.variance))
    }
}

#[test]
fn ec_run_matches_conjugate_posterior() {
    let m = 64;
    let mut rng = Rng::new(5);
    let mu0: Vec<_> = (0..m).map(|_| c(rng.standard_normal(), rng.standard_normal())).collect();
    let y: Vec<_> = (0..m).map(|_| c(3.0 * rng.standard_normal(), rng.standard_normal())).collect();
    let (tau, s2) = (2.0, 0.5);
    let z = ec_run(gaussian_prior(mu0.clone(), tau), gaussian_channel(y.clone(), s2), m, 50, 1e-12).unwrap();
    for i in 0..m {
        let want = (mu0[i] * s2 + y[i] * tau) / (tau + s2);
        assert!((z[i] - want).norm() < 1e-10);
    }
}

#[test]
fn ec_run_dominating_prior() {
    let mu0 = vec![c(7.0, -2.0); 4];
    let z = ec_run(gaussian_prior(mu0.clone(), 1e-6), gaussian_channel(vec![c(0.0, 0.0); 4], 1.0), 4, 50, 1e-12).unwrap();
    assert!(z.iter().all(|v| (v - mu0[0]).norm() < 1e-4));
}

#[test]
fn ec_run_scalar_converges_fast() {
    let options = EcOptions {
        max_iters: 50,
        tol: 1e-12,
        ..EcOptions::default()
    };
    let out = ec_run_with(gaussian_prior(vec![c(1.0, 0.0)], 3.0), gaussian_channel(vec![c(2.0, 1.0)], 1.0), 1, &options).unwrap();
    assert!(out.converged);
    assert!(out.iterations <= 3, "{}", out.iterations);
}

#[test]
fn ec_run_reports_divergence() {
    // A channel that never adds information keeps the prior-side variance pinned.
    let prior = |z: &[Complex64], v: f64| Ok((z.to_vec(), v));
    let channel = |z: &[Complex64], v: f64| Ok((z.to_vec(), v));
    match ec_run(prior, channel, 3, 50, 1e-12) {
        Err(Error::Divergence { iterations, trace, .. }) => {
            assert_eq!(iterations, 5);
            assert_eq!(trace.len(), 5);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

/// Real image prior `N(mu, tau)` observed through `y = A x + CN(0, s2)`:
/// with `A^H A = I`, `Re{A^H y}` is sufficient with noise variance `s2 / 2`.
fn joint_gaussian_fixture(seed: u64) -> (CdpOperator, GaussianLikelihood, GaussianMmse, Vec<Complex64>, Image) {
    let (h, w, mu, tau, s2) = (32, 32, 120.0, 900.0, 40.0);
    let mut rng = Rng::new(seed);
    let op = CdpOperator::random(h, w, 4, &mut rng).unwrap();
    let x = Image::new(h, w, 1, sample_real_gaussian(&mut rng, h * w, tau).unwrap().iter().map(|v| v + mu).collect()).unwrap();
    let noise = sample_circular_complex_gaussian(&mut rng, 4 * h * w, s2).unwrap();
    let y: Vec<_> = op.forward(&x).unwrap().iter().zip(&noise).map(|(a, b)| a + b).collect();
    let stat = op.sufficient_statistic(&y).unwrap();
    let prior = GaussianMmse::new(mu, tau).unwrap();
    let post = prior.denoise(&stat, s2 / 2.0).unwrap();
    let z_post = op.forward(&post).unwrap();
    (op, GaussianLikelihood::new(y, s2).unwrap(), prior, z_post, x)
}

fn exact_config() -> RunConfig {
    RunConfig {
        mu1: 1.0,
        mu2: 1.0,
        em_iters: 0,
        iterations: 20,
        ..RunConfig::default()
    }
}

#[test]
fn deepecpr_gaussian_exactness() {
    let (op, lik, prior, z_post, x) = joint_gaussian_fixture(6);
    let spec = DenoiserSpec::new(Arc::new(prior), Beta::Analytic).unwrap();
    let bank = DenoiserBank::single(spec);
    let x_init = Image::new(32, 32, 1, vec![100.0; 1024]).unwrap();
    let out = deepecpr_run(&exact_config(), &lik, &op, &bank, &x_init, Some(&x)).unwrap();
    let err = out.zhat2.iter().zip(&z_post).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-8, "{err}");
    assert_eq!(out.trace.len(), 20);
    assert_eq!(out.denoiser_calls(), 20);
}

#[test]
fn deepecpr_undamped_matches_straight_line_ec() {
    let (op, lik, prior, _, _) = joint_gaussian_fixture(7);
    let spec = DenoiserSpec::new(Arc::new(prior), Beta::Analytic).unwrap();
    let bank = DenoiserBank::single(spec);
    let x_init = Image::new(32, 32, 1, vec![90.0; 1024]).unwrap();
    let config = RunConfig {
        iterations: 6,
        ..exact_config()
    };
    let out = deepecpr_run(&config, &lik, &op, &bank, &x_init, None).unwrap();

    // Same initial message, then the plain two-sided recursion.
    let init = init_z2(&op, &x_init, config.vbar_init, config.zeta, &mut Rng::new(config.seed).fork(STREAM_INIT)).unwrap();
    let ratio = 1024.0 / 4096.0;
    let prior_moments = |zbar: &[Complex64], vbar: f64| -> Result<generic::Moments> {
        let r = op.sufficient_statistic(zbar)?;
        let x = prior.denoise(&r, vbar / 2.0)?;
        Ok((op.forward(&x)?, ratio * prior.output_error_variance(vbar / 2.0).unwrap()))
    };
    let channel = |zbar: &[Complex64], vbar: f64| -> Result<generic::Moments> {
        let p = lik.posterior(zbar, vbar)?;
        Ok((p.mean, p.variance))
    };
    let options = EcOptions {
        max_iters: 6,
        tol: 0.0,
        init: Some(init),
        record_states: true,
        ..EcOptions::default()
    };
    let oracle = ec_run_with(prior_moments, channel, 4096, &options).unwrap();
    for (rec, st) in out.trace.records.iter().zip(&oracle.states) {
        for (a, b) in [(rec.vbar1, st.vbar1), (rec.vbar2, st.vbar2), (rec.vhat1, st.vhat1), (rec.vhat2, st.vhat2)] {
            assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }
    let last = oracle.states.last().unwrap();
    let err = out.zhat2.iter().zip(&last.zhat2).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    assert!(err < 1e-10, "{err}");
}

#[test]
fn deepecpr_is_deterministic() {
    let x = crate::phantom::phantom(&crate::phantom::PhantomSpec::new(16, 16, 1), 0).unwrap();
    let mut rng = Rng::new(8);
    let op = CdpOperator::random(16, 16, 4, &mut rng).unwrap();
    let y: Vec<f64> = op.forward(&x).unwrap().iter().map(|z| z.norm()).collect();
    let lik = AmplitudeLikelihood::new(y, AmplitudeChannel::new(1.0).unwrap()).unwrap();
    let spec = DenoiserSpec::new(Arc::new(IdentityDenoiser), Beta::Fixed(0.2)).unwrap();
    let bank = DenoiserBank::single(spec);
    let x0 = Image::new(16, 16, 1, vec![128.0; 256]).unwrap();
    let config = RunConfig {
        iterations: 15,
        ..RunConfig::default()
    };
    let a = deepecpr_run(&config, &lik, &op, &bank, &x0, Some(&x)).unwrap();
    let b = deepecpr_run(&config, &lik, &op, &bank, &x0, Some(&x)).unwrap();
    assert_eq!(a.x, b.x);
    assert_eq!(a.trace, b.trace);
    let other = deepecpr_run(&RunConfig { seed: 1, ..config }, &lik, &op, &bank, &x0, Some(&x)).unwrap();
    assert_ne!(a.trace, other.trace);
}

struct NanDenoiser;

impl Denoiser for NanDenoiser {
    fn name(&self) -> &str {
        "nan"
    }

    fn denoise(&self, r: &Image, _v_in: f64) -> Result<Image> {
        let mut out = r.clone();
        out.pixels_mut()[0] = f64::NAN;
        Ok(out)
    }
}

#[test]
fn nonfinite_state_names_step_and_iteration() {
    let op = OsfOperator::with_oversampling(4, 4, 2).unwrap();
    let lik = AmplitudeLikelihood::new(vec![1.0; 64], AmplitudeChannel::new(1.0).unwrap()).unwrap();
    let bank = DenoiserBank::single(DenoiserSpec::new(Arc::new(NanDenoiser), Beta::Fixed(0.5)).unwrap());
    let x0 = Image::new(4, 4, 1, vec![1.0; 16]).unwrap();
    match deepecpr_run(&RunConfig::default(), &lik, &op, &bank, &x0, None) {
        Err(Error::Solver(f)) => {
            assert_eq!(f.iteration, 1);
            assert_eq!(f.step, "denoise");
            assert!(f.trace.is_empty());
        }
        other => panic!("expected solver failure, got {other:?}"),
    }
}

#[test]
fn config_validation() {
    let bad = [
        RunConfig { mu1: 0.0, ..RunConfig::default() },
        RunConfig { mu2: 1.1, ..RunConfig::default() },
        RunConfig { zeta: 1.0, ..RunConfig::default() },
        RunConfig { iterations: 0, ..RunConfig::default() },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err());
    }
    assert!(RunConfig::default().validate().is_ok());
}
