//! Per-job work: one (image, seed) pair owns an RNG substream and an output
//! directory `<out>/<image>_seed<seed>/`.
//!
//! `simulate` writes `measurement.json`, `y.ecpv` and, for CDP, `codes.ecpv`.
//! `run` reads them back and writes `<solver>/xhat.{pgm,ppm}`,
//! `<solver>/metrics.json` and, for deepECpr, `<solver>/trace.csv`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ImageSource, Noise, NoiseConfig, OperatorConfig, SolverConfig};
use crate::baselines::{cdp_init, hio_run, measurement_residual, osf_init_protocol, OsfInitOptions};
use crate::channel::{alpha_to_v, simulate_measurements, AmplitudeChannel, AmplitudeLikelihood, GaussianLikelihood, Likelihood, NoiseModel};
use crate::ec::{deepecpr_run, IterationTrace};
use crate::error::{check_len, Error, Result};
use crate::io;
use crate::linops::{make_cdp_codes, CdpCodes, CdpOperator, LinearOperator, Operator, OsfOperator};
use crate::metrics::{psnr, resolve_ambiguity, ssim};
use crate::rng::{sample_circular_complex_gaussian, Rng};
use crate::types::{sq_dist, Image};

const STREAM_CODES: u64 = 1;
const STREAM_NOISE: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_SOLVER: u64 = 4;

/// Written in place of an infinite PSNR, which JSON cannot carry.
pub const PSNR_SENTINEL: f64 = 999.0;

pub const MEASUREMENT_FILE: &str = "measurement.json";
pub const Y_FILE: &str = "y.ecpv";
pub const CODES_FILE: &str = "codes.ecpv";
pub const METRICS_FILE: &str = "metrics.json";
pub const TRACE_FILE: &str = "trace.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub name: String,
    pub index: usize,
    pub seed: u64,
    pub source: ImageSource,
}

impl Job {
    pub fn dir(&self, out: &Path) -> PathBuf {
        out.join(format!("{}_seed{}", self.name, self.seed))
    }

    fn rng(&self) -> Rng {
        Rng::new(self.seed).fork(self.index as u64)
    }
}

/// Every (image, seed) pair, images outermost.
pub fn jobs(cfg: &ExperimentConfig) -> Vec<Job> {
    let mut out = Vec::with_capacity(cfg.images.len() * cfg.seeds.len());
    for (index, source) in cfg.images.iter().enumerate() {
        for &seed in &cfg.seeds {
            out.push(Job {
                name: source.name(),
                index,
                seed,
                source: source.clone(),
            });
        }
    }
    out
}

/// Everything needed to rebuild the forward model of one job.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MeasurementInfo {
    pub image: String,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub operator: OperatorConfig,
    pub noise: NoiseConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Observations {
    Magnitudes(Vec<f64>),
    Complex(Vec<Complex64>),
}

#[derive(Clone, Debug)]
pub struct Measurements {
    pub info: MeasurementInfo,
    pub op: Operator,
    pub y: Observations,
}

fn build_operator(cfg: &OperatorConfig, h: usize, w: usize, codes: Option<CdpCodes>) -> Result<Operator> {
    Ok(match cfg {
        OperatorConfig::Osf { oversampling } => Operator::Osf(OsfOperator::with_oversampling(h, w, *oversampling)?),
        OperatorConfig::Cdp { codes: k } => {
            let codes = codes.ok_or_else(|| Error::InvalidArgument("CDP operator needs codes".into()))?;
            if codes.count() != *k || codes.pixels() != h * w {
                return Err(Error::Format(format!(
                    "stored codes are {}x{}, expected {k}x{}",
                    codes.count(),
                    codes.pixels(),
                    h * w
                )));
            }
            Operator::Cdp(CdpOperator::new(h, w, codes)?)
        }
    })
}

/// Simulates one job's measurements from its ground truth and writes them.
pub fn simulate_job(cfg: &ExperimentConfig, base: &Path, job: &Job, out: &Path) -> Result<Measurements> {
    let x = job.source.load(base)?;
    let meas = simulate_from(cfg, job, &x)?;
    let dir = job.dir(out);
    create_dir(&dir)?;
    if let Operator::Cdp(op) = &meas.op {
        let flat: Vec<Complex64> = op.codes().codes().concat();
        io::write_complex(&dir.join(CODES_FILE), &flat)?;
    }
    match &meas.y {
        Observations::Magnitudes(y) => io::write_real(&dir.join(Y_FILE), y)?,
        Observations::Complex(y) => io::write_complex(&dir.join(Y_FILE), y)?,
    }
    write_json(&dir.join(MEASUREMENT_FILE), &meas.info)?;
    // Magnitudes are stored as f32; hand back exactly what a reload sees.
    load_measurements(&dir)
}

/// In-memory simulation with the job's RNG streams.
pub fn simulate_from(cfg: &ExperimentConfig, job: &Job, x: &Image) -> Result<Measurements> {
    let (h, w, c) = x.shape();
    let rng = job.rng();
    let codes = match cfg.operator {
        OperatorConfig::Cdp { codes } => Some(make_cdp_codes(&mut rng.fork(STREAM_CODES), h * w, codes)?),
        OperatorConfig::Osf { .. } => None,
    };
    let op = build_operator(&cfg.operator, h, w, codes)?;
    let z = op.forward(x)?;
    let mut noise_rng = rng.fork(STREAM_NOISE);
    let y = match cfg.noise.resolve()? {
        Noise::Shot { alpha } => Observations::Magnitudes(simulate_measurements(&mut noise_rng, &z, NoiseModel::new(alpha)?)),
        Noise::Gaussian { variance } => {
            let n = sample_circular_complex_gaussian(&mut noise_rng, z.len(), variance)?;
            Observations::Complex(z.iter().zip(&n).map(|(a, b)| a + b).collect())
        }
    };
    Ok(Measurements {
        info: MeasurementInfo {
            image: job.name.clone(),
            seed: job.seed,
            height: h,
            width: w,
            channels: c,
            operator: cfg.operator,
            noise: cfg.noise,
        },
        op,
        y,
    })
}

pub fn load_measurements(dir: &Path) -> Result<Measurements> {
    let info: MeasurementInfo = read_json(&dir.join(MEASUREMENT_FILE))?;
    let (h, w) = (info.height, info.width);
    let codes = match info.operator {
        OperatorConfig::Cdp { codes: k } => {
            let flat = io::read_vector(&dir.join(CODES_FILE))?.into_complex()?;
            check_len(k * h * w, flat.len())?;
            Some(CdpCodes::new(flat.chunks_exact(h * w).map(<[_]>::to_vec).collect())?)
        }
        OperatorConfig::Osf { .. } => None,
    };
    let op = build_operator(&info.operator, h, w, codes)?;
    let y = match io::read_vector(&dir.join(Y_FILE))? {
        io::Vector::Real(v) => Observations::Magnitudes(v),
        io::Vector::Complex(v) => Observations::Complex(v),
    };
    let len = match &y {
        Observations::Magnitudes(v) => v.len(),
        Observations::Complex(v) => v.len(),
    };
    check_len(op.measurements_per_channel() * info.channels, len)?;
    Ok(Measurements { info, op, y })
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub image: String,
    pub seed: u64,
    pub solver: String,
    pub operator: String,
    /// `None` for the Gaussian test channel.
    pub alpha: Option<f64>,
    pub psnr: f64,
    pub ssim: f64,
    pub residual: f64,
    pub denoiser_calls: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug)]
pub struct JobResult {
    pub metrics: Metrics,
    pub estimate: Image,
    pub trace: Option<IterationTrace>,
    pub dir: PathBuf,
}

/// Endpoint overrides for remote denoisers.
#[derive(Clone, Debug, Default)]
pub struct Endpoints {
    pub cli: Option<String>,
    pub env: Option<String>,
}

/// `||y - |A x|||` for magnitudes, `||y - A x||` for complex data.
pub fn residual(y: &Observations, op: &Operator, x: &Image) -> Result<f64> {
    match y {
        Observations::Magnitudes(y) => measurement_residual(y, op, x),
        Observations::Complex(y) => {
            let z = op.forward(x)?;
            check_len(y.len(), z.len())?;
            Ok(sq_dist(y, &z).sqrt())
        }
    }
}

struct Candidate {
    x: Image,
    trace: Option<IterationTrace>,
    calls: usize,
    residual: f64,
}

/// Reads a job's measurements, runs the configured solver and protocol, and
/// writes its outputs. A solver failure still writes the trace.
pub fn run_job(cfg: &ExperimentConfig, base: &Path, job: &Job, out: &Path, endpoints: &Endpoints) -> Result<JobResult> {
    let dir = job.dir(out);
    let meas = load_measurements(&dir)?;
    let truth = job.source.load(base)?;
    let (h, w, c) = truth.shape();
    if (meas.info.height, meas.info.width, meas.info.channels) != (h, w, c) || meas.info.operator != cfg.operator {
        return Err(Error::Format(format!(
            "{}: measurements do not match the configured image and operator",
            dir.display()
        )));
    }
    let solver_dir = dir.join(cfg.solver.name());
    create_dir(&solver_dir)?;

    let start = Instant::now();
    let best = match solve(cfg, job, &meas, &truth, endpoints) {
        Ok(b) => b,
        Err(Error::Solver(failure)) => {
            write_trace(&solver_dir.join(TRACE_FILE), &failure.trace)?;
            return Err(Error::Solver(failure));
        }
        Err(e) => return Err(e),
    };
    let wall_time_s = start.elapsed().as_secs_f64();

    let policy = cfg.metrics.policy(&cfg.operator, c);
    let estimate = resolve_ambiguity(&best.x, &truth, policy)?;
    let p = psnr(&estimate, &truth)?;
    let metrics = Metrics {
        image: job.name.clone(),
        seed: job.seed,
        solver: cfg.solver.name().into(),
        operator: cfg.operator.name().into(),
        alpha: meas.info.noise.alpha,
        psnr: if p.is_finite() { p } else { PSNR_SENTINEL },
        ssim: ssim(&estimate, &truth)?,
        residual: best.residual,
        denoiser_calls: best.calls,
        wall_time_s,
    };
    let ext = if c == 1 { "pgm" } else { "ppm" };
    io::write_pnm(&solver_dir.join(format!("xhat.{ext}")), &estimate)?;
    if let Some(trace) = &best.trace {
        write_trace(&solver_dir.join(TRACE_FILE), trace)?;
    }
    write_json(&solver_dir.join(METRICS_FILE), &metrics)?;
    Ok(JobResult {
        metrics,
        estimate,
        trace: best.trace,
        dir: solver_dir,
    })
}

fn solve(cfg: &ExperimentConfig, job: &Job, meas: &Measurements, truth: &Image, endpoints: &Endpoints) -> Result<Candidate> {
    let c = meas.info.channels;
    let rng = job.rng();
    let op = &meas.op;
    let init_rng = rng.fork(STREAM_INIT);

    // Initial images, one per report repetition.
    let inits: Vec<Image> = match (&meas.y, op) {
        (Observations::Complex(y), _) => vec![op.sufficient_statistic(y)?],
        (Observations::Magnitudes(y), Operator::Cdp(cdp)) => vec![cdp_init(y, cdp, c)?],
        (Observations::Magnitudes(y), Operator::Osf(osf)) => {
            let mut options = cfg.init.options();
            if let SolverConfig::Hio(hio) = &cfg.solver {
                // HIO's own output is the protocol's continuation run.
                options = OsfInitOptions {
                    final_iters: hio.iters,
                    step: hio.step,
                    ..options
                };
            }
            (0..cfg.init.repeats)
                .map(|rep| osf_init_protocol(y, osf, c, &mut init_rng.fork(rep as u64), &options))
                .collect::<Result<_>>()?
        }
    };

    let mut best: Option<Candidate> = None;
    for (rep, x0) in inits.into_iter().enumerate() {
        let cand = match &cfg.solver {
            SolverConfig::Hio(hio) => {
                let Observations::Magnitudes(y) = &meas.y else {
                    return Err(Error::InvalidArgument("hio needs magnitude measurements".into()));
                };
                let x = match op {
                    Operator::Cdp(_) => hio_run(y, op, &hio.hio_config(), &x0)?,
                    Operator::Osf(_) => x0,
                };
                Candidate {
                    residual: measurement_residual(y, op, &x)?,
                    x,
                    trace: None,
                    calls: 0,
                }
            }
            SolverConfig::Deepecpr(d) => {
                let seed = rng.fork(STREAM_SOLVER).fork(rep as u64).next_u64();
                let run = d.run_config(seed)?;
                let bank = d.bank(endpoints.cli.as_deref(), endpoints.env.as_deref())?;
                let likelihood: Box<dyn Likelihood> = match (&meas.y, meas.info.noise.resolve()?) {
                    (Observations::Magnitudes(y), Noise::Shot { alpha }) => Box::new(AmplitudeLikelihood::new(
                        y.clone(),
                        AmplitudeChannel::new(match d.likelihood_variance {
                            Some(v) => v,
                            None => alpha_to_v(alpha)?,
                        })?,
                    )?),
                    (Observations::Complex(y), Noise::Gaussian { variance }) => {
                        Box::new(GaussianLikelihood::new(y.clone(), variance)?)
                    }
                    _ => return Err(Error::Format("measurement type does not match the noise model".into())),
                };
                let out = deepecpr_run(&run, likelihood.as_ref(), op, &bank, &x0, Some(truth))?;
                Candidate {
                    residual: residual(&meas.y, op, &out.x)?,
                    calls: out.denoiser_calls(),
                    trace: Some(out.trace),
                    x: out.x,
                }
            }
        };
        if best.as_ref().is_none_or(|b| cand.residual < b.residual) {
            best = Some(cand);
        }
    }
    Ok(best.expect("at least one repetition"))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))
}

fn write_trace(path: &Path, trace: &IterationTrace) -> Result<()> {
    io::write_bytes(path, trace.to_csv().as_bytes())
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    io::write_bytes(path, text.as_bytes())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = io::read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}
