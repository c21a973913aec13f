//! Experiment configuration: one strict JSON document per experiment.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::baselines::{HioConfig, OsfInitOptions};
use crate::denoisers::remote::Endpoint;
use crate::denoisers::{
    Beta, Denoiser, DenoiserBank, DenoiserSpec, GaussianMmse, IdentityDenoiser, RemoteDenoiser, SelectionPolicy,
    TvDenoiser, TvOptions,
};
use crate::ec::{DampingMode, RunConfig, VarianceBounds};
use crate::error::{Error, Result};
use crate::metrics::AmbiguityPolicy;
use crate::phantom::{binary_phantom, phantom, PhantomSpec};
use crate::types::Image;

fn config_err(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub operator: OperatorConfig,
    pub noise: NoiseConfig,
    pub images: Vec<ImageSource>,
    pub seeds: Vec<u64>,
    pub solver: SolverConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub metrics: MetricsPreset,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum OperatorConfig {
    /// Zero-padded DFT; `oversampling` is the per-axis factor (2 = 4x).
    Osf {
        #[serde(default = "default_oversampling")]
        oversampling: usize,
    },
    /// Coded diffraction patterns with `codes` random phase masks.
    Cdp { codes: usize },
}

fn default_oversampling() -> usize {
    2
}

impl OperatorConfig {
    pub fn name(&self) -> &'static str {
        match self {
            OperatorConfig::Osf { .. } => "osf",
            OperatorConfig::Cdp { .. } => "cdp",
        }
    }
}

/// Exactly one of `alpha` (shot noise on magnitudes) or `gaussian_variance`
/// (complex AWGN on `z`, a test fixture) must be set.
#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gaussian_variance: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Noise {
    Shot { alpha: f64 },
    Gaussian { variance: f64 },
}

impl NoiseConfig {
    pub fn resolve(&self) -> Result<Noise> {
        match (self.alpha, self.gaussian_variance) {
            (Some(a), None) if a >= 0.0 && a.is_finite() => Ok(Noise::Shot { alpha: a }),
            (None, Some(v)) if v > 0.0 && v.is_finite() => Ok(Noise::Gaussian { variance: v }),
            (Some(_), Some(_)) | (None, None) => {
                Err(config_err("noise needs exactly one of alpha or gaussian_variance"))
            }
            _ => Err(config_err("noise level must be finite, alpha >= 0 and gaussian_variance > 0")),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum ImageSource {
    Path(PathBuf),
    Phantom(PhantomConfig),
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    #[serde(default = "one")]
    pub channels: usize,
    #[serde(default)]
    pub seed: u64,
    /// Two-level {0, 255} image instead of rectangles on a ramp.
    #[serde(default)]
    pub binary: bool,
}

fn one() -> usize {
    1
}

impl ImageSource {
    /// Job name stem: the file stem, or `phantom<seed>`.
    pub fn name(&self) -> String {
        match self {
            ImageSource::Path(p) => p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "image".into()),
            ImageSource::Phantom(p) => format!("phantom{}", p.seed),
        }
    }

    /// Relative paths resolve against `base` (the config file's directory).
    pub fn load(&self, base: &Path) -> Result<Image> {
        match self {
            ImageSource::Path(p) => crate::io::read_pnm(&base.join(p)),
            ImageSource::Phantom(p) if p.binary => {
                if p.channels != 1 {
                    return Err(config_err("binary phantoms are single-channel"));
                }
                binary_phantom(p.height, p.width, p.seed)
            }
            ImageSource::Phantom(p) => phantom(&PhantomSpec::new(p.height, p.width, p.channels), p.seed),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum SolverConfig {
    Deepecpr(DeepecprConfig),
    Hio(HioSolverConfig),
}

impl SolverConfig {
    pub fn name(&self) -> &'static str {
        match self {
            SolverConfig::Deepecpr(_) => "deepecpr",
            SolverConfig::Hio(_) => "hio",
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DeepecprConfig {
    #[serde(default = "d_mu1")]
    pub mu1: f64,
    #[serde(default = "d_mu2")]
    pub mu2: f64,
    #[serde(default = "d_zeta")]
    pub zeta: f64,
    #[serde(default = "d_vbar_init")]
    pub vbar_init: f64,
    #[serde(default = "d_iterations")]
    pub iterations: usize,
    #[serde(default = "d_em_iters")]
    pub em_iters: usize,
    #[serde(default)]
    pub damping: DampingConfig,
    #[serde(default = "d_floor")]
    pub variance_floor: f64,
    #[serde(default = "d_ceiling")]
    pub variance_ceiling: f64,
    pub denoisers: Vec<DenoiserConfig>,
    #[serde(default)]
    pub selection: SelectionConfig,
    /// Amplitude-likelihood variance `v`; `alpha^2 / 4` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood_variance: Option<f64>,
}

fn d_mu1() -> f64 {
    RunConfig::default().mu1
}
fn d_mu2() -> f64 {
    RunConfig::default().mu2
}
fn d_zeta() -> f64 {
    RunConfig::default().zeta
}
fn d_vbar_init() -> f64 {
    RunConfig::default().vbar_init
}
fn d_iterations() -> usize {
    RunConfig::default().iterations
}
fn d_em_iters() -> usize {
    RunConfig::default().em_iters
}
fn d_floor() -> f64 {
    VarianceBounds::default().floor
}
fn d_ceiling() -> f64 {
    VarianceBounds::default().ceiling
}

impl DeepecprConfig {
    pub fn run_config(&self, seed: u64) -> Result<RunConfig> {
        let cfg = RunConfig {
            mu1: self.mu1,
            mu2: self.mu2,
            zeta: self.zeta,
            vbar_init: self.vbar_init,
            iterations: self.iterations,
            em_iters: self.em_iters,
            damping: match self.damping {
                DampingConfig::Stochastic => DampingMode::Stochastic,
                DampingConfig::Deterministic => DampingMode::Deterministic,
            },
            bounds: VarianceBounds {
                floor: self.variance_floor,
                ceiling: self.variance_ceiling,
            },
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Builds the bank, opening remote connections as needed. The endpoint
    /// precedence is: command line, then the entry's own field, then the
    /// environment.
    pub fn bank(&self, cli_endpoint: Option<&str>, env_endpoint: Option<&str>) -> Result<DenoiserBank> {
        if self.denoisers.is_empty() {
            return Err(config_err("solver.denoisers must list at least one denoiser"));
        }
        let specs = self
            .denoisers
            .iter()
            .map(|d| d.build(cli_endpoint, env_endpoint))
            .collect::<Result<Vec<_>>>()?;
        let policy = match self.selection {
            SelectionConfig::Sd => SelectionPolicy::BySd,
            SelectionConfig::Iteration => SelectionPolicy::ByIteration,
        };
        DenoiserBank::new(specs, policy)
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum DampingConfig {
    #[default]
    Stochastic,
    Deterministic,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SelectionConfig {
    #[default]
    Sd,
    Iteration,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserType {
    Tv,
    GaussianMmse,
    Identity,
    Remote,
}

/// One bank entry. Fields that do not belong to `type` are rejected.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DenoiserConfig {
    #[serde(rename = "type")]
    pub kind: DenoiserType,
    pub beta: BetaConfig,
    /// Monte-Carlo probes when `beta` is `"sure"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sure_probes: Option<usize>,
    /// Noise SDs this entry covers under SD selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sd_range: Option<(f64, f64)>,
    /// Iterations this entry serves under iteration selection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,

    // tv
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_inner_iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Output clip range, `[0, 255]` when absent; `null` disables clipping.
    #[serde(default, deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub range: Option<Option<(f64, f64)>>,

    // gaussian_mmse
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,

    // remote
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timeout_s: Option<f64>,
}

/// Distinguishes an explicit `null` from an absent key.
fn present<'de, D, T>(d: D) -> std::result::Result<Option<Option<T>>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de>,
{
    Option::<T>::deserialize(d).map(Some)
}

/// A number is a fixed beta; `"analytic"` and `"sure"` select the rules.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum BetaConfig {
    Fixed(f64),
    Rule(BetaRule),
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum BetaRule {
    Analytic,
    Sure,
}

impl DenoiserConfig {
    pub fn new(kind: DenoiserType, beta: BetaConfig) -> Self {
        Self {
            kind,
            beta,
            sure_probes: None,
            sd_range: None,
            iterations: None,
            lambda_scale: None,
            max_inner_iters: None,
            tol: None,
            range: None,
            mean: None,
            tau: None,
            endpoint: None,
            timeout_s: None,
        }
    }

    fn check_fields(&self) -> Result<()> {
        let set = |name: &'static str, on: bool| on.then_some(name);
        let tv = [
            set("lambda_scale", self.lambda_scale.is_some()),
            set("max_inner_iters", self.max_inner_iters.is_some()),
            set("tol", self.tol.is_some()),
            set("range", self.range.is_some()),
        ];
        let gm = [set("mean", self.mean.is_some()), set("tau", self.tau.is_some())];
        let remote = [set("endpoint", self.endpoint.is_some()), set("timeout_s", self.timeout_s.is_some())];
        let foreign: Vec<&str> = match self.kind {
            DenoiserType::Tv => gm.iter().chain(&remote).flatten().copied().collect(),
            DenoiserType::GaussianMmse => tv.iter().chain(&remote).flatten().copied().collect(),
            DenoiserType::Identity => tv.iter().chain(&gm).chain(&remote).flatten().copied().collect(),
            DenoiserType::Remote => tv.iter().chain(&gm).flatten().copied().collect(),
        };
        if let Some(f) = foreign.first() {
            return Err(config_err(format!("field {f} does not apply to a {:?} denoiser", self.kind)));
        }
        if self.sure_probes.is_some() && self.beta != BetaConfig::Rule(BetaRule::Sure) {
            return Err(config_err("sure_probes only applies with beta \"sure\""));
        }
        if let BetaConfig::Fixed(b) = self.beta {
            crate::denoisers::Beta::fixed(b)?;
        }
        Ok(())
    }

    fn build(&self, cli_endpoint: Option<&str>, env_endpoint: Option<&str>) -> Result<DenoiserSpec> {
        self.check_fields()?;
        let denoiser: Arc<dyn Denoiser> = match self.kind {
            DenoiserType::Tv => {
                let d = TvOptions::default();
                Arc::new(TvDenoiser::new(TvOptions {
                    lambda_scale: self.lambda_scale.unwrap_or(d.lambda_scale),
                    max_inner_iters: self.max_inner_iters.unwrap_or(d.max_inner_iters),
                    tol: self.tol.unwrap_or(d.tol),
                    range: self.range.unwrap_or(Some((0.0, 255.0))),
                })?)
            }
            DenoiserType::GaussianMmse => {
                let (Some(mean), Some(tau)) = (self.mean, self.tau) else {
                    return Err(config_err("gaussian_mmse needs mean and tau"));
                };
                Arc::new(GaussianMmse::new(mean, tau)?)
            }
            DenoiserType::Identity => Arc::new(IdentityDenoiser),
            DenoiserType::Remote => {
                let addr = cli_endpoint
                    .or(self.endpoint.as_deref())
                    .or(env_endpoint)
                    .ok_or_else(|| config_err("remote denoiser needs an endpoint"))?;
                let timeout = self.timeout_s.unwrap_or(30.0);
                if !(timeout > 0.0) || !timeout.is_finite() {
                    return Err(config_err("timeout_s must be positive"));
                }
                let ep: Endpoint = addr.parse()?;
                Arc::new(RemoteDenoiser::connect(ep, Duration::from_secs_f64(timeout))?)
            }
        };
        let beta = match self.beta {
            BetaConfig::Fixed(b) => Beta::fixed(b)?,
            BetaConfig::Rule(BetaRule::Analytic) => Beta::Analytic,
            BetaConfig::Rule(BetaRule::Sure) => match self.sure_probes.unwrap_or(1) {
                0 => return Err(config_err("sure_probes must be positive")),
                probes => Beta::Sure { probes },
            },
        };
        let mut spec = DenoiserSpec::new(denoiser, beta)?;
        if let Some((lo, hi)) = self.sd_range {
            spec = spec.with_sd_range(lo, hi)?;
        }
        if let Some(n) = self.iterations {
            spec = spec.with_budget(n);
        }
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HioSolverConfig {
    #[serde(default = "d_hio_step")]
    pub step: f64,
    #[serde(default = "d_hio_iters")]
    pub iters: usize,
    #[serde(default = "d_true")]
    pub nonnegativity: bool,
}

fn d_hio_step() -> f64 {
    HioConfig::default().step
}
fn d_hio_iters() -> usize {
    HioConfig::default().iters
}
fn d_true() -> bool {
    true
}

impl HioSolverConfig {
    pub fn hio_config(&self) -> HioConfig {
        HioConfig {
            step: self.step,
            iters: self.iters,
            nonnegativity: self.nonnegativity,
        }
    }
}

/// OSF initialization and reporting protocol. CDP ignores it.
#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitConfig {
    pub restarts: usize,
    pub restart_iters: usize,
    pub final_iters: usize,
    pub step: f64,
    /// Whole-procedure repetitions; the lowest residual is reported.
    pub repeats: usize,
}

impl Default for InitConfig {
    fn default() -> Self {
        let o = OsfInitOptions::default();
        Self {
            restarts: o.restarts,
            restart_iters: o.restart_iters,
            final_iters: o.final_iters,
            step: o.step,
            repeats: 3,
        }
    }
}

impl InitConfig {
    pub fn options(&self) -> OsfInitOptions {
        OsfInitOptions {
            restarts: self.restarts,
            restart_iters: self.restart_iters,
            final_iters: self.final_iters,
            step: self.step,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum MetricsPreset {
    /// CDP: none. OSF: flips and translations, per-channel flips for color.
    #[default]
    Auto,
    Identity,
    Cdp,
    OsfGrayscale,
    OsfColor,
}

impl MetricsPreset {
    pub fn policy(&self, operator: &OperatorConfig, channels: usize) -> AmbiguityPolicy {
        match self {
            MetricsPreset::Identity => AmbiguityPolicy::IDENTITY,
            MetricsPreset::Cdp => AmbiguityPolicy::cdp(),
            MetricsPreset::OsfGrayscale => AmbiguityPolicy::osf_grayscale(),
            MetricsPreset::OsfColor => AmbiguityPolicy::osf_color(),
            MetricsPreset::Auto => match operator {
                OperatorConfig::Cdp { .. } => AmbiguityPolicy::cdp(),
                OperatorConfig::Osf { .. } if channels == 3 => AmbiguityPolicy::osf_color(),
                OperatorConfig::Osf { .. } => AmbiguityPolicy::osf_grayscale(),
            },
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = crate::io::read_bytes(path)?;
        let text = String::from_utf8(bytes).map_err(|_| config_err(format!("{}: not UTF-8", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => config_err(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.noise.resolve()?;
        if self.images.is_empty() {
            return Err(config_err("images must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(config_err("seeds must not be empty"));
        }
        let mut names = HashSet::new();
        for img in &self.images {
            if !names.insert(img.name()) {
                return Err(config_err(format!("duplicate image name {}", img.name())));
            }
        }
        match self.operator {
            OperatorConfig::Osf { oversampling: 0 } => return Err(config_err("oversampling must be positive")),
            OperatorConfig::Cdp { codes: 0 } => return Err(config_err("codes must be positive")),
            _ => {}
        }
        if self.init.restarts == 0 || self.init.repeats == 0 {
            return Err(config_err("init.restarts and init.repeats must be positive"));
        }
        if let SolverConfig::Deepecpr(d) = &self.solver {
            d.run_config(0)?;
            if d.denoisers.is_empty() {
                return Err(config_err("solver.denoisers must list at least one denoiser"));
            }
            for entry in &d.denoisers {
                entry.check_fields()?;
            }
            if let Some(v) = d.likelihood_variance {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(config_err("likelihood_variance must be positive and finite"));
                }
            } else if matches!(self.noise.resolve()?, Noise::Shot { alpha } if alpha == 0.0) {
                return Err(config_err("deepecpr needs alpha > 0 or an explicit likelihood_variance"));
            }
        }
        if let SolverConfig::Hio(h) = &self.solver {
            h.hio_config().validate()?;
            if matches!(self.noise.resolve()?, Noise::Gaussian { .. }) {
                return Err(config_err("hio needs magnitude measurements"));
            }
        }
        Ok(())
    }
}
