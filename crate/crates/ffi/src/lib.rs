//! C ABI over the deepecpr solver.
//!
//! Every fallible call returns a [`DeepecprStatus`]. On failure the message is
//! kept per thread and can be read with [`deepecpr_last_error_message`] until
//! the next failing call on that thread. Handles are opaque and owned by the
//! caller, who releases them with the matching `_free` function.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use deepecpr::cli::{jobs, run_job, simulate_job, Endpoints, ExperimentConfig, Job, JobResult, ENDPOINT_ENV};
use deepecpr::{Error, Image};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeepecprStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Solver = 5,
    Denoiser = 6,
    Panic = 7,
}

/// A parsed and validated experiment configuration.
pub struct DeepecprConfig {
    cfg: ExperimentConfig,
    base: PathBuf,
    jobs: Vec<Job>,
}

/// The outcome of one reconstruction.
pub struct DeepecprResult {
    inner: JobResult,
}

/// Scalar metrics of a finished run.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DeepecprMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub residual: f64,
    pub denoiser_calls: usize,
    pub wall_time_s: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(DeepecprStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => DeepecprStatus::InvalidArgument,
            Error::Io(_) => DeepecprStatus::Io,
            Error::Format(_) => DeepecprStatus::Format,
            Error::Solver(_) | Error::Divergence { .. } => DeepecprStatus::Solver,
            Error::Selection(_) | Error::Connection(_) | Error::Protocol(_) | Error::Remote(_) => DeepecprStatus::Denoiser,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(DeepecprStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(DeepecprStatus::InvalidArgument, msg)
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DeepecprStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DeepecprStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            DeepecprStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn job(config: &DeepecprConfig, index: usize) -> Result<&Job, Failure> {
    config
        .jobs
        .get(index)
        .ok_or_else(|| invalid(format!("job index {index} out of range ({} jobs)", config.jobs.len())))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn deepecpr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Length in bytes of the last error message on this thread, including the
/// terminating NUL. Zero if no call has failed.
#[no_mangle]
pub extern "C" fn deepecpr_last_error_length() -> usize {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(0, |m| m.as_bytes_with_nul().len()))
}

/// Copies the last error message into `buf`, truncating to `len - 1` bytes
/// and always NUL-terminating. Returns the number of bytes written excluding
/// the NUL, or -1 if `buf` is null or `len` is zero.
#[no_mangle]
pub unsafe extern "C" fn deepecpr_last_error_message(buf: *mut c_char, len: usize) -> isize {
    if buf.is_null() || len == 0 {
        return -1;
    }
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_ref().map_or(&[][..], |m| m.as_bytes());
        let n = bytes.len().min(len - 1);
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
        *buf.add(n) = 0;
        n as isize
    })
}

/// Clears the last error on this thread.
#[no_mangle]
pub extern "C" fn deepecpr_clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Parses a configuration from JSON. Relative image and output paths resolve
/// against `base_dir`, or the working directory when it is null.
#[no_mangle]
pub unsafe extern "C" fn deepecpr_config_from_json(
    json: *const c_char,
    base_dir: *const c_char,
    out: *mut *mut DeepecprConfig,
) -> DeepecprStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(json, "json")?;
        let base = opt_str_arg(base_dir, "base_dir")?.map(PathBuf::from).unwrap_or_default();
        let cfg = ExperimentConfig::from_json(text)?;
        *out = Box::into_raw(Box::new(DeepecprConfig {
            jobs: jobs(&cfg),
            cfg,
            base,
        }));
        Ok(())
    })
}

/// Reads a configuration file. Relative paths inside it resolve against the
/// file's directory.
#[no_mangle]
pub unsafe extern "C" fn deepecpr_config_load(path: *const c_char, out: *mut *mut DeepecprConfig) -> DeepecprStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = Path::new(str_arg(path, "path")?);
        let cfg = ExperimentConfig::load(path)?;
        *out = Box::into_raw(Box::new(DeepecprConfig {
            jobs: jobs(&cfg),
            cfg,
            base: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn deepecpr_config_free(config: *mut DeepecprConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Number of (image, seed) jobs, images outermost. Zero for a null handle.
#[no_mangle]
pub unsafe extern "C" fn deepecpr_config_job_count(config: *const DeepecprConfig) -> usize {
    config.as_ref().map_or(0, |c| c.jobs.len())
}

fn out_dir(config: &DeepecprConfig, out: Option<&str>) -> Result<PathBuf, Failure> {
    match (out, &config.cfg.output) {
        (Some(o), _) => Ok(PathBuf::from(o)),
        (None, Some(o)) => Ok(config.base.join(o)),
        (None, None) => Err(invalid("no output directory: pass out_dir or set \"output\" in the config".into())),
    }
}

/// Simulates and stores the measurements of job `index` under `out_dir`
/// (or the configured output when null).
#[no_mangle]
pub unsafe extern "C" fn deepecpr_simulate(
    config: *const DeepecprConfig,
    index: usize,
    out_dir_path: *const c_char,
) -> DeepecprStatus {
    guard(|| {
        let config = handle(config, "config")?;
        let job = job(config, index)?;
        let out = out_dir(config, opt_str_arg(out_dir_path, "out_dir")?)?;
        simulate_job(&config.cfg, &config.base, job, &out)?;
        Ok(())
    })
}

/// Reconstructs job `index` from measurements previously written by
/// [`deepecpr_simulate`]. `endpoint` overrides the remote denoiser address;
/// when null the configured one is used, then `ECPR_DENOISER_ENDPOINT`.
#[no_mangle]
pub unsafe extern "C" fn deepecpr_run(
    config: *const DeepecprConfig,
    index: usize,
    out_dir_path: *const c_char,
    endpoint: *const c_char,
    out: *mut *mut DeepecprResult,
) -> DeepecprStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let config = handle(config, "config")?;
        let job = job(config, index)?;
        let dir = out_dir(config, opt_str_arg(out_dir_path, "out_dir")?)?;
        let endpoints = Endpoints {
            cli: opt_str_arg(endpoint, "endpoint")?.map(str::to_owned),
            env: std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()),
        };
        let inner = run_job(&config.cfg, &config.base, job, &dir, &endpoints)?;
        *out = Box::into_raw(Box::new(DeepecprResult { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn deepecpr_result_free(result: *mut DeepecprResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Height, width and channel count of the estimate. Null outputs are skipped.
#[no_mangle]
pub unsafe extern "C" fn deepecpr_result_shape(
    result: *const DeepecprResult,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> DeepecprStatus {
    guard(|| {
        let (h, w, c) = handle(result, "result")?.inner.estimate.shape();
        for (p, v) in [(height, h), (width, w), (channels, c)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Copies the estimate's pixels, channel-major then row-major, into `buf`,
/// which must hold exactly `height * width * channels` values.
#[no_mangle]
pub unsafe extern "C" fn deepecpr_result_pixels(result: *const DeepecprResult, buf: *mut f64, len: usize) -> DeepecprStatus {
    guard(|| {
        let px = handle(result, "result")?.inner.estimate.pixels();
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len != px.len() {
            return Err(invalid(format!("buffer holds {len} values, estimate has {}", px.len())));
        }
        ptr::copy_nonoverlapping(px.as_ptr(), buf, len);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn deepecpr_result_metrics(result: *const DeepecprResult, out: *mut DeepecprMetrics) -> DeepecprStatus {
    guard(|| {
        let m = &handle(result, "result")?.inner.metrics;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = DeepecprMetrics {
            psnr: m.psnr,
            ssim: m.ssim,
            residual: m.residual,
            denoiser_calls: m.denoiser_calls,
            wall_time_s: m.wall_time_s,
        };
        Ok(())
    })
}

/// PSNR in dB with peak 255 between two images of the given shape, laid out
/// as in [`deepecpr_result_pixels`]. Identical images give infinity.
#[no_mangle]
pub unsafe extern "C" fn deepecpr_psnr(
    estimate: *const f64,
    truth: *const f64,
    height: usize,
    width: usize,
    channels: usize,
    out: *mut f64,
) -> DeepecprStatus {
    guard(|| {
        if estimate.is_null() || truth.is_null() || out.is_null() {
            return Err(null("image or output pointer"));
        }
        let n = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| invalid("image size overflows".into()))?;
        let image = |p: *const f64| Image::new(height, width, channels, std::slice::from_raw_parts(p, n).to_vec());
        *out = deepecpr::metrics::psnr(&image(estimate)?, &image(truth)?)?;
        Ok(())
    })
}
