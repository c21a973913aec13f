//! The `deepecpr` benchmark command line.
//!
//! Exit codes: 0 success, 1 denoiser transport or selection failure,
//! 2 I/O, format or configuration error, 3 solver failure. Errors are printed
//! as one line starting with `error:`.

pub mod config;
pub mod pipeline;
pub mod report;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
pub use config::ExperimentConfig;
pub use pipeline::{jobs, load_measurements, run_job, simulate_job, Endpoints, Job, JobResult, Metrics};

pub const ENDPOINT_ENV: &str = "ECPR_DENOISER_ENDPOINT";

#[derive(Debug, Parser)]
#[command(name = "deepecpr", version, about = "Phase retrieval benchmark: simulate, reconstruct, tabulate")]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run only this seed instead of the configured list.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config's `output`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Remote denoiser, HOST:PORT or stdio:CMD. Falls back to $ECPR_DENOISER_ENDPOINT.
    #[arg(long, global = true)]
    pub denoiser_endpoint: Option<String>,
    /// Worker threads for independent jobs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate measurements for every (image, seed) job.
    Simulate,
    /// Reconstruct every job from its stored measurements.
    Run,
    /// Aggregate metrics.json files under the given directories into CSV.
    Table {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
    /// Reshape a trace CSV into long format (iter, series, value).
    TracePlotdata { trace: PathBuf },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Solver(_) | Error::Divergence { .. } => 3,
        Error::Connection(_) | Error::Protocol(_) | Error::Remote(_) | Error::Selection(_) => 1,
        Error::Io(_) | Error::Format(_) | Error::InvalidArgument(_) | Error::DimensionMismatch { .. } => 2,
    }
}

fn one_line(msg: &str) -> String {
    msg.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Parses `args`, runs the command, reports errors on stderr and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            eprintln!("{}", one_line(first));
            return 2;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(errors) => {
            let mut code = 0;
            for (label, e) in &errors {
                match label {
                    Some(l) => eprintln!("error: {l}: {}", one_line(&e.to_string())),
                    None => eprintln!("error: {}", one_line(&e.to_string())),
                }
                if code == 0 {
                    code = exit_code(e);
                }
            }
            code
        }
    }
}

type Failures = Vec<(Option<String>, Error)>;

fn single(e: Error) -> Failures {
    vec![(None, e)]
}

fn execute(cli: &Cli) -> std::result::Result<(), Failures> {
    match &cli.command {
        Command::Simulate | Command::Run => {
            let path = cli
                .config
                .as_deref()
                .ok_or_else(|| single(Error::InvalidArgument("--config is required".into())))?;
            let mut cfg = ExperimentConfig::load(path).map_err(single)?;
            if let Some(seed) = cli.seed {
                cfg.seeds = vec![seed];
            }
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let out = match (&cli.out, &cfg.output) {
                (Some(o), _) => o.clone(),
                (None, Some(o)) => base.join(o),
                (None, None) => return Err(single(Error::InvalidArgument("no output directory: pass --out".into()))),
            };
            let endpoints = Endpoints {
                cli: cli.denoiser_endpoint.clone(),
                env: std::env::var(ENDPOINT_ENV).ok().filter(|s| !s.is_empty()),
            };
            let simulate = matches!(cli.command, Command::Simulate);
            let results = run_parallel(&cfg, cli.jobs, |job| {
                if simulate {
                    simulate_job(&cfg, &base, job, &out).map(|_| format!("{}", job.dir(&out).display()))
                } else {
                    run_job(&cfg, &base, job, &out, &endpoints).map(|r| {
                        let m = &r.metrics;
                        format!(
                            "{} seed {}: psnr {:.2} ssim {:.4} residual {:.4} calls {}",
                            m.image, m.seed, m.psnr, m.ssim, m.residual, m.denoiser_calls
                        )
                    })
                }
            })
            .map_err(single)?;
            let mut failures = Vec::new();
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            for (job, r) in results {
                match r {
                    Ok(line) => {
                        let _ = writeln!(lock, "{line}");
                    }
                    Err(e) => failures.push((Some(format!("{}_seed{}", job.name, job.seed)), e)),
                }
            }
            if failures.is_empty() {
                Ok(())
            } else {
                Err(failures)
            }
        }
        Command::Table { dirs } => {
            let csv = report::table_from_dirs(dirs).map_err(single)?;
            emit(cli.out.as_deref(), "table.csv", &csv).map_err(single)
        }
        Command::TracePlotdata { trace } => {
            let bytes = crate::io::read_bytes(trace).map_err(single)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| single(Error::Format(format!("{}: not UTF-8", trace.display()))))?;
            let csv = report::plotdata(&text).map_err(|e| single(with_path(e, trace)))?;
            emit(cli.out.as_deref(), "plotdata.csv", &csv).map_err(single)
        }
    }
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// Writes to `<out>/<name>` when an output directory is given, else stdout.
fn emit(out: Option<&Path>, name: &str, text: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            crate::io::write_bytes(&dir.join(name), text.as_bytes())
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

/// Runs `f` over every job on a pool of `threads` workers. Results come back
/// in job order whatever the scheduling.
pub fn run_parallel<T, F>(cfg: &ExperimentConfig, threads: usize, f: F) -> Result<Vec<(Job, Result<T>)>>
where
    T: Send,
    F: Fn(&Job) -> Result<T> + Sync,
{
    if threads == 0 {
        return Err(Error::InvalidArgument("--jobs must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let all = jobs(cfg);
    let results: Vec<Result<T>> = pool.install(|| all.par_iter().map(&f).collect());
    Ok(all.into_iter().zip(results).collect())
}
