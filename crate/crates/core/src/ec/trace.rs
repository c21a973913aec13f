//! Per-iteration diagnostics and their CSV form.

use std::io::Write;

use crate::error::Result;

/// Column order of the trace CSV.
pub const TRACE_COLUMNS: [&str; 11] = [
    "iter", "vbar1", "vbar2", "vhat1", "vhat2", "err_zbar1", "err_zbar2", "err_zhat1",
    "err_zhat2", "injected_sd", "psnr",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub vbar1: f64,
    /// Extrinsic variance after this iteration's damping, i.e. the one
    /// paired with `err_zbar2`.
    pub vbar2: f64,
    pub vhat1: f64,
    pub vhat2: f64,
    /// `m^{-1/2} ||zbar1 - z||` etc.; `None` without ground truth.
    pub err_zbar1: Option<f64>,
    pub err_zbar2: Option<f64>,
    pub err_zhat1: Option<f64>,
    pub err_zhat2: Option<f64>,
    /// `sqrt(vbar2 - vbar2_raw)`, zero when nothing was injected.
    pub injected_sd: f64,
    pub psnr: Option<f64>,
    /// Cumulative denoiser calls up to and including this iteration.
    pub denoiser_calls: usize,
    /// Measurements whose `|zbar1|` hit the channel floor.
    pub floored: usize,
    /// An extrinsic update took the variance-clamp path.
    pub clamped: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct IterationTrace {
    pub records: Vec<IterationRecord>,
}

impl IterationTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&IterationRecord> {
        self.records.last()
    }

    pub fn denoiser_calls(&self) -> usize {
        self.records.last().map_or(0, |r| r.denoiser_calls)
    }

    /// `(vbar1, vbar2, vhat1, vhat2)` per iteration.
    pub fn variances(&self) -> Vec<[f64; 4]> {
        self.records
            .iter()
            .map(|r| [r.vbar1, r.vbar2, r.vhat1, r.vhat2])
            .collect()
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "{}", TRACE_COLUMNS.join(","))?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.iter,
                r.vbar1,
                r.vbar2,
                r.vhat1,
                r.vhat2,
                opt(r.err_zbar1),
                opt(r.err_zbar2),
                opt(r.err_zhat1),
                opt(r.err_zhat2),
                r.injected_sd,
                opt(r.psnr),
            )?;
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}
