//! Aggregation of run metrics and reshaping of traces for plotting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::pipeline::{read_json, Metrics, METRICS_FILE};
use crate::error::{Error, Result};

/// All `metrics.json` files under `roots`, sorted by path.
pub fn find_metrics(roots: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for root in roots {
        if root.is_file() {
            found.push(root.clone());
            continue;
        }
        if !root.is_dir() {
            return Err(Error::Io(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("{}: no such directory", root.display()),
            )));
        }
        walk(root, &mut found)?;
    }
    found.sort();
    found.dedup();
    Ok(found)
}

fn walk(dir: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", dir.display()))))?;
    for entry in entries {
        let path = entry?.path();
        if path.is_dir() {
            walk(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == METRICS_FILE) {
            found.push(path);
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub solver: String,
    pub operator: String,
    pub alpha: Option<f64>,
    pub runs: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_denoiser_calls: f64,
}

/// One row per (solver, alpha, operator), in sorted key order.
pub fn aggregate(metrics: &[Metrics]) -> Result<Vec<TableRow>> {
    if metrics.is_empty() {
        return Err(Error::InvalidArgument("no metrics to aggregate".into()));
    }
    // Alpha keys by bit pattern; values come from parsed JSON so equal
    // numbers have equal bits.
    let mut groups: BTreeMap<(String, Option<u64>, String), Vec<&Metrics>> = BTreeMap::new();
    for m in metrics {
        let key = (m.solver.clone(), m.alpha.map(f64::to_bits), m.operator.clone());
        groups.entry(key).or_default().push(m);
    }
    let mut rows: Vec<TableRow> = groups
        .into_values()
        .map(|ms| {
            let n = ms.len() as f64;
            TableRow {
                solver: ms[0].solver.clone(),
                operator: ms[0].operator.clone(),
                alpha: ms[0].alpha,
                runs: ms.len(),
                mean_psnr: ms.iter().map(|m| m.psnr).sum::<f64>() / n,
                mean_ssim: ms.iter().map(|m| m.ssim).sum::<f64>() / n,
                mean_denoiser_calls: ms.iter().map(|m| m.denoiser_calls as f64).sum::<f64>() / n,
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (&a.solver, &a.operator)
            .cmp(&(&b.solver, &b.operator))
            .then(a.alpha.partial_cmp(&b.alpha).unwrap_or(std::cmp::Ordering::Equal))
    });
    Ok(rows)
}

pub const TABLE_HEADER: &str = "solver,operator,alpha,runs,mean_psnr,mean_ssim,mean_denoiser_calls";

pub fn table_csv(rows: &[TableRow]) -> String {
    let mut out = String::from(TABLE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.solver,
            r.operator,
            r.alpha.map(|a| a.to_string()).unwrap_or_default(),
            r.runs,
            r.mean_psnr,
            r.mean_ssim,
            r.mean_denoiser_calls
        ));
    }
    out
}

pub fn table_from_dirs(roots: &[PathBuf]) -> Result<String> {
    let paths = find_metrics(roots)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument("no metrics.json found".into()));
    }
    let metrics = paths.iter().map(|p| read_json::<Metrics>(p)).collect::<Result<Vec<_>>>()?;
    Ok(table_csv(&aggregate(&metrics)?))
}

/// Reshapes a wide trace CSV (first column `iter`) into `iter,series,value`
/// rows, series by series. Empty cells are dropped, so a column that is
/// empty throughout disappears.
pub fn plotdata(trace_csv: &str) -> Result<String> {
    let bad = |msg: String| Error::Format(format!("trace CSV: {msg}"));
    let mut lines = trace_csv.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty input".into()))?.split(',').collect();
    if header.first() != Some(&"iter") || header.len() < 2 {
        return Err(bad("first column must be iter".into()));
    }
    let mut rows: Vec<(u64, Vec<&str>)> = Vec::new();
    for (k, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != header.len() {
            return Err(bad(format!("row {} has {} fields, expected {}", k + 1, cells.len(), header.len())));
        }
        let iter = cells[0].parse().map_err(|_| bad(format!("row {}: bad iteration {:?}", k + 1, cells[0])))?;
        for c in &cells[1..] {
            if !c.is_empty() && c.parse::<f64>().is_err() {
                return Err(bad(format!("row {}: bad value {c:?}", k + 1)));
            }
        }
        rows.push((iter, cells));
    }
    let mut out = String::from("iter,series,value\n");
    for (col, name) in header.iter().enumerate().skip(1) {
        for (iter, cells) in &rows {
            if !cells[col].is_empty() {
                out.push_str(&format!("{iter},{name},{}\n", cells[col]));
            }
        }
    }
    Ok(out)
}
