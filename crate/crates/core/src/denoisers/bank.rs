//! Ordered collections of denoisers and the rule for picking one per iteration.

use crate::error::{invalid, Error, Result};

use super::DenoiserSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelectionPolicy {
    /// Pick the spec whose SD range contains the current input SD. A value
    /// on the boundary of two ranges goes to the lower range.
    BySd,
    /// Walk through the specs in order, spending `iteration_budget`
    /// iterations on each.
    ByIteration,
}

#[derive(Clone, Debug)]
pub struct DenoiserBank {
    specs: Vec<DenoiserSpec>,
    policy: SelectionPolicy,
}

impl DenoiserBank {
    pub fn new(specs: Vec<DenoiserSpec>, policy: SelectionPolicy) -> Result<Self> {
        if specs.is_empty() {
            return Err(invalid("denoiser bank is empty"));
        }
        if policy == SelectionPolicy::ByIteration {
            let open = specs.iter().position(|s| s.iteration_budget.is_none());
            if matches!(open, Some(i) if i + 1 != specs.len()) {
                return Err(invalid("only the last scheduled denoiser may have no budget"));
            }
        }
        Ok(Self { specs, policy })
    }

    pub fn single(spec: DenoiserSpec) -> Self {
        Self {
            specs: vec![spec],
            policy: SelectionPolicy::BySd,
        }
    }

    pub fn specs(&self) -> &[DenoiserSpec] {
        &self.specs
    }

    pub fn policy(&self) -> SelectionPolicy {
        self.policy
    }

    /// `current_sd` is the input noise SD in pixel units; `iteration` is
    /// 1-based.
    pub fn select(&self, current_sd: f64, iteration: usize) -> Result<&DenoiserSpec> {
        match self.policy {
            SelectionPolicy::BySd => self
                .specs
                .iter()
                .filter(|s| s.covers(current_sd))
                .min_by(|a, b| a.sd_range.0.total_cmp(&b.sd_range.0))
                .ok_or_else(|| Error::Selection(format!("no denoiser covers SD {current_sd:.4}"))),
            SelectionPolicy::ByIteration => {
                if iteration == 0 {
                    return Err(invalid("iterations are counted from 1"));
                }
                let mut end = 0usize;
                for spec in &self.specs {
                    match spec.iteration_budget {
                        None => return Ok(spec),
                        Some(b) => {
                            end += b;
                            if iteration <= end {
                                return Ok(spec);
                            }
                        }
                    }
                }
                Err(Error::Selection(format!(
                    "iteration {iteration} is past the schedule end {end}"
                )))
            }
        }
    }

    /// Checks that the SD ranges jointly cover `[lo, hi]` without gaps.
    pub fn check_coverage(&self, lo: f64, hi: f64) -> Result<()> {
        let mut ranges: Vec<(f64, f64)> = self.specs.iter().map(|s| s.sd_range).collect();
        ranges.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut reach = lo;
        for (a, b) in ranges {
            if a > reach {
                break;
            }
            reach = reach.max(b);
        }
        if reach >= hi {
            Ok(())
        } else {
            Err(Error::Selection(format!("SD ranges leave a gap above {reach}")))
        }
    }
}
