use serde::{Deserialize, Serialize};

use super::samples::{mean, quantile_sorted, variance, PosteriorSamples};
use crate::error::{Error, Result};

/// Halves whose means differ by more than this many pooled sds are flagged.
pub const SPLIT_HALF_THRESHOLD: f64 = 0.2;
pub const MIN_SPLIT_HALF_DRAWS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitHalfRow {
    pub name: String,
    pub mean_first: f64,
    pub mean_second: f64,
    pub q025_first: f64,
    pub q025_second: f64,
    pub q975_first: f64,
    pub q975_second: f64,
    /// |mean difference| in units of the pooled sd.
    pub standardized_gap: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitHalfReport {
    pub rows: Vec<SplitHalfRow>,
}

impl SplitHalfReport {
    pub fn flagged(&self) -> Vec<&str> {
        self.rows.iter().filter(|r| r.flagged).map(|r| r.name.as_str()).collect()
    }
}

/// Compare the first and second halves of a chain parameter by parameter.
pub fn split_half_diagnostic(samples: &PosteriorSamples) -> Result<SplitHalfReport> {
    if samples.len() < MIN_SPLIT_HALF_DRAWS {
        return Err(Error::TooFewDraws {
            needed: MIN_SPLIT_HALF_DRAWS,
            have: samples.len(),
        });
    }
    let half = samples.len() / 2;
    let rows = (0..samples.names.len())
        .map(|k| {
            let col = samples.column_at(k);
            let (a, b) = (&col[..half], &col[half..2 * half]);
            let mut sa = a.to_vec();
            let mut sb = b.to_vec();
            sa.sort_by(f64::total_cmp);
            sb.sort_by(f64::total_cmp);
            let pooled = (0.5 * (variance(a) + variance(b))).sqrt();
            let diff = (mean(a) - mean(b)).abs();
            let gap = if pooled > 0.0 {
                diff / pooled
            } else if diff > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            SplitHalfRow {
                name: samples.names[k].clone(),
                mean_first: mean(a),
                mean_second: mean(b),
                q025_first: quantile_sorted(&sa, 0.025),
                q025_second: quantile_sorted(&sb, 0.025),
                q975_first: quantile_sorted(&sa, 0.975),
                q975_second: quantile_sorted(&sb, 0.975),
                standardized_gap: gap,
                flagged: gap > SPLIT_HALF_THRESHOLD,
            }
        })
        .collect();
    Ok(SplitHalfReport { rows })
}

/// Monte Carlo standard error of the mean by non-overlapping batch means
/// with `floor(sqrt(n))` batches.
pub fn batch_means_se(xs: &[f64]) -> f64 {
    let n = xs.len();
    let batches = (n as f64).sqrt().floor() as usize;
    if batches < 2 {
        return f64::NAN;
    }
    let size = n / batches;
    let means: Vec<f64> = (0..batches).map(|b| mean(&xs[b * size..(b + 1) * size])).collect();
    (variance(&means) / batches as f64).sqrt()
}
