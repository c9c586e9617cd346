use serde::{Deserialize, Serialize};

use super::samples::PosteriorSamples;
use crate::error::{Error, Result};

/// Fewer retained draws than this give an unstable effective parameter count.
pub const MIN_DIC_DRAWS: usize = 100;

/// Deviance `-2 log L(data | θ)` for a flat parameter vector laid out like
/// the model's sample columns. The likelihood conditions on latent fields.
pub trait DevianceModel {
    fn deviance(&self, params: &[f64]) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DICResult {
    pub dbar: f64,
    pub d_at_mean: f64,
    pub p_d: f64,
    pub dic: f64,
}

impl DICResult {
    pub fn from_parts(dbar: f64, d_at_mean: f64) -> Self {
        DICResult {
            dbar,
            d_at_mean,
            p_d: dbar - d_at_mean,
            dic: 2.0 * dbar - d_at_mean,
        }
    }
}

pub fn compute_dic(samples: &PosteriorSamples, model: &dyn DevianceModel) -> Result<DICResult> {
    samples.validate()?;
    if samples.len() < MIN_DIC_DRAWS {
        return Err(Error::TooFewDraws {
            needed: MIN_DIC_DRAWS,
            have: samples.len(),
        });
    }
    let dbar = samples.log_lik.iter().map(|ll| -2.0 * ll).sum::<f64>() / samples.len() as f64;
    let d_at_mean = model.deviance(&samples.means())?;
    Ok(DICResult::from_parts(dbar, d_at_mean))
}
