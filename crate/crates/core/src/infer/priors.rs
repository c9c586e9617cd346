use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hyperparameters shared by the Gaussian and genetics samplers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// Normal prior sd for the intercept and regression slope.
    pub regression_sd: f64,
    /// Half-normal scale for the random-effect sd.
    pub re_sd_scale: f64,
    /// Inverse-gamma shape for the residual variance.
    pub tau2_shape: f64,
    /// Inverse-gamma scale for the residual variance.
    pub tau2_scale: f64,
    /// Normal prior sd for each log-rate coefficient.
    pub rate_beta_sd: f64,
    /// Normal prior sd for allele mean effects.
    pub mu_lk_sd: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        PriorSpec {
            regression_sd: 100.0,
            re_sd_scale: 100.0,
            tau2_shape: 0.01,
            tau2_scale: 0.01,
            rate_beta_sd: 10.0,
            mu_lk_sd: 10.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("regression_sd", self.regression_sd),
            ("re_sd_scale", self.re_sd_scale),
            ("tau2_shape", self.tau2_shape),
            ("tau2_scale", self.tau2_scale),
            ("rate_beta_sd", self.rate_beta_sd),
            ("mu_lk_sd", self.mu_lk_sd),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("prior {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Settings common to every sampler run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Total iterations, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// When false the data term is dropped and the chain targets the prior.
    pub use_likelihood: bool,
}

impl SamplerConfig {
    pub fn new(iterations: usize, burn_in: usize, seed: u64) -> Self {
        SamplerConfig {
            iterations,
            burn_in,
            thin: 1,
            seed,
            use_likelihood: true,
        }
    }

    pub fn prior_only(mut self) -> Self {
        self.use_likelihood = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        Ok(())
    }
}
