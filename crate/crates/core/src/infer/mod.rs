//! MCMC samplers for the Gaussian response models and the probit genetics
//! model, plus DIC and convergence diagnostics.

pub mod diagnostics;
pub mod dic;
pub mod gaussian;
pub mod priors;
pub mod probit;
pub mod samples;
pub mod truncnorm;

pub use diagnostics::{batch_means_se, split_half_diagnostic, SplitHalfReport, SplitHalfRow};
pub use dic::{compute_dic, DICResult, DevianceModel, MIN_DIC_DRAWS};
pub use gaussian::{
    adjacency_generator, fit_gaussian, fit_gaussian_chains, smooth_covariate, GaussianModel,
    GaussianModelSpec, GaussianVariant,
};
pub use priors::{PriorSpec, SamplerConfig};
pub use probit::{
    category_probabilities, default_rate_names, fit_probit_genetics, fit_probit_genetics_chains,
    log_category_probability, simulate_genetics, AlleleObservation,
    GeneticsModel, GeneticsModelSpec, GeneticsTruth,
};
pub use samples::{ParamSummary, PosteriorSamples, SamplerMeta};

/// Robbins-Monro tuning of a random-walk proposal scale, frozen once burn-in ends.
#[derive(Debug, Clone)]
pub(crate) struct AdaptiveStep {
    log_scale: f64,
    target: f64,
    accepted: usize,
    proposed: usize,
}

impl AdaptiveStep {
    pub fn new(scale: f64, target: f64) -> Self {
        AdaptiveStep {
            log_scale: scale.ln(),
            target,
            accepted: 0,
            proposed: 0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.log_scale.exp()
    }

    pub fn record(&mut self, iter: usize, burn_in: usize, accepted: bool) {
        let a = if accepted { 1.0 } else { 0.0 };
        if iter < burn_in {
            let gain = 1.0 / ((iter + 1) as f64).powf(0.6);
            self.log_scale += gain * (a - self.target);
            self.log_scale = self.log_scale.clamp(-30.0, 10.0);
        } else {
            self.proposed += 1;
            self.accepted += accepted as usize;
        }
    }

    /// Post-burn-in acceptance rate.
    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}
