use std::collections::BTreeMap;

use nalgebra::{DMatrix, Matrix2, Vector2};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dic::DevianceModel;
use super::priors::{PriorSpec, SamplerConfig};
use super::samples::{PosteriorSamples, Recorder, SamplerMeta};
use super::AdaptiveStep;
use crate::error::{Error, Result};
use crate::field::{constrained_solve, stationary_precision, ConstrainedGaussian};
use crate::graph::{check_irreducible, GeneratorMatrix, SpatialGraph};
use crate::rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaussianVariant {
    /// Covariate enters as observed.
    SpatialRandomEffect,
    /// Covariate is first smoothed through the constrained inverse of `Q'`.
    GraphDiffusion,
}

impl GaussianVariant {
    pub fn name(self) -> &'static str {
        match self {
            GaussianVariant::SpatialRandomEffect => "spatial",
            GaussianVariant::GraphDiffusion => "diffusion",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianModelSpec {
    pub response: Vec<f64>,
    pub covariate: Vec<f64>,
    pub variant: GaussianVariant,
    pub graph: SpatialGraph,
    pub priors: PriorSpec,
}

/// Unit rate along every edge of a symmetric graph.
pub fn adjacency_generator(graph: &SpatialGraph) -> Result<GeneratorMatrix> {
    if !graph.is_symmetric() {
        return Err(Error::InvalidGraph("adjacency model needs a symmetric graph".into()));
    }
    let q = GeneratorMatrix::from_rates(
        graph.node_count(),
        graph.edges().iter().map(|e| ((e.from, e.to), 1.0)),
    )?;
    if !check_irreducible(&q) {
        return Err(Error::Singular("adjacency graph is not connected".into()));
    }
    Ok(q)
}

/// `Q'⁻ h` restricted to the sum-zero subspace.
pub fn smooth_covariate(q: &GeneratorMatrix, h: &[f64]) -> Result<Vec<f64>> {
    constrained_solve(q, h)
}

/// A validated Gaussian model with its design column and precision assembled.
#[derive(Debug, Clone)]
pub struct GaussianModel {
    variant: GaussianVariant,
    response: Vec<f64>,
    design: Vec<f64>,
    precision: DMatrix<f64>,
    priors: PriorSpec,
}

impl GaussianModel {
    pub fn new(spec: &GaussianModelSpec) -> Result<Self> {
        spec.priors.validate()?;
        let m = spec.graph.node_count();
        if spec.response.len() != m || spec.covariate.len() != m {
            return Err(Error::InvalidData(format!(
                "response ({}) and covariate ({}) must both have length {m}",
                spec.response.len(),
                spec.covariate.len()
            )));
        }
        if spec.response.iter().chain(&spec.covariate).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("response and covariate must be finite".into()));
        }
        let q = adjacency_generator(&spec.graph)?;
        let design = match spec.variant {
            GaussianVariant::SpatialRandomEffect => spec.covariate.clone(),
            GaussianVariant::GraphDiffusion => smooth_covariate(&q, &spec.covariate)?,
        };
        Ok(GaussianModel {
            variant: spec.variant,
            response: spec.response.clone(),
            design,
            precision: stationary_precision(&q).to_dense(),
            priors: spec.priors,
        })
    }

    pub fn dim(&self) -> usize {
        self.response.len()
    }

    /// The covariate column actually used in the regression.
    pub fn design(&self) -> &[f64] {
        &self.design
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let (b, s) = match self.variant {
            GaussianVariant::SpatialRandomEffect => ("beta", "sigma"),
            GaussianVariant::GraphDiffusion => ("beta_tilde", "sigma_tilde"),
        };
        let mut names: Vec<String> = ["mu", b, s, "tau2", "tau"].iter().map(|s| s.to_string()).collect();
        names.extend((0..self.dim()).map(|i| format!("eta[{i}]")));
        names
    }

    fn log_lik(&self, mu: f64, beta: f64, sigma: f64, tau2: f64, eta: &[f64]) -> f64 {
        let rss: f64 = (0..self.dim())
            .map(|i| (self.response[i] - mu - beta * self.design[i] - sigma * eta[i]).powi(2))
            .sum();
        -0.5 * self.dim() as f64 * (LN_2PI + tau2.ln()) - rss / (2.0 * tau2)
    }

    fn chain(&self, cfg: &SamplerConfig, rng: &mut rng::Rng) -> Result<PosteriorSamples> {
        cfg.validate()?;
        let m = self.dim();
        let pr = &self.priors;
        let c = &self.response;
        let x = &self.design;
        let data = cfg.use_likelihood;
        let reg_prec = 1.0 / (pr.regression_sd * pr.regression_sd);

        // (mu, beta) are drawn first, so only the residual variance seeds the chain
        let (_, _, mut tau2) = least_squares(c, x);
        let mut sigma = 1.0;
        let mut eta = vec![0.0; m];
        let mut step = AdaptiveStep::new(0.5, 0.44);
        let mut rec = Recorder::new(cfg.iterations, cfg.burn_in, cfg.thin);

        for iter in 0..cfg.iterations {
            // (mu, beta) | rest
            let (prec, lin) = if data {
                let (mut sx, mut sxx, mut sy, mut sxy) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..m {
                    let y = c[i] - sigma * eta[i];
                    sx += x[i];
                    sxx += x[i] * x[i];
                    sy += y;
                    sxy += x[i] * y;
                }
                (
                    Matrix2::new(m as f64 / tau2 + reg_prec, sx / tau2, sx / tau2, sxx / tau2 + reg_prec),
                    Vector2::new(sy / tau2, sxy / tau2),
                )
            } else {
                (Matrix2::new(reg_prec, 0.0, 0.0, reg_prec), Vector2::zeros())
            };
            let chol = prec
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("(mu, beta) full conditional".into()))?;
            let z = Vector2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal));
            let noise = chol.l().transpose().solve_upper_triangular(&z).expect("positive diagonal");
            let draw = chol.solve(&lin) + noise;
            let (mu, beta) = (draw[0], draw[1]);

            // tau2 | rest
            let (mut shape, mut rate) = (pr.tau2_shape, pr.tau2_scale);
            if data {
                let rss: f64 = (0..m).map(|i| (c[i] - mu - beta * x[i] - sigma * eta[i]).powi(2)).sum();
                shape += 0.5 * m as f64;
                rate += 0.5 * rss;
            }
            let g = Gamma::new(shape, 1.0 / rate).map_err(|e| Error::NonFinite(format!("inverse-gamma update: {e}")))?;
            tau2 = 1.0 / g.sample(rng);

            // eta | rest, on the sum-zero subspace
            let mut a = self.precision.clone();
            let mut lin = vec![0.0; m];
            if data {
                let w = sigma * sigma / tau2;
                for i in 0..m {
                    a[(i, i)] += w;
                    lin[i] = sigma * (c[i] - mu - beta * x[i]) / tau2;
                }
            }
            eta = ConstrainedGaussian::new(a)?.sample(&lin, rng);

            // log sigma | rest
            let resid: Vec<f64> = (0..m).map(|i| c[i] - mu - beta * x[i]).collect();
            let log_target = |s: f64| {
                let sig = s.exp();
                let mut lp = s - 0.5 * (sig / pr.re_sd_scale).powi(2);
                if data {
                    lp -= (0..m).map(|i| (resid[i] - sig * eta[i]).powi(2)).sum::<f64>() / (2.0 * tau2);
                }
                lp
            };
            let cur = sigma.ln();
            let prop = cur + step.scale() * rng.sample::<f64, _>(StandardNormal);
            let accept = rng.random::<f64>().ln() < log_target(prop) - log_target(cur);
            if accept {
                sigma = prop.exp();
            }
            step.record(iter, cfg.burn_in, accept);

            if rec.keeps(iter) {
                let mut row = Vec::with_capacity(m + 5);
                row.extend([mu, beta, sigma, tau2, tau2.sqrt()]);
                row.extend_from_slice(&eta);
                rec.push(row, self.log_lik(mu, beta, sigma, tau2, &eta));
            }
        }

        let samples = PosteriorSamples {
            names: self.parameter_names(),
            draws: rec.draws,
            log_lik: rec.log_lik,
            meta: SamplerMeta {
                model: format!("gaussian-{}", self.variant.name()),
                seed: cfg.seed,
                iterations: cfg.iterations,
                burn_in: cfg.burn_in,
                thin: cfg.thin,
                acceptance: BTreeMap::from([("log_sigma".to_string(), step.rate())]),
                proposal_scale: BTreeMap::from([("log_sigma".to_string(), step.scale())]),
            },
        };
        samples.validate()?;
        Ok(samples)
    }
}

impl DevianceModel for GaussianModel {
    fn deviance(&self, params: &[f64]) -> Result<f64> {
        let m = self.dim();
        if params.len() != m + 5 {
            return Err(Error::InvalidData(format!("expected {} parameters, got {}", m + 5, params.len())));
        }
        let (mu, beta, sigma, tau2) = (params[0], params[1], params[2], params[3]);
        if tau2 <= 0.0 {
            return Err(Error::InvalidData("tau2 must be positive".into()));
        }
        Ok(-2.0 * self.log_lik(mu, beta, sigma, tau2, &params[5..]))
    }
}

/// Ordinary least squares of `c` on `[1, x]`; returns (intercept, slope, residual variance).
fn least_squares(c: &[f64], x: &[f64]) -> (f64, f64, f64) {
    let n = c.len() as f64;
    let xm = x.iter().sum::<f64>() / n;
    let cm = c.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
    let sxy: f64 = x.iter().zip(c).map(|(a, b)| (a - xm) * (b - cm)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = cm - slope * xm;
    let rss: f64 = x.iter().zip(c).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let var = (rss / n).max(1e-8);
    (intercept, slope, var)
}

pub fn fit_gaussian(spec: &GaussianModelSpec, cfg: &SamplerConfig) -> Result<PosteriorSamples> {
    let model = GaussianModel::new(spec)?;
    model.chain(cfg, &mut rng::from_seed(cfg.seed))
}

/// Independent chains on separate seed streams, run in parallel.
pub fn fit_gaussian_chains(
    spec: &GaussianModelSpec,
    cfg: &SamplerConfig,
    chains: usize,
) -> Result<Vec<PosteriorSamples>> {
    let model = GaussianModel::new(spec)?;
    (0..chains)
        .into_par_iter()
        .map(|k| model.chain(cfg, &mut rng::stream(cfg.seed, k as u64)))
        .collect()
}
