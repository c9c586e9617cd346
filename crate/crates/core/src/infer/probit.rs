//! Multinomial-probit model for allele counts on a migration graph.
//!
//! Each allele copy carries a block of unit-variance latent utilities
//! `z_k = μ_ℓk + η_sℓk + ε`, and the observed category is the block's argmax.
//! Every `η_·ℓk` is an intrinsic field with precision `Q(β)Q(β)'`.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dic::DevianceModel;
use super::priors::{PriorSpec, SamplerConfig};
use super::samples::{PosteriorSamples, Recorder, SamplerMeta};
use super::truncnorm::{norm_cdf, sample_above, sample_below};
use super::AdaptiveStep;
use crate::error::{Error, Result};
use crate::field::{log_subspace_det, stationary_precision, ConstrainedGaussian, IntrinsicField};
use crate::graph::{check_irreducible, generator_from_params, GeneratorMatrix, RateParams, SpatialGraph};
use crate::rng;

/// One allele copy: `allele` is 1-based, `slot` is 1 or 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlleleObservation {
    pub locus: usize,
    pub individual: usize,
    pub node: usize,
    pub slot: u8,
    pub allele: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeneticsModelSpec {
    pub graph: SpatialGraph,
    /// Number of allele categories per locus.
    pub categories: Vec<usize>,
    pub observations: Vec<AlleleObservation>,
    /// Column names for the rate coefficients. The first three are the
    /// intercept, downstream and barrier terms; any further names must be
    /// extra edge covariates.
    pub rate_param_names: Vec<String>,
    pub priors: PriorSpec,
}

pub fn default_rate_names() -> Vec<String> {
    vec!["beta0".into(), "beta1".into(), "beta2".into()]
}

fn rate_params(names: &[String], beta: &[f64]) -> RateParams {
    let mut p = RateParams::new(beta[0], beta[1], beta[2]);
    for (name, &b) in names[3..].iter().zip(&beta[3..]) {
        p = p.with_extra(name.clone(), b);
    }
    p
}

const QUAD_NODES: usize = 64;

/// Gauss-Hermite rule for the standard normal weight (Golub-Welsch).
fn hermite_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| {
        let n = QUAD_NODES;
        let jacobi = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64).sqrt()
            } else {
                0.0
            }
        });
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|k| (eig.eigenvalues[k], eig.eigenvectors[(0, k)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        pairs.into_iter().unzip()
    })
}

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `log P(argmax_a (m_a + ε_a) = k)` for i.i.d. standard normal `ε`.
pub fn log_category_probability(means: &[f64], k: usize) -> f64 {
    let (nodes, weights) = hermite_rule();
    let gap = means
        .iter()
        .enumerate()
        .filter(|&(a, _)| a != k)
        .map(|(_, &m)| m - means[k])
        .fold(f64::NEG_INFINITY, f64::max);
    // recentre the rule where the integrand's mass sits when k is unlikely
    let c = (0.5 * gap).max(0.0);
    let terms = nodes.iter().zip(weights).map(|(&t, &w)| {
        let u = c + t;
        let lg: f64 = means
            .iter()
            .enumerate()
            .filter(|&(a, _)| a != k)
            .map(|(_, &m)| norm_cdf(u + means[k] - m).ln())
            .sum();
        w.ln() - c * t + lg
    });
    -0.5 * c * c + log_sum_exp(terms)
}

/// Category probabilities implied by latent means.
pub fn category_probabilities(means: &[f64]) -> Vec<f64> {
    (0..means.len()).map(|k| log_category_probability(means, k).exp()).collect()
}

/// Lower bound on per-copy log-probabilities, keeping deviances finite.
const LOG_PROB_FLOOR: f64 = -700.0;

#[derive(Debug, Clone)]
struct Locus {
    k: usize,
    /// (node, observed category 0-based) per allele copy.
    blocks: Vec<(usize, usize)>,
    per_node: Vec<f64>,
    /// counts[s][a]: copies at node s showing category a.
    counts: Vec<Vec<f64>>,
}

/// One Gibbs sweep over every latent block of a locus. Each observed
/// category's latent stays the strict maximum of its block.
fn sweep_latents(loc: &Locus, z: &mut [f64], mu: &[f64], eta: &[Vec<f64>], rng: &mut rng::Rng) {
    let k = loc.k;
    for (b, &(s, obs)) in loc.blocks.iter().enumerate() {
        let zb = &mut z[b * k..(b + 1) * k];
        for a in 0..k {
            let m = mu[a] + eta[a][s];
            zb[a] = if a == obs {
                let lower = (0..k)
                    .filter(|&c| c != obs)
                    .map(|c| zb[c])
                    .fold(f64::NEG_INFINITY, f64::max);
                sample_above(m, lower, rng)
            } else {
                sample_below(m, zb[obs], rng)
            };
        }
    }
}

/// A validated genetics model.
#[derive(Debug, Clone)]
pub struct GeneticsModel {
    graph: SpatialGraph,
    rate_names: Vec<String>,
    loci: Vec<Locus>,
    priors: PriorSpec,
}

impl GeneticsModel {
    pub fn new(spec: &GeneticsModelSpec) -> Result<Self> {
        spec.priors.validate()?;
        let s = spec.graph.node_count();
        if spec.rate_param_names.len() < 3 {
            return Err(Error::Config("need at least three rate coefficient names".into()));
        }
        if spec.categories.is_empty() {
            return Err(Error::InvalidData("no loci".into()));
        }
        for (l, &k) in spec.categories.iter().enumerate() {
            if k < 2 {
                return Err(Error::InvalidData(format!("locus {l} has {k} allele categories; need at least 2")));
            }
        }
        // zero coefficients still exercise the covariate lookups
        let q0 = generator_from_params(&spec.graph, &rate_params(&spec.rate_param_names, &vec![0.0; spec.rate_param_names.len()]))?;
        if !check_irreducible(&q0) {
            return Err(Error::Singular("migration graph is not strongly connected".into()));
        }

        let mut loci: Vec<Locus> = spec
            .categories
            .iter()
            .map(|&k| Locus {
                k,
                blocks: Vec::new(),
                per_node: vec![0.0; s],
                counts: vec![vec![0.0; k]; s],
            })
            .collect();
        let mut slots: BTreeMap<(usize, usize), BTreeSet<u8>> = BTreeMap::new();
        let mut home: BTreeMap<usize, usize> = BTreeMap::new();
        for o in &spec.observations {
            let l = o.locus;
            if l >= loci.len() {
                return Err(Error::InvalidData(format!("observation names unknown locus {l}")));
            }
            if o.node >= s {
                return Err(Error::InvalidData(format!("observation at unknown node {}", o.node)));
            }
            if o.allele == 0 || o.allele > loci[l].k {
                return Err(Error::InvalidData(format!(
                    "allele {} outside 1..{} at locus {l}",
                    o.allele, loci[l].k
                )));
            }
            if !(o.slot == 1 || o.slot == 2) {
                return Err(Error::InvalidData(format!("ploidy slot {} is not 1 or 2", o.slot)));
            }
            if *home.entry(o.individual).or_insert(o.node) != o.node {
                return Err(Error::InvalidData(format!("individual {} sampled at two nodes", o.individual)));
            }
            if !slots.entry((o.individual, l)).or_default().insert(o.slot) {
                return Err(Error::InvalidData(format!(
                    "individual {} has slot {} twice at locus {l}",
                    o.individual, o.slot
                )));
            }
            let loc = &mut loci[l];
            loc.blocks.push((o.node, o.allele - 1));
            loc.per_node[o.node] += 1.0;
            loc.counts[o.node][o.allele - 1] += 1.0;
        }
        for &ind in home.keys() {
            for l in 0..loci.len() {
                if slots.get(&(ind, l)).map_or(0, BTreeSet::len) != 2 {
                    return Err(Error::InvalidData(format!(
                        "individual {ind} lacks a complete genotype at locus {l}"
                    )));
                }
            }
        }
        Ok(GeneticsModel {
            graph: spec.graph.clone(),
            rate_names: spec.rate_param_names.clone(),
            loci,
            priors: spec.priors,
        })
    }

    pub fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    fn n_rates(&self) -> usize {
        self.rate_names.len()
    }

    fn mu_offset(&self, l: usize) -> usize {
        self.n_rates() + self.loci[..l].iter().map(|c| c.k - 1).sum::<usize>()
    }

    fn eta_offset(&self, l: usize, k: usize) -> usize {
        let base = self.mu_offset(self.loci.len());
        let s = self.node_count();
        base + s * (self.loci[..l].iter().map(|c| c.k).sum::<usize>() + k)
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = self.rate_names.clone();
        for (l, loc) in self.loci.iter().enumerate() {
            names.extend((2..=loc.k).map(|k| format!("mu[{},{k}]", l + 1)));
        }
        for (l, loc) in self.loci.iter().enumerate() {
            for k in 1..=loc.k {
                names.extend((0..self.node_count()).map(|s| format!("eta[{},{k},{s}]", l + 1)));
            }
        }
        names
    }

    /// Generator, dense precision and its subspace log-determinant at `beta`.
    fn precision_at(&self, beta: &[f64]) -> Result<(GeneratorMatrix, DMatrix<f64>, f64)> {
        let q = generator_from_params(&self.graph, &rate_params(&self.rate_names, beta))?;
        let p = stationary_precision(&q).to_dense();
        let ld = log_subspace_det(&p)?;
        Ok((q, p, ld))
    }

    fn log_lik(&self, mu: &[Vec<f64>], eta: &[Vec<Vec<f64>>]) -> f64 {
        let mut ll = 0.0;
        let mut means = Vec::new();
        for (l, loc) in self.loci.iter().enumerate() {
            for s in 0..self.node_count() {
                if loc.per_node[s] == 0.0 {
                    continue;
                }
                means.clear();
                means.extend((0..loc.k).map(|a| mu[l][a] + eta[l][a][s]));
                for a in 0..loc.k {
                    let n = loc.counts[s][a];
                    if n > 0.0 {
                        ll += n * log_category_probability(&means, a).max(LOG_PROB_FLOOR);
                    }
                }
            }
        }
        ll
    }

    fn chain(&self, cfg: &SamplerConfig, rng: &mut rng::Rng) -> Result<PosteriorSamples> {
        cfg.validate()?;
        let data = cfg.use_likelihood;
        let s_n = self.node_count();
        let pr = &self.priors;
        let n_fields: usize = self.loci.iter().map(|c| c.k).sum();

        let mut beta = vec![0.0; self.n_rates()];
        let (mut q, mut p, mut logdet) = self.precision_at(&beta)?;
        let mut mu: Vec<Vec<f64>> = self.loci.iter().map(|c| vec![0.0; c.k]).collect();
        let mut eta: Vec<Vec<Vec<f64>>> = self.loci.iter().map(|c| vec![vec![0.0; s_n]; c.k]).collect();
        let mut z: Vec<Vec<f64>> = self
            .loci
            .iter()
            .map(|c| {
                let mut v = vec![0.0; c.blocks.len() * c.k];
                for (b, &(_, obs)) in c.blocks.iter().enumerate() {
                    v[b * c.k + obs] = 1.0;
                }
                v
            })
            .collect();
        let mut eta_samplers: Option<Vec<ConstrainedGaussian>> = None;
        let mut step = AdaptiveStep::new(0.1, 0.234);
        let mut rec = Recorder::new(cfg.iterations, cfg.burn_in, cfg.thin);

        for iter in 0..cfg.iterations {
            if data {
                for (l, loc) in self.loci.iter().enumerate() {
                    sweep_latents(loc, &mut z[l], &mu[l], &eta[l], rng);
                }
            }

            // mu_lk, k >= 2
            let mu_prec0 = 1.0 / (pr.mu_lk_sd * pr.mu_lk_sd);
            for (l, loc) in self.loci.iter().enumerate() {
                for a in 1..loc.k {
                    let (mut prec, mut lin) = (mu_prec0, 0.0);
                    if data {
                        prec += loc.blocks.len() as f64;
                        lin = loc
                            .blocks
                            .iter()
                            .enumerate()
                            .map(|(b, &(s, _))| z[l][b * loc.k + a] - eta[l][a][s])
                            .sum();
                    }
                    mu[l][a] = lin / prec + rng.sample::<f64, _>(StandardNormal) / prec.sqrt();
                }
            }

            // eta fields
            if eta_samplers.is_none() {
                let built = self
                    .loci
                    .iter()
                    .map(|loc| {
                        let mut a = p.clone();
                        if data {
                            for s in 0..s_n {
                                a[(s, s)] += loc.per_node[s];
                            }
                        }
                        ConstrainedGaussian::new(a)
                    })
                    .collect::<Result<Vec<_>>>()?;
                eta_samplers = Some(built);
            }
            let samplers = eta_samplers.as_ref().unwrap();
            for (l, loc) in self.loci.iter().enumerate() {
                for a in 0..loc.k {
                    let mut lin = vec![0.0; s_n];
                    if data {
                        for (b, &(s, _)) in loc.blocks.iter().enumerate() {
                            lin[s] += z[l][b * loc.k + a] - mu[l][a];
                        }
                    }
                    eta[l][a] = samplers[l].sample(&lin, rng);
                }
            }

            // rate coefficients, jointly
            let energy = |q: &GeneratorMatrix| -> f64 {
                eta.iter()
                    .flatten()
                    .map(|f| q.apply_transpose(f).iter().map(|v| v * v).sum::<f64>())
                    .sum()
            };
            let prior = |b: &[f64]| -> f64 { -b.iter().map(|v| v * v).sum::<f64>() / (2.0 * pr.rate_beta_sd * pr.rate_beta_sd) };
            let target = |ld: f64, en: f64, b: &[f64]| 0.5 * n_fields as f64 * ld - 0.5 * en + prior(b);
            let proposal: Vec<f64> = beta
                .iter()
                .map(|b| b + step.scale() * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let u: f64 = rng.random();
            let accepted = match self.precision_at(&proposal) {
                Ok((q2, p2, ld2)) => {
                    let log_ratio = target(ld2, energy(&q2), &proposal) - target(logdet, energy(&q), &beta);
                    if u.ln() < log_ratio {
                        beta = proposal;
                        q = q2;
                        p = p2;
                        logdet = ld2;
                        eta_samplers = None;
                        true
                    } else {
                        false
                    }
                }
                Err(Error::RateOverflow { .. }) => false,
                Err(e) => return Err(e),
            };
            step.record(iter, cfg.burn_in, accepted);

            if rec.keeps(iter) {
                let mut row = beta.clone();
                for (l, loc) in self.loci.iter().enumerate() {
                    row.extend_from_slice(&mu[l][1..loc.k]);
                }
                for f in eta.iter().flatten() {
                    row.extend_from_slice(f);
                }
                rec.push(row, self.log_lik(&mu, &eta));
            }
        }

        let samples = PosteriorSamples {
            names: self.parameter_names(),
            draws: rec.draws,
            log_lik: rec.log_lik,
            meta: SamplerMeta {
                model: "probit-genetics".into(),
                seed: cfg.seed,
                iterations: cfg.iterations,
                burn_in: cfg.burn_in,
                thin: cfg.thin,
                acceptance: BTreeMap::from([("rate_beta".to_string(), step.rate())]),
                proposal_scale: BTreeMap::from([("rate_beta".to_string(), step.scale())]),
            },
        };
        samples.validate()?;
        Ok(samples)
    }

    /// Unpack `(mu, eta)` from a flat parameter vector.
    fn unpack(&self, params: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
        let s_n = self.node_count();
        let mu = self
            .loci
            .iter()
            .enumerate()
            .map(|(l, loc)| {
                let off = self.mu_offset(l);
                std::iter::once(0.0).chain(params[off..off + loc.k - 1].iter().copied()).collect()
            })
            .collect();
        let eta = self
            .loci
            .iter()
            .enumerate()
            .map(|(l, loc)| {
                (0..loc.k)
                    .map(|a| {
                        let off = self.eta_offset(l, a);
                        params[off..off + s_n].to_vec()
                    })
                    .collect()
            })
            .collect();
        (mu, eta)
    }
}

impl DevianceModel for GeneticsModel {
    fn deviance(&self, params: &[f64]) -> Result<f64> {
        let expected = self.eta_offset(self.loci.len(), 0);
        if params.len() != expected {
            return Err(Error::InvalidData(format!("expected {expected} parameters, got {}", params.len())));
        }
        let (mu, eta) = self.unpack(params);
        Ok(-2.0 * self.log_lik(&mu, &eta))
    }
}

/// Metropolis-within-Gibbs for the probit genetics model.
pub fn fit_probit_genetics(spec: &GeneticsModelSpec, cfg: &SamplerConfig) -> Result<PosteriorSamples> {
    GeneticsModel::new(spec)?.chain(cfg, &mut rng::from_seed(cfg.seed))
}

/// Independent chains on separate seed streams, run in parallel.
pub fn fit_probit_genetics_chains(
    spec: &GeneticsModelSpec,
    cfg: &SamplerConfig,
    chains: usize,
) -> Result<Vec<PosteriorSamples>> {
    use rayon::prelude::*;
    let model = GeneticsModel::new(spec)?;
    (0..chains)
        .into_par_iter()
        .map(|k| model.chain(cfg, &mut rng::stream(cfg.seed, k as u64)))
        .collect()
}

/// Parameters used to simulate a genetics data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneticsTruth {
    pub beta: Vec<f64>,
    /// Per-locus allele means; the first entry of each is forced to 0.
    pub mu: Vec<Vec<f64>>,
    /// Realized fields `eta[l][k][s]`.
    pub eta: Vec<Vec<Vec<f64>>>,
}

/// Forward-simulate diploid genotypes for `individuals_per_node` individuals
/// at every node.
pub fn simulate_genetics(
    graph: &SpatialGraph,
    beta: &[f64],
    mu: &[Vec<f64>],
    individuals_per_node: usize,
    seed: u64,
) -> Result<(GeneticsModelSpec, GeneticsTruth)> {
    let names = default_rate_names();
    if beta.len() != 3 {
        return Err(Error::Config("simulation uses exactly three rate coefficients".into()));
    }
    let q = generator_from_params(graph, &rate_params(&names, beta))?;
    let field = IntrinsicField::new(q, 1.0)?;
    let mut r = rng::from_seed(seed);
    let mut mu_fixed = mu.to_vec();
    let eta: Vec<Vec<Vec<f64>>> = mu
        .iter()
        .map(|m| (0..m.len()).map(|_| field.sample_with(&mut r)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut observations = Vec::new();
    let mut individual = 0;
    for node in 0..graph.node_count() {
        for _ in 0..individuals_per_node {
            for (l, m) in mu_fixed.iter_mut().enumerate() {
                m[0] = 0.0;
                for slot in 1..=2u8 {
                    let allele = (0..m.len())
                        .map(|a| m[a] + eta[l][a][node] + r.sample::<f64, _>(StandardNormal))
                        .enumerate()
                        .max_by(|x, y| x.1.total_cmp(&y.1))
                        .map(|(a, _)| a + 1)
                        .unwrap();
                    observations.push(AlleleObservation {
                        locus: l,
                        individual,
                        node,
                        slot,
                        allele,
                    });
                }
            }
            individual += 1;
        }
    }
    let spec = GeneticsModelSpec {
        graph: graph.clone(),
        categories: mu.iter().map(Vec::len).collect(),
        observations,
        rate_param_names: names,
        priors: PriorSpec::default(),
    };
    let truth = GeneticsTruth {
        beta: beta.to_vec(),
        mu: mu_fixed,
        eta,
    };
    Ok((spec, truth))
}
