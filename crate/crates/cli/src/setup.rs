//! Turning a run config into graphs, generators and model specs.

use std::path::{Path, PathBuf};

use walkfield::infer::{
    default_rate_names, simulate_genetics, GaussianModelSpec, GaussianVariant, GeneticsModelSpec,
    GeneticsTruth, PriorSpec, SamplerConfig,
};
use walkfield::io::{
    columbus_fixture_sources, read_genotypes, standardize, synthetic_stream_network, StreamNetworkSpec,
};
use walkfield::{
    generator_from_params, read_graph, DemographyRates, Error, GeneratorMatrix, LoadedGraph, RateParams,
    Result, RunConfig,
};

use crate::manifest::Run;

pub const GRAPH_KEYS: &[&str] = &[
    "graph",
    "nodes",
    "edges",
    "symmetric",
    "stream_seed",
    "stream_distance_min",
    "stream_distance_max",
    "beta",
];

pub const DEMOGRAPHY_KEYS: &[&str] = &["birth", "death", "z0", "t_end", "snapshot_every", "dt"];

pub const FIT_KEYS: &[&str] = &[
    "model",
    "response",
    "covariate",
    "standardize_covariate",
    "iterations",
    "burn_in",
    "thin",
    "chains",
    "prior_only",
    "prior_regression_sd",
    "prior_re_sd_scale",
    "prior_tau2_shape",
    "prior_tau2_scale",
    "prior_rate_beta_sd",
    "prior_mu_lk_sd",
    "genotypes",
    "categories",
    "loci",
    "truth_beta",
    "truth_mu",
    "individuals_per_node",
    "data_seed",
];

pub fn keys(groups: &[&[&'static str]]) -> Vec<&'static str> {
    let mut all: Vec<&'static str> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    all.push("seed");
    all
}

pub fn load_config(path: Option<&Path>, allowed: &[&str], run: &mut Run) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let bytes = run.read_input(p)?;
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Config(format!("{} is not UTF-8", p.display())))?;
            RunConfig::parse(&text, allowed)
        }
        None => Ok(RunConfig::default()),
    }
}

fn bool_key(cfg: &RunConfig, key: &str, default: bool) -> Result<bool> {
    match cfg.get(key) {
        None => Ok(default),
        Some("true") | Some("1") | Some("yes") => Ok(true),
        Some("false") | Some("0") | Some("no") => Ok(false),
        Some(v) => Err(Error::Config(format!("key '{key}': expected true or false, got '{v}'"))),
    }
}

pub fn resolve_path(p: &str) -> PathBuf {
    let path = PathBuf::from(p);
    std::fs::canonicalize(&path).unwrap_or(path)
}

/// The graph named by the config, with any input files hashed.
pub fn load_graph(cfg: &RunConfig, run: &mut Run) -> Result<LoadedGraph> {
    match cfg.get("graph").unwrap_or("files") {
        "columbus" => {
            for (name, text) in columbus_fixture_sources() {
                run.input_bytes(&format!("bundled:{name}"), text.as_bytes());
            }
            let [(nn, nodes), (en, edges)] = columbus_fixture_sources();
            read_graph(nodes.as_bytes(), nn, edges.as_bytes(), en, true)
        }
        "stream" => {
            let defaults = StreamNetworkSpec::default();
            let spec = StreamNetworkSpec {
                distance_range: (
                    cfg.parsed_or("stream_distance_min", defaults.distance_range.0)?,
                    cfg.parsed_or("stream_distance_max", defaults.distance_range.1)?,
                ),
                ..defaults
            };
            let graph = synthetic_stream_network(&spec, cfg.parsed_or("stream_seed", 1)?)?;
            Ok(LoadedGraph {
                graph,
                attributes: Default::default(),
            })
        }
        "files" => {
            let nodes = PathBuf::from(cfg.require("nodes")?);
            let edges = PathBuf::from(cfg.require("edges")?);
            let nb = run.read_input(&nodes)?;
            let eb = run.read_input(&edges)?;
            read_graph(
                &nb[..],
                &nodes.display().to_string(),
                &eb[..],
                &edges.display().to_string(),
                bool_key(cfg, "symmetric", false)?,
            )
        }
        other => Err(Error::Config(format!("graph must be columbus, stream or files, got '{other}'"))),
    }
}

pub fn rate_params(cfg: &RunConfig) -> Result<RateParams> {
    match cfg.list_f64("beta")? {
        Some(b) => RateParams::from_slice(&b),
        None => Ok(RateParams::new(0.0, 0.0, 0.0)),
    }
}

pub fn generator(cfg: &RunConfig, loaded: &LoadedGraph) -> Result<GeneratorMatrix> {
    generator_from_params(&loaded.graph, &rate_params(cfg)?)
}

/// A number broadcast to every node, or one value per node.
pub fn per_node(cfg: &RunConfig, key: &str, m: usize, default: f64) -> Result<Vec<f64>> {
    match cfg.list_f64(key)? {
        None => Ok(vec![default; m]),
        Some(v) if v.len() == 1 => Ok(vec![v[0]; m]),
        Some(v) if v.len() == m => Ok(v),
        Some(v) => Err(Error::Config(format!("key '{key}' has {} values for {m} nodes", v.len()))),
    }
}

pub fn demography(cfg: &RunConfig, m: usize) -> Result<DemographyRates> {
    DemographyRates::new(per_node(cfg, "birth", m, 0.0)?, per_node(cfg, "death", m, 0.0)?)
}

pub fn seed(cfg: &RunConfig, run: &mut Run) -> Result<u64> {
    let s = cfg.seed()?;
    run.seed = Some(s);
    Ok(s)
}

fn priors(cfg: &RunConfig) -> Result<PriorSpec> {
    let d = PriorSpec::default();
    let p = PriorSpec {
        regression_sd: cfg.parsed_or("prior_regression_sd", d.regression_sd)?,
        re_sd_scale: cfg.parsed_or("prior_re_sd_scale", d.re_sd_scale)?,
        tau2_shape: cfg.parsed_or("prior_tau2_shape", d.tau2_shape)?,
        tau2_scale: cfg.parsed_or("prior_tau2_scale", d.tau2_scale)?,
        rate_beta_sd: cfg.parsed_or("prior_rate_beta_sd", d.rate_beta_sd)?,
        mu_lk_sd: cfg.parsed_or("prior_mu_lk_sd", d.mu_lk_sd)?,
    };
    p.validate()?;
    Ok(p)
}

pub fn sampler_config(cfg: &RunConfig, seed: u64) -> Result<SamplerConfig> {
    let mut s = SamplerConfig::new(cfg.require_parsed("iterations")?, cfg.parsed_or("burn_in", 0)?, seed);
    s.thin = cfg.parsed_or("thin", 1)?;
    s.use_likelihood = !bool_key(cfg, "prior_only", false)?;
    s.validate()?;
    Ok(s)
}

pub enum FitProblem {
    Gaussian(GaussianModelSpec),
    Genetics {
        spec: GeneticsModelSpec,
        truth: Option<GeneticsTruth>,
    },
}

/// Rebuild the data and model of a fit. Deterministic in the config.
pub fn fit_problem(cfg: &RunConfig, run: &mut Run) -> Result<FitProblem> {
    let model = cfg.require("model")?;
    let loaded = load_graph(cfg, run)?;
    let priors = priors(cfg)?;
    match model {
        "gaussian-spatial" | "gaussian-diffusion" => {
            let response = loaded.attribute(cfg.get("response").unwrap_or("crime"))?.to_vec();
            let mut covariate = loaded.attribute(cfg.get("covariate").unwrap_or("hoval"))?.to_vec();
            if bool_key(cfg, "standardize_covariate", false)? {
                covariate = standardize(&covariate);
            }
            let variant = if model == "gaussian-spatial" {
                GaussianVariant::SpatialRandomEffect
            } else {
                GaussianVariant::GraphDiffusion
            };
            Ok(FitProblem::Gaussian(GaussianModelSpec {
                response,
                covariate,
                variant,
                graph: loaded.graph,
                priors,
            }))
        }
        "genetics" => {
            let (mut spec, truth) = match cfg.require("genotypes")? {
                "simulate" => {
                    let beta = cfg.list_f64("truth_beta")?.unwrap_or_else(|| vec![0.0, 1.0, -1.0]);
                    let loci: usize = cfg.parsed_or("loci", 3)?;
                    let mu = cfg.list_f64("truth_mu")?.unwrap_or_else(|| vec![0.0, 0.3, -0.3]);
                    let (spec, truth) = simulate_genetics(
                        &loaded.graph,
                        &beta,
                        &vec![mu; loci],
                        cfg.parsed_or("individuals_per_node", 10)?,
                        cfg.require_parsed("data_seed")?,
                    )?;
                    (spec, Some(truth))
                }
                path => {
                    let p = PathBuf::from(path);
                    let bytes = run.read_input(&p)?;
                    let obs = read_genotypes(&bytes[..], &p.display().to_string(), &loaded.graph)?;
                    let n_loci = obs.iter().map(|o| o.locus + 1).max().unwrap_or(0);
                    let mut categories = vec![0; n_loci];
                    for o in &obs {
                        categories[o.locus] = categories[o.locus].max(o.allele);
                    }
                    let spec = GeneticsModelSpec {
                        graph: loaded.graph.clone(),
                        categories,
                        observations: obs,
                        rate_param_names: default_rate_names(),
                        priors,
                    };
                    (spec, None)
                }
            };
            if let Some(k) = cfg.list_f64("categories")? {
                spec.categories = k.iter().map(|&v| v as usize).collect();
            }
            spec.priors = priors;
            Ok(FitProblem::Genetics { spec, truth })
        }
        other => Err(Error::Config(format!(
            "model must be gaussian-spatial, gaussian-diffusion or genetics, got '{other}'"
        ))),
    }
}
