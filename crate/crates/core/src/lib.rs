//! Spatial covariance models built as stationary laws of continuous-time
//! random walks on graphs.
//!
//! A [`GeneratorMatrix`] `Q` of migration rates defines the intrinsic field
//! `π ~ N(0, σ²(QQ')⁻)` on the sum-zero subspace. The crate builds `Q` from
//! edge covariates, samples and evaluates the field, simulates the
//! birth-death-migration process whose large-population limit drives it,
//! checks whether `Q` is recoverable from `QQ'`, and fits Gaussian and
//! multinomial-probit hierarchical models by MCMC.

pub mod error;
pub mod field;
pub mod graph;
pub mod ident;
pub mod infer;
pub mod io;
pub mod popsim;
pub mod rng;
pub mod sparse;

pub use error::{Error, ErrorClass, Result};
pub use field::{
    constrained_solve, log_density, log_pseudo_det, log_subspace_det, sample_field, stationary_precision,
    ConstrainedGaussian, ConstrainedSolver, FieldSample, IntrinsicField,
};
pub use graph::{
    build_generator, check_irreducible, edge_rates_loglinear, generator_from_params, to_sar, Edge,
    EdgeCovariates, EdgeRates, GeneratorMatrix, Node, RateParams, SarForm, SpatialGraph,
};
pub use ident::{
    check_identifiable, construct_confounded_pair, verify_unique, Classification,
    IdentifiabilityReport,
};
pub use infer::{
    compute_dic, fit_gaussian, fit_probit_genetics, split_half_diagnostic, DICResult,
    GaussianModelSpec, GaussianVariant, GeneticsModelSpec, PosteriorSamples, PriorSpec,
    SamplerConfig,
};
pub use popsim::{
    convergence_gap, integrate_limit_ode, simulate_population, ConvergenceConfig, DemographyRates,
    PopulationSimConfig, PopulationTrajectory,
};
pub use sparse::CsrMatrix;
pub use io::{columbus_fixture, load_graph, read_graph, write_graph, ColumbusData, LoadedGraph, RunConfig};
