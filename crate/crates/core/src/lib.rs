//! Bayesian symbolic regression.
//!
//! Closed-form models are expression trees scored by their description
//! length: a BIC approximation to the negative log marginal likelihood
//! under Gaussian noise plus the negative log of a maximum-entropy prior
//! over operator counts. The posterior over trees is explored by
//! parallel-tempered Metropolis sampling, and the resulting traces feed
//! model averaging and Rashomon-set diagnostics.

pub mod config;
pub mod ensemble;
pub mod error;
pub mod experiments;
pub mod expr;
pub mod likelihood;
pub mod prior;
pub mod sampler;
pub mod score;

pub use error::{Error, ErrorKind, Result};
pub use expr::{parse_expression, print_expression, ExprTree, Node, Operator, ParamVector, Signature};
pub use likelihood::{fit_params, log_likelihood_mle, sse, Dataset, FitConfig, FitResult};
pub use score::{
    bic1, description_length, fisher_log_det, log_prior, posterior_weights, BicVariant,
    PriorHyperparams, ScoreBreakdown, ScoreConfig,
};
pub use sampler::{
    map_model, read_trace, sample_posterior, write_trace, Grammar, MoveKind, SamplerConfig, SamplerTrace,
    TraceRecord,
};
pub use prior::{fit_prior_hyperparams, sample_prior_models, PriorConfig, PriorFitReport, TargetMoments};
pub use ensemble::{
    learnability_gap, predict_ensemble, predict_map, rashomon_set, EnsembleConfig, PredictivePosterior, RashomonSet,
};
pub use config::RunConfig;
pub use experiments::{generate, run_grid, GeneratorSpec, GridConfig, GridResult, SearchSettings};
