//! Bayesian inference by adaptive Metropolis-within-Gibbs.

pub mod adapt;
pub mod chain;
pub mod checkpoint;
pub mod data;
pub mod init;
pub mod prior;
pub mod state;
pub mod update;

pub use adapt::{AdaptConfig, AdaptiveScale, TARGET_BLOCK, TARGET_SCALAR};
pub use chain::{coef_from_row, coef_names, equi_tailed_interval, flatten_coef, run_chain, AcceptanceRecord, ChainConfig, ChainOutput, Sampler, Traces};
pub use checkpoint::{Block, Container};
pub use data::Dataset;
pub use init::{gev_pwm, initial_params};
pub use prior::PriorSpec;
pub use state::{jacobian_diag, latent_terms, InitialScales, LikelihoodMode, Model, ModelState, Params, Replicate, Scales, SiteTerms, Surfaces};
pub use update::{sweep, update_margin, update_phi, update_rho, update_s};
