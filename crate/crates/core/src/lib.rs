//! Bayesian linear regression with the LS-APC sparse-and-smooth prior.
//!
//! Each coefficient is pulled toward a multiple of its neighbour,
//! `β_i ~ N(−l_i β_{i+1}, τ_i⁻¹)`, with hierarchical Gamma priors on the
//! precisions and Gaussian priors on the `l_i`. Inference is available by
//! Gibbs sampling ([`gibbs`]) and mean-field variational Bayes ([`vb`]).
//! [`covariance`] selects a structured noise covariance, [`fused_lasso`]
//! provides the penalized baseline and [`sim`] runs comparison studies.

pub mod covariance;
pub mod error;
pub mod fused_lasso;
pub mod gibbs;
pub mod io;
pub mod model;
pub mod numeric;
pub mod rand_kernels;
pub mod sim;
pub mod vb;

pub use covariance::{build_b, grid_select, whiten, CovarianceModel, SelectionTable};
pub use error::{LsapcError, Result};
pub use fused_lasso::{cross_validate, fit_fused_lasso, tv_prox, FlConfig, FlFit};
pub use gibbs::{
    chib_log_marginal, map_point_estimate, run_chain, GibbsChain, GibbsSettings, ThetaStarRule,
};
pub use model::{log_joint, Dataset, EstimateSource, LsapcConfig, ModelState, PointEstimate};
pub use rand_kernels::RngHandle;
pub use sim::{absolute_error, make_ground_truth, run_study, simulate_dataset, GroundTruthSpec, Method, StudyConfig};
pub use vb::{elbo, run_vb, vb_model_weight, vb_step, VbPosterior};
