//! Dependence diagnostics, coverage analysis, predictive scoring and QQ
//! summaries.

pub mod coverage;
pub mod dependence;
pub mod predict;
pub mod qq;
pub mod window;

pub use coverage::{binomial_band, coverage_study, covers, ChainFitter, CoverageReport, CoverageRow, Fitter, OracleFitter, ParamDraws};
pub use dependence::{
    empirical_chi, empirical_eta, eta_bounds, eta_from_structure, eta_gaussian, kernel_shares, theoretical_chi,
    theoretical_chi_kernelwise, ChiEstimate, ChiTheory, DependenceBounds, DependenceCase, EtaEstimate, EtaInterval,
    PairMeta, PairSample,
};
pub use predict::{posterior_draws, predictive_loglik, PredictiveScores};
pub use qq::{qq_gumbel, QqPoint, MIN_QQ_OBS};
pub use window::{
    model_scores, moving_window_chi, rank_scores, write_window_csv, WindowChi, WindowGrid, DEFAULT_H_TOL_FRACTION, MIN_WINDOW_PAIRS,
};
