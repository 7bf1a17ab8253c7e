//! Holdout predictive log-likelihood under posterior draws.
//!
//! For each draw the training `Z` is rebuilt from the training data, the
//! knot variables extend `R` to the holdout sites through the same Wendland
//! weights, holdout `Z` is conditioned on the observed training `Z`, and the
//! holdout observations are scored by the conditional Gaussian density times
//! the copula Jacobian, site by site.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{conditional_gp, covariance_matrix};
use crate::inference::{coef_from_row, ChainOutput, Dataset, LikelihoodMode, Model, Params};
use crate::margins::MarginalRegression;
use crate::simulate::site_tables;
use crate::special::ln_norm_pdf;

/// Draw-wise predictive log-likelihood, `per_site[site][draw]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictiveScores {
    pub per_site: Vec<Vec<f64>>,
}

impl PredictiveScores {
    pub fn site_means(&self) -> Vec<f64> {
        self.per_site.iter().map(|d| d.iter().sum::<f64>() / d.len() as f64).collect()
    }

    pub fn mean(&self) -> f64 {
        let m = self.site_means();
        m.iter().sum::<f64>() / m.len() as f64
    }
}

/// Post-burn-in parameter draws from a chain that traced its knot variables,
/// thinned to at most `max_draws`.
pub fn posterior_draws(out: &ChainOutput, burn_in: usize, max_draws: usize) -> Result<Vec<Params>> {
    let tr = &out.traces;
    if tr.s.len() != tr.len() {
        return Err(Error::Parameter("chain did not trace the knot variables".into()));
    }
    let rows: Vec<usize> = tr.post_burn_in(burn_in).collect();
    if rows.is_empty() || max_draws == 0 {
        return Err(Error::Parameter("chain has no post-burn-in draws".into()));
    }
    let step = rows.len().div_ceil(max_draws);
    let (k, t) = (out.final_params.s.nrows(), out.final_params.s.ncols());
    Ok(rows
        .iter()
        .step_by(step)
        .map(|&r| Params {
            s: DMatrix::from_column_slice(k, t, &tr.s[r]),
            phi_knots: tr.phi[r].clone(),
            rho_knots: tr.rho[r].clone(),
            coef: coef_from_row(&out.final_params.coef, &tr.coef[r]),
        })
        .collect())
}

/// Per-site predictive log-likelihood of `holdout` for every draw.
/// `holdout` must share the training replicates and carry its own marginal design.
pub fn predictive_loglik(train: &Model, holdout: &Dataset, draws: &[Params]) -> Result<PredictiveScores> {
    if draws.is_empty() {
        return Err(Error::Parameter("no posterior draws to predict with".into()));
    }
    if train.mode != LikelihoodMode::Full {
        return Err(Error::Parameter("prediction needs the full likelihood".into()));
    }
    if holdout.n_times() != train.n_times() {
        return Err(Error::Parameter("holdout and training replicates differ".into()));
    }
    let d_train = train.geo.n_sites();
    let d_new = holdout.n_sites();
    let mut all_sites = train.geo.sites.clone();
    all_sites.extend_from_slice(&holdout.sites);
    let geo_all = train.geo.with_sites(all_sites.clone())?;
    let per_draw: Vec<Vec<f64>> = draws
        .par_iter()
        .map(|p| -> Result<Vec<f64>> {
            let surf = train.surfaces(&p.phi_knots, &p.rho_knots, &p.coef)?;
            let reps = train.build_replicates(&p.s, &surf, None)?;
            let phi_all = geo_all.phi_surface(&p.phi_knots);
            let rho_all = geo_all.rho_surface(&p.rho_knots);
            let cov = covariance_matrix(&all_sites, &rho_all, geo_all.nu)?;
            let margins = MarginalRegression::new(holdout.design.clone(), p.coef.clone())?.surfaces();
            let tables = site_tables(&phi_all[d_train..], &geo_all.bar_gamma[d_train..])?;
            let mut ll = vec![0.0; d_new];
            for t in 0..train.n_times() {
                let obs = train.observed(t);
                let zo: Vec<f64> = obs.iter().map(|&j| reps[t].z[j]).collect();
                let new: Vec<usize> = (0..d_new).filter(|&i| holdout.is_observed(i, t)).collect();
                if new.is_empty() {
                    continue;
                }
                let new_idx: Vec<usize> = new.iter().map(|&i| d_train + i).collect();
                let (mean, cmat) = conditional_gp(&cov, obs, &new_idx, &zo)?;
                let s_col: Vec<f64> = p.s.column(t).iter().copied().collect();
                for (a, &i) in new.iter().enumerate() {
                    let j = d_train + i;
                    let r = geo_all.r_value(j, &s_col);
                    let gev = margins.gev(i, holdout.design.time[t])?;
                    if !gev.in_support(holdout.y[(i, t)]) {
                        ll[i] = f64::NEG_INFINITY;
                        continue;
                    }
                    let st = train.site_terms(holdout.y[(i, t)], &gev, &tables[i], r, phi_all[j], None)?;
                    let var = cmat[(a, a)];
                    if !(var > 0.0) {
                        return Err(Error::Numeric(format!("degenerate predictive variance at holdout site {i}")));
                    }
                    let e = (st.z - mean[a]) / var.sqrt();
                    let gauss = ln_norm_pdf(e) - 0.5 * var.ln();
                    ll[i] += gauss + st.logjac;
                }
            }
            Ok(ll)
        })
        .collect::<Result<Vec<_>>>()?;
    let per_site = (0..d_new).map(|i| per_draw.iter().map(|d| d[i]).collect()).collect();
    Ok(PredictiveScores { per_site })
}
