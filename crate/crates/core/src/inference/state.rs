//! Sampler state, its caches, and the likelihood.
//!
//! Every cached quantity is a pure function of the parameters and the
//! current `X` values (the latter only through warm starts of the quantile
//! solver), so rebuilding caches from a checkpoint reproduces them bit for
//! bit.

use std::collections::HashMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adapt::{AdaptiveScale, TARGET_BLOCK, TARGET_SCALAR};
use super::data::Dataset;
use super::prior::PriorSpec;
use crate::error::{Error, Result};
use crate::gp::{covariance_matrix, CovarianceFactor};
use crate::margins::{
    gev_cdf, gev_ln_pdf, gev_sf, log_jacobian, log_jacobian_from_base, x_to_z, GevParams, MarginBlock, MarginalCoefficients, MarginalRegression, MarginalTable,
    MixtureMarginal, SiteSurfaces,
};
use crate::model::ModelGeometry;

/// Whether the data enter the posterior.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    #[default]
    Full,
    /// Constant likelihood: the chain targets the prior.
    PriorOnly,
}

/// Sampled parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Params {
    /// Knot variables, `K × T`.
    pub s: DMatrix<f64>,
    pub phi_knots: Vec<f64>,
    pub rho_knots: Vec<f64>,
    pub coef: MarginalCoefficients,
}

/// Data, geometry and prior: everything fixed during sampling.
#[derive(Clone, Debug)]
pub struct Model {
    pub data: Dataset,
    pub geo: ModelGeometry,
    pub prior: PriorSpec,
    pub mode: LikelihoodMode,
    observed: Vec<Vec<usize>>,
    /// Missingness pattern index of each replicate; patterns hold observed sites.
    pattern_of: Vec<usize>,
    patterns: Vec<Vec<usize>>,
}

/// Caches that depend on the hyperparameters only.
#[derive(Clone, Debug)]
pub struct Surfaces {
    pub phi: Vec<f64>,
    pub rho: Vec<f64>,
    pub tables: Vec<MarginalTable>,
    /// One factor per missingness pattern (`None` for an empty pattern).
    pub factors: Vec<Option<CovarianceFactor>>,
    pub margins: SiteSurfaces,
}

/// Per-replicate caches. Vectors have length `D`; unobserved entries are NaN.
#[derive(Clone, Debug, PartialEq)]
pub struct Replicate {
    pub r: Vec<f64>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub logjac: Vec<f64>,
    /// `log f_Y(y) - log f_X(x)`, the `R`-free part of `logjac`.
    pub base: Vec<f64>,
    pub ll: f64,
}

/// Proposal scales of every update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scales {
    /// `T × K`, replicate-major.
    pub s: Vec<AdaptiveScale>,
    pub phi: Vec<AdaptiveScale>,
    pub rho: Vec<AdaptiveScale>,
    pub margins: Vec<AdaptiveScale>,
}

impl Scales {
    pub fn new(k: usize, kr: usize, t: usize, coef: &MarginalCoefficients, init: &InitialScales) -> Self {
        Self {
            s: vec![AdaptiveScale::new(init.s, TARGET_SCALAR); k * t],
            phi: vec![AdaptiveScale::new(init.phi, TARGET_SCALAR); k],
            rho: vec![AdaptiveScale::new(init.rho, TARGET_SCALAR); kr],
            margins: MarginBlock::ALL
                .iter()
                .map(|&b| {
                    let target = if coef.block(b).len() > 1 { TARGET_BLOCK } else { TARGET_SCALAR };
                    AdaptiveScale::new(init.margin, target)
                })
                .collect(),
        }
    }

    pub fn all_mut(&mut self) -> impl Iterator<Item = &mut AdaptiveScale> {
        self.s.iter_mut().chain(self.phi.iter_mut()).chain(self.rho.iter_mut()).chain(self.margins.iter_mut())
    }

    pub fn block_index(b: MarginBlock) -> usize {
        MarginBlock::ALL.iter().position(|&x| x == b).unwrap_or(0)
    }
}

/// Starting proposal standard deviations on the transformed scales.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialScales {
    pub s: f64,
    pub phi: f64,
    pub rho: f64,
    pub margin: f64,
}

impl Default for InitialScales {
    fn default() -> Self {
        Self { s: 1.0, phi: 0.3, rho: 0.3, margin: 0.05 }
    }
}

/// Full sampler state.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub params: Params,
    pub surf: Surfaces,
    pub reps: Vec<Replicate>,
    pub scales: Scales,
}

impl Model {
    pub fn new(data: Dataset, geo: ModelGeometry, prior: PriorSpec, mode: LikelihoodMode) -> Result<Self> {
        prior.validate()?;
        if geo.n_sites() != data.n_sites() {
            return Err(Error::Parameter("geometry and data have different site counts".into()));
        }
        let observed: Vec<Vec<usize>> = (0..data.n_times()).map(|t| data.observed(t)).collect();
        let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
        let mut patterns = Vec::new();
        let pattern_of = observed
            .iter()
            .map(|o| {
                *index.entry(o.clone()).or_insert_with(|| {
                    patterns.push(o.clone());
                    patterns.len() - 1
                })
            })
            .collect();
        Ok(Self { data, geo, prior, mode, observed, pattern_of, patterns })
    }

    pub fn n_times(&self) -> usize {
        self.data.n_times()
    }

    pub fn observed(&self, t: usize) -> &[usize] {
        &self.observed[t]
    }

    pub fn n_patterns(&self) -> usize {
        self.patterns.len()
    }

    pub fn regression(&self, coef: &MarginalCoefficients) -> Result<MarginalRegression> {
        MarginalRegression::new(self.data.design.clone(), coef.clone())
    }

    /// Marginal tables for a φ surface (none are needed when the likelihood is off).
    pub fn tables(&self, phi: &[f64]) -> Result<Vec<MarginalTable>> {
        if self.mode == LikelihoodMode::PriorOnly {
            return Ok(Vec::new());
        }
        phi.iter()
            .zip(&self.geo.bar_gamma)
            .map(|(&p, &g)| MarginalTable::new(MixtureMarginal::new(p, g)?))
            .collect()
    }

    /// One factor per missingness pattern for a ρ surface.
    pub fn factors(&self, rho: &[f64]) -> Result<Vec<Option<CovarianceFactor>>> {
        if self.mode == LikelihoodMode::PriorOnly {
            return Ok(vec![None; self.patterns.len()]);
        }
        let full = covariance_matrix(&self.geo.sites, rho, self.geo.nu)?;
        self.patterns
            .iter()
            .map(|obs| {
                if obs.is_empty() {
                    Ok(None)
                } else if obs.len() == full.nrows() {
                    CovarianceFactor::new(full.clone()).map(Some)
                } else {
                    CovarianceFactor::new(full.select_rows(obs).select_columns(obs)).map(Some)
                }
            })
            .collect()
    }

    pub fn surfaces(&self, phi_knots: &[f64], rho_knots: &[f64], coef: &MarginalCoefficients) -> Result<Surfaces> {
        let phi = self.geo.phi_surface(phi_knots);
        let rho = self.geo.rho_surface(rho_knots);
        if phi.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Domain("φ surface outside (0, 1)".into()));
        }
        let tables = self.tables(&phi)?;
        let factors = self.factors(&rho)?;
        let margins = self.regression(coef)?.surfaces();
        Ok(Surfaces { phi, rho, tables, factors, margins })
    }

    pub fn gev(&self, margins: &SiteSurfaces, j: usize, t: usize) -> Result<GevParams> {
        margins.gev(j, self.data.design.time[t])
    }

    /// `(x, z, log|dz/dy|, base)` at one observed cell. `warm` seeds the quantile solver.
    pub fn site_terms(&self, y: f64, gev: &GevParams, table: &MarginalTable, r: f64, phi: f64, warm: Option<f64>) -> Result<SiteTerms> {
        if !gev.in_support(y) {
            return Err(Error::Domain(format!("observation {y} outside the GEV support")));
        }
        let (x, v) = table.quantile_values(gev_cdf(y, gev), gev_sf(y, gev), warm)?;
        let base = gev_ln_pdf(y, gev) - v.pdf.ln();
        let (z, lj) = latent_terms(x, base, r, phi)?;
        Ok(SiteTerms { x, z, logjac: lj, base })
    }

    /// Gaussian term plus Jacobian terms of replicate `t`.
    pub fn replicate_loglik(&self, t: usize, z: &[f64], logjac: &[f64], factors: &[Option<CovarianceFactor>]) -> f64 {
        if self.mode == LikelihoodMode::PriorOnly {
            return 0.0;
        }
        let obs = &self.observed[t];
        match &factors[self.pattern_of[t]] {
            None => 0.0,
            Some(f) => {
                let zo: Vec<f64> = obs.iter().map(|&j| z[j]).collect();
                f.log_density(&zo) + obs.iter().map(|&j| logjac[j]).sum::<f64>()
            }
        }
    }

    /// Log-likelihood of replicate `t` given its knot variables; `-∞` when an
    /// observation lies outside its GEV support.
    pub fn log_likelihood_replicate(&self, t: usize, s: &[f64], surf: &Surfaces) -> Result<f64> {
        for &j in &self.observed[t] {
            if !self.gev(&surf.margins, j, t)?.in_support(self.data.y[(j, t)]) {
                return Ok(f64::NEG_INFINITY);
            }
        }
        Ok(self.build_replicate(t, s, surf, None)?.ll)
    }

    /// `R` values of one replicate.
    pub fn r_column(&self, s: &[f64]) -> Vec<f64> {
        (0..self.geo.n_sites()).map(|j| self.geo.r_value(j, s)).collect()
    }

    /// Builds replicate `t` from its knot variables, warm-starting from `warm_x`.
    pub fn build_replicate(&self, t: usize, s: &[f64], surf: &Surfaces, warm_x: Option<&[f64]>) -> Result<Replicate> {
        let d = self.geo.n_sites();
        let r = self.r_column(s);
        let mut x = vec![f64::NAN; d];
        let mut z = vec![f64::NAN; d];
        let mut logjac = vec![f64::NAN; d];
        let mut base = vec![f64::NAN; d];
        if self.mode == LikelihoodMode::Full {
            for &j in &self.observed[t] {
                let gev = self.gev(&surf.margins, j, t)?;
                let warm = warm_x.map(|w| w[j]).filter(|v| v.is_finite());
                let st = self.site_terms(self.data.y[(j, t)], &gev, &surf.tables[j], r[j], surf.phi[j], warm)?;
                x[j] = st.x;
                z[j] = st.z;
                logjac[j] = st.logjac;
                base[j] = st.base;
            }
        }
        let ll = self.replicate_loglik(t, &z, &logjac, &surf.factors);
        Ok(Replicate { r, x, z, logjac, base, ll })
    }

    /// Rebuilds replicate `t` from stored `X` values without solving for them.
    pub fn replicate_from_x(&self, t: usize, s: &[f64], surf: &Surfaces, x_col: &[f64]) -> Result<Replicate> {
        let d = self.geo.n_sites();
        let r = self.r_column(s);
        let mut x = vec![f64::NAN; d];
        let mut z = vec![f64::NAN; d];
        let mut logjac = vec![f64::NAN; d];
        let mut base = vec![f64::NAN; d];
        if self.mode == LikelihoodMode::Full {
            for &j in &self.observed[t] {
                let gev = self.gev(&surf.margins, j, t)?;
                let xj = x_col[j];
                let b = gev_ln_pdf(self.data.y[(j, t)], &gev) - surf.tables[j].eval(xj).pdf.ln();
                let (zj, lj) = latent_terms(xj, b, r[j], surf.phi[j])?;
                x[j] = xj;
                z[j] = zj;
                logjac[j] = lj;
                base[j] = b;
            }
        }
        let ll = self.replicate_loglik(t, &z, &logjac, &surf.factors);
        Ok(Replicate { r, x, z, logjac, base, ll })
    }

    /// State rebuilt from parameters and stored `X`, reproducing the caches exactly.
    pub fn state_from_x(&self, params: Params, scales: Scales, x: &DMatrix<f64>) -> Result<ModelState> {
        self.validate_params(&params)?;
        if x.nrows() != self.geo.n_sites() || x.ncols() != self.n_times() {
            return Err(Error::Parameter("stored X has the wrong shape".into()));
        }
        let surf = self.surfaces(&params.phi_knots, &params.rho_knots, &params.coef)?;
        let reps = (0..self.n_times())
            .into_par_iter()
            .map(|t| {
                let col: Vec<f64> = params.s.column(t).iter().copied().collect();
                let xc: Vec<f64> = x.column(t).iter().copied().collect();
                self.replicate_from_x(t, &col, &surf, &xc)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelState { params, surf, reps, scales })
    }

    /// Builds every replicate in parallel.
    pub fn build_replicates(&self, s: &DMatrix<f64>, surf: &Surfaces, warm_x: Option<&DMatrix<f64>>) -> Result<Vec<Replicate>> {
        (0..self.n_times())
            .into_par_iter()
            .map(|t| {
                let col: Vec<f64> = s.column(t).iter().copied().collect();
                let warm: Option<Vec<f64>> = warm_x.map(|w| w.column(t).iter().copied().collect());
                self.build_replicate(t, &col, surf, warm.as_deref())
            })
            .collect()
    }

    pub fn log_prior(&self, p: &Params) -> f64 {
        let pr = &self.prior;
        let mut lp = 0.0;
        for k in 0..p.s.nrows() {
            for t in 0..p.s.ncols() {
                lp += pr.ln_s(p.s[(k, t)], self.geo.gammas[k]);
            }
        }
        lp += p.phi_knots.iter().map(|&v| pr.ln_phi(v)).sum::<f64>();
        lp += p.rho_knots.iter().map(|&v| pr.ln_rho(v)).sum::<f64>();
        lp + pr.ln_coefs(&p.coef)
    }

    pub fn validate_params(&self, p: &Params) -> Result<()> {
        let (k, kr, t) = (self.geo.n_knots(), self.geo.n_rho_knots(), self.n_times());
        if p.s.nrows() != k || p.s.ncols() != t || p.phi_knots.len() != k || p.rho_knots.len() != kr {
            return Err(Error::Parameter("parameter dimensions do not match the model".into()));
        }
        if p.s.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter("knot variables must be positive".into()));
        }
        if p.phi_knots.iter().any(|v| !(*v > 0.0 && *v < 1.0)) {
            return Err(Error::Parameter("knot φ must lie in (0, 1)".into()));
        }
        if p.rho_knots.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Parameter("knot ρ must be positive".into()));
        }
        Ok(())
    }

    /// State with all caches built; `warm_x` seeds the quantile solves.
    pub fn state(&self, params: Params, scales: Scales, warm_x: Option<&DMatrix<f64>>) -> Result<ModelState> {
        self.validate_params(&params)?;
        let surf = self.surfaces(&params.phi_knots, &params.rho_knots, &params.coef)?;
        let reps = self.build_replicates(&params.s, &surf, warm_x)?;
        Ok(ModelState { params, surf, reps, scales })
    }

    /// Sum of the cached replicate terms plus the log prior.
    pub fn log_posterior(&self, state: &ModelState) -> f64 {
        state.reps.iter().map(|r| r.ll).sum::<f64>() + self.log_prior(&state.params)
    }

    /// Log posterior recomputed from the parameters alone, without caches or warm starts.
    pub fn log_posterior_fresh(&self, params: &Params) -> Result<f64> {
        let surf = self.surfaces(&params.phi_knots, &params.rho_knots, &params.coef)?;
        let reps = self.build_replicates(&params.s, &surf, None)?;
        Ok(reps.iter().map(|r| r.ll).sum::<f64>() + self.log_prior(params))
    }
}

impl ModelState {
    /// `X` as a `D × T` matrix (NaN where missing).
    pub fn x_matrix(&self) -> DMatrix<f64> {
        let d = self.reps.first().map_or(0, |r| r.x.len());
        DMatrix::from_fn(d, self.reps.len(), |j, t| self.reps[t].x[j])
    }

    pub fn z_matrix(&self) -> DMatrix<f64> {
        let d = self.reps.first().map_or(0, |r| r.z.len());
        DMatrix::from_fn(d, self.reps.len(), |j, t| self.reps[t].z[j])
    }
}

/// Transforms of one observed cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SiteTerms {
    pub x: f64,
    pub z: f64,
    pub logjac: f64,
    pub base: f64,
}

/// `z` and the log Jacobian at one cell from `x`, the cached base term and `r`.
pub fn latent_terms(x: f64, base: f64, r: f64, phi: f64) -> Result<(f64, f64)> {
    let z = x_to_z(x, r, phi)?;
    let lj = log_jacobian_from_base(base, x, z, r, phi);
    if !(x.is_finite() && z.is_finite() && lj.is_finite()) {
        return Err(Error::Numeric(format!("non-finite transform (x = {x}, z = {z}, r = {r})")));
    }
    Ok((z, lj))
}

/// `|dz/dy|` at one cell: `f_Y(y) / (f_X(x) φ(z) (x/r^φ + 1)² r^φ)`.
pub fn jacobian_diag(y: f64, x: f64, z: f64, r: f64, phi: f64, bar_gamma: f64, gev: &GevParams) -> Result<f64> {
    let table = MarginalTable::new(MixtureMarginal::new(phi, bar_gamma)?)?;
    let v = table.eval(x);
    if !(v.pdf > 0.0) {
        return Err(Error::Numeric(format!("marginal density vanishes at x = {x}")));
    }
    let j = log_jacobian(y, x, z, r, phi, gev, &v).exp();
    if !(j > 0.0 && j.is_finite()) {
        return Err(Error::Numeric(format!("degenerate Jacobian at y = {y}")));
    }
    Ok(j)
}
