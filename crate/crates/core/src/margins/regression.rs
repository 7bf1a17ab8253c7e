//! Linear regression surfaces for the GEV parameters:
//! `μ_t(s) = μ₀(s) + μ₁(s)·t`, `log σ(s)` and `ξ(s)` linear in site covariates.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::gev::GevParams;
use crate::error::{Error, Result};

/// Parameter block of the marginal model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginBlock {
    Mu0,
    Mu1,
    LogSigma,
    Xi,
}

impl MarginBlock {
    pub const ALL: [MarginBlock; 4] = [MarginBlock::Mu0, MarginBlock::Mu1, MarginBlock::LogSigma, MarginBlock::Xi];

    pub fn name(&self) -> &'static str {
        match self {
            MarginBlock::Mu0 => "mu0",
            MarginBlock::Mu1 => "mu1",
            MarginBlock::LogSigma => "log_sigma",
            MarginBlock::Xi => "xi",
        }
    }
}

/// Site design matrices (sites × covariates) and the time covariate per replicate.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalDesign {
    pub mu0: DMatrix<f64>,
    pub mu1: DMatrix<f64>,
    pub log_sigma: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub time: Vec<f64>,
}

impl MarginalDesign {
    /// Intercept-only surfaces and no time trend.
    pub fn intercept_only(n_sites: usize, n_times: usize) -> Self {
        let one = DMatrix::from_element(n_sites, 1, 1.0);
        Self {
            mu0: one.clone(),
            mu1: DMatrix::zeros(n_sites, 0),
            log_sigma: one.clone(),
            xi: one,
            time: vec![0.0; n_times],
        }
    }

    pub fn n_sites(&self) -> usize {
        self.mu0.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.time.len()
    }

    pub fn block(&self, b: MarginBlock) -> &DMatrix<f64> {
        match b {
            MarginBlock::Mu0 => &self.mu0,
            MarginBlock::Mu1 => &self.mu1,
            MarginBlock::LogSigma => &self.log_sigma,
            MarginBlock::Xi => &self.xi,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.n_sites();
        for b in MarginBlock::ALL {
            if self.block(b).nrows() != d {
                return Err(Error::Parameter(format!("design block {} has wrong row count", b.name())));
            }
            if self.block(b).iter().any(|v| !v.is_finite()) {
                return Err(Error::Parameter(format!("design block {} has non-finite entries", b.name())));
            }
        }
        if self.mu0.ncols() == 0 || self.log_sigma.ncols() == 0 || self.xi.ncols() == 0 {
            return Err(Error::Parameter("mu0, log_sigma and xi need at least one covariate".into()));
        }
        Ok(())
    }
}

/// Regression coefficients for each block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarginalCoefficients {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub xi: Vec<f64>,
}

impl MarginalCoefficients {
    pub fn block(&self, b: MarginBlock) -> &Vec<f64> {
        match b {
            MarginBlock::Mu0 => &self.mu0,
            MarginBlock::Mu1 => &self.mu1,
            MarginBlock::LogSigma => &self.log_sigma,
            MarginBlock::Xi => &self.xi,
        }
    }

    pub fn block_mut(&mut self, b: MarginBlock) -> &mut Vec<f64> {
        match b {
            MarginBlock::Mu0 => &mut self.mu0,
            MarginBlock::Mu1 => &mut self.mu1,
            MarginBlock::LogSigma => &mut self.log_sigma,
            MarginBlock::Xi => &mut self.xi,
        }
    }
}

/// Site-level GEV surfaces implied by a design and coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct SiteSurfaces {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub sigma: Vec<f64>,
    pub xi: Vec<f64>,
}

impl SiteSurfaces {
    /// GEV parameters at site `j` for time covariate value `time`.
    pub fn gev(&self, j: usize, time: f64) -> Result<GevParams> {
        GevParams::new(self.mu0[j] + self.mu1[j] * time, self.sigma[j], self.xi[j])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MarginalRegression {
    pub design: MarginalDesign,
    pub coef: MarginalCoefficients,
}

fn mat_vec(m: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|k| m[(i, k)] * b[k]).sum()).collect()
}

impl MarginalRegression {
    pub fn new(design: MarginalDesign, coef: MarginalCoefficients) -> Result<Self> {
        design.validate()?;
        for b in MarginBlock::ALL {
            if design.block(b).ncols() != coef.block(b).len() {
                return Err(Error::Parameter(format!(
                    "block {}: {} covariates but {} coefficients",
                    b.name(),
                    design.block(b).ncols(),
                    coef.block(b).len()
                )));
            }
        }
        let r = Self { design, coef };
        if r.surfaces().sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Parameter("implied GEV scale is not positive and finite".into()));
        }
        Ok(r)
    }

    /// Surface values of block `b` at every site.
    pub fn block_surface(&self, b: MarginBlock) -> Vec<f64> {
        mat_vec(self.design.block(b), self.coef.block(b))
    }

    pub fn surfaces(&self) -> SiteSurfaces {
        let d = self.design.n_sites();
        let mu1 = if self.design.mu1.ncols() == 0 { vec![0.0; d] } else { self.block_surface(MarginBlock::Mu1) };
        SiteSurfaces {
            mu0: self.block_surface(MarginBlock::Mu0),
            mu1,
            sigma: self.block_surface(MarginBlock::LogSigma).into_iter().map(f64::exp).collect(),
            xi: self.block_surface(MarginBlock::Xi),
        }
    }

    /// GEV parameters at site `j`, replicate `t`.
    pub fn params(&self, j: usize, t: usize) -> Result<GevParams> {
        let s = self.surfaces();
        s.gev(j, self.design.time[t])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surfaces_follow_linear_forms() {
        let mut design = MarginalDesign::intercept_only(3, 2);
        design.mu0 = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0]);
        design.mu1 = DMatrix::from_element(3, 1, 1.0);
        design.time = vec![-1.0, 2.0];
        let coef = MarginalCoefficients { mu0: vec![1.0, 0.5], mu1: vec![0.1], log_sigma: vec![0.0], xi: vec![0.2] };
        let r = MarginalRegression::new(design, coef).unwrap();
        let p = r.params(2, 1).unwrap();
        assert!((p.mu - (2.0 + 0.2)).abs() < 1e-15);
        assert_eq!(p.sigma, 1.0);
        assert_eq!(p.xi, 0.2);
        let bad = MarginalCoefficients { mu0: vec![1.0], mu1: vec![], log_sigma: vec![0.0], xi: vec![0.2] };
        assert!(MarginalRegression::new(MarginalDesign::intercept_only(3, 2), bad.clone()).is_ok());
        assert!(MarginalRegression::new(MarginalDesign::intercept_only(3, 2), MarginalCoefficients { mu0: vec![], ..bad })
            .is_err());
    }
}
