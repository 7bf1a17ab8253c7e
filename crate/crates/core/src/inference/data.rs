//! Observations for inference: a `D × T` matrix with a missing mask, site
//! coordinates and the marginal design.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::kernel::Point;
use crate::margins::MarginalDesign;
use crate::simulate::SimulatedDataset;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub sites: Vec<Point>,
    /// Observations, `NaN` where missing.
    pub y: DMatrix<f64>,
    pub design: MarginalDesign,
}

impl Dataset {
    pub fn new(sites: Vec<Point>, y: DMatrix<f64>, design: MarginalDesign) -> Result<Self> {
        if y.nrows() != sites.len() {
            return Err(Error::Parameter(format!("{} observation rows for {} sites", y.nrows(), sites.len())));
        }
        if design.n_sites() != sites.len() || design.n_times() != y.ncols() {
            return Err(Error::Parameter("design dimensions do not match the observations".into()));
        }
        if y.iter().any(|v| v.is_infinite()) {
            return Err(Error::Domain("observations must be finite or missing".into()));
        }
        design.validate()?;
        Ok(Self { sites, y, design })
    }

    /// Intercept-only margins for a simulated dataset.
    pub fn from_simulation(ds: &SimulatedDataset) -> Result<Self> {
        let design = MarginalDesign::intercept_only(ds.y.nrows(), ds.y.ncols());
        Self::new(ds.truth.sites.clone(), ds.y.clone(), design)
    }

    pub fn n_sites(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_times(&self) -> usize {
        self.y.ncols()
    }

    pub fn is_observed(&self, j: usize, t: usize) -> bool {
        !self.y[(j, t)].is_nan()
    }

    /// Observed site indices of replicate `t`.
    pub fn observed(&self, t: usize) -> Vec<usize> {
        (0..self.n_sites()).filter(|&j| self.is_observed(j, t)).collect()
    }

    /// Copy with the given entries set missing.
    pub fn with_missing(&self, cells: &[(usize, usize)]) -> Self {
        let mut out = self.clone();
        for &(j, t) in cells {
            out.y[(j, t)] = f64::NAN;
        }
        out
    }
}
