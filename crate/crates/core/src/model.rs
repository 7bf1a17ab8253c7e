//! Static geometry of the model: sites, knots, kernel weights, smoothing
//! weights for the φ and ρ surfaces, and the per-site Stable scale γ̄.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{apply_weights, gaussian_weights, wendland_weights, KernelConfig, KnotGrid, Point, WeightMatrix};
use crate::stable::mixture_scale;

/// Stable index of the knot variables.
pub const ALPHA: f64 = 0.5;

/// Everything about the model that does not change during sampling.
#[derive(Clone, Debug)]
pub struct ModelGeometry {
    pub sites: Vec<Point>,
    pub knots: KnotGrid,
    pub rho_knots: KnotGrid,
    pub kernel: KernelConfig,
    pub gammas: Vec<f64>,
    pub nu: f64,
    pub wendland: WeightMatrix,
    pub gauss_phi: Vec<f64>,
    pub gauss_rho: Vec<f64>,
    pub bar_gamma: Vec<f64>,
    /// For each knot, the sites with positive Wendland weight.
    pub knot_sites: Vec<Vec<usize>>,
}

/// Serializable description from which a [`ModelGeometry`] is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometrySpec {
    pub knots: KnotGrid,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_knots: Option<KnotGrid>,
    pub kernel: KernelConfig,
    pub gammas: Vec<f64>,
    pub nu: f64,
}

impl ModelGeometry {
    pub fn new(sites: Vec<Point>, spec: &GeometrySpec) -> Result<Self> {
        let knots = spec.knots.clone();
        let rho_knots = spec.rho_knots.clone().unwrap_or_else(|| knots.clone());
        if spec.gammas.len() != knots.len() {
            return Err(Error::Parameter(format!("{} gammas for {} knots", spec.gammas.len(), knots.len())));
        }
        if !(spec.nu > 0.0) {
            return Err(Error::Parameter("Matérn smoothness must be positive".into()));
        }
        if sites.is_empty() {
            return Err(Error::Parameter("no sites".into()));
        }
        let wendland = wendland_weights(&sites, &knots, &spec.kernel)?;
        let gauss_phi = gaussian_weights(&sites, &knots, spec.kernel.bandwidth_phi)?;
        let gauss_rho = gaussian_weights(&sites, &rho_knots, spec.kernel.bandwidth_rho)?;
        let bar_gamma = (0..sites.len())
            .map(|j| mixture_scale(wendland.row(j), &spec.gammas, ALPHA))
            .collect::<Result<Vec<_>>>()?;
        let knot_sites = (0..knots.len()).map(|k| wendland.sites_of_knot(k)).collect();
        Ok(Self {
            sites,
            knots,
            rho_knots,
            kernel: spec.kernel,
            gammas: spec.gammas.clone(),
            nu: spec.nu,
            wendland,
            gauss_phi,
            gauss_rho,
            bar_gamma,
            knot_sites,
        })
    }

    pub fn spec(&self) -> GeometrySpec {
        GeometrySpec {
            knots: self.knots.clone(),
            rho_knots: (self.rho_knots != self.knots).then(|| self.rho_knots.clone()),
            kernel: self.kernel,
            gammas: self.gammas.clone(),
            nu: self.nu,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    pub fn n_knots(&self) -> usize {
        self.knots.len()
    }

    pub fn n_rho_knots(&self) -> usize {
        self.rho_knots.len()
    }

    pub fn phi_surface(&self, phi_knots: &[f64]) -> Vec<f64> {
        apply_weights(&self.gauss_phi, phi_knots)
    }

    pub fn rho_surface(&self, rho_knots: &[f64]) -> Vec<f64> {
        apply_weights(&self.gauss_rho, rho_knots)
    }

    /// `R(s_j) = Σ_k w_kj S_k` for one replicate's knot variables.
    pub fn r_value(&self, j: usize, s: &[f64]) -> f64 {
        self.wendland.active(j).iter().map(|&k| self.wendland.get(j, k) * s[k]).sum()
    }

    /// Same geometry at a different set of sites.
    pub fn with_sites(&self, sites: Vec<Point>) -> Result<Self> {
        Self::new(sites, &self.spec())
    }
}
