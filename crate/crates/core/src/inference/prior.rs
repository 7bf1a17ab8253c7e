//! Prior distributions of the hierarchical model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::MarginalCoefficients;
use crate::special::{ln_beta_pdf, ln_half_normal_pdf, LN_SQRT_2PI};
use crate::stable::levy_ln_density;

/// `φ_k ~ Beta(a, b)`, `ρ_k ~ halfNormal(0, s)`, `S_kt ~ Lévy(γ_k, 0)`,
/// marginal coefficients `~ N(0, τ²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub phi_a: f64,
    pub phi_b: f64,
    pub rho_scale: f64,
    pub coef_sd: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { phi_a: 5.0, phi_b: 5.0, rho_scale: 2.0, coef_sd: 100.0 }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if [self.phi_a, self.phi_b, self.rho_scale, self.coef_sd].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("prior hyperparameters must be positive and finite".into()));
        }
        Ok(())
    }

    pub fn ln_phi(&self, phi: f64) -> f64 {
        ln_beta_pdf(phi, self.phi_a, self.phi_b)
    }

    pub fn ln_rho(&self, rho: f64) -> f64 {
        if rho <= 0.0 {
            return f64::NEG_INFINITY;
        }
        ln_half_normal_pdf(rho, self.rho_scale)
    }

    pub fn ln_s(&self, s: f64, gamma: f64) -> f64 {
        levy_ln_density(s, gamma, 0.0)
    }

    pub fn ln_coef(&self, c: f64) -> f64 {
        let u = c / self.coef_sd;
        -0.5 * u * u - self.coef_sd.ln() - LN_SQRT_2PI
    }

    pub fn ln_coefs(&self, c: &MarginalCoefficients) -> f64 {
        [&c.mu0, &c.mu1, &c.log_sigma, &c.xi].iter().flat_map(|v| v.iter()).map(|&x| self.ln_coef(x)).sum()
    }
}
