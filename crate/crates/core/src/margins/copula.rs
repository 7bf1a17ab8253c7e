//! The transform chain `Y ↔ X ↔ Z` linking GEV observations to the latent
//! Gaussian field, and its log Jacobian.

use super::gev::{gev_cdf, gev_ln_pdf, gev_quantile_pq, gev_sf, GevParams};
use super::mixture::{link_g, link_g_inverse, x_cdf, x_quantile_upper, x_survival, MixtureMarginal};
use super::table::MarginalTable;
use super::MarginalValues;
use crate::error::{Error, Result};
use crate::special::ln_norm_pdf;

/// `x = F_X⁻¹(F_Y(y))` through the fast table, optionally warm-started.
pub fn y_to_x(y: f64, gev: &GevParams, table: &MarginalTable, warm: Option<f64>) -> Result<f64> {
    if !gev.in_support(y) {
        return Err(Error::Domain(format!("observation {y} outside the GEV support")));
    }
    table.quantile_pq(gev_cdf(y, gev), gev_sf(y, gev), warm)
}

/// `y = F_Y⁻¹(F_X(x))` through the fast table.
pub fn x_to_y(x: f64, gev: &GevParams, table: &MarginalTable) -> Result<f64> {
    let v = table.eval(x);
    gev_quantile_pq(v.cdf, v.sf, gev)
}

/// `x = F_X⁻¹(F_Y(y))` with the adaptive-quadrature marginal.
pub fn copula_y_to_x(y: f64, gev: &GevParams, m: &MixtureMarginal) -> Result<f64> {
    if !gev.in_support(y) {
        return Err(Error::Domain(format!("observation {y} outside the GEV support")));
    }
    let (p, q) = (gev_cdf(y, gev), gev_sf(y, gev));
    if p <= 0.5 {
        crate::margins::mixture::x_quantile(p, m)
    } else {
        x_quantile_upper(q, m)
    }
}

/// `y = F_Y⁻¹(F_X(x))` with the adaptive-quadrature marginal.
pub fn copula_x_to_y(x: f64, gev: &GevParams, m: &MixtureMarginal) -> Result<f64> {
    gev_quantile_pq(x_cdf(x, m)?, x_survival(x, m)?, gev)
}

/// `z = Φ⁻¹(1 - 1/(x/r^φ + 1))`.
pub fn x_to_z(x: f64, r: f64, phi: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::Domain(format!("scaling value {r} must be positive")));
    }
    link_g_inverse(x / r.powf(phi), 0.0)
}

/// `x = r^φ g(z)`.
pub fn z_to_x(z: f64, r: f64, phi: f64) -> f64 {
    r.powf(phi) * link_g(z, 0.0)
}

/// `log |dz/dy|` at one site and replicate, given the marginal values of `X` at `x`.
pub fn log_jacobian(y: f64, x: f64, z: f64, r: f64, phi: f64, gev: &GevParams, xv: &MarginalValues) -> f64 {
    log_jacobian_from_base(gev_ln_pdf(y, gev) - xv.pdf.ln(), x, z, r, phi)
}

/// Log Jacobian given `base = log f_Y(y) - log f_X(x)`, the part that does not
/// depend on `r`.
pub fn log_jacobian_from_base(base: f64, x: f64, z: f64, r: f64, phi: f64) -> f64 {
    let w = x / r.powf(phi);
    base - ln_norm_pdf(z) - 2.0 * w.ln_1p() - phi * r.ln()
}
