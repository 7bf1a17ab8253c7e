//! Marginal laws: the scale-mixture law of `X`, the Pareto link, GEV margins
//! with their regression surfaces, and the copula chain `Y ↔ X ↔ Z`.

pub mod copula;
pub mod gev;
pub mod mixture;
pub mod regression;
pub mod table;

pub use copula::{copula_x_to_y, copula_y_to_x, log_jacobian, log_jacobian_from_base, x_to_y, x_to_z, y_to_x, z_to_x};
pub use gev::{gev_cdf, gev_ln_pdf, gev_pdf, gev_quantile, gev_quantile_pq, gev_sf, GevParams};
pub use mixture::{
    levy_fractional_moment, link_g, link_g_inverse, marginal_tail_asymptote, marginal_tail_asymptote_unit_shift, pareto_moment, x_cdf, x_density,
    x_quantile, x_quantile_upper, x_survival, MixtureMarginal,
};
pub use regression::{MarginBlock, MarginalCoefficients, MarginalDesign, MarginalRegression, SiteSurfaces};
pub use table::MarginalTable;

use crate::error::{Error, Result};

/// Survival, CDF and density of `X` at one point.
#[derive(Clone, Copy, Debug)]
pub struct MarginalValues {
    pub sf: f64,
    pub cdf: f64,
    pub pdf: f64,
}

/// Quantile of a positive continuous law given both the lower-tail
/// probability `p` and the upper-tail probability `q = 1 - p`.
///
/// Safeguarded Newton on `log x` against `log F` (when `p ≤ 1/2`) or
/// `log S` (otherwise), so both tails are solved without cancellation.
pub(crate) fn solve_quantile<E>(eval: E, p: f64, q: f64, guess: f64) -> Result<f64>
where
    E: Fn(f64) -> Result<MarginalValues>,
{
    solve_quantile_values(eval, p, q, guess).map(|(x, _)| x)
}

/// As [`solve_quantile`], also returning the marginal values when the root was
/// accepted at an evaluated point.
pub(crate) fn solve_quantile_values<E>(eval: E, p: f64, q: f64, guess: f64) -> Result<(f64, Option<MarginalValues>)>
where
    E: Fn(f64) -> Result<MarginalValues>,
{
    if !(p > 0.0 && q > 0.0) {
        return Err(Error::Domain(format!("quantile level p = {p}, q = {q} outside (0, 1)")));
    }
    let use_lower = p <= 0.5;
    let target = if use_lower { p.ln() } else { q.ln() };
    let resid = |v: &MarginalValues, x: f64| -> (f64, f64) {
        // Residual and its derivative with respect to log x.
        if use_lower {
            (v.cdf.ln() - target, x * v.pdf / v.cdf)
        } else {
            (v.sf.ln() - target, -x * v.pdf / v.sf)
        }
    };
    let mut u = if guess > 0.0 && guess.is_finite() { guess.ln() } else { 0.0 };
    // Bracket in log x: residual is increasing in u for the CDF side and
    // decreasing for the survival side; normalize to increasing.
    let sign = if use_lower { 1.0 } else { -1.0 };
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for _ in 0..200 {
        let x = u.exp();
        let v = eval(x)?;
        let (g, dg) = resid(&v, x);
        if !g.is_finite() {
            // Left the representable range; pull back toward the bracket.
            if (use_lower && v.cdf <= 0.0) || (!use_lower && v.sf >= 1.0) {
                lo = u;
            } else {
                hi = u;
            }
            u = step_into(lo, hi, u);
            continue;
        }
        if g.abs() < 1e-13 {
            return Ok((x, Some(v)));
        }
        if sign * g < 0.0 {
            lo = lo.max(u);
        } else {
            hi = hi.min(u);
        }
        let mut next = u - g / dg;
        if !next.is_finite() || (next - u).abs() > 8.0 {
            next = u - 8.0f64.copysign(sign * g);
        }
        if next <= lo || next >= hi {
            next = step_into(lo, hi, u);
        }
        if (next - u).abs() <= 1e-15 * u.abs().max(1.0) {
            return Ok((next.exp(), None));
        }
        u = next;
    }
    Err(Error::Numeric(format!("quantile solve did not converge (p = {p:e}, q = {q:e}, bracket [{lo}, {hi}])")))
}

fn step_into(lo: f64, hi: f64, u: f64) -> f64 {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => 0.5 * (lo + hi),
        (true, false) => lo.max(u) + 4.0,
        (false, true) => hi.min(u) - 4.0,
        (false, false) => u,
    }
}
