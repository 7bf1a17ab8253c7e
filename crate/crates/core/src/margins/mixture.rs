//! Univariate law of `X = R^φ W` with `R ~ Lévy(γ̄)` and `W` type-II Pareto.
//!
//! With `R = γ̄/(2t²)`, `t` having density `2e^{-t²}/√π` on `(0, ∞)`, the
//! survival function becomes
//! `S(x) = (2/√π) ∫₀^∞ e^{-t²} / (1 + x c t^{2φ}) dt`, `c = (2/γ̄)^φ`,
//! which is integrated in `v = log t` by adaptive Gauss–Kronrod with a
//! break at the point where `x c t^{2φ} = 1`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{solve_quantile, MarginalValues};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_with_breaks, QuadOptions};
use crate::special::{ln_gamma, norm_cdf, norm_sf, stable_tail_constant};
#[cfg(test)]
use crate::special::gamma;

const FRAC_2_SQRT_PI: f64 = std::f64::consts::FRAC_2_SQRT_PI;
const V_HI: f64 = 2.6;
const V_DEPTH: f64 = 40.0;

/// Parameters of the marginal law of `X` at one site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureMarginal {
    pub phi: f64,
    pub bar_gamma: f64,
    pub alpha: f64,
    pub delta: f64,
}

impl MixtureMarginal {
    /// α = 1/2, δ = 0.
    pub fn new(phi: f64, bar_gamma: f64) -> Result<Self> {
        let m = Self { phi, bar_gamma, alpha: 0.5, delta: 0.0 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::Parameter(format!("phi {} must be positive", self.phi)));
        }
        if !(self.bar_gamma > 0.0 && self.bar_gamma.is_finite()) {
            return Err(Error::Parameter(format!("bar_gamma {} must be positive", self.bar_gamma)));
        }
        if self.alpha != 0.5 {
            return Err(Error::Parameter("closed-form marginal paths require alpha = 1/2".into()));
        }
        if self.delta != 0.0 {
            return Err(Error::Parameter("the marginal integral assumes delta = 0".into()));
        }
        Ok(())
    }

    /// `c = (2/γ̄)^φ`.
    pub(crate) fn c(&self) -> f64 {
        (2.0 / self.bar_gamma).powf(self.phi)
    }
}

/// Pareto link `w = δ + u/(1-u)`, `u = Φ(z)`.
pub fn link_g(z: f64, delta: f64) -> f64 {
    // u/(1-u) = Φ(z)/Φ(-z), each side computed without cancellation.
    delta + norm_cdf(z) / norm_sf(z)
}

/// Inverse link `z = Φ⁻¹(1 - 1/(w - δ + 1))`.
pub fn link_g_inverse(w: f64, delta: f64) -> Result<f64> {
    if !(w > delta) {
        return Err(Error::Domain(format!("link inverse needs w > delta (w = {w}, delta = {delta})")));
    }
    let e = w - delta;
    if e.is_infinite() {
        return Err(Error::Domain("link inverse of infinite w".into()));
    }
    // Upper-tail probability 1/(e+1) and lower-tail e/(e+1), whichever is smaller.
    Ok(if e >= 1.0 {
        crate::special::norm_quantile_upper(1.0 / (e + 1.0))
    } else {
        crate::special::norm_quantile(e / (e + 1.0))
    })
}

/// Type-II Pareto CDF `1 - 1/(1 + w - δ)`.
pub fn pareto_cdf(w: f64, delta: f64) -> f64 {
    if w <= delta {
        0.0
    } else {
        let e = w - delta;
        e / (1.0 + e)
    }
}

fn quad_opts() -> QuadOptions {
    QuadOptions { epsabs: 1e-300, epsrel: 1e-12, max_intervals: 4000 }
}

/// Integration limits and break point in `v = log t` for argument `x`.
fn v_range(x: f64, m: &MixtureMarginal) -> (f64, f64, Vec<f64>) {
    if x <= 0.0 {
        return (-V_DEPTH, V_HI, vec![]);
    }
    let v_star = -(x.ln() + m.c().ln()) / (2.0 * m.phi);
    let lo = v_star.min(0.0) - V_DEPTH;
    let breaks = if v_star > lo && v_star < V_HI { vec![v_star] } else { vec![] };
    (lo, V_HI, breaks)
}

fn check_x(x: f64, m: &MixtureMarginal) -> Result<()> {
    m.validate()?;
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("x = {x} outside the support [0, ∞)")));
    }
    Ok(())
}

/// `P(X > x)`.
pub fn x_survival(x: f64, m: &MixtureMarginal) -> Result<f64> {
    check_x(x, m)?;
    if x == 0.0 {
        return Ok(1.0);
    }
    if x.is_infinite() {
        return Ok(0.0);
    }
    let (c, phi) = (m.c(), m.phi);
    let (lo, hi, br) = v_range(x, m);
    let r = integrate_with_breaks(
        |v: f64| {
            let a = c * (2.0 * phi * v).exp();
            (v - (2.0 * v).exp()).exp() / (1.0 + x * a)
        },
        lo,
        hi,
        &br,
        quad_opts(),
    )?;
    Ok(FRAC_2_SQRT_PI * r.value)
}

/// `P(X ≤ x)`, integrated directly so small values keep relative accuracy.
pub fn x_cdf(x: f64, m: &MixtureMarginal) -> Result<f64> {
    check_x(x, m)?;
    if x == 0.0 {
        return Ok(0.0);
    }
    if x.is_infinite() {
        return Ok(1.0);
    }
    let (c, phi) = (m.c(), m.phi);
    let (lo, hi, br) = v_range(x, m);
    let r = integrate_with_breaks(
        |v: f64| {
            let xa = x * c * (2.0 * phi * v).exp();
            (v - (2.0 * v).exp()).exp() * xa / (1.0 + xa)
        },
        lo,
        hi,
        &br,
        quad_opts(),
    )?;
    Ok(FRAC_2_SQRT_PI * r.value)
}

/// Density `-dS/dx`.
pub fn x_density(x: f64, m: &MixtureMarginal) -> Result<f64> {
    check_x(x, m)?;
    if x.is_infinite() {
        return Ok(0.0);
    }
    let (c, phi) = (m.c(), m.phi);
    let (lo, hi, br) = v_range(x, m);
    let r = integrate_with_breaks(
        |v: f64| {
            let a = c * (2.0 * phi * v).exp();
            let d = 1.0 / (1.0 + x * a);
            (v - (2.0 * v).exp()).exp() * a * d * d
        },
        lo,
        hi,
        &br,
        quad_opts(),
    )?;
    Ok(FRAC_2_SQRT_PI * r.value)
}

fn reference_values(x: f64, m: &MixtureMarginal) -> Result<MarginalValues> {
    Ok(MarginalValues { sf: x_survival(x, m)?, cdf: x_cdf(x, m)?, pdf: x_density(x, m)? })
}

/// Starting point for quantile searches: median of `R^φ` times the Pareto quantile.
pub(crate) fn quantile_guess(p: f64, q: f64, m: &MixtureMarginal) -> f64 {
    // Median of N²/2 is 0.2274682...
    let r_med = m.bar_gamma / (2.0 * 0.227_468_211_559_786_2);
    r_med.powf(m.phi) * (p / q)
}

/// Quantile `F⁻¹(p)`.
pub fn x_quantile(p: f64, m: &MixtureMarginal) -> Result<f64> {
    m.validate()?;
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("probability {p} outside (0, 1)")));
    }
    let q = 1.0 - p;
    solve_quantile(|x| reference_values(x, m), p, q, quantile_guess(p, q, m))
}

/// Quantile at upper-tail probability `q`, i.e. `S⁻¹(q)`.
pub fn x_quantile_upper(q: f64, m: &MixtureMarginal) -> Result<f64> {
    m.validate()?;
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::Domain(format!("tail probability {q} outside (0, 1)")));
    }
    let p = 1.0 - q;
    solve_quantile(|x| reference_values(x, m), p, q, quantile_guess(p, q, m))
}

/// `E(W^β)` for `W = δ + U/(1-U)`; equals `πβ/sin(πβ)` at δ = 0 and `1/(1-β)` at δ = 1.
pub fn pareto_moment(beta: f64, delta: f64) -> Result<f64> {
    if !(beta >= 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("Pareto moment of order {beta} is infinite or undefined")));
    }
    if beta == 0.0 {
        return Ok(1.0);
    }
    if delta == 0.0 {
        return Ok(PI * beta / (PI * beta).sin());
    }
    // E(W^β) = ∫₀^∞ (δ + p)^β (1 + p)^{-2} dp, in log p.
    let opts = QuadOptions { epsabs: 0.0, epsrel: 1e-12, max_intervals: 4000 };
    let tail = 40.0 / (1.0 - beta);
    let r = integrate(
        |s: f64| {
            let p = s.exp();
            (delta + p).powf(beta) * p / (1.0 + p).powi(2)
        },
        -60.0,
        tail,
        opts,
    )?;
    Ok(r.value)
}

/// Leading-order tail of `P(X > x)` as `x → ∞`.
///
/// * `φ < α`: `E(R^φ) x^{-1}`
/// * `φ = α`: `2 C_α γ̄^α x^{-1} log x`
/// * `φ > α`: `2 C_α γ̄^α E(W^{α/φ}) x^{-α/φ}`; at δ = 1 the Pareto moment
///   is `1/(1 - α/φ)`, at δ = 0 it is `Γ(1 + α/φ) Γ(1 - α/φ)`.
pub fn marginal_tail_asymptote(x: f64, m: &MixtureMarginal) -> f64 {
    let (a, phi, g) = (m.alpha, m.phi, m.bar_gamma);
    let c_tail = 2.0 * stable_tail_constant(a) * g.powf(a);
    if phi < a {
        levy_fractional_moment(phi, m).map(|e| e / x).unwrap_or(f64::NAN)
    } else if phi == a {
        c_tail * x.ln() / x
    } else {
        let beta = a / phi;
        pareto_moment(beta, m.delta).map(|e| c_tail * e * x.powf(-beta)).unwrap_or(f64::NAN)
    }
}

/// Asymptote with the `1/(1 - α/φ)` constant for every δ, the form that is
/// exact when the Pareto factor has unit lower endpoint.
pub fn marginal_tail_asymptote_unit_shift(x: f64, m: &MixtureMarginal) -> f64 {
    if m.phi > m.alpha {
        let beta = m.alpha / m.phi;
        2.0 * stable_tail_constant(m.alpha) * m.bar_gamma.powf(m.alpha) / (1.0 - beta) * x.powf(-beta)
    } else {
        marginal_tail_asymptote(x, m)
    }
}

/// `E(R^φ) = γ̄^φ cos^{-φ/α}(πα/2) Γ(1 - φ/α) / Γ(1 - φ)` for `0 < φ < α`.
pub fn levy_fractional_moment(phi: f64, m: &MixtureMarginal) -> Result<f64> {
    let a = m.alpha;
    if !(phi >= 0.0 && phi < a) {
        return Err(Error::Domain(format!("fractional moment of order {phi} is infinite for alpha = {a}")));
    }
    let ln = phi * m.bar_gamma.ln() - (phi / a) * (PI * a / 2.0).cos().ln() + ln_gamma(1.0 - phi / a)
        - ln_gamma(1.0 - phi);
    Ok(ln.exp())
}

#[cfg(test)]
fn density_at_zero(m: &MixtureMarginal) -> f64 {
    m.c() * gamma(m.phi + 0.5) / gamma(0.5)
}
