//! Generalized extreme value distribution.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shapes with `|ξ|` below this use the Gumbel limit.
pub const GUMBEL_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GevParams {
    pub mu: f64,
    pub sigma: f64,
    pub xi: f64,
}

impl GevParams {
    pub fn new(mu: f64, sigma: f64, xi: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!("GEV scale {sigma} must be positive")));
        }
        if !mu.is_finite() || !xi.is_finite() {
            return Err(Error::Parameter("GEV location and shape must be finite".into()));
        }
        Ok(Self { mu, sigma, xi })
    }

    /// Closed support `[lower, upper]`; infinite ends where unbounded.
    pub fn support(&self) -> (f64, f64) {
        if self.xi.abs() < GUMBEL_THRESHOLD {
            (f64::NEG_INFINITY, f64::INFINITY)
        } else if self.xi > 0.0 {
            (self.mu - self.sigma / self.xi, f64::INFINITY)
        } else {
            (f64::NEG_INFINITY, self.mu - self.sigma / self.xi)
        }
    }

    /// Whether `y` lies strictly inside the support.
    pub fn in_support(&self, y: f64) -> bool {
        let (lo, hi) = self.support();
        y > lo && y < hi
    }

    /// `t(y)^{-1/ξ}` (or `exp(-(y-μ)/σ)`), the quantity with `F = exp(-s)`;
    /// `None` outside the support.
    fn s(&self, y: f64) -> Option<f64> {
        let z = (y - self.mu) / self.sigma;
        if self.xi.abs() < GUMBEL_THRESHOLD {
            Some((-z).exp())
        } else {
            let t = 1.0 + self.xi * z;
            (t > 0.0).then(|| t.powf(-1.0 / self.xi))
        }
    }
}

/// `P(Y ≤ y)`; 0 or 1 outside the support.
pub fn gev_cdf(y: f64, p: &GevParams) -> f64 {
    match p.s(y) {
        Some(s) => (-s).exp(),
        None => outside(y, p, 0.0, 1.0),
    }
}

/// `P(Y > y)` without cancellation in the upper tail.
pub fn gev_sf(y: f64, p: &GevParams) -> f64 {
    match p.s(y) {
        Some(s) => -(-s).exp_m1(),
        None => outside(y, p, 1.0, 0.0),
    }
}

fn outside(y: f64, p: &GevParams, below: f64, above: f64) -> f64 {
    if y <= p.support().0 {
        below
    } else {
        above
    }
}

/// Density; 0 outside the support.
pub fn gev_pdf(y: f64, p: &GevParams) -> f64 {
    let l = gev_ln_pdf(y, p);
    if l == f64::NEG_INFINITY {
        0.0
    } else {
        l.exp()
    }
}

/// Log density; −∞ outside the support.
pub fn gev_ln_pdf(y: f64, p: &GevParams) -> f64 {
    match p.s(y) {
        // f = s^{ξ+1} e^{-s} / σ
        Some(s) if s > 0.0 && s.is_finite() => (p.xi + 1.0) * s.ln() - s - p.sigma.ln(),
        _ => f64::NEG_INFINITY,
    }
}

/// Quantile at lower-tail probability `prob`.
pub fn gev_quantile(prob: f64, p: &GevParams) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Domain(format!("probability {prob} outside (0, 1)")));
    }
    Ok(quantile_from_s(-prob.ln(), p))
}

/// Quantile from both tail probabilities; the smaller one sets the precision.
pub fn gev_quantile_pq(prob: f64, q: f64, p: &GevParams) -> Result<f64> {
    if !(prob > 0.0 && q > 0.0) {
        return Err(Error::Domain(format!("probabilities ({prob}, {q}) outside (0, 1)")));
    }
    let s = if prob <= 0.5 { -prob.ln() } else { -(-q).ln_1p() };
    Ok(quantile_from_s(s, p))
}

fn quantile_from_s(s: f64, p: &GevParams) -> f64 {
    if p.xi.abs() < GUMBEL_THRESHOLD {
        p.mu - p.sigma * s.ln()
    } else {
        // (s^{-ξ} - 1)/ξ, kept accurate for small ξ via exp_m1.
        p.mu + p.sigma * (-p.xi * s.ln()).exp_m1() / p.xi
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cdf_at_location() {
        let p = GevParams::new(0.0, 1.0, 0.2).unwrap();
        assert!((gev_cdf(0.0, &p) - (-1f64).exp()).abs() < 1e-15);
        let g = GevParams::new(3.0, 2.0, 0.0).unwrap();
        assert!((gev_cdf(3.0, &g) - (-1f64).exp()).abs() < 1e-15);
        assert!(GevParams::new(0.0, 0.0, 0.1).is_err());
    }

    #[test]
    fn support_handling() {
        let p = GevParams::new(0.0, 1.0, 0.2).unwrap();
        assert_eq!(p.support().0, -5.0);
        assert_eq!(gev_cdf(-6.0, &p), 0.0);
        assert_eq!(gev_sf(-6.0, &p), 1.0);
        assert_eq!(gev_pdf(-6.0, &p), 0.0);
        let n = GevParams::new(0.0, 1.0, -0.5).unwrap();
        assert_eq!(n.support().1, 2.0);
        assert_eq!(gev_cdf(3.0, &n), 1.0);
        assert_eq!(gev_sf(3.0, &n), 0.0);
        assert!(!n.in_support(2.0) && n.in_support(1.9));
    }

    #[test]
    fn density_is_cdf_derivative() {
        let p = GevParams::new(0.0, 1.0, 0.2).unwrap();
        for &y in &[-2.0f64, -1.0, 0.0, 0.5, 2.0, 10.0, 100.0] {
            let h = 1e-6 * (1.0 + y.abs());
            let fd = if gev_cdf(y, &p) < 0.5 {
                (gev_cdf(y + h, &p) - gev_cdf(y - h, &p)) / (2.0 * h)
            } else {
                (gev_sf(y - h, &p) - gev_sf(y + h, &p)) / (2.0 * h)
            };
            assert!(((fd - gev_pdf(y, &p)) / gev_pdf(y, &p)).abs() < 1e-6, "{y}: {fd} vs {}", gev_pdf(y, &p));
        }
    }

    #[test]
    fn gumbel_branch_is_continuous() {
        let a = GevParams::new(1.0, 2.0, 0.0).unwrap();
        let b = GevParams::new(1.0, 2.0, 2e-8).unwrap();
        for &y in &[-2.0, 0.0, 1.0, 5.0] {
            assert!((gev_cdf(y, &a) - gev_cdf(y, &b)).abs() < 1e-6);
            assert!((gev_ln_pdf(y, &a) - gev_ln_pdf(y, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn upper_tail_quantile_precision() {
        let p = GevParams::new(0.0, 1.0, 0.2).unwrap();
        let y = gev_quantile_pq(1.0 - 1e-14, 1e-14, &p).unwrap();
        assert!((gev_sf(y, &p) / 1e-14 - 1.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn quantile_inverts_cdf(mu in -5.0f64..5.0, sigma in 0.1f64..5.0, xi in -0.5f64..0.5, prob in 0.001f64..0.999) {
            let p = GevParams::new(mu, sigma, xi).unwrap();
            let y = gev_quantile(prob, &p).unwrap();
            prop_assert!((gev_cdf(y, &p) - prob).abs() < 1e-10);
            let y2 = gev_quantile_pq(prob, 1.0 - prob, &p).unwrap();
            prop_assert!((gev_cdf(y2, &p) - prob).abs() < 1e-10);
        }
    }
}
