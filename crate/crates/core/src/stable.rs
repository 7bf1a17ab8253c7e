//! Totally skewed Stable laws and the Lévy (α = 1/2, β = 1) special case.
//!
//! Parameters follow the 1-parameterization: the characteristic function is
//! `exp[-γ^α |u|^α {1 - iβ tan(πα/2) sign(u)} + iδu]` for α ≠ 1. With α = 1/2
//! and β = 1 this is the Lévy law with density
//! `√(γ/2π) (x-δ)^{-3/2} exp(-γ / (2(x-δ)))`.

use std::f64::consts::{FRAC_PI_2, PI};

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{erfc, stable_tail_constant};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StableParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl StableParams {
    pub fn new(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<Self> {
        let p = Self { alpha, beta, gamma, delta };
        p.validate()?;
        Ok(p)
    }

    /// Lévy law: α = 1/2, β = 1.
    pub fn levy(gamma: f64, delta: f64) -> Result<Self> {
        Self::new(0.5, 1.0, gamma, delta)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 2.0) {
            return Err(Error::Parameter(format!("stable alpha {} outside (0, 2]", self.alpha)));
        }
        if !(self.beta.abs() <= 1.0) {
            return Err(Error::Parameter(format!("stable beta {} outside [-1, 1]", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Parameter(format!("stable gamma {} must be positive", self.gamma)));
        }
        if !self.delta.is_finite() {
            return Err(Error::Parameter("stable delta must be finite".into()));
        }
        Ok(())
    }

    fn is_levy(&self) -> bool {
        self.alpha == 0.5 && self.beta == 1.0
    }
}

/// One Stable draw by the uniform-angle / exponential transformation.
///
/// Only the α ≠ 1 branch exists; callers validate before reaching here.
pub fn draw_stable<R: Rng + ?Sized>(p: &StableParams, rng: &mut R) -> f64 {
    if p.is_levy() {
        return draw_levy(p.gamma, p.delta, rng);
    }
    let a = p.alpha;
    let v = loop {
        let u: f64 = rng.random();
        let v = PI * (u - 0.5);
        if v > -FRAC_PI_2 {
            break v;
        }
    };
    let w: f64 = Exp1.sample(rng);
    let t = p.beta * (PI * a / 2.0).tan();
    let b = t.atan() / a;
    let s = (1.0 + t * t).powf(1.0 / (2.0 * a));
    let x = s * (a * (v + b)).sin() / v.cos().powf(1.0 / a)
        * ((v - a * (v + b)).cos().max(0.0) / w).powf((1.0 - a) / a);
    let y = p.gamma * x + p.delta;
    if p.beta == 1.0 && a < 1.0 {
        y.max(p.delta)
    } else {
        y
    }
}

/// One Lévy(γ, δ) draw as δ + γ / N², N standard normal.
#[inline]
pub fn draw_levy<R: Rng + ?Sized>(gamma: f64, delta: f64, rng: &mut R) -> f64 {
    let n: f64 = StandardNormal.sample(rng);
    delta + gamma / (n * n)
}

/// `n` i.i.d. Stable draws.
pub fn sample_stable<R: Rng + ?Sized>(params: &StableParams, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    params.validate()?;
    if params.alpha == 1.0 {
        return Err(Error::Parameter("alpha = 1 is not supported by the sampler".into()));
    }
    if n == 0 {
        return Err(Error::Parameter("sample size must be at least 1".into()));
    }
    Ok((0..n).map(|_| draw_stable(params, rng)).collect())
}

/// Lévy density; zero on `x ≤ δ`. Returns NaN for `γ ≤ 0`.
pub fn levy_density(x: f64, gamma: f64, delta: f64) -> f64 {
    if !(gamma > 0.0) {
        return f64::NAN;
    }
    let y = x - delta;
    if y <= 0.0 {
        return 0.0;
    }
    (gamma / (2.0 * PI)).sqrt() * y.powf(-1.5) * (-gamma / (2.0 * y)).exp()
}

/// log of [`levy_density`]; −∞ off the support.
pub fn levy_ln_density(x: f64, gamma: f64, delta: f64) -> f64 {
    let y = x - delta;
    if !(gamma > 0.0) {
        return f64::NAN;
    }
    if y <= 0.0 {
        return f64::NEG_INFINITY;
    }
    0.5 * (gamma / (2.0 * PI)).ln() - 1.5 * y.ln() - gamma / (2.0 * y)
}

/// Lévy CDF `erfc(√(γ / (2(x-δ))))`.
pub fn levy_cdf(x: f64, gamma: f64, delta: f64) -> f64 {
    if !(gamma > 0.0) {
        return f64::NAN;
    }
    let y = x - delta;
    if y <= 0.0 {
        return 0.0;
    }
    if y.is_infinite() {
        return 1.0;
    }
    erfc((gamma / (2.0 * y)).sqrt())
}

/// Pareto-like tail approximation `γ^α (1+β) C_α x^{-α}`.
pub fn stable_tail_asymptote(x: f64, params: &StableParams) -> f64 {
    params.gamma.powf(params.alpha)
        * (1.0 + params.beta)
        * stable_tail_constant(params.alpha)
        * x.powf(-params.alpha)
}

/// Scale of `Σ w_k S_k` for independent totally-skewed `S_k ~ Stable(α, 1, γ_k, δ)`:
/// `γ̄ = {Σ (w_k γ_k)^α}^{1/α}`.
pub fn mixture_scale(weights: &[f64], gammas: &[f64], alpha: f64) -> Result<f64> {
    if weights.len() != gammas.len() {
        return Err(Error::Parameter(format!(
            "weights ({}) and gammas ({}) differ in length",
            weights.len(),
            gammas.len()
        )));
    }
    if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) || gammas.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::Parameter("weights must be >= 0 and gammas > 0".into()));
    }
    let s: f64 = weights
        .iter()
        .zip(gammas)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, g)| (w * g).powf(alpha))
        .sum();
    if s <= 0.0 {
        return Err(Error::Degenerate("all mixture weights are zero".into()));
    }
    Ok(s.powf(1.0 / alpha))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadOptions};
    use crate::rng::stream;

    fn ks_against<F: Fn(f64) -> f64>(mut xs: Vec<f64>, cdf: F) -> f64 {
        xs.sort_by(f64::total_cmp);
        let n = xs.len() as f64;
        xs.iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = cdf(x);
                (c - i as f64 / n).abs().max(((i + 1) as f64 / n - c).abs())
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn general_sampler_matches_levy_cdf() {
        // Force the angle/exponential branch with α = 1/2, β = 1.
        let mut rng = stream(1, &[0]);
        let p = StableParams { alpha: 0.5, beta: 1.0, gamma: 1.0, delta: 0.0 };
        let a = 0.5;
        let xs: Vec<f64> = (0..200_000)
            .map(|_| {
                let u: f64 = rng.random();
                let v = PI * (u - 0.5);
                let w: f64 = Exp1.sample(&mut rng);
                let t = p.beta * (PI * a / 2.0).tan();
                let b = t.atan() / a;
                let s = (1.0 + t * t).powf(1.0 / (2.0 * a));
                s * (a * (v + b)).sin() / v.cos().powf(1.0 / a)
                    * ((v - a * (v + b)).cos() / w).powf((1.0 - a) / a)
            })
            .collect();
        let frac = xs.iter().filter(|&&x| x <= 1.0).count() as f64 / xs.len() as f64;
        assert!((frac - 0.317_310_507_862_914_1).abs() < 1.36 / (xs.len() as f64).sqrt());
        let d = ks_against(xs, |x| levy_cdf(x, 1.0, 0.0));
        assert!(d < 1.63 / (200_000f64).sqrt(), "ks {d}");
    }

    #[test]
    fn shifted_support() {
        let mut rng = stream(2, &[]);
        let p = StableParams::levy(1.0, 5.0).unwrap();
        assert!(sample_stable(&p, 10_000, &mut rng).unwrap().iter().all(|&x| x >= 5.0));
        let q = StableParams::new(0.7, 1.0, 2.0, 5.0).unwrap();
        assert!(sample_stable(&q, 10_000, &mut rng).unwrap().iter().all(|&x| x >= 5.0));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(StableParams::new(2.5, 1.0, 1.0, 0.0).is_err());
        assert!(StableParams::new(0.5, 1.5, 1.0, 0.0).is_err());
        assert!(StableParams::new(0.5, 1.0, 0.0, 0.0).is_err());
        let p = StableParams { alpha: 1.0, beta: 0.0, gamma: 1.0, delta: 0.0 };
        assert!(sample_stable(&p, 3, &mut stream(0, &[])).is_err());
    }

    #[test]
    fn density_boundary_and_normalization() {
        assert_eq!(levy_density(0.0, 1.0, 0.0), 0.0);
        assert_eq!(levy_density(3.0, 1.0, 3.0), 0.0);
        // Integrate in log-space: x = e^v.
        let opts = QuadOptions { epsabs: 0.0, epsrel: 1e-12, max_intervals: 4000 };
        let r = integrate(|v: f64| levy_density(v.exp(), 1.0, 0.0) * v.exp(), -10.0, 200.0, opts).unwrap();
        // Remaining mass above e^200 is erf(√(1/2 e^-200)) ≈ 3.6e-44.
        assert!((r.value - 1.0).abs() < 1e-6, "{}", r.value);
    }

    #[test]
    fn density_is_derivative_of_cdf() {
        let (g, x, h) = (0.5, 0.5, 1e-5);
        let fd = (levy_cdf(x + h, g, 0.0) - levy_cdf(x - h, g, 0.0)) / (2.0 * h);
        assert!((fd - levy_density(x, g, 0.0)).abs() < 1e-6);
    }

    #[test]
    fn cdf_values() {
        assert!((levy_cdf(1.0, 1.0, 0.0) - 0.317_310_507_862_914_1).abs() < 1e-12);
        assert_eq!(levy_cdf(f64::INFINITY, 1.0, 0.0), 1.0);
        assert!((levy_cdf(1e300, 1.0, 0.0) - 1.0).abs() < 1e-12);
        assert_eq!(levy_cdf(2.0, 2.0, 0.0), levy_cdf(1.0, 1.0, 0.0));
        assert_eq!(levy_cdf(-1.0, 1.0, 0.0), 0.0);
    }

    #[test]
    fn tail_asymptote_constants_and_scaling() {
        let p = StableParams::levy(1.0, 0.0).unwrap();
        assert!((stable_tail_constant(0.5) - 0.398_942_280_401_432_7).abs() < 1e-12);
        let ratio = stable_tail_asymptote(1e4, &p) / (1.0 - levy_cdf(1e4, 1.0, 0.0));
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
        let r2 = stable_tail_asymptote(20.0, &p) / stable_tail_asymptote(10.0, &p);
        assert!((r2 - 2f64.powf(-0.5)).abs() < 1e-14);
    }

    #[test]
    fn mixture_scale_cases() {
        assert!((mixture_scale(&[1.0, 0.0, 0.0], &[0.7, 2.0, 3.0], 0.5).unwrap() - 0.7).abs() < 1e-15);
        assert!((mixture_scale(&[0.5, 0.5], &[0.5, 0.5], 0.5).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(mixture_scale(&[0.0, 0.0], &[1.0, 1.0], 0.5), Err(Error::Degenerate(_))));
    }

    #[test]
    fn convolution_closure_by_ks() {
        let mut rng = stream(3, &[]);
        let n = 100_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| 0.5 * draw_levy(0.5, 0.0, &mut rng) + 0.5 * draw_levy(0.5, 0.0, &mut rng))
            .collect();
        let g = mixture_scale(&[0.5, 0.5], &[0.5, 0.5], 0.5).unwrap();
        let d = ks_against(xs, |x| levy_cdf(x, g, 0.0));
        assert!(d < 1.36 / (n as f64).sqrt() + 0.002, "ks {d}");
    }

    #[test]
    fn tail_slope_is_minus_alpha() {
        let mut rng = stream(4, &[]);
        let n = 1_000_000;
        let mut xs: Vec<f64> = (0..n).map(|_| draw_levy(1.0, 0.0, &mut rng)).collect();
        xs.sort_by(|a, b| b.total_cmp(a));
        let top = n / 1000;
        let pts: Vec<(f64, f64)> = (0..top)
            .map(|i| (xs[i].ln(), ((i + 1) as f64 / n as f64).ln()))
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / top as f64;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / top as f64;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let slope = sxy / sxx;
        assert!((slope + 0.5).abs() < 0.05, "slope {slope}");
    }

    #[test]
    fn tail_frequency_at_extreme_quantile() {
        let mut rng = stream(5, &[]);
        let n = 1_000_000;
        let mut xs: Vec<f64> = (0..n).map(|_| draw_levy(1.0, 0.0, &mut rng)).collect();
        xs.sort_by(f64::total_cmp);
        let q = xs[(0.999 * n as f64) as usize];
        let emp = xs.iter().filter(|&&x| x > q).count() as f64 / n as f64;
        let p = StableParams::levy(1.0, 0.0).unwrap();
        let ratio = emp / stable_tail_asymptote(q, &p);
        assert!((ratio - 1.0).abs() < 0.1, "ratio {ratio}");
    }
}
