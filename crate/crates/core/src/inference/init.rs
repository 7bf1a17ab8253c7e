//! Data-driven starting values.
//!
//! Margins: probability-weighted-moment GEV fits per site, regressed onto
//! the design, with the shape shrunk toward zero until every observation is
//! in support. Dependence: `φ_k = ½`, a common `ρ` fitted to normal-score
//! correlations, and `S_kt` matched to the median of `X^{1/φ}` near knot `k`.

use nalgebra::{DMatrix, DVector};

use super::state::{Model, Params};
use crate::error::{Error, Result};
use crate::gp::matern_correlation;
use crate::kernel::dist;
use crate::margins::{gev_cdf, gev_sf, y_to_x, MarginBlock, MarginalCoefficients, MarginalDesign};
use crate::special::{gamma, norm_quantile};

/// Range of the common `ρ` searched at initialization.
pub const RHO_INIT_RANGE: (f64, f64) = (0.05, 10.0);
const MAX_INIT_PAIRS: usize = 20_000;

/// GEV `(μ, σ, ξ)` from probability-weighted moments.
pub fn gev_pwm(sample: &[f64]) -> Result<(f64, f64, f64)> {
    let mut x: Vec<f64> = sample.iter().copied().filter(|v| v.is_finite()).collect();
    let n = x.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("{n} observations are too few for a GEV fit")));
    }
    x.sort_by(f64::total_cmp);
    let nf = n as f64;
    let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
    for (i, &v) in x.iter().enumerate() {
        let i = i as f64;
        b0 += v;
        b1 += v * i / (nf - 1.0);
        b2 += v * i * (i - 1.0) / ((nf - 1.0) * (nf - 2.0));
    }
    b0 /= nf;
    b1 /= nf;
    b2 /= nf;
    if !(2.0 * b1 - b0 > 0.0) {
        return Err(Error::Degenerate("sample has no spread".into()));
    }
    // Hosking's approximation; his shape k is -ξ.
    let c = (2.0 * b1 - b0) / (3.0 * b2 - b0) - std::f64::consts::LN_2 / 3f64.ln();
    let k = (7.8590 * c + 2.9554 * c * c).clamp(-0.9, 0.9);
    let (sigma, mu) = if k.abs() < 1e-8 {
        let s = (2.0 * b1 - b0) / std::f64::consts::LN_2;
        (s, b0 - 0.577_215_664_901_532_9 * s)
    } else {
        let g = gamma(1.0 + k);
        let s = (2.0 * b1 - b0) * k / ((1.0 - 2f64.powf(-k)) * g);
        (s, b0 + s * (g - 1.0) / k)
    };
    Ok((mu, sigma, -k))
}

/// Least-squares coefficients of `values` on the columns of `design`.
fn least_squares(design: &DMatrix<f64>, values: &[f64]) -> Result<Vec<f64>> {
    if design.ncols() == 0 {
        return Ok(Vec::new());
    }
    let y = DVector::from_column_slice(values);
    let svd = design.clone().svd(true, true);
    let b = svd.solve(&y, 1e-12).map_err(|e| Error::Numeric(format!("least squares: {e}")))?;
    Ok(b.iter().copied().collect())
}

/// Smallest GEV tail probability of any observation at a starting point.
const START_TAIL_FLOOR: f64 = 1e-12;

/// Every observation in support with both GEV tail probabilities above the floor.
fn all_in_support(model: &Model, coef: &MarginalCoefficients) -> bool {
    let Ok(reg) = model.regression(coef) else { return false };
    let surf = reg.surfaces();
    (0..model.n_times()).all(|t| {
        model.observed(t).iter().all(|&j| {
            let y = model.data.y[(j, t)];
            model
                .gev(&surf, j, t)
                .map(|g| g.in_support(y) && gev_cdf(y, &g).min(gev_sf(y, &g)) >= START_TAIL_FLOOR)
                .unwrap_or(false)
        })
    })
}

/// Starting marginal coefficients. `ξ` is shrunk toward zero until every
/// observation is comfortably inside the support; failing that, with `ξ = 0`
/// the scale intercept (first design column, when constant) is widened.
pub fn initial_margins(model: &Model) -> Result<MarginalCoefficients> {
    let design: &MarginalDesign = &model.data.design;
    let d = model.data.n_sites();
    let mut mu = Vec::with_capacity(d);
    let mut ls = Vec::with_capacity(d);
    let mut xi = Vec::with_capacity(d);
    let mut rows = Vec::with_capacity(d);
    for j in 0..d {
        let row: Vec<f64> = model.data.y.row(j).iter().copied().filter(|v| !v.is_nan()).collect();
        if let Ok((m, s, x)) = gev_pwm(&row) {
            mu.push(m);
            ls.push(s.ln());
            xi.push(x.clamp(-0.4, 0.6));
            rows.push(j);
        }
    }
    if rows.is_empty() {
        return Err(Error::Degenerate("no site has enough observations for a marginal fit".into()));
    }
    let sub = |m: &DMatrix<f64>| m.select_rows(&rows);
    let mut coef = MarginalCoefficients {
        mu0: least_squares(&sub(&design.mu0), &mu)?,
        mu1: vec![0.0; design.mu1.ncols()],
        log_sigma: least_squares(&sub(&design.log_sigma), &ls)?,
        xi: least_squares(&sub(&design.xi), &xi)?,
    };
    for _ in 0..60 {
        if all_in_support(model, &coef) {
            return Ok(coef);
        }
        for c in coef.block_mut(MarginBlock::Xi).iter_mut() {
            *c *= 0.5;
        }
    }
    coef.xi.iter_mut().for_each(|c| *c = 0.0);
    let intercept = design.log_sigma.ncols() > 0 && design.log_sigma.column(0).iter().all(|&v| v == 1.0);
    for _ in 0..40 {
        if all_in_support(model, &coef) {
            return Ok(coef);
        }
        if !intercept {
            break;
        }
        coef.log_sigma[0] += std::f64::consts::LN_2;
    }
    Err(Error::Degenerate("no starting margins place every observation in support".into()))
}

/// Normal scores of each site's observed values, NaN where missing.
fn normal_scores(y: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(y.nrows(), y.ncols(), f64::NAN);
    for j in 0..y.nrows() {
        let mut idx: Vec<usize> = (0..y.ncols()).filter(|&t| !y[(j, t)].is_nan()).collect();
        idx.sort_by(|&a, &b| y[(j, a)].total_cmp(&y[(j, b)]));
        let n = idx.len() as f64;
        for (rank, &t) in idx.iter().enumerate() {
            out[(j, t)] = norm_quantile((rank as f64 + 1.0) / (n + 1.0));
        }
    }
    out
}

/// Common `ρ` minimizing squared error between normal-score and Matérn correlations.
pub fn initial_rho(model: &Model) -> f64 {
    let zs = normal_scores(&model.data.y);
    let d = zs.nrows();
    let total = d * d.saturating_sub(1) / 2;
    let stride = total.div_ceil(MAX_INIT_PAIRS).max(1);
    let mut pairs = Vec::new();
    let mut n = 0usize;
    for i in 0..d {
        for j in 0..i {
            n += 1;
            if n % stride != 0 {
                continue;
            }
            let common: Vec<usize> = (0..zs.ncols()).filter(|&t| zs[(i, t)].is_finite() && zs[(j, t)].is_finite()).collect();
            if common.len() < 5 {
                continue;
            }
            let m = common.len() as f64;
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &t in &common {
                let (a, b) = (zs[(i, t)], zs[(j, t)]);
                sx += a;
                sy += b;
                sxx += a * a;
                syy += b * b;
                sxy += a * b;
            }
            let cov = sxy / m - sx * sy / (m * m);
            let den = ((sxx / m - sx * sx / (m * m)) * (syy / m - sy * sy / (m * m))).sqrt();
            if den > 0.0 {
                pairs.push((dist(&model.geo.sites[i], &model.geo.sites[j]), cov / den));
            }
        }
    }
    let (lo, hi) = RHO_INIT_RANGE;
    if pairs.is_empty() {
        return 1.0_f64.clamp(lo, hi);
    }
    let nu = model.geo.nu;
    let loss = |rho: f64| -> f64 {
        pairs
            .iter()
            .map(|&(h, c)| {
                let m = matern_correlation(h / rho.sqrt(), nu).unwrap_or(0.0);
                (c - m) * (c - m)
            })
            .sum()
    };
    let grid = 80;
    (0..grid)
        .map(|g| lo * (hi / lo).powf(g as f64 / (grid - 1) as f64))
        .map(|r| (r, loss(r)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(1.0, |(r, _)| r)
}

/// Median of a Lévy(γ, 0) variable: `γ / (2 erfc⁻¹(½)²)`.
pub fn levy_median(gamma: f64) -> f64 {
    let q = crate::special::norm_quantile_upper(0.25);
    gamma / (q * q)
}

/// Starting knot variables given margins and a constant `φ`.
pub fn initial_s(model: &Model, coef: &MarginalCoefficients, phi_knots: &[f64]) -> Result<DMatrix<f64>> {
    let surf = model.surfaces(phi_knots, &vec![1.0; model.geo.n_rho_knots()], coef)?;
    let k = model.geo.n_knots();
    let t_n = model.n_times();
    let mut s = DMatrix::zeros(k, t_n);
    for t in 0..t_n {
        let obs = model.observed(t);
        for kk in 0..k {
            let mut vals: Vec<f64> = model.geo.knot_sites[kk]
                .iter()
                .filter(|j| obs.contains(j))
                .filter_map(|&j| {
                    let gev = model.gev(&surf.margins, j, t).ok()?;
                    let x = y_to_x(model.data.y[(j, t)], &gev, &surf.tables[j], None).ok()?;
                    let v = x.powf(1.0 / surf.phi[j]);
                    (v > 0.0 && v.is_finite()).then_some(v)
                })
                .collect();
            s[(kk, t)] = if vals.is_empty() {
                levy_median(model.geo.gammas[kk])
            } else {
                vals.sort_by(f64::total_cmp);
                vals[vals.len() / 2]
            };
        }
    }
    Ok(s)
}

/// Full data-driven starting point; `coef` overrides the marginal fit when given.
pub fn initial_params(model: &Model, coef: Option<MarginalCoefficients>) -> Result<Params> {
    let coef = match coef {
        Some(c) => c,
        None => initial_margins(model)?,
    };
    let phi_knots = vec![0.5; model.geo.n_knots()];
    let rho = initial_rho(model);
    let rho_knots = vec![rho; model.geo.n_rho_knots()];
    let s = initial_s(model, &coef, &phi_knots)?;
    Ok(Params { s, phi_knots, rho_knots, coef })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::margins::{gev_quantile, GevParams};
    use crate::stable::levy_cdf;

    #[test]
    fn pwm_recovers_gev() {
        let p = GevParams::new(2.0, 1.5, 0.15).unwrap();
        let n = 20_000;
        let sample: Vec<f64> = (0..n).map(|i| gev_quantile((i as f64 + 0.5) / n as f64, &p).unwrap()).collect();
        let (m, s, x) = gev_pwm(&sample).unwrap();
        assert!((m - 2.0).abs() < 0.02, "{m}");
        assert!((s - 1.5).abs() < 0.02, "{s}");
        assert!((x - 0.15).abs() < 0.02, "{x}");
    }

    #[test]
    fn levy_median_halves_mass() {
        for g in [0.5, 1.0, 3.0] {
            assert!((levy_cdf(levy_median(g), g, 0.0) - 0.5).abs() < 1e-10);
        }
    }
}
