//! Latent Gaussian process: nonstationary Matérn covariance, Cholesky
//! factorization with a jitter fallback, simulation and conditioning.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernel::{dist, Point};
use crate::quadrature::{integrate, QuadOptions};
use crate::special::{ln_gamma, LN_SQRT_2PI};

const JITTER_START: f64 = 1e-10;
const JITTER_MAX: f64 = 1e-6;

/// Matérn correlation with unit range. Closed forms are used for ν ∈ {½, 3/2, 5/2}.
pub fn matern_correlation(d: f64, nu: f64) -> Result<f64> {
    check_args(d, nu)?;
    Ok(if nu == 0.5 {
        (-d).exp()
    } else if nu == 1.5 {
        (1.0 + d) * (-d).exp()
    } else if nu == 2.5 {
        (1.0 + d + d * d / 3.0) * (-d).exp()
    } else {
        matern_general(d, nu)?
    })
}

/// Matérn correlation through the Bessel-K integral, for any ν > 0.
pub fn matern_correlation_general(d: f64, nu: f64) -> Result<f64> {
    check_args(d, nu)?;
    matern_general(d, nu)
}

fn check_args(d: f64, nu: f64) -> Result<()> {
    if !(d >= 0.0) {
        return Err(Error::Parameter(format!("distance {d} must be nonnegative")));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::Parameter(format!("smoothness {nu} must be positive")));
    }
    Ok(())
}

/// `2^{1-ν}/Γ(ν) d^ν K_ν(d)` with `K_ν(d) = ∫₀^∞ exp(-d cosh t) cosh(νt) dt`.
fn matern_general(d: f64, nu: f64) -> Result<f64> {
    if d == 0.0 {
        return Ok(1.0);
    }
    if d > 700.0 {
        return Ok(0.0);
    }
    let ln_pref = (1.0 - nu) * std::f64::consts::LN_2 - ln_gamma(nu) + nu * d.ln();
    // Integrand in log form; cosh(νt) = e^{νt}(1 + e^{-2νt})/2.
    let g = |t: f64| {
        let ln_c = nu * t + (-2.0 * nu * t).exp().ln_1p() - std::f64::consts::LN_2;
        (ln_pref - d * t.cosh() + ln_c).exp()
    };
    // Beyond t_max the integrand is below e^{-60} relative to its peak.
    let t_peak = (nu / d).asinh();
    let mut t_max = t_peak + 1.0;
    while d * (t_max.cosh() - t_peak.cosh()) - nu * (t_max - t_peak) < 60.0 {
        t_max += 1.0;
    }
    let opts = QuadOptions { epsabs: 0.0, epsrel: 1e-13, max_intervals: 2000 };
    let r = integrate(g, 0.0, t_max, opts)?;
    Ok(r.value.min(1.0))
}

/// Nonstationary Matérn covariance matrix with unit variance.
pub fn covariance_matrix(sites: &[Point], rho_values: &[f64], nu: f64) -> Result<DMatrix<f64>> {
    if sites.len() != rho_values.len() {
        return Err(Error::Parameter(format!(
            "{} sites but {} range values",
            sites.len(),
            rho_values.len()
        )));
    }
    if let Some(r) = rho_values.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(Error::Parameter(format!("range value {r} must be positive")));
    }
    let n = sites.len();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = 1.0;
        for j in 0..i {
            let (ri, rj) = (rho_values[i], rho_values[j]);
            let avg = 0.5 * (ri + rj);
            let c = (ri * rj).sqrt() / avg * matern_correlation(dist(&sites[i], &sites[j]) / avg.sqrt(), nu)?;
            m[(i, j)] = c;
            m[(j, i)] = c;
        }
    }
    Ok(m)
}

/// Covariance matrix together with its (possibly jittered) Cholesky factor.
#[derive(Clone, Debug)]
pub struct CovarianceFactor {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
    log_det: f64,
    jitter: f64,
}

impl CovarianceFactor {
    /// Factorize, adding diagonal jitter from 1e-10 up to 1e-6 if needed.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Parameter("covariance must be a non-empty square matrix".into()));
        }
        let mut jitter = 0.0;
        loop {
            let mut m = matrix.clone();
            if jitter > 0.0 {
                for i in 0..m.nrows() {
                    m[(i, i)] += jitter;
                }
            }
            if let Some(ch) = m.cholesky() {
                let lower = ch.unpack();
                let log_det = 2.0 * lower.diagonal().iter().map(|x| x.ln()).sum::<f64>();
                if log_det.is_finite() {
                    return Ok(Self { matrix, lower, log_det, jitter });
                }
            }
            jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
            if jitter > JITTER_MAX * 1.000_001 {
                return Err(Error::Factorization(format!(
                    "{0}x{0} covariance not positive definite after jitter {JITTER_MAX:e}",
                    matrix.nrows()
                )));
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Diagonal jitter that was needed to factorize (0 if none).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// `L⁻¹ z` by forward substitution.
    pub fn whiten(&self, z: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = z[i];
            for k in 0..i {
                s -= self.lower[(i, k)] * y[k];
            }
            y[i] = s / self.lower[(i, i)];
        }
        y
    }

    /// `zᵀ Σ⁻¹ z`.
    pub fn quad_form(&self, z: &[f64]) -> f64 {
        self.whiten(z).iter().map(|v| v * v).sum()
    }

    /// Zero-mean Gaussian log-density at `z`.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        -0.5 * self.quad_form(z) - 0.5 * self.log_det - self.dim() as f64 * LN_SQRT_2PI
    }

    /// Factor of the sub-covariance on `idx`.
    pub fn sub_factor(&self, idx: &[usize]) -> Result<CovarianceFactor> {
        CovarianceFactor::new(self.matrix.select_rows(idx).select_columns(idx))
    }
}

/// Covariance from sites and a range surface, factorized.
pub fn build_covariance(sites: &[Point], rho_values: &[f64], nu: f64) -> Result<CovarianceFactor> {
    CovarianceFactor::new(covariance_matrix(sites, rho_values, nu)?)
}

/// `n` independent draws from `N(0, Σ)`, one per column.
pub fn sample_gp<R: Rng + ?Sized>(factor: &CovarianceFactor, n_replicates: usize, rng: &mut R) -> DMatrix<f64> {
    let d = factor.dim();
    let e = DMatrix::from_fn(d, n_replicates, |_, _| rng.sample::<f64, _>(StandardNormal));
    factor.lower() * e
}

/// Gaussian conditioning on a joint covariance: the law at `new` given the
/// values at `observed`.
pub fn conditional_gp(
    joint: &DMatrix<f64>,
    observed: &[usize],
    new: &[usize],
    observed_values: &[f64],
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if observed.len() != observed_values.len() {
        return Err(Error::Parameter("observed indices and values differ in length".into()));
    }
    let n = joint.nrows();
    if observed.iter().chain(new).any(|&i| i >= n) {
        return Err(Error::Parameter("conditioning index out of range".into()));
    }
    let s_nn = joint.select_rows(new).select_columns(new);
    if observed.is_empty() {
        return Ok((DVector::zeros(new.len()), s_nn));
    }
    let s_oo = joint.select_rows(observed).select_columns(observed);
    let s_no = joint.select_rows(new).select_columns(observed);
    let f = CovarianceFactor::new(s_oo)?;
    let l = f.lower();
    // A = L⁻¹ Σ_on, b = L⁻¹ y
    let a = l
        .solve_lower_triangular(&s_no.transpose())
        .ok_or_else(|| Error::Factorization("triangular solve failed".into()))?;
    let b = l
        .solve_lower_triangular(&DVector::from_column_slice(observed_values))
        .ok_or_else(|| Error::Factorization("triangular solve failed".into()))?;
    let mean = a.transpose() * b;
    let mut cov = s_nn - a.transpose() * &a;
    cov = 0.5 * (&cov + cov.transpose());
    Ok((mean, cov))
}
