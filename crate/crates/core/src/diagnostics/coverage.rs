//! Frequentist coverage of equi-tailed credible intervals over repeated
//! simulated datasets, with exact binomial acceptance bands.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::inference::init::initial_s;
use crate::inference::{equi_tailed_interval, initial_params, run_chain, ChainConfig, Dataset, LikelihoodMode, Model, PriorSpec};
use crate::margins::{MarginBlock, MarginalCoefficients};
use crate::simulate::SimulatedDataset;
use crate::special::norm_quantile;

/// Posterior draws of one scalar parameter and its true value.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDraws {
    pub name: String,
    pub truth: f64,
    pub draws: Vec<f64>,
}

/// Anything that turns a simulated dataset into posterior draws.
pub trait Fitter: Sync {
    fn fit(&self, data: &SimulatedDataset, index: usize) -> Result<Vec<ParamDraws>>;
}

/// Exact binomial acceptance band `[lo, hi]` (as proportions) for the number
/// of covering intervals out of `n` when the true coverage is `p`: each tail
/// outside the band has probability at most `(1 - conf) / 2`.
pub fn binomial_band(n: u64, p: f64, conf: f64) -> Result<(f64, f64)> {
    if n == 0 || !(p > 0.0 && p < 1.0) || !(conf > 0.0 && conf < 1.0) {
        return Err(Error::Parameter("binomial band needs n >= 1 and p, conf in (0, 1)".into()));
    }
    let b = Binomial::new(p, n).map_err(|e| Error::Parameter(e.to_string()))?;
    let a = 0.5 * (1.0 - conf);
    // Largest lo with P(X < lo) <= a; smallest hi with P(X > hi) <= a.
    let lo = (0..=n).find(|&k| b.cdf(k) > a).unwrap_or(n);
    let hi = (0..=n).find(|&k| b.sf(k) <= a).unwrap_or(n);
    Ok((lo as f64 / n as f64, hi as f64 / n as f64))
}

/// Coverage of one parameter at one level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub parameter: String,
    pub level: f64,
    pub n: usize,
    pub covered: usize,
    pub coverage: f64,
    pub band_lo: f64,
    pub band_hi: f64,
}

impl CoverageRow {
    pub fn inside_band(&self) -> bool {
        self.coverage >= self.band_lo && self.coverage <= self.band_hi
    }

    /// Not below the lower edge of the band.
    pub fn not_under(&self) -> bool {
        self.coverage >= self.band_lo
    }
}

/// Coverage table plus the datasets whose fits failed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub rows: Vec<CoverageRow>,
    pub failures: Vec<(usize, String)>,
    pub band_confidence: f64,
}

impl CoverageReport {
    pub fn row(&self, parameter: &str, level: f64) -> Option<&CoverageRow> {
        self.rows.iter().find(|r| r.parameter == parameter && r.level == level)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "parameter,level,n,covered,coverage,band_lo,band_hi")?;
        for r in &self.rows {
            writeln!(w, "{},{},{},{},{},{},{}", r.parameter, r.level, r.n, r.covered, r.coverage, r.band_lo, r.band_hi)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Whether the closed interval `[lo, hi]` contains `truth`.
pub fn covers(interval: (f64, f64), truth: f64) -> bool {
    interval.0 <= truth && truth <= interval.1
}

/// Fits `n_datasets` datasets from `make` and tabulates interval coverage at
/// each level. Datasets are processed in order; failed fits are recorded and
/// excluded.
pub fn coverage_study<M, F>(make: M, n_datasets: usize, levels: &[f64], fitter: &F, band_confidence: f64) -> Result<CoverageReport>
where
    M: Fn(usize) -> Result<SimulatedDataset>,
    F: Fitter + ?Sized,
{
    if levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
        return Err(Error::Parameter("credible levels must lie in (0, 1)".into()));
    }
    let mut names: Vec<String> = Vec::new();
    // counts[param][level] = (n, covered)
    let mut counts: Vec<Vec<(usize, usize)>> = Vec::new();
    let mut failures = Vec::new();
    for i in 0..n_datasets {
        let fitted = make(i).and_then(|d| fitter.fit(&d, i));
        let draws = match fitted {
            Ok(d) => d,
            Err(e) => {
                failures.push((i, e.to_string()));
                continue;
            }
        };
        for p in draws {
            let idx = match names.iter().position(|n| *n == p.name) {
                Some(k) => k,
                None => {
                    names.push(p.name.clone());
                    counts.push(vec![(0, 0); levels.len()]);
                    names.len() - 1
                }
            };
            for (l, &level) in levels.iter().enumerate() {
                if let Some(ci) = equi_tailed_interval(&p.draws, level) {
                    counts[idx][l].0 += 1;
                    counts[idx][l].1 += covers(ci, p.truth) as usize;
                }
            }
        }
    }
    let mut rows = Vec::new();
    for (name, c) in names.iter().zip(&counts) {
        for (&level, &(n, covered)) in levels.iter().zip(c) {
            if n == 0 {
                continue;
            }
            let (band_lo, band_hi) = binomial_band(n as u64, level, band_confidence)?;
            rows.push(CoverageRow {
                parameter: name.clone(),
                level,
                n,
                covered,
                coverage: covered as f64 / n as f64,
                band_lo,
                band_hi,
            });
        }
    }
    Ok(CoverageReport { rows, failures, band_confidence })
}

/// Returns exact quantile grids of `N(truth + e, 1)` with `e ~ N(0, 1)`, so
/// an interval at level `L` covers the truth with probability exactly `L`.
#[derive(Clone, Copy, Debug)]
pub struct OracleFitter {
    pub seed: u64,
    pub n_draws: usize,
}

impl Fitter for OracleFitter {
    fn fit(&self, data: &SimulatedDataset, index: usize) -> Result<Vec<ParamDraws>> {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = crate::rng::stream(self.seed, &[index as u64]);
        let grid: Vec<f64> = (0..self.n_draws).map(|i| norm_quantile((i as f64 + 0.5) / self.n_draws as f64)).collect();
        let mut out = Vec::new();
        for (k, &truth) in data.truth.phi_knots.iter().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            out.push(ParamDraws { name: format!("phi[{k}]"), truth, draws: grid.iter().map(|g| truth + e + g).collect() });
        }
        Ok(out)
    }
}

/// Fits each dataset with the full sampler from a data-driven start and
/// reports `μ`, `σ`, every `φ_k` and every `ρ_k` from the post-burn-in draws.
#[derive(Clone, Debug)]
pub struct ChainFitter {
    pub chain: ChainConfig,
    pub prior: PriorSpec,
    /// Start the margins at the true GEV parameters instead of the moment fit.
    pub start_margins_at_truth: bool,
}

impl Fitter for ChainFitter {
    fn fit(&self, data: &SimulatedDataset, index: usize) -> Result<Vec<ParamDraws>> {
        let ds = Dataset::from_simulation(data)?;
        let geo = data.truth.model_geometry()?;
        let model = Model::new(ds, geo, self.prior, LikelihoodMode::Full)?;
        let gev = data.truth.gev;
        let truth_coef = MarginalCoefficients { mu0: vec![gev.mu], mu1: vec![], log_sigma: vec![gev.sigma.ln()], xi: vec![gev.xi] };
        let start = if self.start_margins_at_truth { Some(truth_coef.clone()) } else { None };
        let mut params = initial_params(&model, start)?;
        if self.chain.fixed_blocks.contains(&MarginBlock::Xi) && params.coef.xi != truth_coef.xi {
            // A held shape sits at its true value; fall back to the true
            // margins if the moment fit then leaves observations out of support.
            params.coef.xi = truth_coef.xi.clone();
            if !model.log_posterior_fresh(&params).is_ok_and(f64::is_finite) {
                params.coef = truth_coef.clone();
            }
            params.s = initial_s(&model, &params.coef, &params.phi_knots)?;
        }
        let mut cfg = self.chain.clone();
        cfg.seed = self.chain.seed.wrapping_add(index as u64);
        let out = run_chain(&model, cfg.clone(), params)?;
        let rows = out.traces.post_burn_in(cfg.burn_in);
        let col = |f: &dyn Fn(usize) -> f64| rows.clone().map(f).collect::<Vec<f64>>();
        let mut v = vec![
            ParamDraws { name: "mu".into(), truth: gev.mu, draws: col(&|r| out.traces.coef[r][0]) },
            ParamDraws { name: "sigma".into(), truth: gev.sigma, draws: col(&|r| out.traces.coef[r][1].exp()) },
        ];
        for (k, &truth) in data.truth.phi_knots.iter().enumerate() {
            v.push(ParamDraws { name: format!("phi[{k}]"), truth, draws: col(&|r| out.traces.phi[r][k]) });
        }
        for (k, &truth) in data.truth.rho_knots.iter().enumerate() {
            v.push(ParamDraws { name: format!("rho[{k}]"), truth, draws: col(&|r| out.traces.rho[r][k]) });
        }
        Ok(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn band_tails_are_exact() {
        let n = 25;
        let (lo, hi) = binomial_band(n, 0.95, 0.95).unwrap();
        let b = Binomial::new(0.95, n).unwrap();
        let (klo, khi) = ((lo * n as f64).round() as u64, (hi * n as f64).round() as u64);
        assert!(klo == 0 || b.cdf(klo - 1) <= 0.025);
        assert!(b.cdf(klo) > 0.025);
        assert!(b.sf(khi) <= 0.025);
        assert!(khi == 0 || b.sf(khi - 1) > 0.025);
        assert_eq!(khi, 25);
        assert_eq!(klo, 21);
    }

    #[test]
    fn zero_width_interval_covers_only_exact_truth() {
        assert!(!covers((1.0, 1.0), 1.0 + 1e-15));
        assert!(covers((1.0, 1.0), 1.0));
    }
}
