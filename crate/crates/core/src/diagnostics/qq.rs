//! Gumbel-scale QQ summaries of fitted margins with a predictive envelope.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::{gev_cdf, gev_quantile, GevParams};
use crate::rng::stream;

/// Fewest observations for a QQ summary.
pub const MIN_QQ_OBS: usize = 10;

/// One plotting position: theoretical and empirical Gumbel quantiles and the
/// pointwise 95% predictive envelope of the empirical one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QqPoint {
    pub theoretical: f64,
    pub empirical: f64,
    pub lower: f64,
    pub upper: f64,
}

fn gumbel(u: f64) -> f64 {
    -(-u.ln()).ln()
}

fn averaged_cdf(y: f64, draws: &[Vec<GevParams>], i: usize) -> f64 {
    draws.iter().map(|d| gev_cdf(y, &d[i])).sum::<f64>() / draws.len() as f64
}

/// `obs[i]` is scored against the posterior-averaged CDF built from
/// `draws[d][i]` (one GEV per draw and observation) and mapped to the
/// Gumbel scale. The envelope comes from `n_rep` datasets resampled from the
/// predictive distribution, transformed the same way.
pub fn qq_gumbel(obs: &[f64], draws: &[Vec<GevParams>], n_rep: usize, seed: u64) -> Result<Vec<QqPoint>> {
    let idx: Vec<usize> = (0..obs.len()).filter(|&i| !obs[i].is_nan()).collect();
    let n = idx.len();
    if n < MIN_QQ_OBS {
        return Err(Error::Degenerate(format!("{n} observations; at least {MIN_QQ_OBS} are needed")));
    }
    if draws.is_empty() || draws.iter().any(|d| d.len() != obs.len()) {
        return Err(Error::Parameter("need at least one draw with one GEV per observation".into()));
    }
    let score = |y: f64, i: usize| gumbel(averaged_cdf(y, draws, i).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0));
    let mut emp: Vec<f64> = idx.iter().map(|&i| score(obs[i], i)).collect();
    emp.sort_by(f64::total_cmp);
    let mut reps: Vec<Vec<f64>> = vec![Vec::with_capacity(n_rep); n];
    for r in 0..n_rep {
        let mut rng = stream(seed, &[r as u64]);
        let d = &draws[rng.random_range(0..draws.len())];
        let mut sim: Vec<f64> = idx
            .iter()
            .map(|&i| {
                let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
                gev_quantile(u, &d[i]).map(|y| score(y, i))
            })
            .collect::<Result<_>>()?;
        sim.sort_by(f64::total_cmp);
        for (k, v) in sim.into_iter().enumerate() {
            reps[k].push(v);
        }
    }
    let pick = |v: &[f64], p: f64| v[((p * (v.len() - 1) as f64).round() as usize).min(v.len() - 1)];
    Ok(emp
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let mut v = reps[k].clone();
            v.sort_by(f64::total_cmp);
            let (lower, upper) = if v.is_empty() { (f64::NAN, f64::NAN) } else { (pick(&v, 0.025), pick(&v, 0.975)) };
            QqPoint { theoretical: gumbel((k as f64 + 1.0) / (n as f64 + 1.0)), empirical: e, lower, upper }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn too_few_observations() {
        let g = GevParams::new(0.0, 1.0, 0.1).unwrap();
        assert!(qq_gumbel(&[1.0; 5], &[vec![g; 5]], 10, 1).is_err());
    }
}
