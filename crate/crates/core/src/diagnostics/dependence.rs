//! Tail dependence: empirical χ̂(u) and η̂(u), the regime-wise bound
//! calculator for η, and the asymptotic χ of asymptotically dependent pairs.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::margins::pareto_moment;
use crate::special::norm_cdf;

/// Paired scores for one pair of sites, stored on the upper-tail scale
/// `1 - u` so that levels close to one keep full precision.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairSample {
    pub tail_i: Vec<f64>,
    pub tail_j: Vec<f64>,
    pub meta: PairMeta,
}

/// Which sites a pair joins and how they relate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairMeta {
    pub site_i: usize,
    pub site_j: usize,
    pub distance: f64,
    pub shared_kernel: bool,
}

impl PairSample {
    /// From uniform scores `u ∈ (0,1)`.
    pub fn from_uniform(u_i: &[f64], u_j: &[f64], meta: PairMeta) -> Result<Self> {
        Self::from_tail(u_i.iter().map(|u| 1.0 - u).collect(), u_j.iter().map(|u| 1.0 - u).collect(), meta)
    }

    /// From survival scores `1 - u ∈ (0,1)`.
    pub fn from_tail(tail_i: Vec<f64>, tail_j: Vec<f64>, meta: PairMeta) -> Result<Self> {
        if tail_i.len() != tail_j.len() {
            return Err(Error::Parameter("paired score vectors differ in length".into()));
        }
        if tail_i.iter().chain(&tail_j).any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(Error::Domain("scores must lie strictly inside (0, 1)".into()));
        }
        Ok(Self { tail_i, tail_j, meta })
    }

    pub fn len(&self) -> usize {
        self.tail_i.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tail_i.is_empty()
    }

    /// Structure variable `T = min(E_i, E_j)` on unit exponential margins.
    pub fn structure_variable(&self) -> Vec<f64> {
        self.tail_i.iter().zip(&self.tail_j).map(|(a, b)| (-a.ln()).min(-b.ln())).collect()
    }
}

/// `χ̂(u)` with its binomial standard error; `chi` is `None` when no
/// marginal exceedance was observed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiEstimate {
    pub u: f64,
    pub chi: Option<f64>,
    pub se: f64,
    pub n_marginal: u64,
    pub n_joint: u64,
}

impl ChiEstimate {
    pub fn from_counts(u: f64, n_marginal: u64, n_joint: u64) -> Self {
        if n_marginal == 0 {
            return Self { u, chi: None, se: f64::NAN, n_marginal, n_joint };
        }
        let c = n_joint as f64 / n_marginal as f64;
        Self { u, chi: Some(c), se: (c * (1.0 - c) / n_marginal as f64).sqrt(), n_marginal, n_joint }
    }
}

/// `η̂(u)` with `SE = η̂/√n`; `eta` is `None` below the exceedance floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaEstimate {
    pub u: f64,
    pub eta: Option<f64>,
    pub se: f64,
    pub n_exceed: usize,
    pub threshold: f64,
}

/// Fewest exceedances for which η̂ is reported.
pub const MIN_ETA_EXCEEDANCES: usize = 50;

/// Counts `u_i > u` (pair element `i`) and joint exceedances at each level.
pub fn empirical_chi(samples: &PairSample, u_grid: &[f64]) -> Result<Vec<ChiEstimate>> {
    if u_grid.iter().any(|u| !(*u > 0.0 && *u < 1.0)) {
        return Err(Error::Domain("threshold levels must lie inside (0, 1)".into()));
    }
    Ok(u_grid
        .iter()
        .map(|&u| {
            let q = 1.0 - u;
            let (mut m, mut j) = (0u64, 0u64);
            for (a, b) in samples.tail_i.iter().zip(&samples.tail_j) {
                if *a < q {
                    m += 1;
                    if *b < q {
                        j += 1;
                    }
                }
            }
            ChiEstimate::from_counts(u, m, j)
        })
        .collect())
}

/// Mean excess of `T = min(E_i, E_j)` over its empirical `u`-quantile.
pub fn empirical_eta(samples: &PairSample, u: f64) -> Result<EtaEstimate> {
    eta_from_structure(samples.structure_variable(), samples.len(), u)
}

/// η̂ from the largest values of the structure variable out of `n_total`
/// draws. `top` must contain every value above the `u`-quantile plus the
/// quantile itself; smaller values may be omitted.
pub fn eta_from_structure(mut top: Vec<f64>, n_total: usize, u: f64) -> Result<EtaEstimate> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::Domain(format!("threshold level {u} outside (0, 1)")));
    }
    let k = ((n_total as f64) * (1.0 - u)).floor() as usize;
    if k < MIN_ETA_EXCEEDANCES {
        return Ok(EtaEstimate { u, eta: None, se: f64::NAN, n_exceed: k, threshold: f64::NAN });
    }
    if top.len() < k + 1 {
        return Err(Error::Parameter(format!("{} retained values cannot locate the top {k} of {n_total}", top.len())));
    }
    top.sort_unstable_by(|a, b| b.total_cmp(a));
    let threshold = top[k];
    let mean = top[..k].iter().map(|t| t - threshold).sum::<f64>() / k as f64;
    let eta = mean.clamp(f64::MIN_POSITIVE, 1.0);
    Ok(EtaEstimate { u, eta: Some(eta), se: eta / (k as f64).sqrt(), n_exceed: k, threshold })
}

/// Gaussian-copula coefficient of tail dependence `(1 + ρ)/2`.
pub fn eta_gaussian(rho: f64) -> Result<f64> {
    if !(rho > -1.0 && rho <= 1.0) {
        return Err(Error::Domain(format!("correlation {rho} outside (-1, 1]")));
    }
    Ok((1.0 + rho) / 2.0)
}

/// Dependence regime of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DependenceCase {
    /// Shared kernel, `α < φ_i < φ_j`: asymptotic dependence.
    LocalDependent,
    /// Shared kernel, `φ_i < φ_j < α`.
    LocalBothLight,
    /// Shared kernel, `φ_i < α < φ_j`.
    LocalMixed,
    /// Disjoint kernels, `α < φ_i < φ_j`.
    DistantBothHeavy,
    /// Disjoint kernels, `φ_i < φ_j < α`.
    DistantBothLight,
    /// Disjoint kernels, `φ_i < α < φ_j`.
    DistantMixed,
    /// Disjoint kernels and uncorrelated Gaussian parts.
    Independent,
}

impl DependenceCase {
    pub fn label(&self) -> &'static str {
        match self {
            Self::LocalDependent => "a.i",
            Self::LocalBothLight => "a.ii",
            Self::LocalMixed => "a.iii",
            Self::DistantBothHeavy => "b.i",
            Self::DistantBothLight => "b.ii",
            Self::DistantMixed => "b.iii",
            Self::Independent => "b.indep",
        }
    }

    pub fn asymptotically_dependent(&self) -> bool {
        matches!(self, Self::LocalDependent)
    }
}

/// One admissible η interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EtaInterval {
    pub case: DependenceCase,
    pub lower: f64,
    pub upper: f64,
}

/// Bounds for one pair. `lower`/`upper` span every interval in
/// `alternatives`, which holds more than one entry only on a case boundary.
/// `chi` is `Some(0)` under asymptotic independence and `None` for the
/// dependent case, whose value comes from [`theoretical_chi`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependenceBounds {
    pub case: DependenceCase,
    pub chi: Option<f64>,
    pub lower: f64,
    pub upper: f64,
    pub boundary: bool,
    pub alternatives: Vec<EtaInterval>,
}

const BOUNDARY_TOL: f64 = 1e-12;

fn near(a: f64, b: f64) -> bool {
    (a - b).abs() <= BOUNDARY_TOL * (1.0 + a.abs().max(b.abs()))
}

/// Orders the pair so that `φ_i ≤ φ_j`.
fn ordered(phi_i: f64, phi_j: f64) -> (f64, f64) {
    if phi_i <= phi_j {
        (phi_i, phi_j)
    } else {
        (phi_j, phi_i)
    }
}

/// Branch-specific intervals of every regime the inputs touch.
fn intervals(pi: f64, pj: f64, alpha: f64, ew: f64, rho: f64, shared: bool) -> Vec<EtaInterval> {
    let (ai, aj) = (pi / alpha, pj / alpha);
    let mut out = Vec::new();
    let mut push = |case, lower: f64, upper: f64| out.push(EtaInterval { case, lower, upper });
    // Regimes by position of α relative to φ_i ≤ φ_j; at equality both sides apply.
    let heavy = pi > alpha || near(pi, alpha);
    let light = pj < alpha || near(pj, alpha);
    let mixed = (pi < alpha || near(pi, alpha)) && (pj > alpha || near(pj, alpha));
    if shared {
        if heavy {
            push(DependenceCase::LocalDependent, 1.0, 1.0);
        }
        if light {
            if ew > aj || near(ew, aj) {
                push(DependenceCase::LocalBothLight, ew, ew);
            }
            if (ew > ai || near(ew, ai)) && (ew < aj || near(ew, aj)) {
                push(DependenceCase::LocalBothLight, ew, aj);
            }
            if ew < ai || near(ew, ai) {
                push(DependenceCase::LocalBothLight, ai, aj);
            }
        }
        if mixed {
            let mid = (ai + aj) / 2.0;
            let lower = 1.0 / (2.0 - ai);
            if ew < mid || near(ew, mid) {
                push(DependenceCase::LocalMixed, lower, 1.0 / ((1.0 - ai) / (2.0 * ew) + 1.0));
            }
            if ew > mid || near(ew, mid) {
                push(DependenceCase::LocalMixed, lower, 2.0 * ew / (1.0 + aj));
            }
        }
    } else {
        if heavy {
            let r = aj / ew;
            if ai > 2.0 || near(ai, 2.0) {
                push(DependenceCase::DistantBothHeavy, 0.5, 0.5);
            }
            if (ai < 2.0 || near(ai, 2.0)) && (r > 2.0 || near(r, 2.0)) {
                push(DependenceCase::DistantBothHeavy, 0.5, 1.0 / ai);
            }
            if r < 2.0 || near(r, 2.0) {
                push(DependenceCase::DistantBothHeavy, 1.0 / r, 1.0 / ai);
            }
        }
        if light {
            if ew > aj || near(ew, aj) {
                push(DependenceCase::DistantBothLight, ew, ew);
            }
            if ew < aj || near(ew, aj) {
                push(DependenceCase::DistantBothLight, ew, aj);
            }
        }
        if mixed {
            if 2.0 * ew < aj || near(2.0 * ew, aj) {
                push(DependenceCase::DistantMixed, 0.5, 1.0 / (1.0 / (1.0 + rho) + 1.0));
            }
            if 2.0 * ew > aj || near(2.0 * ew, aj) {
                push(DependenceCase::DistantMixed, 0.5, (1.0 + rho) / (1.0 + aj));
            }
        }
    }
    out
}

/// η bounds for a pair with tail parameters `φ_i, φ_j`, Gaussian-part
/// coefficient `η^W` and correlation `ρ_ij`.
///
/// Every printed interval is implemented as stated, with the reciprocal
/// forms of the mixed cases inverted. On a case boundary (`φ = α`, or `η^W`
/// on a branch threshold) all adjacent intervals are returned and
/// `boundary` is set.
pub fn eta_bounds(phi_i: f64, phi_j: f64, alpha: f64, eta_w: f64, rho_ij: f64, shared_kernel: bool) -> Result<DependenceBounds> {
    if !(phi_i > 0.0 && phi_j > 0.0 && alpha > 0.0 && alpha < 2.0) {
        return Err(Error::Parameter(format!("invalid tail parameters φ=({phi_i}, {phi_j}), α={alpha}")));
    }
    if !(eta_w > 0.0 && eta_w <= 1.0) {
        return Err(Error::Parameter(format!("η^W = {eta_w} outside (0, 1]")));
    }
    if !shared_kernel && rho_ij == 0.0 {
        let iv = EtaInterval { case: DependenceCase::Independent, lower: 0.5, upper: 0.5 };
        return Ok(DependenceBounds {
            case: iv.case,
            chi: Some(0.0),
            lower: 0.5,
            upper: 0.5,
            boundary: false,
            alternatives: vec![iv],
        });
    }
    let (pi, pj) = ordered(phi_i, phi_j);
    let alts = intervals(pi, pj, alpha, eta_w, rho_ij, shared_kernel);
    let first = alts[0];
    let lower = alts.iter().map(|a| a.lower.min(a.upper)).fold(f64::INFINITY, f64::min);
    let upper = alts.iter().map(|a| a.upper.max(a.lower)).fold(f64::NEG_INFINITY, f64::max);
    let chi = if first.case.asymptotically_dependent() { None } else { Some(0.0) };
    Ok(DependenceBounds { case: first.case, chi, lower, upper, boundary: alts.len() > 1, alternatives: alts })
}

/// Normalized kernel shares `v_k = (w_k γ_k)^α / Σ_k' (w_k' γ_k')^α`.
pub fn kernel_shares(weights: &[f64], gammas: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if weights.len() != gammas.len() {
        return Err(Error::Parameter("weights and scales differ in length".into()));
    }
    let raw: Vec<f64> = weights.iter().zip(gammas).map(|(w, g)| if *w > 0.0 { (w * g).powf(alpha) } else { 0.0 }).collect();
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Degenerate("site has no positive kernel weight".into()));
    }
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// Monte Carlo value of an asymptotic χ with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiTheory {
    pub case: DependenceCase,
    pub value: f64,
    pub se: f64,
    /// `Σ_k min(v_ki, v_kj)`.
    pub shared_mass: f64,
}

/// Normalized powers `W^{α/φ}/E(W^{α/φ})` of one bivariate Gaussian draw.
fn normalized_powers<R: Rng + ?Sized>(beta: (f64, f64), mean: (f64, f64), rho: f64, rng: &mut R) -> (f64, f64) {
    let z1: f64 = rng.sample(StandardNormal);
    let e: f64 = rng.sample(StandardNormal);
    let z2 = rho * z1 + (1.0 - rho * rho).max(0.0).sqrt() * e;
    // ln W = ln Φ(z) - ln Φ(-z)
    let lw = |z: f64| norm_cdf(z).ln() - norm_cdf(-z).ln();
    ((beta.0 * lw(z1)).exp() / mean.0, (beta.1 * lw(z2)).exp() / mean.1)
}

fn check_pair_inputs(phi: (f64, f64), alpha: f64, w: (&[f64], &[f64]), rho: f64, mc_n: usize) -> Result<()> {
    if !(phi.0 > 0.0 && phi.0 < 1.0 && phi.1 > 0.0 && phi.1 < 1.0) {
        return Err(Error::Parameter("φ must lie in (0, 1)".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("α = {alpha} outside (0, 1)")));
    }
    if w.0.len() != w.1.len() {
        return Err(Error::Parameter("weight rows differ in length".into()));
    }
    if !(rho >= -1.0 && rho <= 1.0) {
        return Err(Error::Domain(format!("correlation {rho} outside [-1, 1]")));
    }
    if mc_n < 2 {
        return Err(Error::Parameter("at least two Monte Carlo draws are required".into()));
    }
    Ok(())
}

/// Asymptotic χ in the form
/// `E{min(W_i^{α/φ_i}/E(W_i^{α/φ_i}), W_j^{α/φ_j}/E(W_j^{α/φ_j}))} · Σ_k v_{k,∧}`,
/// with `W = g(Z)` for a bivariate standard Gaussian `Z` of correlation `ρ_ij`.
///
/// The Pareto moments are those of the link in force (δ = 0), i.e.
/// `E(W^β) = πβ/sin(πβ)`. Returns 0 for light-tailed pairs and for disjoint
/// kernels. This product form is exact when `v_ki = v_kj` for every shared
/// kernel and a lower bound otherwise; see [`theoretical_chi_kernelwise`].
pub fn theoretical_chi<R: Rng + ?Sized>(
    phi_i: f64,
    phi_j: f64,
    alpha: f64,
    w_i: &[f64],
    w_j: &[f64],
    gammas: &[f64],
    rho_ij: f64,
    mc_n: usize,
    rng: &mut R,
) -> Result<ChiTheory> {
    chi_mc(phi_i, phi_j, alpha, w_i, w_j, gammas, rho_ij, mc_n, rng, false)
}

/// Asymptotic χ as `Σ_k E{min(v_ki A_i, v_kj A_j)}` with `A = W^{α/φ}/E(W^{α/φ})`,
/// the value obtained when a single knot variable drives both exceedances.
/// Agrees with [`theoretical_chi`] when the shares coincide.
pub fn theoretical_chi_kernelwise<R: Rng + ?Sized>(
    phi_i: f64,
    phi_j: f64,
    alpha: f64,
    w_i: &[f64],
    w_j: &[f64],
    gammas: &[f64],
    rho_ij: f64,
    mc_n: usize,
    rng: &mut R,
) -> Result<ChiTheory> {
    chi_mc(phi_i, phi_j, alpha, w_i, w_j, gammas, rho_ij, mc_n, rng, true)
}

#[allow(clippy::too_many_arguments)]
fn chi_mc<R: Rng + ?Sized>(
    phi_i: f64,
    phi_j: f64,
    alpha: f64,
    w_i: &[f64],
    w_j: &[f64],
    gammas: &[f64],
    rho_ij: f64,
    mc_n: usize,
    rng: &mut R,
    kernelwise: bool,
) -> Result<ChiTheory> {
    check_pair_inputs((phi_i, phi_j), alpha, (w_i, w_j), rho_ij, mc_n)?;
    let vi = kernel_shares(w_i, gammas, alpha)?;
    let vj = kernel_shares(w_j, gammas, alpha)?;
    let shared = w_i.iter().zip(w_j).any(|(a, b)| *a > 0.0 && *b > 0.0);
    let shared_mass: f64 = vi.iter().zip(&vj).map(|(a, b)| a.min(*b)).sum();
    let case = if !shared {
        if rho_ij == 0.0 {
            DependenceCase::Independent
        } else {
            eta_bounds(phi_i, phi_j, alpha, 0.5 * (1.0 + rho_ij.max(0.0)), rho_ij, false)?.case
        }
    } else if phi_i.min(phi_j) <= alpha {
        if phi_i.max(phi_j) <= alpha {
            DependenceCase::LocalBothLight
        } else {
            DependenceCase::LocalMixed
        }
    } else {
        DependenceCase::LocalDependent
    };
    if case != DependenceCase::LocalDependent {
        return Ok(ChiTheory { case, value: 0.0, se: 0.0, shared_mass });
    }
    let beta = (alpha / phi_i, alpha / phi_j);
    let mean = (pareto_moment(beta.0, 0.0)?, pareto_moment(beta.1, 0.0)?);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..mc_n {
        let (a, b) = normalized_powers(beta, mean, rho_ij, rng);
        let m = if kernelwise {
            vi.iter().zip(&vj).map(|(x, y)| (x * a).min(y * b)).sum::<f64>()
        } else {
            a.min(b) * shared_mass
        };
        s += m;
        s2 += m * m;
    }
    let n = mc_n as f64;
    let mean_m = s / n;
    let var = ((s2 / n - mean_m * mean_m) * n / (n - 1.0)).max(0.0);
    Ok(ChiTheory { case, value: mean_m.clamp(0.0, 1.0), se: (var / n).sqrt(), shared_mass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn meta() -> PairMeta {
        PairMeta::default()
    }

    #[test]
    fn chi_comonotone_and_independent() {
        let mut rng = stream(1, &[]);
        let u: Vec<f64> = (0..200_000).map(|_| rng.random::<f64>().max(1e-300)).collect();
        let v: Vec<f64> = (0..200_000).map(|_| rng.random::<f64>().max(1e-300)).collect();
        let s = PairSample::from_tail(u.clone(), u.clone(), meta()).unwrap();
        for c in empirical_chi(&s, &[0.5, 0.9, 0.99]).unwrap() {
            assert_eq!(c.chi, Some(1.0));
        }
        let s = PairSample::from_tail(u, v, meta()).unwrap();
        for c in empirical_chi(&s, &[0.5, 0.9, 0.99]).unwrap() {
            let x = c.chi.unwrap();
            assert!((x - (1.0 - c.u)).abs() < 3.0 * c.se.max(1e-3), "{c:?}");
        }
        let e = empirical_chi(&PairSample::from_tail(vec![0.9], vec![0.9], meta()).unwrap(), &[0.5]).unwrap();
        assert_eq!(e[0].chi, None);
    }

    #[test]
    fn eta_exact_cases() {
        let mut rng = stream(2, &[]);
        let n = 200_000;
        let u: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
        let v: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
        let e = empirical_eta(&PairSample::from_tail(u.clone(), u.clone(), meta()).unwrap(), 0.95).unwrap();
        assert!((e.eta.unwrap() - 1.0).abs() < 3.0 * e.se);
        let e = empirical_eta(&PairSample::from_tail(u, v, meta()).unwrap(), 0.95).unwrap();
        assert!((e.eta.unwrap() - 0.5).abs() < 3.0 * e.se, "{e:?}");
        let few = PairSample::from_tail(vec![0.5; 100], vec![0.5; 100], meta()).unwrap();
        assert_eq!(empirical_eta(&few, 0.95).unwrap().eta, None);
    }

    #[test]
    fn eta_gaussian_matches_simulation() {
        assert_eq!(eta_gaussian(0.0).unwrap(), 0.5);
        assert!((eta_gaussian(1.0).unwrap() - 1.0).abs() < 1e-15);
        // The mean-excess estimator targets the finite-level mean excess of
        // T = min(E_1, E_2), which under the Gaussian copula sits below the
        // limit (1 + ρ)/2 because of the slowly varying factor t^{-ρ/(1+ρ)}
        // in the joint tail. The oracle is that finite-level value by
        // quadrature; the limit is checked to be the larger of the two.
        let rho: f64 = 0.5;
        let target = gaussian_mean_excess(rho, 0.01);
        assert!(target < 0.75 && target > 0.65, "{target}");
        let mut rng = stream(3, &[]);
        let n = 1_000_000;
        let (mut a, mut b) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for _ in 0..n {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rho * z1 + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
            a.push(norm_cdf(-z1));
            b.push(norm_cdf(-z2));
        }
        let e = empirical_eta(&PairSample::from_tail(a, b, meta()).unwrap(), 0.99).unwrap();
        assert!((e.eta.unwrap() - target).abs() < 3.0 * e.se, "{e:?} vs {target}");
    }

    /// Exact `E[T - t | T > t]` at the level where `P(T > t) = p`, for
    /// `T = min(E_1, E_2)` of a Gaussian pair with correlation `ρ`.
    fn gaussian_mean_excess(rho: f64, p: f64) -> f64 {
        use crate::quadrature::{integrate, QuadOptions};
        use crate::special::{norm_pdf, norm_quantile_upper, norm_sf};
        let opts = QuadOptions { epsabs: 0.0, epsrel: 1e-10, max_intervals: 2000 };
        let s = (1.0 - rho * rho).sqrt();
        // P(Z_1 > a, Z_2 > a)
        let orthant = |a: f64| integrate(|x: f64| norm_pdf(x) * norm_sf((a - rho * x) / s), a, a + 40.0, opts).unwrap().value;
        let joint = |t: f64| orthant(norm_quantile_upper((-t).exp()));
        let (mut lo, mut hi) = (0.0, 30.0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if joint(mid) > p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t0 = 0.5 * (lo + hi);
        integrate(|t: f64| joint(t), t0, t0 + 60.0, opts).unwrap().value / joint(t0)
    }

    #[test]
    fn bound_branches() {
        let a = 0.5;
        // b.ii equality branch
        let b = eta_bounds(0.1, 0.2, a, 0.6, 0.2, false).unwrap();
        assert_eq!(b.case, DependenceCase::DistantBothLight);
        assert_eq!((b.lower, b.upper), (0.6, 0.6));
        // b.i with φ_i/α > 2 impossible for φ < 1 when α = 0.5; use α = 0.3
        let b = eta_bounds(0.7, 0.9, 0.3, 0.6, 0.2, false).unwrap();
        assert_eq!((b.case, b.lower, b.upper), (DependenceCase::DistantBothHeavy, 0.5, 0.5));
        // a.i
        let b = eta_bounds(0.8, 0.7, a, 0.9, 0.8, true).unwrap();
        assert_eq!((b.case, b.lower, b.upper, b.chi), (DependenceCase::LocalDependent, 1.0, 1.0, None));
        // a.ii, all three branches
        let b = eta_bounds(0.2, 0.3, a, 0.7, 0.4, true).unwrap();
        assert_eq!((b.lower, b.upper), (0.7, 0.7));
        let b = eta_bounds(0.2, 0.4, a, 0.6, 0.2, true).unwrap();
        assert_eq!((b.lower, b.upper), (0.6, 0.8));
        let b = eta_bounds(0.3, 0.45, a, 0.55, 0.1, true).unwrap();
        assert!((b.lower - 0.6).abs() < 1e-15 && (b.upper - 0.9).abs() < 1e-15);
        // a.iii, low η^W branch: 1/η ∈ [(1-0.6)/(2·0.55)+1, 2-0.6]
        let b = eta_bounds(0.3, 0.8, a, 0.55, 0.1, true).unwrap();
        assert_eq!(b.case, DependenceCase::LocalMixed);
        assert!((b.lower - 1.0 / 1.4).abs() < 1e-15);
        assert!((b.upper - 1.0 / (0.4 / 1.1 + 1.0)).abs() < 1e-15);
        // b.iii
        let b = eta_bounds(0.3, 0.8, a, 0.55, 0.1, false).unwrap();
        assert_eq!(b.case, DependenceCase::DistantMixed);
        assert_eq!(b.lower, 0.5);
        assert!((b.upper - 1.0 / (1.0 / 1.1 + 1.0)).abs() < 1e-15);
        // independence
        let b = eta_bounds(0.3, 0.8, a, 0.5, 0.0, false).unwrap();
        assert_eq!((b.case, b.lower, b.upper), (DependenceCase::Independent, 0.5, 0.5));
        for b in [eta_bounds(0.2, 0.45, a, 0.6, 0.2, true).unwrap(), eta_bounds(0.3, 0.9, a, 0.9, 0.8, true).unwrap()] {
            assert!(b.lower <= b.upper);
        }
    }

    #[test]
    fn boundary_inputs_are_flagged() {
        let b = eta_bounds(0.5, 0.7, 0.5, 0.6, 0.2, true).unwrap();
        assert!(b.boundary);
        assert!(b.alternatives.iter().any(|a| a.case == DependenceCase::LocalDependent));
        assert!(b.alternatives.iter().any(|a| a.case == DependenceCase::LocalMixed));
        let b = eta_bounds(0.1, 0.3, 0.5, 0.6, 0.2, false).unwrap();
        assert!(b.boundary && b.alternatives.len() == 2);
    }

    #[test]
    fn theoretical_chi_branches() {
        let mut rng = stream(4, &[]);
        let w = [1.0, 0.0];
        let g = [0.5, 0.5];
        // Identical sites: min of identical ratios, whose mean is one.
        let t = theoretical_chi(0.7, 0.7, 0.5, &w, &w, &g, 1.0, 200_000, &mut rng).unwrap();
        assert!((t.value - 1.0).abs() < 4.0 * t.se, "{t:?}");
        assert_eq!(t.shared_mass, 1.0);
        let t = theoretical_chi(0.7, 0.8, 0.5, &w, &[0.0, 1.0], &g, 0.5, 100, &mut rng).unwrap();
        assert_eq!(t.value, 0.0);
        let t = theoretical_chi(0.4, 0.8, 0.5, &w, &w, &g, 0.5, 100, &mut rng).unwrap();
        assert_eq!((t.value, t.case), (0.0, DependenceCase::LocalMixed));
        let t = theoretical_chi(0.6, 0.9, 0.5, &[0.3, 0.7], &[0.6, 0.4], &g, 0.3, 50_000, &mut rng).unwrap();
        assert!(t.value > 0.0 && t.value < 1.0);
        let k = theoretical_chi_kernelwise(0.6, 0.9, 0.5, &[0.3, 0.7], &[0.6, 0.4], &g, 0.3, 50_000, &mut rng).unwrap();
        assert!(k.value >= t.value - 4.0 * (k.se + t.se));
    }

    #[test]
    fn single_kernel_matches_direct_formula() {
        // K = 1: χ = E[min(W_i^β/E, W_j^β/E)] with E(W^β) = πβ/sin(πβ).
        let (phi, rho, n) = (0.7, 0.6, 400_000);
        let t = theoretical_chi(phi, phi, 0.5, &[1.0], &[1.0], &[0.5], rho, n, &mut stream(5, &[])).unwrap();
        let beta: f64 = 0.5 / phi;
        let m = std::f64::consts::PI * beta / (std::f64::consts::PI * beta).sin();
        let mut rng = stream(6, &[]);
        let mut acc = 0.0;
        for _ in 0..n {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rho * z1 + (1.0 - rho * rho).sqrt() * rng.sample::<f64, _>(StandardNormal);
            let u1 = norm_cdf(z1);
            let u2 = norm_cdf(z2);
            let w1 = u1 / (1.0 - u1);
            let w2 = u2 / (1.0 - u2);
            acc += w1.powf(beta).min(w2.powf(beta)) / m;
        }
        let direct = acc / n as f64;
        assert!((t.value - direct).abs() < 4.0 * t.se * 2f64.sqrt(), "{} vs {direct}", t.value);
    }

    #[test]
    fn structure_filter_matches_full_sample() {
        let mut rng = stream(7, &[]);
        let n = 10_000;
        let t: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 5.0).collect();
        let full = eta_from_structure(t.clone(), n, 0.95).unwrap();
        let kept: Vec<f64> = t.into_iter().filter(|x| *x > 4.0).collect();
        let part = eta_from_structure(kept, n, 0.95).unwrap();
        assert_eq!(full, part);
    }
}
