//! Unconditional simulation of the process and of GEV-margin datasets,
//! the coverage scenarios, and the streaming pairwise tail harness.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::dependence::{
    eta_bounds, eta_from_structure, eta_gaussian, theoretical_chi, ChiEstimate, ChiTheory, DependenceBounds, DependenceCase,
    EtaEstimate, PairMeta,
};
use crate::error::{Error, Result};
use crate::gp::{build_covariance, CovarianceFactor};
use crate::kernel::{dist, KernelConfig, KnotGrid, Point};
use crate::margins::{gev_quantile_pq, link_g, GevParams, MarginalTable, MixtureMarginal};
use crate::model::{GeometrySpec, ModelGeometry};
use crate::rng::stream;
use crate::stable::draw_levy;

const TAG_SITES: u64 = 0x5177E5;
const TAG_FIELD: u64 = 0xF1E1D;
const TAG_HARNESS: u64 = 0x4A2E55;

/// Everything needed to simulate one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub sites: Vec<Point>,
    pub geometry: GeometrySpec,
    pub phi_knots: Vec<f64>,
    pub rho_knots: Vec<f64>,
    pub gev: GevParams,
    pub n_times: usize,
    pub seed: u64,
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        let k = self.geometry.knots.len();
        let kr = self.geometry.rho_knots.as_ref().map_or(k, |g| g.len());
        if self.phi_knots.len() != k || self.rho_knots.len() != kr {
            return Err(Error::Parameter(format!(
                "{} φ and {} ρ knot values for {k} and {kr} knots",
                self.phi_knots.len(),
                self.rho_knots.len()
            )));
        }
        if self.phi_knots.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Parameter("knot φ values must lie in (0, 1)".into()));
        }
        if self.rho_knots.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::Parameter("knot ρ values must be positive".into()));
        }
        if self.geometry.gammas.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::Parameter("knot scales γ must be positive".into()));
        }
        if self.n_times == 0 {
            return Err(Error::Parameter("at least one replicate is required".into()));
        }
        self.geometry.kernel.validate()
    }

    pub fn model_geometry(&self) -> Result<ModelGeometry> {
        self.validate()?;
        ModelGeometry::new(self.sites.clone(), &self.geometry)
    }
}

/// Observations and every latent layer of one simulation, all `D × T`
/// except `s` which is `K × T`.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulatedDataset {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub s: DMatrix<f64>,
    pub phi: Vec<f64>,
    pub rho: Vec<f64>,
    pub bar_gamma: Vec<f64>,
    pub truth: ProcessSpec,
}

/// Per-site marginal tables for the `φ(s), γ̄(s)` surfaces.
pub fn site_tables(phi: &[f64], bar_gamma: &[f64]) -> Result<Vec<MarginalTable>> {
    phi.iter()
        .zip(bar_gamma)
        .map(|(&p, &g)| MarginalTable::new(MixtureMarginal::new(p, g)?))
        .collect()
}

/// Draws `S`, `R`, `Z`, composes `X` and transforms to GEV margins.
/// Replicates use independent streams keyed by `(seed, t)`.
pub fn simulate_field(spec: &ProcessSpec) -> Result<SimulatedDataset> {
    let geo = spec.model_geometry()?;
    let (d, k, nt) = (geo.n_sites(), geo.n_knots(), spec.n_times);
    let phi = geo.phi_surface(&spec.phi_knots);
    let rho = geo.rho_surface(&spec.rho_knots);
    let factor = build_covariance(&geo.sites, &rho, geo.nu)?;
    let tables = site_tables(&phi, &geo.bar_gamma)?;
    let cols: Vec<Result<[Vec<f64>; 5]>> = (0..nt)
        .into_par_iter()
        .map(|t| {
            let mut rng = stream(spec.seed, &[TAG_FIELD, t as u64]);
            let s: Vec<f64> = geo.gammas.iter().map(|&g| draw_levy(g, 0.0, &mut rng)).collect();
            let z = correlated_normals(&factor, &mut rng);
            let mut r = vec![0.0; d];
            let mut x = vec![0.0; d];
            let mut y = vec![0.0; d];
            for j in 0..d {
                r[j] = geo.r_value(j, &s);
                x[j] = r[j].powf(phi[j]) * link_g(z[j], 0.0);
                let v = tables[j].eval(x[j]);
                y[j] = gev_quantile_pq(v.cdf, v.sf, &spec.gev)?;
            }
            Ok([s, r, z, x, y])
        })
        .collect();
    let mut out = [
        DMatrix::zeros(k, nt),
        DMatrix::zeros(d, nt),
        DMatrix::zeros(d, nt),
        DMatrix::zeros(d, nt),
        DMatrix::zeros(d, nt),
    ];
    for (t, c) in cols.into_iter().enumerate() {
        for (m, v) in out.iter_mut().zip(c?) {
            m.column_mut(t).copy_from_slice(&v);
        }
    }
    let [s, r, z, x, y] = out;
    Ok(SimulatedDataset { y, x, r, z, s, phi, rho, bar_gamma: geo.bar_gamma.clone(), truth: spec.clone() })
}

fn correlated_normals<R: Rng + ?Sized>(factor: &CovarianceFactor, rng: &mut R) -> Vec<f64> {
    let d = factor.dim();
    let e: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let l = factor.lower();
    (0..d).map(|i| (0..=i).map(|c| l[(i, c)] * e[c]).sum()).collect()
}

/// `n` sites uniform on `[lo, hi]²`.
pub fn uniform_sites(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<Point> {
    let mut rng = stream(seed, &[TAG_SITES]);
    (0..n).map(|_| [lo + (hi - lo) * rng.random::<f64>(), lo + (hi - lo) * rng.random::<f64>()]).collect()
}

/// Knot values of the three coverage scenarios on the 3 × 3 grid, in
/// row-major knot order: constant, diagonal ramp, checkerboard.
pub fn scenario_surfaces(id: u8) -> Result<(Vec<f64>, Vec<f64>)> {
    let cells = (0..9).map(|k| (k % 3, k / 3));
    match id {
        1 => Ok((vec![0.35; 9], vec![0.6; 9])),
        2 => Ok(cells
            .map(|(ix, iy)| {
                let f = (ix + iy) as f64 / 4.0;
                (0.3 + 0.4 * f, 0.2 + 0.8 * f)
            })
            .unzip()),
        3 => Ok(cells
            .map(|(ix, iy)| if (ix + iy) % 2 == 0 { (0.35, 0.2) } else { (0.65, 1.0) })
            .unzip()),
        _ => Err(Error::Config(format!("unknown scenario {id}; expected 1, 2 or 3"))),
    }
}

/// Coverage scenario on `[0,10]²`: 500 uniform sites, 64 replicates, 9 knots,
/// Wendland radius 4, bandwidth 4, γ = 0.5, ν = 0.5, GEV(0, 1, 0.2).
pub fn build_scenario(id: u8, seed: u64) -> Result<ProcessSpec> {
    let (phi_knots, rho_knots) = scenario_surfaces(id)?;
    Ok(ProcessSpec {
        sites: uniform_sites(500, 0.0, 10.0, seed),
        geometry: GeometrySpec {
            knots: KnotGrid::regular(3, 3, (0.0, 10.0), (0.0, 10.0))?,
            rho_knots: None,
            kernel: KernelConfig { wendland_radius: 4.0, wendland_exponent: 2, bandwidth_phi: 4.0, bandwidth_rho: 4.0 },
            gammas: vec![0.5; 9],
            nu: 0.5,
        },
        phi_knots,
        rho_knots,
        gev: GevParams::new(0.0, 1.0, 0.2)?,
        n_times: 64,
        seed,
    })
}

/// Scenario with `d` sites and `t` replicates instead of 500 × 64.
pub fn build_scenario_scaled(id: u8, seed: u64, d: usize, t: usize) -> Result<ProcessSpec> {
    let mut spec = build_scenario(id, seed)?;
    spec.sites = uniform_sites(d, 0.0, 10.0, seed);
    spec.n_times = t;
    Ok(spec)
}

/// Settings of the streaming tail harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub n_draws: u64,
    pub batch_size: u64,
    pub u_grid: Vec<f64>,
    pub eta_u: f64,
    /// Structure-variable values are retained only when both survival
    /// scores fall below this level.
    pub retain_tail: f64,
    pub seed: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            n_draws: 10_000_000,
            batch_size: 100_000,
            u_grid: vec![0.9, 0.99, 0.999, 0.9999],
            eta_u: 0.99,
            retain_tail: 0.2,
            seed: 1,
        }
    }
}

/// Harness output for one pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairTailTable {
    pub meta: PairMeta,
    pub phi: (f64, f64),
    pub rho_ij: f64,
    pub chi: Vec<ChiEstimate>,
    pub eta: EtaEstimate,
}

/// Everything the harness needs about the sites involved in the pairs.
struct HarnessModel {
    geo: ModelGeometry,
    phi: Vec<f64>,
    factor: CovarianceFactor,
    tables: Vec<MarginalTable>,
}

impl HarnessModel {
    fn new(spec: &ProcessSpec) -> Result<Self> {
        let geo = spec.model_geometry()?;
        let phi = geo.phi_surface(&spec.phi_knots);
        let rho = geo.rho_surface(&spec.rho_knots);
        let factor = build_covariance(&geo.sites, &rho, geo.nu)?;
        let tables = site_tables(&phi, &geo.bar_gamma)?;
        Ok(Self { geo, phi, factor, tables })
    }

    /// Survival scores `1 - F_X(X)` at every site for one draw.
    fn draw_tail<R: Rng + ?Sized>(&self, rng: &mut R, s: &mut [f64], out: &mut [f64]) {
        for (sk, &g) in s.iter_mut().zip(&self.geo.gammas) {
            *sk = draw_levy(g, 0.0, rng);
        }
        let z = correlated_normals(&self.factor, rng);
        for j in 0..out.len() {
            let x = self.geo.r_value(j, s).powf(self.phi[j]) * link_g(z[j], 0.0);
            out[j] = self.tables[j].survival(x).max(f64::MIN_POSITIVE);
        }
    }
}

/// Streamed counts of one batch.
struct BatchTally {
    marginal: Vec<Vec<u64>>,
    joint: Vec<Vec<u64>>,
    retained: Vec<Vec<f64>>,
}

fn check_harness(spec: &ProcessSpec, pairs: &[(usize, usize)], cfg: &HarnessConfig) -> Result<()> {
    if cfg.n_draws < 100_000 {
        return Err(Error::Parameter(format!("harness needs at least 1e5 draws, got {}", cfg.n_draws)));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Parameter("batch size must be positive".into()));
    }
    if pairs.iter().any(|&(i, j)| i >= spec.sites.len() || j >= spec.sites.len() || i == j) {
        return Err(Error::Parameter("pair index out of range or repeated site".into()));
    }
    if cfg.u_grid.iter().chain([&cfg.eta_u]).any(|u| !(*u > 0.0 && *u < 1.0)) {
        return Err(Error::Domain("threshold levels must lie in (0, 1)".into()));
    }
    if !(cfg.retain_tail > 0.0 && cfg.retain_tail <= 1.0) {
        return Err(Error::Parameter("retain_tail must lie in (0, 1]".into()));
    }
    Ok(())
}

fn batch_bounds(cfg: &HarnessConfig) -> Vec<(u64, u64)> {
    let nb = cfg.n_draws.div_ceil(cfg.batch_size);
    (0..nb).map(|b| (b, cfg.batch_size.min(cfg.n_draws - b * cfg.batch_size))).collect()
}

/// Empirical χ̂(u) and η̂ for each pair from `n_draws` unconditional draws,
/// accumulated in batches without storing the draws. Uniform scores come
/// from the exact marginal law at each site. Batches run in parallel on
/// independent streams and are merged in batch order.
pub fn pairwise_tail_harness(spec: &ProcessSpec, pairs: &[(usize, usize)], cfg: &HarnessConfig) -> Result<Vec<PairTailTable>> {
    check_harness(spec, pairs, cfg)?;
    let model = HarnessModel::new(spec)?;
    let (np, nu) = (pairs.len(), cfg.u_grid.len());
    let levels: Vec<f64> = cfg.u_grid.iter().map(|u| 1.0 - u).collect();
    let tallies: Vec<BatchTally> = batch_bounds(cfg)
        .into_par_iter()
        .map(|(b, n)| {
            let mut rng = stream(cfg.seed, &[TAG_HARNESS, b]);
            let mut s = vec![0.0; model.geo.n_knots()];
            let mut q = vec![0.0; model.geo.n_sites()];
            let mut t = BatchTally { marginal: vec![vec![0; nu]; np], joint: vec![vec![0; nu]; np], retained: vec![Vec::new(); np] };
            for _ in 0..n {
                model.draw_tail(&mut rng, &mut s, &mut q);
                for (p, &(i, j)) in pairs.iter().enumerate() {
                    let (a, c) = (q[i], q[j]);
                    for (l, &lv) in levels.iter().enumerate() {
                        if a < lv {
                            t.marginal[p][l] += 1;
                            if c < lv {
                                t.joint[p][l] += 1;
                            }
                        }
                    }
                    if a < cfg.retain_tail && c < cfg.retain_tail {
                        t.retained[p].push((-a.ln()).min(-c.ln()));
                    }
                }
            }
            t
        })
        .collect();
    let cov = model.factor.matrix();
    let mut out = Vec::with_capacity(np);
    for (p, &(i, j)) in pairs.iter().enumerate() {
        let mut marginal = vec![0u64; nu];
        let mut joint = vec![0u64; nu];
        let mut retained = Vec::new();
        for t in &tallies {
            for l in 0..nu {
                marginal[l] += t.marginal[p][l];
                joint[l] += t.joint[p][l];
            }
            retained.extend_from_slice(&t.retained[p]);
        }
        let chi = (0..nu).map(|l| ChiEstimate::from_counts(cfg.u_grid[l], marginal[l], joint[l])).collect();
        let eta = eta_from_structure(retained, cfg.n_draws as usize, cfg.eta_u)?;
        out.push(PairTailTable {
            meta: pair_meta(&model.geo, i, j),
            phi: (model.phi[i], model.phi[j]),
            rho_ij: cov[(i, j)] / (cov[(i, i)] * cov[(j, j)]).sqrt(),
            chi,
            eta,
        });
    }
    Ok(out)
}

/// Pair geometry: distance and whether any kernel covers both sites.
pub fn pair_meta(geo: &ModelGeometry, i: usize, j: usize) -> PairMeta {
    let shared = geo.wendland.active(i).iter().any(|k| geo.wendland.active(j).contains(k));
    PairMeta { site_i: i, site_j: j, distance: dist(&geo.sites[i], &geo.sites[j]), shared_kernel: shared }
}

/// The survival scores the harness would stream, for batch cross-checks.
pub fn harness_draws(spec: &ProcessSpec, cfg: &HarnessConfig) -> Result<Vec<Vec<f64>>> {
    check_harness(spec, &[], cfg)?;
    let model = HarnessModel::new(spec)?;
    let batches: Vec<Vec<Vec<f64>>> = batch_bounds(cfg)
        .into_par_iter()
        .map(|(b, n)| {
            let mut rng = stream(cfg.seed, &[TAG_HARNESS, b]);
            let mut s = vec![0.0; model.geo.n_knots()];
            (0..n)
                .map(|_| {
                    let mut q = vec![0.0; model.geo.n_sites()];
                    model.draw_tail(&mut rng, &mut s, &mut q);
                    q
                })
                .collect()
        })
        .collect();
    Ok(batches.into_iter().flatten().collect())
}

/// A pair of sites in [`theorem_design`] and the regime it is meant to realize.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignPair {
    pub i: usize,
    pub j: usize,
    pub case: DependenceCase,
}

/// Nine knots on a 3 × 3 grid of `[0,10]²`, Wendland radius 4, with corner
/// sites covered by a single kernel and narrow (0.5) smoothing bandwidths so
/// that each site inherits the φ and ρ of its nearest knot. One pair per
/// dependence regime:
///
/// * bottom-left corner, φ = 0.95, strongly correlated: local dependence
/// * bottom edge, φ = 0.4 / 0.3, nearly uncorrelated: local, both light
/// * top edge, φ ≈ 0.84 / 0.1, correlated: local, mixed
/// * left column ends, φ = 0.95 / 0.85: distant, both heavy
/// * right column ends, φ = 0.3 / 0.1: distant, both light
/// * top row ends, φ = 0.85 / 0.1: distant, mixed
pub fn theorem_design() -> Result<(ProcessSpec, Vec<DesignPair>)> {
    let (big, small) = (20.0, 0.05);
    let spec = ProcessSpec {
        sites: vec![
            [0.2, 0.2],
            [0.9, 0.3],
            [6.0, 1.5],
            [8.0, 1.0],
            [3.0, 8.3],
            [5.5, 8.3],
            [0.2, 9.8],
            [9.6, 0.3],
            [9.8, 9.8],
            [9.0, 9.8],
        ],
        geometry: GeometrySpec {
            knots: KnotGrid::regular(3, 3, (0.0, 10.0), (0.0, 10.0))?,
            rho_knots: None,
            kernel: KernelConfig { wendland_radius: 4.0, wendland_exponent: 2, bandwidth_phi: 0.5, bandwidth_rho: 0.5 },
            gammas: vec![0.5; 9],
            nu: 0.5,
        },
        phi_knots: vec![0.95, 0.4, 0.3, 0.85, 0.5, 0.3, 0.85, 0.1, 0.1],
        rho_knots: vec![big, small, small, big, small, small, big, big, big],
        gev: GevParams::new(0.0, 1.0, 0.2)?,
        n_times: 1,
        seed: 1,
    };
    use DependenceCase::*;
    let pairs = [
        (0, 1, LocalDependent),
        (2, 3, LocalBothLight),
        (4, 5, LocalMixed),
        (0, 6, DistantBothHeavy),
        (7, 8, DistantBothLight),
        (6, 9, DistantMixed),
    ]
    .into_iter()
    .map(|(i, j, case)| DesignPair { i, j, case })
    .collect();
    Ok((spec, pairs))
}

/// Harness estimates set against the theoretical value or interval.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairVerdict {
    pub table: PairTailTable,
    pub bounds: DependenceBounds,
    pub chi_theory: ChiTheory,
    /// `χ̂` at the highest level of the grid.
    pub chi_hat: f64,
    pub chi_se: f64,
    pub chi_ok: bool,
    pub eta_ok: bool,
}

/// Compares each harness table with the bounds for its pair: `χ̂` at the
/// top level must be within 3 combined standard errors of the theoretical
/// χ, and `η̂` within 3 standard errors of the η interval.
pub fn theorem_verdicts(spec: &ProcessSpec, tables: &[PairTailTable], alpha: f64, mc_n: usize, seed: u64) -> Result<Vec<PairVerdict>> {
    let geo = spec.model_geometry()?;
    tables
        .iter()
        .enumerate()
        .map(|(p, t)| {
            let (i, j) = (t.meta.site_i, t.meta.site_j);
            let eta_w = eta_gaussian(t.rho_ij.clamp(-0.999_999, 1.0))?;
            let bounds = eta_bounds(t.phi.0, t.phi.1, alpha, eta_w, t.rho_ij, t.meta.shared_kernel)?;
            let mut rng = stream(seed, &[TAG_HARNESS, p as u64]);
            let chi_theory = theoretical_chi(t.phi.0, t.phi.1, alpha, geo.wendland.row(i), geo.wendland.row(j), &geo.gammas, t.rho_ij, mc_n, &mut rng)?;
            let top = t.chi.last().ok_or_else(|| Error::Parameter("empty threshold grid".into()))?;
            let (chi_hat, chi_se) = (top.chi.unwrap_or(f64::NAN), top.se);
            let chi_ok = (chi_hat - chi_theory.value).abs() <= 3.0 * chi_se.hypot(chi_theory.se);
            let eta_ok = match t.eta.eta {
                Some(e) => e >= bounds.lower - 3.0 * t.eta.se && e <= bounds.upper + 3.0 * t.eta.se,
                None => false,
            };
            Ok(PairVerdict { table: t.clone(), bounds, chi_theory, chi_hat, chi_se, chi_ok, eta_ok })
        })
        .collect()
}
