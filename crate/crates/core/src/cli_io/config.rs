//! Run configuration in TOML, keyed by a `kKrRbB[m]` model name.
//!
//! `k` is the number of knots (shared by `S`, `φ` and `ρ`), `r` the Wendland
//! radius, `b` the Gaussian smoothing parameter and a trailing `m` freezes
//! every marginal coefficient at its starting value. `b` enters the kernel as
//! `exp(-d²/(2b))`, so its effective range (weight 0.05) is `√(2 b ln 20)`.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{ChainConfig, PriorSpec};
use crate::kernel::{KernelConfig, KnotGrid, Point};
use crate::margins::{GevParams, MarginBlock, MarginalCoefficients};
use crate::model::GeometrySpec;

/// Weight level at which a Gaussian kernel counts as vanished.
pub const EFFECTIVE_WEIGHT: f64 = 0.05;

/// Name of the single-knot stationary model.
pub const STATIONARY_NAME: &str = "hw-stationary";

/// Distance at which `exp(-d²/(2b))` falls to [`EFFECTIVE_WEIGHT`].
pub fn gaussian_effective_range(b: f64) -> f64 {
    (2.0 * b * (1.0 / EFFECTIVE_WEIGHT).ln()).sqrt()
}

/// The same distance if `b` were read as a standard deviation, `exp(-d²/(2b²))`.
pub fn gaussian_effective_range_sd(b: f64) -> f64 {
    b * (2.0 * (1.0 / EFFECTIVE_WEIGHT).ln()).sqrt()
}

/// Parsed model name.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelName {
    /// One knot whose kernels cover the whole domain.
    Stationary,
    Knots { knots: usize, radius: f64, bandwidth: f64, fixed_margins: bool },
}

/// What a model name implies, in the units of the configuration table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModelSummary {
    pub knots: usize,
    pub rho_knots: usize,
    pub range_s: f64,
    pub range_phi: f64,
    pub range_rho: f64,
    /// Effective range under the standard-deviation reading of `b`.
    pub range_phi_sd_reading: f64,
    pub fixed_margins: bool,
}

impl ModelName {
    pub fn knots(&self) -> usize {
        match self {
            ModelName::Stationary => 1,
            ModelName::Knots { knots, .. } => *knots,
        }
    }

    pub fn fixed_margins(&self) -> bool {
        matches!(self, ModelName::Knots { fixed_margins: true, .. })
    }

    pub fn summary(&self) -> ModelSummary {
        match *self {
            ModelName::Stationary => ModelSummary {
                knots: 1,
                rho_knots: 1,
                range_s: f64::INFINITY,
                range_phi: f64::INFINITY,
                range_rho: f64::INFINITY,
                range_phi_sd_reading: f64::INFINITY,
                fixed_margins: false,
            },
            ModelName::Knots { knots, radius, bandwidth, fixed_margins } => ModelSummary {
                knots,
                rho_knots: knots,
                range_s: radius,
                range_phi: gaussian_effective_range(bandwidth),
                range_rho: gaussian_effective_range(bandwidth),
                range_phi_sd_reading: gaussian_effective_range_sd(bandwidth),
                fixed_margins,
            },
        }
    }

    /// Kernel settings; the Gaussian standard deviation is `√b`.
    pub fn kernel(&self, wendland_exponent: u32) -> KernelConfig {
        match *self {
            ModelName::Stationary => {
                KernelConfig { wendland_radius: f64::INFINITY, wendland_exponent, bandwidth_phi: 1.0, bandwidth_rho: 1.0 }
            }
            ModelName::Knots { radius, bandwidth, .. } => KernelConfig {
                wendland_radius: radius,
                wendland_exponent,
                bandwidth_phi: bandwidth.sqrt(),
                bandwidth_rho: bandwidth.sqrt(),
            },
        }
    }
}

fn positive_number(s: &str, what: &str, name: &str) -> Result<f64> {
    let v: f64 = s.parse().map_err(|_| Error::Config(format!("model name {name:?}: {what} {s:?} is not a number")))?;
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::Config(format!("model name {name:?}: {what} must be positive")));
    }
    Ok(v)
}

impl FromStr for ModelName {
    type Err = Error;

    fn from_str(name: &str) -> Result<Self> {
        if name.eq_ignore_ascii_case(STATIONARY_NAME) || name == "H-W Stationary" {
            return Ok(ModelName::Stationary);
        }
        let bad = || Error::Config(format!("model name {name:?} does not match kKrRbB[m]"));
        let rest = name.strip_prefix('k').ok_or_else(bad)?;
        let (k, rest) = rest.split_once('r').ok_or_else(bad)?;
        let (r, rest) = rest.split_once('b').ok_or_else(bad)?;
        let (b, fixed_margins) = match rest.strip_suffix('m') {
            Some(b) => (b, true),
            None => (rest, false),
        };
        let knots: usize = k.parse().map_err(|_| bad())?;
        if knots == 0 {
            return Err(Error::Config(format!("model name {name:?}: at least one knot is required")));
        }
        Ok(ModelName::Knots {
            knots,
            radius: positive_number(r, "radius", name)?,
            bandwidth: positive_number(b, "bandwidth", name)?,
            fixed_margins,
        })
    }
}

impl fmt::Display for ModelName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelName::Stationary => f.write_str(STATIONARY_NAME),
            ModelName::Knots { knots, radius, bandwidth, fixed_margins } => {
                write!(f, "k{knots}r{radius}b{bandwidth}{}", if *fixed_margins { "m" } else { "" })
            }
        }
    }
}

/// Rectangular study region.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub xlim: (f64, f64),
    pub ylim: (f64, f64),
}

impl Default for Domain {
    fn default() -> Self {
        Self { xlim: (0.0, 10.0), ylim: (0.0, 10.0) }
    }
}

/// Optional explicit kernel fields; when present they must agree with the name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelFields {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knots: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wendland_radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_margins: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wendland_exponent: Option<u32>,
    /// Explicit knot coordinates instead of the default layout.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub knot_locations: Option<Vec<Point>>,
}

/// Site covariates available to the marginal regressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Covariate {
    Lon,
    Lat,
    Elev,
}

/// Marginal design: intercept plus `covariates` in every block, and a
/// linear time trend in the location when `trend` is set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarginConfig {
    pub covariates: Vec<Covariate>,
    pub trend: bool,
    /// Starting coefficients; a moment fit is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<MarginalCoefficients>,
}

/// Synthetic data generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub n_sites: usize,
    pub n_times: usize,
    pub seed: u64,
    pub gev: GevParams,
    /// Built-in knot surfaces 1–3 (nine knots); ignored when explicit values are given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi_knots: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho_knots: Option<Vec<f64>>,
}

/// Moving-window and pairwise dependence summaries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub windows: (usize, usize),
    pub distances: Vec<f64>,
    pub levels: Vec<f64>,
    /// Pairs of site indices for the pairwise tables.
    pub pairs: Vec<(usize, usize)>,
    pub harness_draws: u64,
    pub harness_seed: u64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { windows: (2, 2), distances: vec![1.0], levels: vec![0.9, 0.95, 0.99], pairs: Vec::new(), harness_draws: 1_000_000, harness_seed: 1 }
    }
}

/// Coverage study settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverageConfig {
    pub datasets: usize,
    pub levels: Vec<f64>,
    pub band_confidence: f64,
    pub start_margins_at_truth: bool,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        Self { datasets: 25, levels: vec![0.95], band_confidence: 0.95, start_margins_at_truth: false }
    }
}

/// Complete description of a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: String,
    #[serde(default)]
    pub domain: Domain,
    #[serde(default = "half")]
    pub gamma: f64,
    #[serde(default = "half")]
    pub nu: f64,
    /// Station CSV, relative to the configuration file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdout: Option<PathBuf>,
    #[serde(default)]
    pub kernel: KernelFields,
    #[serde(default)]
    pub prior: PriorSpec,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub margins: MarginConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub coverage: CoverageConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulation: Option<SimulationConfig>,
}

fn half() -> f64 {
    0.5
}

/// Parses and validates a configuration.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

impl RunConfig {
    pub fn model_name(&self) -> Result<ModelName> {
        self.model.parse()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every field and the agreement of the name with explicit fields.
    pub fn validate(&self) -> Result<()> {
        let name = self.model_name()?;
        let mut bad = Vec::new();
        let k = &self.kernel;
        if let Some(n) = k.knots {
            if n != name.knots() {
                bad.push(format!("knots: name gives {}, field gives {n}", name.knots()));
            }
        }
        if let Some(n) = k.knot_locations.as_ref().map(Vec::len) {
            if n != name.knots() {
                bad.push(format!("knot_locations: name gives {} knots, {n} listed", name.knots()));
            }
        }
        match name {
            ModelName::Stationary => {
                if k.wendland_radius.is_some_and(f64::is_finite) {
                    bad.push("wendland_radius: the stationary model has unbounded kernels".into());
                }
            }
            ModelName::Knots { radius, bandwidth, .. } => {
                if let Some(r) = k.wendland_radius {
                    if !close(r, radius) {
                        bad.push(format!("wendland_radius: name gives {radius}, field gives {r}"));
                    }
                }
                if let Some(b) = k.bandwidth {
                    if !close(b, bandwidth) {
                        bad.push(format!("bandwidth: name gives {bandwidth}, field gives {b}"));
                    }
                }
            }
        }
        if let Some(f) = k.fixed_margins {
            if f != name.fixed_margins() {
                bad.push(format!("fixed_margins: name gives {}, field gives {f}", name.fixed_margins()));
            }
        }
        let fixed = &self.chain.fixed_blocks;
        if name.fixed_margins() && !fixed.is_empty() && !MarginBlock::ALL.iter().all(|b| fixed.contains(b)) {
            bad.push("chain.fixed_blocks: an \"m\" model freezes every marginal block".into());
        }
        if !name.fixed_margins() && MarginBlock::ALL.iter().all(|b| fixed.contains(b)) {
            bad.push("chain.fixed_blocks: freezing every marginal block requires the \"m\" suffix".into());
        }
        if !bad.is_empty() {
            return Err(Error::Config(format!("model name {:?} disagrees with its fields: {}", self.model, bad.join("; "))));
        }
        let d = &self.domain;
        if !(d.xlim.1 > d.xlim.0 && d.ylim.1 > d.ylim.0) || ![d.xlim.0, d.xlim.1, d.ylim.0, d.ylim.1].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("domain needs finite limits with xlim.0 < xlim.1 and ylim.0 < ylim.1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) || !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::Config("gamma and nu must be positive".into()));
        }
        if k.wendland_exponent.is_some_and(|e| e < 2) {
            return Err(Error::Config("wendland_exponent must be at least 2".into()));
        }
        self.prior.validate()?;
        self.chain.validate()?;
        let dg = &self.diagnostics;
        if dg.windows.0 == 0 || dg.windows.1 == 0 || dg.distances.iter().any(|h| !(*h > 0.0)) || dg.levels.iter().any(|u| !(*u > 0.0 && *u < 1.0)) {
            return Err(Error::Config("diagnostics need windows >= 1, positive distances and levels in (0, 1)".into()));
        }
        let cv = &self.coverage;
        if cv.levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) || !(cv.band_confidence > 0.0 && cv.band_confidence < 1.0) {
            return Err(Error::Config("coverage levels and band confidence must lie in (0, 1)".into()));
        }
        if let Some(s) = &self.simulation {
            if s.n_sites == 0 || s.n_times == 0 {
                return Err(Error::Config("simulation needs at least one site and one replicate".into()));
            }
            let k = name.knots();
            let given = (s.phi_knots.as_ref().map(Vec::len), s.rho_knots.as_ref().map(Vec::len));
            match (given, s.scenario) {
                ((Some(a), Some(b)), _) if a != k || b != k => {
                    return Err(Error::Config(format!("simulation lists {a} φ and {b} ρ knot values for {k} knots")));
                }
                ((Some(_), Some(_)), _) => {}
                ((None, None), Some(_)) if k != 9 => {
                    return Err(Error::Config("built-in scenarios are defined on nine knots".into()));
                }
                ((None, None), Some(_)) => {}
                _ => return Err(Error::Config("simulation needs both phi_knots and rho_knots, or a scenario".into())),
            }
        }
        Ok(())
    }

    /// Knot layout: explicit locations, one central knot for the stationary
    /// model, otherwise a square or staggered lattice over the domain.
    pub fn knot_grid(&self) -> Result<KnotGrid> {
        if let Some(locs) = &self.kernel.knot_locations {
            return KnotGrid::new(locs.clone());
        }
        let d = &self.domain;
        match self.model_name()? {
            ModelName::Stationary => KnotGrid::new(vec![[0.5 * (d.xlim.0 + d.xlim.1), 0.5 * (d.ylim.0 + d.ylim.1)]]),
            ModelName::Knots { knots, .. } => KnotGrid::with_count(knots, d.xlim, d.ylim),
        }
    }

    pub fn geometry(&self) -> Result<GeometrySpec> {
        let name = self.model_name()?;
        let knots = self.knot_grid()?;
        Ok(GeometrySpec {
            gammas: vec![self.gamma; knots.len()],
            knots,
            rho_knots: None,
            kernel: name.kernel(self.kernel.wendland_exponent.unwrap_or(2)),
            nu: self.nu,
        })
    }

    /// Sampler settings with the name's marginal restriction applied.
    pub fn chain_config(&self) -> Result<ChainConfig> {
        let mut c = self.chain.clone();
        if self.model_name()?.fixed_margins() {
            c.fixed_blocks = MarginBlock::ALL.to_vec();
        }
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = "model = \"k25r4b4\"\n";

    #[test]
    fn name_round_trip() {
        for n in ["k25r4b4", "k13r4b4m", "k41r1.6b0.43m", "k25r2b0.67", "hw-stationary"] {
            assert_eq!(n.parse::<ModelName>().unwrap().to_string(), n);
        }
        for n in ["k0r4b4", "k25r4", "r4b4", "k25r-1b4", "k25r4b4mm", "k25rxb4"] {
            assert!(n.parse::<ModelName>().is_err(), "{n}");
        }
    }

    #[test]
    fn mismatched_fields_are_listed() {
        let err = parse_config("model = \"k25r4b5\"\n[kernel]\nwendland_radius = 3.0\nknots = 13\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("wendland_radius") && msg.contains("knots"), "{msg}");
        assert!(parse_config("model = \"k25r4b4\"\n[kernel]\nwendland_radius = 4.0\nbandwidth = 4\n").is_ok());
        assert!(parse_config("model = \"k25r4b4\"\nunknown = 1\n").is_err());
    }

    #[test]
    fn m_suffix_freezes_all_margins() {
        let c = parse_config("model = \"k13r4b4m\"\n").unwrap();
        assert_eq!(c.chain_config().unwrap().fixed_blocks, MarginBlock::ALL.to_vec());
        assert!(parse_config("model = \"k13r4b4m\"\n[chain]\nfixed_blocks = [\"xi\"]\n").is_err());
        assert!(parse_config("model = \"k13r4b4\"\n[chain]\nfixed_blocks = [\"mu0\", \"mu1\", \"log_sigma\", \"xi\"]\n").is_err());
        assert!(parse_config("model = \"k13r4b4\"\n[chain]\nfixed_blocks = [\"xi\"]\n").is_ok());
    }

    #[test]
    fn geometry_follows_the_name() {
        let c = parse_config(MINIMAL).unwrap();
        let g = c.geometry().unwrap();
        assert_eq!(g.knots.len(), 25);
        assert_eq!(g.kernel.wendland_radius, 4.0);
        assert_eq!(g.kernel.bandwidth_phi, 2.0);
        let s = parse_config("model = \"hw-stationary\"\n").unwrap().geometry().unwrap();
        assert_eq!(s.knots.len(), 1);
        assert!(s.kernel.wendland_radius.is_infinite());
    }

    fn arb_config() -> impl Strategy<Value = RunConfig> {
        (
            (1usize..60, 0.1f64..10.0, 0.05f64..20.0, any::<bool>()),
            (0.1f64..3.0, 0.1f64..3.0, any::<u64>()),
            (1usize..5000, 0usize..5000, 1usize..4),
            proptest::option::of((1usize..50, 1usize..50, any::<u64>())),
            any::<bool>(),
        )
            .prop_map(|((k, r, b, m), (gamma, nu, seed), (n_iter, burn, thin), sim, trend)| {
                let model = ModelName::Knots { knots: k, radius: r, bandwidth: b, fixed_margins: m }.to_string();
                let mut c: RunConfig = toml::from_str(&format!("model = \"{model}\"")).unwrap();
                c.gamma = gamma;
                c.nu = nu;
                c.chain.seed = seed;
                c.chain.n_iter = n_iter;
                c.chain.burn_in = burn.min(n_iter);
                c.chain.thin = thin;
                c.kernel.wendland_radius = Some(r);
                c.margins.trend = trend;
                c.margins.covariates = if trend { vec![Covariate::Elev, Covariate::Lat] } else { vec![] };
                c.data = Some("data.csv".into());
                c.simulation = sim.map(|(d, t, s)| SimulationConfig {
                    n_sites: d,
                    n_times: t,
                    seed: s,
                    gev: GevParams::new(0.1, 1.3, 0.2).unwrap(),
                    scenario: None,
                    phi_knots: Some(vec![0.4; k]),
                    rho_knots: Some(vec![0.7; k]),
                });
                c
            })
    }

    proptest! {
        #[test]
        fn config_round_trip(c in arb_config()) {
            c.validate().unwrap();
            let text = c.to_toml().unwrap();
            let back = parse_config(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_toml().unwrap(), text);
        }
    }
}
