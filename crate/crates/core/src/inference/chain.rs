//! Chain driver: sweeps, batch adaptation, traces, checkpoints and resume.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adapt::AdaptConfig;
use super::checkpoint::{Block, Container};
use super::state::{InitialScales, Model, ModelState, Params, Scales};
use super::update::sweep;
use crate::error::{Error, Result};
use crate::margins::{MarginBlock, MarginalCoefficients};

/// Sampler settings. Iterations are counted from 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub adapt: AdaptConfig,
    pub init_scales: InitialScales,
    /// Marginal blocks held at their starting values.
    pub fixed_blocks: Vec<MarginBlock>,
    /// Record the knot variables in the trace.
    pub trace_s: bool,
    /// Compare cached and recomputed log posteriors every this many iterations (0 disables).
    pub check_every: usize,
    pub check_tol: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iter: 1000,
            burn_in: 500,
            thin: 1,
            seed: 1,
            adapt: AdaptConfig::default(),
            init_scales: InitialScales::default(),
            fixed_blocks: Vec::new(),
            trace_s: false,
            check_every: 0,
            check_tol: 1e-8,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adapt.validate()?;
        if self.n_iter == 0 || self.thin == 0 || self.burn_in > self.n_iter {
            return Err(Error::Config("need n_iter >= 1, thin >= 1 and burn_in <= n_iter".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }

    pub fn active_blocks(&self) -> Vec<MarginBlock> {
        MarginBlock::ALL.into_iter().filter(|b| !self.fixed_blocks.contains(b)).collect()
    }
}

/// Recorded draws, one row per kept iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Traces {
    pub iteration: Vec<u64>,
    pub log_post: Vec<f64>,
    pub phi: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    pub coef: Vec<Vec<f64>>,
    /// Knot variables in column-major `K × T` order, when traced.
    pub s: Vec<Vec<f64>>,
}

/// Flattened coefficient vector in block order `mu0, mu1, log_sigma, xi`.
pub fn flatten_coef(c: &MarginalCoefficients) -> Vec<f64> {
    MarginBlock::ALL.iter().flat_map(|&b| c.block(b).iter().copied()).collect()
}

/// Column names matching [`flatten_coef`].
pub fn coef_names(c: &MarginalCoefficients) -> Vec<String> {
    MarginBlock::ALL.iter().flat_map(|&b| (0..c.block(b).len()).map(move |i| format!("{}[{i}]", b.name()))).collect()
}

/// Inverse of [`flatten_coef`] with the shape of `template`.
pub fn coef_from_row(template: &MarginalCoefficients, v: &[f64]) -> MarginalCoefficients {
    let mut out = template.clone();
    let mut i = 0;
    for b in MarginBlock::ALL {
        for c in out.block_mut(b).iter_mut() {
            *c = v[i];
            i += 1;
        }
    }
    out
}

impl Traces {
    pub fn len(&self) -> usize {
        self.iteration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.iteration.is_empty()
    }

    /// Rows recorded after `burn_in`.
    pub fn post_burn_in(&self, burn_in: usize) -> std::ops::Range<usize> {
        let start = self.iteration.iter().position(|&i| i as usize > burn_in).unwrap_or(self.len());
        start..self.len()
    }

    /// Writes the scalar traces as CSV.
    pub fn write_csv(&self, path: &Path, coef_names: &[String]) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let mut head = vec!["iteration".to_string(), "log_post".to_string()];
        let k = self.phi.first().map_or(0, Vec::len);
        let kr = self.rho.first().map_or(0, Vec::len);
        head.extend((0..k).map(|i| format!("phi[{i}]")));
        head.extend((0..kr).map(|i| format!("rho[{i}]")));
        head.extend(coef_names.iter().cloned());
        writeln!(w, "{}", head.join(","))?;
        for r in 0..self.len() {
            let mut row = vec![self.iteration[r].to_string(), format!("{:e}", self.log_post[r])];
            row.extend(self.phi[r].iter().chain(&self.rho[r]).chain(&self.coef[r]).map(|v| format!("{v:e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Acceptance summary of one update family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRecord {
    pub name: String,
    pub proposed: u64,
    pub accepted: u64,
    pub invalid: u64,
    pub rate: f64,
    /// Mean proposal scale over the family's members.
    pub scale: f64,
}

/// Result of a finished (or stopped) run.
#[derive(Clone, Debug)]
pub struct ChainOutput {
    pub traces: Traces,
    pub coef_names: Vec<String>,
    pub acceptance: Vec<AcceptanceRecord>,
    pub final_params: Params,
    pub final_x: DMatrix<f64>,
    pub final_scales: Scales,
    pub iterations: usize,
    pub seed: u64,
    pub config_digest: String,
}

impl ChainOutput {
    /// SHA-256 over the bit patterns of every trace entry.
    pub fn trace_digest(&self) -> String {
        let mut h = Sha256::new();
        let t = &self.traces;
        for r in 0..t.len() {
            h.update(t.iteration[r].to_le_bytes());
            h.update(t.log_post[r].to_bits().to_le_bytes());
            for v in t.phi[r].iter().chain(&t.rho[r]).chain(&t.coef[r]).chain(t.s.get(r).into_iter().flatten()) {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// An in-progress chain.
pub struct Sampler<'a> {
    model: &'a Model,
    config: ChainConfig,
    state: ModelState,
    iteration: usize,
    traces: Traces,
    digest: String,
}

impl<'a> Sampler<'a> {
    pub fn new(model: &'a Model, config: ChainConfig, params: Params) -> Result<Self> {
        config.validate()?;
        let scales = Scales::new(
            model.geo.n_knots(),
            model.geo.n_rho_knots(),
            model.n_times(),
            &params.coef,
            &config.init_scales,
        );
        let state = model.state(params, scales, None)?;
        if !model.log_posterior(&state).is_finite() {
            return Err(Error::Parameter("starting state has zero posterior density".into()));
        }
        let digest = config.digest();
        Ok(Self { model, config, state, iteration: 0, traces: Traces::default(), digest })
    }

    /// Continues from a checkpoint written by [`Sampler::checkpoint`]. The
    /// config may extend `n_iter`; everything else must match.
    pub fn resume(model: &'a Model, config: ChainConfig, ck: &Container) -> Result<Self> {
        config.validate()?;
        let meta: Meta = serde_json::from_slice(ck.bytes("meta")?)?;
        let mut stored = meta.config.clone();
        stored.n_iter = config.n_iter;
        if stored != config {
            return Err(Error::Checkpoint("chain settings differ from the checkpointed run".into()));
        }
        let (k, kr, t, d) = (model.geo.n_knots(), model.geo.n_rho_knots(), model.n_times(), model.geo.n_sites());
        let s = ck.f64s("s")?;
        let x = ck.f64s("x")?;
        if s.len() != k * t || x.len() != d * t {
            return Err(Error::Checkpoint("checkpoint dimensions do not match the model".into()));
        }
        let params = Params {
            s: DMatrix::from_column_slice(k, t, s),
            phi_knots: ck.f64s("phi_knots")?.to_vec(),
            rho_knots: ck.f64s("rho_knots")?.to_vec(),
            coef: meta.coef.clone(),
        };
        let x = DMatrix::from_column_slice(d, t, x);
        let state = model.state_from_x(params, meta.scales.clone(), &x)?;
        let n_coef = flatten_coef(&meta.coef).len();
        let rows = |name: &str, w: usize| -> Result<Vec<Vec<f64>>> {
            let v = ck.f64s(name)?;
            if w == 0 {
                return Ok(vec![Vec::new(); meta.n_rows]);
            }
            if v.len() != w * meta.n_rows {
                return Err(Error::Checkpoint(format!("trace block `{name}` has the wrong length")));
            }
            Ok(v.chunks(w).map(<[f64]>::to_vec).collect())
        };
        let traces = Traces {
            iteration: ck.u64s("trace_iteration")?.to_vec(),
            log_post: ck.f64s("trace_log_post")?.to_vec(),
            phi: rows("trace_phi", k)?,
            rho: rows("trace_rho", kr)?,
            coef: rows("trace_coef", n_coef)?,
            s: if config.trace_s { rows("trace_s", k * t)? } else { Vec::new() },
        };
        let digest = config.digest();
        Ok(Self { model, config, state, iteration: meta.iteration, traces, digest })
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn state(&self) -> &ModelState {
        &self.state
    }

    /// One sweep, adaptation at batch ends, trace recording and the optional cache check.
    pub fn step(&mut self) -> Result<()> {
        self.iteration += 1;
        let it = self.iteration;
        sweep(self.model, &mut self.state, self.config.seed, it as u64, &self.config.active_blocks());
        if it % self.config.adapt.batch == 0 {
            let b = it / self.config.adapt.batch;
            let adapting = it <= self.config.burn_in;
            let cfg = self.config.adapt;
            self.state.scales.all_mut().for_each(|s| s.end_batch(b, &cfg, adapting));
        }
        if self.config.check_every > 0 && it % self.config.check_every == 0 {
            let cached = self.model.log_posterior(&self.state);
            let fresh = self.model.log_posterior_fresh(&self.state.params).map_err(|e| at(it, e))?;
            if (cached - fresh).abs() > self.config.check_tol * fresh.abs().max(1.0) {
                return Err(at(it, Error::Numeric(format!("cache drift: cached {cached} vs recomputed {fresh}"))));
            }
        }
        if it % self.config.thin == 0 {
            let p = &self.state.params;
            self.traces.iteration.push(it as u64);
            self.traces.log_post.push(self.model.log_posterior(&self.state));
            self.traces.phi.push(p.phi_knots.clone());
            self.traces.rho.push(p.rho_knots.clone());
            self.traces.coef.push(flatten_coef(&p.coef));
            if self.config.trace_s {
                self.traces.s.push(p.s.as_slice().to_vec());
            }
        }
        Ok(())
    }

    /// Runs to iteration `target` (capped at `n_iter`), calling `on_checkpoint`
    /// every `every` iterations when `every > 0`.
    pub fn run_to(&mut self, target: usize, every: usize, mut on_checkpoint: impl FnMut(&Container) -> Result<()>) -> Result<()> {
        let target = target.min(self.config.n_iter);
        while self.iteration < target {
            self.step()?;
            if every > 0 && self.iteration % every == 0 {
                let it = self.iteration;
                on_checkpoint(&self.checkpoint()).map_err(|e| at(it, e))?;
            }
        }
        Ok(())
    }

    /// Complete restartable snapshot.
    pub fn checkpoint(&self) -> Container {
        let p = &self.state.params;
        let meta = Meta {
            iteration: self.iteration,
            n_rows: self.traces.len(),
            config: self.config.clone(),
            coef: p.coef.clone(),
            scales: self.state.scales.clone(),
        };
        let flat = |rows: &[Vec<f64>]| Block::F64(rows.iter().flatten().copied().collect());
        let mut c = Container::default();
        c.insert("meta", Block::Bytes(serde_json::to_vec(&meta).expect("metadata serializes")));
        c.insert("s", Block::F64(p.s.as_slice().to_vec()));
        c.insert("phi_knots", Block::F64(p.phi_knots.clone()));
        c.insert("rho_knots", Block::F64(p.rho_knots.clone()));
        c.insert("x", Block::F64(self.state.x_matrix().as_slice().to_vec()));
        c.insert("trace_iteration", Block::U64(self.traces.iteration.clone()));
        c.insert("trace_log_post", Block::F64(self.traces.log_post.clone()));
        c.insert("trace_phi", flat(&self.traces.phi));
        c.insert("trace_rho", flat(&self.traces.rho));
        c.insert("trace_coef", flat(&self.traces.coef));
        if self.config.trace_s {
            c.insert("trace_s", flat(&self.traces.s));
        }
        c
    }

    pub fn finish(self) -> ChainOutput {
        let sc = &self.state.scales;
        let mut acceptance = Vec::new();
        let k = self.model.geo.n_knots();
        let mut push = |name: String, members: Vec<&super::adapt::AdaptiveScale>| {
            if members.is_empty() {
                return;
            }
            let proposed: u64 = members.iter().map(|m| m.total_proposed).sum();
            let accepted: u64 = members.iter().map(|m| m.total_accepted).sum();
            let invalid: u64 = members.iter().map(|m| m.invalid).sum();
            let scale = members.iter().map(|m| m.scale()).sum::<f64>() / members.len() as f64;
            let rate = if proposed == 0 { f64::NAN } else { accepted as f64 / proposed as f64 };
            acceptance.push(AcceptanceRecord { name, proposed, accepted, invalid, rate, scale });
        };
        for kk in 0..k {
            push(format!("S[{kk}]"), sc.s.iter().skip(kk).step_by(k.max(1)).collect());
        }
        for (i, s) in sc.phi.iter().enumerate() {
            push(format!("phi[{i}]"), vec![s]);
        }
        for (i, s) in sc.rho.iter().enumerate() {
            push(format!("rho[{i}]"), vec![s]);
        }
        for (b, s) in MarginBlock::ALL.iter().zip(&sc.margins) {
            if s.total_proposed > 0 {
                push(b.name().to_string(), vec![s]);
            }
        }
        ChainOutput {
            coef_names: coef_names(&self.state.params.coef),
            final_x: self.state.x_matrix(),
            final_params: self.state.params.clone(),
            final_scales: self.state.scales.clone(),
            traces: self.traces,
            acceptance,
            iterations: self.iteration,
            seed: self.config.seed,
            config_digest: self.digest,
        }
    }
}

fn at(iteration: usize, e: Error) -> Error {
    Error::AtIteration { iteration, source: Box::new(e) }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Meta {
    iteration: usize,
    n_rows: usize,
    config: ChainConfig,
    coef: MarginalCoefficients,
    scales: Scales,
}

/// Runs a chain from `params` for `config.n_iter` iterations.
pub fn run_chain(model: &Model, config: ChainConfig, params: Params) -> Result<ChainOutput> {
    let n = config.n_iter;
    let mut s = Sampler::new(model, config, params)?;
    s.run_to(n, 0, |_| Ok(()))?;
    Ok(s.finish())
}

/// Equi-tailed credible interval of a sample at `level`, by linear interpolation.
pub fn equi_tailed_interval(draws: &[f64], level: f64) -> Option<(f64, f64)> {
    if draws.is_empty() || !(level > 0.0 && level < 1.0) {
        return None;
    }
    let mut v = draws.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let h = p * (v.len() - 1) as f64;
        let (lo, frac) = (h.floor() as usize, h - h.floor());
        if lo + 1 < v.len() {
            v[lo] + frac * (v[lo + 1] - v[lo])
        } else {
            v[lo]
        }
    };
    let a = 0.5 * (1.0 - level);
    Some((q(a), q(1.0 - a)))
}
