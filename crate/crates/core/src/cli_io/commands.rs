//! The command-line workflows. Each reads a run configuration (or a
//! previous output directory) and writes a locked, self-contained output
//! directory: `config.toml`, the data it used, CSV tables and a manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{parse_config, RunConfig};
use super::output::OutputDir;
use super::stations::{ingest_stations, CompletenessRule, StationTable};
use crate::diagnostics::{
    coverage_study, empirical_chi, empirical_eta, model_scores, moving_window_chi, posterior_draws, predictive_loglik, qq_gumbel,
    rank_scores, write_window_csv, ChainFitter, PairSample, WindowChi, WindowGrid, DEFAULT_H_TOL_FRACTION, MIN_QQ_OBS,
};
use crate::error::{Error, Result};
use crate::inference::{coef_from_row, initial_params, ChainConfig, ChainOutput, Container, LikelihoodMode, Model, Sampler};
use crate::margins::{gev_cdf, MarginalCoefficients, MarginalRegression};
use crate::model::ModelGeometry;
use crate::simulate::{pair_meta, pairwise_tail_harness, scenario_surfaces, simulate_field, uniform_sites, HarnessConfig, ProcessSpec};

pub const CONFIG_FILE: &str = "config.toml";
pub const DATA_FILE: &str = "data.csv";
pub const HOLDOUT_FILE: &str = "holdout.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const FIT_FILE: &str = "fit.json";

/// Reads a configuration file; relative data paths resolve against its directory.
pub fn load_config(path: &Path) -> Result<(RunConfig, PathBuf)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg = parse_config(&text)?;
    let base = path.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf);
    Ok((cfg, base))
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// SHA-256 of the canonical TOML form.
pub fn config_digest(cfg: &RunConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(cfg.to_toml()?.as_bytes())))
}

/// Simulation truth stored next to a simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub spec: ProcessSpec,
    /// `φ(s)` and `ρ(s)` at the stations.
    pub phi: Vec<f64>,
    pub rho: Vec<f64>,
}

/// The process a configuration's `[simulation]` section describes, with
/// site locations drawn from `seed`.
pub fn process_spec(cfg: &RunConfig, seed: u64) -> Result<ProcessSpec> {
    let sim = cfg.simulation.as_ref().ok_or_else(|| Error::Config("configuration has no [simulation] section".into()))?;
    let (phi_knots, rho_knots) = match (&sim.phi_knots, &sim.rho_knots, sim.scenario) {
        (Some(p), Some(r), _) => (p.clone(), r.clone()),
        (_, _, Some(id)) => scenario_surfaces(id)?,
        _ => return Err(Error::Config("simulation needs knot values or a scenario".into())),
    };
    let d = &cfg.domain;
    let sites = uniform_sites(sim.n_sites, 0.0, 1.0, seed)
        .into_iter()
        .map(|p| [d.xlim.0 + (d.xlim.1 - d.xlim.0) * p[0], d.ylim.0 + (d.ylim.1 - d.ylim.0) * p[1]])
        .collect();
    let spec = ProcessSpec { sites, geometry: cfg.geometry()?, phi_knots, rho_knots, gev: sim.gev, n_times: sim.n_times, seed };
    spec.validate()?;
    Ok(spec)
}

/// `simulate`: dataset CSV, truth sidecar and a configuration pointing at them.
pub fn simulate(config: &Path, out: &Path) -> Result<()> {
    let (mut cfg, _) = load_config(config)?;
    let seed = cfg.simulation.as_ref().map_or(0, |s| s.seed);
    let spec = process_spec(&cfg, seed)?;
    let dir = OutputDir::lock(out)?;
    let mut run = || -> Result<()> {
        let sim = simulate_field(&spec)?;
        StationTable::from_simulation(&sim).write_csv(&dir.file(DATA_FILE))?;
        dir.write_json(TRUTH_FILE, &Truth { spec: spec.clone(), phi: sim.phi.clone(), rho: sim.rho.clone() })?;
        cfg.data = Some(DATA_FILE.into());
        cfg.holdout = None;
        dir.write_text(CONFIG_FILE, &cfg.to_toml()?)?;
        dir.write_manifest("simulate", &config_digest(&cfg)?, seed)?;
        Ok(())
    };
    run().inspect_err(|e| {
        let _ = dir.write_error(e);
    })
}

/// Training stations: station-years under the two-thirds rule, stations
/// under the training completeness rule.
fn load_training(cfg: &RunConfig, base: &Path) -> Result<StationTable> {
    let path = cfg.data.as_ref().ok_or_else(|| Error::Config("configuration names no data file".into()))?;
    let (table, report) = ingest_stations(&resolve(base, path), &CompletenessRule::two_thirds())?;
    table.select_complete(&report, &CompletenessRule::training())
}

fn load_holdout(path: &Path, years: &[i64]) -> Result<StationTable> {
    let (table, report) = ingest_stations(path, &CompletenessRule::two_thirds())?;
    table.select_complete(&report, &CompletenessRule::holdout())?.align_years(years)
}

fn build_model(cfg: &RunConfig, table: &StationTable) -> Result<Model> {
    let ds = table.dataset(&cfg.margins)?;
    let geo = ModelGeometry::new(table.sites(), &cfg.geometry()?)?;
    Model::new(ds, geo, cfg.prior, LikelihoodMode::Full)
}

/// Sampler settings actually used: the name's restriction, and knot
/// variables traced whenever a holdout set will be predicted.
pub fn effective_chain(cfg: &RunConfig) -> Result<ChainConfig> {
    let mut c = cfg.chain_config()?;
    c.trace_s |= cfg.holdout.is_some();
    Ok(c)
}

/// Posterior means of the knot surfaces and marginal coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub trace_digest: String,
    pub phi_knots: Vec<f64>,
    pub rho_knots: Vec<f64>,
    pub coef: MarginalCoefficients,
}

fn column_stats(v: &[f64]) -> (f64, f64, f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 { (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
    let (lo, hi) = crate::inference::equi_tailed_interval(v, 0.95).unwrap_or((f64::NAN, f64::NAN));
    (mean, sd, lo, hi)
}

fn write_fit_outputs(dir: &OutputDir, out: &ChainOutput, chain: &ChainConfig, ck: &Container) -> Result<FitSummary> {
    ck.write(&dir.file(CHECKPOINT_FILE))?;
    out.traces.write_csv(&dir.file("traces.csv"), &out.coef_names)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.file("acceptance.csv"))?);
    writeln!(w, "name,proposed,accepted,invalid,rate,scale")?;
    for a in &out.acceptance {
        writeln!(w, "{},{},{},{},{:e},{:e}", a.name, a.proposed, a.accepted, a.invalid, a.rate, a.scale)?;
    }
    w.flush()?;
    let tr = &out.traces;
    let rows: Vec<usize> = tr.post_burn_in(chain.burn_in).collect();
    let rows = if rows.is_empty() { (0..tr.len()).collect() } else { rows };
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    let k = out.final_params.phi_knots.len();
    let kr = out.final_params.rho_knots.len();
    for i in 0..k {
        columns.push((format!("phi[{i}]"), rows.iter().map(|&r| tr.phi[r][i]).collect()));
    }
    for i in 0..kr {
        columns.push((format!("rho[{i}]"), rows.iter().map(|&r| tr.rho[r][i]).collect()));
    }
    for (i, n) in out.coef_names.iter().enumerate() {
        columns.push((n.clone(), rows.iter().map(|&r| tr.coef[r][i]).collect()));
    }
    let mut w = std::io::BufWriter::new(std::fs::File::create(dir.file("summary.csv"))?);
    writeln!(w, "parameter,mean,sd,q025,q975")?;
    let mut means = Vec::new();
    for (name, v) in &columns {
        let (m, sd, lo, hi) = column_stats(v);
        writeln!(w, "{name},{m:e},{sd:e},{lo:e},{hi:e}")?;
        means.push(m);
    }
    w.flush()?;
    let summary = FitSummary {
        iterations: out.iterations,
        burn_in: chain.burn_in,
        seed: out.seed,
        trace_digest: out.trace_digest(),
        phi_knots: means[..k].to_vec(),
        rho_knots: means[k..k + kr].to_vec(),
        coef: coef_from_row(&out.final_params.coef, &means[k + kr..]),
    };
    dir.write_json(FIT_FILE, &summary)?;
    Ok(summary)
}

fn run_sampler(dir: &OutputDir, mut sampler: Sampler<'_>, chain: &ChainConfig, checkpoint_every: usize) -> Result<FitSummary> {
    let path = dir.file(CHECKPOINT_FILE);
    sampler.run_to(chain.n_iter, checkpoint_every, |c| c.write(&path))?;
    let ck = sampler.checkpoint();
    let out = sampler.finish();
    write_fit_outputs(dir, &out, chain, &ck)
}

/// `fit`: copies the (ingested) data into `out`, runs the chain with
/// periodic checkpoints and writes traces and summaries.
pub fn fit(config: &Path, out: &Path, checkpoint_every: usize) -> Result<FitSummary> {
    let (mut cfg, base) = load_config(config)?;
    let train = load_training(&cfg, &base)?;
    let holdout = cfg.holdout.as_ref().map(|p| load_holdout(&resolve(&base, p), &train.years)).transpose()?;
    let dir = OutputDir::lock(out)?;
    let mut run = || -> Result<FitSummary> {
        train.write_csv(&dir.file(DATA_FILE))?;
        cfg.data = Some(DATA_FILE.into());
        if let Some(h) = &holdout {
            h.write_csv(&dir.file(HOLDOUT_FILE))?;
            cfg.holdout = Some(HOLDOUT_FILE.into());
        }
        dir.write_text(CONFIG_FILE, &cfg.to_toml()?)?;
        let model = build_model(&cfg, &train)?;
        let chain = effective_chain(&cfg)?;
        let params = initial_params(&model, cfg.margins.initial.clone())?;
        let summary = run_sampler(&dir, Sampler::new(&model, chain.clone(), params)?, &chain, checkpoint_every)?;
        dir.write_manifest("fit", &config_digest(&cfg)?, chain.seed)?;
        Ok(summary)
    };
    run().inspect_err(|e| {
        let _ = dir.write_error(e);
    })
}

/// `resume`: continues the chain in a fit directory from its checkpoint,
/// optionally to a larger iteration count.
pub fn resume(fit_dir: &Path, n_iter: Option<usize>, checkpoint_every: usize) -> Result<FitSummary> {
    let dir = OutputDir::lock(fit_dir)?;
    let run = || -> Result<FitSummary> {
        let (mut cfg, base) = load_config(&dir.file(CONFIG_FILE))?;
        if let Some(n) = n_iter {
            cfg.chain.n_iter = n;
            cfg.validate()?;
            dir.write_text(CONFIG_FILE, &cfg.to_toml()?)?;
        }
        let train = load_training(&cfg, &base)?;
        let model = build_model(&cfg, &train)?;
        let chain = effective_chain(&cfg)?;
        let ck = Container::read(&dir.file(CHECKPOINT_FILE))?;
        let summary = run_sampler(&dir, Sampler::resume(&model, chain.clone(), &ck)?, &chain, checkpoint_every)?;
        dir.write_manifest("resume", &config_digest(&cfg)?, chain.seed)?;
        Ok(summary)
    };
    run().inspect_err(|e| {
        let _ = dir.write_error(e);
    })
}

/// One row of a pairwise dependence table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairRow {
    pub site_i: usize,
    pub site_j: usize,
    pub distance: f64,
    pub statistic: String,
    pub u: f64,
    pub estimate: Option<f64>,
    pub se: f64,
}

fn write_pair_csv(path: &Path, rows: &[PairRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "site_i,site_j,distance,statistic,u,estimate,se")?;
    for r in rows {
        let est = r.estimate.map_or(String::new(), |v| format!("{v:e}"));
        let se = if r.se.is_finite() { format!("{:e}", r.se) } else { String::new() };
        writeln!(w, "{},{},{},{},{},{},{}", r.site_i, r.site_j, r.distance, r.statistic, r.u, est, se)?;
    }
    w.flush()?;
    Ok(())
}

/// Outputs of `diagnose`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DiagnoseOutput {
    pub windows_empirical: Vec<WindowChi>,
    pub windows_fitted: Vec<WindowChi>,
    pub pairs_empirical: Vec<PairRow>,
    pub pairs_harness: Vec<PairRow>,
}

fn windows_for(cfg: &RunConfig, sites: &[crate::kernel::Point], scores: &nalgebra::DMatrix<f64>) -> Result<Vec<WindowChi>> {
    let g = &cfg.diagnostics;
    let grid = WindowGrid { nx: g.windows.0, ny: g.windows.1, xlim: cfg.domain.xlim, ylim: cfg.domain.ylim };
    let mut out = Vec::new();
    for &h in &g.distances {
        out.extend(moving_window_chi(sites, scores, &grid, h, DEFAULT_H_TOL_FRACTION * h, &g.levels)?);
    }
    Ok(out)
}

/// `diagnose`: moving-window χ̂ of the data on rank scores, and on the
/// fitted margins when a fit is present; for simulated data, pairwise χ̂/η̂
/// of the data on the true margins beside the streaming harness for the
/// true process.
pub fn diagnose(data_dir: &Path) -> Result<DiagnoseOutput> {
    let dir = OutputDir::lock(data_dir)?;
    let run = || -> Result<DiagnoseOutput> {
        let (cfg, base) = load_config(&dir.file(CONFIG_FILE))?;
        let table = load_training(&cfg, &base)?;
        let sites = table.sites();
        let mut out = DiagnoseOutput { windows_empirical: windows_for(&cfg, &sites, &rank_scores(&table.y))?, ..Default::default() };
        write_window_csv(&dir.file("window_chi_empirical.csv"), &out.windows_empirical)?;
        if dir.file(FIT_FILE).exists() {
            let fit: FitSummary = serde_json::from_slice(&std::fs::read(dir.file(FIT_FILE))?)?;
            let design = table.design(&cfg.margins);
            let time = design.time.clone();
            let surf = MarginalRegression::new(design, fit.coef)?.surfaces();
            out.windows_fitted = windows_for(&cfg, &sites, &model_scores(&table.y, &surf, &time)?)?;
            write_window_csv(&dir.file("window_chi_fitted.csv"), &out.windows_fitted)?;
        }
        if dir.file(TRUTH_FILE).exists() {
            let truth: Truth = serde_json::from_slice(&std::fs::read(dir.file(TRUTH_FILE))?)?;
            let d = truth.spec.sites.len();
            let pairs: Vec<(usize, usize)> = if cfg.diagnostics.pairs.is_empty() {
                [(0, 1), (0, 2), (1, 2)].into_iter().filter(|&(_, j)| j < d).collect()
            } else {
                cfg.diagnostics.pairs.clone()
            };
            let levels = &cfg.diagnostics.levels;
            let geo = truth.spec.model_geometry()?;
            let scores = table.y.map(|v| gev_cdf(v, &truth.spec.gev));
            for &(i, j) in &pairs {
                if i >= d || j >= d || i == j {
                    return Err(Error::Config(format!("diagnostic pair ({i}, {j}) is not a pair of distinct sites")));
                }
                let obs: Vec<usize> = (0..table.y.ncols()).filter(|&t| !scores[(i, t)].is_nan() && !scores[(j, t)].is_nan()).collect();
                let ui: Vec<f64> = obs.iter().map(|&t| scores[(i, t)]).collect();
                let uj: Vec<f64> = obs.iter().map(|&t| scores[(j, t)]).collect();
                let sample = PairSample::from_uniform(&ui, &uj, pair_meta(&geo, i, j))?;
                let m = sample.meta;
                for c in empirical_chi(&sample, levels)? {
                    out.pairs_empirical.push(PairRow { site_i: i, site_j: j, distance: m.distance, statistic: "chi".into(), u: c.u, estimate: c.chi, se: c.se });
                }
                let e = empirical_eta(&sample, levels[0])?;
                out.pairs_empirical.push(PairRow { site_i: i, site_j: j, distance: m.distance, statistic: "eta".into(), u: e.u, estimate: e.eta, se: e.se });
            }
            let hc = HarnessConfig {
                n_draws: cfg.diagnostics.harness_draws,
                u_grid: levels.clone(),
                eta_u: levels[0],
                // Under independence the top (1 - u) of min(E_i, E_j) needs both survivals below √(1 - u).
                retain_tail: (2.0 * (1.0 - levels[0]).sqrt()).clamp(0.2, 1.0),
                seed: cfg.diagnostics.harness_seed,
                ..Default::default()
            };
            for t in pairwise_tail_harness(&truth.spec, &pairs, &hc)? {
                let m = t.meta;
                for c in &t.chi {
                    out.pairs_harness.push(PairRow { site_i: m.site_i, site_j: m.site_j, distance: m.distance, statistic: "chi".into(), u: c.u, estimate: c.chi, se: c.se });
                }
                out.pairs_harness.push(PairRow { site_i: m.site_i, site_j: m.site_j, distance: m.distance, statistic: "eta".into(), u: t.eta.u, estimate: t.eta.eta, se: t.eta.se });
            }
            write_pair_csv(&dir.file("pair_empirical.csv"), &out.pairs_empirical)?;
            write_pair_csv(&dir.file("pair_harness.csv"), &out.pairs_harness)?;
        }
        dir.write_manifest("diagnose", &config_digest(&cfg)?, cfg.diagnostics.harness_seed)?;
        Ok(out)
    };
    run().inspect_err(|e| {
        let _ = dir.write_error(e);
    })
}

/// `coverage`: simulates `coverage.datasets` datasets from the
/// configuration (dataset `i` uses seed `simulation.seed + i`), fits each
/// and tabulates interval coverage.
pub fn coverage(config: &Path, out: &Path) -> Result<crate::diagnostics::CoverageReport> {
    let (cfg, _) = load_config(config)?;
    let seed0 = cfg.simulation.as_ref().map_or(0, |s| s.seed);
    process_spec(&cfg, seed0)?;
    let dir = OutputDir::lock(out)?;
    let run = || -> Result<crate::diagnostics::CoverageReport> {
        dir.write_text(CONFIG_FILE, &cfg.to_toml()?)?;
        let fitter = ChainFitter { chain: effective_chain(&cfg)?, prior: cfg.prior, start_margins_at_truth: cfg.coverage.start_margins_at_truth };
        let make = |i: usize| simulate_field(&process_spec(&cfg, seed0.wrapping_add(i as u64))?);
        let cv = &cfg.coverage;
        let report = coverage_study(make, cv.datasets, &cv.levels, &fitter, cv.band_confidence)?;
        report.write_csv(&dir.file("coverage.csv"))?;
        dir.write_json("coverage_failures.json", &report.failures)?;
        dir.write_manifest("coverage", &config_digest(&cfg)?, seed0)?;
        Ok(report)
    };
    run().inspect_err(|e| {
        let _ = dir.write_error(e);
    })
}

/// Outputs of `predict`.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictOutput {
    pub station_ids: Vec<String>,
    pub mean_loglik: Vec<f64>,
    pub n_draws: usize,
}

/// `predict`: holdout predictive log-likelihood and Gumbel QQ envelopes
/// from the posterior draws of a fit directory.
pub fn predict(fit_dir: &Path, holdout: Option<&Path>, max_draws: usize, n_rep: usize, seed: u64) -> Result<PredictOutput> {
    let dir = OutputDir::lock(fit_dir)?;
    let run = || -> Result<PredictOutput> {
        let (cfg, base) = load_config(&dir.file(CONFIG_FILE))?;
        let train = load_training(&cfg, &base)?;
        let hold_path = match (holdout, &cfg.holdout) {
            (Some(p), _) => p.to_path_buf(),
            (None, Some(p)) => resolve(&base, p),
            (None, None) => return Err(Error::Config("no holdout table given or configured".into())),
        };
        let hold = load_holdout(&hold_path, &train.years)?;
        let model = build_model(&cfg, &train)?;
        let chain = effective_chain(&cfg)?;
        let ck = Container::read(&dir.file(CHECKPOINT_FILE))?;
        let out = Sampler::resume(&model, chain.clone(), &ck)?.finish();
        let draws = posterior_draws(&out, chain.burn_in, max_draws)?;
        let hds = hold.dataset(&cfg.margins)?;
        let scores = predictive_loglik(&model, &hds, &draws)?;
        let means = scores.site_means();
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.file("predictive.csv"))?);
        writeln!(w, "station_id,lon,lat,mean_loglik")?;
        for (s, m) in hold.stations.iter().zip(&means) {
            writeln!(w, "{},{},{},{m:e}", s.id, s.lon, s.lat)?;
        }
        w.flush()?;
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.file("qq.csv"))?);
        writeln!(w, "station_id,theoretical,empirical,lower,upper")?;
        let surfaces: Vec<_> = draws.iter().map(|p| MarginalRegression::new(hds.design.clone(), p.coef.clone()).map(|r| r.surfaces())).collect::<Result<_>>()?;
        for (i, st) in hold.stations.iter().enumerate() {
            let times: Vec<usize> = (0..hds.n_times()).filter(|&t| hds.is_observed(i, t)).collect();
            if times.len() < MIN_QQ_OBS {
                continue;
            }
            let obs: Vec<f64> = times.iter().map(|&t| hds.y[(i, t)]).collect();
            let gev = surfaces
                .iter()
                .map(|s| times.iter().map(|&t| s.gev(i, hds.design.time[t])).collect::<Result<Vec<_>>>())
                .collect::<Result<Vec<_>>>()?;
            for p in qq_gumbel(&obs, &gev, n_rep, seed.wrapping_add(i as u64))? {
                writeln!(w, "{},{:e},{:e},{:e},{:e}", st.id, p.theoretical, p.empirical, p.lower, p.upper)?;
            }
        }
        w.flush()?;
        dir.write_manifest("predict", &config_digest(&cfg)?, seed)?;
        Ok(PredictOutput { station_ids: hold.stations.iter().map(|s| s.id.clone()).collect(), mean_loglik: means, n_draws: draws.len() })
    };
    run().inspect_err(|e| {
        let _ = dir.write_error(e);
    })
}
