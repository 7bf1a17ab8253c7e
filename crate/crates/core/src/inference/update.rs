//! Metropolis updates: knot variables per replicate (in parallel across
//! replicates), then `φ_k`, `ρ_k` and the marginal coefficient blocks.
//!
//! Proposals are Gaussian random walks on `log S`, `logit φ`, `log ρ` and the
//! raw coefficients; the acceptance ratio carries the matching Jacobian.
//! Proposals that leave the parameter space or fail numerically are rejected
//! and counted.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::adapt::AdaptiveScale;
use super::state::{latent_terms, LikelihoodMode, Model, ModelState, Replicate, Scales, Surfaces};
use crate::error::Result;
use crate::margins::MarginBlock;
use crate::rng::{stream, StreamRng};
use crate::special::{logistic, logit};

pub(crate) const TAG_S: u64 = 1;
pub(crate) const TAG_PHI: u64 = 2;
pub(crate) const TAG_RHO: u64 = 3;
pub(crate) const TAG_MARGIN: u64 = 4;

/// Draws the proposal increment and the acceptance uniform, in that order.
fn draws(rng: &mut StreamRng) -> (f64, f64) {
    let e: f64 = rng.sample(StandardNormal);
    let u: f64 = rng.random();
    (e, u)
}

fn accept(log_ratio: f64, u: f64) -> bool {
    log_ratio.is_finite() && u.ln() < log_ratio
}

fn total_ll(reps: &[Replicate]) -> f64 {
    reps.iter().map(|r| r.ll).sum()
}

/// Updates every `S_kt`, replicates in parallel, knots in order within each.
pub fn update_s(model: &Model, state: &mut ModelState, seed: u64, iteration: u64) {
    let k = model.geo.n_knots();
    let surf = &state.surf;
    let s_cols = state.params.s.as_mut_slice().par_chunks_mut(k);
    let scale_cols = state.scales.s.par_chunks_mut(k);
    state
        .reps
        .par_iter_mut()
        .zip(s_cols)
        .zip(scale_cols)
        .enumerate()
        .for_each(|(t, ((rep, s), scales))| {
            let mut rng = stream(seed, &[TAG_S, iteration, t as u64]);
            for kk in 0..k {
                update_s_one(model, surf, t, kk, rep, s, &mut scales[kk], &mut rng);
            }
        });
}

#[allow(clippy::too_many_arguments)]
fn update_s_one(
    model: &Model,
    surf: &Surfaces,
    t: usize,
    k: usize,
    rep: &mut Replicate,
    s: &mut [f64],
    scale: &mut AdaptiveScale,
    rng: &mut StreamRng,
) {
    let (e, u) = draws(rng);
    let old = s[k];
    let new = old * (scale.scale() * e).exp();
    if !(new > 0.0 && new.is_finite()) {
        scale.record_invalid();
        return;
    }
    let gamma = model.geo.gammas[k];
    let prior = model.prior.ln_s(new, gamma) - model.prior.ln_s(old, gamma) + (new.ln() - old.ln());
    if model.mode == LikelihoodMode::PriorOnly {
        let ok = accept(prior, u);
        if ok {
            s[k] = new;
            for &j in &model.geo.knot_sites[k] {
                rep.r[j] = model.geo.r_value(j, s);
            }
        }
        scale.record(ok);
        return;
    }
    s[k] = new;
    let sites = &model.geo.knot_sites[k];
    let mut r = Vec::with_capacity(sites.len());
    let mut z = rep.z.clone();
    let mut lj = rep.logjac.clone();
    for &j in sites {
        let rj = model.geo.r_value(j, s);
        r.push(rj);
        if rep.x[j].is_finite() {
            match latent_terms(rep.x[j], rep.base[j], rj, surf.phi[j]) {
                Ok((zj, l)) => {
                    z[j] = zj;
                    lj[j] = l;
                }
                Err(_) => {
                    s[k] = old;
                    scale.record_invalid();
                    return;
                }
            }
        }
    }
    let ll = model.replicate_loglik(t, &z, &lj, &surf.factors);
    let ok = accept(ll - rep.ll + prior, u);
    if ok {
        for (&j, rj) in sites.iter().zip(r) {
            rep.r[j] = rj;
        }
        rep.z = z;
        rep.logjac = lj;
        rep.ll = ll;
    } else {
        s[k] = old;
    }
    scale.record(ok);
}

/// Rebuilds every replicate's `X`, `Z` and Jacobian for new surfaces,
/// warm-starting from the current `X`. `None` if any cell is invalid.
fn rebuild_all(model: &Model, state: &ModelState, surf: &Surfaces) -> Option<Vec<Replicate>> {
    let out: Result<Vec<Replicate>> = (0..model.n_times())
        .into_par_iter()
        .map(|t| {
            let rep = &state.reps[t];
            let mut next = rep.clone();
            for &j in model.observed(t) {
                let gev = model.gev(&surf.margins, j, t)?;
                let st = model.site_terms(model.data.y[(j, t)], &gev, &surf.tables[j], rep.r[j], surf.phi[j], Some(rep.x[j]))?;
                next.x[j] = st.x;
                next.z[j] = st.z;
                next.logjac[j] = st.logjac;
                next.base[j] = st.base;
            }
            next.ll = model.replicate_loglik(t, &next.z, &next.logjac, &surf.factors);
            Ok(next)
        })
        .collect();
    out.ok()
}

/// Metropolis step on `logit φ_k`.
pub fn update_phi(model: &Model, state: &mut ModelState, seed: u64, iteration: u64, k: usize) {
    let mut rng = stream(seed, &[TAG_PHI, iteration, k as u64]);
    let (e, u) = draws(&mut rng);
    let scale = &mut state.scales.phi[k];
    let old = state.params.phi_knots[k];
    let new = logistic(logit(old) + scale.scale() * e);
    if !(new > 0.0 && new < 1.0) {
        scale.record_invalid();
        return;
    }
    let mut knots = state.params.phi_knots.clone();
    knots[k] = new;
    let phi = model.geo.phi_surface(&knots);
    let tables = match model.tables(&phi) {
        Ok(t) => t,
        Err(_) => {
            state.scales.phi[k].record_invalid();
            return;
        }
    };
    let prior = model.prior.ln_phi(new) - model.prior.ln_phi(old) + (new * (1.0 - new)).ln() - (old * (1.0 - old)).ln();
    let surf = Surfaces { phi, tables, ..state.surf.clone() };
    let reps = match model.mode {
        LikelihoodMode::PriorOnly => None,
        LikelihoodMode::Full => match rebuild_all(model, state, &surf) {
            Some(r) => Some(r),
            None => {
                state.scales.phi[k].record_invalid();
                return;
            }
        },
    };
    let dll = reps.as_ref().map_or(0.0, |r| total_ll(r) - total_ll(&state.reps));
    let ok = accept(dll + prior, u);
    if ok {
        state.params.phi_knots = knots;
        state.surf = surf;
        if let Some(r) = reps {
            state.reps = r;
        }
    }
    state.scales.phi[k].record(ok);
}

/// Metropolis step on `log ρ_k`.
pub fn update_rho(model: &Model, state: &mut ModelState, seed: u64, iteration: u64, k: usize) {
    let mut rng = stream(seed, &[TAG_RHO, iteration, k as u64]);
    let (e, u) = draws(&mut rng);
    let scale = &mut state.scales.rho[k];
    let old = state.params.rho_knots[k];
    let new = old * (scale.scale() * e).exp();
    if !(new > 0.0 && new.is_finite()) {
        scale.record_invalid();
        return;
    }
    let mut knots = state.params.rho_knots.clone();
    knots[k] = new;
    let rho = model.geo.rho_surface(&knots);
    let factors = match model.factors(&rho) {
        Ok(f) => f,
        Err(_) => {
            state.scales.rho[k].record_invalid();
            return;
        }
    };
    let prior = model.prior.ln_rho(new) - model.prior.ln_rho(old) + (new.ln() - old.ln());
    let lls: Vec<f64> = (0..model.n_times())
        .into_par_iter()
        .map(|t| model.replicate_loglik(t, &state.reps[t].z, &state.reps[t].logjac, &factors))
        .collect();
    let dll = lls.iter().sum::<f64>() - total_ll(&state.reps);
    let ok = accept(dll + prior, u);
    if ok {
        state.params.rho_knots = knots;
        state.surf.rho = rho;
        state.surf.factors = factors;
        for (rep, ll) in state.reps.iter_mut().zip(lls) {
            rep.ll = ll;
        }
    }
    state.scales.rho[k].record(ok);
}

/// Random-walk step on all coefficients of one marginal block.
pub fn update_margin(model: &Model, state: &mut ModelState, seed: u64, iteration: u64, block: MarginBlock) {
    let b = Scales::block_index(block);
    let mut rng = stream(seed, &[TAG_MARGIN, iteration, b as u64]);
    let n = state.params.coef.block(block).len();
    if n == 0 {
        return;
    }
    let scale = state.scales.margins[b].scale();
    let mut coef = state.params.coef.clone();
    for c in coef.block_mut(block).iter_mut() {
        let e: f64 = rng.sample(StandardNormal);
        *c += scale * e;
    }
    let u: f64 = rng.random();
    let margins = match model.regression(&coef) {
        Ok(r) => r.surfaces(),
        Err(_) => {
            state.scales.margins[b].record_invalid();
            return;
        }
    };
    let prior = model.prior.ln_coefs(&coef) - model.prior.ln_coefs(&state.params.coef);
    let surf = Surfaces { margins, ..state.surf.clone() };
    let reps = match model.mode {
        LikelihoodMode::PriorOnly => None,
        LikelihoodMode::Full => match rebuild_all(model, state, &surf) {
            Some(r) => Some(r),
            None => {
                state.scales.margins[b].record_invalid();
                return;
            }
        },
    };
    let dll = reps.as_ref().map_or(0.0, |r| total_ll(r) - total_ll(&state.reps));
    let ok = accept(dll + prior, u);
    if ok {
        state.params.coef = coef;
        state.surf = surf;
        if let Some(r) = reps {
            state.reps = r;
        }
    }
    state.scales.margins[b].record(ok);
}

/// One full sweep in the fixed order S, φ, ρ, margins.
pub fn sweep(model: &Model, state: &mut ModelState, seed: u64, iteration: u64, margin_blocks: &[MarginBlock]) {
    update_s(model, state, seed, iteration);
    for k in 0..model.geo.n_knots() {
        update_phi(model, state, seed, iteration, k);
    }
    for k in 0..model.geo.n_rho_knots() {
        update_rho(model, state, seed, iteration, k);
    }
    for &b in margin_blocks {
        update_margin(model, state, seed, iteration, b);
    }
}
