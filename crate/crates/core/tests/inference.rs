use nalgebra::DMatrix;
use scalemix::inference::{
    initial_params, run_chain, ChainConfig, Container, Dataset, InitialScales, LikelihoodMode, Model, Params, PriorSpec, Sampler,
};
use scalemix::kernel::{KernelConfig, KnotGrid};
use scalemix::margins::{gev_ln_pdf, GevParams, MarginBlock, MarginalCoefficients, MarginalDesign};
use scalemix::model::{GeometrySpec, ModelGeometry};
use scalemix::quadrature::{integrate, QuadOptions};
use scalemix::simulate::{build_scenario_scaled, simulate_field};
use scalemix::stable::levy_ln_density;

fn coef(mu: f64, sigma: f64, xi: f64) -> MarginalCoefficients {
    MarginalCoefficients { mu0: vec![mu], mu1: vec![], log_sigma: vec![sigma.ln()], xi: vec![xi] }
}

fn one_knot_geometry(sites: Vec<[f64; 2]>) -> ModelGeometry {
    let spec = GeometrySpec {
        knots: KnotGrid::new(vec![[0.0, 0.0]]).unwrap(),
        rho_knots: None,
        kernel: KernelConfig { wendland_radius: 5.0, wendland_exponent: 2, bandwidth_phi: 2.0, bandwidth_rho: 2.0 },
        gammas: vec![0.5],
        nu: 0.5,
    };
    ModelGeometry::new(sites, &spec).unwrap()
}

fn small_model(d: usize, t: usize, seed: u64, mode: LikelihoodMode) -> (Model, Params) {
    let mut spec = build_scenario_scaled(1, seed, d, t).unwrap();
    spec.geometry.knots = KnotGrid::regular(2, 2, (0.0, 10.0), (0.0, 10.0)).unwrap();
    spec.geometry.gammas = vec![0.5; 4];
    spec.geometry.kernel.wendland_radius = 8.0;
    spec.phi_knots = vec![0.35; 4];
    spec.rho_knots = vec![0.6; 4];
    let sim = simulate_field(&spec).unwrap();
    let data = Dataset::from_simulation(&sim).unwrap();
    let model = Model::new(data, spec.model_geometry().unwrap(), PriorSpec::default(), mode).unwrap();
    let params = Params { s: sim.s.clone(), phi_knots: spec.phi_knots.clone(), rho_knots: spec.rho_knots.clone(), coef: coef(0.0, 1.0, 0.2) };
    (model, params)
}

#[test]
fn single_site_likelihood_integrates_to_gev_density() {
    let geo = one_knot_geometry(vec![[1.0, 1.0]]);
    let gev = GevParams::new(0.3, 1.4, 0.1).unwrap();
    for (phi, y) in [(0.3, 1.1), (0.5, -0.4), (0.7, 4.0), (0.45, 9.0)] {
        let data = Dataset::new(vec![[1.0, 1.0]], DMatrix::from_element(1, 1, y), MarginalDesign::intercept_only(1, 1)).unwrap();
        let model = Model::new(data, geo.clone(), PriorSpec::default(), LikelihoodMode::Full).unwrap();
        let surf = model.surfaces(&[phi], &[1.0], &coef(gev.mu, gev.sigma, gev.xi)).unwrap();
        let f = |v: f64| {
            let s = v.exp();
            let ll = model.log_likelihood_replicate(0, &[s], &surf).unwrap();
            (ll + levy_ln_density(s, 0.5, 0.0) + v).exp()
        };
        let opts = QuadOptions { epsabs: 0.0, epsrel: 1e-12, max_intervals: 4000 };
        let total = integrate(f, -60.0, 120.0, opts).unwrap().value;
        let target = gev_ln_pdf(y, &gev).exp();
        assert!((total / target - 1.0).abs() < 1e-8, "φ={phi} y={y}: {total} vs {target}");
    }
}

#[test]
fn out_of_support_observation_has_zero_likelihood() {
    let geo = one_knot_geometry(vec![[1.0, 1.0]]);
    // ξ = 0.2, μ = 0, σ = 1: lower endpoint -5.
    let data = Dataset::new(vec![[1.0, 1.0]], DMatrix::from_element(1, 1, -6.0), MarginalDesign::intercept_only(1, 1)).unwrap();
    let model = Model::new(data, geo, PriorSpec::default(), LikelihoodMode::Full).unwrap();
    let surf = model.surfaces(&[0.4], &[1.0], &coef(0.0, 1.0, 0.2)).unwrap();
    assert_eq!(model.log_likelihood_replicate(0, &[1.0], &surf).unwrap(), f64::NEG_INFINITY);
}

#[test]
fn masking_a_site_equals_the_smaller_model() {
    let (model, params) = small_model(6, 3, 11, LikelihoodMode::Full);
    let masked = Model::new(model.data.with_missing(&[(2, 1)]), model.geo.clone(), model.prior, LikelihoodMode::Full).unwrap();
    let keep: Vec<usize> = vec![0, 1, 3, 4, 5];
    let sites: Vec<[f64; 2]> = keep.iter().map(|&j| model.geo.sites[j]).collect();
    let y = model.data.y.select_rows(&keep).columns(1, 1).into_owned();
    let small_geo = model.geo.with_sites(sites.clone()).unwrap();
    let small = Model::new(
        Dataset::new(sites, y, MarginalDesign::intercept_only(5, 1)).unwrap(),
        small_geo,
        model.prior,
        LikelihoodMode::Full,
    )
    .unwrap();
    let s_col: Vec<f64> = params.s.column(1).iter().copied().collect();
    let a = masked
        .log_likelihood_replicate(1, &s_col, &masked.surfaces(&params.phi_knots, &params.rho_knots, &params.coef).unwrap())
        .unwrap();
    let b = small
        .log_likelihood_replicate(0, &s_col, &small.surfaces(&params.phi_knots, &params.rho_knots, &params.coef).unwrap())
        .unwrap();
    assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    // Patterns: full and one with a hole.
    assert_eq!(masked.n_patterns(), 2);
}

#[test]
fn replicate_terms_factorize() {
    let (model, params) = small_model(8, 5, 3, LikelihoodMode::Full);
    let surf = model.surfaces(&params.phi_knots, &params.rho_knots, &params.coef).unwrap();
    let reps = model.build_replicates(&params.s, &surf, None).unwrap();
    let mut s2 = params.s.clone();
    s2[(1, 2)] *= 3.0;
    let reps2 = model.build_replicates(&s2, &surf, None).unwrap();
    for t in 0..5 {
        if t == 2 {
            assert_ne!(reps[t].ll, reps2[t].ll);
        } else {
            assert_eq!(reps[t].ll, reps2[t].ll);
        }
    }
    let forward: f64 = reps.iter().map(|r| r.ll).sum();
    let rev: Vec<f64> = (0..5)
        .rev()
        .map(|t| {
            let col: Vec<f64> = params.s.column(t).iter().copied().collect();
            model.log_likelihood_replicate(t, &col, &surf).unwrap()
        })
        .collect();
    let backward: f64 = rev.iter().rev().sum();
    assert!((forward - backward).abs() < 1e-12 * forward.abs().max(1.0));
    let lp = model.log_posterior_fresh(&params).unwrap();
    assert!((lp - forward - model.log_prior(&params)).abs() < 1e-9 * lp.abs());
}

#[test]
fn caches_stay_coherent_through_updates() {
    let (model, params) = small_model(10, 6, 5, LikelihoodMode::Full);
    let cfg = ChainConfig { n_iter: 60, burn_in: 60, seed: 9, check_every: 1, check_tol: 1e-8, ..Default::default() };
    let out = run_chain(&model, cfg, params).unwrap();
    assert_eq!(out.traces.len(), 60);
    assert!(out.acceptance.iter().all(|a| a.accepted > 0), "{:?}", out.acceptance);
}

#[test]
fn vanishing_proposals_are_always_accepted() {
    let (model, params) = small_model(6, 3, 7, LikelihoodMode::Full);
    let tiny = InitialScales { s: 1e-9, phi: 1e-9, rho: 1e-9, margin: 1e-9 };
    let cfg = ChainConfig { n_iter: 40, burn_in: 0, seed: 2, init_scales: tiny, ..Default::default() };
    let out = run_chain(&model, cfg, params).unwrap();
    for a in &out.acceptance {
        assert!(a.rate > 0.97, "{} accepted at {}", a.name, a.rate);
    }
}

#[test]
fn resume_reproduces_the_uninterrupted_chain() {
    let (model, params) = small_model(8, 4, 13, LikelihoodMode::Full);
    let cfg = ChainConfig { n_iter: 70, burn_in: 50, adapt: scalemix::inference::AdaptConfig { batch: 10, ..Default::default() }, seed: 4, trace_s: true, ..Default::default() };
    let full = run_chain(&model, cfg.clone(), params.clone()).unwrap();

    let mut first = Sampler::new(&model, cfg.clone(), params).unwrap();
    let mut saved = None;
    first.run_to(33, 33, |c| {
        saved = Some(c.to_bytes());
        Ok(())
    })
    .unwrap();
    drop(first);
    let ck = Container::from_bytes(&saved.unwrap()).unwrap();
    let mut resumed = Sampler::resume(&model, cfg.clone(), &ck).unwrap();
    assert_eq!(resumed.iteration(), 33);
    resumed.run_to(70, 0, |_| Ok(())).unwrap();
    let resumed = resumed.finish();
    assert_eq!(full.trace_digest(), resumed.trace_digest());
    assert_eq!(full.final_params, resumed.final_params);
    assert_eq!(full.final_scales, resumed.final_scales);

    let mut other = cfg.clone();
    other.seed = 5;
    assert!(Sampler::resume(&model, other, &ck).is_err());
}

#[test]
fn identical_runs_are_bit_identical() {
    let (model, params) = small_model(8, 4, 17, LikelihoodMode::Full);
    let cfg = ChainConfig { n_iter: 25, burn_in: 10, seed: 8, ..Default::default() };
    let a = run_chain(&model, cfg.clone(), params.clone()).unwrap();
    let b = run_chain(&model, cfg, params).unwrap();
    assert_eq!(a.trace_digest(), b.trace_digest());
}

#[test]
fn frozen_blocks_never_move() {
    let (model, params) = small_model(6, 3, 19, LikelihoodMode::Full);
    let cfg = ChainConfig { n_iter: 20, burn_in: 10, seed: 3, fixed_blocks: vec![MarginBlock::Xi], ..Default::default() };
    let out = run_chain(&model, cfg, params.clone()).unwrap();
    assert!(out.traces.coef.iter().all(|row| row[2] == params.coef.xi[0]));
    assert!(out.acceptance.iter().all(|a| a.name != "xi"));
}

#[test]
fn data_driven_start_is_valid() {
    let (model, _) = small_model(20, 12, 23, LikelihoodMode::Full);
    let p = initial_params(&model, None).unwrap();
    assert!(model.log_posterior_fresh(&p).unwrap().is_finite());
    assert!(p.phi_knots.iter().all(|&v| v == 0.5));
    assert!(p.rho_knots[0] >= 0.05 && p.rho_knots[0] <= 10.0);
}
