use super::*;
use crate::covariance::CovarianceSpec;
use crate::inference::{ChainSamples, SamplerConfig, Target};
use crate::model::{build_model, log_likelihood, DesignMatrix, Loading, PriorSpec, ResponseMap, Support};
use crate::rng::substream;
use rand::seq::SliceRandom;

fn small_one(seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::one().with_seed(seed);
    c.n_dense = 200;
    c.n_geostat = 30;
    c.n_areas = 6;
    c.grid_nx = 5;
    c.grid_ny = 5;
    c.prediction_grid = 4;
    c
}

fn small_two(seed: u64) -> ScenarioConfig {
    let mut c = ScenarioConfig::two().with_seed(seed);
    c.n_dense = 300;
    c.n_geostat = 40;
    c.n_areas = 8;
    c.grid_nx = 6;
    c.grid_ny = 6;
    c
}

fn n_obs(d: &ScenarioData) -> Vec<usize> {
    d.responses.iter().map(|r| r.y.len()).collect()
}

#[test]
fn study_one_default_dimensions() {
    let d = generate_scenario_one(&ScenarioConfig::one()).unwrap();
    assert_eq!(n_obs(&d), [200, 100, 400]);
    assert_eq!(d.prediction_sites.len(), 1600);
    assert_eq!(d.truth.latent_at_prediction[0].len(), 1600);
    assert!(d.truth.n_dense >= 4000);
    assert_eq!(d.truth.params.len(), 7);
    assert_eq!(d.truth.params[4].name, "sigma2_1");
    assert_eq!(d.truth.params[4].value, 0.5);
}

#[test]
fn study_two_reduced_dimensions_and_loadings() {
    let cfg = ScenarioConfig::two().with_reduction(0.4);
    assert_eq!(cfg.dims(), (200, 40, 20, 8));
    assert_eq!(ScenarioConfig::two().z, [1.2, 0.0, 0.5, 1.2, 0.0, 1.0]);
    let d = generate_scenario_two(&cfg).unwrap();
    assert_eq!(n_obs(&d), [200, 40, 160]);
    let labels: Vec<&str> = d.truth.params.iter().map(|p| p.label.as_str()).collect();
    assert_eq!(
        labels,
        ["beta_10", "beta_11", "beta_20", "beta_21", "Z_1", "Z_21", "Z_22", "Z_3", "phi_1", "phi_2", "tau^2"]
    );
    let values: Vec<f64> = d.truth.params.iter().map(|p| p.value).collect();
    assert_eq!(values, [3.0, 5.0, 0.5, 2.0, 1.2, 0.5, 1.2, 1.0, 5.0, 25.0, 0.5]);

    // every truth name exists in the fitted model
    let m = scenario_model(&d, &[0, 1, 2], 5).unwrap();
    let names = m.scalar_names();
    for p in &d.truth.params {
        assert!(names.contains(&p.name), "{}", p.name);
    }
    let masks = &m.design.mask;
    assert_eq!(
        masks,
        &[Loading::Positive, Loading::Fixed(0.0), Loading::Free, Loading::Positive, Loading::Fixed(0.0), Loading::Positive]
    );
    assert!(scenario_model(&d, &[0, 1], 5).is_err());
}

#[test]
fn noiseless_geostat_equals_latent() {
    let mut cfg = small_one(4);
    cfg.tau2 = 1e-14;
    cfg.beta = [vec![0.0, 0.0], vec![0.0, 0.0]];
    let d = generate_scenario(&cfg).unwrap();
    for (y, w) in d.responses[0].y.iter().zip(&d.truth.latent_at_geostat[0]) {
        assert!((y - w).abs() < 1e-5, "{y} {w}");
    }
}

#[test]
fn point_pattern_mean_matches_lognormal_moment() {
    let mut cfg = small_one(0);
    cfg.n_geostat = 5;
    cfg.n_areas = 3;
    cfg.grid_nx = 10;
    cfg.grid_ny = 10;
    cfg.prediction_grid = 0;
    let (mut total, mut expect) = (0.0, 0.0);
    for seed in 0..200 {
        let d = generate_scenario(&cfg.clone().with_seed(seed)).unwrap();
        let pp = &d.responses[2];
        total += pp.y.iter().sum::<f64>();
        expect += pp.offset.iter().sum::<f64>() * (0.5f64 / 2.0).exp();
    }
    let rel = (total - expect).abs() / expect;
    assert!(rel < 0.05, "observed {total}, expected {expect}");
}

#[test]
fn zero_loading_ignores_second_process() {
    let d = generate_scenario(&small_two(2)).unwrap();
    let m = build_model(
        vec![d.responses[0].clone()],
        scenario_model(&d, &[0, 1, 2], 5).unwrap().processes,
        DesignMatrix::new(1, 2, vec![Loading::Positive, Loading::Fixed(0.0)]).unwrap(),
        PriorSpec::default(),
        5,
    )
    .unwrap();
    let mut rng = substream(9, "test", 0);
    let theta = m.initial_point(&mut rng);
    let mut state = m.unpack(&theta).unwrap();
    let before = log_likelihood(&m, &state).unwrap();
    state.w[1].shuffle(&mut rng);
    state.w[1].iter_mut().for_each(|v| *v += 3.0);
    assert_eq!(log_likelihood(&m, &state).unwrap(), before);
    state.w[0].shuffle(&mut rng);
    assert_ne!(log_likelihood(&m, &state).unwrap(), before);
}

#[test]
fn generation_is_reproducible() {
    let a = generate_scenario(&small_two(11)).unwrap();
    let b = generate_scenario(&small_two(11)).unwrap();
    assert_eq!(a.responses, b.responses);
    assert_eq!(a.truth, b.truth);
    let c = generate_scenario(&small_two(12)).unwrap();
    assert_ne!(a.responses[0].y, c.responses[0].y);
}

#[test]
fn config_validation() {
    let mut c = ScenarioConfig::two();
    c.z.pop();
    assert!(matches!(c.validate(), Err(crate::Error::Config { key, .. }) if key == "z"));
    assert!(matches!(ScenarioConfig::one().with_reduction(0.0).validate(), Err(crate::Error::Config { key, .. }) if key == "reduction"));
    let mut c = ScenarioConfig::one();
    c.processes.push(CovarianceSpec::exponential(1.0, 1.0));
    assert!(generate_scenario(&c).is_err());
    let json = serde_json::to_string(&ScenarioConfig::two()).unwrap();
    assert_eq!(serde_json::from_str::<ScenarioConfig>(&json).unwrap(), ScenarioConfig::two());
}

/// Hand-built chains holding constant draws.
fn constant_chains(m: &crate::model::FusionModel, scalars: &[f64], latent: &[Vec<f64>], n_chains: usize, n: usize) -> Vec<ChainSamples> {
    (0..n_chains)
        .map(|_| ChainSamples {
            names: m.scalar_names(),
            draws: vec![scalars.to_vec(); n],
            latent: latent.iter().map(|w| vec![w.clone(); n]).collect(),
            accept_stat: vec![1.0; n],
            n_leapfrog: vec![1; n],
            tree_depth: vec![1; n],
            divergent: vec![false; n],
            energy: vec![0.0; n],
            step_size: 0.1,
            inv_metric: vec![1.0; m.dim()],
        })
        .collect()
}

#[test]
fn recovery_single_draw_collapses() {
    let d = generate_scenario(&small_two(3)).unwrap();
    let m = scenario_model(&d, &[0, 1, 2], 5).unwrap();
    let names = m.scalar_names();
    let mut scalars = vec![0.0; names.len()];
    for p in &d.truth.params {
        scalars[names.iter().position(|n| *n == p.name).unwrap()] = p.value;
    }
    let ResponseMap::Points(idx) = &m.aggregation.responses[0] else { panic!() };
    let mut latent = vec![vec![0.0; m.locations.len()]; 2];
    for k in 0..2 {
        for (u, v) in idx.iter().zip(&d.truth.latent_at_geostat[k]) {
            latent[k][*u] = *v;
        }
    }
    let chains = constant_chains(&m, &scalars, &latent, 1, 1);
    let r = recovery_report(&m, &chains, &d.truth).unwrap();
    assert_eq!(r.parameters.len(), 11);
    assert_eq!(r.n_covered(), 11);
    for p in &r.parameters {
        assert_eq!((p.lower, p.median, p.upper), (p.truth, p.truth, p.truth));
        assert!(p.rhat.is_nan());
    }
    assert_eq!(r.latent_rmse, [0.0, 0.0]);

    scalars[0] += 1e-9;
    let r = recovery_report(&m, &constant_chains(&m, &scalars, &latent, 2, 4), &d.truth).unwrap();
    assert!(!r.parameters[0].covered);
    assert_eq!(r.n_covered(), 10);
    assert_eq!(r.parameters[1].rhat, 1.0);
    assert!(r.recovery_table().contains("tau^2"));
}

#[test]
fn recovery_flags_follow_interval() {
    let d = generate_scenario(&small_two(5)).unwrap();
    let m = scenario_model(&d, &[0, 1, 2], 5).unwrap();
    let names = m.scalar_names();
    let i = names.iter().position(|n| n == "beta_11").unwrap();
    let mut chains = constant_chains(&m, &vec![1.0; names.len()], &[vec![0.0; m.locations.len()], vec![0.0; m.locations.len()]], 2, 100);
    for (c, ch) in chains.iter_mut().enumerate() {
        for (t, row) in ch.draws.iter_mut().enumerate() {
            row[i] = 4.0 + 2.0 * (t as f64 + c as f64 * 0.5) / 100.0;
        }
    }
    let r = recovery_report(&m, &chains, &d.truth).unwrap();
    let p = r.parameters.iter().find(|p| p.name == "beta_11").unwrap();
    assert!(p.lower < 5.0 && 5.0 < p.upper && p.covered);
    for p in &r.parameters {
        assert_eq!(p.covered, p.lower <= p.truth && p.truth <= p.upper);
    }
    let mut bad = d.truth.clone();
    bad.params[0].name = "nope".into();
    assert!(recovery_report(&m, &chains, &bad).is_err());
}

fn quick_sampler(seed: u64) -> SamplerConfig {
    SamplerConfig { n_chains: 2, n_iter: 300, n_warmup: 150, seed, ..Default::default() }
}

#[test]
fn noiseless_interpolation_at_training_sites() {
    let mut cfg = small_one(6);
    cfg.tau2 = 1e-12;
    cfg.fit_tau2 = Some(1e-6);
    cfg.beta = [vec![], vec![]];
    let d = generate_scenario(&cfg).unwrap();
    let Support::Geostat { locations } = &d.responses[0].support else { panic!() };
    let r = run_model_grid(&d, &[vec![0]], &quick_sampler(1), locations, &d.truth.latent_at_geostat[0], 5).unwrap();
    let e = r.grid[0].rmspe.unwrap();
    assert!(e < 0.05, "{e}");
}

#[test]
fn seven_cell_grid() {
    let d = generate_scenario(&small_one(8)).unwrap();
    let mut combos = all_combos();
    combos.push(vec![7]);
    let r = run_model_grid(&d, &combos, &quick_sampler(2), &d.prediction_sites, &d.truth.latent_at_prediction[0], 5).unwrap();
    assert_eq!(r.grid.len(), 8);
    for c in &r.grid[..7] {
        let v = c.rmspe.unwrap_or_else(|| panic!("{}: {:?}", c.label, c.error));
        assert!(v >= 0.0 && v.is_finite());
    }
    // a failing cell does not sink the grid
    assert!(r.grid[7].rmspe.is_none() && r.grid[7].error.is_some());
    let venn = r.venn_table();
    for l in ["only G", "only L", "only P", "G+L", "G+P", "L+P", "G+L+P"] {
        assert!(venn.contains(l));
    }
    assert!(run_model_grid(&d, &[], &quick_sampler(2), &d.prediction_sites, &d.truth.latent_at_prediction[0], 5).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.csv");
    write_grid_csv(&path, &[r]).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 9);
}
