use super::*;
use crate::harness::synthetic::random_fusion_model;

/// Independent Gaussian with per-coordinate scales.
struct Gaussian {
    scales: Vec<f64>,
}

impl Target for Gaussian {
    fn dim(&self) -> usize {
        self.scales.len()
    }
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let mut lp = 0.0;
        for ((t, s), g) in theta.iter().zip(&self.scales).zip(grad.iter_mut()) {
            lp -= 0.5 * (t / s).powi(2);
            *g = -t / (s * s);
        }
        Ok(lp)
    }
    fn initial_point(&self, rng: &mut Rng) -> Vec<f64> {
        (0..self.dim()).map(|_| rng.random_range(-2.0..2.0)).collect()
    }
    fn scalar_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }
    fn constrain(&self, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        (theta.to_vec(), Vec::new())
    }
}

/// Density that is never finite.
struct Nowhere;

impl Target for Nowhere {
    fn dim(&self) -> usize {
        2
    }
    fn log_density_grad(&self, _: &[f64], _: &mut [f64]) -> Result<f64> {
        Ok(f64::NEG_INFINITY)
    }
    fn initial_point(&self, _: &mut Rng) -> Vec<f64> {
        vec![0.0; 2]
    }
    fn scalar_names(&self) -> Vec<String> {
        vec!["a".into(), "b".into()]
    }
    fn constrain(&self, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        (theta.to_vec(), Vec::new())
    }
}

fn cfg(n_iter: usize, n_warmup: usize, seed: u64) -> SamplerConfig {
    SamplerConfig { n_chains: 4, n_iter, n_warmup, seed, ..SamplerConfig::default() }
}

#[test]
fn config_defaults_and_depth() {
    let c = SamplerConfig::default();
    assert_eq!((c.n_chains, c.n_iter, c.n_warmup, c.max_leapfrog_steps), (4, 2000, 1000, 1023));
    assert_eq!(c.max_depth(), 10);
    assert_eq!(SamplerConfig { max_leapfrog_steps: 1024, ..c.clone() }.max_depth(), 10);
    assert_eq!(SamplerConfig { max_leapfrog_steps: 3, ..c.clone() }.max_depth(), 2);
    assert!(matches!(SamplerConfig { n_warmup: 2000, ..c.clone() }.validate(), Err(Error::Config { key, .. }) if key == "n_warmup"));
    assert!(SamplerConfig { n_chains: 0, ..c }.validate().is_err());
}

#[test]
fn leapfrog_conserves_energy_on_quadratic() {
    let t = Gaussian { scales: vec![1.0, 2.0, 0.5] };
    let h = leapfrog_energies(&t, &[0.3, -1.0, 0.2], &[1.0, 0.5, -0.7], 1e-3, 100);
    let drift = h.iter().map(|v| (v - h[0]).abs()).fold(0.0, f64::max);
    assert!(drift < 1e-6, "{drift}");
}

#[test]
fn standard_normal_moments() {
    let t = Gaussian { scales: vec![1.0; 10] };
    let chains = run_sampler(&t, &cfg(2000, 1000, 11), InitStrategy::Random).unwrap();
    assert!(chains.iter().all(|c| c.n_draws() == 1000));
    for i in 0..10 {
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(i)).collect();
        let all: Vec<f64> = cols.iter().flatten().copied().collect();
        let m = all.iter().sum::<f64>() / all.len() as f64;
        let v = all.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (all.len() - 1) as f64;
        let se = mcse(&cols).unwrap();
        assert!(m.abs() < 3.0 * se, "component {i}: mean {m}, mcse {se}");
        assert!((v - 1.0).abs() < 0.1, "component {i}: variance {v}");
        assert!(rhat(&cols).unwrap() < 1.01);
    }
}

#[test]
fn same_seed_same_draws() {
    let t = Gaussian { scales: vec![1.0, 3.0] };
    let a = run_sampler(&t, &cfg(300, 150, 5), InitStrategy::Random).unwrap();
    let b = run_sampler(&t, &cfg(300, 150, 5), InitStrategy::Random).unwrap();
    assert_eq!(a, b);
    let c = run_sampler(&t, &cfg(300, 150, 6), InitStrategy::Random).unwrap();
    assert_ne!(a[0].draws, c[0].draws);
}

#[test]
fn acceptance_rate_tracks_target() {
    let t = Gaussian { scales: (1..=20).map(|i| i as f64 / 4.0).collect() };
    for target in [0.65, 0.8, 0.9] {
        let c = SamplerConfig { target_acceptance: target, ..cfg(2000, 1000, 9) };
        let chains = run_sampler(&t, &c, InitStrategy::Random).unwrap();
        let stats: Vec<f64> = chains.iter().flat_map(|c| c.accept_stat.clone()).collect();
        let rate = stats.iter().sum::<f64>() / stats.len() as f64;
        assert!((rate - target).abs() < 0.1, "target {target}: rate {rate}");
    }
}

#[test]
fn metric_adapts_to_scales() {
    let t = Gaussian { scales: vec![0.1, 1.0, 10.0] };
    let chains = run_sampler(&t, &cfg(1500, 1000, 3), InitStrategy::Random).unwrap();
    for c in &chains {
        for (m, s) in c.inv_metric.iter().zip(&t.scales) {
            let ratio = m / (s * s);
            assert!(ratio > 0.6 && ratio < 1.6, "{ratio}");
        }
    }
}

#[test]
fn nowhere_finite_target_fails_initialization() {
    let r = run_sampler(&Nowhere, &cfg(10, 5, 1), InitStrategy::Random);
    assert!(matches!(r, Err(Error::Initialization(_))));
    let r = run_sampler(&Nowhere, &cfg(10, 5, 1), InitStrategy::Fixed(vec![0.0, 0.0]));
    assert!(matches!(r, Err(Error::Initialization(_))));
}

#[test]
fn fusion_draws_respect_constraints() {
    let model = random_fusion_model(1, (10, 4, 9), 2);
    let c = SamplerConfig { n_chains: 2, ..cfg(200, 100, 2) };
    let chains = run_sampler(&model, &c, InitStrategy::Random).unwrap();
    let names = &chains[0].names;
    for ch in &chains {
        assert_eq!(ch.draws.len(), 100);
        assert_eq!(ch.latent.len(), 2);
        assert_eq!(ch.latent[0][0].len(), model.locations.len());
        for row in &ch.draws {
            for (v, name) in row.iter().zip(names) {
                assert!(v.is_finite());
                let positive = name.starts_with("tau2") || name.starts_with("sigma2") || name.starts_with("phi") || name == "Z_11" || name == "Z_22" || name == "Z_32";
                if positive {
                    assert!(*v > 0.0, "{name} = {v}");
                }
            }
        }
    }
}
