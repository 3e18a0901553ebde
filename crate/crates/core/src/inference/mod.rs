//! Multi-chain dynamic HMC over the unconstrained parameterization, warmup
//! adaptation, convergence diagnostics and posterior summaries.

mod adapt;
mod diagnostics;
mod nuts;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use diagnostics::{ess, mcse, quantile, rhat, summarize, summarize_chains, ParamSummary, Summary};
pub use nuts::TransitionInfo;

use crate::error::{Error, Result};
use crate::model::{log_posterior_and_grad, log_posterior_and_grad_noncentered, noncentered_to_centered, FusionModel, Loading};
use crate::rng::{substream, Rng};
use adapt::{DualAveraging, WindowedMetric};
use nuts::{hamiltonian, leapfrog, Point, Sampler};

/// Post-warmup divergence rate above which a run is rejected.
pub const MAX_DIVERGENCE_RATE: f64 = 0.2;
const MAX_INIT_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    pub n_chains: usize,
    /// Total iterations per chain, warmup included.
    pub n_iter: usize,
    pub n_warmup: usize,
    /// Cap on leapfrog steps per iteration; the tree depth limit is the
    /// largest `d` with `2^d - 1 <= max_leapfrog_steps`.
    pub max_leapfrog_steps: usize,
    pub target_acceptance: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { n_chains: 4, n_iter: 2000, n_warmup: 1000, max_leapfrog_steps: 1023, target_acceptance: 0.8, seed: 1 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Err(Error::Config { key: key.into(), message: message.into() });
        if self.n_chains < 1 {
            return bad("n_chains", "expected an integer >= 1");
        }
        if self.n_iter < 1 {
            return bad("n_iter", "expected a positive integer");
        }
        if self.n_warmup >= self.n_iter {
            return bad("n_warmup", "expected an integer smaller than n_iter");
        }
        if self.max_leapfrog_steps < 1 {
            return bad("max_leapfrog_steps", "expected a positive integer");
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return bad("target_acceptance", "expected a number in (0, 1)");
        }
        Ok(())
    }

    pub fn max_depth(&self) -> usize {
        let mut d = 0;
        while (1usize << (d + 1)) - 1 <= self.max_leapfrog_steps {
            d += 1;
        }
        d.max(1)
    }

    pub fn n_draws(&self) -> usize {
        self.n_iter - self.n_warmup
    }
}

/// A differentiable log density on an unconstrained space.
pub trait Target: Sync {
    fn dim(&self) -> usize;
    /// Log density; fills `grad`. Errors and non-finite values are treated
    /// as zero density.
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;
    /// Starting point for one initialization attempt.
    fn initial_point(&self, rng: &mut Rng) -> Vec<f64>;
    /// Names of the scalar outputs returned by [`Target::constrain`].
    fn scalar_names(&self) -> Vec<String>;
    /// Natural-scale scalar parameters and latent blocks (may be empty).
    fn constrain(&self, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>);
}

impl Target for FusionModel {
    fn dim(&self) -> usize {
        FusionModel::dim(self)
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (v, g) = log_posterior_and_grad(self, theta)?;
        grad.copy_from_slice(&g);
        Ok(v)
    }

    /// β and free loadings uniform on (-2, 2); log-scale parameters at their
    /// prior medians with `N(0, 0.1²)` jitter; latent values `N(0, 0.1²)`.
    fn initial_point(&self, rng: &mut Rng) -> Vec<f64> {
        let l = &self.layout;
        let mut theta = vec![0.0; l.dim];
        let jitter = |rng: &mut Rng| 0.1 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        for r in &l.beta {
            for v in &mut theta[r.clone()] {
                *v = rng.random_range(-2.0..2.0);
            }
        }
        let tau_med = self.priors.tau2.median().ln();
        for i in l.log_tau2.iter().flatten() {
            theta[*i] = tau_med + jitter(rng);
        }
        let z_med = self.priors.positive_loading().median().ln();
        for (idx, m) in l.z.iter().zip(&self.design.mask) {
            if let Some(i) = idx {
                theta[*i] = match m {
                    Loading::Positive => z_med + jitter(rng),
                    _ => rng.random_range(-2.0..2.0),
                };
            }
        }
        let s_med = self.priors.sigma2.median().ln();
        for i in l.log_sigma2.iter().flatten() {
            theta[*i] = s_med + jitter(rng);
        }
        for (k, &i) in l.log_phi.iter().enumerate() {
            theta[i] = self.processes[k].phi_prior.median().ln() + jitter(rng);
        }
        for r in &l.w {
            for v in &mut theta[r.clone()] {
                *v = jitter(rng);
            }
        }
        theta
    }

    fn scalar_names(&self) -> Vec<String> {
        self.layout.names.clone()
    }

    fn constrain(&self, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        let latent = self.layout.w.iter().map(|r| theta[r.clone()].to_vec()).collect();
        (self.scalar_values(theta), latent)
    }
}

/// Which coordinates the sampler sees for the latent blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parameterization {
    /// The latent values themselves.
    Centered,
    /// Standardized NNGP innovations; mixes better when the data are only
    /// weakly informative about `w`.
    #[default]
    Noncentered,
}

/// [`FusionModel`] sampled in whitened latent coordinates. Draws are
/// reported as latent values, exactly as for the centered target.
pub struct NonCentered<'a>(pub &'a FusionModel);

impl Target for NonCentered<'_> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let (v, g) = log_posterior_and_grad_noncentered(self.0, theta)?;
        grad.copy_from_slice(&g);
        Ok(v)
    }

    fn initial_point(&self, rng: &mut Rng) -> Vec<f64> {
        self.0.initial_point(rng)
    }

    fn scalar_names(&self) -> Vec<String> {
        self.0.layout.names.clone()
    }

    fn constrain(&self, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        match noncentered_to_centered(self.0, theta) {
            Ok(c) => self.0.constrain(&c),
            Err(_) => {
                let nan = self.0.layout.w.iter().map(|r| vec![f64::NAN; r.len()]).collect();
                (self.0.scalar_values(theta), nan)
            }
        }
    }
}

/// Runs chains on `model` in the chosen coordinates.
pub fn sample_model(model: &FusionModel, cfg: &SamplerConfig, param: Parameterization) -> Result<Vec<ChainSamples>> {
    match param {
        Parameterization::Centered => run_sampler(model, cfg, InitStrategy::Random),
        Parameterization::Noncentered => run_sampler(&NonCentered(model), cfg, InitStrategy::Random),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    /// Target-defined random starts, redrawn until the density is finite.
    Random,
    /// The same unconstrained starting point for every chain.
    Fixed(Vec<f64>),
}

/// Post-warmup output of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainSamples {
    pub names: Vec<String>,
    /// Iterations × named scalar parameters, natural scale.
    pub draws: Vec<Vec<f64>>,
    /// Per latent process: iterations × locations.
    pub latent: Vec<Vec<Vec<f64>>>,
    pub accept_stat: Vec<f64>,
    pub n_leapfrog: Vec<usize>,
    pub tree_depth: Vec<usize>,
    pub divergent: Vec<bool>,
    pub energy: Vec<f64>,
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

impl ChainSamples {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    /// Draws of scalar parameter `idx`.
    pub fn column(&self, idx: usize) -> Vec<f64> {
        self.draws.iter().map(|row| row[idx]).collect()
    }

    pub fn n_divergent(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }
}

fn initialize<T: Target + ?Sized>(target: &T, init: &InitStrategy, rng: &mut Rng) -> Result<Point> {
    match init {
        InitStrategy::Fixed(theta) => {
            if theta.len() != target.dim() {
                return Err(Error::Initialization(format!("initial point has length {}, expected {}", theta.len(), target.dim())));
            }
            let z = Point::at(target, theta.clone());
            if z.logp.is_finite() {
                Ok(z)
            } else {
                Err(Error::Initialization("log density is not finite at the supplied initial point".into()))
            }
        }
        InitStrategy::Random => {
            for _ in 0..MAX_INIT_ATTEMPTS {
                let z = Point::at(target, target.initial_point(rng));
                if z.logp.is_finite() {
                    return Ok(z);
                }
            }
            Err(Error::Initialization(format!("no finite log density after {MAX_INIT_ATTEMPTS} random starts")))
        }
    }
}

fn run_chain<T: Target + ?Sized>(target: &T, cfg: &SamplerConfig, init: &InitStrategy, chain: usize) -> Result<ChainSamples> {
    let mut rng = substream(cfg.seed, "chain", chain as u64);
    let mut z = initialize(target, init, &mut rng)?;
    let dim = target.dim();
    let mut sampler = Sampler::new(target, 1.0, vec![1.0; dim], cfg.max_depth());
    sampler.init_step_size(&z, &mut rng);
    let mut da = DualAveraging::new(cfg.target_acceptance);
    da.restart(sampler.eps);
    let mut metric = WindowedMetric::new(dim, cfg.n_warmup);

    for _ in 0..cfg.n_warmup {
        let (next, info) = sampler.transition(&z, &mut rng);
        z = next;
        sampler.eps = da.update(info.accept_stat);
        if metric.learn(&z.q, &mut sampler.inv_metric) {
            sampler.init_step_size(&z, &mut rng);
            da.restart(sampler.eps);
        }
    }
    if cfg.n_warmup > 0 {
        sampler.eps = da.final_step_size();
    }
    log::debug!("chain {chain}: adapted step size {:.4e}", sampler.eps);

    let n = cfg.n_draws();
    let names = target.scalar_names();
    let mut out = ChainSamples {
        names,
        draws: Vec::with_capacity(n),
        latent: Vec::new(),
        accept_stat: Vec::with_capacity(n),
        n_leapfrog: Vec::with_capacity(n),
        tree_depth: Vec::with_capacity(n),
        divergent: Vec::with_capacity(n),
        energy: Vec::with_capacity(n),
        step_size: sampler.eps,
        inv_metric: Vec::new(),
    };
    for it in 0..n {
        let (next, info) = sampler.transition(&z, &mut rng);
        z = next;
        let (scalars, latent) = target.constrain(&z.q);
        if it == 0 {
            out.latent = vec![Vec::with_capacity(n); latent.len()];
        }
        for (dst, blk) in out.latent.iter_mut().zip(latent) {
            dst.push(blk);
        }
        out.draws.push(scalars);
        out.accept_stat.push(info.accept_stat);
        out.n_leapfrog.push(info.n_leapfrog);
        out.tree_depth.push(info.depth);
        out.divergent.push(info.divergent);
        out.energy.push(info.energy);
    }
    out.inv_metric = sampler.inv_metric;
    Ok(out)
}

/// Runs `cfg.n_chains` independent chains in parallel. Chain `c` draws all
/// its randomness from substream `("chain", c)` of `cfg.seed`, so output
/// does not depend on scheduling.
pub fn run_sampler<T: Target + ?Sized>(target: &T, cfg: &SamplerConfig, init: InitStrategy) -> Result<Vec<ChainSamples>> {
    cfg.validate()?;
    let chains: Vec<ChainSamples> =
        (0..cfg.n_chains).into_par_iter().map(|c| run_chain(target, cfg, &init, c)).collect::<Result<_>>()?;
    let draws: usize = chains.iter().map(|c| c.n_draws()).sum();
    let divergences: usize = chains.iter().map(|c| c.n_divergent()).sum();
    if draws > 0 && divergences as f64 > MAX_DIVERGENCE_RATE * draws as f64 {
        return Err(Error::SamplerHealth {
            reason: format!("{divergences} of {draws} post-warmup transitions diverged"),
            divergences,
            draws,
        });
    }
    Ok(chains)
}

/// Runs `n_steps` leapfrog steps with unit metric from `(q, p)` and returns
/// the Hamiltonian after each step (the initial value first).
pub fn leapfrog_energies<T: Target + ?Sized>(target: &T, q: &[f64], p: &[f64], eps: f64, n_steps: usize) -> Vec<f64> {
    let inv_metric = vec![1.0; q.len()];
    let mut z = Point::at(target, q.to_vec());
    z.p = p.to_vec();
    let mut out = vec![hamiltonian(&z, &inv_metric)];
    for _ in 0..n_steps {
        leapfrog(target, &mut z, eps, &inv_metric);
        out.push(hamiltonian(&z, &inv_metric));
    }
    out
}

#[cfg(test)]
mod tests;
