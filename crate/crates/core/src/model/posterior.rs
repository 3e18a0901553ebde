use crate::error::{Error, Result};
use crate::latent::{nngp_log_density, nngp_log_density_grad_into, nngp_transform, nngp_transform_adjoint, NngpFactors};

use super::aggregate::aggregate;
use super::prior::{log_prior, prior_grad};
use super::{Distribution, FusionModel, Link, Loading, ParameterState, ResponseMap};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Components of the log posterior, each computed independently.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub log_likelihood: f64,
    pub log_prior: f64,
    /// One NNGP log density per latent process.
    pub nngp: Vec<f64>,
    /// Log-Jacobian of the log transforms of positive parameters.
    pub log_jacobian: f64,
    pub total: f64,
}

struct LikelihoodGrad<'a> {
    beta: &'a mut [f64],
    log_tau2: &'a mut [f64],
    z: &'a mut [f64],
    w: &'a mut [Vec<f64>],
}

/// Log likelihood of response `j`; optionally accumulates gradients.
fn response_loglik(model: &FusionModel, state: &ParameterState, j: usize, mut grad: Option<&mut LikelihoodGrad<'_>>) -> Result<f64> {
    let r = &model.responses[j];
    let map = &model.aggregation.responses[j];
    let q = model.n_processes();
    let zrow = &state.z[j * q..(j + 1) * q];
    let beta = &state.beta[j];
    let link = r.link();
    let tau2 = state.tau2[j].unwrap_or(1.0);
    let log_fact = &model.cache.log_factorial[j];
    let log_off = &model.cache.log_offset[j];

    let mut v = Vec::new();
    let mut total = 0.0;
    for i in 0..r.n_obs() {
        let members = map.members(i);
        v.clear();
        v.extend(members.iter().map(|&u| (0..q).map(|k| zrow[k] * state.w[k][u]).sum::<f64>()));
        let x = r.covariates.row(i);
        let lin: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
        let agg = match map {
            ResponseMap::Points(_) => v[0],
            ResponseMap::Areas(_) => aggregate(v.iter().copied(), link),
        };
        let eta = lin + agg;
        if !eta.is_finite() {
            return Err(Error::NonFiniteLikelihood { response: j });
        }
        let y = r.y[i];
        let (ll, g) = match r.distribution {
            Distribution::Gaussian => {
                let res = y - eta;
                if let Some(gr) = grad.as_deref_mut() {
                    gr.log_tau2[j] += -0.5 + 0.5 * res * res / tau2;
                }
                (-0.5 * (LN_2PI + tau2.ln()) - 0.5 * res * res / tau2, res / tau2)
            }
            Distribution::Poisson => {
                let mu = (log_off[i] + eta).exp();
                (y * (log_off[i] + eta) - mu - log_fact[i], y - mu)
            }
        };
        if !ll.is_finite() {
            return Err(Error::NonFiniteLikelihood { response: j });
        }
        total += ll;

        if let Some(gr) = grad.as_deref_mut() {
            for (gb, xv) in gr.beta.iter_mut().zip(x) {
                *gb += g * xv;
            }
            let h = members.len() as f64;
            let mx = if link == Link::Log && members.len() > 1 { v.iter().copied().fold(f64::NEG_INFINITY, f64::max) } else { 0.0 };
            let denom: f64 = if link == Link::Log && members.len() > 1 { v.iter().map(|a| (a - mx).exp()).sum() } else { 1.0 };
            for (a, &u) in members.iter().enumerate() {
                let weight = match (map, link) {
                    (ResponseMap::Points(_), _) => 1.0,
                    (ResponseMap::Areas(_), Link::Identity) => 1.0 / h,
                    (ResponseMap::Areas(_), Link::Log) => {
                        if members.len() > 1 {
                            (v[a] - mx).exp() / denom
                        } else {
                            1.0
                        }
                    }
                };
                let gv = g * weight;
                for k in 0..q {
                    gr.w[k][u] += zrow[k] * gv;
                    gr.z[j * q + k] += gv * state.w[k][u];
                }
            }
        }
    }
    Ok(total)
}

/// Sum of the response log likelihoods (Poisson normalizing constants
/// included).
pub fn log_likelihood(model: &FusionModel, state: &ParameterState) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..model.n_responses() {
        total += response_loglik(model, state, j, None)?;
    }
    Ok(total)
}

/// Value of the log posterior on the unconstrained scale, split into its
/// components.
pub fn log_posterior(model: &FusionModel, theta: &[f64]) -> Result<Decomposition> {
    let state = model.unpack(theta)?;
    let log_likelihood = log_likelihood(model, &state)?;
    let lp = log_prior(model, &state);
    let mut nngp = Vec::with_capacity(model.n_processes());
    for (k, p) in model.processes.iter().enumerate() {
        let spec = p.covariance(state.sigma2[k], state.phi[k]);
        let f = NngpFactors::build(&spec, model.nngp.clone(), false)?;
        nngp.push(nngp_log_density(&state.w[k], &f)?);
    }
    let l = &model.layout;
    let log_jacobian: f64 = (0..l.n_scalar()).filter(|&i| l.log_scale[i]).map(|i| theta[i]).sum();
    let total = log_likelihood + lp + nngp.iter().sum::<f64>() + log_jacobian;
    Ok(Decomposition { log_likelihood, log_prior: lp, nngp, log_jacobian, total })
}

/// Log posterior and its gradient over the flat unconstrained vector.
pub fn log_posterior_and_grad(model: &FusionModel, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    log_posterior_and_grad_weighted(model, theta, 1.0)
}

/// As [`log_posterior_and_grad`] with the likelihood scaled by `weight`
/// (`0` leaves the prior alone).
pub fn log_posterior_and_grad_weighted(model: &FusionModel, theta: &[f64], weight: f64) -> Result<(f64, Vec<f64>)> {
    let state = model.unpack(theta)?;
    let l = &model.layout;
    let (partial, mut grad) = observation_and_prior_terms(model, theta, &state, weight)?;
    let mut nngp_total = 0.0;
    for (k, p) in model.processes.iter().enumerate() {
        let spec = p.covariance(state.sigma2[k], state.phi[k]);
        let factors = NngpFactors::build(&spec, model.nngp.clone(), true)?;
        let range = l.w[k].clone();
        let (ld, d_ls2, d_lphi) = nngp_log_density_grad_into(&state.w[k], &factors, &mut grad[range])?;
        nngp_total += ld;
        if let Some(i) = l.log_sigma2[k] {
            grad[i] += d_ls2;
        }
        grad[l.log_phi[k]] += d_lphi;
    }
    let total = partial + nngp_total;
    if !total.is_finite() {
        return Err(Error::NonFiniteLikelihood { response: usize::MAX });
    }
    Ok((total, grad))
}

/// Weighted likelihood, prior and log-Jacobian with their gradient; the
/// latent-process density is left out.
pub(crate) fn observation_and_prior_terms(model: &FusionModel, theta: &[f64], state: &ParameterState, weight: f64) -> Result<(f64, Vec<f64>)> {
    let state = state.clone();
    let l = &model.layout;
    let q = model.n_processes();
    let n_resp = model.n_responses();
    let mut grad = vec![0.0; l.dim];

    let n_beta: usize = l.beta.iter().map(|r| r.len()).sum();
    let mut g_beta = vec![0.0; n_beta];
    let mut g_tau = vec![0.0; n_resp];
    let mut g_z = vec![0.0; n_resp * q];
    let mut g_w: Vec<Vec<f64>> = vec![vec![0.0; model.locations.len()]; q];
    let mut ll = 0.0;
    if weight != 0.0 {
        for j in 0..n_resp {
            let br = l.beta[j].clone();
            let mut gr = LikelihoodGrad { beta: &mut g_beta[br], log_tau2: &mut g_tau, z: &mut g_z, w: &mut g_w };
            ll += response_loglik(model, &state, j, Some(&mut gr))?;
        }
    }
    for (i, g) in g_beta.iter().enumerate() {
        // beta blocks are laid out contiguously from index 0
        grad[i] += weight * g;
    }
    for (j, idx) in l.log_tau2.iter().enumerate() {
        if let Some(i) = idx {
            grad[*i] += weight * g_tau[j];
        }
    }
    for (e, idx) in l.z.iter().enumerate() {
        if let Some(i) = idx {
            let chain = if model.design.mask[e] == Loading::Positive { state.z[e] } else { 1.0 };
            grad[*i] += weight * g_z[e] * chain;
        }
    }
    for (k, range) in l.w.iter().enumerate() {
        for (dst, g) in grad[range.clone()].iter_mut().zip(&g_w[k]) {
            *dst += weight * g;
        }
    }

    let (lp, jac) = prior_grad(model, theta, &state, &mut grad);
    Ok((weight * ll + lp + jac, grad))
}

/// Log posterior under the whitened latent parameterization: each latent
/// block of `theta` holds innovations `u ~ N(0, I)` and `w` follows by the
/// NNGP recursion. The Jacobian of `u ↦ w` cancels the NNGP normalizer, so
/// the latent term is just `-½‖u‖²`.
pub fn log_posterior_and_grad_noncentered(model: &FusionModel, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
    let l = &model.layout;
    let mut state = model.unpack(theta)?;
    let mut factors = Vec::with_capacity(model.processes.len());
    let mut theta_c = theta.to_vec();
    for (k, p) in model.processes.iter().enumerate() {
        let f = NngpFactors::build(&p.covariance(state.sigma2[k], state.phi[k]), model.nngp.clone(), true)?;
        let w = nngp_transform(&state.w[k], &f)?;
        theta_c[l.w[k].clone()].copy_from_slice(&w);
        factors.push(f);
    }
    let u = std::mem::take(&mut state.w);
    state.w = l.w.iter().map(|r| theta_c[r.clone()].to_vec()).collect();
    let (partial, mut grad) = observation_and_prior_terms(model, &theta_c, &state, 1.0)?;
    let mut latent = 0.0;
    for (k, f) in factors.iter().enumerate() {
        let range = l.w[k].clone();
        let (mut u_bar, d_ls2, d_lphi) = nngp_transform_adjoint(&u[k], &state.w[k], grad[range.clone()].to_vec(), f)?;
        for (g, ui) in u_bar.iter_mut().zip(&u[k]) {
            *g -= ui;
            latent -= 0.5 * (ui * ui + LN_2PI);
        }
        grad[range].copy_from_slice(&u_bar);
        if let Some(i) = l.log_sigma2[k] {
            grad[i] += d_ls2;
        }
        grad[l.log_phi[k]] += d_lphi;
    }
    let total = partial + latent;
    if !total.is_finite() {
        return Err(Error::NonFiniteLikelihood { response: usize::MAX });
    }
    Ok((total, grad))
}

/// Maps a whitened parameter vector to the usual one (latent blocks become
/// `w`).
pub fn noncentered_to_centered(model: &FusionModel, theta: &[f64]) -> Result<Vec<f64>> {
    let l = &model.layout;
    let state = model.unpack(theta)?;
    let mut out = theta.to_vec();
    for (k, p) in model.processes.iter().enumerate() {
        let f = NngpFactors::build(&p.covariance(state.sigma2[k], state.phi[k]), model.nngp.clone(), false)?;
        out[l.w[k].clone()].copy_from_slice(&nngp_transform(&state.w[k], &f)?);
    }
    Ok(out)
}
