use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_gamma, normal_cdf, normal_quantile};

use super::{Distribution, FusionModel, Loading, ParameterState, Variance};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

fn normal_logpdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * LN_2PI - sd.ln() - 0.5 * z * z
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseGamma {
    pub shape: f64,
    pub scale: f64,
}

impl InverseGamma {
    pub fn ln_pdf(&self, x: f64) -> f64 {
        let (a, b) = (self.shape, self.scale);
        a * b.ln() - ln_gamma(a) - (a + 1.0) * x.ln() - b / x
    }

    /// `x · d/dx ln p(x)`, the gradient on the log scale before the Jacobian.
    pub(crate) fn x_dln_pdf(&self, x: f64) -> f64 {
        -(self.shape + 1.0) + self.scale / x
    }

    /// Median by bisection on the log scale.
    pub fn median(&self) -> f64 {
        // P(X <= x) = Q(a, b/x), the upper regularized gamma
        let cdf = |x: f64| statrs::function::gamma::gamma_ur(self.shape, self.scale / x);
        let (mut lo, mut hi) = (-30.0f64, 30.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid.exp()) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi)).exp()
    }

    fn validate(&self) -> Result<()> {
        if self.shape > 0.0 && self.scale > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument("inverse-gamma parameters must be positive".into()))
        }
    }
}

/// Normal distribution truncated to `(0, ∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub sd: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, sd: f64) -> Self {
        Self { mean, sd }
    }

    /// `ln P(X > 0)` of the untruncated normal.
    fn ln_mass(&self) -> f64 {
        if self.mean == 0.0 {
            -std::f64::consts::LN_2
        } else {
            normal_cdf(self.mean / self.sd).ln()
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        normal_logpdf(x, self.mean, self.sd) - self.ln_mass()
    }

    pub(crate) fn x_dln_pdf(&self, x: f64) -> f64 {
        -x * (x - self.mean) / (self.sd * self.sd)
    }

    pub fn median(&self) -> f64 {
        let below = normal_cdf(-self.mean / self.sd);
        self.mean + self.sd * normal_quantile(below + 0.5 * (1.0 - below))
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.sd > 0.0 && self.mean.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument("truncated-normal prior needs a positive sd".into()))
        }
    }
}

/// Hyperpriors shared by all models. Range priors live on each
/// [`super::LatentSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorSpec {
    pub beta_sd: f64,
    pub sigma2: InverseGamma,
    pub tau2: InverseGamma,
    /// Free loadings get `N(0, z_sd²)`; positive ones the zero-truncated
    /// version.
    pub z_sd: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            beta_sd: 5.0,
            sigma2: InverseGamma { shape: 2.0, scale: 1.0 },
            tau2: InverseGamma { shape: 2.0, scale: 1.0 },
            z_sd: 5.0,
        }
    }
}

impl PriorSpec {
    pub(crate) fn validate(&self) -> Result<()> {
        self.sigma2.validate()?;
        self.tau2.validate()?;
        if self.beta_sd > 0.0 && self.z_sd > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument("prior scales must be positive".into()))
        }
    }

    pub fn positive_loading(&self) -> TruncatedNormal {
        TruncatedNormal::new(0.0, self.z_sd)
    }
}

/// Sum of prior log densities on the natural scale (no Jacobians).
pub fn log_prior(model: &FusionModel, state: &ParameterState) -> f64 {
    let pr = &model.priors;
    let mut lp = 0.0;
    for b in state.beta.iter().flatten() {
        lp += normal_logpdf(*b, 0.0, pr.beta_sd);
    }
    for (r, t) in model.responses.iter().zip(&state.tau2) {
        if let (Distribution::Gaussian, Variance::Sampled, Some(t)) = (r.distribution, r.tau2, t) {
            lp += pr.tau2.ln_pdf(*t);
        }
    }
    for (m, z) in model.design.mask.iter().zip(&state.z) {
        lp += match m {
            Loading::Free => normal_logpdf(*z, 0.0, pr.z_sd),
            Loading::Positive => pr.positive_loading().ln_pdf(*z),
            Loading::Fixed(_) => 0.0,
        };
    }
    for ((p, s2), phi) in model.processes.iter().zip(&state.sigma2).zip(&state.phi) {
        if p.sigma2 == Variance::Sampled {
            lp += pr.sigma2.ln_pdf(*s2);
        }
        lp += p.phi_prior.ln_pdf(*phi);
    }
    lp
}

/// Adds the prior and log-Jacobian gradient for the scalar block; returns
/// `(log prior, log Jacobian)`.
pub(crate) fn prior_grad(model: &FusionModel, theta: &[f64], state: &ParameterState, grad: &mut [f64]) -> (f64, f64) {
    let pr = &model.priors;
    let l = &model.layout;
    let mut lp = 0.0;
    let mut jac = 0.0;
    for (range, b) in l.beta.iter().zip(&state.beta) {
        for (i, v) in range.clone().zip(b) {
            lp += normal_logpdf(*v, 0.0, pr.beta_sd);
            grad[i] -= v / (pr.beta_sd * pr.beta_sd);
        }
    }
    for (idx, t) in l.log_tau2.iter().zip(&state.tau2) {
        if let (Some(i), Some(t)) = (idx, t) {
            lp += pr.tau2.ln_pdf(*t);
            jac += theta[*i];
            grad[*i] += pr.tau2.x_dln_pdf(*t) + 1.0;
        }
    }
    for ((idx, m), z) in l.z.iter().zip(&model.design.mask).zip(&state.z) {
        if let Some(i) = idx {
            match m {
                Loading::Free => {
                    lp += normal_logpdf(*z, 0.0, pr.z_sd);
                    grad[*i] -= z / (pr.z_sd * pr.z_sd);
                }
                Loading::Positive => {
                    let tn = pr.positive_loading();
                    lp += tn.ln_pdf(*z);
                    jac += theta[*i];
                    grad[*i] += tn.x_dln_pdf(*z) + 1.0;
                }
                Loading::Fixed(_) => {}
            }
        }
    }
    for (k, p) in model.processes.iter().enumerate() {
        if let Some(i) = l.log_sigma2[k] {
            let s2 = state.sigma2[k];
            lp += pr.sigma2.ln_pdf(s2);
            jac += theta[i];
            grad[i] += pr.sigma2.x_dln_pdf(s2) + 1.0;
        }
        let i = l.log_phi[k];
        let phi = state.phi[k];
        lp += p.phi_prior.ln_pdf(phi);
        jac += theta[i];
        grad[i] += p.phi_prior.x_dln_pdf(phi) + 1.0;
    }
    (lp, jac)
}
