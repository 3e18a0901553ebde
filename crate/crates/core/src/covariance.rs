//! Stationary isotropic kernels of the Matérn family.

use faer::Mat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{dist, Location};
use crate::special::{bessel_k, gamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Exponential,
    Matern,
}

/// Kernel family plus partial sill `sigma2`, range `phi` and smoothness `nu`.
/// `nu` is a fixed model constant; the exponential family ignores it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CovarianceSpec {
    pub family: Family,
    pub sigma2: f64,
    pub phi: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
}

fn default_nu() -> f64 {
    0.5
}

impl CovarianceSpec {
    pub fn exponential(sigma2: f64, phi: f64) -> Self {
        Self { family: Family::Exponential, sigma2, phi, nu: 0.5 }
    }

    pub fn matern(sigma2: f64, phi: f64, nu: f64) -> Self {
        Self { family: Family::Matern, sigma2, phi, nu }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::InvalidArgument(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if !(self.phi > 0.0 && self.phi.is_finite()) {
            return Err(Error::InvalidArgument(format!("phi must be positive, got {}", self.phi)));
        }
        if self.family == Family::Matern && !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::InvalidArgument(format!("nu must lie in (0, 1], got {}", self.nu)));
        }
        Ok(())
    }

    /// Same kernel with new sill and range.
    pub fn with_params(&self, sigma2: f64, phi: f64) -> Self {
        Self { sigma2, phi, ..*self }
    }

    pub fn effective_nu(&self) -> f64 {
        match self.family {
            Family::Exponential => 0.5,
            Family::Matern => self.nu,
        }
    }

    /// Unit-sill correlation at distance `d`.
    #[inline]
    pub fn correlation(&self, d: f64) -> f64 {
        self.correlation_and_dlogphi(d).0
    }

    /// Correlation and its derivative with respect to `log phi`.
    #[inline]
    pub fn correlation_and_dlogphi(&self, d: f64) -> (f64, f64) {
        if d == 0.0 {
            return (1.0, 0.0);
        }
        match self.family {
            Family::Exponential => {
                let t = d / self.phi;
                let r = (-t).exp();
                (r, t * r)
            }
            Family::Matern => {
                let nu = self.nu;
                if nu == 0.5 {
                    let t = d / self.phi;
                    let r = (-t).exp();
                    return (r, t * r);
                }
                let x = (2.0 * nu).sqrt() * d / self.phi;
                if x > 700.0 {
                    return (0.0, 0.0);
                }
                let c = 2f64.powf(1.0 - nu) / gamma(nu);
                let xnu = x.powf(nu);
                let r = c * xnu * bessel_k(nu, x);
                // d/dx [x^ν K_ν(x)] = -x^ν K_{1-ν}(x), dx/dlogφ = -x
                let dr = c * xnu * x * bessel_k(1.0 - nu, x);
                (r.min(1.0), dr)
            }
        }
    }
}

/// Covariance at distance `d >= 0`.
pub fn kernel_eval(spec: &CovarianceSpec, d: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::InvalidArgument(format!("distance must be nonnegative, got {d}")));
    }
    Ok(spec.sigma2 * spec.correlation(d))
}

/// Dense covariance matrix over `locs`; each pair is evaluated once so the
/// result is exactly symmetric.
pub fn cov_matrix(spec: &CovarianceSpec, locs: &[Location]) -> Result<Mat<f64>> {
    if locs.is_empty() {
        return Err(Error::InvalidArgument("covariance matrix over an empty location set".into()));
    }
    let n = locs.len();
    let mut c = Mat::<f64>::zeros(n, n);
    for j in 0..n {
        c[(j, j)] = spec.sigma2;
        for i in (j + 1)..n {
            let v = spec.sigma2 * spec.correlation(dist(&locs[i], &locs[j]));
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    Ok(c)
}
