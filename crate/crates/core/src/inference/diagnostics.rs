use serde::Serialize;

use super::ChainSamples;
use crate::error::{Error, Result};

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Variance with divisor `n`.
fn pop_var(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
}

fn check_chains(chains: &[Vec<f64>], min_len: usize) -> Result<usize> {
    if chains.len() < 2 {
        return Err(Error::InvalidArgument("rhat needs at least two chains".into()));
    }
    let n = chains[0].len();
    if chains.iter().any(|c| c.len() != n) {
        return Err(Error::InvalidArgument("chains must have equal lengths".into()));
    }
    if n < min_len {
        return Err(Error::InvalidArgument(format!("chains need at least {min_len} draws")));
    }
    Ok(n)
}

/// Split-chain potential scale reduction factor.
///
/// Each chain is cut into two halves (a middle draw is dropped for odd
/// lengths). With `W` the mean within-half variance and `B` the variance of
/// the half means, both with divisor equal to their count,
/// `rhat = sqrt(1 + B / W)`. Halves that agree exactly give exactly 1.
pub fn rhat(chains: &[Vec<f64>]) -> Result<f64> {
    let n = check_chains(chains, 4)?;
    let half = n / 2;
    let mut halves: Vec<&[f64]> = Vec::with_capacity(2 * chains.len());
    for c in chains {
        halves.push(&c[..half]);
        halves.push(&c[n - half..]);
    }
    let w = halves.iter().map(|h| pop_var(h)).sum::<f64>() / halves.len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let b = pop_var(&means);
    if w == 0.0 {
        return Ok(if b == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok((1.0 + b / w).sqrt())
}

/// Autocovariance at `lag` with divisor `n`.
fn autocov(x: &[f64], m: f64, lag: usize) -> f64 {
    let n = x.len();
    (0..n - lag).map(|i| (x[i] - m) * (x[i + lag] - m)).sum::<f64>() / n as f64
}

/// Multi-chain effective sample size with Geyer's initial monotone
/// sequence estimator.
pub fn ess(chains: &[Vec<f64>]) -> Result<f64> {
    if chains.is_empty() || chains[0].len() < 4 || chains.iter().any(|c| c.len() != chains[0].len()) {
        return Err(Error::InvalidArgument("ess needs equal-length chains with at least 4 draws".into()));
    }
    let n = chains[0].len();
    let m = chains.len();
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let acov = |lag: usize| -> f64 { chains.iter().zip(&means).map(|(c, mu)| autocov(c, *mu, lag)).sum::<f64>() / m as f64 };
    let acov0: Vec<f64> = chains.iter().zip(&means).map(|(c, mu)| autocov(c, *mu, 0)).collect();
    let nf = n as f64;
    let mean_var = acov0.iter().map(|a| a * nf / (nf - 1.0)).sum::<f64>() / m as f64;
    let mut var_plus = mean_var * (nf - 1.0) / nf;
    if m > 1 {
        let mm = mean(&means);
        var_plus += means.iter().map(|v| (v - mm) * (v - mm)).sum::<f64>() / (m as f64 - 1.0);
    }
    if !(var_plus > 0.0) {
        return Ok((n * m) as f64);
    }
    let mut rho = vec![0.0; n];
    rho[0] = 1.0;
    let mut even = 1.0;
    let mut odd = 1.0 - (mean_var - acov(1)) / var_plus;
    rho[1] = odd;
    let mut s = 1;
    while s < n - 4 && even + odd > 0.0 {
        even = 1.0 - (mean_var - acov(s + 1)) / var_plus;
        odd = 1.0 - (mean_var - acov(s + 2)) / var_plus;
        if even + odd >= 0.0 {
            rho[s + 1] = even;
            rho[s + 2] = odd;
        }
        s += 2;
    }
    let max_s = s;
    if even > 0.0 && max_s + 1 < n {
        rho[max_s + 1] = even;
    }
    // initial monotone sequence
    let mut s = 1;
    while s + 3 <= max_s {
        if rho[s + 1] + rho[s + 2] > rho[s - 1] + rho[s] {
            let avg = (rho[s - 1] + rho[s]) / 2.0;
            rho[s + 1] = avg;
            rho[s + 2] = avg;
        }
        s += 2;
    }
    let total = (n * m) as f64;
    let tau = -1.0 + 2.0 * rho[..max_s.min(n)].iter().sum::<f64>() + rho.get(max_s + 1).copied().unwrap_or(0.0);
    Ok(total / tau.max(1.0 / total.log10()))
}

/// Monte Carlo standard error of the mean: `sd / sqrt(ess)`.
pub fn mcse(chains: &[Vec<f64>]) -> Result<f64> {
    let e = ess(chains)?;
    let all: Vec<f64> = chains.iter().flatten().copied().collect();
    let n = all.len() as f64;
    let sd = (pop_var(&all) * n / (n - 1.0)).sqrt();
    Ok(sd / e.sqrt())
}

/// Type-7 empirical quantile (linear interpolation between order
/// statistics) of sorted data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Median and central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn summarize(draws: &[f64]) -> Result<Summary> {
    if draws.is_empty() {
        return Err(Error::InvalidArgument("cannot summarize an empty draw set".into()));
    }
    let mut s = draws.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(Summary { median: quantile(&s, 0.5), lower: quantile(&s, 0.025), upper: quantile(&s, 0.975) })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    /// `NaN` with a single chain or fewer than 4 draws.
    pub rhat: f64,
    pub ess: f64,
}

/// Pooled summaries of every named scalar across chains.
pub fn summarize_chains(chains: &[ChainSamples]) -> Result<Vec<ParamSummary>> {
    let first = chains.first().ok_or_else(|| Error::InvalidArgument("no chains to summarize".into()))?;
    let mut out = Vec::with_capacity(first.names.len());
    for (i, name) in first.names.iter().enumerate() {
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(i)).collect();
        let all: Vec<f64> = cols.iter().flatten().copied().collect();
        let s = summarize(&all)?;
        let n = all.len() as f64;
        let sd = if all.len() > 1 { (pop_var(&all) * n / (n - 1.0)).sqrt() } else { 0.0 };
        out.push(ParamSummary {
            name: name.clone(),
            mean: mean(&all),
            sd,
            median: s.median,
            lower: s.lower,
            upper: s.upper,
            rhat: rhat(&cols).unwrap_or(f64::NAN),
            ess: ess(&cols).unwrap_or(f64::NAN),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normals(seed: u64, n: usize, shift: f64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn identical_stationary_chains() {
        let s = normals(1, 500, 0.0);
        let chain: Vec<f64> = s.iter().chain(&s).copied().collect();
        let r = rhat(&[chain.clone(), chain]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn separated_chains() {
        let r = rhat(&[normals(2, 1000, 0.0), normals(3, 1000, 10.0)]).unwrap();
        assert!(r > 3.0, "{r}");
    }

    #[test]
    fn hand_computed_toy() {
        // halves: [1,2] [3,4] [2,2] [4,6]
        // within (divisor 2): 0.25, 0.25, 0, 1  -> W = 0.375
        // means 1.5, 3.5, 2, 5 -> grand 3, B = (2.25+0.25+1+4)/4 = 1.875
        let r = rhat(&[vec![1.0, 2.0, 3.0, 4.0], vec![2.0, 2.0, 4.0, 6.0]]).unwrap();
        assert!((r - 6f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn constant_and_invalid_inputs() {
        assert_eq!(rhat(&[vec![2.0; 6], vec![2.0; 6]]).unwrap(), 1.0);
        assert!(rhat(&[vec![0.0; 6]]).is_err());
        assert!(rhat(&[vec![0.0; 3], vec![0.0; 3]]).is_err());
        assert!(rhat(&[vec![0.0; 6], vec![0.0; 5]]).is_err());
    }

    #[test]
    fn iid_ess_is_near_draw_count() {
        let chains: Vec<Vec<f64>> = (0..4).map(|c| normals(10 + c, 1000, 0.0)).collect();
        let e = ess(&chains).unwrap();
        assert!(e > 3000.0 && e < 5000.0, "{e}");
    }

    #[test]
    fn ar1_ess_matches_theory() {
        // AR(1) with coefficient a has ESS/N = (1-a)/(1+a)
        let a = 0.5;
        let chains: Vec<Vec<f64>> = (0..4)
            .map(|c| {
                let e = normals(20 + c, 5000, 0.0);
                let mut x = vec![0.0; 5000];
                for i in 1..5000 {
                    x[i] = a * x[i - 1] + e[i];
                }
                x
            })
            .collect();
        let ratio = ess(&chains).unwrap() / 20000.0;
        assert!((ratio - 1.0 / 3.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn summaries() {
        let s = summarize(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!(s.median, 3.0);
        assert!((s.lower - 1.1).abs() < 1e-12);
        let c = summarize(&[7.5; 9]).unwrap();
        assert_eq!((c.median, c.lower, c.upper), (7.5, 7.5, 7.5));
        let big = summarize(&normals(5, 100_000, 0.0)).unwrap();
        assert!(big.median.abs() < 0.02);
        assert!((big.lower + 1.96).abs() < 0.05 && (big.upper - 1.96).abs() < 0.05);
        assert!(summarize(&[]).is_err());
    }
}
