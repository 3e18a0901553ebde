//! Data generators for the two simulation studies.

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution as _, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::covariance::CovarianceSpec;
use crate::error::{Error, Result};
use crate::geom::{grid_partition, sample_points_in_area, voronoi_partition, BBox, Location};
use crate::latent::simulate_grf;
use crate::model::{
    build_model, Covariates, DesignMatrix, Distribution, FusionModel, LatentSpec, Loading, PriorSpec, ResponseSpec,
    Support, TruncatedNormal, Variance,
};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    One,
    Two,
}

/// Everything needed to regenerate a simulated data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub domain: BBox,
    pub n_geostat: usize,
    pub n_areas: usize,
    pub grid_nx: usize,
    pub grid_ny: usize,
    /// Uniform points carrying the dense truth (doubled until every area
    /// contains one).
    pub n_dense: usize,
    /// Regression coefficients of the geostatistical and lattice responses:
    /// empty, intercept only, or intercept and slope on a standard-normal
    /// covariate. The point pattern has none.
    pub beta: [Vec<f64>; 2],
    /// True kernels, one per latent process.
    pub processes: Vec<CovarianceSpec>,
    /// True loadings, `3 × q` row-major.
    pub z: Vec<f64>,
    pub tau2: f64,
    /// Holds the Gaussian noise variance fixed at this value when fitting
    /// instead of sampling it.
    #[serde(default)]
    pub fit_tau2: Option<f64>,
    /// Multiplies the cell area to give the point-pattern offset `A`.
    pub offset: f64,
    /// Range prior used when fitting.
    pub phi_prior: TruncatedNormal,
    /// Sampling points per area for the fitted lattice approximation.
    pub sampling_points: usize,
    /// Side of the square prediction grid (0 for none).
    pub prediction_grid: usize,
    pub seed: u64,
    /// Scales the observation counts (`n_geostat`, `n_areas`, `grid_ny`).
    pub reduction: f64,
}

impl ScenarioConfig {
    /// Study one: one exponential process on `[0,10]²`.
    pub fn one() -> Self {
        Self {
            kind: ScenarioKind::One,
            domain: BBox::square(0.0, 10.0),
            n_geostat: 200,
            n_areas: 100,
            grid_nx: 20,
            grid_ny: 20,
            n_dense: 4000,
            beta: [vec![1.0, 5.0], vec![1.0, 1.5]],
            processes: vec![CovarianceSpec::exponential(0.5, 1.0)],
            z: vec![1.0, 1.0, 1.0],
            tau2: 1.0,
            fit_tau2: None,
            offset: 0.25,
            phi_prior: TruncatedNormal::new(1.0, 3.0),
            sampling_points: 5,
            prediction_grid: 40,
            seed: 1,
            reduction: 1.0,
        }
    }

    /// Study two: two unit-variance processes on `[0,100]²` loaded through
    /// a `3 × 2` matrix with a zero pattern.
    pub fn two() -> Self {
        Self {
            kind: ScenarioKind::Two,
            domain: BBox::square(0.0, 100.0),
            n_geostat: 500,
            n_areas: 100,
            grid_nx: 20,
            grid_ny: 20,
            n_dense: 4000,
            beta: [vec![3.0, 5.0], vec![0.5, 2.0]],
            processes: vec![CovarianceSpec::exponential(1.0, 5.0), CovarianceSpec::exponential(1.0, 25.0)],
            z: vec![1.2, 0.0, 0.5, 1.2, 0.0, 1.0],
            tau2: 0.5,
            fit_tau2: None,
            offset: 0.25,
            phi_prior: TruncatedNormal::new(10.0, 10.0),
            sampling_points: 5,
            prediction_grid: 0,
            seed: 1,
            reduction: 1.0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_reduction(mut self, factor: f64) -> Self {
        self.reduction = factor;
        self
    }

    pub fn q(&self) -> usize {
        self.processes.len()
    }

    fn scaled(&self, n: usize) -> usize {
        ((n as f64 * self.reduction).round() as usize).max(1)
    }

    /// Observation counts after the reduction factor: geostat sites, areas,
    /// grid columns and rows.
    pub fn dims(&self) -> (usize, usize, usize, usize) {
        (self.scaled(self.n_geostat), self.scaled(self.n_areas), self.grid_nx, self.scaled(self.grid_ny))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: &str| Err(Error::Config { key: key.into(), message: message.into() });
        if !(self.reduction > 0.0 && self.reduction <= 1.0) {
            return bad("reduction", "expected a number in (0, 1]");
        }
        if self.n_geostat == 0 || self.n_areas == 0 || self.grid_nx == 0 || self.grid_ny == 0 || self.n_dense == 0 {
            return bad("dimensions", "observation counts and grid sides must be positive");
        }
        if self.processes.is_empty() {
            return bad("processes", "expected at least one latent process");
        }
        if self.z.len() != 3 * self.q() {
            return bad("z", "expected 3 x q loadings in row-major order");
        }
        if self.beta.iter().any(|b| b.len() > 2) {
            return bad("beta", "expected at most an intercept and one slope per response");
        }
        if self.fit_tau2.is_some_and(|t| !(t > 0.0)) {
            return bad("fit_tau2", "expected a positive number");
        }
        if !(self.tau2 > 0.0) || !(self.offset > 0.0) {
            return bad("tau2", "tau2 and offset must be positive");
        }
        if self.sampling_points == 0 {
            return bad("sampling_points", "expected a positive integer");
        }
        for p in &self.processes {
            p.validate().map_err(|e| Error::Config { key: "processes".into(), message: e.to_string() })?;
        }
        self.phi_prior.validate().map_err(|e| Error::Config { key: "phi_prior".into(), message: e.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParam {
    /// Name in the fitted model's parameter layout.
    pub name: String,
    /// Row label in recovery tables.
    pub label: String,
    pub value: f64,
}

/// Quantities the fitter must not see.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTruth {
    /// True scalar parameters under the fitted model's names, in report
    /// order.
    pub params: Vec<TrueParam>,
    /// Per process: latent values at the geostatistical sites.
    pub latent_at_geostat: Vec<Vec<f64>>,
    /// Per process: latent values at the prediction sites.
    pub latent_at_prediction: Vec<Vec<f64>>,
    /// Number of dense points actually used.
    pub n_dense: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub config: ScenarioConfig,
    /// Geostatistical, lattice and point-pattern responses, in that order.
    pub responses: Vec<ResponseSpec>,
    pub prediction_sites: Vec<Location>,
    pub truth: ScenarioTruth,
}

fn grid_centers(b: &BBox, side: usize) -> Vec<Location> {
    if side == 0 {
        return Vec::new();
    }
    grid_partition(b, side, side).map(|c| c.into_iter().map(|c| c.center).collect()).unwrap_or_default()
}

fn normals<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> Result<f64> {
    if mean == 0.0 {
        return Ok(0.0);
    }
    let d = Poisson::new(mean).map_err(|e| Error::InvalidArgument(format!("poisson mean {mean}: {e}")))?;
    Ok(d.sample(rng))
}

fn generate(cfg: &ScenarioConfig) -> Result<ScenarioData> {
    cfg.validate()?;
    let q = cfg.q();
    let (n_geo, n_areas, nx, ny) = cfg.dims();
    let b = cfg.domain;
    let mut truth_rng = substream(cfg.seed, "truth", 0);
    let mut obs_rng = substream(cfg.seed, "responses", 0);
    let mut sp_rng = substream(cfg.seed, "sampling-points", 0);

    let seeds: Vec<Location> = (0..n_areas).map(|_| b.sample_uniform(&mut truth_rng)).collect();
    let areas = voronoi_partition(&seeds, &b)?;
    let cells = grid_partition(&b, nx, ny)?;
    let prediction_sites = grid_centers(&b, cfg.prediction_grid);

    let mut n_dense = cfg.n_dense;
    let (dense, members) = loop {
        let dense: Vec<Location> = (0..n_dense).map(|_| b.sample_uniform(&mut truth_rng)).collect();
        let mut members = vec![Vec::new(); areas.len()];
        for (i, p) in dense.iter().enumerate() {
            if let Some(a) = areas.iter().position(|a| a.contains(p)) {
                members[a].push(i);
            }
        }
        if members.iter().all(|m| !m.is_empty()) {
            break (dense, members);
        }
        log::info!("an area holds no dense point at n = {n_dense}; doubling");
        n_dense *= 2;
    };
    if n_geo > dense.len() {
        return Err(Error::InvalidArgument(format!("{n_geo} geostatistical sites exceed {} dense points", dense.len())));
    }

    // one joint draw per process over dense points, cell centers and
    // prediction sites
    let mut sites = dense.clone();
    sites.extend(cells.iter().map(|c| c.center));
    sites.extend(prediction_sites.iter().copied());
    let mut w = Vec::with_capacity(q);
    for spec in &cfg.processes {
        w.push(simulate_grf(spec, &sites, &mut truth_rng)?);
    }
    let combo = |j: usize, i: usize| -> f64 { (0..q).map(|k| cfg.z[j * q + k] * w[k][i]).sum() };

    // geostatistical response
    let mut geo_idx: Vec<usize> = sample_indices(&mut truth_rng, dense.len(), n_geo).into_vec();
    geo_idx.sort_unstable();
    let geo_locs: Vec<Location> = geo_idx.iter().map(|&i| dense[i]).collect();
    let x1 = normals(&mut obs_rng, n_geo);
    let noise = Normal::new(0.0, cfg.tau2.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let y1: Vec<f64> = geo_idx
        .iter()
        .zip(&x1)
        .map(|(&i, x)| lin(&cfg.beta[0], *x) + combo(0, i) + noise.sample(&mut obs_rng))
        .collect();

    // lattice response, aggregated over every dense point in the area
    let x2 = normals(&mut obs_rng, n_areas);
    let mut y2 = Vec::with_capacity(n_areas);
    for (a, x) in members.iter().zip(&x2) {
        let vals: Vec<f64> = a.iter().map(|&i| combo(1, i)).collect();
        let mx = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let agg = mx + (vals.iter().map(|v| (v - mx).exp()).sum::<f64>() / vals.len() as f64).ln();
        y2.push(poisson(&mut obs_rng, (lin(&cfg.beta[1], *x) + agg).exp())?);
    }

    // point pattern on the grid
    let offsets: Vec<f64> = cells.iter().map(|c| c.cell_area * cfg.offset).collect();
    let mut y3 = Vec::with_capacity(cells.len());
    for (c, a) in offsets.iter().enumerate() {
        y3.push(poisson(&mut obs_rng, a * combo(2, dense.len() + c).exp())?);
    }

    let sampling_points = areas
        .iter()
        .map(|a| sample_points_in_area(a, cfg.sampling_points, &mut sp_rng))
        .collect::<Result<Vec<_>>>()?;

    let cov = |beta: &[f64], x: Vec<f64>, n: usize| match beta.len() {
        0 => Ok(Covariates::empty(n)),
        1 => Covariates::from_columns(n, true, &[]),
        _ => Covariates::from_columns(n, true, &[("x".to_string(), x)]),
    };
    let mut r1 = ResponseSpec::new("geostat", Support::Geostat { locations: geo_locs }, Distribution::Gaussian, cov(&cfg.beta[0], x1, n_geo)?, None, y1)?;
    if let Some(t) = cfg.fit_tau2 {
        r1 = r1.with_tau2(Variance::Fixed(t));
    }
    let r2 = ResponseSpec::new("lattice", Support::Lattice { areas, sampling_points }, Distribution::Poisson, cov(&cfg.beta[1], x2, n_areas)?, None, y2)?;
    let n_cells = cells.len();
    let r3 = ResponseSpec::new("pointpattern", Support::Pointpattern { cells }, Distribution::Poisson, Covariates::empty(n_cells), Some(offsets), y3)?;

    let pred_off = dense.len() + n_cells;
    let truth = ScenarioTruth {
        params: true_params(cfg),
        latent_at_geostat: w.iter().map(|wk| geo_idx.iter().map(|&i| wk[i]).collect()).collect(),
        latent_at_prediction: w.iter().map(|wk| wk[pred_off..].to_vec()).collect(),
        n_dense: dense.len(),
    };
    Ok(ScenarioData { config: cfg.clone(), responses: vec![r1, r2, r3], prediction_sites, truth })
}

fn lin(beta: &[f64], x: f64) -> f64 {
    beta.first().copied().unwrap_or(0.0) + beta.get(1).map_or(0.0, |b| b * x)
}

fn true_params(cfg: &ScenarioConfig) -> Vec<TrueParam> {
    let mut out = Vec::new();
    let mut push = |name: String, label: String, value: f64| out.push(TrueParam { name, label, value });
    for (j, b) in cfg.beta.iter().enumerate() {
        for (k, v) in b.iter().enumerate() {
            push(format!("beta_{}{}", j + 1, k), format!("beta_{}{}", j + 1, k), *v);
        }
    }
    let q = cfg.q();
    match cfg.kind {
        ScenarioKind::One => {
            for (k, p) in cfg.processes.iter().enumerate() {
                push(format!("sigma2_{}", k + 1), format!("sigma^2_{}", k + 1), p.sigma2);
            }
        }
        ScenarioKind::Two => {
            for (e, v) in cfg.z.iter().enumerate() {
                if *v == 0.0 {
                    continue;
                }
                let (r, c) = (e / q + 1, e % q + 1);
                let nonzero = cfg.z[(r - 1) * q..r * q].iter().filter(|z| **z != 0.0).count();
                let label = if nonzero == 1 { format!("Z_{r}") } else { format!("Z_{r}{c}") };
                push(format!("Z_{r}{c}"), label, *v);
            }
        }
    }
    for (k, p) in cfg.processes.iter().enumerate() {
        push(format!("phi_{}", k + 1), format!("phi_{}", k + 1), p.phi);
    }
    if cfg.fit_tau2.is_none() {
        push("tau2_1".into(), "tau^2".into(), cfg.tau2);
    }
    out
}

/// Study one: responses `(geostat, lattice, point pattern)` sharing one
/// process.
pub fn generate_scenario_one(cfg: &ScenarioConfig) -> Result<ScenarioData> {
    if cfg.q() != 1 {
        return Err(Error::Config { key: "processes".into(), message: "scenario one has a single latent process".into() });
    }
    generate(cfg)
}

/// Study two: three responses loading on two processes.
pub fn generate_scenario_two(cfg: &ScenarioConfig) -> Result<ScenarioData> {
    if cfg.q() != 2 {
        return Err(Error::Config { key: "processes".into(), message: "scenario two has two latent processes".into() });
    }
    generate(cfg)
}

pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<ScenarioData> {
    match cfg.kind {
        ScenarioKind::One => generate_scenario_one(cfg),
        ScenarioKind::Two => generate_scenario_two(cfg),
    }
}

/// Latent processes and loading constraints of the fitting model for
/// `n_responses` responses.
///
/// Study one fixes every loading at 1 and samples the sill; study two fixes
/// unit sills and samples `Z` under the zero pattern of the true loadings,
/// with the last nonzero entry of each row constrained positive.
pub fn fitted_structure(cfg: &ScenarioConfig, n_responses: usize) -> Result<(Vec<LatentSpec>, Vec<Loading>)> {
    match cfg.kind {
        ScenarioKind::One => {
            let p0 = &cfg.processes[0];
            let p = LatentSpec { family: p0.family, nu: p0.nu, sigma2: Variance::Sampled, phi_prior: cfg.phi_prior };
            Ok((vec![p], vec![Loading::Fixed(1.0); n_responses]))
        }
        ScenarioKind::Two => {
            if n_responses != 3 {
                return Err(Error::InvalidArgument("study two is only identifiable with all three responses".into()));
            }
            let q = cfg.q();
            let procs = cfg
                .processes
                .iter()
                .map(|p| LatentSpec { family: p.family, nu: p.nu, sigma2: Variance::Fixed(1.0), phi_prior: cfg.phi_prior })
                .collect();
            let mut mask = Vec::with_capacity(3 * q);
            for r in 0..3 {
                let row = &cfg.z[r * q..(r + 1) * q];
                let last = row.iter().rposition(|v| *v != 0.0);
                for (c, v) in row.iter().enumerate() {
                    mask.push(if *v == 0.0 {
                        Loading::Fixed(0.0)
                    } else if Some(c) == last {
                        Loading::Positive
                    } else {
                        Loading::Free
                    });
                }
            }
            Ok((procs, mask))
        }
    }
}

/// Fitting model for a subset of the responses (0-based indices, sorted);
/// see [`fitted_structure`].
pub fn scenario_model(data: &ScenarioData, combo: &[usize], m: usize) -> Result<FusionModel> {
    if combo.is_empty() || combo.iter().any(|&j| j >= data.responses.len()) {
        return Err(Error::InvalidArgument(format!("invalid response subset {combo:?}")));
    }
    let responses: Vec<ResponseSpec> = combo.iter().map(|&j| data.responses[j].clone()).collect();
    let (procs, mask) = fitted_structure(&data.config, combo.len())?;
    let q = procs.len();
    build_model(responses, procs, DesignMatrix::new(combo.len(), q, mask)?, PriorSpec::default(), m)
}
