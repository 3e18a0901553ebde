//! The fusion model: response specifications, the loading matrix `Z`,
//! aggregation operators, priors and the flat unconstrained parameterization
//! seen by the sampler.

mod aggregate;
mod posterior;
mod prior;

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use aggregate::{apply_b, AggregationMap, Link, ResponseMap};
pub use posterior::{
    log_likelihood, log_posterior, log_posterior_and_grad, log_posterior_and_grad_noncentered, log_posterior_and_grad_weighted,
    noncentered_to_centered, Decomposition,
};
pub use prior::{log_prior, InverseGamma, PriorSpec, TruncatedNormal};

use crate::covariance::{CovarianceSpec, Family};
use crate::error::{Error, Result};
use crate::geom::{build_neighbor_graph, Area, GridCell, Location, NeighborGraph};
use crate::latent::NngpStructure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportKind {
    Geostat,
    Lattice,
    Pointpattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution {
    Gaussian,
    Poisson,
}

impl Distribution {
    pub fn link(self) -> Link {
        match self {
            Distribution::Gaussian => Link::Identity,
            Distribution::Poisson => Link::Log,
        }
    }
}

/// Spatial support of a response together with its geometry.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    Geostat { locations: Vec<Location> },
    /// Areas with the sampling points already drawn inside each of them.
    Lattice { areas: Vec<Area>, sampling_points: Vec<Vec<Location>> },
    Pointpattern { cells: Vec<GridCell> },
}

impl Support {
    pub fn kind(&self) -> SupportKind {
        match self {
            Support::Geostat { .. } => SupportKind::Geostat,
            Support::Lattice { .. } => SupportKind::Lattice,
            Support::Pointpattern { .. } => SupportKind::Pointpattern,
        }
    }

    pub fn n_units(&self) -> usize {
        match self {
            Support::Geostat { locations } => locations.len(),
            Support::Lattice { areas, .. } => areas.len(),
            Support::Pointpattern { cells } => cells.len(),
        }
    }
}

/// Row-major covariate matrix.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Covariates {
    pub names: Vec<String>,
    pub n: usize,
    pub data: Vec<f64>,
}

impl Covariates {
    pub fn empty(n: usize) -> Self {
        Self { names: Vec::new(), n, data: Vec::new() }
    }

    /// Builds `[1, columns...]` (intercept optional) from column vectors.
    pub fn from_columns(n: usize, intercept: bool, columns: &[(String, Vec<f64>)]) -> Result<Self> {
        let mut names = Vec::new();
        if intercept {
            names.push("(Intercept)".to_string());
        }
        for (name, col) in columns {
            if col.len() != n {
                return Err(Error::InvalidArgument(format!("covariate {name} has {} rows, expected {n}", col.len())));
            }
            names.push(name.clone());
        }
        let p = names.len();
        let mut data = Vec::with_capacity(n * p);
        for i in 0..n {
            if intercept {
                data.push(1.0);
            }
            for (_, col) in columns {
                data.push(col[i]);
            }
        }
        Ok(Self { names, n, data })
    }

    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.data[i * p..(i + 1) * p]
    }

    /// Full column rank check via a scaled Gram-matrix Cholesky.
    pub fn has_full_column_rank(&self) -> bool {
        let p = self.p();
        if p == 0 {
            return true;
        }
        if self.n < p {
            return false;
        }
        let mut gram = vec![0.0; p * p];
        for i in 0..self.n {
            let r = self.row(i);
            for a in 0..p {
                for b in 0..p {
                    gram[a * p + b] += r[a] * r[b];
                }
            }
        }
        let scale: Vec<f64> = (0..p).map(|a| gram[a * p + a].sqrt()).collect();
        if scale.iter().any(|s| !(*s > 0.0)) {
            return false;
        }
        for a in 0..p {
            for b in 0..p {
                gram[a * p + b] /= scale[a] * scale[b];
            }
        }
        // pivots below 1e-10 on the correlation scale are treated as collinear
        for j in 0..p {
            let mut d = gram[j * p + j];
            for k in 0..j {
                d -= gram[j * p + k] * gram[j * p + k];
            }
            if d < 1e-10 {
                return false;
            }
            let d = d.sqrt();
            gram[j * p + j] = d;
            for i in (j + 1)..p {
                let mut s = gram[i * p + j];
                for k in 0..j {
                    s -= gram[i * p + k] * gram[j * p + k];
                }
                gram[i * p + j] = s / d;
            }
        }
        true
    }
}

/// Variance of a Gaussian response: sampled under the inverse-gamma prior
/// or held fixed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variance {
    Sampled,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseSpec {
    pub name: String,
    pub support: Support,
    pub distribution: Distribution,
    pub covariates: Covariates,
    /// Multiplicative offset on the mean (Poisson only): expected counts for
    /// lattice data, cell area times offset term for point patterns.
    pub offset: Vec<f64>,
    pub y: Vec<f64>,
    /// Only meaningful for Gaussian responses.
    pub tau2: Variance,
}

impl ResponseSpec {
    pub fn new(
        name: impl Into<String>,
        support: Support,
        distribution: Distribution,
        covariates: Covariates,
        offset: Option<Vec<f64>>,
        y: Vec<f64>,
    ) -> Result<Self> {
        let name = name.into();
        let n = support.n_units();
        let offset = offset.unwrap_or_else(|| vec![1.0; n]);
        let spec = Self { name, support, distribution, covariates, offset, y, tau2: Variance::Sampled };
        spec.validate(0)?;
        Ok(spec)
    }

    pub fn with_tau2(mut self, tau2: Variance) -> Self {
        self.tau2 = tau2;
        self
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn link(&self) -> Link {
        self.distribution.link()
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let n = self.support.n_units();
        let bad = |reason: String| Error::InvalidArgument(format!("response {} ({}): {reason}", index, self.name));
        if n == 0 {
            return Err(bad("no observations".into()));
        }
        if self.y.len() != n {
            return Err(bad(format!("{} observations for {n} spatial units", self.y.len())));
        }
        if self.offset.len() != n || self.offset.iter().any(|o| !(*o > 0.0 && o.is_finite())) {
            return Err(bad("offsets must be positive, one per observation".into()));
        }
        if self.covariates.n != n || self.covariates.data.len() != n * self.covariates.p() {
            return Err(Error::InvalidCovariates { response: index, reason: format!("covariate matrix does not have {n} rows") });
        }
        if self.covariates.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidCovariates { response: index, reason: "non-finite covariate".into() });
        }
        if !self.covariates.has_full_column_rank() {
            return Err(Error::InvalidCovariates { response: index, reason: "covariate matrix is rank deficient".into() });
        }
        match self.distribution {
            Distribution::Gaussian => {
                if self.y.iter().any(|v| !v.is_finite()) {
                    return Err(bad("non-finite Gaussian observation".into()));
                }
                if let Variance::Fixed(t) = self.tau2 {
                    if !(t > 0.0) {
                        return Err(bad("fixed tau2 must be positive".into()));
                    }
                }
            }
            Distribution::Poisson => {
                if let Some(v) = self.y.iter().find(|v| !(**v >= 0.0 && v.fract() == 0.0 && v.is_finite())) {
                    return Err(bad(format!("Poisson observation {v} is not a nonnegative integer")));
                }
            }
        }
        if let Support::Lattice { areas, sampling_points } = &self.support {
            if sampling_points.len() != areas.len() {
                return Err(bad("one sampling-point set per area is required".into()));
            }
        }
        Ok(())
    }
}

/// Constraint on one entry of the loading matrix `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Loading {
    Free,
    Positive,
    Fixed(f64),
}

/// `ℓ × q` loading matrix constraints (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub rows: usize,
    pub cols: usize,
    pub mask: Vec<Loading>,
}

impl DesignMatrix {
    pub fn new(rows: usize, cols: usize, mask: Vec<Loading>) -> Result<Self> {
        if rows == 0 || cols == 0 || mask.len() != rows * cols {
            return Err(Error::InvalidArgument(format!("design mask needs {rows}x{cols} entries")));
        }
        for r in 0..rows {
            let row = &mask[r * cols..(r + 1) * cols];
            if row.iter().all(|l| matches!(l, Loading::Fixed(v) if *v == 0.0)) {
                return Err(Error::InvalidArgument(format!("row {} of Z loads on no latent process", r + 1)));
            }
            if row.iter().any(|l| matches!(l, Loading::Fixed(v) if !v.is_finite())) {
                return Err(Error::InvalidArgument(format!("row {} of Z has a non-finite fixed entry", r + 1)));
            }
        }
        Ok(Self { rows, cols, mask })
    }

    /// All-ones column: every response loads on the single process with
    /// weight 1.
    pub fn fixed_ones(rows: usize) -> Self {
        Self { rows, cols: 1, mask: vec![Loading::Fixed(1.0); rows] }
    }

    pub fn get(&self, r: usize, c: usize) -> Loading {
        self.mask[r * self.cols + c]
    }
}

/// One latent process: kernel family, whether the sill is sampled, and the
/// range prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatentSpec {
    pub family: Family,
    #[serde(default = "default_nu")]
    pub nu: f64,
    /// `Sampled` puts the inverse-gamma prior on `σ²`; `Fixed(1)` makes the
    /// process unit-variance so that `Z` carries the scale.
    pub sigma2: Variance,
    pub phi_prior: TruncatedNormal,
}

fn default_nu() -> f64 {
    0.5
}

impl LatentSpec {
    pub fn covariance(&self, sigma2: f64, phi: f64) -> CovarianceSpec {
        CovarianceSpec { family: self.family, sigma2, phi, nu: self.nu }
    }
}

/// Positions of each parameter block in the flat unconstrained vector.
/// Scalars come first, then one latent block per process.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub beta: Vec<Range<usize>>,
    pub log_tau2: Vec<Option<usize>>,
    /// Row-major over `Z`; `None` for fixed entries.
    pub z: Vec<Option<usize>>,
    pub log_sigma2: Vec<Option<usize>>,
    pub log_phi: Vec<usize>,
    pub w: Vec<Range<usize>>,
    /// Natural-scale names of the scalar parameters, by flat index.
    pub names: Vec<String>,
    /// Whether each scalar is sampled on the log scale.
    pub log_scale: Vec<bool>,
    pub dim: usize,
}

impl ParamLayout {
    pub fn n_scalar(&self) -> usize {
        self.names.len()
    }
}

/// Natural-scale parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterState {
    pub beta: Vec<Vec<f64>>,
    /// `None` for non-Gaussian responses.
    pub tau2: Vec<Option<f64>>,
    /// Full `ℓ × q` loading matrix, row-major, fixed entries included.
    pub z: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub phi: Vec<f64>,
    /// Latent values per process over the modeled location set.
    pub w: Vec<Vec<f64>>,
}

/// A validated fusion model.
#[derive(Debug, Clone)]
pub struct FusionModel {
    pub responses: Vec<ResponseSpec>,
    pub processes: Vec<LatentSpec>,
    pub design: DesignMatrix,
    pub priors: PriorSpec,
    /// Modeled location set: geostatistical sites, sampling points and grid
    /// centers, duplicates merged.
    pub locations: Vec<Location>,
    pub aggregation: AggregationMap,
    pub graph: NeighborGraph,
    pub nngp: Arc<NngpStructure>,
    pub layout: ParamLayout,
    pub(crate) cache: ModelCache,
}

/// Per-observation constants of the likelihood.
#[derive(Debug, Clone)]
pub(crate) struct ModelCache {
    pub log_factorial: Vec<Vec<f64>>,
    pub log_offset: Vec<Vec<f64>>,
}

impl ModelCache {
    fn new(responses: &[ResponseSpec]) -> Self {
        let log_factorial = responses
            .iter()
            .map(|r| match r.distribution {
                Distribution::Poisson => r.y.iter().map(|y| crate::special::ln_gamma(y + 1.0)).collect(),
                Distribution::Gaussian => vec![0.0; r.y.len()],
            })
            .collect();
        let log_offset = responses.iter().map(|r| r.offset.iter().map(|o| o.ln()).collect()).collect();
        Self { log_factorial, log_offset }
    }
}

/// Assembles the modeled location set, `B_j` maps, the neighbor graph and
/// the parameter layout.
pub fn build_model(
    responses: Vec<ResponseSpec>,
    processes: Vec<LatentSpec>,
    design: DesignMatrix,
    priors: PriorSpec,
    m: usize,
) -> Result<FusionModel> {
    if responses.is_empty() {
        return Err(Error::InvalidArgument("a model needs at least one response".into()));
    }
    if design.rows != responses.len() || design.cols != processes.len() {
        return Err(Error::InvalidArgument(format!(
            "Z is {}x{} but there are {} responses and {} latent processes",
            design.rows,
            design.cols,
            responses.len(),
            processes.len()
        )));
    }
    for (j, r) in responses.iter().enumerate() {
        r.validate(j)?;
    }
    for p in &processes {
        p.covariance(1.0, 1.0).validate()?;
        if let Variance::Fixed(s) = p.sigma2 {
            if !(s > 0.0) {
                return Err(Error::InvalidArgument("fixed sigma2 must be positive".into()));
            }
        }
        p.phi_prior.validate()?;
    }
    priors.validate()?;
    if design.rows == design.cols && design.rows > 1 && design.mask.iter().all(|l| matches!(l, Loading::Free)) {
        log::warn!("Z is square and fully free: the linear model of coregionalization is not identifiable without further constraints");
    }

    let mut locations = Vec::new();
    let mut lookup: HashMap<(u64, u64), usize> = HashMap::new();
    let mut intern = |p: Location, locations: &mut Vec<Location>| -> usize {
        *lookup.entry((p.x.to_bits(), p.y.to_bits())).or_insert_with(|| {
            locations.push(p);
            locations.len() - 1
        })
    };
    let mut maps = Vec::with_capacity(responses.len());
    let mut h_seen: Option<usize> = None;
    for (j, r) in responses.iter().enumerate() {
        let map = match &r.support {
            Support::Geostat { locations: locs } => {
                ResponseMap::Points(locs.iter().map(|p| intern(*p, &mut locations)).collect())
            }
            Support::Pointpattern { cells } => {
                ResponseMap::Points(cells.iter().map(|c| intern(c.center, &mut locations)).collect())
            }
            Support::Lattice { sampling_points, .. } => {
                for s in sampling_points {
                    match h_seen {
                        None => h_seen = Some(s.len()),
                        Some(h) if h != s.len() => {
                            return Err(Error::InvalidArgument(format!(
                                "response {j}: every area needs the same number of sampling points"
                            )))
                        }
                        _ => {}
                    }
                }
                ResponseMap::Areas(
                    sampling_points
                        .iter()
                        .map(|pts| pts.iter().map(|p| intern(*p, &mut locations)).collect())
                        .collect(),
                )
            }
        };
        maps.push(map);
    }
    if locations.is_empty() {
        return Err(Error::InvalidArgument("the modeled location set is empty".into()));
    }
    if let Some(h) = h_seen {
        if h == 0 {
            return Err(Error::InvalidArgument("lattice responses need at least one sampling point per area".into()));
        }
    }
    let aggregation = AggregationMap { responses: maps, h: h_seen.unwrap_or(0), n_locations: locations.len() };
    aggregation.validate()?;

    let graph = build_neighbor_graph(&locations, m)?;
    let nngp = Arc::new(NngpStructure::new(&graph, &locations)?);
    let layout = make_layout(&responses, &processes, &design, locations.len());
    let cache = ModelCache::new(&responses);
    Ok(FusionModel { responses, processes, design, priors, locations, aggregation, graph, nngp, layout, cache })
}

fn make_layout(responses: &[ResponseSpec], processes: &[LatentSpec], design: &DesignMatrix, n_loc: usize) -> ParamLayout {
    let mut names = Vec::new();
    let mut log_scale = Vec::new();
    let mut push = |name: String, log: bool, names: &mut Vec<String>| {
        names.push(name);
        log_scale.push(log);
        names.len() - 1
    };
    let mut beta = Vec::new();
    for (j, r) in responses.iter().enumerate() {
        let start = names.len();
        for k in 0..r.covariates.p() {
            push(format!("beta_{}{}", j + 1, k), false, &mut names);
        }
        beta.push(start..names.len());
    }
    let log_tau2 = responses
        .iter()
        .enumerate()
        .map(|(j, r)| {
            (r.distribution == Distribution::Gaussian && r.tau2 == Variance::Sampled)
                .then(|| push(format!("tau2_{}", j + 1), true, &mut names))
        })
        .collect();
    let mut z = Vec::with_capacity(design.mask.len());
    for r in 0..design.rows {
        for c in 0..design.cols {
            z.push(match design.get(r, c) {
                Loading::Free => Some(push(format!("Z_{}{}", r + 1, c + 1), false, &mut names)),
                Loading::Positive => Some(push(format!("Z_{}{}", r + 1, c + 1), true, &mut names)),
                Loading::Fixed(_) => None,
            });
        }
    }
    let log_sigma2 = processes
        .iter()
        .enumerate()
        .map(|(k, p)| (p.sigma2 == Variance::Sampled).then(|| push(format!("sigma2_{}", k + 1), true, &mut names)))
        .collect();
    let log_phi = (0..processes.len()).map(|k| push(format!("phi_{}", k + 1), true, &mut names)).collect();
    let mut w = Vec::new();
    let mut next = names.len();
    for _ in processes {
        w.push(next..next + n_loc);
        next += n_loc;
    }
    ParamLayout { beta, log_tau2, z, log_sigma2, log_phi, w, names, log_scale, dim: next }
}

impl FusionModel {
    pub fn n_responses(&self) -> usize {
        self.responses.len()
    }

    pub fn n_processes(&self) -> usize {
        self.processes.len()
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// Maps a flat unconstrained vector to natural-scale parameters.
    pub fn unpack(&self, theta: &[f64]) -> Result<ParameterState> {
        let l = &self.layout;
        if theta.len() != l.dim {
            return Err(Error::InvalidArgument(format!("parameter vector has length {}, expected {}", theta.len(), l.dim)));
        }
        let beta = l.beta.iter().map(|r| theta[r.clone()].to_vec()).collect();
        let tau2 = self
            .responses
            .iter()
            .zip(&l.log_tau2)
            .map(|(r, idx)| match (r.distribution, r.tau2, idx) {
                (Distribution::Gaussian, _, Some(i)) => Some(theta[*i].exp()),
                (Distribution::Gaussian, Variance::Fixed(t), None) => Some(t),
                _ => None,
            })
            .collect();
        let z = self
            .design
            .mask
            .iter()
            .zip(&l.z)
            .map(|(m, idx)| match (m, idx) {
                (Loading::Fixed(v), _) => *v,
                (Loading::Positive, Some(i)) => theta[*i].exp(),
                (_, Some(i)) => theta[*i],
                (_, None) => unreachable!("sampled loading without a slot"),
            })
            .collect();
        let sigma2 = self
            .processes
            .iter()
            .zip(&l.log_sigma2)
            .map(|(p, idx)| match (p.sigma2, idx) {
                (_, Some(i)) => theta[*i].exp(),
                (Variance::Fixed(s), None) => s,
                (Variance::Sampled, None) => unreachable!("sampled sill without a slot"),
            })
            .collect();
        let phi = l.log_phi.iter().map(|&i| theta[i].exp()).collect();
        let w = l.w.iter().map(|r| theta[r.clone()].to_vec()).collect();
        Ok(ParameterState { beta, tau2, z, sigma2, phi, w })
    }

    /// Inverse of [`FusionModel::unpack`]; fixed entries are ignored.
    pub fn pack(&self, state: &ParameterState) -> Result<Vec<f64>> {
        let l = &self.layout;
        let mut theta = vec![0.0; l.dim];
        for (r, b) in l.beta.iter().zip(&state.beta) {
            if b.len() != r.len() {
                return Err(Error::InvalidArgument("beta block has the wrong length".into()));
            }
            theta[r.clone()].copy_from_slice(b);
        }
        for (idx, t) in l.log_tau2.iter().zip(&state.tau2) {
            if let (Some(i), Some(t)) = (idx, t) {
                theta[*i] = t.ln();
            }
        }
        for ((idx, m), v) in l.z.iter().zip(&self.design.mask).zip(&state.z) {
            if let Some(i) = idx {
                theta[*i] = if *m == Loading::Positive { v.ln() } else { *v };
            }
        }
        for (idx, s) in l.log_sigma2.iter().zip(&state.sigma2) {
            if let Some(i) = idx {
                theta[*i] = s.ln();
            }
        }
        for (&i, p) in l.log_phi.iter().zip(&state.phi) {
            theta[i] = p.ln();
        }
        for (r, w) in l.w.iter().zip(&state.w) {
            if w.len() != r.len() {
                return Err(Error::InvalidArgument("latent block has the wrong length".into()));
            }
            theta[r.clone()].copy_from_slice(w);
        }
        Ok(theta)
    }

    /// Natural-scale values of the named scalar parameters.
    pub fn scalar_values(&self, theta: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        (0..l.n_scalar()).map(|i| if l.log_scale[i] { theta[i].exp() } else { theta[i] }).collect()
    }

    pub fn z_at(&self, state: &ParameterState, r: usize, c: usize) -> f64 {
        state.z[r * self.design.cols + c]
    }
}
