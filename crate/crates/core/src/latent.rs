//! Latent Gaussian process machinery: exact simulation on a finite location
//! set, the nearest-neighbor (NNGP) factorization of the joint density with
//! its analytic gradient, and NNGP conditional prediction at new sites.
//!
//! Every factor is computed in correlation units and rescaled by the sill,
//! so the conditional weights `b_i` only depend on the range parameter.

use std::sync::Arc;

use faer::{Mat, Side};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::covariance::{cov_matrix, CovarianceSpec};
use crate::error::{Error, Result};
use crate::geom::{check_distinct, dist, Location, NeighborGraph};
use crate::linalg::{cholesky_solve, cholesky_with_jitter, dot, JITTER_LADDER};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// One realization of a latent process on a modeled location set.
#[derive(Debug, Clone)]
pub struct LatentField {
    pub values: Vec<f64>,
    pub graph: NeighborGraph,
    pub spec: CovarianceSpec,
}

/// Draws `w ~ N(0, C + jitter·I)` by dense Cholesky. The jitter starts at
/// `1e-10·σ²` and escalates tenfold up to `1e-6·σ²`.
pub fn simulate_grf<R: Rng + ?Sized>(spec: &CovarianceSpec, locs: &[Location], rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    let n = locs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let base = cov_matrix(spec, locs)?;
    let mut factor = None;
    let mut last = 0.0;
    for &rel in &JITTER_LADDER {
        last = rel * spec.sigma2;
        let mut c = base.clone();
        for i in 0..n {
            c[(i, i)] += last;
        }
        if let Ok(llt) = c.llt(Side::Lower) {
            factor = Some(llt);
            break;
        }
    }
    let llt = factor.ok_or(Error::NotPositiveDefinite { jitter: last })?;
    let z = Mat::<f64>::from_fn(n, 1, |_, _| rng.sample(StandardNormal));
    let w = llt.L() * &z;
    Ok((0..n).map(|i| w[(i, 0)]).collect())
}

/// Distances needed by the NNGP factors, laid out per ordering position.
/// Independent of the kernel parameters, so it is built once per model.
#[derive(Debug, Clone)]
pub struct NngpStructure {
    pub ordering: Vec<usize>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    cross_dist: Vec<f64>,
    mat_offsets: Vec<usize>,
    neighbor_dist: Vec<f64>,
}

impl NngpStructure {
    pub fn new(graph: &NeighborGraph, locs: &[Location]) -> Result<Self> {
        if graph.len() != locs.len() {
            return Err(Error::InvalidArgument(format!(
                "neighbor graph covers {} locations but {} were given",
                graph.len(),
                locs.len()
            )));
        }
        let n = graph.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut mat_offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        let mut cross_dist = Vec::new();
        let mut neighbor_dist = Vec::new();
        offsets.push(0);
        mat_offsets.push(0);
        for (pos, nbrs) in graph.neighbors.iter().enumerate() {
            let here = locs[graph.ordering[pos]];
            let idx: Vec<usize> = nbrs.iter().map(|&p| graph.ordering[p]).collect();
            let pts: Vec<Location> = idx.iter().map(|&i| locs[i]).collect();
            if let Err(Error::DuplicateLocation { .. }) = check_distinct(&pts) {
                return Err(Error::SingularConditioning { position: pos });
            }
            for p in &pts {
                cross_dist.push(dist(&here, p));
            }
            for a in &pts {
                for b in &pts {
                    neighbor_dist.push(dist(a, b));
                }
            }
            neighbors.extend(idx);
            offsets.push(neighbors.len());
            mat_offsets.push(neighbor_dist.len());
        }
        Ok(Self { ordering: graph.ordering.clone(), offsets, neighbors, cross_dist, mat_offsets, neighbor_dist })
    }

    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }

    /// Location indices conditioned on at ordering position `pos`.
    pub fn neighbors(&self, pos: usize) -> &[usize] {
        &self.neighbors[self.offsets[pos]..self.offsets[pos + 1]]
    }
}

/// Conditional weights `b_i` and variances `f_i` of the NNGP factorization,
/// optionally with their derivatives with respect to `log phi`.
#[derive(Debug, Clone)]
pub struct NngpFactors {
    structure: Arc<NngpStructure>,
    pub sigma2: f64,
    b: Vec<f64>,
    f: Vec<f64>,
    db: Option<Vec<f64>>,
    df: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NngpGradient {
    pub log_density: f64,
    /// Gradient with respect to the latent values (location index order).
    pub d_values: Vec<f64>,
    pub d_log_sigma2: f64,
    pub d_log_phi: f64,
}

struct Scratch {
    r: Vec<f64>,
    dr: Vec<f64>,
    mat: Vec<f64>,
    dmat: Vec<f64>,
    l: Vec<f64>,
    tmp: Vec<f64>,
}

impl Scratch {
    fn new() -> Self {
        Self { r: Vec::new(), dr: Vec::new(), mat: Vec::new(), dmat: Vec::new(), l: Vec::new(), tmp: Vec::new() }
    }
}

/// Solves one conditioning system. Returns `f̃ = 1 - rᵀR⁻¹r` and, when
/// requested, `df̃/dlogφ`; `b` and `db` are written into the given slices.
fn condition(
    spec: &CovarianceSpec,
    cross: &[f64],
    within: &[f64],
    b: &mut [f64],
    db: Option<&mut [f64]>,
    s: &mut Scratch,
) -> Option<(f64, f64)> {
    let k = cross.len();
    if k == 0 {
        return Some((1.0, 0.0));
    }
    let want_d = db.is_some();
    s.r.clear();
    s.dr.clear();
    for &d in cross {
        let (c, dc) = spec.correlation_and_dlogphi(d);
        s.r.push(c);
        s.dr.push(dc);
    }
    // symmetric: evaluate the strict lower triangle once and mirror it
    s.mat.clear();
    s.mat.resize(k * k, 1.0);
    s.dmat.clear();
    s.dmat.resize(if want_d { k * k } else { 0 }, 0.0);
    for i in 0..k {
        for j in 0..i {
            let (c, dc) = spec.correlation_and_dlogphi(within[i * k + j]);
            s.mat[i * k + j] = c;
            s.mat[j * k + i] = c;
            if want_d {
                s.dmat[i * k + j] = dc;
                s.dmat[j * k + i] = dc;
            }
        }
    }
    cholesky_with_jitter(&s.mat, k, &mut s.l)?;
    b.copy_from_slice(&s.r);
    cholesky_solve(&s.l, k, b);
    let ftilde = 1.0 - dot(&s.r, b);
    let mut dftilde = 0.0;
    if let Some(db) = db {
        // db = R⁻¹ (dr - dR b); df̃ = -2 drᵀb + bᵀ dR b
        s.tmp.clear();
        let mut quad = 0.0;
        for i in 0..k {
            let row = &s.dmat[i * k..(i + 1) * k];
            let dr_b = dot(row, b);
            s.tmp.push(s.dr[i] - dr_b);
            quad += b[i] * dr_b;
        }
        dftilde = -2.0 * dot(&s.dr, b) + quad;
        db.copy_from_slice(&s.tmp);
        cholesky_solve(&s.l, k, db);
    }
    Some((ftilde, dftilde))
}

impl NngpFactors {
    pub fn build(spec: &CovarianceSpec, structure: Arc<NngpStructure>, derivatives: bool) -> Result<Self> {
        spec.validate()?;
        let st = &*structure;
        let mut b = vec![0.0; st.neighbors.len()];
        let mut f = Vec::with_capacity(st.len());
        let mut db = derivatives.then(|| vec![0.0; st.neighbors.len()]);
        let mut df = derivatives.then(|| Vec::with_capacity(st.len()));
        let mut scratch = Scratch::new();
        for pos in 0..st.len() {
            let (lo, hi) = (st.offsets[pos], st.offsets[pos + 1]);
            let cross = &st.cross_dist[lo..hi];
            let within = &st.neighbor_dist[st.mat_offsets[pos]..st.mat_offsets[pos + 1]];
            let db_slice = db.as_mut().map(|v| &mut v[lo..hi]);
            let (ft, dft) = condition(spec, cross, within, &mut b[lo..hi], db_slice, &mut scratch)
                .ok_or(Error::SingularConditioning { position: pos })?;
            if !(ft > 0.0) {
                return Err(Error::SingularConditioning { position: pos });
            }
            f.push(spec.sigma2 * ft);
            if let Some(df) = df.as_mut() {
                df.push(spec.sigma2 * dft);
            }
        }
        Ok(Self { structure, sigma2: spec.sigma2, b, f, db, df })
    }

    pub fn structure(&self) -> &Arc<NngpStructure> {
        &self.structure
    }

    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }

    /// Conditional weights at ordering position `pos`, aligned with
    /// [`NngpStructure::neighbors`].
    pub fn weights(&self, pos: usize) -> &[f64] {
        let st = &self.structure;
        &self.b[st.offsets[pos]..st.offsets[pos + 1]]
    }

    /// Conditional variance at ordering position `pos`.
    pub fn variance(&self, pos: usize) -> f64 {
        self.f[pos]
    }

    fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(Error::InvalidArgument(format!(
                "latent vector has length {} but the factorization covers {} locations",
                values.len(),
                self.len()
            )));
        }
        Ok(())
    }

    fn residual(&self, pos: usize, values: &[f64]) -> f64 {
        let st = &self.structure;
        let nb = st.neighbors(pos);
        let b = self.weights(pos);
        let mut mean = 0.0;
        for (w, &j) in b.iter().zip(nb) {
            mean += w * values[j];
        }
        values[st.ordering[pos]] - mean
    }
}

pub fn build_nngp_factors(spec: &CovarianceSpec, graph: &NeighborGraph, locs: &[Location]) -> Result<NngpFactors> {
    NngpFactors::build(spec, Arc::new(NngpStructure::new(graph, locs)?), false)
}

/// `Σᵢ log N(wᵢ | bᵢ·w_{N(i)}, fᵢ)`; `values` are indexed by location.
pub fn nngp_log_density(values: &[f64], factors: &NngpFactors) -> Result<f64> {
    factors.check_len(values)?;
    let mut total = 0.0;
    for pos in 0..factors.len() {
        let r = factors.residual(pos, values);
        let f = factors.f[pos];
        total += -0.5 * (LN_2PI + f.ln()) - 0.5 * r * r / f;
    }
    Ok(total)
}

/// Log density with its gradient in the latent values, `log σ²` and
/// `log φ`. The factors must have been built with derivatives.
pub fn nngp_log_density_grad(values: &[f64], factors: &NngpFactors) -> Result<NngpGradient> {
    let mut d_values = vec![0.0; values.len()];
    let (log_density, d_log_sigma2, d_log_phi) = nngp_log_density_grad_into(values, factors, &mut d_values)?;
    Ok(NngpGradient { log_density, d_values, d_log_sigma2, d_log_phi })
}

/// Accumulating variant used by the posterior: adds `∂/∂w` into `d_values`.
pub(crate) fn nngp_log_density_grad_into(
    values: &[f64],
    factors: &NngpFactors,
    d_values: &mut [f64],
) -> Result<(f64, f64, f64)> {
    factors.check_len(values)?;
    let (db, df) = match (&factors.db, &factors.df) {
        (Some(db), Some(df)) => (db, df),
        _ => return Err(Error::Internal("NNGP factors were built without derivatives".into())),
    };
    let st = &*factors.structure;
    let (mut total, mut d_ls2, mut d_lphi) = (0.0, 0.0, 0.0);
    for pos in 0..st.len() {
        let (lo, hi) = (st.offsets[pos], st.offsets[pos + 1]);
        let nb = &st.neighbors[lo..hi];
        let b = &factors.b[lo..hi];
        let dbp = &db[lo..hi];
        let mut mean = 0.0;
        let mut dmean = 0.0;
        for ((w, dw), &j) in b.iter().zip(dbp).zip(nb) {
            mean += w * values[j];
            dmean += dw * values[j];
        }
        let me = st.ordering[pos];
        let r = values[me] - mean;
        let f = factors.f[pos];
        let rf = r / f;
        total += -0.5 * (LN_2PI + f.ln()) - 0.5 * r * rf;
        d_values[me] -= rf;
        for (w, &j) in b.iter().zip(nb) {
            d_values[j] += rf * w;
        }
        let half = 0.5 * (r * rf - 1.0);
        d_ls2 += half;
        d_lphi += rf * dmean + half * df[pos] / f;
    }
    Ok((total, d_ls2, d_lphi))
}

/// Maps standardized innovations `u` to latent values through the NNGP
/// recursion `w_i = b_i·w_{N(i)} + sqrt(f_i) u_i`; both are indexed by
/// location.
pub fn nngp_transform(u: &[f64], factors: &NngpFactors) -> Result<Vec<f64>> {
    factors.check_len(u)?;
    let st = &*factors.structure;
    let mut w = vec![0.0; u.len()];
    for pos in 0..st.len() {
        let (lo, hi) = (st.offsets[pos], st.offsets[pos + 1]);
        let mut mean = 0.0;
        for (b, &j) in factors.b[lo..hi].iter().zip(&st.neighbors[lo..hi]) {
            mean += b * w[j];
        }
        let me = st.ordering[pos];
        w[me] = mean + factors.f[pos].sqrt() * u[me];
    }
    Ok(w)
}

/// Reverse pass of [`nngp_transform`]: given `w_bar = ∂L/∂w`, returns
/// `(∂L/∂u, ∂L/∂log σ², ∂L/∂log φ)`. The factors need derivatives.
pub fn nngp_transform_adjoint(u: &[f64], w: &[f64], mut w_bar: Vec<f64>, factors: &NngpFactors) -> Result<(Vec<f64>, f64, f64)> {
    factors.check_len(u)?;
    let (db, df) = match (&factors.db, &factors.df) {
        (Some(db), Some(df)) => (db, df),
        _ => return Err(Error::Internal("NNGP factors were built without derivatives".into())),
    };
    let st = &*factors.structure;
    let mut u_bar = vec![0.0; u.len()];
    let (mut d_ls2, mut d_lphi) = (0.0, 0.0);
    for pos in (0..st.len()).rev() {
        let (lo, hi) = (st.offsets[pos], st.offsets[pos + 1]);
        let me = st.ordering[pos];
        let g = w_bar[me];
        let f = factors.f[pos];
        let sf = f.sqrt();
        u_bar[me] = g * sf;
        for ((b, dbv), &j) in factors.b[lo..hi].iter().zip(&db[lo..hi]).zip(&st.neighbors[lo..hi]) {
            w_bar[j] += g * b;
            d_lphi += g * w[j] * dbv;
        }
        // ∂w/∂f = u / (2 sqrt f); f scales with σ²
        let f_bar = g * u[me] / (2.0 * sf);
        d_ls2 += f_bar * f;
        d_lphi += f_bar * df[pos];
    }
    Ok((u_bar, d_ls2, d_lphi))
}

/// Indices of the `m` training locations nearest to `p` (nearest first).
pub fn nearest_neighbors(train: &[Location], p: &Location, m: usize) -> Vec<usize> {
    let mut cand: Vec<(f64, usize)> = train.iter().enumerate().map(|(i, q)| (dist(p, q), i)).collect();
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    let k = m.min(cand.len());
    if k < cand.len() {
        cand.select_nth_unstable_by(k, by);
        cand.truncate(k);
    }
    cand.sort_by(by);
    cand.into_iter().map(|(_, i)| i).collect()
}

/// Predictive summary at new sites.
#[derive(Debug, Clone, Default)]
pub struct Prediction {
    /// Average of the per-draw conditional means.
    pub mean: Vec<f64>,
    /// Total predictive variance (mean conditional variance plus variance of
    /// the conditional means).
    pub variance: Vec<f64>,
    /// Per draw, per site predictive samples when requested.
    pub draws: Option<Vec<Vec<f64>>>,
}

/// NNGP kriging: for each posterior draw and new site, condition on the `m`
/// nearest training locations (drawn from the whole training set).
pub fn nngp_predict<R: Rng + ?Sized>(
    w_draws: &[Vec<f64>],
    spec_draws: &[CovarianceSpec],
    train: &[Location],
    new_sites: &[Location],
    m: usize,
    mut rng: Option<&mut R>,
) -> Result<Prediction> {
    if train.is_empty() {
        return Err(Error::InvalidArgument("prediction needs a nonempty training set".into()));
    }
    if w_draws.is_empty() || w_draws.len() != spec_draws.len() {
        return Err(Error::InvalidArgument(format!(
            "got {} latent draws and {} covariance draws",
            w_draws.len(),
            spec_draws.len()
        )));
    }
    if let Some(w) = w_draws.iter().find(|w| w.len() != train.len()) {
        return Err(Error::InvalidArgument(format!(
            "latent draw has length {} but there are {} training locations",
            w.len(),
            train.len()
        )));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("neighbor count m must be at least 1".into()));
    }
    let ns = new_sites.len();
    let nd = w_draws.len() as f64;
    let mut sum = vec![0.0; ns];
    let mut sum_sq = vec![0.0; ns];
    let mut sum_f = vec![0.0; ns];
    let mut draws = rng.as_ref().map(|_| vec![vec![0.0; ns]; w_draws.len()]);

    let mut scratch = Scratch::new();
    let mut b = Vec::new();
    for (s, site) in new_sites.iter().enumerate() {
        let nb = nearest_neighbors(train, site, m);
        let cross: Vec<f64> = nb.iter().map(|&i| dist(site, &train[i])).collect();
        let within: Vec<f64> = nb.iter().flat_map(|&i| nb.iter().map(move |&j| (i, j))).map(|(i, j)| dist(&train[i], &train[j])).collect();
        b.resize(nb.len(), 0.0);
        let mut cached: Option<(CovarianceSpec, f64)> = None;
        for (d, (w, spec)) in w_draws.iter().zip(spec_draws).enumerate() {
            let ftilde = match cached {
                Some((c, ft)) if c == *spec => ft,
                _ => {
                    spec.validate()?;
                    let (ft, _) = condition(spec, &cross, &within, &mut b, None, &mut scratch)
                        .ok_or(Error::SingularConditioning { position: s })?;
                    let ft = ft.max(0.0);
                    cached = Some((*spec, ft));
                    ft
                }
            };
            let mean: f64 = b.iter().zip(&nb).map(|(bk, &j)| bk * w[j]).sum();
            let f = spec.sigma2 * ftilde;
            sum[s] += mean;
            sum_sq[s] += mean * mean;
            sum_f[s] += f;
            if let (Some(rng), Some(dr)) = (rng.as_deref_mut(), draws.as_mut()) {
                let z: f64 = rng.sample(StandardNormal);
                dr[d][s] = mean + f.sqrt() * z;
            }
        }
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / nd).collect();
    let variance = (0..ns).map(|s| sum_f[s] / nd + (sum_sq[s] / nd - mean[s] * mean[s]).max(0.0)).collect();
    Ok(Prediction { mean, variance, draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{build_neighbor_graph, BBox};
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dense(spec: &CovarianceSpec, locs: &[Location]) -> DMatrix<f64> {
        DMatrix::from_fn(locs.len(), locs.len(), |i, j| {
            let d = ((locs[i].x - locs[j].x).powi(2) + (locs[i].y - locs[j].y).powi(2)).sqrt();
            spec.sigma2 * spec.correlation(d)
        })
    }

    fn mvn_logpdf(c: &DMatrix<f64>, w: &[f64]) -> f64 {
        let n = w.len();
        let chol = c.clone().cholesky().unwrap();
        let v = DVector::from_column_slice(w);
        let sol = chol.solve(&v);
        let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        -0.5 * (n as f64) * LN_2PI - 0.5 * logdet - 0.5 * v.dot(&sol)
    }

    fn random_locs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Location> {
        let b = BBox::square(0.0, 1.0);
        (0..n).map(|_| b.sample_uniform(rng)).collect()
    }

    fn normals(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
        (0..n).map(|_| sd * rng.sample::<f64, _>(StandardNormal)).collect()
    }

    #[test]
    fn first_position_is_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let locs = random_locs(&mut rng, 5);
        let spec = CovarianceSpec::exponential(1.7, 0.4);
        let g = build_neighbor_graph(&locs, 3).unwrap();
        let f = build_nngp_factors(&spec, &g, &locs).unwrap();
        assert!(f.weights(0).is_empty());
        assert_eq!(f.variance(0), 1.7);
    }

    #[test]
    fn full_conditioning_reproduces_dense_conditionals() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let locs = random_locs(&mut rng, 9);
        let spec = CovarianceSpec::exponential(0.8, 0.6);
        let g = build_neighbor_graph(&locs, 8).unwrap();
        let f = build_nngp_factors(&spec, &g, &locs).unwrap();
        let c = dense(&spec, &locs);
        for pos in 1..9 {
            let me = g.ordering[pos];
            let nb = f.structure().neighbors(pos).to_vec();
            let cn = DMatrix::from_fn(nb.len(), nb.len(), |a, b| c[(nb[a], nb[b])]);
            let cx = DVector::from_fn(nb.len(), |a, _| c[(me, nb[a])]);
            let bvec = cn.clone().cholesky().unwrap().solve(&cx);
            for (a, w) in f.weights(pos).iter().enumerate() {
                assert!((w - bvec[a]).abs() < 1e-10);
            }
            let fv = c[(me, me)] - cx.dot(&bvec);
            assert!((f.variance(pos) - fv).abs() < 1e-10);
        }
    }

    #[test]
    fn independence_limit() {
        let locs: Vec<Location> = (0..6).map(|i| Location::new(i as f64, (i % 2) as f64)).collect();
        let spec = CovarianceSpec::exponential(1.4, 1e-6);
        let g = build_neighbor_graph(&locs, 2).unwrap();
        let f = build_nngp_factors(&spec, &g, &locs).unwrap();
        for pos in 0..6 {
            assert!(f.weights(pos).iter().all(|b| b.abs() < 1e-12));
            assert!((f.variance(pos) - 1.4).abs() < 1e-12);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = normals(&mut rng, 6, 1.0);
        let indep: f64 = w.iter().map(|x| -0.5 * (LN_2PI + 1.4f64.ln()) - 0.5 * x * x / 1.4).sum();
        assert!((nngp_log_density(&w, &f).unwrap() - indep).abs() < 1e-6);
    }

    #[test]
    fn standard_normal_at_mode() {
        let locs = [Location::new(0.0, 0.0)];
        let g = build_neighbor_graph(&locs, 1).unwrap();
        let f = build_nngp_factors(&CovarianceSpec::exponential(1.0, 1.0), &g, &locs).unwrap();
        assert!((nngp_log_density(&[0.0], &f).unwrap() + 0.5 * LN_2PI).abs() < 1e-15);
        assert!(nngp_log_density(&[0.0, 1.0], &f).is_err());
    }

    #[test]
    fn matches_dense_when_saturated() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for spec in [CovarianceSpec::exponential(0.9, 0.5), CovarianceSpec::matern(1.2, 0.3, 0.8)] {
            let locs = random_locs(&mut rng, 8);
            let g = build_neighbor_graph(&locs, 7).unwrap();
            let f = build_nngp_factors(&spec, &g, &locs).unwrap();
            let w = normals(&mut rng, 8, 1.0);
            let expect = mvn_logpdf(&dense(&spec, &locs), &w);
            assert!((nngp_log_density(&w, &f).unwrap() - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn bivariate_density_integrates_to_one() {
        let locs = [Location::new(0.0, 0.0), Location::new(0.3, 0.1)];
        let spec = CovarianceSpec::exponential(0.7, 0.5);
        let g = build_neighbor_graph(&locs, 1).unwrap();
        let f = build_nngp_factors(&spec, &g, &locs).unwrap();
        let s = 6.0 * spec.sigma2.sqrt();
        let n = 600;
        let h = 2.0 * s / n as f64;
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                let w = [-s + (i as f64 + 0.5) * h, -s + (j as f64 + 0.5) * h];
                total += nngp_log_density(&w, &f).unwrap().exp();
            }
        }
        assert!((total * h * h - 1.0).abs() < 1e-3);
    }

    fn factors_for(spec: &CovarianceSpec, st: &Arc<NngpStructure>) -> NngpFactors {
        NngpFactors::build(spec, st.clone(), true).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for spec in [CovarianceSpec::exponential(0.9, 0.4), CovarianceSpec::matern(1.1, 0.35, 0.7)] {
            let locs = random_locs(&mut rng, 8);
            let g = build_neighbor_graph(&locs, 3).unwrap();
            let st = Arc::new(NngpStructure::new(&g, &locs).unwrap());
            let w = normals(&mut rng, 8, 1.0);
            let grad = nngp_log_density_grad(&w, &factors_for(&spec, &st)).unwrap();
            let h = 1e-5;
            let close = |fd: f64, an: f64| (fd - an).abs() <= 1e-5 * an.abs().max(1.0);
            for i in 0..8 {
                let (mut up, mut dn) = (w.clone(), w.clone());
                up[i] += h;
                dn[i] -= h;
                let f0 = factors_for(&spec, &st);
                let fd = (nngp_log_density(&up, &f0).unwrap() - nngp_log_density(&dn, &f0).unwrap()) / (2.0 * h);
                assert!(close(fd, grad.d_values[i]), "w[{i}]: {fd} vs {}", grad.d_values[i]);
            }
            let at = |s2: f64, phi: f64| nngp_log_density(&w, &factors_for(&spec.with_params(s2, phi), &st)).unwrap();
            let fd_s = (at(spec.sigma2 * h.exp(), spec.phi) - at(spec.sigma2 * (-h).exp(), spec.phi)) / (2.0 * h);
            let fd_p = (at(spec.sigma2, spec.phi * h.exp()) - at(spec.sigma2, spec.phi * (-h).exp())) / (2.0 * h);
            assert!(close(fd_s, grad.d_log_sigma2), "{fd_s} vs {}", grad.d_log_sigma2);
            assert!(close(fd_p, grad.d_log_phi), "{fd_p} vs {}", grad.d_log_phi);
        }
    }

    #[test]
    fn gradient_closed_forms() {
        let locs = [Location::new(0.0, 0.0)];
        let g = build_neighbor_graph(&locs, 1).unwrap();
        let st = Arc::new(NngpStructure::new(&g, &locs).unwrap());
        let spec = CovarianceSpec::exponential(2.5, 1.0);
        let grad = nngp_log_density_grad(&[0.7], &factors_for(&spec, &st)).unwrap();
        assert!((grad.d_values[0] + 0.7 / 2.5).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let locs = random_locs(&mut rng, 8);
        let g = build_neighbor_graph(&locs, 3).unwrap();
        let st = Arc::new(NngpStructure::new(&g, &locs).unwrap());
        let grad = nngp_log_density_grad(&[0.0; 8], &factors_for(&spec, &st)).unwrap();
        assert!(grad.d_values.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn prediction_interpolates_and_reverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let train = random_locs(&mut rng, 12);
        let w = normals(&mut rng, 12, 1.0);
        let spec = CovarianceSpec::exponential(1.3, 0.2);
        let sites = [train[4], Location::new(100.0, 100.0)];
        let p = nngp_predict::<ChaCha8Rng>(std::slice::from_ref(&w), &[spec], &train, &sites, 5, None).unwrap();
        assert!((p.mean[0] - w[4]).abs() < 1e-6);
        assert!(p.variance[0] < 1e-6);
        assert!(p.mean[1].abs() < 1e-3);
        assert!((p.variance[1] - 1.3).abs() < 1e-3);
        let empty = nngp_predict::<ChaCha8Rng>(std::slice::from_ref(&w), &[spec], &train, &[], 5, None).unwrap();
        assert!(empty.mean.is_empty());
        assert!(nngp_predict::<ChaCha8Rng>(&[vec![]], &[spec], &[], &sites, 5, None).is_err());
    }

    #[test]
    fn prediction_matches_dense_kriging() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let train = random_locs(&mut rng, 10);
        let w = normals(&mut rng, 10, 1.0);
        let spec = CovarianceSpec::exponential(0.9, 0.7);
        let sites = random_locs(&mut rng, 5);
        let p = nngp_predict::<ChaCha8Rng>(std::slice::from_ref(&w), &[spec], &train, &sites, 10, None).unwrap();
        let c = dense(&spec, &train);
        let chol = c.cholesky().unwrap();
        for (s, site) in sites.iter().enumerate() {
            let k = DVector::from_fn(10, |i, _| kernel(&spec, site, &train[i]));
            let alpha = chol.solve(&k);
            let mean = alpha.dot(&DVector::from_column_slice(&w));
            let var = spec.sigma2 - k.dot(&alpha);
            assert!((p.mean[s] - mean).abs() < 1e-8);
            assert!((p.variance[s] - var).abs() < 1e-8);
        }
    }

    fn kernel(spec: &CovarianceSpec, a: &Location, b: &Location) -> f64 {
        spec.sigma2 * spec.correlation(((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt())
    }

    #[test]
    fn grf_degenerate_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let locs = random_locs(&mut rng, 20);
        let w = simulate_grf(&CovarianceSpec::exponential(1e-12, 1.0), &locs, &mut rng).unwrap();
        assert!(w.iter().all(|v| v.abs() < 1e-4));
    }

    #[test]
    fn grf_is_deterministic() {
        let locs: Vec<Location> = (0..30).map(|i| Location::new(i as f64 * 0.1, 0.0)).collect();
        let spec = CovarianceSpec::exponential(1.0, 1.0);
        let a = simulate_grf(&spec, &locs, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = simulate_grf(&spec, &locs, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grf_single_site_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let spec = CovarianceSpec::exponential(0.5, 1.0);
        let loc = [Location::new(0.0, 0.0)];
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| simulate_grf(&spec, &loc, &mut rng).unwrap()[0]).collect();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / n as f64;
        // sd of the variance estimate is σ²·sqrt(2/n) ≈ 0.45%
        assert!((var - 0.5).abs() < 0.03 * 0.5);
    }

    #[test]
    fn grf_far_sites_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let spec = CovarianceSpec::exponential(1.0, 1.0);
        let locs = [Location::new(0.0, 0.0), Location::new(100.0, 0.0)];
        let n = 100_000;
        let mut sxy = 0.0;
        let (mut sxx, mut syy) = (0.0, 0.0);
        for _ in 0..n {
            let w = simulate_grf(&spec, &locs, &mut rng).unwrap();
            sxy += w[0] * w[1];
            sxx += w[0] * w[0];
            syy += w[1] * w[1];
        }
        assert!((sxy / (sxx * syy).sqrt()).abs() < 0.02);
    }

    #[test]
    fn grf_empirical_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let spec = CovarianceSpec::exponential(1.0, 0.8);
        let locs = [(0.0, 0.0), (0.5, 0.0), (0.0, 0.7), (1.0, 1.0), (2.0, 0.3)].map(|(x, y)| Location::new(x, y));
        let c = dense(&spec, &locs);
        let n = 10_000;
        let mut acc = DMatrix::<f64>::zeros(5, 5);
        for _ in 0..n {
            let w = DVector::from_vec(simulate_grf(&spec, &locs, &mut rng).unwrap());
            acc += &w * w.transpose();
        }
        acc /= n as f64;
        for i in 0..5 {
            for j in 0..5 {
                assert!((acc[(i, j)] - c[(i, j)]).abs() < 0.05 * spec.sigma2, "({i},{j})");
            }
        }
    }
}
