//! Small random fusion instances for derivative and likelihood checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::covariance::Family;
use crate::geom::{grid_partition, sample_points_in_area, voronoi_partition, BBox, Location};
use crate::model::{
    build_model, Covariates, DesignMatrix, Distribution, FusionModel, LatentSpec, Loading, PriorSpec, ResponseSpec,
    Support, TruncatedNormal, Variance,
};

/// Three-response instance on the unit square: `n.0` Gaussian point
/// observations, `n.1` Poisson areas with three sampling points each and
/// `n.2` Poisson grid counts. `q` is 1 or 2; with two processes the first
/// has a sampled exponential sill and the second is a unit-variance Matérn
/// (ν = 0.8) so both kernel paths get exercised.
pub fn random_fusion_model(seed: u64, n: (usize, usize, usize), q: usize) -> FusionModel {
    assert!(q == 1 || q == 2, "random instances support one or two processes");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = BBox::square(0.0, 1.0);
    let normal = |rng: &mut ChaCha8Rng, k: usize| -> Vec<f64> { (0..k).map(|_| rng.sample(StandardNormal)).collect() };

    let locs: Vec<Location> = (0..n.0).map(|_| b.sample_uniform(&mut rng)).collect();
    let x1 = Covariates::from_columns(n.0, true, &[("x".into(), normal(&mut rng, n.0))]).unwrap();
    let y1: Vec<f64> = normal(&mut rng, n.0).iter().map(|v| 2.0 * v).collect();
    let r1 = ResponseSpec::new("geo", Support::Geostat { locations: locs }, Distribution::Gaussian, x1, None, y1).unwrap();

    let seeds: Vec<Location> = (0..n.1).map(|_| b.sample_uniform(&mut rng)).collect();
    let areas = voronoi_partition(&seeds, &b).unwrap();
    let sampling_points = areas.iter().map(|a| sample_points_in_area(a, 3, &mut rng).unwrap()).collect();
    let x2 = Covariates::from_columns(n.1, true, &[("x".into(), normal(&mut rng, n.1))]).unwrap();
    let y2 = (0..n.1).map(|_| rng.random_range(0..7) as f64).collect();
    let off2 = (0..n.1).map(|_| rng.random_range(0.5..2.0)).collect();
    let r2 = ResponseSpec::new("areal", Support::Lattice { areas, sampling_points }, Distribution::Poisson, x2, Some(off2), y2)
        .unwrap();

    let side = (n.2 as f64).sqrt().round() as usize;
    let (nx, ny) = if side * side == n.2 { (side, side) } else { (n.2, 1) };
    let cells = grid_partition(&b, nx, ny).unwrap();
    let y3 = (0..n.2).map(|_| rng.random_range(0..5) as f64).collect();
    let off3 = (0..n.2).map(|_| rng.random_range(0.1..0.5)).collect();
    let r3 = ResponseSpec::new("pp", Support::Pointpattern { cells }, Distribution::Poisson, Covariates::from_columns(n.2, true, &[]).unwrap(), Some(off3), y3)
        .unwrap();

    let exp = LatentSpec { family: Family::Exponential, nu: 0.5, sigma2: Variance::Sampled, phi_prior: TruncatedNormal::new(1.0, 3.0) };
    let (processes, design) = if q == 1 {
        (vec![exp], DesignMatrix::new(3, 1, vec![Loading::Positive, Loading::Free, Loading::Free]).unwrap())
    } else {
        let mat = LatentSpec { family: Family::Matern, nu: 0.8, sigma2: Variance::Fixed(1.0), phi_prior: TruncatedNormal::new(0.5, 1.0) };
        let z0 = Loading::Fixed(0.0);
        let mask = vec![Loading::Positive, z0, Loading::Free, Loading::Positive, z0, Loading::Positive];
        (vec![exp, mat], DesignMatrix::new(3, 2, mask).unwrap())
    };
    build_model(vec![r1, r2, r3], processes, design, PriorSpec::default(), 4).unwrap()
}

/// Unconstrained parameter vector with independent `N(0, scale²)` entries.
pub fn random_theta(model: &FusionModel, seed: u64, scale: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..model.dim()).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}
