//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Pass criterion numbers as arguments to run a subset, e.g.
//! `cargo test --test acceptance -- 1 6 7`.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use spatial_fusion::covariance::{cov_matrix, CovarianceSpec};
use spatial_fusion::error::Result;
use spatial_fusion::geom::{build_neighbor_graph, BBox, Location};
use spatial_fusion::harness::synthetic::{random_fusion_model, random_theta};
use spatial_fusion::harness::{generate_scenario, recovery_report, run_model_grid, scenario_model, ScenarioConfig};
use spatial_fusion::inference::{mcse, rhat, run_sampler, sample_model, InitStrategy, Parameterization, SamplerConfig, Target};
use spatial_fusion::latent::{build_nngp_factors, nngp_log_density};
use spatial_fusion::model::{apply_b, log_posterior, log_posterior_and_grad, Link, ResponseMap};
use spatial_fusion::rng::Rng as StreamRng;

type Criterion = (usize, &'static str, fn() -> Verdict);

/// Outcome of one criterion: pass flag plus a one-line account.
struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn within(limit: Duration, start: Instant) -> (bool, String) {
    let el = start.elapsed();
    (el < limit, format!("runtime {:.1}s (limit {:.0}s)", el.as_secs_f64(), limit.as_secs_f64()))
}

fn dense_log_density(spec: &CovarianceSpec, locs: &[Location], w: &[f64]) -> f64 {
    let c = cov_matrix(spec, locs).unwrap();
    let n = locs.len();
    let m = DMatrix::from_fn(n, n, |i, j| c[(i, j)]);
    let chol = m.cholesky().expect("covariance is positive definite");
    let v = DVector::from_column_slice(w);
    let sol = chol.solve(&v);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    -0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet - 0.5 * v.dot(&sol)
}

fn nngp_vs_dense() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let b = BBox::square(0.0, 1.0);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..=10);
        let locs: Vec<Location> = (0..n).map(|_| b.sample_uniform(&mut rng)).collect();
        let spec = CovarianceSpec::exponential(rng.random_range(0.2..3.0), rng.random_range(0.1..2.0));
        let w: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let graph = build_neighbor_graph(&locs, n - 1).unwrap();
        let f = build_nngp_factors(&spec, &graph, &locs).unwrap();
        let diff = (nngp_log_density(&w, &f).unwrap() - dense_log_density(&spec, &locs, &w)).abs();
        worst = worst.max(diff);
    }
    let (fast, t) = within(Duration::from_secs(1), start);
    verdict(worst < 1e-8 && fast, format!("20 instances, max |nngp - dense| = {worst:.2e} (tol 1e-8); {t}"))
}

fn gradient_suite() -> Verdict {
    let start = Instant::now();
    let m = random_fusion_model(2024, (10, 4, 25), 2);
    let theta = random_theta(&m, 7, 0.4);
    let (_, grad) = log_posterior_and_grad(&m, &theta).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..m.dim() {
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[i] += h;
        dn[i] -= h;
        let fd = (log_posterior(&m, &up).unwrap().total - log_posterior(&m, &dn).unwrap().total) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs().max(1.0));
    }
    let (fast, t) = within(Duration::from_secs(10), start);
    verdict(worst < 1e-5 && fast, format!("{} coordinates, max relative error {worst:.2e} (tol 1e-5); {t}", m.dim()))
}

struct StdNormal(usize);

impl Target for StdNormal {
    fn dim(&self) -> usize {
        self.0
    }
    fn log_density_grad(&self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        for (g, t) in grad.iter_mut().zip(theta) {
            *g = -t;
        }
        Ok(-0.5 * theta.iter().map(|t| t * t).sum::<f64>())
    }
    fn initial_point(&self, rng: &mut StreamRng) -> Vec<f64> {
        (0..self.0).map(|_| rng.random_range(-2.0..2.0)).collect()
    }
    fn scalar_names(&self) -> Vec<String> {
        (0..self.0).map(|i| format!("x{i}")).collect()
    }
    fn constrain(&self, theta: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>) {
        (theta.to_vec(), Vec::new())
    }
}

fn sampler_calibration() -> Verdict {
    let start = Instant::now();
    let cfg = SamplerConfig { n_chains: 4, n_iter: 2000, n_warmup: 1000, seed: 11, ..SamplerConfig::default() };
    let chains = run_sampler(&StdNormal(10), &cfg, InitStrategy::Random).unwrap();
    let (mut mean_ok, mut var_ok, mut max_rhat, mut worst_z, mut var_range) = (true, true, 0.0f64, 0.0f64, (f64::INFINITY, 0.0f64));
    for i in 0..10 {
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(i)).collect();
        let all: Vec<f64> = cols.iter().flatten().copied().collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let z = mean.abs() / mcse(&cols).unwrap();
        mean_ok &= z <= 3.0;
        var_ok &= (0.9..=1.1).contains(&var);
        worst_z = worst_z.max(z);
        var_range = (var_range.0.min(var), var_range.1.max(var));
        max_rhat = max_rhat.max(rhat(&cols).unwrap());
    }
    let (fast, t) = within(Duration::from_secs(60), start);
    verdict(
        mean_ok && var_ok && max_rhat < 1.01 && fast,
        format!(
            "max |mean|/MCSE {worst_z:.2} (<= 3), variances in [{:.3}, {:.3}] (within [0.9, 1.1]), max split-Rhat {max_rhat:.4} (< 1.01); {t}",
            var_range.0, var_range.1
        ),
    )
}

fn scenario_two_recovery() -> Verdict {
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=3 {
        let data = generate_scenario(&ScenarioConfig::two().with_reduction(0.4).with_seed(seed)).unwrap();
        let model = scenario_model(&data, &[0, 1, 2], 5).unwrap();
        let cfg = SamplerConfig { n_chains: 4, n_iter: 1000, n_warmup: 500, seed, ..SamplerConfig::default() };
        let chains = sample_model(&model, &cfg, Parameterization::default()).unwrap();
        let r = recovery_report(&model, &chains, &data.truth).unwrap();
        let rmse = r.latent_rmse.iter().copied().fold(0.0, f64::max);
        let missed: Vec<&str> = r.parameters.iter().filter(|p| !p.covered).map(|p| p.label.as_str()).collect();
        let ok = r.parameters.len() == 11 && r.n_covered() >= 8 && r.max_rhat() < 1.1 && rmse < 0.8;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: {}/11 covered{}, max Rhat {:.3}, latent RMSE {rmse:.3}",
            r.n_covered(),
            if missed.is_empty() { String::new() } else { format!(" (missed {})", missed.join(", ")) },
            r.max_rhat()
        ));
        eprintln!("  criterion 4 {}", parts.last().unwrap());
    }
    let (fast, t) = within(Duration::from_secs(45 * 60), start);
    verdict(pass && fast, format!("{} (need >= 8/11, Rhat < 1.1, RMSE < 0.8); {t}", parts.join("; ")))
}

fn fusion_beats_univariate() -> Verdict {
    let start = Instant::now();
    let combos = vec![vec![0], vec![1], vec![2], vec![0, 1, 2]];
    let (mut wins, mut sums) = (0, [0.0; 4]);
    let mut complete = true;
    for seed in 1..=10 {
        let data = generate_scenario(&ScenarioConfig::one().with_seed(seed)).unwrap();
        let cfg = SamplerConfig { n_chains: 4, n_iter: 300, n_warmup: 150, seed, ..SamplerConfig::default() };
        let r = run_model_grid(&data, &combos, &cfg, &data.prediction_sites, &data.truth.latent_at_prediction[0], 5).unwrap();
        let e: Vec<Option<f64>> = combos.iter().map(|c| r.rmspe_of(c)).collect();
        if e.iter().any(Option::is_none) {
            complete = false;
            eprintln!("  criterion 5 seed {seed}: a fit failed: {:?}", r.grid.iter().filter_map(|c| c.error.clone()).collect::<Vec<_>>());
            continue;
        }
        let e: Vec<f64> = e.into_iter().flatten().collect();
        for (s, v) in sums.iter_mut().zip(&e) {
            *s += v / 10.0;
        }
        let win = e[3] < e[0] && e[3] < e[1] && e[3] < e[2];
        wins += usize::from(win);
        eprintln!("  criterion 5 seed {seed}: G {:.4} L {:.4} P {:.4} G+L+P {:.4}{}", e[0], e[1], e[2], e[3], if win { "  fusion best" } else { "" });
    }
    let avg_ok = sums[3] < sums[0] && sums[3] < sums[1] && sums[3] < sums[2];
    let (fast, t) = within(Duration::from_secs(2 * 3600), start);
    verdict(
        complete && wins >= 7 && avg_ok && fast,
        format!(
            "fusion strictly best in {wins}/10 seeds (need >= 7); mean RMSPE G {:.4} L {:.4} P {:.4} G+L+P {:.4}; {t}",
            sums[0], sums[1], sums[2], sums[3]
        ),
    )
}

fn jensen_property() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut below, mut flat_equal, mut strict, mut n_equal) = (0, true, true, 0);
    for set in 0..1000 {
        let h = rng.random_range(2..=10);
        let values: Vec<f64> = if set % 10 == 0 {
            n_equal += 1;
            vec![rng.random_range(-3.0..3.0); h]
        } else {
            (0..h).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let map = ResponseMap::Areas(vec![(0..h).collect()]);
        let log = apply_b(&values, &map, Link::Log).unwrap()[0];
        let lin = apply_b(&values, &map, Link::Identity).unwrap()[0];
        let gap = log - lin;
        if gap < -1e-12 {
            below += 1;
        }
        let all_equal = values.iter().all(|v| *v == values[0]);
        if all_equal {
            flat_equal &= gap.abs() <= 1e-12;
        } else {
            strict &= gap > 1e-12;
        }
    }
    let (fast, t) = within(Duration::from_secs(1), start);
    verdict(
        below == 0 && flat_equal && strict && fast,
        format!("1000 sets ({n_equal} constant): violations {below}, equality iff constant: {} (tol 1e-12); {t}", flat_equal && strict),
    )
}

fn diagnostics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut normals = |shift: f64, n: usize| -> Vec<f64> { (0..n).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect() };
    let half = normals(0.0, 500);
    let chain: Vec<f64> = half.iter().chain(&half).copied().collect();
    let same = rhat(&[chain.clone(), chain]).unwrap();
    let apart = rhat(&[normals(0.0, 1000), normals(10.0, 1000)]).unwrap();
    verdict(
        (same - 1.0).abs() < 1e-12 && apart > 3.0,
        format!("identical stationary chains |rhat - 1| = {:.1e} (tol 1e-12); N(0,1) vs N(10,1) rhat = {apart:.2} (> 3)", (same - 1.0).abs()),
    )
}

fn spfusion(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_spfusion")).args(args).output().expect("spfusion runs");
    assert!(out.status.success(), "spfusion {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn simulate_and_fit(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let p = |f: &str| dir.join(f).to_str().unwrap().to_string();
    let mut scen = ScenarioConfig::one();
    scen.n_dense = 300;
    scen.n_geostat = 40;
    scen.n_areas = 10;
    scen.grid_nx = 6;
    scen.grid_ny = 6;
    scen.prediction_grid = 4;
    scen.seed = 3;
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(p("scenario.json"), serde_json::to_string(&scen).unwrap()).unwrap();
    spfusion(&["simulate", "--scenario", "one", "--config", &p("scenario.json"), "--out", &p("data")]);
    let config = dir.join("data").join("config.json");
    let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&config).unwrap()).unwrap();
    v["sampler"]["n_iter"] = 300.into();
    v["sampler"]["n_warmup"] = 150.into();
    std::fs::write(&config, serde_json::to_string_pretty(&v).unwrap()).unwrap();
    spfusion(&["fit", "--config", config.to_str().unwrap(), "--out", &p("run")]);
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join("run"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|f| f.extension().is_some_and(|x| x == "csv"))
        .map(|f| (f.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&f).unwrap()))
        .collect();
    files.sort();
    files
}

fn reproducibility() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let a = simulate_and_fit(&tmp.path().join("a"));
    let b = simulate_and_fit(&tmp.path().join("b"));
    let chain_files = a.iter().filter(|(n, _)| n.contains("chain_")).count();
    let same = a == b;
    verdict(same && chain_files > 0, format!("{chain_files} chain CSVs plus summaries compared byte for byte: {}", if same { "identical" } else { "differ" }))
}

fn main() {
    let criteria: [Criterion; 8] = [
        (1, "NNGP equals dense MVN with m = n - 1", nngp_vs_dense),
        (2, "posterior gradient vs central differences", gradient_suite),
        (3, "sampler calibration on a 10-d standard normal", sampler_calibration),
        (4, "scenario two parameter recovery, 3 seeds", scenario_two_recovery),
        (5, "fusion beats univariate models, scenario one, 10 seeds", fusion_beats_univariate),
        (6, "log-link aggregation dominates the plain average", jensen_property),
        (7, "split-Rhat reference values", diagnostics),
        (8, "simulate + fit is bit-reproducible", reproducibility),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let v = run();
        failed += usize::from(!v.pass);
        println!("criterion {id} {} {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
