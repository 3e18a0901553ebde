//! Model-grid fits, prediction error and parameter recovery.

use std::time::Instant;

use serde::Serialize;

use super::scenario::{scenario_model, ScenarioData, ScenarioTruth};
use crate::error::{Error, Result};
use crate::geom::Location;
use crate::inference::{rhat, sample_model, summarize, ChainSamples, Parameterization, SamplerConfig};
use crate::latent::nngp_predict;
use crate::model::{FusionModel, ResponseMap};
use crate::rng::Rng;

/// Root mean squared difference.
pub fn rmspe(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "rmspe needs equal nonempty lengths, got {} and {}",
            pred.len(),
            truth.len()
        )));
    }
    let ss: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / pred.len() as f64).sqrt())
}

const SHORT: [&str; 3] = ["G", "L", "P"];

/// The seven nonempty subsets of the three responses: singles, pairs,
/// then the triple.
pub fn all_combos() -> Vec<Vec<usize>> {
    vec![vec![0], vec![1], vec![2], vec![0, 1], vec![0, 2], vec![1, 2], vec![0, 1, 2]]
}

pub fn combo_label(combo: &[usize]) -> String {
    combo.iter().map(|&j| SHORT.get(j).copied().unwrap_or("?")).collect::<Vec<_>>().join("+")
}

/// One fitted cell of the model grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComboResult {
    pub combo: Vec<usize>,
    pub label: String,
    /// `None` when the fit failed.
    pub rmspe: Option<f64>,
    pub error: Option<String>,
    pub max_rhat: f64,
    pub divergences: usize,
    pub runtime_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamRecovery {
    pub name: String,
    pub label: String,
    pub truth: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub covered: bool,
    pub rhat: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct EvaluationReport {
    pub seed: u64,
    pub grid: Vec<ComboResult>,
    pub parameters: Vec<ParamRecovery>,
    /// Per latent process: RMSE of the posterior median at the
    /// geostatistical sites.
    pub latent_rmse: Vec<f64>,
    pub runtime_s: f64,
}

impl EvaluationReport {
    pub fn n_covered(&self) -> usize {
        self.parameters.iter().filter(|p| p.covered).count()
    }

    pub fn max_rhat(&self) -> f64 {
        self.parameters.iter().map(|p| p.rhat).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn rmspe_of(&self, combo: &[usize]) -> Option<f64> {
        self.grid.iter().find(|c| c.combo == combo).and_then(|c| c.rmspe)
    }

    /// Grid RMSPEs laid out like the regions of a three-set Venn diagram.
    pub fn venn_table(&self) -> String {
        let cell = |c: &[usize]| match self.grid.iter().find(|r| r.combo == c) {
            Some(ComboResult { rmspe: Some(v), .. }) => format!("{v:.3}"),
            Some(_) => "failed".to_string(),
            None => "-".to_string(),
        };
        let mut s = String::new();
        s.push_str("RMSPE of the latent process by response subset (G geostat, L lattice, P point pattern)\n");
        s.push_str(&format!("  only G: {:>8}   only L: {:>8}   only P: {:>8}\n", cell(&[0]), cell(&[1]), cell(&[2])));
        s.push_str(&format!("  G+L:    {:>8}   G+P:    {:>8}   L+P:    {:>8}\n", cell(&[0, 1]), cell(&[0, 2]), cell(&[1, 2])));
        s.push_str(&format!("  G+L+P:  {:>8}\n", cell(&[0, 1, 2])));
        s
    }

    /// Table of posterior medians and 95% intervals against the truth.
    pub fn recovery_table(&self) -> String {
        let mut s = format!("{:<10} {:>8} {:>8} {:>20} {:>8} {:>7}\n", "", "True", "Median", "95% CI", "Rhat", "covered");
        for p in &self.parameters {
            s.push_str(&format!(
                "{:<10} {:>8.2} {:>8.2} {:>20} {:>8.3} {:>7}\n",
                p.label,
                p.truth,
                p.median,
                format!("({:.2}, {:.2})", p.lower, p.upper),
                p.rhat,
                if p.covered { "yes" } else { "no" }
            ));
        }
        for (k, r) in self.latent_rmse.iter().enumerate() {
            s.push_str(&format!("latent process {} RMSE at geostatistical sites: {r:.3}\n", k + 1));
        }
        s
    }
}

/// Every post-warmup draw of latent process `k` with its covariance spec.
fn latent_draws(model: &FusionModel, chains: &[ChainSamples], k: usize) -> Result<(Vec<Vec<f64>>, Vec<crate::covariance::CovarianceSpec>)> {
    let names = &chains[0].names;
    let find = |n: &str| names.iter().position(|x| x == n);
    let phi_i = find(&format!("phi_{}", k + 1)).ok_or_else(|| Error::Internal(format!("no phi_{} column", k + 1)))?;
    let s2_i = find(&format!("sigma2_{}", k + 1));
    let fixed_s2 = match model.processes[k].sigma2 {
        crate::model::Variance::Fixed(v) => v,
        crate::model::Variance::Sampled => f64::NAN,
    };
    let mut w = Vec::new();
    let mut specs = Vec::new();
    for c in chains {
        for (it, row) in c.draws.iter().enumerate() {
            let s2 = s2_i.map_or(fixed_s2, |i| row[i]);
            specs.push(model.processes[k].covariance(s2, row[phi_i]));
            w.push(c.latent[k][it].clone());
        }
    }
    Ok((w, specs))
}

/// Posterior-mean kriging prediction of latent process `k` at `sites`.
pub fn predict_latent(model: &FusionModel, chains: &[ChainSamples], k: usize, sites: &[Location], m: usize) -> Result<Vec<f64>> {
    Ok(predict_variance(model, chains, k, sites, m)?.0)
}

/// Predictive mean and variance of latent process `k` at `sites`.
pub fn predict_variance(
    model: &FusionModel,
    chains: &[ChainSamples],
    k: usize,
    sites: &[Location],
    m: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (w, specs) = latent_draws(model, chains, k)?;
    let p = nngp_predict::<Rng>(&w, &specs, &model.locations, sites, m, None)?;
    Ok((p.mean, p.variance))
}

fn fit_combo(data: &ScenarioData, combo: &[usize], cfg: &SamplerConfig, sites: &[Location], truth: &[f64], m: usize) -> ComboResult {
    let start = Instant::now();
    let label = combo_label(combo);
    let outcome = (|| -> Result<(f64, f64, usize)> {
        let model = scenario_model(data, combo, m)?;
        let chains = sample_model(&model, cfg, Parameterization::default())?;
        let pred = predict_latent(&model, &chains, 0, sites, m)?;
        let err = rmspe(&pred, truth)?;
        let mut max_rhat = f64::NEG_INFINITY;
        if chains.len() > 1 {
            for i in 0..chains[0].names.len() {
                let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(i)).collect();
                max_rhat = max_rhat.max(rhat(&cols)?);
            }
        }
        Ok((err, max_rhat, chains.iter().map(|c| c.n_divergent()).sum()))
    })();
    let runtime_s = start.elapsed().as_secs_f64();
    match outcome {
        Ok((e, r, d)) => ComboResult { combo: combo.to_vec(), label, rmspe: Some(e), error: None, max_rhat: r, divergences: d, runtime_s },
        Err(e) => {
            log::warn!("fit {label} failed: {e}");
            let divergences = match &e {
                Error::SamplerHealth { divergences, .. } => *divergences,
                _ => 0,
            };
            ComboResult { combo: combo.to_vec(), label, rmspe: None, error: Some(e.to_string()), max_rhat: f64::NAN, divergences, runtime_s }
        }
    }
}

/// Fits one model per response subset and scores the posterior-mean
/// prediction of the first latent process at `sites` against `truth`.
/// Failed fits are recorded in their cell.
pub fn run_model_grid(
    data: &ScenarioData,
    combos: &[Vec<usize>],
    cfg: &SamplerConfig,
    sites: &[Location],
    truth: &[f64],
    m: usize,
) -> Result<EvaluationReport> {
    if combos.is_empty() || combos.iter().any(|c| c.is_empty()) {
        return Err(Error::InvalidArgument("the model grid needs nonempty response subsets".into()));
    }
    if sites.is_empty() || sites.len() != truth.len() {
        return Err(Error::InvalidArgument(format!("{} prediction sites but {} true values", sites.len(), truth.len())));
    }
    let start = Instant::now();
    // cells run one after another; each fit already spreads its chains
    // over the thread pool
    let grid = combos.iter().map(|c| fit_combo(data, c, cfg, sites, truth, m)).collect();
    Ok(EvaluationReport { seed: data.config.seed, grid, runtime_s: start.elapsed().as_secs_f64(), ..Default::default() })
}

/// Posterior medians, 95% intervals and coverage of the true parameters,
/// plus latent-field RMSE at the geostatistical sites (response 0 must be
/// the geostatistical one).
pub fn recovery_report(model: &FusionModel, chains: &[ChainSamples], truth: &ScenarioTruth) -> Result<EvaluationReport> {
    let first = chains.first().ok_or_else(|| Error::InvalidArgument("no chains".into()))?;
    let mut parameters = Vec::with_capacity(truth.params.len());
    for t in &truth.params {
        let i = first
            .names
            .iter()
            .position(|n| *n == t.name)
            .ok_or_else(|| Error::InvalidArgument(format!("parameter {} is not in the samples", t.name)))?;
        let cols: Vec<Vec<f64>> = chains.iter().map(|c| c.column(i)).collect();
        let all: Vec<f64> = cols.iter().flatten().copied().collect();
        let s = summarize(&all)?;
        let r = if cols.len() > 1 && cols[0].len() >= 4 { rhat(&cols)? } else { f64::NAN };
        parameters.push(ParamRecovery {
            name: t.name.clone(),
            label: t.label.clone(),
            truth: t.value,
            median: s.median,
            lower: s.lower,
            upper: s.upper,
            covered: s.lower <= t.value && t.value <= s.upper,
            rhat: r,
        });
    }
    let mut latent_rmse = Vec::new();
    if let Some(ResponseMap::Points(idx)) = model.aggregation.responses.first() {
        for (k, true_w) in truth.latent_at_geostat.iter().enumerate().take(model.n_processes()) {
            if true_w.len() != idx.len() {
                return Err(Error::InvalidArgument("truth does not match the geostatistical sites".into()));
            }
            let med: Vec<f64> = idx
                .iter()
                .map(|&u| {
                    let v: Vec<f64> = chains.iter().flat_map(|c| c.latent[k].iter().map(move |row| row[u])).collect();
                    summarize(&v).map(|s| s.median)
                })
                .collect::<Result<_>>()?;
            latent_rmse.push(rmspe(&med, true_w)?);
        }
    }
    Ok(EvaluationReport { parameters, latent_rmse, ..Default::default() })
}

/// Long-format CSV rows for grid cells of several reports.
pub fn write_grid_csv(path: &std::path::Path, reports: &[EvaluationReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["seed", "combo", "rmspe", "max_rhat", "divergences", "runtime_s", "error"]).map_err(|e| csv_err(path, e))?;
    for r in reports {
        for c in &r.grid {
            w.write_record([
                r.seed.to_string(),
                c.label.clone(),
                c.rmspe.map_or(String::new(), |v| v.to_string()),
                c.max_rhat.to_string(),
                c.divergences.to_string(),
                format!("{:.3}", c.runtime_s),
                c.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// One row per parameter and report.
pub fn write_recovery_csv(path: &std::path::Path, reports: &[EvaluationReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(["seed", "parameter", "label", "truth", "median", "lower", "upper", "covered", "rhat"]).map_err(|e| csv_err(path, e))?;
    for r in reports {
        for p in &r.parameters {
            w.write_record([
                r.seed.to_string(),
                p.name.clone(),
                p.label.clone(),
                p.truth.to_string(),
                p.median.to_string(),
                p.lower.to_string(),
                p.upper.to_string(),
                p.covered.to_string(),
                p.rhat.to_string(),
            ])
            .map_err(|e| csv_err(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_err(path: &std::path::Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Data { path: path.to_path_buf(), line: 0, message: format!("{other:?}") },
    }
}
