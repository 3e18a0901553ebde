//! `spfusion` command line: simulate study data, fit, predict and report.

pub mod config;
pub mod ingest;
pub mod persist;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

pub use config::{parse_config, ResponseDecl, RunConfig};
pub use ingest::ingest_data;
pub use persist::Metadata;

use crate::error::{Error, Result};
use crate::geom::Location;
use crate::harness::{
    evaluate::predict_variance, fitted_structure, generate_scenario, recovery_report, EvaluationReport, ScenarioConfig,
    ScenarioData, ScenarioKind, ScenarioTruth,
};
use crate::inference::{sample_model, summarize_chains, Target};
use crate::model::{build_model, DesignMatrix, Distribution, FusionModel, Support, SupportKind, Variance};
use persist::Adaptation;

#[derive(Debug, Parser)]
#[command(name = "spfusion", version, about = "Spatial fusion of point, area and point-pattern data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScenarioArg {
    One,
    Two,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated data set plus a ready-to-fit config.json.
    Simulate {
        #[arg(long, value_enum)]
        scenario: ScenarioArg,
        #[arg(long)]
        out: PathBuf,
        /// Scenario settings as JSON, replacing the preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Shrinks observation counts (scenario two defaults to 0.4).
        #[arg(long)]
        reduction: Option<f64>,
    },
    /// Fit the model described by a run config.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Predict the latent processes of a finished run at new sites.
    Predict {
        #[arg(long)]
        run: PathBuf,
        /// CSV with `id,x,y`.
        #[arg(long)]
        sites: PathBuf,
        /// Defaults to `surface.csv` in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize one or more runs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        runs: Vec<PathBuf>,
        /// Combined long-format CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run_args<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| Error::Config { key: "arguments".into(), message: e.to_string() })?;
    run(cli.command)
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { scenario, out, config, seed, reduction } => simulate(scenario, &out, config.as_deref(), seed, reduction),
        Command::Fit { config, out } => fit(&config, &out),
        Command::Predict { run, sites, out } => {
            let out = out.unwrap_or_else(|| run.join("surface.csv"));
            predict(&run, &sites, &out)
        }
        Command::Report { runs, out } => {
            let text = report(&runs, out.as_deref())?;
            print!("{text}");
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data { path: path.to_path_buf(), line: e.line(), message: e.to_string() })
}

fn rows_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| crate::harness::evaluate::csv_err(path, e))?;
    w.write_record(header).map_err(|e| crate::harness::evaluate::csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| crate::harness::evaluate::csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes the generated responses in the ingest formats.
fn write_scenario_files(data: &ScenarioData, dir: &Path) -> Result<Vec<ResponseDecl>> {
    let cfg = &data.config;
    let cov_names = |beta: &[f64]| if beta.len() >= 2 { vec!["covariate".to_string()] } else { Vec::new() };
    let cov_value = |r: &crate::model::ResponseSpec, i: usize| r.covariates.row(i).last().copied().unwrap_or(0.0);
    let mut decls = Vec::new();

    let g = &data.responses[0];
    let Support::Geostat { locations } = &g.support else { return Err(Error::Internal("response 1 is not geostatistical".into())) };
    let with_cov = cfg.beta[0].len() >= 2;
    let mut header = vec!["id", "x", "y", "y_value"];
    if with_cov {
        header.push("covariate");
    }
    let rows = locations
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let mut r = vec![format!("g{i}"), l.x.to_string(), l.y.to_string(), g.y[i].to_string()];
            if with_cov {
                r.push(cov_value(g, i).to_string());
            }
            r
        })
        .collect();
    rows_csv(&dir.join("geostat.csv"), &header, rows)?;
    decls.push(ResponseDecl {
        name: "geostat".into(),
        support: SupportKind::Geostat,
        path: "geostat.csv".into(),
        distribution: Distribution::Gaussian,
        intercept: !cfg.beta[0].is_empty(),
        covariates: Some(cov_names(&cfg.beta[0])),
        tau2: cfg.fit_tau2.map_or(Variance::Sampled, Variance::Fixed),
    });

    let a = &data.responses[1];
    let Support::Lattice { areas, .. } = &a.support else { return Err(Error::Internal("response 2 is not areal".into())) };
    let with_cov = cfg.beta[1].len() >= 2;
    let features: Vec<_> = areas
        .iter()
        .enumerate()
        .map(|(i, area)| {
            let mut ring: Vec<[f64; 2]> = area.boundary.iter().map(|p| [p.x, p.y]).collect();
            ring.push(ring[0]);
            let mut props = json!({"id": area.id, "y_value": a.y[i], "offset": a.offset[i]});
            if with_cov {
                props["covariate"] = json!(cov_value(a, i));
            }
            json!({"type": "Feature", "properties": props, "geometry": {"type": "Polygon", "coordinates": [ring]}})
        })
        .collect();
    write_json(&dir.join("areas.geojson"), &json!({"type": "FeatureCollection", "features": features}))?;
    decls.push(ResponseDecl {
        name: "lattice".into(),
        support: SupportKind::Lattice,
        path: "areas.geojson".into(),
        distribution: Distribution::Poisson,
        intercept: !cfg.beta[1].is_empty(),
        covariates: Some(cov_names(&cfg.beta[1])),
        tau2: Variance::Sampled,
    });

    let p = &data.responses[2];
    let Support::Pointpattern { cells } = &p.support else { return Err(Error::Internal("response 3 is not a point pattern".into())) };
    let rows = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            vec![
                c.id.clone(),
                c.center.x.to_string(),
                c.center.y.to_string(),
                c.side_x.to_string(),
                c.side_y.to_string(),
                p.y[i].to_string(),
                p.offset[i].to_string(),
            ]
        })
        .collect();
    rows_csv(&dir.join("grid.csv"), &["id", "x", "y", "side_x", "side_y", "y_value", "offset"], rows)?;
    decls.push(ResponseDecl {
        name: "pointpattern".into(),
        support: SupportKind::Pointpattern,
        path: "grid.csv".into(),
        distribution: Distribution::Poisson,
        intercept: false,
        covariates: Some(Vec::new()),
        tau2: Variance::Sampled,
    });

    let rows = data.prediction_sites.iter().enumerate().map(|(i, s)| vec![format!("s{i}"), s.x.to_string(), s.y.to_string()]).collect();
    rows_csv(&dir.join("prediction_sites.csv"), &["id", "x", "y"], rows)?;
    Ok(decls)
}

fn simulate(scenario: ScenarioArg, out: &Path, config: Option<&Path>, seed: Option<u64>, reduction: Option<f64>) -> Result<()> {
    let kind = match scenario {
        ScenarioArg::One => ScenarioKind::One,
        ScenarioArg::Two => ScenarioKind::Two,
    };
    let mut cfg = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            serde_path_to_error::deserialize::<_, ScenarioConfig>(de)
                .map_err(|e| Error::Config { key: e.path().to_string(), message: e.into_inner().to_string() })?
        }
        None if kind == ScenarioKind::Two => ScenarioConfig::two().with_reduction(0.4),
        None => ScenarioConfig::one(),
    };
    if cfg.kind != kind {
        return Err(Error::Config { key: "kind".into(), message: format!("config describes scenario {:?}", cfg.kind) });
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(r) = reduction {
        cfg.reduction = r;
    }
    let data = generate_scenario(&cfg)?;
    create_dir(out)?;
    let responses = write_scenario_files(&data, out)?;
    let (processes, mask) = fitted_structure(&cfg, 3)?;
    let q = processes.len();
    let mut run = RunConfig {
        seed: cfg.seed,
        sampling_points: cfg.sampling_points,
        responses,
        processes,
        design: Some(mask.chunks(q).map(|r| r.to_vec()).collect()),
        truth: Some("truth.json".into()),
        ..RunConfig::default()
    };
    if kind == ScenarioKind::Two && cfg.reduction < 1.0 {
        run.sampler.n_iter = 1000;
        run.sampler.n_warmup = 500;
    }
    run.sampler.seed = run.seed;
    run.validate()?;
    write_json(&out.join("scenario.json"), &cfg)?;
    write_json(&out.join("truth.json"), &data.truth)?;
    std::fs::write(out.join("config.json"), run.to_json() + "\n").map_err(|e| Error::io(out.join("config.json"), e))?;
    log::info!("wrote scenario {:?} data to {}", kind, out.display());
    Ok(())
}

/// Builds the model of a validated config.
pub fn build_from_config(cfg: &RunConfig) -> Result<FusionModel> {
    if cfg.responses.is_empty() {
        return Err(Error::Config { key: "responses".into(), message: "expected at least one response".into() });
    }
    let responses = ingest_data(&cfg.responses, cfg.sampling_points, cfg.seed)?;
    let rows = cfg.design_rows();
    let q = cfg.processes.len();
    let design = DesignMatrix::new(rows.len(), q, rows.concat())?;
    build_model(responses, cfg.processes.clone(), design, cfg.priors, cfg.neighbors)
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn fit(config: &Path, out: &Path) -> Result<()> {
    let cfg = parse_config(config)?;
    let model = build_from_config(&cfg)?;
    let start = Instant::now();
    let chains = sample_model(&model, &cfg.sampler, cfg.parameterization)?;
    let runtime_s = start.elapsed().as_secs_f64();
    let summary = summarize_chains(&chains)?;

    create_dir(out)?;
    persist::write_chains(out, &chains)?;
    persist::write_summary_csv(&out.join("summary.csv"), &summary)?;
    persist::write_locations(&out.join("locations.csv"), &model.locations)?;
    let mut stored = cfg.clone();
    if let Some(t) = &cfg.truth {
        let truth: ScenarioTruth = read_json(t)?;
        write_json(&out.join("truth.json"), &truth)?;
        stored.truth = Some("truth.json".into());
    }
    let meta = Metadata {
        package_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        config: stored,
        parameter_names: model.scalar_names(),
        n_chains: chains.len(),
        n_draws: cfg.sampler.n_draws(),
        n_processes: model.n_processes(),
        adaptation: chains.iter().map(|c| Adaptation { step_size: c.step_size, inv_metric: c.inv_metric.clone() }).collect(),
        rhat: summary.iter().map(|s| (s.name.clone(), finite(s.rhat))).collect(),
        divergences: chains.iter().map(|c| c.n_divergent()).sum(),
        runtime_s,
    };
    persist::write_metadata(out, &meta)?;
    log::info!("fit finished in {runtime_s:.1}s; output in {}", out.display());
    Ok(())
}

/// Rebuilds the model of a finished run and reloads its chains.
fn load_run(run: &Path, with_latent: bool) -> Result<(Metadata, FusionModel, Vec<crate::inference::ChainSamples>)> {
    let meta = persist::read_metadata(run)?;
    let model = build_from_config(&meta.config)?;
    let chains = persist::read_chains(run, &meta, with_latent)?;
    if chains.first().is_some_and(|c| c.names != model.scalar_names()) {
        return Err(Error::Data { path: persist::chain_path(run, 0), line: 1, message: "columns do not match the model".into() });
    }
    Ok((meta, model, chains))
}

fn predict(run: &Path, sites: &Path, out: &Path) -> Result<()> {
    let (ids, locs): (Vec<String>, Vec<Location>) = ingest::read_sites_csv(sites)?;
    let q = persist::read_metadata(run)?.n_processes;
    if locs.is_empty() {
        return persist::write_surface_csv(out, &[], &[], &vec![(Vec::new(), Vec::new()); q]);
    }
    let (meta, model, chains) = load_run(run, true)?;
    let per_process = (0..model.n_processes())
        .map(|k| predict_variance(&model, &chains, k, &locs, meta.config.neighbors))
        .collect::<Result<Vec<_>>>()?;
    persist::write_surface_csv(out, &ids, &locs, &per_process)
}

/// Text report for each run; runs with a `truth.json` get the recovery
/// table, others a plain posterior summary.
fn report(runs: &[PathBuf], out: Option<&Path>) -> Result<String> {
    let mut text = String::new();
    let mut reports: Vec<EvaluationReport> = Vec::new();
    let mut summary_rows = Vec::new();
    for run in runs {
        text.push_str(&format!("== {}\n", run.display()));
        let truth_path = run.join("truth.json");
        if truth_path.exists() {
            let truth: ScenarioTruth = read_json(&truth_path)?;
            let (meta, model, chains) = load_run(run, true)?;
            let mut r = recovery_report(&model, &chains, &truth)?;
            r.seed = meta.seed;
            r.runtime_s = meta.runtime_s;
            text.push_str(&r.recovery_table());
            text.push_str(&format!("covered {}/{}; max Rhat {:.3}\n", r.n_covered(), r.parameters.len(), r.max_rhat()));
            crate::harness::write_recovery_csv(&run.join("report.csv"), std::slice::from_ref(&r))?;
            reports.push(r);
        } else {
            let (meta, _, chains) = load_run(run, false)?;
            let summary = summarize_chains(&chains)?;
            text.push_str(&format!("{:<12} {:>10} {:>10} {:>22} {:>8} {:>8}\n", "", "mean", "median", "95% CI", "Rhat", "ESS"));
            for s in &summary {
                text.push_str(&format!(
                    "{:<12} {:>10.3} {:>10.3} {:>22} {:>8.3} {:>8.0}\n",
                    s.name,
                    s.mean,
                    s.median,
                    format!("({:.3}, {:.3})", s.lower, s.upper),
                    s.rhat,
                    s.ess
                ));
                summary_rows.push(vec![meta.seed.to_string(), s.name.clone(), s.median.to_string(), s.lower.to_string(), s.upper.to_string(), s.rhat.to_string()]);
            }
            persist::write_summary_csv(&run.join("report.csv"), &summary)?;
        }
    }
    if let Some(out) = out {
        if summary_rows.is_empty() {
            crate::harness::write_recovery_csv(out, &reports)?;
        } else {
            for r in &reports {
                for p in &r.parameters {
                    summary_rows.push(vec![r.seed.to_string(), p.name.clone(), p.median.to_string(), p.lower.to_string(), p.upper.to_string(), p.rhat.to_string()]);
                }
            }
            rows_csv(out, &["seed", "parameter", "median", "lower", "upper", "rhat"], summary_rows)?;
        }
    }
    Ok(text)
}
