//! Run-directory layout: chain and latent CSVs, metadata, summaries and
//! prediction surfaces. Floats are written in shortest round-trip form, so
//! reloading gives the same bits.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use crate::error::{Error, Result};
use crate::geom::Location;
use crate::harness::evaluate::csv_err;
use crate::inference::{ChainSamples, ParamSummary};

const DIAG_COLUMNS: [&str; 6] = ["iteration", "accept_stat", "n_leapfrog", "tree_depth", "divergent", "energy"];

pub fn chain_path(dir: &Path, chain: usize) -> PathBuf {
    dir.join(format!("chain_{chain}.csv"))
}

pub fn latent_path(dir: &Path, process: usize, chain: usize) -> PathBuf {
    dir.join(format!("latent_{process}_chain_{chain}.csv"))
}

/// Per-chain adaptation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    pub step_size: f64,
    pub inv_metric: Vec<f64>,
}

/// Everything needed to rerun or reload a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub package_version: String,
    pub seed: u64,
    /// Normalized configuration with absolute data paths.
    pub config: RunConfig,
    pub parameter_names: Vec<String>,
    pub n_chains: usize,
    pub n_draws: usize,
    pub n_processes: usize,
    pub adaptation: Vec<Adaptation>,
    /// `None` where undefined (one chain, too few draws).
    pub rhat: Vec<(String, Option<f64>)>,
    pub divergences: usize,
    pub runtime_s: f64,
}

fn write_rows(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for r in rows {
        w.write_record(&r).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn parse_f64(path: &Path, line: usize, s: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Data { path: path.to_path_buf(), line, message: format!("`{s}` is not a number") })
}

fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<(usize, Vec<String>)>)> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok((header, rows))
}

/// One `chain_{c}.csv` per chain (sampler diagnostics then parameters) and
/// one `latent_{k}_chain_{c}.csv` per process and chain.
pub fn write_chains(dir: &Path, chains: &[ChainSamples]) -> Result<()> {
    for (c, ch) in chains.iter().enumerate() {
        let mut header: Vec<String> = DIAG_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend(ch.names.iter().cloned());
        let rows = (0..ch.n_draws()).map(|i| {
            let mut r = vec![
                i.to_string(),
                ch.accept_stat[i].to_string(),
                ch.n_leapfrog[i].to_string(),
                ch.tree_depth[i].to_string(),
                u8::from(ch.divergent[i]).to_string(),
                ch.energy[i].to_string(),
            ];
            r.extend(ch.draws[i].iter().map(|v| v.to_string()));
            r
        });
        write_rows(&chain_path(dir, c), &header, rows)?;
        for (k, block) in ch.latent.iter().enumerate() {
            let n_loc = block.first().map_or(0, Vec::len);
            let header: Vec<String> = (0..n_loc).map(|i| format!("w_{i}")).collect();
            write_rows(&latent_path(dir, k, c), &header, block.iter().map(|row| row.iter().map(|v| v.to_string()).collect()))?;
        }
    }
    Ok(())
}

/// Reloads chains written by [`write_chains`]; adaptation results come from
/// `meta`. Latent draws are read only when `with_latent` is set.
pub fn read_chains(dir: &Path, meta: &Metadata, with_latent: bool) -> Result<Vec<ChainSamples>> {
    let mut out = Vec::with_capacity(meta.n_chains);
    for c in 0..meta.n_chains {
        let path = chain_path(dir, c);
        let (header, rows) = read_rows(&path)?;
        if header.len() < DIAG_COLUMNS.len() || header[..DIAG_COLUMNS.len()] != DIAG_COLUMNS {
            return Err(Error::Data { path, line: 1, message: "not a chain file".into() });
        }
        let names = header[DIAG_COLUMNS.len()..].to_vec();
        let mut ch = ChainSamples {
            names,
            draws: Vec::with_capacity(rows.len()),
            latent: Vec::new(),
            accept_stat: Vec::new(),
            n_leapfrog: Vec::new(),
            tree_depth: Vec::new(),
            divergent: Vec::new(),
            energy: Vec::new(),
            step_size: meta.adaptation.get(c).map_or(f64::NAN, |a| a.step_size),
            inv_metric: meta.adaptation.get(c).map(|a| a.inv_metric.clone()).unwrap_or_default(),
        };
        for (line, r) in &rows {
            let int = |i: usize| {
                r[i].parse::<usize>().map_err(|_| Error::Data { path: path.clone(), line: *line, message: format!("`{}` is not an integer", r[i]) })
            };
            ch.accept_stat.push(parse_f64(&path, *line, &r[1])?);
            ch.n_leapfrog.push(int(2)?);
            ch.tree_depth.push(int(3)?);
            ch.divergent.push(int(4)? != 0);
            ch.energy.push(parse_f64(&path, *line, &r[5])?);
            ch.draws.push(r[DIAG_COLUMNS.len()..].iter().map(|s| parse_f64(&path, *line, s)).collect::<Result<_>>()?);
        }
        if with_latent {
            for k in 0..meta.n_processes {
                let path = latent_path(dir, k, c);
                let (_, rows) = read_rows(&path)?;
                let block = rows
                    .iter()
                    .map(|(line, r)| r.iter().map(|s| parse_f64(&path, *line, s)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()?;
                ch.latent.push(block);
            }
        }
        out.push(ch);
    }
    Ok(out)
}

pub fn write_metadata(dir: &Path, meta: &Metadata) -> Result<()> {
    let path = dir.join("metadata.json");
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Internal(e.to_string()))?;
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn read_metadata(dir: &Path) -> Result<Metadata> {
    let path = dir.join("metadata.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data { path, line: e.line(), message: e.to_string() })
}

pub fn write_locations(path: &Path, locs: &[Location]) -> Result<()> {
    let header = ["index", "x", "y"].map(String::from);
    write_rows(path, &header, locs.iter().enumerate().map(|(i, l)| vec![i.to_string(), l.x.to_string(), l.y.to_string()]))
}

pub fn write_summary_csv(path: &Path, summary: &[ParamSummary]) -> Result<()> {
    let header = ["parameter", "mean", "sd", "median", "lower", "upper", "rhat", "ess"].map(String::from);
    write_rows(
        path,
        &header,
        summary.iter().map(|s| {
            vec![
                s.name.clone(),
                s.mean.to_string(),
                s.sd.to_string(),
                s.median.to_string(),
                s.lower.to_string(),
                s.upper.to_string(),
                s.rhat.to_string(),
                s.ess.to_string(),
            ]
        }),
    )
}

/// Long format: one row per site and process.
pub fn write_surface_csv(path: &Path, ids: &[String], sites: &[Location], per_process: &[(Vec<f64>, Vec<f64>)]) -> Result<()> {
    let header = ["id", "x", "y", "process", "mean", "variance"].map(String::from);
    let rows = per_process.iter().enumerate().flat_map(|(k, (mean, var))| {
        ids.iter().zip(sites).enumerate().map(move |(i, (id, s))| {
            vec![id.clone(), s.x.to_string(), s.y.to_string(), (k + 1).to_string(), mean[i].to_string(), var[i].to_string()]
        })
    });
    write_rows(path, &header, rows)
}
