//! Readers for point CSVs, area files (GeoJSON or WKT CSV) and grid-count
//! CSVs. Coordinates are planar; no CRS checks are made.

use std::path::Path;
use std::str::FromStr;

use serde_json::Value;

use super::config::ResponseDecl;
use crate::error::{Error, Result};
use crate::geom::{sample_points_in_area, Area, GridCell, Location};
use crate::model::{Covariates, ResponseSpec, Support, SupportKind};
use crate::rng::substream;

fn data_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Data { path: path.to_path_buf(), line, message: message.into() }
}

/// Rows of a delimited file: header plus string records with their line
/// numbers.
struct Table {
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

fn read_table(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| data_err(path, 1, format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            data_err(path, line, format!("malformed row: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        rows.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(Table { header, rows })
}

impl Table {
    fn col(&self, path: &Path, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| data_err(path, 1, format!("missing column `{name}`")))
    }

    fn number(path: &Path, line: usize, row: &[String], i: usize, name: &str) -> Result<f64> {
        let v: f64 = row[i].parse().map_err(|_| data_err(path, line, format!("column `{name}`: `{}` is not a number", row[i])))?;
        if !v.is_finite() {
            return Err(data_err(path, line, format!("column `{name}` is not finite")));
        }
        Ok(v)
    }

    fn numbers(&self, path: &Path, name: &str) -> Result<Vec<f64>> {
        let i = self.col(path, name)?;
        self.rows.iter().map(|(line, r)| Self::number(path, *line, r, i, name)).collect()
    }

    fn strings(&self, path: &Path, name: &str) -> Result<Vec<String>> {
        let i = self.col(path, name)?;
        Ok(self.rows.iter().map(|(_, r)| r[i].clone()).collect())
    }

    fn extra(&self, fixed: &[&str]) -> Vec<String> {
        self.header.iter().filter(|h| !fixed.contains(&h.as_str())).cloned().collect()
    }
}

/// Observations with their covariate columns, aligned with a support.
#[derive(Debug, Clone)]
pub struct Observations {
    pub ids: Vec<String>,
    pub y: Vec<f64>,
    pub offset: Option<Vec<f64>>,
    pub columns: Vec<(String, Vec<f64>)>,
}

const POINT_COLUMNS: [&str; 4] = ["id", "x", "y", "y_value"];
const GRID_COLUMNS: [&str; 7] = ["id", "x", "y", "side_x", "side_y", "y_value", "offset"];
const AREA_COLUMNS: [&str; 4] = ["id", "wkt", "y_value", "offset"];

fn columns_of(t: &Table, path: &Path, fixed: &[&str], wanted: Option<&[String]>) -> Result<Vec<(String, Vec<f64>)>> {
    let names = wanted.map_or_else(|| t.extra(fixed), |w| w.to_vec());
    names.iter().map(|n| Ok((n.clone(), t.numbers(path, n)?))).collect()
}

/// `id,x,y,y_value,covariates...`
pub fn read_points_csv(path: &Path, covariates: Option<&[String]>) -> Result<(Vec<Location>, Observations)> {
    let t = read_table(path)?;
    let xs = t.numbers(path, "x")?;
    let ys = t.numbers(path, "y")?;
    let locs = xs.into_iter().zip(ys).map(|(x, y)| Location { x, y }).collect();
    let obs = Observations {
        ids: t.strings(path, "id")?,
        y: t.numbers(path, "y_value")?,
        offset: None,
        columns: columns_of(&t, path, &POINT_COLUMNS, covariates)?,
    };
    Ok((locs, obs))
}

/// `id,x,y,side_x,side_y,y_value,offset,covariates...`; `offset` is the
/// full multiplicative term on the cell intensity.
pub fn read_grid_csv(path: &Path, covariates: Option<&[String]>) -> Result<(Vec<GridCell>, Observations)> {
    let t = read_table(path)?;
    let ids = t.strings(path, "id")?;
    let cols: Vec<Vec<f64>> = ["x", "y", "side_x", "side_y"].iter().map(|c| t.numbers(path, c)).collect::<Result<_>>()?;
    let mut cells = Vec::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        let c = GridCell::new(id.clone(), Location { x: cols[0][i], y: cols[1][i] }, cols[2][i], cols[3][i])
            .map_err(|e| data_err(path, t.rows[i].0, e.to_string()))?;
        cells.push(c);
    }
    let obs = Observations {
        ids,
        y: t.numbers(path, "y_value")?,
        offset: Some(t.numbers(path, "offset")?),
        columns: columns_of(&t, path, &GRID_COLUMNS, covariates)?,
    };
    Ok((cells, obs))
}

fn ring_of_wkt(path: &Path, line: usize, text: &str) -> Result<Vec<Location>> {
    let geom = wkt::Wkt::<f64>::from_str(text).map_err(|e| data_err(path, line, format!("invalid WKT: {e}")))?;
    match geom {
        wkt::Wkt::Polygon(p) => {
            let ring = p.rings().first().ok_or_else(|| data_err(path, line, "empty polygon"))?;
            Ok(ring.coords().iter().map(|c| Location { x: c.x, y: c.y }).collect())
        }
        _ => Err(data_err(path, line, "expected a POLYGON")),
    }
}

/// `id,wkt,y_value,offset,covariates...` with a quoted WKT polygon.
fn read_wkt_csv(path: &Path, covariates: Option<&[String]>) -> Result<(Vec<Area>, Observations)> {
    let t = read_table(path)?;
    let ids = t.strings(path, "id")?;
    let w = t.col(path, "wkt")?;
    let mut areas = Vec::with_capacity(ids.len());
    for ((line, row), id) in t.rows.iter().zip(&ids) {
        let ring = ring_of_wkt(path, *line, &row[w])?;
        areas.push(Area::new(id.clone(), ring).map_err(|e| data_err(path, *line, e.to_string()))?);
    }
    let offset = if t.header.iter().any(|h| h == "offset") { Some(t.numbers(path, "offset")?) } else { None };
    let obs = Observations { ids, y: t.numbers(path, "y_value")?, offset, columns: columns_of(&t, path, &AREA_COLUMNS, covariates)? };
    Ok((areas, obs))
}

fn prop_number(path: &Path, feature: usize, props: &Value, name: &str) -> Result<f64> {
    props
        .get(name)
        .and_then(Value::as_f64)
        .filter(|v| v.is_finite())
        .ok_or_else(|| data_err(path, feature + 1, format!("feature {feature}: property `{name}` is missing or not a number")))
}

/// GeoJSON `FeatureCollection` of polygons with `y_value`, optional
/// `offset` and covariate properties. Errors report the one-based feature
/// index in place of a line number.
fn read_geojson(path: &Path, covariates: Option<&[String]>) -> Result<(Vec<Area>, Observations)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: Value = serde_json::from_str(&text).map_err(|e| data_err(path, e.line(), format!("invalid JSON: {e}")))?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| data_err(path, 1, "expected a FeatureCollection"))?;
    let mut areas = Vec::with_capacity(features.len());
    let mut obs = Observations { ids: Vec::new(), y: Vec::new(), offset: Some(Vec::new()), columns: Vec::new() };
    let mut names: Option<Vec<String>> = covariates.map(|c| c.to_vec());
    for (i, f) in features.iter().enumerate() {
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let id = match props.get("id").or_else(|| f.get("id")) {
            Some(Value::String(s)) => s.clone(),
            Some(v @ Value::Number(_)) => v.to_string(),
            _ => (i + 1).to_string(),
        };
        let geom = f.get("geometry").ok_or_else(|| data_err(path, i + 1, format!("feature {i}: no geometry")))?;
        if geom.get("type").and_then(Value::as_str) != Some("Polygon") {
            return Err(data_err(path, i + 1, format!("feature {i}: expected a Polygon")));
        }
        let ring = geom
            .pointer("/coordinates/0")
            .and_then(Value::as_array)
            .ok_or_else(|| data_err(path, i + 1, format!("feature {i}: missing exterior ring")))?
            .iter()
            .map(|c| match (c.get(0).and_then(Value::as_f64), c.get(1).and_then(Value::as_f64)) {
                (Some(x), Some(y)) => Ok(Location { x, y }),
                _ => Err(data_err(path, i + 1, format!("feature {i}: malformed coordinate"))),
            })
            .collect::<Result<Vec<_>>>()?;
        areas.push(Area::new(id.clone(), ring).map_err(|e| data_err(path, i + 1, e.to_string()))?);
        obs.ids.push(id);
        obs.y.push(prop_number(path, i, &props, "y_value")?);
        let off = if props.get("offset").is_some() { prop_number(path, i, &props, "offset")? } else { 1.0 };
        obs.offset.as_mut().expect("set above").push(off);
        let names = names.get_or_insert_with(|| {
            let mut n: Vec<String> = props
                .as_object()
                .map(|o| o.keys().filter(|k| !["id", "y_value", "offset"].contains(&k.as_str())).cloned().collect())
                .unwrap_or_default();
            n.sort();
            n
        });
        if obs.columns.is_empty() {
            obs.columns = names.iter().map(|n| (n.clone(), Vec::new())).collect();
        }
        for (name, col) in &mut obs.columns {
            col.push(prop_number(path, i, &props, name)?);
        }
    }
    Ok((areas, obs))
}

/// Areas from a `.geojson`/`.json` file or a WKT CSV.
pub fn read_areas(path: &Path, covariates: Option<&[String]>) -> Result<(Vec<Area>, Observations)> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("geojson") | Some("json") => read_geojson(path, covariates),
        _ => read_wkt_csv(path, covariates),
    }
}

/// `id,x,y` prediction sites.
pub fn read_sites_csv(path: &Path) -> Result<(Vec<String>, Vec<Location>)> {
    let t = read_table(path)?;
    let xs = t.numbers(path, "x")?;
    let ys = t.numbers(path, "y")?;
    Ok((t.strings(path, "id")?, xs.into_iter().zip(ys).map(|(x, y)| Location { x, y }).collect()))
}

/// Builds validated responses from their declarations. Lattice sampling
/// points (`h` per area) come from substream `("sampling-points", 0)` of
/// `seed`, drawn area by area in declaration order.
pub fn ingest_data(decls: &[ResponseDecl], h: usize, seed: u64) -> Result<Vec<ResponseSpec>> {
    let mut sp_rng = substream(seed, "sampling-points", 0);
    let mut out = Vec::with_capacity(decls.len());
    for (j, d) in decls.iter().enumerate() {
        let cov = d.covariates.as_deref();
        let (support, obs) = match d.support {
            SupportKind::Geostat => {
                let (locations, obs) = read_points_csv(&d.path, cov)?;
                (Support::Geostat { locations }, obs)
            }
            SupportKind::Lattice => {
                let (areas, obs) = read_areas(&d.path, cov)?;
                let sampling_points =
                    areas.iter().map(|a| sample_points_in_area(a, h, &mut sp_rng)).collect::<Result<Vec<_>>>()?;
                (Support::Lattice { areas, sampling_points }, obs)
            }
            SupportKind::Pointpattern => {
                let (cells, obs) = read_grid_csv(&d.path, cov)?;
                (Support::Pointpattern { cells }, obs)
            }
        };
        let n = obs.y.len();
        if n == 0 {
            return Err(data_err(&d.path, 1, "no observations"));
        }
        let covariates = if !d.intercept && obs.columns.is_empty() {
            Covariates::empty(n)
        } else {
            Covariates::from_columns(n, d.intercept, &obs.columns)?
        };
        let spec = ResponseSpec::new(d.name.clone(), support, d.distribution, covariates, obs.offset, obs.y)
            .map_err(|e| match e {
                Error::InvalidArgument(m) => data_err(&d.path, 0, m),
                other => other,
            })?
            .with_tau2(d.tau2);
        spec.validate(j)?;
        out.push(spec);
    }
    Ok(out)
}
