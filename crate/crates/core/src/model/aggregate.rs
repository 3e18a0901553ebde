//! The `B_j` operators mapping a latent combination on the modeled location
//! set to the support of one response.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Link {
    Identity,
    Log,
}

/// Index structure of `B_j` for one response.
#[derive(Debug, Clone, PartialEq)]
pub enum ResponseMap {
    /// Geostatistical or point-pattern response: one location per observation.
    Points(Vec<usize>),
    /// Lattice response: `H` sampling-point locations per area.
    Areas(Vec<Vec<usize>>),
}

impl ResponseMap {
    pub fn n_obs(&self) -> usize {
        match self {
            ResponseMap::Points(v) => v.len(),
            ResponseMap::Areas(v) => v.len(),
        }
    }

    /// Location indices feeding observation `i`.
    pub fn members(&self, i: usize) -> &[usize] {
        match self {
            ResponseMap::Points(v) => std::slice::from_ref(&v[i]),
            ResponseMap::Areas(v) => &v[i],
        }
    }

    fn max_index(&self) -> Option<usize> {
        match self {
            ResponseMap::Points(v) => v.iter().copied().max(),
            ResponseMap::Areas(v) => v.iter().flatten().copied().max(),
        }
    }
}

/// All `B_j` maps of a model plus the number of sampling points per area.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregationMap {
    pub responses: Vec<ResponseMap>,
    pub h: usize,
    pub n_locations: usize,
}

impl AggregationMap {
    pub fn validate(&self) -> Result<()> {
        for (j, r) in self.responses.iter().enumerate() {
            if let Some(mx) = r.max_index() {
                if mx >= self.n_locations {
                    return Err(Error::Internal(format!("response {j} maps to location {mx} outside the modeled set")));
                }
            }
            if let ResponseMap::Areas(a) = r {
                if let Some(bad) = a.iter().position(|s| s.len() != self.h) {
                    return Err(Error::Internal(format!("response {j}, area {bad}: expected {} sampling points", self.h)));
                }
            }
        }
        Ok(())
    }
}

/// Aggregates one observation: identity link averages the members, log link
/// averages on the intensity scale, `log((1/H) Σ exp(v))`.
#[inline]
pub(crate) fn aggregate(values: impl ExactSizeIterator<Item = f64> + Clone, link: Link) -> f64 {
    let h = values.len() as f64;
    match link {
        Link::Identity => values.sum::<f64>() / h,
        Link::Log => {
            let mx = values.clone().fold(f64::NEG_INFINITY, f64::max);
            if !mx.is_finite() {
                return mx;
            }
            mx + (values.map(|v| (v - mx).exp()).sum::<f64>() / h).ln()
        }
    }
}

/// Applies `B_j` to a latent combination `latent_row` defined on all
/// modeled locations.
pub fn apply_b(latent_row: &[f64], map: &ResponseMap, link: Link) -> Result<Vec<f64>> {
    if let Some(mx) = map.max_index() {
        if mx >= latent_row.len() {
            return Err(Error::Internal(format!(
                "aggregation index {mx} out of range for a latent vector of length {}",
                latent_row.len()
            )));
        }
    }
    Ok(match map {
        ResponseMap::Points(idx) => idx.iter().map(|&i| latent_row[i]).collect(),
        ResponseMap::Areas(areas) => areas
            .iter()
            .map(|members| aggregate(members.iter().map(|&i| latent_row[i]), link))
            .collect(),
    })
}
