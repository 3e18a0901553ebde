//! Planar spatial supports: points, polygons, raster cells, partitions of a
//! rectangular domain and the ordered nearest-neighbor graph used by the
//! NNGP factorization.

use std::cmp::Ordering;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned rectangle `[xmin, xmax] × [ymin, ymax]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let ok = [xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite()) && xmax > xmin && ymax > ymin;
        if !ok {
            return Err(Error::InvalidArgument(format!(
                "bounding box [{xmin}, {xmax}] x [{ymin}, {ymax}] is empty or non-finite"
            )));
        }
        Ok(Self { xmin, ymin, xmax, ymax })
    }

    pub fn square(lo: f64, hi: f64) -> Self {
        Self { xmin: lo, ymin: lo, xmax: hi, ymax: hi }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: &Location) -> bool {
        p.x >= self.xmin && p.x <= self.xmax && p.y >= self.ymin && p.y <= self.ymax
    }

    /// Counter-clockwise corner ring.
    pub fn corners(&self) -> Vec<Location> {
        vec![
            Location::new(self.xmin, self.ymin),
            Location::new(self.xmax, self.ymin),
            Location::new(self.xmax, self.ymax),
            Location::new(self.xmin, self.ymax),
        ]
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Location {
        Location::new(
            self.xmin + self.width() * rng.random::<f64>(),
            self.ymin + self.height() * rng.random::<f64>(),
        )
    }
}

/// A simple closed polygon with a precomputed area.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Area {
    pub id: String,
    /// Vertex ring without the repeated closing vertex.
    pub boundary: Vec<Location>,
    pub area_measure: f64,
}

impl Area {
    pub fn new(id: impl Into<String>, mut boundary: Vec<Location>) -> Result<Self> {
        let id = id.into();
        if boundary.len() >= 2 && boundary.first() == boundary.last() {
            boundary.pop();
        }
        if boundary.len() < 3 {
            return Err(Error::InvalidArgument(format!("area {id}: polygon needs at least 3 vertices")));
        }
        if !boundary.iter().all(Location::is_finite) {
            return Err(Error::InvalidArgument(format!("area {id}: non-finite vertex")));
        }
        if !is_simple(&boundary) {
            return Err(Error::InvalidArgument(format!("area {id}: polygon is not simple")));
        }
        let area_measure = shoelace(&boundary).abs();
        if area_measure <= 0.0 {
            return Err(Error::InvalidArgument(format!("area {id}: polygon has zero area")));
        }
        Ok(Self { id, boundary, area_measure })
    }

    pub fn contains(&self, p: &Location) -> bool {
        point_in_polygon(p, &self.boundary)
    }

    pub fn bbox(&self) -> BBox {
        let mut b = BBox {
            xmin: f64::INFINITY,
            ymin: f64::INFINITY,
            xmax: f64::NEG_INFINITY,
            ymax: f64::NEG_INFINITY,
        };
        for v in &self.boundary {
            b.xmin = b.xmin.min(v.x);
            b.ymin = b.ymin.min(v.y);
            b.xmax = b.xmax.max(v.x);
            b.ymax = b.ymax.max(v.y);
        }
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub id: String,
    pub center: Location,
    pub side_x: f64,
    pub side_y: f64,
    pub cell_area: f64,
}

impl GridCell {
    pub fn new(id: impl Into<String>, center: Location, side_x: f64, side_y: f64) -> Result<Self> {
        let id = id.into();
        if !(side_x > 0.0 && side_y > 0.0 && side_x.is_finite() && side_y.is_finite()) || !center.is_finite() {
            return Err(Error::InvalidArgument(format!("grid cell {id}: sides must be positive and finite")));
        }
        Ok(Self { id, center, side_x, side_y, cell_area: side_x * side_y })
    }
}

/// Ordered nearest-neighbor sets. `neighbors[i]` holds *positions* in
/// `ordering` (all `< i`), nearest first.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborGraph {
    pub ordering: Vec<usize>,
    pub neighbors: Vec<Vec<usize>>,
    pub m: usize,
}

impl NeighborGraph {
    pub fn len(&self) -> usize {
        self.ordering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ordering.is_empty()
    }
}

pub fn distance(a: &Location, b: &Location) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidArgument("distance of non-finite location".into()));
    }
    Ok(dist(a, b))
}

/// Unchecked Euclidean distance for hot loops over validated locations.
#[inline]
pub(crate) fn dist(a: &Location, b: &Location) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Signed shoelace area (positive for counter-clockwise rings).
pub fn shoelace(ring: &[Location]) -> f64 {
    let n = ring.len();
    let mut s = 0.0;
    for i in 0..n {
        let a = ring[i];
        let b = ring[(i + 1) % n];
        s += a.x * b.y - b.x * a.y;
    }
    0.5 * s
}

/// Even-odd ray casting. Points exactly on an edge may land either way.
pub fn point_in_polygon(p: &Location, ring: &[Location]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x_cross = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn orient(a: &Location, b: &Location, c: &Location) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn segments_cross(p1: &Location, p2: &Location, q1: &Location, q2: &Location) -> bool {
    let d1 = orient(q1, q2, p1);
    let d2 = orient(q1, q2, p2);
    let d3 = orient(p1, p2, q1);
    let d4 = orient(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn is_simple(ring: &[Location]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a1, a2) = (&ring[i], &ring[(i + 1) % n]);
        if a1 == a2 {
            return false;
        }
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            if segments_cross(a1, a2, &ring[j], &ring[(j + 1) % n]) {
                return false;
            }
        }
    }
    true
}

fn order_key(a: &(usize, Location), b: &(usize, Location)) -> Ordering {
    let (ia, pa) = a;
    let (ib, pb) = b;
    (pa.x + pa.y)
        .total_cmp(&(pb.x + pb.y))
        .then(pa.x.total_cmp(&pb.x))
        .then(ia.cmp(ib))
}

/// Builds the NNGP neighbor graph. Locations are ordered by ascending
/// `x + y` (ties by `x`, then input index); each position conditions on its
/// `min(i, m)` nearest predecessors.
pub fn build_neighbor_graph(locations: &[Location], m: usize) -> Result<NeighborGraph> {
    if m == 0 {
        return Err(Error::InvalidArgument("neighbor count m must be at least 1".into()));
    }
    if let Some(bad) = locations.iter().find(|l| !l.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite location ({}, {})", bad.x, bad.y)));
    }
    check_distinct(locations)?;

    let mut keyed: Vec<(usize, Location)> = locations.iter().copied().enumerate().collect();
    keyed.sort_by(order_key);
    let ordering: Vec<usize> = keyed.iter().map(|(i, _)| *i).collect();
    let ordered: Vec<Location> = keyed.iter().map(|(_, p)| *p).collect();

    let mut neighbors = Vec::with_capacity(ordered.len());
    let mut cand: Vec<(f64, usize)> = Vec::new();
    for (i, p) in ordered.iter().enumerate() {
        cand.clear();
        cand.extend(ordered[..i].iter().enumerate().map(|(j, q)| (dist(p, q), j)));
        let k = m.min(i);
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < cand.len() {
            cand.select_nth_unstable_by(k, by_dist);
            cand.truncate(k);
        }
        cand.sort_by(by_dist);
        neighbors.push(cand.iter().map(|&(_, j)| j).collect());
    }
    Ok(NeighborGraph { ordering, neighbors, m })
}

pub(crate) fn check_distinct(locations: &[Location]) -> Result<()> {
    let mut sorted: Vec<Location> = locations.to_vec();
    sorted.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    for w in sorted.windows(2) {
        if w[0] == w[1] {
            return Err(Error::DuplicateLocation { x: w[0].x, y: w[0].y });
        }
    }
    Ok(())
}

/// Draws `h` points uniformly inside `area` by rejection from its bounding box.
pub fn sample_points_in_area<R: Rng + ?Sized>(area: &Area, h: usize, rng: &mut R) -> Result<Vec<Location>> {
    const MIN_RATE: f64 = 1e-6;
    let bbox = area.bbox();
    if area.area_measure / bbox.area() < MIN_RATE {
        return Err(Error::DegenerateArea { id: area.id.clone() });
    }
    let mut out = Vec::with_capacity(h);
    let mut attempts: u64 = 0;
    while out.len() < h {
        attempts += 1;
        let p = bbox.sample_uniform(rng);
        if area.contains(&p) {
            out.push(p);
        } else if (out.len() as f64 + 1.0) / (attempts as f64) < MIN_RATE {
            return Err(Error::DegenerateArea { id: area.id.clone() });
        }
    }
    Ok(out)
}

/// Clips a convex ring to the half-plane `n · p <= c`.
fn clip_half_plane(ring: &[Location], nx: f64, ny: f64, c: f64) -> Vec<Location> {
    let side = |p: &Location| nx * p.x + ny * p.y - c;
    let mut out = Vec::with_capacity(ring.len() + 1);
    for i in 0..ring.len() {
        let cur = ring[i];
        let next = ring[(i + 1) % ring.len()];
        let (sc, sn) = (side(&cur), side(&next));
        if sc <= 0.0 {
            out.push(cur);
        }
        if (sc < 0.0 && sn > 0.0) || (sc > 0.0 && sn < 0.0) {
            let t = sc / (sc - sn);
            out.push(Location::new(cur.x + t * (next.x - cur.x), cur.y + t * (next.y - cur.y)));
        }
    }
    out
}

/// Voronoi cells of `seeds` clipped to `bbox`, one `Area` per seed in input
/// order, built by successive half-plane clipping.
pub fn voronoi_partition(seeds: &[Location], bbox: &BBox) -> Result<Vec<Area>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("voronoi partition needs at least one seed".into()));
    }
    if let Some(s) = seeds.iter().find(|s| !bbox.contains(s)) {
        return Err(Error::InvalidArgument(format!("seed ({}, {}) lies outside the bounding box", s.x, s.y)));
    }
    check_distinct(seeds).map_err(|e| Error::InvalidArgument(format!("voronoi seeds: {e}")))?;

    let mut cells = Vec::with_capacity(seeds.len());
    for (i, s) in seeds.iter().enumerate() {
        let mut ring = bbox.corners();
        for (j, t) in seeds.iter().enumerate() {
            if i == j {
                continue;
            }
            let (nx, ny) = (t.x - s.x, t.y - s.y);
            let c = 0.5 * ((t.x * t.x + t.y * t.y) - (s.x * s.x + s.y * s.y));
            ring = clip_half_plane(&ring, nx, ny, c);
            if ring.len() < 3 {
                break;
            }
        }
        cells.push(Area::new(i.to_string(), ring)?);
    }
    Ok(cells)
}

/// Regular `nx × ny` raster over `bbox`, row-major from the lower-left cell.
pub fn grid_partition(bbox: &BBox, nx: usize, ny: usize) -> Result<Vec<GridCell>> {
    if nx == 0 || ny == 0 {
        return Err(Error::InvalidArgument("grid dimensions must be positive".into()));
    }
    let sx = bbox.width() / nx as f64;
    let sy = bbox.height() / ny as f64;
    let mut cells = Vec::with_capacity(nx * ny);
    for r in 0..ny {
        for c in 0..nx {
            let center = Location::new(bbox.xmin + (c as f64 + 0.5) * sx, bbox.ymin + (r as f64 + 0.5) * sy);
            cells.push(GridCell::new((r * nx + c).to_string(), center, sx, sy)?);
        }
    }
    Ok(cells)
}
