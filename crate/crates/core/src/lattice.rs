//! Lattice boxes and conductance fields.
//!
//! Sites of a box are indexed row-major over their coordinates with the first
//! axis most significant, so index order is lexicographic coordinate order.
//! Edges are stored once per undirected pair; symmetry of the conductances is
//! therefore structural.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{self, Domain};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    /// Edges leaving the box are removed.
    Absorbing,
    /// Opposite faces are identified (torus).
    Periodic,
}

impl fmt::Display for Geometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Geometry::Absorbing => "absorbing",
            Geometry::Periodic => "periodic",
        })
    }
}

impl FromStr for Geometry {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "absorbing" => Ok(Geometry::Absorbing),
            "periodic" => Ok(Geometry::Periodic),
            other => Err(Error::invalid("geometry", format!("unknown geometry `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub dim: usize,
    pub radius: u32,
    pub geometry: Geometry,
    #[serde(default)]
    pub origin: Vec<i64>,
}

/// The vertex set `origin + {-L..L}^d` with its nearest-neighbour edges.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "BoxSpec", into = "BoxSpec")]
pub struct LatticeBox {
    spec: BoxSpec,
    side: usize,
    n_sites: usize,
    edges: Vec<(usize, usize)>,
    adj_start: Vec<usize>,
    adj: Vec<(usize, usize)>,
}

impl PartialEq for LatticeBox {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

impl From<LatticeBox> for BoxSpec {
    fn from(b: LatticeBox) -> Self {
        b.spec
    }
}

impl TryFrom<BoxSpec> for LatticeBox {
    type Error = Error;
    fn try_from(spec: BoxSpec) -> Result<Self> {
        let origin = if spec.origin.is_empty() {
            vec![0; spec.dim]
        } else {
            spec.origin
        };
        LatticeBox::with_origin(spec.dim, spec.radius, spec.geometry, origin)
    }
}

impl LatticeBox {
    pub fn new(dim: usize, radius: u32, geometry: Geometry) -> Result<Self> {
        Self::with_origin(dim, radius, geometry, vec![0; dim])
    }

    pub fn with_origin(dim: usize, radius: u32, geometry: Geometry, origin: Vec<i64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dim", "must be positive"));
        }
        if origin.len() != dim {
            return Err(Error::invalid("origin", "length must equal dim"));
        }
        let side = 2 * radius as usize + 1;
        let n_sites = side
            .checked_pow(dim as u32)
            .filter(|&n| n <= 1 << 32)
            .ok_or_else(|| Error::invalid("radius", "box too large"))?;
        let mut b = LatticeBox {
            spec: BoxSpec {
                dim,
                radius,
                geometry,
                origin,
            },
            side,
            n_sites,
            edges: Vec::new(),
            adj_start: Vec::new(),
            adj: Vec::new(),
        };
        b.build_edges();
        Ok(b)
    }

    fn build_edges(&mut self) {
        let d = self.spec.dim;
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        let mut offs = vec![0usize; d];
        for site in 0..self.n_sites {
            self.offsets_into(site, &mut offs);
            for axis in 0..d {
                let o = offs[axis];
                let next = if o + 1 < self.side {
                    Some(o + 1)
                } else if self.spec.geometry == Geometry::Periodic {
                    Some(0)
                } else {
                    None
                };
                if let Some(n) = next {
                    let other = self.replace_offset(site, axis, n);
                    if other == site {
                        continue;
                    }
                    let key = (site.min(other), site.max(other));
                    if seen.insert(key) {
                        self.edges.push((site, other));
                    }
                }
            }
        }
        let mut degree = vec![0usize; self.n_sites];
        for &(a, b) in &self.edges {
            degree[a] += 1;
            degree[b] += 1;
        }
        self.adj_start = Vec::with_capacity(self.n_sites + 1);
        let mut acc = 0;
        for deg in &degree {
            self.adj_start.push(acc);
            acc += deg;
        }
        self.adj_start.push(acc);
        let mut fill = self.adj_start.clone();
        self.adj = vec![(0, 0); acc];
        for (e, &(a, b)) in self.edges.iter().enumerate() {
            self.adj[fill[a]] = (b, e);
            fill[a] += 1;
            self.adj[fill[b]] = (a, e);
            fill[b] += 1;
        }
        // neighbours in increasing site order keeps jump selection canonical
        for s in 0..self.n_sites {
            self.adj[self.adj_start[s]..self.adj_start[s + 1]].sort_unstable();
        }
    }

    fn stride(&self, axis: usize) -> usize {
        self.side.pow((self.spec.dim - 1 - axis) as u32)
    }

    fn replace_offset(&self, site: usize, axis: usize, new: usize) -> usize {
        let stride = self.stride(axis);
        let old = (site / stride) % self.side;
        site - old * stride + new * stride
    }

    fn offsets_into(&self, mut site: usize, out: &mut [usize]) {
        for axis in (0..self.spec.dim).rev() {
            out[axis] = site % self.side;
            site /= self.side;
        }
    }

    pub fn spec(&self) -> &BoxSpec {
        &self.spec
    }
    pub fn dim(&self) -> usize {
        self.spec.dim
    }
    pub fn radius(&self) -> u32 {
        self.spec.radius
    }
    pub fn geometry(&self) -> Geometry {
        self.spec.geometry
    }
    pub fn origin(&self) -> &[i64] {
        &self.spec.origin
    }
    pub fn side(&self) -> usize {
        self.side
    }
    pub fn site_count(&self) -> usize {
        self.n_sites
    }
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// `(neighbour, edge)` pairs of `site`, sorted by neighbour.
    #[inline]
    pub fn neighbors(&self, site: usize) -> &[(usize, usize)] {
        &self.adj[self.adj_start[site]..self.adj_start[site + 1]]
    }

    pub fn edge_between(&self, a: usize, b: usize) -> Option<usize> {
        self.neighbors(a).iter().find(|&&(n, _)| n == b).map(|&(_, e)| e)
    }

    pub fn coords(&self, site: usize) -> Vec<i64> {
        let mut out = vec![0; self.spec.dim];
        self.coords_into(site, &mut out);
        out
    }

    pub fn coords_into(&self, mut site: usize, out: &mut [i64]) {
        let r = self.spec.radius as i64;
        for axis in (0..self.spec.dim).rev() {
            out[axis] = (site % self.side) as i64 - r + self.spec.origin[axis];
            site /= self.side;
        }
    }

    /// True if `coords` lies in the box without wrapping.
    pub fn contains(&self, coords: &[i64]) -> bool {
        let r = self.spec.radius as i64;
        coords.len() == self.spec.dim
            && coords
                .iter()
                .zip(&self.spec.origin)
                .all(|(&c, &o)| (c - o).abs() <= r)
    }

    /// Site index of `coords`; periodic boxes wrap, absorbing boxes return
    /// `None` outside.
    pub fn site_of(&self, coords: &[i64]) -> Option<usize> {
        if coords.len() != self.spec.dim {
            return None;
        }
        let r = self.spec.radius as i64;
        let side = self.side as i64;
        let mut idx = 0usize;
        for (axis, (&c, &o)) in coords.iter().zip(&self.spec.origin).enumerate() {
            let mut off = c - o + r;
            if !(0..side).contains(&off) {
                match self.spec.geometry {
                    Geometry::Absorbing => return None,
                    Geometry::Periodic => off = off.rem_euclid(side),
                }
            }
            let _ = axis;
            idx = idx * self.side + off as usize;
        }
        Some(idx)
    }

    /// The site at lattice coordinate 0, if it is inside the box.
    pub fn origin_site(&self) -> Option<usize> {
        let zero = vec![0; self.spec.dim];
        if self.contains(&zero) {
            self.site_of(&zero)
        } else {
            None
        }
    }

    /// True if the edge `(a, b)` joins two sites at Euclidean distance one,
    /// i.e. it is not a wrap-around edge.
    pub fn is_interior_edge(&self, a: usize, b: usize) -> bool {
        let ca = self.coords(a);
        let cb = self.coords(b);
        ca.iter().zip(&cb).map(|(x, y)| (x - y).abs()).sum::<i64>() == 1
    }
}

/// Any set of lattice points.
pub trait Region {
    fn contains(&self, coords: &[i64]) -> bool;
}

impl Region for LatticeBox {
    fn contains(&self, coords: &[i64]) -> bool {
        LatticeBox::contains(self, coords)
    }
}

/// The cube `center + [-radius, radius]^d`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pocket {
    pub center: Vec<i64>,
    pub radius: u32,
}

impl Pocket {
    pub fn new(center: Vec<i64>, radius: u32) -> Self {
        Self { center, radius }
    }

    fn overlaps(&self, other: &Pocket) -> bool {
        let reach = (self.radius + other.radius) as i64;
        self.center
            .iter()
            .zip(&other.center)
            .all(|(a, b)| (a - b).abs() <= reach)
    }

    fn fits_in(&self, lattice: &LatticeBox) -> bool {
        let r = self.radius as i64;
        let lr = lattice.radius() as i64;
        self.center.len() == lattice.dim()
            && self
                .center
                .iter()
                .zip(lattice.origin())
                .all(|(&c, &o)| (c - o).abs() + r <= lr)
    }

    /// Edges of the field box with both endpoints in the pocket (wrap-around
    /// edges excluded).
    pub fn edges_in(&self, lattice: &LatticeBox) -> Vec<usize> {
        let d = lattice.dim();
        let r = self.radius as i64;
        let mut out = Vec::new();
        let side = 2 * r + 1;
        let count = (side as usize).pow(d as u32);
        let mut x = vec![0i64; d];
        for k in 0..count {
            let mut rem = k;
            for axis in (0..d).rev() {
                x[axis] = self.center[axis] - r + (rem % side as usize) as i64;
                rem /= side as usize;
            }
            let Some(a) = lattice.site_of(&x) else { continue };
            if !lattice.contains(&x) {
                continue;
            }
            for axis in 0..d {
                if x[axis] + 1 > self.center[axis] + r {
                    continue;
                }
                let mut y = x.clone();
                y[axis] += 1;
                if !lattice.contains(&y) {
                    continue;
                }
                if let Some(b) = lattice.site_of(&y) {
                    if let Some(e) = lattice.edge_between(a, b) {
                        out.push(e);
                    }
                }
            }
        }
        out
    }
}

impl Region for Pocket {
    fn contains(&self, coords: &[i64]) -> bool {
        let r = self.radius as i64;
        coords.len() == self.center.len()
            && coords.iter().zip(&self.center).all(|(c, o)| (c - o).abs() <= r)
    }
}

/// A verified pocket: all its edges have rates in `(target - tolerance, target + tolerance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub target: f64,
    pub tolerance: f64,
    pub pocket: Pocket,
}

impl Region for ClusterSpec {
    fn contains(&self, coords: &[i64]) -> bool {
        self.pocket.contains(coords)
    }
}

/// Edge → rate map on a box, uniformly elliptic.
#[derive(Debug, Clone, Serialize)]
pub struct ConductanceField {
    lattice: LatticeBox,
    rates: Vec<f64>,
    lower: f64,
    upper: f64,
    support: Vec<f64>,
    #[serde(skip)]
    totals: Vec<f64>,
}

impl PartialEq for ConductanceField {
    fn eq(&self, other: &Self) -> bool {
        self.lattice == other.lattice && self.rates == other.rates
    }
}

impl ConductanceField {
    pub fn from_rates(lattice: LatticeBox, rates: Vec<f64>) -> Result<Self> {
        if rates.len() != lattice.edge_count() {
            return Err(Error::invalid(
                "rates",
                format!("expected {} rates, got {}", lattice.edge_count(), rates.len()),
            ));
        }
        if let Some((edge, &value)) = rates.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
            return Err(Error::Ellipticity { edge, value });
        }
        let mut support = rates.clone();
        support.sort_by(f64::total_cmp);
        support.dedup();
        let (lower, upper) = match (support.first(), support.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => (1.0, 1.0),
        };
        let mut totals = vec![0.0; lattice.site_count()];
        for (e, &(a, b)) in lattice.edges().iter().enumerate() {
            totals[a] += rates[e];
            totals[b] += rates[e];
        }
        Ok(Self {
            lattice,
            rates,
            lower,
            upper,
            support,
            totals,
        })
    }

    pub fn constant(lattice: LatticeBox, kappa: f64) -> Result<Self> {
        let n = lattice.edge_count();
        Self::from_rates(lattice, vec![kappa; n])
    }

    pub fn lattice(&self) -> &LatticeBox {
        &self.lattice
    }
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }
    #[inline]
    pub fn rate(&self, edge: usize) -> f64 {
        self.rates[edge]
    }
    /// Total jump rate out of `site`.
    #[inline]
    pub fn total_rate(&self, site: usize) -> f64 {
        self.totals[site]
    }
    pub fn max_total_rate(&self) -> f64 {
        self.totals.iter().cloned().fold(0.0, f64::max)
    }
    pub fn rate_between(&self, a: usize, b: usize) -> Option<f64> {
        self.lattice.edge_between(a, b).map(|e| self.rates[e])
    }
    /// Ellipticity bounds `(c, C)`.
    pub fn bounds(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }
    pub fn support(&self) -> &[f64] {
        &self.support
    }
    /// Essential infimum of the support.
    pub fn kappa_min(&self) -> f64 {
        self.lower
    }
    /// Essential supremum of the support.
    pub fn kappa_max(&self) -> f64 {
        self.upper
    }

    /// One header line `dim,radius,geometry`, then one `x;y;rate` row per edge.
    pub fn to_csv(&self) -> String {
        let l = &self.lattice;
        let mut out = format!("{},{},{}\n", l.dim(), l.radius(), l.geometry());
        for (e, &(a, b)) in l.edges().iter().enumerate() {
            out.push_str(&join_coords(&l.coords(a), ","));
            out.push(';');
            out.push_str(&join_coords(&l.coords(b), ","));
            out.push(';');
            out.push_str(&self.rates[e].to_string());
            out.push('\n');
        }
        out
    }

    /// Inverse of [`to_csv`](Self::to_csv); blank lines and `#` comments are skipped.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let (_, header) = lines.next().ok_or(Error::Parse {
            line: 1,
            reason: "missing header".into(),
        })?;
        let parts: Vec<&str> = header.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::Parse {
                line: 1,
                reason: "header must be `dim,radius,geometry`".into(),
            });
        }
        let perr = |line: usize, what: &str| Error::Parse {
            line,
            reason: what.to_string(),
        };
        let dim: usize = parts[0].trim().parse().map_err(|_| perr(1, "bad dim"))?;
        let radius: u32 = parts[1].trim().parse().map_err(|_| perr(1, "bad radius"))?;
        let geometry: Geometry = parts[2].parse()?;
        let mut rows = Vec::new();
        for (i, line) in lines {
            let cols: Vec<&str> = line.split(';').collect();
            if cols.len() != 3 {
                return Err(perr(i + 1, "row must be `x;y;rate`"));
            }
            let x = parse_coords(cols[0], dim).ok_or_else(|| perr(i + 1, "bad x coords"))?;
            let y = parse_coords(cols[1], dim).ok_or_else(|| perr(i + 1, "bad y coords"))?;
            let rate: f64 = cols[2].trim().parse().map_err(|_| perr(i + 1, "bad rate"))?;
            rows.push((i + 1, x, y, rate));
        }
        // the origin offset is implied by the smallest coordinate on each axis
        let mut origin = vec![0i64; dim];
        if !rows.is_empty() {
            for (axis, o) in origin.iter_mut().enumerate() {
                let min = rows
                    .iter()
                    .flat_map(|(_, x, y, _)| [x[axis], y[axis]])
                    .min()
                    .unwrap_or(0);
                *o = min + radius as i64;
            }
        }
        let lattice = LatticeBox::with_origin(dim, radius, geometry, origin)?;
        let mut rates = vec![f64::NAN; lattice.edge_count()];
        for (line, x, y, rate) in rows {
            let a = lattice.site_of(&x).filter(|_| lattice.contains(&x));
            let b = lattice.site_of(&y).filter(|_| lattice.contains(&y));
            let e = match (a, b) {
                (Some(a), Some(b)) => lattice.edge_between(a, b),
                _ => None,
            }
            .ok_or_else(|| perr(line, "row is not an edge of the box"))?;
            if !rates[e].is_nan() {
                return Err(perr(line, "duplicate edge"));
            }
            rates[e] = rate;
        }
        if rates.iter().any(|r| r.is_nan()) {
            return Err(perr(0, "missing edges"));
        }
        Self::from_rates(lattice, rates)
    }
}

pub(crate) fn join_coords(c: &[i64], sep: &str) -> String {
    c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(sep)
}

fn parse_coords(s: &str, dim: usize) -> Option<Vec<i64>> {
    let v: Option<Vec<i64>> = s.split(',').map(|t| t.trim().parse().ok()).collect();
    v.filter(|v| v.len() == dim)
}

/// A pocket to plant at a fixed conductance value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPocket {
    pub center: Vec<i64>,
    pub radius: u32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum FieldLaw {
    Constant {
        kappa: f64,
    },
    IidDiscrete {
        values: Vec<f64>,
        probs: Vec<f64>,
    },
    /// Monochromatic pockets in an i.i.d. background.
    Clustered {
        values: Vec<f64>,
        probs: Vec<f64>,
        pockets: Vec<PlantedPocket>,
    },
}

fn check_discrete(values: &[f64], probs: &[f64]) -> Result<()> {
    if values.is_empty() || values.len() != probs.len() {
        return Err(Error::invalid("values", "values and probs must be non-empty and of equal length"));
    }
    if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::invalid("values", format!("{v} is outside (0, inf)")));
    }
    if probs.iter().any(|p| !(*p >= 0.0)) || (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("probs", "must be non-negative and sum to 1"));
    }
    Ok(())
}

fn draw_discrete<R: Rng>(rng: &mut R, values: &[f64], probs: &[f64]) -> f64 {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (v, p) in values.iter().zip(probs) {
        acc += p;
        if u < acc {
            return *v;
        }
    }
    *values.last().unwrap()
}

pub fn generate_field(lattice: LatticeBox, law: &FieldLaw, seed: u64) -> Result<ConductanceField> {
    let mut rng = rng::stream(seed, Domain::Field, 0);
    let n = lattice.edge_count();
    let rates = match law {
        FieldLaw::Constant { kappa } => {
            if !(kappa.is_finite() && *kappa > 0.0) {
                return Err(Error::invalid("kappa", format!("{kappa} is outside (0, inf)")));
            }
            vec![*kappa; n]
        }
        FieldLaw::IidDiscrete { values, probs } => {
            check_discrete(values, probs)?;
            (0..n).map(|_| draw_discrete(&mut rng, values, probs)).collect()
        }
        FieldLaw::Clustered { values, probs, pockets } => {
            check_discrete(values, probs)?;
            for (i, p) in pockets.iter().enumerate() {
                if !(p.value.is_finite() && p.value > 0.0) {
                    return Err(Error::invalid("pockets", format!("pocket {i} value {} is outside (0, inf)", p.value)));
                }
                if !Pocket::new(p.center.clone(), p.radius).fits_in(&lattice) {
                    return Err(Error::PocketOutsideBox { index: i });
                }
            }
            for i in 0..pockets.len() {
                for j in i + 1..pockets.len() {
                    let a = Pocket::new(pockets[i].center.clone(), pockets[i].radius);
                    let b = Pocket::new(pockets[j].center.clone(), pockets[j].radius);
                    if a.overlaps(&b) {
                        return Err(Error::OverlappingPockets { first: i, second: j });
                    }
                }
            }
            let mut rates: Vec<f64> = (0..n).map(|_| draw_discrete(&mut rng, values, probs)).collect();
            for p in pockets {
                for e in Pocket::new(p.center.clone(), p.radius).edges_in(&lattice) {
                    rates[e] = p.value;
                }
            }
            rates
        }
    };
    ConductanceField::from_rates(lattice, rates)
}

/// Candidate centers for radius-`r` pockets, nearest to the lattice origin
/// first (l1 distance), ties broken lexicographically.
fn pocket_centers(lattice: &LatticeBox, r: u32) -> Vec<usize> {
    let mut centers: Vec<(i64, usize)> = (0..lattice.site_count())
        .filter_map(|s| {
            let c = lattice.coords(s);
            Pocket::new(c.clone(), r)
                .fits_in(lattice)
                .then(|| (c.iter().map(|v| v.abs()).sum(), s))
        })
        .collect();
    centers.sort_unstable();
    centers.into_iter().map(|(_, s)| s).collect()
}

/// Exhaustive search for a pocket of radius `r` whose rates all lie in
/// `(kappa - delta, kappa + delta)`.
pub fn verify_clustering(field: &ConductanceField, kappa: f64, delta: f64, r: u32) -> Result<Option<ClusterSpec>> {
    let lattice = field.lattice();
    if r > lattice.radius() {
        return Err(Error::invalid("r", "pocket radius exceeds box radius"));
    }
    if !(delta > 0.0) {
        return Err(Error::invalid("delta", "must be positive"));
    }
    let ok = |rate: f64| rate > kappa - delta && rate < kappa + delta;
    for center in pocket_centers(lattice, r) {
        let pocket = Pocket::new(lattice.coords(center), r);
        if pocket.edges_in(lattice).into_iter().all(|e| ok(field.rate(e))) {
            return Ok(Some(ClusterSpec {
                target: kappa,
                tolerance: delta,
                pocket,
            }));
        }
    }
    Ok(None)
}

/// Floor every rate onto the grid `k_min + j (k_max - k_min) / n`,
/// `j = 0..n-1`, keeping `k_max` fixed.
pub fn discretize_field(field: &ConductanceField, n: u32) -> Result<ConductanceField> {
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let (lo, hi) = (field.kappa_min(), field.kappa_max());
    if lo == hi {
        return Ok(field.clone());
    }
    let h = (hi - lo) / n as f64;
    let grid = |j: u32| lo + j as f64 * h;
    let rates = field
        .rates()
        .iter()
        .map(|&k| {
            if k == hi {
                return hi;
            }
            let mut j = (((k - lo) / h).floor().max(0.0) as u32).min(n - 1);
            // the grid is evaluated the same way every time, which keeps the
            // map idempotent despite rounding in the quotient
            while j + 1 < n && grid(j + 1) <= k {
                j += 1;
            }
            while j > 0 && grid(j) > k {
                j -= 1;
            }
            grid(j)
        })
        .collect();
    ConductanceField::from_rates(field.lattice().clone(), rates)
}

/// Two parallel edges (red, green) per nearest-neighbour pair.
#[derive(Debug, Clone)]
pub struct DecoratedConductanceField {
    red: Vec<f64>,
    green: Vec<f64>,
    effective: ConductanceField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeColor {
    Red,
    Green,
}

impl fmt::Display for EdgeColor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EdgeColor::Red => "red",
            EdgeColor::Green => "green",
        })
    }
}

impl DecoratedConductanceField {
    pub fn new(lattice: LatticeBox, red: Vec<f64>, green: Vec<f64>) -> Result<Self> {
        for rates in [&red, &green] {
            if rates.len() != lattice.edge_count() {
                return Err(Error::invalid("rates", "one red and one green rate per edge"));
            }
            if let Some((edge, &value)) = rates.iter().enumerate().find(|(_, r)| !(r.is_finite() && **r > 0.0)) {
                return Err(Error::Ellipticity { edge, value });
            }
        }
        let sum = red.iter().zip(&green).map(|(r, g)| r + g).collect();
        let effective = ConductanceField::from_rates(lattice, sum)?;
        Ok(Self { red, green, effective })
    }

    pub fn constant(lattice: LatticeBox, red: f64, green: f64) -> Result<Self> {
        let n = lattice.edge_count();
        Self::new(lattice, vec![red; n], vec![green; n])
    }

    pub fn lattice(&self) -> &LatticeBox {
        self.effective.lattice()
    }
    pub fn red(&self, edge: usize) -> f64 {
        self.red[edge]
    }
    pub fn green(&self, edge: usize) -> f64 {
        self.green[edge]
    }
    pub fn effective(&self) -> &ConductanceField {
        &self.effective
    }
}

/// Parallel rates add: the walk generator on the decorated graph is the
/// conductance Laplacian of the field `red + green`.
pub fn decorated_to_effective(dec: &DecoratedConductanceField) -> ConductanceField {
    dec.effective.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(radius: u32) -> LatticeBox {
        LatticeBox::new(1, radius, Geometry::Absorbing).unwrap()
    }

    #[test]
    fn box_counts() {
        let b = LatticeBox::new(2, 3, Geometry::Absorbing).unwrap();
        assert_eq!(b.site_count(), 49);
        assert_eq!(b.edge_count(), 2 * 7 * 6);
        let p = LatticeBox::new(2, 3, Geometry::Periodic).unwrap();
        assert_eq!(p.edge_count(), 2 * 49);
        assert!(p.neighbors(0).len() == 4);
        // a ring of two sites has a single edge, a single site none
        assert_eq!(LatticeBox::new(1, 0, Geometry::Periodic).unwrap().edge_count(), 0);
    }

    #[test]
    fn coords_roundtrip_and_lexicographic_order() {
        let b = LatticeBox::with_origin(3, 2, Geometry::Absorbing, vec![1, -4, 0]).unwrap();
        let mut prev: Option<Vec<i64>> = None;
        for s in 0..b.site_count() {
            let c = b.coords(s);
            assert_eq!(b.site_of(&c), Some(s));
            if let Some(p) = prev {
                assert!(p < c);
            }
            prev = Some(c);
        }
        assert_eq!(b.site_of(&[1, -4, 3]), None);
        assert_eq!(b.origin_site(), None);
    }

    #[test]
    fn constant_field() {
        let f = generate_field(line(4), &FieldLaw::Constant { kappa: 1.0 }, 0).unwrap();
        assert!(f.rates().iter().all(|&r| r == 1.0));
        assert_eq!(f.support(), &[1.0]);
        assert_eq!(f.total_rate(4), 2.0);
        assert_eq!(f.total_rate(0), 1.0);
    }

    #[test]
    fn rejects_bad_values_and_overlaps() {
        let law = FieldLaw::IidDiscrete {
            values: vec![0.0, 1.0],
            probs: vec![0.5, 0.5],
        };
        assert!(generate_field(line(4), &law, 0).is_err());
        let law = FieldLaw::Clustered {
            values: vec![0.1, 1.0],
            probs: vec![0.5, 0.5],
            pockets: vec![
                PlantedPocket { center: vec![0], radius: 2, value: 0.1 },
                PlantedPocket { center: vec![4], radius: 2, value: 1.0 },
            ],
        };
        assert!(matches!(
            generate_field(line(10), &law, 0),
            Err(Error::OverlappingPockets { first: 0, second: 1 })
        ));
        let law = FieldLaw::Clustered {
            values: vec![0.1, 1.0],
            probs: vec![0.5, 0.5],
            pockets: vec![PlantedPocket { center: vec![8], radius: 3, value: 0.1 }],
        };
        assert!(matches!(generate_field(line(10), &law, 0), Err(Error::PocketOutsideBox { index: 0 })));
    }

    #[test]
    fn planted_pocket_is_found() {
        let law = FieldLaw::Clustered {
            values: vec![0.1, 1.0],
            probs: vec![0.5, 0.5],
            pockets: vec![PlantedPocket { center: vec![0], radius: 3, value: 0.1 }],
        };
        let f = generate_field(line(20), &law, 3).unwrap();
        let spec = verify_clustering(&f, 0.1, 0.05, 3).unwrap().unwrap();
        assert_eq!(spec.pocket.center, vec![0]);
    }

    #[test]
    fn constant_field_clustering() {
        let f = ConductanceField::constant(LatticeBox::new(2, 5, Geometry::Absorbing).unwrap(), 1.0).unwrap();
        for r in 0..=5 {
            let spec = verify_clustering(&f, 1.0, 0.1, r).unwrap().unwrap();
            assert_eq!(spec.pocket.center, vec![0, 0]);
        }
        assert!(verify_clustering(&f, 2.0, 0.1, 2).unwrap().is_none());
    }

    #[test]
    fn discretize_examples() {
        let lat = line(2);
        let f = ConductanceField::from_rates(lat.clone(), vec![0.1, 0.55, 1.0, 0.1]).unwrap();
        let d = discretize_field(&f, 3).unwrap();
        assert_eq!(d.rates()[1], 0.1 + 0.3);
        assert_eq!(d.rates()[0], 0.1);
        assert_eq!(d.rates()[2], 1.0);
        let bin = ConductanceField::from_rates(lat.clone(), vec![0.1, 1.0, 1.0, 0.1]).unwrap();
        assert_eq!(discretize_field(&bin, 1).unwrap().rates(), bin.rates());
        let c = ConductanceField::constant(lat, 0.7).unwrap();
        assert_eq!(discretize_field(&c, 5).unwrap(), c);
    }

    #[test]
    fn decorated_sum() {
        let lat = LatticeBox::new(2, 2, Geometry::Periodic).unwrap();
        let dec = DecoratedConductanceField::constant(lat.clone(), 0.3, 0.5).unwrap();
        let eff = decorated_to_effective(&dec);
        assert!(eff.rates().iter().all(|&r| r == 0.3 + 0.5));
        assert!(DecoratedConductanceField::constant(lat, 0.0, 0.5).is_err());
    }

    #[test]
    fn csv_roundtrip_with_offset_origin() {
        let lat = LatticeBox::with_origin(2, 2, Geometry::Absorbing, vec![3, -1]).unwrap();
        let f = generate_field(
            lat,
            &FieldLaw::IidDiscrete {
                values: vec![0.1, 1.0 / 3.0, 2.0],
                probs: vec![0.2, 0.3, 0.5],
            },
            11,
        )
        .unwrap();
        let text = f.to_csv();
        assert!(text.starts_with("2,2,absorbing\n"));
        let back = ConductanceField::from_csv(&text).unwrap();
        assert_eq!(back, f);
        assert_eq!(back.lattice().origin(), &[3, -1]);
    }

    fn arb_field() -> impl Strategy<Value = ConductanceField> {
        (1usize..3, 1u32..4, proptest::collection::vec(0.05f64..5.0, 1..5), any::<u64>(), any::<bool>()).prop_map(
            |(d, r, values, seed, periodic)| {
                let g = if periodic { Geometry::Periodic } else { Geometry::Absorbing };
                let probs = vec![1.0 / values.len() as f64; values.len()];
                generate_field(LatticeBox::new(d, r, g).unwrap(), &FieldLaw::IidDiscrete { values, probs }, seed).unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn ellipticity_and_support(f in arb_field()) {
            let (c, cap) = f.bounds();
            prop_assert!(f.rates().iter().all(|&r| r >= c && r <= cap));
            prop_assert_eq!(f.support().first().copied(), Some(c));
            let mut seen: Vec<f64> = f.rates().to_vec();
            seen.sort_by(f64::total_cmp);
            seen.dedup();
            prop_assert_eq!(seen.as_slice(), f.support());
        }

        #[test]
        fn discretize_idempotent_and_bounded(f in arb_field(), n in 1u32..12) {
            let d1 = discretize_field(&f, n).unwrap();
            let d2 = discretize_field(&d1, n).unwrap();
            prop_assert_eq!(&d1, &d2);
            prop_assert!(d1.support().len() <= n as usize + 1);
            let h = (f.kappa_max() - f.kappa_min()) / n as f64;
            for (a, b) in f.rates().iter().zip(d1.rates()) {
                prop_assert!(b <= a);
                prop_assert!(a - b <= h * (1.0 + 1e-12));
            }
        }

        #[test]
        fn clustering_matches_naive_scan(seed in any::<u64>(), r in 0u32..3, k in 0usize..2) {
            let lat = LatticeBox::new(2, 4, Geometry::Absorbing).unwrap();
            let values = vec![0.5, 2.0];
            let f = generate_field(lat.clone(), &FieldLaw::IidDiscrete { values: values.clone(), probs: vec![0.8, 0.2] }, seed).unwrap();
            let kappa = values[k];
            let found = verify_clustering(&f, kappa, 0.1, r).unwrap();
            // independent scan over every (center, edge) pair
            let naive = (0..lat.site_count()).any(|s| {
                let c = lat.coords(s);
                if c.iter().any(|v| v.abs() + r as i64 > 4) { return false; }
                lat.edges().iter().enumerate().all(|(e, &(a, b))| {
                    let (ca, cb) = (lat.coords(a), lat.coords(b));
                    let inside = |x: &Vec<i64>| x.iter().zip(&c).all(|(p, q)| (p - q).abs() <= r as i64);
                    !(inside(&ca) && inside(&cb)) || (f.rate(e) - kappa).abs() < 0.1
                })
            });
            prop_assert_eq!(found.is_some(), naive);
            if let Some(spec) = found {
                for e in spec.pocket.edges_in(&lat) {
                    prop_assert!((f.rate(e) - kappa).abs() < 0.1);
                }
            }
        }
    }
}
