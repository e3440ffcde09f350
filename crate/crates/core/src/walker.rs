//! Continuous-time conductance walks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::lattice::{join_coords, ConductanceField, DecoratedConductanceField, EdgeColor, LatticeBox, Region};
use crate::rng::{self, Domain};
use crate::{Error, Result};

/// Piecewise-constant trajectory on `[0, horizon]`.
///
/// `positions[k]` is occupied on `[jump_times[k-1], jump_times[k])`, with
/// `positions[0] == start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkPath {
    pub start: usize,
    pub jump_times: Vec<f64>,
    pub positions: Vec<usize>,
    pub edges: Vec<usize>,
    pub horizon: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<EdgeColor>>,
}

impl WalkPath {
    pub fn stationary(site: usize, horizon: f64) -> Self {
        Self {
            start: site,
            jump_times: Vec::new(),
            positions: vec![site],
            edges: Vec::new(),
            horizon,
            labels: None,
        }
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }

    pub fn end(&self) -> usize {
        *self.positions.last().unwrap()
    }

    /// Position at time `t` (right-continuous).
    pub fn position_at(&self, t: f64) -> usize {
        let k = self.jump_times.partition_point(|&s| s <= t);
        self.positions[k]
    }

    /// `(from, to, site)` holding intervals covering `[0, horizon]`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        (0..self.positions.len()).map(move |k| {
            let a = if k == 0 { 0.0 } else { self.jump_times[k - 1] };
            let b = self.jump_times.get(k).copied().unwrap_or(self.horizon);
            (a, b, self.positions[k])
        })
    }

    /// Rows `jump_time,site(,edge_label)`, starting with the time-0 position.
    pub fn to_csv(&self, lattice: &LatticeBox) -> String {
        let c = |s: usize| join_coords(&lattice.coords(s), ":");
        let mut out = String::from(if self.labels.is_some() {
            "jump_time,site,edge_label\n"
        } else {
            "jump_time,site\n"
        });
        out.push_str(&format!("0,{}\n", c(self.start)));
        for (k, t) in self.jump_times.iter().enumerate() {
            out.push_str(&format!("{t},{}", c(self.positions[k + 1])));
            if let Some(labels) = &self.labels {
                out.push_str(&format!(",{}", labels[k]));
            }
            out.push('\n');
        }
        out
    }
}

/// Simulate `X^K` on `[0, horizon]` from `start`, drawing from `rng`.
pub fn simulate_path_with<R: Rng>(field: &ConductanceField, start: usize, horizon: f64, rng: &mut R) -> WalkPath {
    let lattice = field.lattice();
    let mut path = WalkPath::stationary(start, horizon);
    let mut x = start;
    let mut t = 0.0;
    loop {
        let total = field.total_rate(x);
        if total <= 0.0 {
            break;
        }
        t += rng::exponential(rng, total);
        if t > horizon {
            break;
        }
        let nbrs = lattice.neighbors(x);
        let mut u = rng.random::<f64>() * total;
        let mut pick = nbrs[nbrs.len() - 1];
        for &(y, e) in nbrs {
            let r = field.rate(e);
            if u < r {
                pick = (y, e);
                break;
            }
            u -= r;
        }
        x = pick.0;
        path.jump_times.push(t);
        path.positions.push(x);
        path.edges.push(pick.1);
    }
    path
}

/// Path number `index` of the walk family keyed by `seed`.
pub fn simulate_path(field: &ConductanceField, start: usize, horizon: f64, seed: u64, index: u64) -> Result<WalkPath> {
    if start >= field.lattice().site_count() {
        return Err(Error::invalid("start", "site outside the box"));
    }
    if !(horizon >= 0.0) {
        return Err(Error::invalid("horizon", "must be non-negative"));
    }
    let mut rng = rng::stream(seed, Domain::Walk, index);
    Ok(simulate_path_with(field, start, horizon, &mut rng))
}

/// Walk on the decorated graph: one merged clock per pair plus a red/green
/// label drawn from a separate stream, so the unlabelled path coincides with
/// the path on the effective field for the same seed.
pub fn simulate_decorated_path(
    field: &DecoratedConductanceField,
    start: usize,
    horizon: f64,
    seed: u64,
    index: u64,
) -> Result<WalkPath> {
    let mut path = simulate_path(field.effective(), start, horizon, seed, index)?;
    let mut rng = rng::stream(seed, Domain::Label, index);
    let labels = path
        .edges
        .iter()
        .map(|&e| {
            let red = field.red(e);
            if rng.random::<f64>() * (red + field.green(e)) < red {
                EdgeColor::Red
            } else {
                EdgeColor::Green
            }
        })
        .collect();
    path.labels = Some(labels);
    Ok(path)
}

/// True iff every visited site lies in `region`.
pub fn confinement_indicator<G: Region + ?Sized>(path: &WalkPath, lattice: &LatticeBox, region: &G) -> bool {
    let mut c = vec![0; lattice.dim()];
    path.positions.iter().all(|&s| {
        lattice.coords_into(s, &mut c);
        region.contains(&c)
    })
}

/// Total time two paths spend on the same site.
pub fn intersection_time(a: &WalkPath, b: &WalkPath) -> f64 {
    let horizon = a.horizon.min(b.horizon);
    let (mut i, mut j) = (0usize, 0usize);
    let mut t = 0.0;
    let mut total = 0.0;
    while t < horizon {
        let na = a.jump_times.get(i).copied().unwrap_or(f64::INFINITY);
        let nb = b.jump_times.get(j).copied().unwrap_or(f64::INFINITY);
        let next = na.min(nb).min(horizon);
        if a.positions[i] == b.positions[j] {
            total += next - t;
        }
        t = next;
        if na <= t {
            i += 1;
        }
        if nb <= t {
            j += 1;
        }
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GirsanovWeight {
    pub log_weight: f64,
    pub jump_term: f64,
    pub time_term: f64,
}

/// Log Radon-Nikodym derivative of the `to`-walk law against the `from`-walk
/// law along `path`.
pub fn girsanov_weight(path: &WalkPath, from: &ConductanceField, to: &ConductanceField) -> Result<GirsanovWeight> {
    if from.lattice() != to.lattice() {
        return Err(Error::BoxMismatch);
    }
    let jump_term: f64 = path.edges.iter().map(|&e| (to.rate(e) / from.rate(e)).ln()).sum();
    let time_term: f64 = -path
        .segments()
        .map(|(a, b, x)| (b - a) * (to.total_rate(x) - from.total_rate(x)))
        .sum::<f64>();
    Ok(GirsanovWeight {
        log_weight: jump_term + time_term,
        jump_term,
        time_term,
    })
}

/// Pathwise upper bound on the compensator term when `to` is the `n`-level
/// discretization of `from`: `2d T (κ* − κ_*) / n`.
pub fn discretization_time_bound(from: &ConductanceField, n: u32, horizon: f64) -> f64 {
    let d = from.lattice().dim() as f64;
    2.0 * d * horizon * (from.kappa_max() - from.kappa_min()) / n as f64
}
