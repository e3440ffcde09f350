//! Truncated self-adjoint operators whose top eigenvalue gives the annealed
//! exponents, `λ_p = λ_max / p`.
//!
//! A state is a tuple of components (an environment configuration and the
//! positions of `p` walks, or `p + n` walks). Each component carries a local
//! symmetric generator; the operator is their Kronecker sum plus a diagonal
//! potential. Environments whose generator is reversible with respect to a
//! measure `μ` are symmetrized by the similarity `diag(√μ)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environments::{gibbs_probabilities, ising_rate};
use crate::lattice::{ConductanceField, Geometry, LatticeBox};
use crate::rng::splitmix64;
use crate::{Error, Result};

pub const DEFAULT_MAX_DIM: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Zero outside the box; jumps out of the box kill.
    Dirichlet,
    /// The field's own periodic box.
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub boundary: Boundary,
    /// Radius of the walk box (ignored for periodic, which uses the field box).
    pub radius: u32,
    /// Drop every walk term (the `κ = 0` degenerate operator).
    #[serde(default)]
    pub zero_kinetic: bool,
    /// Drop the potential.
    #[serde(default)]
    pub drop_potential: bool,
    pub max_dim: usize,
}

impl BuildOptions {
    pub fn dirichlet(radius: u32) -> Self {
        Self {
            boundary: Boundary::Dirichlet,
            radius,
            zero_kinetic: false,
            drop_potential: false,
            max_dim: DEFAULT_MAX_DIM,
        }
    }

    pub fn periodic() -> Self {
        Self {
            boundary: Boundary::Periodic,
            ..Self::dirichlet(0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "space", rename_all = "snake_case")]
pub enum StateSpace {
    WalksP {
        walk_box: LatticeBox,
        p: usize,
    },
    WalksPPlusN {
        walk_box: LatticeBox,
        p: usize,
        n: usize,
        rho: f64,
    },
    EnvOccupancy {
        env_box: LatticeBox,
        cap: u32,
        nu: f64,
        potential_cap: u32,
        p: usize,
        walk_box: LatticeBox,
    },
    EnvSpin {
        env_box: LatticeBox,
        beta: f64,
        p: usize,
        walk_box: LatticeBox,
    },
}

/// Symmetric matrix in compressed-row form; both triangles are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseSym {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

const ROW_CHUNK: usize = 1024;

impl SparseSym {
    /// Build from per-row entry lists; entries of a row may repeat.
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let dim = rows.len();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut k = 0;
            while k < row.len() {
                let (c, mut v) = row[k];
                k += 1;
                while k < row.len() && row[k].0 == c {
                    v += row[k].1;
                    k += 1;
                }
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self { dim, row_ptr, cols, vals }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        Self::from_rows(
            rows.iter()
                .map(|r| r.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(c, v)| (c, *v)).collect())
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (self.row_ptr[i]..self.row_ptr[i + 1]).map(move |k| (self.cols[k], self.vals[k]))
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]];
        r.binary_search(&j).map(|k| self.vals[self.row_ptr[i] + k]).unwrap_or(0.0)
    }

    /// `out = H x`; rows are independent so the schedule does not matter.
    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        out.par_chunks_mut(ROW_CHUNK).enumerate().for_each(|(c, chunk)| {
            for (j, o) in chunk.iter_mut().enumerate() {
                let i = c * ROW_CHUNK + j;
                let mut s = 0.0;
                for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                    s += self.vals[k] * x[self.cols[k]];
                }
                *o = s;
            }
        });
    }

    /// `max |H_ij − H_ji|` over stored entries.
    pub fn max_asymmetry(&self) -> f64 {
        (0..self.dim)
            .flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v)))
            .map(|(i, j, v)| (v - self.get(j, i)).abs())
            .fold(0.0, f64::max)
    }

    pub fn quadratic_form(&self, f: &[f64]) -> f64 {
        (0..self.dim).map(|i| f[i] * self.row(i).map(|(j, v)| v * f[j]).sum::<f64>()).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.dim]; self.dim];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    pub state_space: StateSpace,
    pub matrix: SparseSym,
    /// `√μ` per environment state for μ-weighted spaces.
    pub weighting: Option<Vec<f64>>,
    pub p: usize,
    pub warnings: Vec<String>,
}

impl OperatorSpec {
    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    /// JSON header line followed by one `i j value` line per stored entry.
    pub fn to_coo_text(&self) -> String {
        let header = serde_json::json!({
            "state_space": self.state_space,
            "dim": self.dim(),
            "nnz": self.matrix.nnz(),
            "p": self.p,
            "weighting": self.weighting,
        });
        let mut out = header.to_string();
        out.push('\n');
        for i in 0..self.dim() {
            for (j, v) in self.matrix.row(i) {
                out.push_str(&format!("{i} {j} {v}\n"));
            }
        }
        out
    }
}

/// One component of the product state space.
struct Factor {
    size: usize,
    diag: Vec<f64>,
    /// Symmetric off-diagonal entries `(other, value)`.
    trans: Vec<Vec<(usize, f64)>>,
}

impl Factor {
    fn frozen(size: usize) -> Self {
        Self {
            size,
            diag: vec![0.0; size],
            trans: vec![Vec::new(); size],
        }
    }

    fn from_pairs(size: usize, diag: Vec<f64>, pairs: &[(usize, usize, f64)]) -> Self {
        let mut trans = vec![Vec::new(); size];
        for &(a, b, v) in pairs {
            trans[a].push((b, v));
            trans[b].push((a, v));
        }
        Self { size, diag, trans }
    }
}

/// Walk box plus the walk factor of a conductance field on it.
fn walk_factor(field: &ConductanceField, opts: &BuildOptions) -> Result<(LatticeBox, Factor)> {
    match opts.boundary {
        Boundary::Periodic => {
            let l = field.lattice();
            if l.geometry() != Geometry::Periodic {
                return Err(Error::invalid("boundary", "periodic operators need a field on a periodic box"));
            }
            let n = l.site_count();
            let diag = (0..n).map(|x| -field.total_rate(x)).collect();
            let pairs: Vec<_> = l.edges().iter().enumerate().map(|(e, &(a, b))| (a, b, field.rate(e))).collect();
            Ok((l.clone(), Factor::from_pairs(n, diag, &pairs)))
        }
        Boundary::Dirichlet => {
            let walk_box = LatticeBox::new(field.lattice().dim(), opts.radius, Geometry::Absorbing)?;
            let fl = field.lattice();
            let single = (field.support().len() == 1).then(|| field.support()[0]);
            let rate = |a: &[i64], b: &[i64]| -> Result<f64> {
                if fl.contains(a) && fl.contains(b) {
                    if let (Some(x), Some(y)) = (fl.site_of(a), fl.site_of(b)) {
                        if let Some(r) = field.rate_between(x, y) {
                            return Ok(r);
                        }
                    }
                }
                single.ok_or_else(|| Error::invalid("field", "the field must extend beyond the truncation box"))
            };
            dirichlet_factor(&walk_box, rate).map(|f| (walk_box, f))
        }
    }
}

fn dirichlet_factor(walk_box: &LatticeBox, rate: impl Fn(&[i64], &[i64]) -> Result<f64>) -> Result<Factor> {
    let n = walk_box.site_count();
    let d = walk_box.dim();
    let mut diag = vec![0.0; n];
    let mut pairs = Vec::new();
    for x in 0..n {
        let c = walk_box.coords(x);
        for axis in 0..d {
            for step in [-1i64, 1] {
                let mut y = c.clone();
                y[axis] += step;
                let r = rate(&c, &y)?;
                diag[x] -= r;
                if let Some(s) = walk_box.contains(&y).then(|| walk_box.site_of(&y)).flatten() {
                    if s > x {
                        pairs.push((x, s, r));
                    }
                }
            }
        }
    }
    Ok(Factor::from_pairs(n, diag, &pairs))
}

/// Rate-`rho` simple walk on the same walk box.
fn simple_factor(walk_box: &LatticeBox, rho: f64, boundary: Boundary) -> Result<Factor> {
    match boundary {
        Boundary::Periodic => {
            let n = walk_box.site_count();
            let diag = (0..n).map(|x| -rho * walk_box.neighbors(x).len() as f64).collect();
            let pairs: Vec<_> = walk_box.edges().iter().map(|&(a, b)| (a, b, rho)).collect();
            Ok(Factor::from_pairs(n, diag, &pairs))
        }
        Boundary::Dirichlet => dirichlet_factor(walk_box, |_, _| Ok(rho)),
    }
}

/// Environment site of every walk-box site.
fn env_map(walk_box: &LatticeBox, env_box: &LatticeBox) -> Result<Vec<usize>> {
    if walk_box.dim() != env_box.dim() {
        return Err(Error::BoxMismatch);
    }
    (0..walk_box.site_count())
        .map(|x| {
            let c = walk_box.coords(x);
            // periodic environments wrap the walk box onto the ring
            let inside = env_box.geometry() == Geometry::Periodic || env_box.contains(&c);
            inside.then(|| env_box.site_of(&c)).flatten().ok_or(Error::SiteOutsideBox(c))
        })
        .collect()
}

fn checked_dim(sizes: &[usize], max_dim: usize) -> Result<usize> {
    let dim = sizes
        .iter()
        .try_fold(1usize, |acc, &s| acc.checked_mul(s))
        .unwrap_or(usize::MAX);
    if dim > max_dim || dim == 0 {
        return Err(Error::SizeBudget { dim, budget: max_dim });
    }
    Ok(dim)
}

fn assemble(factors: &[Factor], potential: impl Fn(&[usize]) -> f64 + Sync, max_dim: usize) -> Result<SparseSym> {
    let sizes: Vec<usize> = factors.iter().map(|f| f.size).collect();
    let dim = checked_dim(&sizes, max_dim)?;
    // the last factor varies fastest
    let mut strides = vec![1usize; factors.len()];
    for k in (0..factors.len().saturating_sub(1)).rev() {
        strides[k] = strides[k + 1] * sizes[k + 1];
    }
    let rows: Vec<Vec<(usize, f64)>> = (0..dim)
        .into_par_iter()
        .map(|s| {
            let comps: Vec<usize> = strides.iter().zip(&sizes).map(|(st, sz)| (s / st) % sz).collect();
            let mut diag = potential(&comps);
            let mut row = Vec::new();
            for (k, f) in factors.iter().enumerate() {
                let c = comps[k];
                diag += f.diag[c];
                for &(c2, v) in &f.trans[c] {
                    let s2 = s + c2 * strides[k] - c * strides[k];
                    row.push((s2, v));
                }
            }
            row.push((s, diag));
            row
        })
        .collect();
    Ok(SparseSym::from_rows(rows))
}

/// `Σ_{i<j} δ(x_i, x_j) + Σ_i Δ^K_i` on `box^p`.
pub fn build_wn_operator(field: &ConductanceField, p: usize, opts: &BuildOptions) -> Result<OperatorSpec> {
    if p == 0 {
        return Err(Error::invalid("p", "must be at least 1"));
    }
    let (walk_box, wf) = walk_factor(field, opts)?;
    let n = walk_box.site_count();
    checked_dim(&vec![n; p], opts.max_dim)?;
    let factors: Vec<Factor> = (0..p)
        .map(|_| if opts.zero_kinetic { Factor::frozen(n) } else { Factor { size: n, diag: wf.diag.clone(), trans: wf.trans.clone() } })
        .collect();
    let drop = opts.drop_potential;
    let matrix = assemble(
        &factors,
        |x| {
            if drop {
                return 0.0;
            }
            let mut v = 0.0;
            for i in 0..x.len() {
                for j in i + 1..x.len() {
                    if x[i] == x[j] {
                        v += 1.0;
                    }
                }
            }
            v
        },
        opts.max_dim,
    )?;
    Ok(OperatorSpec {
        state_space: StateSpace::WalksP { walk_box, p },
        matrix,
        weighting: None,
        p,
        warnings: Vec::new(),
    })
}

/// `Σ_{i,j} δ(x_i, y_j) + Σ_i Δ^K_i + ρ Σ_j Δ_j` on `box^{p+n}`.
pub fn build_firw_operator(field: &ConductanceField, p: usize, n: usize, rho: f64, opts: &BuildOptions) -> Result<OperatorSpec> {
    if p == 0 {
        return Err(Error::invalid("p", "must be at least 1"));
    }
    if !(rho >= 0.0 && rho.is_finite()) {
        return Err(Error::invalid("rho", "must be finite and non-negative"));
    }
    let (walk_box, wf) = walk_factor(field, opts)?;
    let sites = walk_box.site_count();
    checked_dim(&vec![sites; p + n], opts.max_dim)?;
    let sf = simple_factor(&walk_box, rho, opts.boundary)?;
    let mut factors = Vec::with_capacity(p + n);
    for _ in 0..p {
        factors.push(if opts.zero_kinetic { Factor::frozen(sites) } else { Factor { size: sites, diag: wf.diag.clone(), trans: wf.trans.clone() } });
    }
    for _ in 0..n {
        factors.push(Factor { size: sites, diag: sf.diag.clone(), trans: sf.trans.clone() });
    }
    let drop = opts.drop_potential;
    let matrix = assemble(
        &factors,
        |s| {
            if drop {
                return 0.0;
            }
            let (x, y) = s.split_at(p);
            x.iter().map(|a| y.iter().filter(|b| *b == a).count() as f64).sum()
        },
        opts.max_dim,
    )?;
    Ok(OperatorSpec {
        state_space: StateSpace::WalksPPlusN { walk_box, p, n, rho },
        matrix,
        weighting: None,
        p,
        warnings: Vec::new(),
    })
}

fn decode_occupancy(mut idx: usize, sites: usize, base: usize) -> Vec<u32> {
    let mut eta = vec![0u32; sites];
    for v in eta.iter_mut() {
        *v = (idx % base) as u32;
        idx /= base;
    }
    eta
}

/// Particle-hopping generator on `{0..M}^{env_box}` (rate 1 per particle per
/// neighbour, moves onto a full site suppressed) plus `V_N` and the walks.
#[allow(clippy::too_many_arguments)]
pub fn build_iirw_operator(
    field: &ConductanceField,
    p: usize,
    nu: f64,
    potential_cap: u32,
    cap: u32,
    env_box: &LatticeBox,
    opts: &BuildOptions,
) -> Result<OperatorSpec> {
    if p == 0 {
        return Err(Error::invalid("p", "must be at least 1"));
    }
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::invalid("nu", "must be positive"));
    }
    let (walk_box, wf) = walk_factor(field, opts)?;
    let map = env_map(&walk_box, env_box)?;
    let m = env_box.site_count();
    let base = cap as usize + 1;
    let env_states = base.checked_pow(m as u32).unwrap_or(usize::MAX);
    let mut sizes = vec![walk_box.site_count(); p];
    sizes.push(env_states);
    checked_dim(&sizes, opts.max_dim)?;
    let mut warnings = Vec::new();
    if cap < potential_cap {
        warnings.push(format!("occupancy cap {cap} is below the potential cap {potential_cap}"));
    }
    // truncated Poisson weights, renormalized per site
    let site_w: Vec<f64> = {
        let mut w = Vec::with_capacity(base);
        let mut term = 1.0;
        for k in 0..base {
            if k > 0 {
                term *= nu / k as f64;
            }
            w.push(term);
        }
        let z: f64 = w.iter().sum();
        w.into_iter().map(|v| v / z).collect()
    };
    let mu: Vec<f64> = (0..env_states)
        .map(|i| decode_occupancy(i, m, base).iter().map(|&k| site_w[k as usize]).product())
        .collect();
    let mut diag = vec![0.0; env_states];
    let mut pairs = Vec::new();
    let pow: Vec<usize> = (0..m).map(|i| base.pow(i as u32)).collect();
    for (i, d) in diag.iter_mut().enumerate() {
        let eta = decode_occupancy(i, m, base);
        for a in 0..m {
            if eta[a] == 0 {
                continue;
            }
            for &(b, _) in env_box.neighbors(a) {
                if eta[b] >= cap {
                    continue;
                }
                let rate = eta[a] as f64;
                *d -= rate;
                let j = i - pow[a] + pow[b];
                if j > i {
                    pairs.push((i, j, (mu[i] / mu[j]).sqrt() * rate));
                }
            }
        }
    }
    let env = Factor::from_pairs(env_states, diag, &pairs);
    let mut factors = vec![env];
    for _ in 0..p {
        factors.push(if opts.zero_kinetic { Factor::frozen(walk_box.site_count()) } else { Factor { size: wf.size, diag: wf.diag.clone(), trans: wf.trans.clone() } });
    }
    let drop = opts.drop_potential;
    let matrix = assemble(
        &factors,
        |s| {
            if drop {
                return 0.0;
            }
            let eta = s[0];
            s[1..]
                .iter()
                .map(|&x| ((eta / pow[map[x]]) % base).min(potential_cap as usize) as f64)
                .sum()
        },
        opts.max_dim,
    )?;
    Ok(OperatorSpec {
        state_space: StateSpace::EnvOccupancy {
            env_box: env_box.clone(),
            cap,
            nu,
            potential_cap,
            p,
            walk_box,
        },
        matrix,
        weighting: Some(mu.iter().map(|v| v.sqrt()).collect()),
        p,
        warnings,
    })
}

/// Glauber generator under the exact Gibbs measure plus `Σ_i η(x_i)` and the
/// walks.
pub fn build_spinflip_operator(
    field: &ConductanceField,
    p: usize,
    beta: f64,
    env_box: &LatticeBox,
    opts: &BuildOptions,
) -> Result<OperatorSpec> {
    if p == 0 {
        return Err(Error::invalid("p", "must be at least 1"));
    }
    let (walk_box, wf) = walk_factor(field, opts)?;
    let map = env_map(&walk_box, env_box)?;
    let m = env_box.site_count();
    let mut sizes = vec![walk_box.site_count(); p];
    sizes.push(1usize.checked_shl(m as u32).unwrap_or(usize::MAX));
    checked_dim(&sizes, opts.max_dim)?;
    let pi = gibbs_probabilities(env_box, beta)?;
    let states = pi.len();
    let mut diag = vec![0.0; states];
    let mut pairs = Vec::new();
    for (i, d) in diag.iter_mut().enumerate() {
        let up: Vec<bool> = (0..m).map(|k| i >> k & 1 == 1).collect();
        for y in 0..m {
            let c = ising_rate(env_box, &up, beta, y);
            *d -= c;
            let j = i ^ (1 << y);
            if j > i {
                pairs.push((i, j, (pi[i] / pi[j]).sqrt() * c));
            }
        }
    }
    let env = Factor::from_pairs(states, diag, &pairs);
    let mut factors = vec![env];
    for _ in 0..p {
        factors.push(if opts.zero_kinetic { Factor::frozen(walk_box.site_count()) } else { Factor { size: wf.size, diag: wf.diag.clone(), trans: wf.trans.clone() } });
    }
    let drop = opts.drop_potential;
    let matrix = assemble(
        &factors,
        |s| {
            if drop {
                return 0.0;
            }
            s[1..].iter().filter(|&&x| s[0] >> map[x] & 1 == 1).count() as f64
        },
        opts.max_dim,
    )?;
    Ok(OperatorSpec {
        state_space: StateSpace::EnvSpin {
            env_box: env_box.clone(),
            beta,
            p,
            walk_box,
        },
        matrix,
        weighting: Some(pi.iter().map(|v| v.sqrt()).collect()),
        p,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenResult {
    pub lambda_max: f64,
    pub lambda_p: f64,
    /// Matrix-vector products used.
    pub iterations: usize,
    /// `‖Hv − λv‖ / ‖v‖`.
    pub residual: f64,
    pub converged: bool,
    #[serde(skip)]
    pub eigenvector: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Deterministic pseudo-random direction number `k`.
fn fresh_direction(dim: usize, k: usize) -> Vec<f64> {
    (0..dim)
        .map(|i| {
            let h = splitmix64((i as u64) ^ splitmix64(k as u64 + 1));
            (h >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
        .collect()
}

const KRYLOV_DIM: usize = 60;

/// Largest eigenvalue by explicitly restarted Lanczos with full
/// reorthogonalization.
///
/// The start vector is the normalized all-ones vector. If the iteration finds
/// an invariant subspace (for instance because the start vector is orthogonal
/// to the top eigenspace) it continues with fixed pseudo-random directions,
/// so the whole space is eventually explored.
pub fn top_eigenvalue(op: &OperatorSpec, tol: f64, max_iter: usize) -> EigenResult {
    let h = &op.matrix;
    let n = h.dim();
    let m = n.min(KRYLOV_DIM);
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut iterations = 0;
    let mut fresh = 0;
    let mut best = EigenResult {
        lambda_max: f64::NEG_INFINITY,
        lambda_p: f64::NEG_INFINITY,
        iterations: 0,
        residual: f64::INFINITY,
        converged: false,
        eigenvector: v.clone(),
    };
    let mut w = vec![0.0; n];
    loop {
        let mut basis: Vec<Vec<f64>> = vec![v.clone()];
        let mut alpha = Vec::with_capacity(m);
        let mut beta: Vec<f64> = Vec::with_capacity(m);
        let mut exhausted = false;
        for j in 0..m {
            h.matvec(&basis[j], &mut w);
            iterations += 1;
            let a = dot(&w, &basis[j]);
            alpha.push(a);
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(&w, q);
                    w.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
                }
            }
            if j + 1 == m {
                break;
            }
            let mut b = normalize(&mut w);
            let scale = a.abs().max(1.0);
            if b < 1e-10 * scale {
                // invariant subspace: continue with a fresh orthogonal direction
                let mut found = false;
                for _ in 0..4 {
                    let mut f = fresh_direction(n, fresh);
                    fresh += 1;
                    for _ in 0..2 {
                        for q in &basis {
                            let c = dot(&f, q);
                            f.iter_mut().zip(q).for_each(|(x, y)| *x -= c * y);
                        }
                    }
                    if normalize(&mut f) > 1e-8 {
                        w = f;
                        found = true;
                        break;
                    }
                }
                if !found {
                    exhausted = true;
                    break;
                }
                b = 0.0;
            }
            beta.push(b);
            basis.push(w.clone());
        }
        let k = alpha.len();
        let t = nalgebra::DMatrix::from_fn(k, k, |i, j| {
            if i == j {
                alpha[i]
            } else if i + 1 == j {
                beta[i]
            } else if j + 1 == i {
                beta[j]
            } else {
                0.0
            }
        });
        let eig = nalgebra::SymmetricEigen::new(t);
        let (top, _) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
        let s = eig.eigenvectors.column(top);
        let mut ritz = vec![0.0; n];
        for (i, q) in basis.iter().take(k).enumerate() {
            ritz.iter_mut().zip(q).for_each(|(x, y)| *x += s[i] * y);
        }
        normalize(&mut ritz);
        h.matvec(&ritz, &mut w);
        iterations += 1;
        let lambda = dot(&ritz, &w);
        let residual = w.iter().zip(&ritz).map(|(a, b)| (a - lambda * b).powi(2)).sum::<f64>().sqrt();
        let converged = residual <= tol * lambda.abs().max(1.0) || (exhausted || k == n) && residual <= 1e-8 * lambda.abs().max(1.0);
        if residual < best.residual || converged {
            best = EigenResult {
                lambda_max: lambda,
                lambda_p: lambda / op.p as f64,
                iterations,
                residual,
                converged,
                eigenvector: ritz.clone(),
            };
        }
        best.iterations = iterations;
        if converged || iterations >= max_iter {
            return best;
        }
        v = ritz;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub kappa: f64,
    pub lambda_p: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub points: Vec<SweepPoint>,
    /// Divided differences `Δλ/Δκ` between consecutive grid points.
    pub first_differences: Vec<f64>,
    /// Second divided differences (convexity when all are ≥ 0).
    pub second_differences: Vec<f64>,
    /// `"non-increasing"`, `"non-decreasing"` or `"mixed"`.
    pub direction: String,
}

impl Sweep {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kappa,lambda_p,residual\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{}\n", p.kappa, p.lambda_p, p.residual));
        }
        out
    }
}

/// `λ_p` over an increasing κ grid, with the same truncation for every point.
pub fn kappa_sweep<B>(builder: B, kappas: &[f64], tol: f64, max_iter: usize) -> Result<Sweep>
where
    B: Fn(f64) -> Result<OperatorSpec>,
{
    if kappas.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("kappa_grid", "must be strictly increasing"));
    }
    let points = kappas
        .iter()
        .map(|&kappa| {
            let r = top_eigenvalue(&builder(kappa)?, tol, max_iter);
            Ok(SweepPoint {
                kappa,
                lambda_p: r.lambda_p,
                residual: r.residual,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let first: Vec<f64> = points
        .windows(2)
        .map(|w| (w[1].lambda_p - w[0].lambda_p) / (w[1].kappa - w[0].kappa))
        .collect();
    let second: Vec<f64> = (0..first.len().saturating_sub(1))
        .map(|i| 2.0 * (first[i + 1] - first[i]) / (points[i + 2].kappa - points[i].kappa))
        .collect();
    let direction = if first.iter().all(|&d| d <= 0.0) {
        "non-increasing"
    } else if first.iter().all(|&d| d >= 0.0) {
        "non-decreasing"
    } else {
        "mixed"
    };
    Ok(Sweep {
        points,
        first_differences: first,
        second_differences: second,
        direction: direction.into(),
    })
}
