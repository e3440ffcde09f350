//! Feynman-Kac estimators for `∂u = Δ^K u + ξu`.
//!
//! Annealed moments are Monte Carlo averages of path functionals of `p`
//! conductance walks; quenched solutions integrate the PDE for one frozen
//! realization of the environment.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environments::{white_noise_increments, EnvConfig, EnvKind, EnvTrajectory, EventKind};
use crate::lattice::{ConductanceField, Geometry, LatticeBox, Pocket};
use crate::lyapunov::{self, LyapunovEstimate};
use crate::rng::{self, Domain};
use crate::stats::{par_log_mean, LogMean};
use crate::walker::{confinement_indicator, intersection_time, simulate_path, simulate_path_with, WalkPath};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    /// `u(x, 0) = δ_0(x)`.
    Delta0,
    /// `u(x, 0) = 1`.
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub p: usize,
    pub horizon: f64,
    pub replicas: u64,
    pub seed: u64,
    pub initial: Initial,
    /// Multiply the integrand by `1{X_i[0, T] ⊂ pocket}` for every `i`.
    #[serde(default)]
    pub pocket: Option<Pocket>,
}

impl MomentConfig {
    pub fn new(p: usize, horizon: f64, replicas: u64, seed: u64) -> Self {
        Self {
            p,
            horizon,
            replicas,
            seed,
            initial: Initial::Ones,
            pocket: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.p == 0 {
            return Err(Error::invalid("p", "must be at least 1"));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", "must be finite and non-negative"));
        }
        if self.replicas == 0 {
            return Err(Error::invalid("replicas", "must be positive"));
        }
        Ok(())
    }
}

/// Options for the `w`-equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WOptions {
    /// Radius of the zero-boundary box the equation is solved on.
    pub radius: u32,
    pub dt: f64,
    #[serde(default)]
    pub keep_grid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dynamics", rename_all = "snake_case")]
pub enum AnnealedDynamics {
    WhiteNoise,
    FiniteRw { n: usize, rho: f64 },
    InfiniteRw { nu: f64, w: WOptions },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub p: usize,
    pub t: f64,
    /// `log` of the estimate of `E[u(0,t)^p]`.
    pub log_value: f64,
    /// Standard error of `log_value` (first order).
    pub std_error: f64,
    pub replicas: u64,
    pub confined: Option<Pocket>,
    pub initial: Initial,
    pub seed: u64,
    #[serde(default)]
    pub divergence_warning: bool,
}

impl MomentEstimate {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }

    /// `(1/(p t)) log value`.
    pub fn exponent(&self) -> f64 {
        self.log_value / (self.p as f64 * self.t)
    }

    pub const CSV_HEADER: &'static str = "p,t,log_moment,std_error,replicas,confined_radius";

    pub fn csv_row(&self) -> String {
        let r = self.confined.as_ref().map(|p| p.radius.to_string()).unwrap_or_default();
        format!("{},{},{},{},{},{}", self.p, self.t, self.log_value, self.std_error, self.replicas, r)
    }
}

fn origin_of(lattice: &LatticeBox) -> Result<usize> {
    lattice
        .origin_site()
        .ok_or_else(|| Error::SiteOutsideBox(vec![0; lattice.dim()]))
}

fn walks(field: &ConductanceField, cfg: &MomentConfig, replica: u64) -> Result<Vec<WalkPath>> {
    let o = origin_of(field.lattice())?;
    let p = cfg.p as u64;
    (0..p)
        .map(|i| simulate_path(field, o, cfg.horizon, cfg.seed, replica * p + i))
        .collect()
}

/// `log` of the indicator part: initial condition and confinement.
fn indicator_log(field: &ConductanceField, cfg: &MomentConfig, paths: &[WalkPath], origin: usize) -> f64 {
    let lattice = field.lattice();
    let ok = paths.iter().all(|w| {
        (cfg.initial == Initial::Ones || w.end() == origin)
            && cfg.pocket.as_ref().is_none_or(|pk| confinement_indicator(w, lattice, pk))
    });
    if ok {
        0.0
    } else {
        f64::NEG_INFINITY
    }
}

/// `log` of the Feynman-Kac integrand for replica `replica`.
pub fn annealed_log_integrand(
    field: &ConductanceField,
    dynamics: &AnnealedDynamics,
    cfg: &MomentConfig,
    replica: u64,
) -> Result<f64> {
    let origin = origin_of(field.lattice())?;
    let paths = walks(field, cfg, replica)?;
    let ind = indicator_log(field, cfg, &paths, origin);
    if ind == f64::NEG_INFINITY {
        return Ok(ind);
    }
    let potential = match *dynamics {
        AnnealedDynamics::WhiteNoise => {
            let mut s = 0.0;
            for i in 0..paths.len() {
                for j in i + 1..paths.len() {
                    s += intersection_time(&paths[i], &paths[j]);
                }
            }
            s
        }
        AnnealedDynamics::FiniteRw { n, rho } => {
            let env_field = ConductanceField::constant(field.lattice().clone(), rho)?;
            let mut rng = rng::stream(cfg.seed, Domain::EnvWalk, replica);
            let mut s = 0.0;
            for _ in 0..n {
                let y = simulate_path_with(&env_field, origin, cfg.horizon, &mut rng);
                s += paths.iter().map(|x| intersection_time(x, &y)).sum::<f64>();
            }
            s
        }
        AnnealedDynamics::InfiniteRw { nu, w } => {
            // The Poisson cloud integrates out into the w-equation driven by
            // the time-reversed walks.
            let reversed: Vec<WalkPath> = paths.iter().map(reverse_path).collect();
            let sol = solve_w_along_path(&reversed, field.lattice(), cfg.horizon, &w)?;
            nu * (cfg.p as f64 * cfg.horizon + sol.path_integrals.iter().sum::<f64>())
        }
    };
    Ok(potential + ind)
}

/// Monte Carlo estimate of `E[u(0, T)^p]`.
pub fn annealed_moment(
    field: &ConductanceField,
    dynamics: &AnnealedDynamics,
    cfg: &MomentConfig,
) -> Result<MomentEstimate> {
    cfg.validate()?;
    origin_of(field.lattice())?;
    if let AnnealedDynamics::FiniteRw { rho, .. } = dynamics {
        if !(*rho > 0.0) {
            return Err(Error::invalid("rho", "must be positive"));
        }
    }
    let mut divergence_warning = false;
    if let AnnealedDynamics::InfiniteRw { nu, w } = dynamics {
        if !(*nu > 0.0) {
            return Err(Error::invalid("nu", "must be positive"));
        }
        w_stability(field.lattice().dim(), cfg.p, w.dt)?;
        let d = field.lattice().dim();
        divergence_warning = d <= 2 || cfg.p as f64 * green_function(d, 16)?.value.unwrap_or(f64::INFINITY) >= 1.0;
    }
    // errors inside replicas are ruled out by the checks above
    let acc: LogMean = par_log_mean(cfg.replicas, |i| {
        annealed_log_integrand(field, dynamics, cfg, i).unwrap_or(f64::NAN)
    });
    Ok(MomentEstimate {
        p: cfg.p,
        t: cfg.horizon,
        log_value: acc.log_mean(),
        std_error: acc.relative_std_error(),
        replicas: cfg.replicas,
        confined: cfg.pocket.clone(),
        initial: cfg.initial,
        seed: cfg.seed,
        divergence_warning,
    })
}

pub fn moment_white_noise(field: &ConductanceField, cfg: &MomentConfig) -> Result<MomentEstimate> {
    annealed_moment(field, &AnnealedDynamics::WhiteNoise, cfg)
}

pub fn moment_finite_rw(field: &ConductanceField, n: usize, rho: f64, cfg: &MomentConfig) -> Result<MomentEstimate> {
    annealed_moment(field, &AnnealedDynamics::FiniteRw { n, rho }, cfg)
}

pub fn moment_infinite_rw(field: &ConductanceField, nu: f64, w: WOptions, cfg: &MomentConfig) -> Result<MomentEstimate> {
    annealed_moment(field, &AnnealedDynamics::InfiniteRw { nu, w }, cfg)
}

/// `s ↦ X(T − s)`, right-continuous.
pub fn reverse_path(path: &WalkPath) -> WalkPath {
    let t = path.horizon;
    let mut positions = path.positions.clone();
    positions.reverse();
    let mut edges = path.edges.clone();
    edges.reverse();
    let jump_times = path.jump_times.iter().rev().map(|s| t - s).collect();
    WalkPath {
        start: positions[0],
        jump_times,
        positions,
        edges,
        horizon: t,
        labels: path.labels.as_ref().map(|l| l.iter().rev().copied().collect()),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WSolution {
    pub lattice: LatticeBox,
    pub dt: f64,
    pub times: Vec<f64>,
    /// `w(0, t_k)`.
    pub origin_trace: Vec<f64>,
    /// `∫_0^T w(X_i(s), s) ds` for every source path.
    pub path_integrals: Vec<f64>,
    pub final_w: Vec<f64>,
    pub min_value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<Vec<Vec<f64>>>,
}

fn w_stability(d: usize, p: usize, dt: f64) -> Result<()> {
    let bound = (2 * d + p) as f64;
    if !(dt > 0.0 && dt * bound < 1.0) {
        return Err(Error::Stability {
            dt,
            suggested: 0.5 / bound,
        });
    }
    Ok(())
}

/// Explicit Euler for `∂w = Δw + Σ_i δ_{X_i(t)} (w + 1)`, `w(·, 0) = 0`, on a
/// zero-boundary box; `Δ` has rate 1 per edge.
pub fn solve_w_along_path(
    paths: &[WalkPath],
    path_lattice: &LatticeBox,
    horizon: f64,
    opts: &WOptions,
) -> Result<WSolution> {
    let d = path_lattice.dim();
    w_stability(d, paths.len(), opts.dt)?;
    let lattice = LatticeBox::new(d, opts.radius, Geometry::Absorbing)?;
    let n = lattice.site_count();
    let origin = origin_of(&lattice)?;
    let steps = (horizon / opts.dt).ceil() as usize;
    let dt = if steps > 0 { horizon / steps as f64 } else { opts.dt };
    // map every site a path visits into the w box once
    let mut coords = vec![0i64; d];
    let mapped: Vec<Vec<Option<usize>>> = paths
        .iter()
        .map(|p| {
            p.positions
                .iter()
                .map(|&s| {
                    path_lattice.coords_into(s, &mut coords);
                    lattice.contains(&coords).then(|| lattice.site_of(&coords)).flatten()
                })
                .collect()
        })
        .collect();
    let mut cursor = vec![0usize; paths.len()];
    let mut w = vec![0.0f64; n];
    let mut next = vec![0.0f64; n];
    let mut integrals = vec![0.0; paths.len()];
    let mut times = vec![0.0];
    let mut trace = vec![0.0];
    let mut grid = opts.keep_grid.then(|| vec![w.clone()]);
    let mut sources: Vec<usize> = Vec::with_capacity(paths.len());
    let deg = 2.0 * d as f64;
    for k in 0..steps {
        let s = k as f64 * dt;
        sources.clear();
        for (i, p) in paths.iter().enumerate() {
            while cursor[i] < p.jump_times.len() && p.jump_times[cursor[i]] <= s {
                cursor[i] += 1;
            }
            if let Some(site) = mapped[i][cursor[i]] {
                sources.push(site);
            }
        }
        next.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
            for (j, v) in chunk.iter_mut().enumerate() {
                let x = c * 4096 + j;
                let lap: f64 = lattice.neighbors(x).iter().map(|&(y, _)| w[y]).sum::<f64>() - deg * w[x];
                *v = w[x] + dt * lap;
            }
        });
        for &x in &sources {
            next[x] += dt * (w[x] + 1.0);
        }
        for (i, p) in paths.iter().enumerate() {
            let _ = p;
            if let Some(site) = mapped[i][cursor[i]] {
                integrals[i] += 0.5 * dt * (w[site] + next[site]);
            }
        }
        std::mem::swap(&mut w, &mut next);
        times.push((k + 1) as f64 * dt);
        trace.push(w[origin]);
        if let Some(g) = grid.as_mut() {
            g.push(w.clone());
        }
    }
    let min_value = w.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(WSolution {
        lattice,
        dt,
        times,
        origin_trace: trace,
        path_integrals: integrals,
        final_w: w,
        min_value,
        grid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum GreenMethod {
    LinearSolve { radius: u32, iterations: usize, residual: f64 },
    /// Recurrent dimension, `G(0) = ∞`.
    Divergent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenFunctionResult {
    pub dim: usize,
    /// `None` means `+∞`.
    pub value: Option<f64>,
    pub method: GreenMethod,
    /// `G(0)` on the box of half the radius, a truncation diagnostic.
    pub half_radius_value: Option<f64>,
}

impl GreenFunctionResult {
    /// `1 / G(0)`; zero when `G(0) = ∞`.
    pub fn threshold(&self) -> f64 {
        self.value.map(|g| 1.0 / g).unwrap_or(0.0)
    }

    /// `p G(0) / (1 − p G(0))`, or `None` (infinite) when `p ≥ 1/G(0)`.
    pub fn wbar_limit(&self, p: f64) -> Option<f64> {
        let g = self.value?;
        let pg = p * g;
        (pg < 1.0).then(|| pg / (1.0 - pg))
    }
}

/// Solve `(2d − A) g = δ_0` by conjugate gradients on a zero-boundary box.
fn green_linear_solve(d: usize, radius: u32) -> Result<(f64, usize, f64)> {
    let lattice = LatticeBox::new(d, radius, Geometry::Absorbing)?;
    let n = lattice.site_count();
    let o = origin_of(&lattice)?;
    let deg = 2.0 * d as f64;
    let apply = |x: &[f64], out: &mut [f64]| {
        out.par_chunks_mut(4096).enumerate().for_each(|(c, chunk)| {
            for (j, v) in chunk.iter_mut().enumerate() {
                let i = c * 4096 + j;
                *v = deg * x[i] - lattice.neighbors(i).iter().map(|&(y, _)| x[y]).sum::<f64>();
            }
        });
    };
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut g = vec![0.0; n];
    let mut r = vec![0.0; n];
    r[o] = 1.0;
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr: f64 = 1.0;
    let mut it = 0;
    while it < 20 * n.max(100) {
        if rr.sqrt() < 1e-13 {
            break;
        }
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..n {
            g[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
        it += 1;
    }
    Ok((g[o], it, rr.sqrt()))
}

/// `G(0) = ∫ p_t(0,0) dt` for the walk with rate 1 per edge (total rate 2d),
/// i.e. the discrete-time Green function at the origin divided by `2d`.
pub fn green_function(d: usize, radius: u32) -> Result<GreenFunctionResult> {
    if d == 0 {
        return Err(Error::invalid("dim", "must be positive"));
    }
    if d <= 2 {
        return Ok(GreenFunctionResult {
            dim: d,
            value: None,
            method: GreenMethod::Divergent,
            half_radius_value: None,
        });
    }
    let (g, iterations, residual) = green_linear_solve(d, radius)?;
    let (half, _, _) = green_linear_solve(d, radius / 2)?;
    Ok(GreenFunctionResult {
        dim: d,
        value: Some(g),
        method: GreenMethod::LinearSolve {
            radius,
            iterations,
            residual,
        },
        half_radius_value: Some(half),
    })
}

/// Where `ξ` comes from in a quenched run.
#[derive(Debug, Clone, Copy)]
pub enum EnvSource<'a> {
    Trajectory(&'a EnvTrajectory),
    WhiteNoise { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchedOptions {
    pub dt: f64,
    pub initial: Initial,
    /// Zero boundary condition outside the pocket.
    #[serde(default)]
    pub pocket: Option<Pocket>,
    #[serde(default)]
    pub keep_grid: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuenchedSolution {
    pub lattice: LatticeBox,
    pub dt: f64,
    pub initial: Initial,
    pub times: Vec<f64>,
    /// `log u(0, t_k)`.
    pub log_origin: Vec<f64>,
    /// `u(·, T) = final_u · exp(final_log_scale)`.
    pub final_u: Vec<f64>,
    pub final_log_scale: f64,
    /// `log u(x, t_k)` per time step, if requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_grid: Option<Vec<Vec<f64>>>,
}

impl QuenchedSolution {
    /// `log u(0, t)` at the grid time closest to `t`.
    pub fn log_origin_at(&self, t: f64) -> f64 {
        let k = ((t / self.dt).round() as usize).min(self.log_origin.len() - 1);
        self.log_origin[k]
    }

    pub fn u(&self, x: usize) -> f64 {
        self.final_u[x] * self.final_log_scale.exp()
    }
}

/// RK4 for `du/dt = Δ^K u` with zero values outside the active set.
struct HeatStepper<'a> {
    field: &'a ConductanceField,
    active: Vec<bool>,
    k: [Vec<f64>; 4],
    tmp: Vec<f64>,
}

impl<'a> HeatStepper<'a> {
    fn new(field: &'a ConductanceField, active: Vec<bool>) -> Self {
        let n = field.lattice().site_count();
        Self {
            field,
            active,
            k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
            tmp: vec![0.0; n],
        }
    }

    fn apply(field: &ConductanceField, active: &[bool], u: &[f64], out: &mut [f64]) {
        let lattice = field.lattice();
        for x in 0..u.len() {
            if !active[x] {
                out[x] = 0.0;
                continue;
            }
            let mut s = -field.total_rate(x) * u[x];
            for &(y, e) in lattice.neighbors(x) {
                if active[y] {
                    s += field.rate(e) * u[y];
                }
            }
            out[x] = s;
        }
    }

    fn step(&mut self, u: &mut [f64], dt: f64) {
        let n = u.len();
        let [k1, k2, k3, k4] = &mut self.k;
        Self::apply(self.field, &self.active, u, k1);
        for i in 0..n {
            self.tmp[i] = u[i] + 0.5 * dt * k1[i];
        }
        Self::apply(self.field, &self.active, &self.tmp, k2);
        for i in 0..n {
            self.tmp[i] = u[i] + 0.5 * dt * k2[i];
        }
        Self::apply(self.field, &self.active, &self.tmp, k3);
        for i in 0..n {
            self.tmp[i] = u[i] + dt * k3[i];
        }
        Self::apply(self.field, &self.active, &self.tmp, k4);
        for i in 0..n {
            u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

/// Accumulates `∫ ξ(x, s) ds` exactly for a piecewise-constant environment.
struct Exposure<'a> {
    traj: &'a EnvTrajectory,
    next: usize,
    values: Vec<f64>,
    last: Vec<f64>,
    acc: Vec<f64>,
}

impl<'a> Exposure<'a> {
    fn new(traj: &'a EnvTrajectory) -> Result<Self> {
        let values = traj.initial.field()?;
        let n = values.len();
        Ok(Self {
            traj,
            next: 0,
            values,
            last: vec![0.0; n],
            acc: vec![0.0; n],
        })
    }

    fn touch(&mut self, x: usize, t: f64) {
        self.acc[x] += self.values[x] * (t - self.last[x]);
        self.last[x] = t;
    }

    /// Integrals over `(from, to]`, where `from` is the previous `to`.
    fn integrate_to(&mut self, to: f64) -> &[f64] {
        while let Some(e) = self.traj.events.get(self.next) {
            if e.time > to {
                break;
            }
            match e.kind {
                EventKind::Jump { from, to: dest } => {
                    self.touch(from, e.time);
                    self.touch(dest, e.time);
                    self.values[from] -= 1.0;
                    self.values[dest] += 1.0;
                }
                EventKind::Flip { site } => {
                    self.touch(site, e.time);
                    self.values[site] = 1.0 - self.values[site];
                }
            }
            self.next += 1;
        }
        for x in 0..self.values.len() {
            self.acc[x] += self.values[x] * (to - self.last[x]);
            self.last[x] = to;
        }
        &self.acc
    }

    fn reset(&mut self) {
        self.acc.iter_mut().for_each(|a| *a = 0.0);
    }
}

fn max_abs_field(traj: &EnvTrajectory) -> Result<f64> {
    let mut r = traj.replay()?;
    let mut m = r.values().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    while let Some(t) = r.next_event_time() {
        r.advance_to(t);
        m = r.values().iter().fold(m, |a, v| a.max(v.abs()));
    }
    Ok(m)
}

/// Solve `∂u = Δ^K u + ξ u` on the field box up to `horizon`.
///
/// Walker and spin environments use Strang splitting with the exact diagonal
/// factor `exp(∫ ξ ds)` (events subdivide the integral) around an RK4
/// Laplacian step. White noise uses `u ← u · exp(ΔW − dt/2)` followed by the
/// Laplacian step, an Itô-consistent scheme with `E[u] = 1` preserved exactly
/// from `u ≡ 1` on a periodic box.
pub fn solve_quenched(
    field: &ConductanceField,
    env: EnvSource<'_>,
    horizon: f64,
    opts: &QuenchedOptions,
) -> Result<QuenchedSolution> {
    let lattice = field.lattice();
    let n = lattice.site_count();
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "must be finite and non-negative"));
    }
    if !(opts.dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let mut coords = vec![0i64; lattice.dim()];
    let active: Vec<bool> = (0..n)
        .map(|x| {
            lattice.coords_into(x, &mut coords);
            opts.pocket.as_ref().is_none_or(|p| crate::lattice::Region::contains(p, &coords))
        })
        .collect();
    let (env_map, xi_bound) = match env {
        EnvSource::WhiteNoise { .. } => (Vec::new(), 0.0),
        EnvSource::Trajectory(traj) => {
            if traj.is_white_noise() {
                return Err(Error::WhiteNoisePointwise);
            }
            if traj.horizon < horizon {
                return Err(Error::TimeOutOfRange {
                    t: horizon,
                    horizon: traj.horizon,
                });
            }
            let eb = &traj.config.env_box;
            if eb.dim() != lattice.dim() {
                return Err(Error::BoxMismatch);
            }
            let map = (0..n)
                .map(|x| {
                    lattice.coords_into(x, &mut coords);
                    if eb.contains(&coords) {
                        eb.site_of(&coords).ok_or(Error::BoxMismatch)
                    } else {
                        Err(Error::SiteOutsideBox(coords.clone()))
                    }
                })
                .collect::<Result<Vec<usize>>>()?;
            (map, max_abs_field(traj)?)
        }
    };
    let kmax = (0..n).filter(|&x| active[x]).map(|x| field.total_rate(x)).fold(0.0, f64::max);
    let steps = (horizon / opts.dt).round().max(if horizon > 0.0 { 1.0 } else { 0.0 }) as usize;
    let dt = if steps > 0 { horizon / steps as f64 } else { opts.dt };
    if dt * (kmax + xi_bound) >= 0.5 {
        return Err(Error::Stability {
            dt,
            suggested: 0.49 / (kmax + xi_bound),
        });
    }
    let origin = lattice.origin_site();
    let mut u = vec![0.0; n];
    match opts.initial {
        Initial::Delta0 => {
            let o = origin.ok_or_else(|| Error::SiteOutsideBox(vec![0; lattice.dim()]))?;
            if active[o] {
                u[o] = 1.0;
            }
        }
        Initial::Ones => (0..n).filter(|&x| active[x]).for_each(|x| u[x] = 1.0),
    }
    let log_at = |u: &[f64], scale: f64| -> f64 {
        match origin {
            Some(o) if u[o] > 0.0 => u[o].ln() + scale,
            _ => f64::NEG_INFINITY,
        }
    };
    let log_snapshot = |u: &[f64], scale: f64| -> Vec<f64> {
        u.iter().map(|&v| if v > 0.0 { v.ln() + scale } else { f64::NEG_INFINITY }).collect()
    };
    let mut scale = 0.0;
    let mut times = vec![0.0];
    let mut log_origin = vec![log_at(&u, scale)];
    let mut log_grid = opts.keep_grid.then(|| vec![log_snapshot(&u, scale)]);
    let mut stepper = HeatStepper::new(field, active.clone());
    let mut exposure = match env {
        EnvSource::Trajectory(traj) => Some(Exposure::new(traj)?),
        EnvSource::WhiteNoise { .. } => None,
    };
    let mut noise = vec![0.0; n];
    for k in 0..steps {
        let t0 = k as f64 * dt;
        match env {
            EnvSource::WhiteNoise { seed } => {
                white_noise_increments(seed, k as u64, dt, &mut noise);
                for x in 0..n {
                    u[x] *= (noise[x] - 0.5 * dt).exp();
                }
                stepper.step(&mut u, dt);
            }
            EnvSource::Trajectory(_) => {
                let ex = exposure.as_mut().unwrap();
                for (half, end) in [(0, t0 + 0.5 * dt), (1, (k + 1) as f64 * dt)] {
                    let acc = ex.integrate_to(end);
                    for x in 0..n {
                        u[x] *= acc[env_map[x]].exp();
                    }
                    ex.reset();
                    if half == 0 {
                        stepper.step(&mut u, dt);
                    }
                }
            }
        }
        let m = u.iter().cloned().fold(0.0, f64::max);
        if m > 0.0 {
            u.iter_mut().for_each(|v| *v /= m);
            scale += m.ln();
        }
        times.push((k + 1) as f64 * dt);
        log_origin.push(log_at(&u, scale));
        if let Some(g) = log_grid.as_mut() {
            g.push(log_snapshot(&u, scale));
        }
    }
    Ok(QuenchedSolution {
        lattice: lattice.clone(),
        dt,
        initial: opts.initial,
        times,
        log_origin,
        final_u: u,
        final_log_scale: scale,
        log_grid,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuenchedRunConfig {
    pub t_grid: Vec<f64>,
    pub dt: f64,
    pub realizations: u64,
    pub seed: u64,
    #[serde(default)]
    pub pocket: Option<Pocket>,
}

/// `log u(0, t)` on `t_grid` for every realization, δ_0 initial condition.
pub fn quenched_log_series(
    field: &ConductanceField,
    env: &EnvConfig,
    run: &QuenchedRunConfig,
) -> Result<Vec<Vec<f64>>> {
    lyapunov::check_grid(&run.t_grid)?;
    if run.realizations == 0 {
        return Err(Error::invalid("realizations", "must be positive"));
    }
    let t_max = *run.t_grid.last().unwrap();
    let opts = QuenchedOptions {
        dt: run.dt,
        initial: Initial::Delta0,
        pocket: run.pocket.clone(),
        keep_grid: false,
    };
    let solve = |r: u64| -> Result<Vec<f64>> {
        let seed = rng::child_seed(run.seed, Domain::Realization, r);
        let sol = if matches!(env.kind, EnvKind::WhiteNoise) {
            solve_quenched(field, EnvSource::WhiteNoise { seed }, t_max, &opts)?
        } else {
            let mut cfg = env.clone();
            cfg.seed = seed;
            let traj = EnvTrajectory::record(cfg, t_max)?;
            solve_quenched(field, EnvSource::Trajectory(&traj), t_max, &opts)?
        };
        Ok(run.t_grid.iter().map(|&t| sol.log_origin_at(t)).collect())
    };
    // the first realization surfaces configuration errors before fanning out
    let first = solve(0)?;
    let rest: Vec<Result<Vec<f64>>> = (1..run.realizations).into_par_iter().map(solve).collect();
    std::iter::once(Ok(first)).chain(rest).collect()
}

/// Quenched exponent `(1/t) E log u(0, t)` with bootstrap intervals.
pub fn quenched_exponent_estimate(
    field: &ConductanceField,
    env: &EnvConfig,
    run: &QuenchedRunConfig,
) -> Result<LyapunovEstimate> {
    let series = quenched_log_series(field, env, run)?;
    lyapunov::estimate_quenched(&run.t_grid, &series, run.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{generate_field, FieldLaw};

    fn line(radius: u32, g: Geometry, kappa: f64) -> ConductanceField {
        ConductanceField::constant(LatticeBox::new(1, radius, g).unwrap(), kappa).unwrap()
    }

    #[test]
    fn white_noise_first_moment_is_one() {
        let f = line(10, Geometry::Absorbing, 1.0);
        let m = moment_white_noise(&f, &MomentConfig::new(1, 3.0, 100, 1)).unwrap();
        assert_eq!(m.log_value, 0.0);
    }

    #[test]
    fn empty_environment_gives_one() {
        let f = line(10, Geometry::Absorbing, 1.0);
        let m = moment_finite_rw(&f, 0, 1.0, &MomentConfig::new(2, 3.0, 100, 1)).unwrap();
        assert_eq!(m.log_value, 0.0);
    }

    #[test]
    fn frozen_walkers_overlap_all_the_time() {
        let f = line(10, Geometry::Absorbing, 1e-9);
        let m = moment_finite_rw(&f, 1, 1e-9, &MomentConfig::new(1, 4.0, 200, 1)).unwrap();
        assert!((m.log_value - 4.0).abs() < 1e-6);
    }

    #[test]
    fn reversed_path_roundtrip() {
        let f = line(10, Geometry::Absorbing, 1.0);
        let p = simulate_path(&f, 10, 3.0, 5, 0).unwrap();
        let r = reverse_path(&p);
        assert_eq!(r.start, p.end());
        for t in [0.1, 0.7, 1.3, 2.9] {
            assert_eq!(r.position_at(t), p.position_at(3.0 - t - 1e-12));
        }
        let back = reverse_path(&r);
        assert_eq!(back.positions, p.positions);
        assert!(back.jump_times.iter().zip(&p.jump_times).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn w_is_zero_at_time_zero_and_monotone_when_pinned() {
        let lat = LatticeBox::new(3, 4, Geometry::Absorbing).unwrap();
        let o = lat.origin_site().unwrap();
        let opts = WOptions { radius: 8, dt: 0.05, keep_grid: false };
        let sol = solve_w_along_path(&[WalkPath::stationary(o, 0.0)], &lat, 0.0, &opts).unwrap();
        assert!(sol.final_w.iter().all(|&v| v == 0.0));
        let sol = solve_w_along_path(&[WalkPath::stationary(o, 5.0)], &lat, 5.0, &opts).unwrap();
        assert!(sol.min_value >= 0.0);
        assert!(sol.origin_trace.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn w_refuses_unstable_step() {
        let lat = LatticeBox::new(1, 4, Geometry::Absorbing).unwrap();
        let opts = WOptions { radius: 8, dt: 0.4, keep_grid: false };
        assert!(matches!(
            solve_w_along_path(&[WalkPath::stationary(4, 1.0)], &lat, 1.0, &opts),
            Err(Error::Stability { .. })
        ));
    }

    #[test]
    fn green_divergent_low_dims() {
        for d in [1, 2] {
            let g = green_function(d, 10).unwrap();
            assert_eq!(g.value, None);
            assert_eq!(g.wbar_limit(0.5), None);
        }
    }

    #[test]
    fn green_small_box_matches_dense_solve() {
        let g = green_function(3, 2).unwrap().value.unwrap();
        // dense solve on the 5^3 box
        let lat = LatticeBox::new(3, 2, Geometry::Absorbing).unwrap();
        let n = lat.site_count();
        let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
        for x in 0..n {
            a[(x, x)] = 6.0;
            for &(y, _) in lat.neighbors(x) {
                a[(x, y)] = -1.0;
            }
        }
        let o = lat.origin_site().unwrap();
        let mut b = nalgebra::DVector::<f64>::zeros(n);
        b[o] = 1.0;
        let sol = a.lu().solve(&b).unwrap();
        assert!((sol[o] - g).abs() < 1e-12);
    }

    #[test]
    fn quenched_frozen_constant_commutes() {
        let f = line(5, Geometry::Absorbing, 1.0);
        let env = LatticeBox::new(1, 5, Geometry::Periodic).unwrap();
        let opts = QuenchedOptions { dt: 1e-2, initial: Initial::Delta0, pocket: None, keep_grid: false };
        let zero = EnvTrajectory::record(EnvConfig::new(EnvKind::Frozen { value: 0.0 }, env.clone(), 0), 2.0).unwrap();
        let c = EnvTrajectory::record(EnvConfig::new(EnvKind::Frozen { value: 0.7 }, env, 0), 2.0).unwrap();
        let a = solve_quenched(&f, EnvSource::Trajectory(&zero), 2.0, &opts).unwrap();
        let b = solve_quenched(&f, EnvSource::Trajectory(&c), 2.0, &opts).unwrap();
        for (x, y) in a.log_origin.iter().zip(&b.log_origin).zip(&a.times).map(|((x, y), t)| (x + 0.7 * t, *y)) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn quenched_ones_stays_one_without_potential() {
        let f = generate_field(
            LatticeBox::new(2, 3, Geometry::Periodic).unwrap(),
            &FieldLaw::IidDiscrete { values: vec![0.5, 2.0], probs: vec![0.5, 0.5] },
            2,
        )
        .unwrap();
        let env = EnvTrajectory::record(
            EnvConfig::new(EnvKind::Frozen { value: 0.0 }, LatticeBox::new(2, 3, Geometry::Periodic).unwrap(), 0),
            1.0,
        )
        .unwrap();
        let opts = QuenchedOptions { dt: 0.01, initial: Initial::Ones, pocket: None, keep_grid: true };
        let sol = solve_quenched(&f, EnvSource::Trajectory(&env), 1.0, &opts).unwrap();
        for row in sol.log_grid.unwrap() {
            assert!(row.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn quenched_refuses_large_step() {
        let f = line(5, Geometry::Absorbing, 1.0);
        let opts = QuenchedOptions { dt: 0.3, initial: Initial::Delta0, pocket: None, keep_grid: false };
        assert!(matches!(
            solve_quenched(&f, EnvSource::WhiteNoise { seed: 1 }, 1.0, &opts),
            Err(Error::Stability { .. })
        ));
    }

    #[test]
    fn confined_integrand_is_dominated() {
        let f = line(30, Geometry::Absorbing, 1.0);
        let mut cfg = MomentConfig::new(2, 3.0, 1, 3);
        let mut conf = cfg.clone();
        conf.pocket = Some(Pocket::new(vec![0], 2));
        conf.initial = Initial::Delta0;
        cfg.initial = Initial::Ones;
        for i in 0..500 {
            let a = annealed_log_integrand(&f, &AnnealedDynamics::WhiteNoise, &cfg, i).unwrap();
            let b = annealed_log_integrand(&f, &AnnealedDynamics::WhiteNoise, &conf, i).unwrap();
            assert!(b <= a);
        }
    }
}
