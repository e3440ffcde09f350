//! Dynamic random environments ξ(x, t) on a periodic box.
//!
//! Walker systems and spin systems are simulated exactly (Gillespie) and kept
//! as an event log over `[0, T]`; white noise is never materialized and only
//! hands out Gaussian increments on a caller's time grid.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::lattice::{join_coords, LatticeBox};
use crate::rng::{self, Domain};
use crate::{Error, Result};

/// Largest box for which Gibbs weights are enumerated exactly.
pub const MAX_EXACT_SITES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvKind {
    /// Space-time white noise (Itô).
    WhiteNoise,
    /// `n` independent walks jumping at rate `rho` to each neighbour, all
    /// starting at the origin.
    FiniteRw { n: usize, rho: f64 },
    /// Poisson(`nu`) cloud of independent walks, rate 1 per neighbour.
    InfiniteRw { nu: f64 },
    /// Stochastic Ising model, ξ = η ∈ {0, 1}.
    SpinFlip { beta: f64 },
    /// Time-independent field ξ ≡ `value`.
    Frozen { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum GibbsMethod {
    ExactEnumeration,
    /// Heat-bath sweeps.
    GibbsChain { burn_in: usize, thinning: usize },
}

impl GibbsMethod {
    pub fn auto(sites: usize) -> Self {
        if sites <= MAX_EXACT_SITES {
            GibbsMethod::ExactEnumeration
        } else {
            GibbsMethod::GibbsChain {
                burn_in: 500,
                thinning: 10,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    #[serde(flatten)]
    pub kind: EnvKind,
    pub env_box: LatticeBox,
    pub seed: u64,
    #[serde(default)]
    pub gibbs: Option<GibbsMethod>,
}

impl EnvConfig {
    pub fn new(kind: EnvKind, env_box: LatticeBox, seed: u64) -> Self {
        Self {
            kind,
            env_box,
            seed,
            gibbs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::invalid(name, format!("{v} must be positive")))
            }
        };
        match self.kind {
            EnvKind::WhiteNoise => Ok(()),
            EnvKind::FiniteRw { n, rho } => {
                if n == 0 {
                    return Err(Error::invalid("n", "need at least one walker"));
                }
                pos("rho", rho)
            }
            EnvKind::InfiniteRw { nu } => pos("nu", nu),
            EnvKind::SpinFlip { beta } => {
                if beta.is_finite() && beta >= 0.0 {
                    Ok(())
                } else {
                    Err(Error::invalid("beta", "must be finite and non-negative"))
                }
            }
            EnvKind::Frozen { value } => {
                if value.is_finite() {
                    Ok(())
                } else {
                    Err(Error::invalid("value", "must be finite"))
                }
            }
        }
    }

    /// Upper bound on |ξ| over the run, used for solver stability checks.
    pub fn field_bound(&self, state: &EnvState) -> f64 {
        match (&self.kind, state) {
            (EnvKind::FiniteRw { n, .. }, _) => *n as f64,
            (EnvKind::InfiniteRw { .. }, EnvState::Particles { positions, .. }) => positions.len() as f64,
            (EnvKind::SpinFlip { .. }, _) => 1.0,
            (EnvKind::Frozen { value }, _) => value.abs(),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum EnvState {
    WhiteNoise,
    /// Labelled particles with their positions and the induced occupation.
    Particles { positions: Vec<usize>, occupation: Vec<u32> },
    Spins { up: Vec<bool> },
    Frozen { value: f64, sites: usize },
}

impl EnvState {
    fn particles(sites: usize, positions: Vec<usize>) -> Self {
        let mut occupation = vec![0u32; sites];
        for &p in &positions {
            occupation[p] += 1;
        }
        EnvState::Particles { positions, occupation }
    }

    /// ξ(·) as a vector over the environment box.
    pub fn field(&self) -> Result<Vec<f64>> {
        match self {
            EnvState::WhiteNoise => Err(Error::WhiteNoisePointwise),
            EnvState::Particles { occupation, .. } => Ok(occupation.iter().map(|&o| o as f64).collect()),
            EnvState::Spins { up } => Ok(up.iter().map(|&u| if u { 1.0 } else { 0.0 }).collect()),
            EnvState::Frozen { value, sites } => Ok(vec![*value; *sites]),
        }
    }

    /// Σ_x ξ(x).
    pub fn total(&self) -> f64 {
        self.field().map(|f| f.iter().sum()).unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Jump { from: usize, to: usize },
    Flip { site: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

/// `exp(-β σ(x) Σ_{y~x} σ(y))`.
pub fn ising_rate(lattice: &LatticeBox, up: &[bool], beta: f64, x: usize) -> f64 {
    let s = |b: bool| if b { 1.0 } else { -1.0 };
    let field: f64 = lattice.neighbors(x).iter().map(|&(y, _)| s(up[y])).sum();
    (-beta * s(up[x]) * field).exp()
}

/// `β Σ_{x~y} σ(x)σ(y)`, the log Gibbs weight.
pub fn ising_log_weight(lattice: &LatticeBox, up: &[bool], beta: f64) -> f64 {
    let s = |b: bool| if b { 1.0 } else { -1.0 };
    beta * lattice.edges().iter().map(|&(a, b)| s(up[a]) * s(up[b])).sum::<f64>()
}

fn bits(config: usize, n: usize) -> Vec<bool> {
    (0..n).map(|i| config >> i & 1 == 1).collect()
}

/// Normalized Gibbs probabilities of every configuration; bit `i` of the
/// index is the spin at site `i`.
pub fn gibbs_probabilities(lattice: &LatticeBox, beta: f64) -> Result<Vec<f64>> {
    let n = lattice.site_count();
    if n > MAX_EXACT_SITES {
        return Err(Error::EnumerationTooLarge {
            sites: n,
            limit: MAX_EXACT_SITES,
        });
    }
    let logw: Vec<f64> = (0..1usize << n)
        .map(|c| ising_log_weight(lattice, &bits(c, n), beta))
        .collect();
    let max = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / z).collect())
}

/// Sampler for the Ising Gibbs measure at inverse temperature β.
#[derive(Debug, Clone)]
pub struct GibbsSampler {
    lattice: LatticeBox,
    beta: f64,
    method: GibbsMethod,
    cdf: Vec<f64>,
}

impl GibbsSampler {
    pub fn new(lattice: LatticeBox, beta: f64, method: GibbsMethod) -> Result<Self> {
        let cdf = match method {
            GibbsMethod::ExactEnumeration => {
                let mut acc = 0.0;
                gibbs_probabilities(&lattice, beta)?
                    .into_iter()
                    .map(|p| {
                        acc += p;
                        acc
                    })
                    .collect()
            }
            GibbsMethod::GibbsChain { .. } => Vec::new(),
        };
        Ok(Self {
            lattice,
            beta,
            method,
            cdf,
        })
    }

    pub fn method(&self) -> GibbsMethod {
        self.method
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<bool> {
        let n = self.lattice.site_count();
        match self.method {
            GibbsMethod::ExactEnumeration => {
                let u: f64 = rng.random::<f64>() * self.cdf[self.cdf.len() - 1];
                let idx = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
                bits(idx, n)
            }
            GibbsMethod::GibbsChain { burn_in, .. } => {
                let mut up: Vec<bool> = (0..n).map(|_| rng.random()).collect();
                for _ in 0..burn_in {
                    self.sweep(&mut up, rng);
                }
                up
            }
        }
    }

    /// Draw `count` samples; chain samples are `thinning` sweeps apart.
    pub fn sample_many<R: Rng>(&self, rng: &mut R, count: usize) -> Vec<Vec<bool>> {
        match self.method {
            GibbsMethod::ExactEnumeration => (0..count).map(|_| self.sample(rng)).collect(),
            GibbsMethod::GibbsChain { thinning, .. } => {
                let mut out = Vec::with_capacity(count);
                if count == 0 {
                    return out;
                }
                let mut up = self.sample(rng);
                out.push(up.clone());
                while out.len() < count {
                    for _ in 0..thinning.max(1) {
                        self.sweep(&mut up, rng);
                    }
                    out.push(up.clone());
                }
                out
            }
        }
    }

    fn sweep<R: Rng>(&self, up: &mut [bool], rng: &mut R) {
        for x in 0..up.len() {
            let field: f64 = self
                .lattice
                .neighbors(x)
                .iter()
                .map(|&(y, _)| if up[y] { 1.0 } else { -1.0 })
                .sum();
            let p_up = 1.0 / (1.0 + (-2.0 * self.beta * field).exp());
            up[x] = rng.random::<f64>() < p_up;
        }
    }
}

/// `max_{η,x} |c(x,η)π(η) − c(x,η^x)π(η^x)|` under exact Gibbs weights.
pub fn check_detailed_balance(beta: f64, lattice: &LatticeBox) -> Result<f64> {
    let n = lattice.site_count();
    let pi = gibbs_probabilities(lattice, beta)?;
    let mut worst: f64 = 0.0;
    for c in 0..1usize << n {
        let eta = bits(c, n);
        for x in 0..n {
            let flipped_idx = c ^ (1 << x);
            let flipped = bits(flipped_idx, n);
            let lhs = ising_rate(lattice, &eta, beta, x) * pi[c];
            let rhs = ising_rate(lattice, &flipped, beta, x) * pi[flipped_idx];
            worst = worst.max((lhs - rhs).abs());
        }
    }
    Ok(worst)
}

fn origin_site(lattice: &LatticeBox) -> Result<usize> {
    lattice
        .origin_site()
        .ok_or_else(|| Error::SiteOutsideBox(vec![0; lattice.dim()]))
}

/// Stationary (or, for finite walks, origin-started) initial state.
pub fn sample_initial(config: &EnvConfig) -> Result<EnvState> {
    config.validate()?;
    let lattice = &config.env_box;
    let n = lattice.site_count();
    let mut rng = rng::stream(config.seed, Domain::EnvInit, 0);
    Ok(match config.kind {
        EnvKind::WhiteNoise => EnvState::WhiteNoise,
        EnvKind::Frozen { value } => EnvState::Frozen { value, sites: n },
        EnvKind::FiniteRw { n: walkers, .. } => EnvState::particles(n, vec![origin_site(lattice)?; walkers]),
        EnvKind::InfiniteRw { nu } => {
            let law = Poisson::new(nu).map_err(|e| Error::invalid("nu", e.to_string()))?;
            let mut positions = Vec::new();
            for x in 0..n {
                let k: f64 = law.sample(&mut rng);
                positions.extend(std::iter::repeat_n(x, k as usize));
            }
            EnvState::particles(n, positions)
        }
        EnvKind::SpinFlip { beta } => {
            let method = config.gibbs.unwrap_or_else(|| GibbsMethod::auto(n));
            EnvState::Spins {
                up: GibbsSampler::new(lattice.clone(), beta, method)?.sample(&mut rng),
            }
        }
    })
}

/// A running environment.
#[derive(Debug, Clone)]
pub struct EnvProcess {
    config: EnvConfig,
    state: EnvState,
    time: f64,
    rng: ChaCha8Rng,
    flip_rates: Vec<f64>,
}

impl EnvProcess {
    pub fn new(config: EnvConfig) -> Result<Self> {
        let state = sample_initial(&config)?;
        Self::from_state(config, state)
    }

    pub fn from_state(config: EnvConfig, state: EnvState) -> Result<Self> {
        config.validate()?;
        let rng = rng::stream(config.seed, Domain::EnvDynamics, 0);
        let flip_rates = match (&config.kind, &state) {
            (EnvKind::SpinFlip { beta }, EnvState::Spins { up }) => (0..up.len())
                .map(|x| ising_rate(&config.env_box, up, *beta, x))
                .collect(),
            _ => Vec::new(),
        };
        Ok(Self {
            config,
            state,
            time: 0.0,
            rng,
            flip_rates,
        })
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }
    pub fn time(&self) -> f64 {
        self.time
    }
    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Run the exact dynamics for a further `dt`; returns the time-sorted
    /// events in `(time, time + dt]`.
    pub fn evolve(&mut self, dt: f64) -> Result<Vec<Event>> {
        if !(dt > 0.0) {
            return Err(Error::invalid("dt", "must be positive"));
        }
        let end = self.time + dt;
        let mut events = Vec::new();
        let lattice = self.config.env_box.clone();
        match (self.config.kind, &mut self.state) {
            (EnvKind::FiniteRw { .. } | EnvKind::InfiniteRw { .. }, EnvState::Particles { positions, occupation }) => {
                let per_edge = match self.config.kind {
                    EnvKind::FiniteRw { rho, .. } => rho,
                    _ => 1.0,
                };
                loop {
                    // every site of a periodic box has the same degree, but
                    // absorbing boxes are allowed too
                    let rates: Vec<f64> = positions
                        .iter()
                        .map(|&p| per_edge * lattice.neighbors(p).len() as f64)
                        .collect();
                    let total: f64 = rates.iter().sum();
                    if total <= 0.0 {
                        break;
                    }
                    let t = self.time + rng::exponential(&mut self.rng, total);
                    if t > end {
                        break;
                    }
                    self.time = t;
                    let mut u = self.rng.random::<f64>() * total;
                    let mut k = rates.len() - 1;
                    for (i, r) in rates.iter().enumerate() {
                        if u < *r {
                            k = i;
                            break;
                        }
                        u -= r;
                    }
                    let nbrs = lattice.neighbors(positions[k]);
                    let j = (self.rng.random::<f64>() * nbrs.len() as f64) as usize;
                    let to = nbrs[j.min(nbrs.len() - 1)].0;
                    let from = positions[k];
                    positions[k] = to;
                    occupation[from] -= 1;
                    occupation[to] += 1;
                    events.push(Event {
                        time: t,
                        kind: EventKind::Jump { from, to },
                    });
                }
            }
            (EnvKind::SpinFlip { beta }, EnvState::Spins { up }) => loop {
                let total: f64 = self.flip_rates.iter().sum();
                if total <= 0.0 {
                    break;
                }
                let t = self.time + rng::exponential(&mut self.rng, total);
                if t > end {
                    break;
                }
                self.time = t;
                let mut u = self.rng.random::<f64>() * total;
                let mut x = up.len() - 1;
                for (i, r) in self.flip_rates.iter().enumerate() {
                    if u < *r {
                        x = i;
                        break;
                    }
                    u -= r;
                }
                up[x] = !up[x];
                self.flip_rates[x] = ising_rate(&lattice, up, beta, x);
                for &(y, _) in lattice.neighbors(x) {
                    self.flip_rates[y] = ising_rate(&lattice, up, beta, y);
                }
                events.push(Event {
                    time: t,
                    kind: EventKind::Flip { site: x },
                });
            },
            _ => {}
        }
        self.time = end;
        Ok(events)
    }
}

/// One realization of the environment over `[0, horizon]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvTrajectory {
    pub config: EnvConfig,
    pub horizon: f64,
    pub initial: EnvState,
    pub events: Vec<Event>,
}

impl EnvTrajectory {
    pub fn record(config: EnvConfig, horizon: f64) -> Result<Self> {
        if !(horizon >= 0.0) {
            return Err(Error::invalid("horizon", "must be non-negative"));
        }
        let mut process = EnvProcess::new(config.clone())?;
        let initial = process.state().clone();
        let events = if horizon > 0.0 { process.evolve(horizon)? } else { Vec::new() };
        Ok(Self {
            config,
            horizon,
            initial,
            events,
        })
    }

    pub fn is_white_noise(&self) -> bool {
        matches!(self.config.kind, EnvKind::WhiteNoise)
    }

    pub fn replay(&self) -> Result<Replay<'_>> {
        Ok(Replay {
            traj: self,
            next: 0,
            values: self.initial.field()?,
        })
    }

    /// ξ(x, t), right-continuous in t.
    pub fn field_value(&self, x: usize, t: f64) -> Result<f64> {
        if self.is_white_noise() {
            return Err(Error::WhiteNoisePointwise);
        }
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::TimeOutOfRange { t, horizon: self.horizon });
        }
        if x >= self.config.env_box.site_count() {
            return Err(Error::invalid("x", "site outside the environment box"));
        }
        let mut r = self.replay()?;
        r.advance_to(t);
        Ok(r.values()[x])
    }

    /// Rows `time,kind,site(,target_site)`; coordinates are ':'-joined.
    pub fn events_csv(&self) -> String {
        let l = &self.config.env_box;
        let c = |s: usize| join_coords(&l.coords(s), ":");
        let mut out = String::from("time,kind,site,target_site\n");
        for e in &self.events {
            match e.kind {
                EventKind::Jump { from, to } => out.push_str(&format!("{},jump,{},{}\n", e.time, c(from), c(to))),
                EventKind::Flip { site } => out.push_str(&format!("{},flip,{}\n", e.time, c(site))),
            }
        }
        out
    }
}

/// Cursor replaying an event log forward in time.
#[derive(Debug, Clone)]
pub struct Replay<'a> {
    traj: &'a EnvTrajectory,
    next: usize,
    values: Vec<f64>,
}

impl Replay<'_> {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn next_event_time(&self) -> Option<f64> {
        self.traj.events.get(self.next).map(|e| e.time)
    }

    /// Apply every event with time ≤ `t`; returns whether anything changed.
    pub fn advance_to(&mut self, t: f64) -> bool {
        let start = self.next;
        while let Some(e) = self.traj.events.get(self.next) {
            if e.time > t {
                break;
            }
            match e.kind {
                EventKind::Jump { from, to } => {
                    self.values[from] -= 1.0;
                    self.values[to] += 1.0;
                }
                EventKind::Flip { site } => self.values[site] = 1.0 - self.values[site],
            }
            self.next += 1;
        }
        self.next != start
    }
}

/// Independent N(0, dt) increments for every site at time step `step`.
pub fn white_noise_increments(seed: u64, step: u64, dt: f64, out: &mut [f64]) {
    let mut rng = rng::stream(seed, Domain::WhiteNoise, step);
    let s = dt.sqrt();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = s * z;
    }
}

/// Snapshot `(time, η, ζ)` of a coupled pair after each clock ring.
pub type CoupledSnapshot = (f64, Vec<bool>, Vec<bool>);

/// Run two Ising systems from `eta0` and `zeta0` with shared clocks and
/// uniforms (basic monotone coupling). Site clocks ring at rate
/// `2 exp(β·deg)`, which dominates any sum of an up-rate and a down-rate.
pub fn monotone_coupling(
    lattice: &LatticeBox,
    beta: f64,
    eta0: &[bool],
    zeta0: &[bool],
    horizon: f64,
    seed: u64,
) -> Result<Vec<CoupledSnapshot>> {
    let n = lattice.site_count();
    if eta0.len() != n || zeta0.len() != n {
        return Err(Error::invalid("configuration", "length must equal site count"));
    }
    let max_deg = (0..n).map(|x| lattice.neighbors(x).len()).max().unwrap_or(0);
    let clock = 2.0 * (beta * max_deg as f64).exp();
    let mut rng = rng::stream(seed, Domain::Coupling, 0);
    let (mut eta, mut zeta) = (eta0.to_vec(), zeta0.to_vec());
    let mut out = vec![(0.0, eta.clone(), zeta.clone())];
    let mut t = 0.0;
    loop {
        t += rng::exponential(&mut rng, clock * n as f64);
        if t > horizon {
            break;
        }
        let x = ((rng.random::<f64>() * n as f64) as usize).min(n - 1);
        let u: f64 = rng.random();
        for conf in [&mut eta, &mut zeta] {
            let c = ising_rate(lattice, conf, beta, x) / clock;
            if !conf[x] && u < c {
                conf[x] = true;
            } else if conf[x] && u > 1.0 - c {
                conf[x] = false;
            }
        }
        out.push((t, eta.clone(), zeta.clone()));
    }
    Ok(out)
}
