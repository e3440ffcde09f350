//! Parabolic Anderson model on lattice boxes with random edge conductances.
//!
//! The crate is organised bottom-up:
//!
//! * [`lattice`]: boxes, conductance fields (constant, i.i.d., clustered,
//!   discretized, decorated) and the clustering verifier.
//! * [`environments`]: the four dynamic random environments (white noise,
//!   finite and infinite systems of random walks, stochastic Ising spin flips).
//! * [`walker`]: event-driven conductance walks, confinement and Girsanov
//!   reweighting.
//! * [`feynman_kac`]: Monte Carlo moment estimators, the quenched PDE solver,
//!   the `w`-equation and the lattice Green function.
//! * [`variational`]: sparse symmetric operators whose top eigenvalue gives
//!   the annealed exponents on a truncated state space.
//! * [`lyapunov`]: exponent estimation with bootstrap intervals and the
//!   theorem probes.
//!
//! Everything runs on finite boxes; randomness comes from counter-based
//! streams in [`rng`] so that results do not depend on thread scheduling.

pub mod environments;
pub mod error;
pub mod feynman_kac;
pub mod lattice;
pub mod lyapunov;
pub mod rng;
pub mod stats;
pub mod variational;
pub mod walker;

pub use error::{Error, Result};
