//! Flat parameter set shared by every subcommand. Values come from an
//! optional TOML file and from flags; flags win.

use std::path::PathBuf;

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::CliError;

macro_rules! params {
    ($( $(#[$m:meta])* $name:ident : $ty:ty ),* $(,)?) => {
        #[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct Params {
            $( $(#[$m])* #[serde(default, skip_serializing_if = "Option::is_none")] pub $name: Option<$ty>, )*
        }

        impl Params {
            /// Field-wise `self` over `file`.
            pub fn over(self, file: Params) -> Params {
                Params { $( $name: self.$name.or(file.$name), )* }
            }
        }
    };
}

params! {
    /// Lattice dimension.
    #[arg(long)] dim: usize,
    /// Box radius L (the box is [-L, L]^d).
    #[arg(long)] radius: u32,
    /// `absorbing` or `periodic`.
    #[arg(long)] geometry: String,
    /// Read the conductance field from a CSV written by `gen-field`.
    #[arg(long)] field: PathBuf,
    /// `constant`, `iid` or `clustered`.
    #[arg(long)] law: String,
    #[arg(long)] kappa: f64,
    #[arg(long, value_delimiter = ',')] values: Vec<f64>,
    #[arg(long, value_delimiter = ',')] probs: Vec<f64>,
    /// Planted pocket `x[,y..]:radius:value`; repeatable.
    #[arg(long)] plant: Vec<String>,
    /// `white_noise`, `finite_rw`, `infinite_rw`, `spin_flip` or `frozen`.
    #[arg(long)] dynamics: String,
    #[arg(long)] p: usize,
    #[arg(long)] n: usize,
    #[arg(long)] rho: f64,
    #[arg(long)] nu: f64,
    #[arg(long)] beta: f64,
    /// Value of a frozen field.
    #[arg(long)] value: f64,
    #[arg(long)] env_radius: u32,
    #[arg(long)] env_geometry: String,
    /// Cap N of the occupation potential.
    #[arg(long)] potential_cap: u32,
    /// Occupation cap M of the truncated state space.
    #[arg(long)] cap: u32,
    #[arg(long)] w_radius: u32,
    #[arg(long)] w_dt: f64,
    #[arg(long, value_delimiter = ',')] t_grid: Vec<f64>,
    /// Horizon of a single run.
    #[arg(long)] t: f64,
    #[arg(long)] dt: f64,
    #[arg(long)] replicas: u64,
    #[arg(long)] realizations: u64,
    #[arg(long)] seed: u64,
    /// `ones` or `delta0`.
    #[arg(long)] initial: String,
    /// Confine walks to the radius-r box around the origin.
    #[arg(long)] pocket_radius: u32,
    #[arg(long)] tolerance: f64,
    /// `dirichlet` or `periodic`.
    #[arg(long)] boundary: String,
    #[arg(long)] max_dim: usize,
    /// Eigenvalue residual tolerance.
    #[arg(long)] tol: f64,
    #[arg(long)] max_iter: usize,
    /// Drop the kinetic part of the operator.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")] degenerate: bool,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")] sweep: bool,
    #[arg(long, value_delimiter = ',')] kappa_grid: Vec<f64>,
    #[arg(long)] delta: f64,
    #[arg(long)] cluster_radius: u32,
    /// `annealed_sup`, `quenched_lower`, `decorated_gap` or `init_invariance`.
    #[arg(long)] statement: String,
    #[arg(long)] kbar1: f64,
    #[arg(long)] kbar2: f64,
    /// Extra CSV artifact.
    #[arg(long)] csv: PathBuf,
    /// Sparse operator export.
    #[arg(long)] export: PathBuf,
    /// Event log of the environment.
    #[arg(long)] events: PathBuf,
}

impl Params {
    pub fn from_toml(text: &str) -> Result<Params, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(format!("config file: {e}")))
    }
}

/// Required-or-default accessors.
macro_rules! getter {
    ($name:ident, $ty:ty, $default:expr) => {
        pub fn $name(&self) -> $ty {
            self.$name.clone().unwrap_or_else(|| $default)
        }
    };
}

impl Params {
    getter!(dim, usize, 1);
    getter!(radius, u32, 8);
    getter!(law, String, "constant".into());
    getter!(kappa, f64, 1.0);
    getter!(dynamics, String, "white_noise".into());
    getter!(p, usize, 2);
    getter!(n, usize, 1);
    getter!(rho, f64, 1.0);
    getter!(nu, f64, 1.0);
    getter!(beta, f64, 0.5);
    getter!(value, f64, 0.0);
    getter!(potential_cap, u32, 2);
    getter!(cap, u32, 3);
    getter!(w_dt, f64, 0.1);
    getter!(t_grid, Vec<f64>, vec![4.0, 8.0, 16.0]);
    getter!(t, f64, 4.0);
    getter!(dt, f64, 0.01);
    getter!(replicas, u64, 10_000);
    getter!(realizations, u64, 16);
    getter!(seed, u64, 1);
    getter!(tolerance, f64, 0.05);
    getter!(max_dim, usize, pam_core::variational::DEFAULT_MAX_DIM);
    getter!(tol, f64, 1e-10);
    getter!(max_iter, usize, 100_000);
    getter!(degenerate, bool, false);
    getter!(sweep, bool, false);
    getter!(kappa_grid, Vec<f64>, vec![0.25, 0.5, 1.0, 2.0, 4.0]);
    getter!(delta, f64, 0.05);
    getter!(cluster_radius, u32, 3);
    getter!(kbar1, f64, 0.5);
    getter!(kbar2, f64, 2.0);

    pub fn env_radius(&self) -> u32 {
        self.env_radius.unwrap_or_else(|| self.radius())
    }

    pub fn w_radius(&self) -> u32 {
        self.w_radius.unwrap_or_else(|| self.radius())
    }

    pub fn required<T: Clone>(v: &Option<T>, name: &str) -> Result<T, CliError> {
        v.clone().ok_or_else(|| CliError::Config(format!("{name}: required by this command")))
    }
}
