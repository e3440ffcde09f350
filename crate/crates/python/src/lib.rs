//! Python bindings. Configuration structs cross the boundary as plain dicts
//! with the same keys as their serde form; results come back as dicts.

use pam_core::environments::{check_detailed_balance, EnvConfig, EnvTrajectory};
use pam_core::feynman_kac::{self, AnnealedDynamics, Initial, MomentConfig, QuenchedRunConfig};
use pam_core::lattice::{self, ConductanceField, FieldLaw, Geometry, LatticeBox, Pocket};
use pam_core::lyapunov::{self, AnnealedProbeConfig, InitProbeConfig};
use pam_core::variational::{self, BuildOptions, OperatorSpec};
use pam_core::walker;
use pyo3::create_exception;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

create_exception!(pam_conductance, PamError, PyValueError, "Error raised by the simulation core.");
create_exception!(pam_conductance, BudgetError, PamError, "A state space or enumeration exceeded its size budget.");

fn err(e: pam_core::Error) -> PyErr {
    match e {
        pam_core::Error::SizeBudget { .. } | pam_core::Error::EnumerationTooLarge { .. } => {
            BudgetError::new_err(e.to_string())
        }
        _ => PamError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PamError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PamError::new_err(format!("bad configuration: {e}")))
}

fn geometry(name: &str) -> PyResult<Geometry> {
    name.parse().map_err(|e: pam_core::Error| err(e))
}

fn initial(name: &str) -> PyResult<Initial> {
    match name {
        "ones" => Ok(Initial::Ones),
        "delta0" => Ok(Initial::Delta0),
        other => Err(PamError::new_err(format!("initial must be `ones` or `delta0`, got `{other}`"))),
    }
}

/// Box `[-radius, radius]^dim` of the integer lattice.
#[pyclass(name = "Lattice", frozen, skip_from_py_object, module = "pam_conductance")]
#[derive(Clone)]
struct PyLattice(LatticeBox);

#[pymethods]
impl PyLattice {
    #[new]
    #[pyo3(signature = (dim, radius, geometry="absorbing"))]
    fn new(dim: usize, radius: u32, geometry: &str) -> PyResult<Self> {
        LatticeBox::new(dim, radius, self::geometry(geometry)?).map(Self).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn radius(&self) -> u32 {
        self.0.radius()
    }

    #[getter]
    fn site_count(&self) -> usize {
        self.0.site_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.0.edge_count()
    }

    #[getter]
    fn origin_site(&self) -> Option<usize> {
        self.0.origin_site()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.0.edges().to_vec()
    }

    fn coords(&self, site: usize) -> PyResult<Vec<i64>> {
        if site >= self.0.site_count() {
            return Err(PamError::new_err(format!("site {site} outside the box")));
        }
        Ok(self.0.coords(site))
    }

    fn site_of(&self, coords: Vec<i64>) -> Option<usize> {
        self.0.site_of(&coords)
    }

    fn __repr__(&self) -> String {
        format!("Lattice(dim={}, radius={}, geometry='{}')", self.0.dim(), self.0.radius(), self.0.geometry())
    }
}

/// Edge conductances on a lattice box.
#[pyclass(name = "Field", frozen, skip_from_py_object, module = "pam_conductance")]
#[derive(Clone)]
struct PyField(ConductanceField);

#[pymethods]
impl PyField {
    #[staticmethod]
    fn constant(lattice: &PyLattice, kappa: f64) -> PyResult<Self> {
        ConductanceField::constant(lattice.0.clone(), kappa).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_rates(lattice: &PyLattice, rates: Vec<f64>) -> PyResult<Self> {
        ConductanceField::from_rates(lattice.0.clone(), rates).map(Self).map_err(err)
    }

    /// `law` is a dict such as `{"law": "iid_discrete", "values": [...], "probs": [...]}`.
    #[staticmethod]
    fn generate(lattice: &PyLattice, law: &Bound<'_, PyAny>, seed: u64) -> PyResult<Self> {
        let law: FieldLaw = from_py(law)?;
        lattice::generate_field(lattice.0.clone(), &law, seed).map(Self).map_err(err)
    }

    #[staticmethod]
    fn from_csv(text: &str) -> PyResult<Self> {
        ConductanceField::from_csv(text).map(Self).map_err(err)
    }

    fn to_csv(&self) -> String {
        self.0.to_csv()
    }

    #[getter]
    fn lattice(&self) -> PyLattice {
        PyLattice(self.0.lattice().clone())
    }

    #[getter]
    fn rates(&self) -> Vec<f64> {
        self.0.rates().to_vec()
    }

    #[getter]
    fn bounds(&self) -> (f64, f64) {
        self.0.bounds()
    }

    fn discretize(&self, n: u32) -> PyResult<Self> {
        lattice::discretize_field(&self.0, n).map(Self).map_err(err)
    }

    /// Pocket of radius `radius` whose rates are all within `delta` of `kappa`, or `None`.
    fn find_cluster<'py>(&self, py: Python<'py>, kappa: f64, delta: f64, radius: u32) -> PyResult<Bound<'py, PyAny>> {
        let found = lattice::verify_clustering(&self.0, kappa, delta, radius).map_err(err)?;
        to_py(py, &found)
    }

    fn __repr__(&self) -> String {
        let (lo, hi) = self.0.bounds();
        format!("Field(edges={}, rates in [{lo}, {hi}])", self.0.rates().len())
    }
}

/// Truncated variational operator.
#[pyclass(name = "Operator", frozen, module = "pam_conductance")]
struct PyOperator(OperatorSpec);

#[pymethods]
impl PyOperator {
    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.0.matrix.nnz()
    }

    #[getter]
    fn warnings(&self) -> Vec<String> {
        self.0.warnings.clone()
    }

    #[getter]
    fn state_space<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.state_space)
    }

    fn to_dense(&self) -> Vec<Vec<f64>> {
        self.0.matrix.to_dense()
    }

    fn to_coo(&self) -> String {
        self.0.to_coo_text()
    }

    fn matvec(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        if x.len() != self.0.dim() {
            return Err(PamError::new_err(format!("vector has length {}, operator has {}", x.len(), self.0.dim())));
        }
        let mut out = vec![0.0; x.len()];
        self.0.matrix.matvec(&x, &mut out);
        Ok(out)
    }

    /// Largest eigenvalue; the dict also carries `lambda_p`, the residual and convergence.
    #[pyo3(signature = (tol=1e-10, max_iter=100_000))]
    fn top_eigenvalue<'py>(&self, py: Python<'py>, tol: f64, max_iter: usize) -> PyResult<Bound<'py, PyAny>> {
        let r = py.detach(|| variational::top_eigenvalue(&self.0, tol, max_iter));
        to_py(py, &r)
    }
}

fn options(boundary: &str, radius: Option<u32>, degenerate: bool, max_dim: Option<usize>) -> PyResult<BuildOptions> {
    let mut o = match boundary {
        "dirichlet" => BuildOptions::dirichlet(radius.ok_or_else(|| PamError::new_err("dirichlet needs a radius"))?),
        "periodic" => BuildOptions::periodic(),
        other => return Err(PamError::new_err(format!("boundary must be `dirichlet` or `periodic`, got `{other}`"))),
    };
    o.zero_kinetic = degenerate;
    if let Some(m) = max_dim {
        o.max_dim = m;
    }
    Ok(o)
}

#[pyfunction]
#[pyo3(signature = (field, p, boundary="dirichlet", radius=None, degenerate=false, max_dim=None))]
fn white_noise_operator(
    py: Python<'_>,
    field: &PyField,
    p: usize,
    boundary: &str,
    radius: Option<u32>,
    degenerate: bool,
    max_dim: Option<usize>,
) -> PyResult<PyOperator> {
    let o = options(boundary, radius.or(Some(field.0.lattice().radius())), degenerate, max_dim)?;
    py.detach(|| variational::build_wn_operator(&field.0, p, &o)).map(PyOperator).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (field, p, n, rho, boundary="dirichlet", radius=None, max_dim=None))]
#[allow(clippy::too_many_arguments)]
fn finite_rw_operator(
    py: Python<'_>,
    field: &PyField,
    p: usize,
    n: usize,
    rho: f64,
    boundary: &str,
    radius: Option<u32>,
    max_dim: Option<usize>,
) -> PyResult<PyOperator> {
    let o = options(boundary, radius.or(Some(field.0.lattice().radius())), false, max_dim)?;
    py.detach(|| variational::build_firw_operator(&field.0, p, n, rho, &o)).map(PyOperator).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (field, p, nu, env, potential_cap=2, cap=3, radius=None, max_dim=None))]
#[allow(clippy::too_many_arguments)]
fn infinite_rw_operator(
    py: Python<'_>,
    field: &PyField,
    p: usize,
    nu: f64,
    env: &PyLattice,
    potential_cap: u32,
    cap: u32,
    radius: Option<u32>,
    max_dim: Option<usize>,
) -> PyResult<PyOperator> {
    let o = options("dirichlet", radius.or(Some(field.0.lattice().radius())), false, max_dim)?;
    py.detach(|| variational::build_iirw_operator(&field.0, p, nu, potential_cap, cap, &env.0, &o))
        .map(PyOperator)
        .map_err(err)
}

#[pyfunction]
#[pyo3(signature = (field, p, beta, env, radius=None, max_dim=None))]
fn spin_flip_operator(
    py: Python<'_>,
    field: &PyField,
    p: usize,
    beta: f64,
    env: &PyLattice,
    radius: Option<u32>,
    max_dim: Option<usize>,
) -> PyResult<PyOperator> {
    let o = options("dirichlet", radius.or(Some(field.0.lattice().radius())), false, max_dim)?;
    py.detach(|| variational::build_spinflip_operator(&field.0, p, beta, &env.0, &o))
        .map(PyOperator)
        .map_err(err)
}

/// White-noise `λ_p(κ)` over `kappas` on a Dirichlet box of radius `radius` in dimension `dim`.
#[pyfunction]
#[pyo3(signature = (dim, radius, p, kappas, tol=1e-10, max_iter=100_000))]
fn kappa_sweep<'py>(
    py: Python<'py>,
    dim: usize,
    radius: u32,
    p: usize,
    kappas: Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let sweep = py
        .detach(|| {
            variational::kappa_sweep(
                |k| {
                    let f = ConductanceField::constant(LatticeBox::new(dim, radius, Geometry::Absorbing)?, k)?;
                    variational::build_wn_operator(&f, p, &BuildOptions::dirichlet(radius))
                },
                &kappas,
                tol,
                max_iter,
            )
        })
        .map_err(err)?;
    to_py(py, &sweep)
}

/// Jump times and visited sites of one walk driven by `field`.
#[pyfunction]
#[pyo3(signature = (field, horizon, seed, index=0, start=None))]
fn simulate_path<'py>(
    py: Python<'py>,
    field: &PyField,
    horizon: f64,
    seed: u64,
    index: u64,
    start: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let start = start
        .or_else(|| field.0.lattice().origin_site())
        .ok_or_else(|| PamError::new_err("the origin is outside the box; pass `start`"))?;
    let path = walker::simulate_path(&field.0, start, horizon, seed, index).map_err(err)?;
    to_py(py, &path)
}

/// Log Girsanov weight of a path of `source` re-weighted to `target`.
#[pyfunction]
fn girsanov_log_weight(path: &Bound<'_, PyAny>, source: &PyField, target: &PyField) -> PyResult<f64> {
    let path: walker::WalkPath = from_py(path)?;
    walker::girsanov_weight(&path, &source.0, &target.0).map(|w| w.log_weight).map_err(err)
}

/// `log E[u(0, t)^p]` by Monte Carlo. `dynamics` is e.g. `{"dynamics": "white_noise"}`.
#[pyfunction]
#[pyo3(signature = (field, dynamics, p, t, replicas, seed, initial="ones", pocket_radius=None))]
#[allow(clippy::too_many_arguments)]
fn annealed_moment<'py>(
    py: Python<'py>,
    field: &PyField,
    dynamics: &Bound<'py, PyAny>,
    p: usize,
    t: f64,
    replicas: u64,
    seed: u64,
    initial: &str,
    pocket_radius: Option<u32>,
) -> PyResult<Bound<'py, PyAny>> {
    let dynamics: AnnealedDynamics = from_py(dynamics)?;
    let mut cfg = MomentConfig::new(p, t, replicas, seed);
    cfg.initial = self::initial(initial)?;
    cfg.pocket = pocket_radius.map(|r| Pocket::new(vec![0; field.0.lattice().dim()], r));
    let m = py.detach(|| feynman_kac::annealed_moment(&field.0, &dynamics, &cfg)).map_err(err)?;
    to_py(py, &m)
}

#[pyfunction]
fn green_function<'py>(py: Python<'py>, dim: usize, radius: u32) -> PyResult<Bound<'py, PyAny>> {
    let g = py.detach(|| feynman_kac::green_function(dim, radius)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("g0", g.value)?;
    out.set_item("threshold", g.threshold())?;
    out.set_item("result", to_py(py, &g)?)?;
    Ok(out.into_any())
}

/// Quenched exponent estimate. `env` is an environment config dict and `run`
/// holds `t_grid`, `dt`, `realizations` and `seed`.
#[pyfunction]
fn quenched_exponent<'py>(
    py: Python<'py>,
    field: &PyField,
    env: &Bound<'py, PyAny>,
    run: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let env: EnvConfig = from_py(env)?;
    let run: QuenchedRunConfig = from_py(run)?;
    let est = py.detach(|| feynman_kac::quenched_exponent_estimate(&field.0, &env, &run)).map_err(err)?;
    to_py(py, &est)
}

/// Event log (CSV) of one environment realization up to `horizon`.
#[pyfunction]
fn environment_events(env: &Bound<'_, PyAny>, horizon: f64) -> PyResult<String> {
    let env: EnvConfig = from_py(env)?;
    EnvTrajectory::record(env, horizon).map(|t| t.events_csv()).map_err(err)
}

/// Largest detailed-balance residual of the spin-flip chain on a small box.
#[pyfunction]
fn detailed_balance_residual(beta: f64, lattice: &PyLattice) -> PyResult<f64> {
    check_detailed_balance(beta, &lattice.0).map_err(err)
}

#[pyfunction]
fn probe_annealed_sup<'py>(py: Python<'py>, field: &PyField, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let cfg: AnnealedProbeConfig = from_py(config)?;
    let probe = py.detach(|| lyapunov::probe_annealed_sup(&field.0, &cfg)).map_err(err)?;
    to_py(py, &probe)
}

#[pyfunction]
fn probe_quenched_lower<'py>(
    py: Python<'py>,
    field: &PyField,
    env: &Bound<'py, PyAny>,
    run: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let env: EnvConfig = from_py(env)?;
    let run: QuenchedRunConfig = from_py(run)?;
    let probe = py.detach(|| lyapunov::probe_quenched_lower(&field.0, &env, &run)).map_err(err)?;
    to_py(py, &probe)
}

#[pyfunction]
fn probe_init_invariance<'py>(
    py: Python<'py>,
    field: &PyField,
    config: &Bound<'py, PyAny>,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg: InitProbeConfig = from_py(config)?;
    let probe = py.detach(|| lyapunov::probe_init_invariance(&field.0, &cfg)).map_err(err)?;
    to_py(py, &probe)
}

#[pymodule]
fn pam_conductance(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("PamError", py.get_type::<PamError>())?;
    m.add("BudgetError", py.get_type::<BudgetError>())?;
    m.add_class::<PyLattice>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyOperator>()?;
    m.add_function(wrap_pyfunction!(white_noise_operator, m)?)?;
    m.add_function(wrap_pyfunction!(finite_rw_operator, m)?)?;
    m.add_function(wrap_pyfunction!(infinite_rw_operator, m)?)?;
    m.add_function(wrap_pyfunction!(spin_flip_operator, m)?)?;
    m.add_function(wrap_pyfunction!(kappa_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_path, m)?)?;
    m.add_function(wrap_pyfunction!(girsanov_log_weight, m)?)?;
    m.add_function(wrap_pyfunction!(annealed_moment, m)?)?;
    m.add_function(wrap_pyfunction!(green_function, m)?)?;
    m.add_function(wrap_pyfunction!(quenched_exponent, m)?)?;
    m.add_function(wrap_pyfunction!(environment_events, m)?)?;
    m.add_function(wrap_pyfunction!(detailed_balance_residual, m)?)?;
    m.add_function(wrap_pyfunction!(probe_annealed_sup, m)?)?;
    m.add_function(wrap_pyfunction!(probe_quenched_lower, m)?)?;
    m.add_function(wrap_pyfunction!(probe_init_invariance, m)?)?;
    Ok(())
}
