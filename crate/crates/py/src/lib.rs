//! Python bindings for `gw_invasion`.

use std::sync::Arc;

use gw_invasion::invasion;
use gw_invasion::measures;
use gw_invasion::pivot_chain::{self, InitialState};
use gw_invasion::{Error, ExperimentConfig, Format, NodeId, TreeArena};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidDistribution(_)
        | Error::Degenerate(_)
        | Error::Domain(_)
        | Error::Precondition(_)
        | Error::Parse(_)
        | Error::Config(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Offspring law with `P[Z = 0] = 0` and mean above one.
#[pyclass(frozen, module = "gw_invasion_py")]
pub struct OffspringDistribution(Arc<gw_invasion::OffspringDistribution>);

#[pymethods]
impl OffspringDistribution {
    /// Parse the textual form, e.g. `"family = two-point, p1 = 0.4"`.
    #[new]
    fn new(text: &str) -> PyResult<Self> {
        text.parse().map(|d| Self(Arc::new(d))).map_err(py_err)
    }

    #[staticmethod]
    fn deterministic(b: u32) -> PyResult<Self> {
        gw_invasion::OffspringDistribution::deterministic(b).map(|d| Self(Arc::new(d))).map_err(py_err)
    }

    /// `P[Z = 1] = p1`, `P[Z = 2] = 1 - p1`.
    #[staticmethod]
    fn two_point(p1: f64) -> PyResult<Self> {
        gw_invasion::OffspringDistribution::two_point(p1).map(|d| Self(Arc::new(d))).map_err(py_err)
    }

    #[staticmethod]
    fn poisson_positive(lam: f64) -> PyResult<Self> {
        gw_invasion::OffspringDistribution::poisson_positive(lam).map(|d| Self(Arc::new(d))).map_err(py_err)
    }

    /// From `[(k, p_k), ...]`.
    #[staticmethod]
    fn from_pmf(pairs: Vec<(u32, f64)>) -> PyResult<Self> {
        gw_invasion::OffspringDistribution::from_pmf(&pairs).map(|d| Self(Arc::new(d))).map_err(py_err)
    }

    #[getter]
    fn mean(&self) -> f64 {
        self.0.mean()
    }

    #[getter]
    fn variance(&self) -> f64 {
        self.0.variance()
    }

    #[getter]
    fn p1(&self) -> f64 {
        self.0.p1()
    }

    #[getter]
    fn p_c(&self) -> f64 {
        1.0 / self.0.mean()
    }

    /// Generating function.
    fn phi(&self, z: f64) -> PyResult<f64> {
        self.0.phi(z).map_err(py_err)
    }

    fn pmf(&self) -> Vec<(u32, f64)> {
        self.0.support().collect()
    }

    /// `{"mu", "phi2", "p_c", "k", "q_ratio"}`.
    fn constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.0.constants().map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("mu", c.mu)?;
        d.set_item("phi2", c.phi2)?;
        d.set_item("p_c", c.p_c)?;
        d.set_item("k", c.k)?;
        d.set_item("q_ratio", c.q_ratio)?;
        Ok(d)
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("OffspringDistribution({:?})", self.0.to_string())
    }
}

/// Annealed survival probability `g(p)` of the open cluster.
#[pyclass(frozen, module = "gw_invasion_py")]
pub struct SurvivalSolver(gw_invasion::SurvivalSolver);

#[pymethods]
impl SurvivalSolver {
    #[new]
    fn new(dist: &OffspringDistribution) -> PyResult<Self> {
        gw_invasion::SurvivalSolver::new(dist.0.clone()).map(Self).map_err(py_err)
    }

    #[getter]
    fn p_c(&self) -> f64 {
        self.0.p_c()
    }

    fn g(&self, p: f64) -> PyResult<f64> {
        self.0.g(p).map_err(py_err)
    }

    fn g_prime(&self, p: f64) -> PyResult<f64> {
        self.0.g_prime(p).map_err(py_err)
    }

    fn g_inverse(&self, y: f64) -> PyResult<f64> {
        self.0.g_inverse(y).map_err(py_err)
    }

    /// `[(p, g, g'), ...]` over `grid`.
    fn table(&self, grid: Vec<f64>) -> PyResult<Vec<(f64, f64, f64)>> {
        grid.into_iter().map(|p| Ok((p, self.g(p)?, self.g_prime(p)?))).collect()
    }
}

/// Transition kernel of the pivot chain in `h = p - p_c` coordinates.
#[pyclass(frozen, module = "gw_invasion_py")]
pub struct PivotKernel(pivot_chain::PivotKernel);

#[pymethods]
impl PivotKernel {
    #[new]
    fn new(dist: &OffspringDistribution) -> PyResult<Self> {
        let s = gw_invasion::SurvivalSolver::new(dist.0.clone()).map_err(py_err)?;
        pivot_chain::PivotKernel::new(s).map(Self).map_err(py_err)
    }

    #[getter]
    fn p_c(&self) -> f64 {
        self.0.p_c()
    }

    /// Mass the kernel from `a` puts on staying at `a`.
    fn atom(&self, a: f64) -> f64 {
        self.0.atom(a)
    }

    /// Density of the continuous part at `x < a`.
    fn density(&self, a: f64, x: f64) -> f64 {
        self.0.density_h(a, x)
    }

    /// One chain path of `n` steps; returns `(h, h_star)`, with `h_star`
    /// `None` unless `joint`. `h0 = None` draws the start from the pivot law.
    #[pyo3(signature = (n, seed=1, replicate=0, joint=false, h0=None))]
    fn run(
        &self,
        n: usize,
        seed: u64,
        replicate: u64,
        joint: bool,
        h0: Option<f64>,
    ) -> PyResult<(Vec<f64>, Option<Vec<f64>>)> {
        let init = h0.map_or(InitialState::SampleFromL, InitialState::Value);
        let path = pivot_chain::run_chain(&self.0, init, n, seed, replicate, joint).map_err(py_err)?;
        Ok((path.h, path.h_star))
    }
}

/// Invade `steps` vertices of a fresh tree; rows are
/// `(step, node_id, depth, u_weight)`.
#[pyfunction]
#[pyo3(signature = (dist, steps, seed=1, replicate=0))]
fn invade(
    py: Python<'_>,
    dist: &OffspringDistribution,
    steps: usize,
    seed: u64,
    replicate: u64,
) -> PyResult<Vec<(usize, u32, u32, f64)>> {
    let d = dist.0.clone();
    py.detach(move || {
        let mut arena = TreeArena::replicate(d, seed, replicate);
        let run = invasion::invade(&mut arena, steps)?;
        Ok(run
            .invaded()
            .iter()
            .enumerate()
            .map(|(i, &v): (usize, &NodeId)| (i, v.0, arena.depth(v), arena.weight(v)))
            .collect())
    })
    .map_err(py_err)
}

/// Sufficient condition for absolute continuity of the invasion measures,
/// as `{"holds", "margin", "q"}`; `p` may be `inf`.
#[pyfunction]
fn main_theorem_condition<'py>(py: Python<'py>, p: f64, p1: f64, mu: f64) -> PyResult<Bound<'py, PyDict>> {
    let v = measures::main_theorem_condition(p, p1, mu).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("holds", v.holds)?;
    d.set_item("margin", v.margin)?;
    d.set_item("q", v.q)?;
    Ok(d)
}

/// Outcome of an experiment run.
#[pyclass(frozen, module = "gw_invasion_py")]
pub struct Report(gw_invasion::ExperimentReport);

#[pymethods]
impl Report {
    #[getter]
    fn experiment(&self) -> String {
        self.0.experiment.to_string()
    }

    #[getter]
    fn all_pass(&self) -> bool {
        self.0.all_pass()
    }

    /// `[(id, name, statistic, tolerance, passed), ...]`.
    #[getter]
    fn verdicts(&self) -> Vec<(String, String, f64, f64, bool)> {
        self.0.verdicts.iter().map(|v| (v.id.clone(), v.name.clone(), v.statistic, v.tolerance, v.pass)).collect()
    }

    #[getter]
    fn notes(&self) -> Vec<String> {
        self.0.notes.clone()
    }

    fn to_csv(&self) -> String {
        self.0.render(Format::Csv)
    }

    fn to_json(&self) -> String {
        self.0.render(Format::Json)
    }
}

/// Run an experiment described in the `key = value` config format.
#[pyfunction]
#[pyo3(signature = (config, threads=None))]
fn run_experiment(py: Python<'_>, config: &str, threads: Option<usize>) -> PyResult<Report> {
    let cfg: ExperimentConfig = config.parse().map_err(py_err)?;
    py.detach(|| gw_invasion::run_with_threads(&cfg, threads)).map(Report).map_err(py_err)
}

#[pymodule]
fn gw_invasion_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<OffspringDistribution>()?;
    m.add_class::<SurvivalSolver>()?;
    m.add_class::<PivotKernel>()?;
    m.add_class::<Report>()?;
    m.add_function(wrap_pyfunction!(invade, m)?)?;
    m.add_function(wrap_pyfunction!(main_theorem_condition, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
