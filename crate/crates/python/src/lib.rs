//! Python bindings: networks, the Bayesian model, per-node design and Monte
//! Carlo validation. Structured results cross the boundary as dicts.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

use seqjde::design::{
    dual_ascent_fallback, solve_coefficients, solve_coefficients_cutting_plane, ClarabelSolver,
    CuttingPlaneSettings, DesignOutcome, DesignSpec, DualAscentSettings, ErrorConstraints, NodeContext,
};
use seqjde::model::HypothesisModel;
use seqjde::network::{generate_geometric_network, NetworkGraph, StateStats, WeightMatrix};
use seqjde::policy::{EvaluationSettings, PolicyTable, StateGrid};

fn py_err(e: seqjde::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Serializes through JSON into native Python objects.
fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

/// Undirected sensor network with equal-neighbour consensus weights.
#[pyclass(name = "Network", module = "pyseqjde")]
#[derive(Clone)]
struct PyNetwork {
    graph: NetworkGraph,
    weights: WeightMatrix,
}

impl PyNetwork {
    fn wrap(graph: NetworkGraph) -> Self {
        let weights = WeightMatrix::equal(&graph);
        Self { graph, weights }
    }
}

#[pymethods]
impl PyNetwork {
    /// Connected random geometric graph on the unit square.
    #[staticmethod]
    fn geometric(nodes: usize, d_com: f64, seed: u64) -> PyResult<Self> {
        generate_geometric_network(nodes, d_com, seed).map(Self::wrap).map_err(py_err)
    }

    #[staticmethod]
    fn from_edges(nodes: usize, edges: Vec<(usize, usize)>) -> PyResult<Self> {
        NetworkGraph::from_edges(nodes, &edges).map(Self::wrap).map_err(py_err)
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.graph.node_count()
    }

    fn edges(&self) -> Vec<(usize, usize)> {
        self.graph.edges()
    }

    /// Row-stochastic combination weights as nested lists.
    fn weights(&self) -> Vec<Vec<f64>> {
        let m = self.weights.matrix();
        (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
    }

    /// `variance[k][n]` of node k's state at time n (index 0 is unused).
    fn state_variances(&self, sigma: f64, horizon: usize) -> PyResult<Vec<Vec<f64>>> {
        let stats = StateStats::compute(&self.weights, sigma, horizon).map_err(py_err)?;
        Ok((0..stats.node_count())
            .map(|k| (0..=horizon).map(|n| if n == 0 { f64::NAN } else { stats.state_var(k, n) }).collect())
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Network(nodes={}, edges={})", self.graph.node_count(), self.graph.edges().len())
    }
}

/// Gaussian observations with a hypothesis-dependent Gaussian mean.
#[pyclass(name = "Model", module = "pyseqjde")]
#[derive(Clone)]
struct PyModel {
    inner: HypothesisModel,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (sigma = 4.0, means = (-2.0, 2.0), stds = (0.5, 0.5), p1 = 0.5))]
    fn new(sigma: f64, means: (f64, f64), stds: (f64, f64), p1: f64) -> PyResult<Self> {
        HypothesisModel::new(sigma, [means.0, means.1], [stds.0, stds.1], p1)
            .map(|inner| Self { inner })
            .map_err(py_err)
    }

    /// `[P(H0 | s), P(H1 | s)]` for a state with the given variance.
    fn hypothesis_posterior(&self, s: f64, state_var: f64) -> [f64; 2] {
        self.inner.hypothesis_posterior(s, state_var)
    }

    /// `(mean, variance)` of the parameter given the state and hypothesis `i`.
    fn theta_posterior(&self, s: f64, state_var: f64, i: usize) -> PyResult<(f64, f64)> {
        if i > 1 {
            return Err(PyValueError::new_err("hypothesis index must be 0 or 1"));
        }
        Ok(self.inner.theta_posterior(s, state_var, i))
    }
}

/// Designed policy of one node.
#[pyclass(name = "Policy", module = "pyseqjde")]
#[derive(Clone)]
struct PyPolicy {
    outcome: DesignOutcome,
}

#[pymethods]
impl PyPolicy {
    #[getter]
    fn node(&self) -> usize {
        self.outcome.node
    }

    /// `[λ0, λ1, μ0, μ1]`.
    #[getter]
    fn coefficients(&self) -> [f64; 4] {
        self.outcome.coefficients.as_array()
    }

    /// Metrics under the evaluation kernel.
    fn evaluated(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.outcome.evaluated)
    }

    /// Metrics under the design kernels.
    fn design_metrics(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.outcome.design_metrics)
    }

    /// `(stop, decide_h1, estimate)` at state `s` and time `n >= 1`.
    fn action(&self, n: usize, s: f64) -> PyResult<(bool, bool, f64)> {
        let p = &self.outcome.policy;
        if n == 0 || n > p.horizon {
            return Err(PyValueError::new_err(format!("time must lie in 1..={}", p.horizon)));
        }
        Ok(p.lookup(n, s))
    }

    fn to_json(&self) -> PyResult<String> {
        self.outcome.policy.to_json().map_err(py_err)
    }
}

/// Designs node `node`'s policy. `method` is "cutting-plane", "lp" or "dual-ascent".
#[pyfunction]
#[pyo3(signature = (
    network, model, node, alpha = (0.01, 0.01), beta = (0.2, 0.2), horizon = 20,
    grid_points = 601, n_samp = 10_000, seed = 1, method = "cutting-plane",
))]
#[allow(clippy::too_many_arguments)]
fn design_node(
    py: Python<'_>,
    network: &PyNetwork,
    model: &PyModel,
    node: usize,
    alpha: (f64, f64),
    beta: (f64, f64),
    horizon: usize,
    grid_points: usize,
    n_samp: usize,
    seed: u64,
    method: &str,
) -> PyResult<PyPolicy> {
    let constraints = ErrorConstraints::new([alpha.0, alpha.1], [beta.0, beta.1]).map_err(py_err)?;
    let spec = DesignSpec {
        constraints,
        horizon,
        grid: StateGrid::new(-9.0, 9.0, grid_points).map_err(py_err)?,
        n_samp,
        seed,
        tolerance: 1e-8,
        evaluation: EvaluationSettings::default(),
    };
    spec.validate().map_err(py_err)?;
    if node >= network.graph.node_count() {
        return Err(PyValueError::new_err(format!("node {node} is not in the network")));
    }
    let method = method.to_owned();
    py.allow_threads(|| {
        let stats = StateStats::compute(&network.weights, model.inner.sigma(), horizon)?;
        let ctx = NodeContext::build(&model.inner, &stats, node, &spec)?;
        match method.as_str() {
            "cutting-plane" => solve_coefficients_cutting_plane(&spec, &ctx, &CuttingPlaneSettings::default()),
            "lp" => solve_coefficients(&spec, &ctx, &ClarabelSolver::new(spec.tolerance)),
            "dual-ascent" => dual_ascent_fallback(&spec, &ctx, &DualAscentSettings::default()),
            other => Err(seqjde::Error::InvalidParameter(format!("unknown design method {other:?}"))),
        }
    })
    .map(|outcome| PyPolicy { outcome })
    .map_err(py_err)
}

/// Monte Carlo validation of one policy per node; returns the summary dict.
#[pyfunction]
#[pyo3(signature = (network, model, policies, runs = 10_000, seed = 1, workers = 0))]
fn monte_carlo(
    py: Python<'_>,
    network: &PyNetwork,
    model: &PyModel,
    policies: Vec<PyPolicy>,
    runs: u64,
    seed: u64,
    workers: usize,
) -> PyResult<PyObject> {
    let tables: Vec<PolicyTable> = policies.into_iter().map(|p| p.outcome.policy).collect();
    let summary = py
        .allow_threads(|| seqjde::simulate::monte_carlo(&tables, &network.weights, &model.inner, runs, seed, workers))
        .map_err(py_err)?;
    to_py(py, &summary)
}

#[pymodule]
pub fn pyseqjde(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyPolicy>()?;
    m.add_function(wrap_pyfunction!(design_node, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo, m)?)?;
    Ok(())
}
