//! Python bindings for the service-network design toolkit: instance
//! generation and I/O, the solution methods (direct MILP, fixed-partition
//! Benders, and the adaptive two-phase controller), root-relaxation
//! comparisons, and product-partition construction.
//!
//! Build as a cdylib (`cargo build -p lsndp-py`); the module is importable
//! as `lsndp_py` once the shared library is on `sys.path` under that name.

use lsndp::bench::{root_study, run_method, BenchError, Method};
use lsndp::generator::{generate as gen_instance, generate_exact_aggregatable, GeneratorParams};
use lsndp::instance::{load_instance, save_instance, Instance};
use lsndp::metapbd::{events_to_jsonl, MetaError, MetaParams, WallClock};
use lsndp::partition::{build_partition_sequence, refine_to_exact};
use lsndp::solver::backend_from_env;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

/// Usage errors (bad input, bad configuration) become `ValueError`; solver
/// and model failures become `RuntimeError`.
fn bench_err(e: BenchError) -> PyErr {
    match e {
        BenchError::Meta(MetaError::Infeasible) => {
            PyValueError::new_err(format!("infeasible instance: {e}"))
        }
        BenchError::Meta(_) | BenchError::Solver(_) | BenchError::Model(_) | BenchError::Solve(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// A service-network design instance: nodes, arcs, products, and demands
/// over a discrete planning horizon.
#[pyclass(name = "Instance", module = "lsndp_py")]
#[derive(Clone)]
struct PyInstance {
    inner: Instance,
}

#[pymethods]
impl PyInstance {
    /// Parse an instance from its JSON text.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: Instance = serde_json::from_str(text).map_err(value_err)?;
        Ok(Self { inner })
    }

    /// Load an instance from a JSON file (validated).
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: load_instance(path).map_err(value_err)? })
    }

    /// Serialize to pretty-printed JSON.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string_pretty(&self.inner).map_err(value_err)
    }

    /// Write to a JSON file.
    fn save(&self, path: &str) -> PyResult<()> {
        save_instance(&self.inner, path).map_err(value_err)
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.nodes.len()
    }

    #[getter]
    fn n_arcs(&self) -> usize {
        self.inner.arcs.len()
    }

    #[getter]
    fn n_demands(&self) -> usize {
        self.inner.demands.len()
    }

    #[getter]
    fn products(&self) -> Vec<String> {
        self.inner.catalog.products.clone()
    }

    #[getter]
    fn families(&self) -> Vec<Vec<String>> {
        self.inner
            .catalog
            .families
            .iter()
            .map(|f| f.iter().cloned().collect())
            .collect()
    }

    #[getter]
    fn horizon_periods(&self) -> u32 {
        self.inner.horizon_periods()
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(nodes={}, arcs={}, products={}, demands={}, periods={})",
            self.inner.nodes.len(),
            self.inner.arcs.len(),
            self.inner.catalog.products.len(),
            self.inner.demands.len(),
            self.inner.horizon_periods()
        )
    }
}

/// Outcome of one solve: bounds, gap, effort counters, the visited
/// aggregation levels, and the run's event log.
#[pyclass(name = "SolveReport", module = "lsndp_py")]
struct PySolveReport {
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    ub: f64,
    #[pyo3(get)]
    lb: f64,
    #[pyo3(get)]
    gap: f64,
    #[pyo3(get)]
    wall_seconds: f64,
    #[pyo3(get)]
    k_trajectory: Vec<usize>,
    #[pyo3(get)]
    n_cuts: usize,
    #[pyo3(get)]
    n_master_solutions: usize,
    #[pyo3(get)]
    n_subproblems: usize,
    #[pyo3(get)]
    n_subproblems_feasible: usize,
    /// The run's event log, one JSON object per line.
    #[pyo3(get)]
    events_jsonl: String,
    record_json: String,
}

#[pymethods]
impl PySolveReport {
    /// The full run record as a JSON string.
    fn to_json(&self) -> String {
        self.record_json.clone()
    }

    fn __repr__(&self) -> String {
        format!(
            "SolveReport(method={}, ub={}, lb={}, gap={:.6}, wall={:.3}s)",
            self.method, self.ub, self.lb, self.gap, self.wall_seconds
        )
    }
}

/// One root-relaxation comparison row at aggregation level `k`.
#[pyclass(name = "RootPoint", module = "lsndp_py")]
struct PyRootPoint {
    #[pyo3(get)]
    k: usize,
    /// Root of the aggregated master's LP relaxation.
    #[pyo3(get)]
    master_root: f64,
    /// Root of the full model's LP relaxation.
    #[pyo3(get)]
    lsndp_root: f64,
    /// Fraction of the full root the aggregation gives up, clamped at 0.
    #[pyo3(get)]
    lb_root_gap: f64,
    /// Master root time over full root time.
    #[pyo3(get)]
    root_time_ratio: f64,
}

#[pymethods]
impl PyRootPoint {
    fn __repr__(&self) -> String {
        format!(
            "RootPoint(k={}, lb_root_gap={:.6}, root_time_ratio={:.4})",
            self.k, self.lb_root_gap, self.root_time_ratio
        )
    }
}

/// Generate a deterministic random instance.
///
/// `config_json` (a GeneratorParams JSON object) seeds the parameter set;
/// the keyword arguments override individual fields.  With `exact_subsets`
/// set, offers are made all-or-nothing so that many family-aligned subsets
/// aggregate without loss.
#[pyfunction]
#[pyo3(signature = (seed=0, n_nodes=None, n_products=None, n_families=None, days=None,
                    periods_per_day=None, supply_probability=None, demand_density=None,
                    exact_subsets=None, config_json=None))]
#[allow(clippy::too_many_arguments)]
fn generate(
    seed: u64,
    n_nodes: Option<usize>,
    n_products: Option<usize>,
    n_families: Option<usize>,
    days: Option<u32>,
    periods_per_day: Option<u32>,
    supply_probability: Option<f64>,
    demand_density: Option<f64>,
    exact_subsets: Option<usize>,
    config_json: Option<&str>,
) -> PyResult<PyInstance> {
    let mut params: GeneratorParams = match config_json {
        Some(text) => serde_json::from_str(text).map_err(value_err)?,
        None => GeneratorParams::default(),
    };
    params.seed = seed;
    if let Some(v) = n_nodes {
        params.n_nodes = v;
    }
    if let Some(v) = n_products {
        params.n_products = v;
    }
    if let Some(v) = n_families {
        params.n_families = v;
    }
    if let Some(v) = days {
        params.days = v;
    }
    if let Some(v) = periods_per_day {
        params.periods_per_day = v;
    }
    if let Some(v) = supply_probability {
        params.supply_probability = v;
    }
    if let Some(v) = demand_density {
        params.demand_density = v;
    }
    let inner = match exact_subsets {
        Some(k) => generate_exact_aggregatable(&params, k).map_err(value_err)?,
        None => gen_instance(&params).map_err(value_err)?,
    };
    Ok(PyInstance { inner })
}

/// Solve an instance with one method: "direct", "single", "families",
/// "random", "meta_pbd", "phase1_only", or "phase2_only".
#[pyfunction]
#[pyo3(signature = (instance, method="meta_pbd", time_limit=600.0, gap=0.01, k_max=10, seed=0))]
fn solve(
    instance: &PyInstance,
    method: &str,
    time_limit: f64,
    gap: f64,
    k_max: usize,
    seed: u64,
) -> PyResult<PySolveReport> {
    let method: Method = method.parse().map_err(bench_err)?;
    let params = MetaParams { gap, k_max, seed, ..MetaParams::with_time_limit(time_limit) };
    let backend = backend_from_env().map_err(|e| bench_err(e.into()))?;
    let (record, events) = run_method(
        &instance.inner,
        "instance",
        method,
        &params,
        backend.as_ref(),
        &WallClock::new(),
    )
    .map_err(bench_err)?;
    Ok(PySolveReport {
        method: record.method.clone(),
        ub: record.ub,
        lb: record.lb,
        gap: record.gap,
        wall_seconds: record.wall_seconds,
        k_trajectory: record.k_trajectory.clone(),
        n_cuts: record.n_cuts,
        n_master_solutions: record.n_master_solutions,
        n_subproblems: record.n_subproblems,
        n_subproblems_feasible: record.n_subproblems_feasible,
        events_jsonl: events_to_jsonl(&events),
        record_json: serde_json::to_string_pretty(&record).map_err(value_err)?,
    })
}

/// Compare aggregated-master LP roots against the full model's at the given
/// aggregation levels.
#[pyfunction]
#[pyo3(signature = (instance, ks, seed=0))]
fn root_comparison(instance: &PyInstance, ks: Vec<usize>, seed: u64) -> PyResult<Vec<PyRootPoint>> {
    let backend = backend_from_env().map_err(|e| bench_err(e.into()))?;
    let rows = root_study(&instance.inner, &ks, seed, backend.as_ref()).map_err(bench_err)?;
    Ok(rows
        .into_iter()
        .map(|r| PyRootPoint {
            k: r.k,
            master_root: r.master_root,
            lsndp_root: r.lsndp_root,
            lb_root_gap: r.lb_root_gap,
            root_time_ratio: r.root_time_ratio,
        })
        .collect())
}

/// The coarsest partition whose subsets aggregate without loss: products
/// grouped by identical supplier sets.
#[pyfunction]
#[pyo3(signature = (instance, seed=0))]
fn exact_partition(instance: &PyInstance, seed: u64) -> PyResult<Vec<Vec<String>>> {
    let part = refine_to_exact(&instance.inner.catalog, seed).map_err(value_err)?;
    Ok(part
        .subsets()
        .iter()
        .map(|s| s.iter().cloned().collect())
        .collect())
}

/// The nested partition chain used by the adaptive search: for each level
/// `k` from 1 to the returned depth, a partition with `k` subsets, each a
/// refinement of the previous level.
#[pyfunction]
#[pyo3(signature = (instance, k_max=10, seed=0))]
fn partition_levels(
    instance: &PyInstance,
    k_max: usize,
    seed: u64,
) -> PyResult<Vec<Vec<Vec<String>>>> {
    let seq = build_partition_sequence(&instance.inner.catalog, k_max, seed).map_err(value_err)?;
    Ok((1..=seq.max_k())
        .map(|k| {
            seq.level(k)
                .subsets()
                .iter()
                .map(|s| s.iter().cloned().collect())
                .collect()
        })
        .collect())
}

#[pymodule]
fn lsndp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyInstance>()?;
    m.add_class::<PySolveReport>()?;
    m.add_class::<PyRootPoint>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(root_comparison, m)?)?;
    m.add_function(wrap_pyfunction!(exact_partition, m)?)?;
    m.add_function(wrap_pyfunction!(partition_levels, m)?)?;
    Ok(())
}
