//! Python bindings. Structured results (reports, decompositions, witnesses)
//! are returned as plain dicts decoded from their JSON form.

use bellkit_core::dynamics::{self, DetectorConfig, SystemParams, TrajectoryFamily};
use bellkit_core::feasibility;
use bellkit_core::io::{self, ModelContent, ModelFile};
use bellkit_core::properties::{self, RelabelMap};
use bellkit_core::scenarios::{self, DirectionSet};
use bellkit_core::{Behavior as CoreBehavior, HiddenVariableModel, ScenarioShape, Tolerances};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;

fn to_py_err(e: bellkit_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn tolerances(tol: f64) -> PyResult<Tolerances> {
    let d = Tolerances::default();
    Tolerances::new(d.norm, tol, d.support).map_err(to_py_err)
}

fn relabel_map(shape: &ScenarioShape, relabel: Option<Vec<usize>>) -> PyResult<RelabelMap> {
    match relabel {
        Some(map) => RelabelMap::new(map, shape),
        None => RelabelMap::identity(shape),
    }
    .map_err(to_py_err)
}

fn shape_dict(py: Python<'_>, shape: &ScenarioShape) -> PyResult<Py<PyAny>> {
    to_py(py, shape)
}

/// Observed statistics `p(a,b|x,y)`.
#[pyclass(module = "bellkit", frozen)]
pub struct Behavior {
    inner: CoreBehavior,
}

#[pymethods]
impl Behavior {
    /// Builds a behavior from its labels and a row-major `(x, y, a, b)` table.
    #[new]
    fn new(
        settings_a: Vec<String>,
        settings_b: Vec<String>,
        outcomes_a: Vec<String>,
        outcomes_b: Vec<String>,
        table: Vec<f64>,
    ) -> PyResult<Self> {
        let shape = ScenarioShape::new(settings_a, settings_b, outcomes_a, outcomes_b, Vec::new())
            .map_err(to_py_err)?;
        let inner = CoreBehavior::new(shape, table).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    fn shape(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        shape_dict(py, self.inner.shape())
    }

    fn get(&self, x: usize, y: usize, a: usize, b: usize) -> f64 {
        self.inner.get(x, y, a, b)
    }

    fn table(&self) -> Vec<f64> {
        self.inner.table().to_vec()
    }

    #[pyo3(signature = (tol = 1e-9))]
    fn validate(&self, py: Python<'_>, tol: f64) -> PyResult<Py<PyAny>> {
        to_py(
            py,
            &self.inner.validate(&tolerances(tol)?).map_err(to_py_err)?,
        )
    }

    /// Wraps the behavior as a model with one λ.
    #[pyo3(signature = (label = "psi"))]
    fn as_model(&self, label: &str) -> PyResult<Model> {
        let inner = self.inner.as_singleton_model(label).map_err(to_py_err)?;
        Ok(Model { inner })
    }

    fn chsh(&self, x: usize, x2: usize, y: usize, y2: usize) -> PyResult<f64> {
        feasibility::chsh_value(&self.inner, x, x2, y, y2).map_err(to_py_err)
    }

    #[pyo3(signature = (x0, y0, relabel = None, tol = 1e-9))]
    fn perfect_correlation(
        &self,
        py: Python<'_>,
        x0: usize,
        y0: usize,
        relabel: Option<Vec<usize>>,
        tol: f64,
    ) -> PyResult<Py<PyAny>> {
        let r = relabel_map(self.inner.shape(), relabel)?;
        let report =
            properties::check_perfect_correlation(&self.inner, x0, y0, &r, &tolerances(tol)?)
                .map_err(to_py_err)?;
        to_py(py, &report)
    }

    #[pyo3(signature = (x0, y0, relabel = None, tol = 1e-9))]
    fn incompleteness_witness(
        &self,
        py: Python<'_>,
        x0: usize,
        y0: usize,
        relabel: Option<Vec<usize>>,
        tol: f64,
    ) -> PyResult<Py<PyAny>> {
        let r = relabel_map(self.inner.shape(), relabel)?;
        let w = scenarios::incompleteness_witness(&self.inner, x0, y0, &r, &tolerances(tol)?)
            .map_err(to_py_err)?;
        to_py(py, &w)
    }

    #[pyo3(signature = (tol = 1e-9))]
    fn local_decomposition(&self, py: Python<'_>, tol: f64) -> PyResult<Py<PyAny>> {
        to_py(
            py,
            &feasibility::local_decomposition(&self.inner, &tolerances(tol)?).map_err(to_py_err)?,
        )
    }

    #[pyo3(signature = (grid_steps = 100, tol = 1e-9, seed = feasibility::SEARCH_SEED))]
    fn search_oneway(
        &self,
        py: Python<'_>,
        grid_steps: usize,
        tol: f64,
        seed: u64,
    ) -> PyResult<Py<PyAny>> {
        let result = feasibility::search_oneway_single_lambda_seeded(
            &self.inner,
            grid_steps,
            &tolerances(tol)?,
            seed,
        )
        .map_err(to_py_err)?;
        to_py(py, &result)
    }

    fn to_json(&self) -> String {
        io::model_file_to_string(&ModelFile::behavior(self.inner.clone()))
    }

    fn __repr__(&self) -> String {
        let s = self.inner.shape();
        format!(
            "Behavior(settings={}x{}, outcomes={}x{})",
            s.n_settings_a(),
            s.n_settings_b(),
            s.n_outcomes_a(),
            s.n_outcomes_b()
        )
    }
}

/// Hidden-variable model: weights `p(λ|x,y)` and kernels `p(a,b|x,y,λ)`.
#[pyclass(module = "bellkit", frozen)]
pub struct Model {
    inner: HiddenVariableModel,
}

#[pymethods]
impl Model {
    /// Row-major `weights` over `(x, y, λ)` and `kernels` over `(x, y, λ, a, b)`.
    #[new]
    fn new(
        settings_a: Vec<String>,
        settings_b: Vec<String>,
        outcomes_a: Vec<String>,
        outcomes_b: Vec<String>,
        lambdas: Vec<String>,
        weights: Vec<f64>,
        kernels: Vec<f64>,
    ) -> PyResult<Self> {
        let shape = ScenarioShape::new(settings_a, settings_b, outcomes_a, outcomes_b, lambdas)
            .map_err(to_py_err)?;
        let inner = HiddenVariableModel::new(shape, weights, kernels).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    fn shape(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        shape_dict(py, self.inner.shape())
    }

    fn weight(&self, x: usize, y: usize, l: usize) -> f64 {
        self.inner.weight(x, y, l)
    }

    fn kernel(&self, x: usize, y: usize, l: usize, a: usize, b: usize) -> f64 {
        self.inner.kernel(x, y, l, a, b)
    }

    #[pyo3(signature = (tol = 1e-9))]
    fn validate(&self, py: Python<'_>, tol: f64) -> PyResult<Py<PyAny>> {
        to_py(
            py,
            &self.inner.validate(&tolerances(tol)?).map_err(to_py_err)?,
        )
    }

    #[pyo3(signature = (tol = 1e-9))]
    fn aggregate(&self, tol: f64) -> PyResult<Behavior> {
        let inner = self
            .inner
            .aggregate_behavior(&tolerances(tol)?)
            .map_err(to_py_err)?;
        Ok(Behavior { inner })
    }

    /// Runs one checker: `wl`, `oi`, `lc`, `mi` or `det`.
    #[pyo3(signature = (property, tol = 1e-9))]
    fn check(&self, py: Python<'_>, property: &str, tol: f64) -> PyResult<Py<PyAny>> {
        let t = tolerances(tol)?;
        let m = &self.inner;
        let report = match property {
            "wl" => properties::check_weak_locality(m, &t),
            "oi" => properties::check_outcome_independence(m, &t),
            "lc" => properties::check_local_causality(m, &t),
            "mi" => properties::check_measurement_independence(m, &t),
            "det" => properties::check_determinism(m, &t),
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown property `{other}` (expected wl, oi, lc, mi or det)"
                )))
            }
        }
        .map_err(to_py_err)?;
        to_py(py, &report)
    }

    #[pyo3(signature = (tol = 1e-9))]
    fn lc_equivalence(&self, tol: f64) -> PyResult<bool> {
        properties::verify_lc_equivalence(&self.inner, &tolerances(tol)?).map_err(to_py_err)
    }

    #[pyo3(signature = (x0, y0, relabel = None, tol = 1e-9))]
    fn verify_prop2(
        &self,
        py: Python<'_>,
        x0: usize,
        y0: usize,
        relabel: Option<Vec<usize>>,
        tol: f64,
    ) -> PyResult<Py<PyAny>> {
        let r = relabel_map(self.inner.shape(), relabel)?;
        let w = scenarios::verify_prop2(&self.inner, x0, y0, &r, &tolerances(tol)?)
            .map_err(to_py_err)?;
        to_py(py, &w)
    }

    /// Residual of the model against its own product-form one-way embedding.
    #[pyo3(signature = (w_ab = 0.0, tol = 1e-9))]
    fn oneway_embedding_residual(&self, w_ab: f64, tol: f64) -> PyResult<f64> {
        let d = feasibility::OneWayDecomposition::canonical_embedding(&self.inner, w_ab);
        let r = feasibility::verify_oneway_form(&self.inner, &d, &tolerances(tol)?)
            .map_err(to_py_err)?;
        Ok(r.max_violation)
    }

    fn to_json(&self) -> String {
        io::model_file_to_string(&ModelFile::model(self.inner.clone()))
    }

    fn __repr__(&self) -> String {
        let s = self.inner.shape();
        format!(
            "Model(settings={}x{}, outcomes={}x{}, lambdas={})",
            s.n_settings_a(),
            s.n_settings_b(),
            s.n_outcomes_a(),
            s.n_outcomes_b(),
            s.n_lambdas()
        )
    }
}

fn wrap_content(py: Python<'_>, content: ModelContent) -> PyResult<Py<PyAny>> {
    Ok(match content {
        ModelContent::Model(inner) => Py::new(py, Model { inner })?.into_any(),
        ModelContent::Behavior(inner) => Py::new(py, Behavior { inner })?.into_any(),
    })
}

/// Parses a model file; returns a `Model` or a `Behavior`.
#[pyfunction]
fn loads(py: Python<'_>, text: &str) -> PyResult<Py<PyAny>> {
    let file = io::parse_model_file(text).map_err(to_py_err)?;
    wrap_content(py, file.content)
}

fn dirs(spec: Option<&str>) -> PyResult<DirectionSet> {
    DirectionSet::parse(spec.unwrap_or("z,x")).map_err(to_py_err)
}

/// Built-in scenario by name: prop1, singlet, example1, example2, box, product, prbox.
#[pyfunction]
#[pyo3(signature = (name, n = 2, dirs_a = None, dirs_b = None))]
fn scenario(
    py: Python<'_>,
    name: &str,
    n: usize,
    dirs_a: Option<&str>,
    dirs_b: Option<&str>,
) -> PyResult<Py<PyAny>> {
    let content = match name {
        "prop1" => ModelContent::Model(scenarios::make_prop1_counterexample(n).map_err(to_py_err)?),
        "singlet" => {
            let (da, db) = match (dirs_a, dirs_b) {
                (None, None) => DirectionSet::chsh_optimal(),
                (a, b) => (dirs(a)?, dirs(b.or(a))?),
            };
            ModelContent::Behavior(scenarios::make_singlet_behavior(&da, &db).map_err(to_py_err)?)
        }
        "example1" => {
            let da = dirs(dirs_a)?;
            let db = dirs(dirs_b.or(dirs_a))?;
            ModelContent::Model(scenarios::make_example1_model(&da, &db).map_err(to_py_err)?)
        }
        "example2" => {
            ModelContent::Model(scenarios::make_example2_model(&dirs(dirs_a)?).map_err(to_py_err)?)
        }
        "box" => ModelContent::Model(scenarios::make_einstein_box_model().map_err(to_py_err)?),
        "product" => ModelContent::Model(scenarios::make_product_model().map_err(to_py_err)?),
        "prbox" => ModelContent::Behavior(scenarios::make_pr_box().map_err(to_py_err)?),
        other => return Err(PyValueError::new_err(format!("unknown scenario `{other}`"))),
    };
    wrap_content(py, content)
}

/// Two-particle solution family with pause time `pause`.
#[pyclass(module = "bellkit", frozen)]
pub struct Trajectory {
    inner: TrajectoryFamily,
}

#[pymethods]
impl Trajectory {
    #[new]
    #[pyo3(signature = (pause = 0.0, m = 1.0, gamma = 1.0, d = 1.0))]
    fn new(pause: f64, m: f64, gamma: f64, d: f64) -> PyResult<Self> {
        let params = SystemParams::new(m, gamma, d).map_err(to_py_err)?;
        let inner = TrajectoryFamily::new(params, pause).map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    #[getter]
    fn pause(&self) -> f64 {
        self.inner.pause
    }

    /// `(x_R, x_L, v_R, v_L)` at time `t`.
    fn eval(&self, t: f64) -> PyResult<(f64, f64, f64, f64)> {
        let s = dynamics::eval_trajectory(&self.inner, t).map_err(to_py_err)?;
        Ok((s.x_r, s.x_l, s.v_r, s.v_l))
    }

    fn energy(&self, t: f64) -> PyResult<f64> {
        dynamics::energy(&self.inner, t).map_err(to_py_err)
    }

    fn energy_drift(&self, grid: Vec<f64>) -> PyResult<f64> {
        dynamics::energy_drift(&self.inner, &grid).map_err(to_py_err)
    }

    fn ode_residual(&self, grid: Vec<f64>, h: f64) -> PyResult<f64> {
        dynamics::ode_residual(&self.inner, &grid, h).map_err(to_py_err)
    }

    fn detection_time(&self, position: f64) -> PyResult<f64> {
        let det = DetectorConfig::new(position, &self.inner.params).map_err(to_py_err)?;
        Ok(dynamics::detection_time(&self.inner, &det))
    }

    fn __repr__(&self) -> String {
        format!(
            "Trajectory(pause={}, tau={})",
            self.inner.pause, self.inner.tau
        )
    }
}

/// Detector readouts for several pause times, found by scanning the trajectories.
#[pyfunction]
#[pyo3(signature = (pauses, position, horizon, m = 1.0, gamma = 1.0, d = 1.0))]
fn simulate_detectors(
    py: Python<'_>,
    pauses: Vec<f64>,
    position: f64,
    horizon: f64,
    m: f64,
    gamma: f64,
    d: f64,
) -> PyResult<Py<PyAny>> {
    let params = SystemParams::new(m, gamma, d).map_err(to_py_err)?;
    let families = pauses
        .into_iter()
        .map(|t| TrajectoryFamily::new(params, t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py_err)?;
    let det = DetectorConfig::new(position, &params).map_err(to_py_err)?;
    to_py(
        py,
        &dynamics::simulate_detectors(&families, &det, horizon).map_err(to_py_err)?,
    )
}

#[pymodule]
fn bellkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Behavior>()?;
    m.add_class::<Model>()?;
    m.add_class::<Trajectory>()?;
    m.add_function(wrap_pyfunction!(loads, m)?)?;
    m.add_function(wrap_pyfunction!(scenario, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_detectors, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
