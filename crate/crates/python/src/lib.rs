//! Python bindings: model files, stability analysis, simulation and synthesis.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use posjump::analyzer;
use posjump::cli::{report_for, simulation_model, validate_file};
use posjump::io::ModelFile;
use posjump::simulator::{self, EnsembleOptions, NormKind};
use posjump::{stabilizer, Error, MultiIndexBasis};

fn err(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Converts any serializable result into plain Python objects.
fn to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(PyValueError::new_err("matrix rows must have equal length"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A parsed model or synthesis file.
#[pyclass(name = "Model")]
struct PyModel {
    file: ModelFile,
}

impl PyModel {
    fn is_markov(&self) -> bool {
        matches!(self.file.kind.name(), "markov" | "synthesis")
    }
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        ModelFile::load(&path)
            .map(|file| Self { file })
            .map_err(err)
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        ModelFile::parse(text)
            .map(|file| Self { file })
            .map_err(err)
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.file.kind.name()
    }

    #[getter]
    fn parameters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for (k, v) in &self.file.parameters {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    fn set_parameter(&mut self, name: &str, value: f64) -> PyResult<()> {
        self.file.set_parameter(name, value).map_err(err)
    }

    /// Raises `ValueError` if the model violates the standing assumptions.
    fn validate(&self) -> PyResult<()> {
        validate_file(&self.file).map_err(err)
    }

    /// Stability report; Markov and synthesis files use the Hurwitz criterion.
    #[pyo3(signature = (degree = 1))]
    fn analyze<'py>(&self, py: Python<'py>, degree: usize) -> PyResult<Bound<'py, PyAny>> {
        let report = py
            .detach(|| report_for(&self.file, degree, self.is_markov()))
            .map_err(err)?;
        to_py(py, &report)
    }

    /// Indicator over `lo, lo + step, ..., hi` with boundary brackets.
    #[pyo3(signature = (name, lo, hi, step, degree = 1))]
    fn sweep<'py>(
        &self,
        py: Python<'py>,
        name: &str,
        lo: f64,
        hi: f64,
        step: f64,
        degree: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        if !self.file.parameters.contains_key(name) {
            return Err(PyValueError::new_err(format!("unknown parameter `{name}`")));
        }
        let values = analyzer::grid(lo, hi, step).map_err(err)?;
        let markov = self.is_markov();
        let table = py.detach(|| {
            analyzer::sweep(name, degree, &values, |v| {
                report_for(&self.file.with_parameter(name, v)?, degree, markov)
            })
        });
        to_py(py, &table)
    }

    /// One sample path on `[0, horizon]`: keys `t`, `x`, `mode` (0-based) and `switch_times`.
    #[pyo3(signature = (horizon, dt = None, seed = 0))]
    fn simulate<'py>(
        &self,
        py: Python<'py>,
        horizon: f64,
        dt: Option<f64>,
        seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let path = py
            .detach(|| {
                let (model, _) = simulation_model(&self.file, horizon)?;
                let (x0, mode) = self.file.initial_condition(model.dim())?;
                simulator::simulate_path(
                    &model,
                    &x0,
                    mode,
                    horizon,
                    dt.unwrap_or(horizon / 1000.0),
                    seed,
                )
            })
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("t", &path.times)?;
        let xs: Vec<Vec<f64>> = path
            .states
            .iter()
            .map(|x| x.iter().copied().collect())
            .collect();
        d.set_item("x", xs)?;
        d.set_item("mode", &path.grid_modes)?;
        d.set_item("switch_times", &path.switch_times)?;
        d.set_item("diverged", path.diverged)?;
        Ok(d)
    }

    /// Monte-Carlo estimate of `E[|x(t)|^degree]` on the output grid.
    #[pyo3(signature = (horizon, paths, dt = None, seed = 0, degree = 1, norm = "euclidean"))]
    #[allow(clippy::too_many_arguments)]
    fn mean_norm<'py>(
        &self,
        py: Python<'py>,
        horizon: f64,
        paths: usize,
        dt: Option<f64>,
        seed: u64,
        degree: usize,
        norm: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let norm = match norm {
            "euclidean" => NormKind::Euclidean,
            "manhattan" => NormKind::Manhattan,
            other => return Err(PyValueError::new_err(format!("unknown norm `{other}`"))),
        };
        let stats = py
            .detach(|| {
                let (model, _) = simulation_model(&self.file, horizon)?;
                let (x0, mode) = self.file.initial_condition(model.dim())?;
                let opts = EnsembleOptions {
                    norm,
                    lifted: false,
                };
                let dt = dt.unwrap_or(horizon / 1000.0);
                simulator::estimate_mean_norm(
                    &model, &x0, mode, degree, horizon, dt, paths, seed, opts,
                )
            })
            .map_err(err)?;
        to_py(py, &stats)
    }

    /// Multistart synthesis of gains and switching rates.
    #[pyo3(signature = (multistart = 20, seed = 0, qbar = None, gamma = None))]
    fn stabilize<'py>(
        &self,
        py: Python<'py>,
        multistart: usize,
        seed: u64,
        qbar: Option<f64>,
        gamma: Option<f64>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mut problem = self.file.synthesis().map_err(err)?;
        if let Some(q) = qbar {
            problem.rate_cap = Some(q);
        }
        if let Some(g) = gamma {
            problem.gamma = g;
        }
        let result = py
            .detach(|| stabilizer::solve(&problem, multistart, seed))
            .map_err(err)?;
        to_py(py, &result)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(kind={:?}, parameters={:?})",
            self.kind(),
            self.file.parameters
        )
    }
}

/// Weighted monomial lift of a vector.
#[pyfunction]
fn lift_vector(x: Vec<f64>, degree: usize) -> PyResult<Vec<f64>> {
    let basis = MultiIndexBasis::new(x.len(), degree).map_err(err)?;
    Ok(basis
        .lift_vector(&x)
        .map_err(err)?
        .iter()
        .copied()
        .collect())
}

/// Power lift `A^[m]`, or the infinitesimal lift `A_[m]` when `infinitesimal` is set.
#[pyfunction]
#[pyo3(signature = (a, degree, infinitesimal = false))]
fn lift_matrix(a: Vec<Vec<f64>>, degree: usize, infinitesimal: bool) -> PyResult<Vec<Vec<f64>>> {
    let a = matrix(a)?;
    let basis = MultiIndexBasis::new(a.nrows(), degree).map_err(err)?;
    let lifted = if infinitesimal {
        basis.lift_matrix_infinitesimal(&a)
    } else {
        basis.lift_matrix_power(&a)
    }
    .map_err(err)?;
    Ok(rows(&lifted.into_inner()))
}

/// Spectral radius (`"schur"`) or spectral abscissa (`"hurwitz"`) of a square matrix.
#[pyfunction]
#[pyo3(signature = (a, criterion = "schur"))]
fn spectral_indicator(a: Vec<Vec<f64>>, criterion: &str) -> PyResult<f64> {
    let a = matrix(a)?;
    let v = match criterion {
        "schur" => analyzer::spectral::spectral_radius(&a),
        "hurwitz" => analyzer::spectral::spectral_abscissa(&a),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown criterion `{other}`"
            )))
        }
    }
    .map_err(err)?;
    Ok(v.value)
}

#[pymodule]
#[pyo3(name = "posjump")]
fn posjump_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(lift_vector, m)?)?;
    m.add_function(wrap_pyfunction!(lift_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_indicator, m)?)?;
    Ok(())
}
