//! Python module `cgssl`: configs, the pipeline entry points and the small
//! numeric building blocks (softmax, threshold, sharpening, MixUp, losses).

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use pyo3::IntoPyObjectExt;
use serde_json::Value;

use ::cgssl as cgssl_core;
use cgssl_core::datasets::{generate_toy_dataset, split_dataset, SplitSpec};
use cgssl_core::pipeline::PipelineConfig;
use cgssl_core::tensor::Tensor;
use cgssl_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::InvalidArchitecture(_) => {
            PyValueError::new_err(e.to_string())
        }
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    match v {
        Value::Null => Ok(py.None().into_bound(py)),
        Value::Bool(b) => b.into_bound_py_any(py),
        Value::Number(n) => match (n.as_u64(), n.as_i64()) {
            (Some(u), _) => u.into_bound_py_any(py),
            (None, Some(i)) => i.into_bound_py_any(py),
            _ => n.as_f64().unwrap_or(f64::NAN).into_bound_py_any(py),
        },
        Value::String(s) => s.into_bound_py_any(py),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            Ok(list.into_any())
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            Ok(dict.into_any())
        }
    }
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    to_py(py, &v)
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows differ in length"));
    }
    Tensor::from_vec(&[n, d], rows.concat()).map_err(py_err)
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.batch()).map(|i| t.row(i).to_vec()).collect()
}

/// Pipeline configuration (the JSON document accepted by the CLI).
#[pyclass(name = "PipelineConfig", module = "cgssl", from_py_object)]
#[derive(Clone)]
struct PyPipelineConfig {
    inner: PipelineConfig,
}

#[pymethods]
impl PyPipelineConfig {
    /// The bundled desk-scale toy configuration.
    #[staticmethod]
    fn toy() -> Self {
        PyPipelineConfig {
            inner: PipelineConfig::toy(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyPipelineConfig {
            inner: PipelineConfig::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Apply a `dotted.key=value` override.
    fn set(&mut self, assignment: &str) -> PyResult<()> {
        self.inner.apply_override(assignment).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "PipelineConfig(backbone={:?}, seed={}, num_seeds={}, num_iterations={})",
            self.inner.backbone, self.inner.seed, self.inner.num_seeds, self.inner.num_iterations
        )
    }
}

/// Run the full pipeline into `run_dir`; returns the report as a dict.
#[pyfunction]
fn run_pipeline<'py>(py: Python<'py>, config: &PyPipelineConfig, run_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let report = cgssl_core::pipeline::run_pipeline(&config.inner, &run_dir).map_err(py_err)?;
    serialize(py, &report)
}

/// Run both ablation arms into `run_dir`; returns the report as a dict.
#[pyfunction]
fn run_ablation<'py>(py: Python<'py>, config: &PyPipelineConfig, run_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    let report = cgssl_core::pipeline::run_ablation(&config.inner, &run_dir).map_err(py_err)?;
    serialize(py, &report)
}

/// Read the report of a finished run without modifying it.
#[pyfunction]
fn load_report<'py>(py: Python<'py>, run_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    serialize(py, &cgssl_core::pipeline::load_report(&run_dir).map_err(py_err)?)
}

/// Run the command-line interface with `argv` (without the program name).
#[pyfunction]
fn cli_main(argv: Vec<String>) -> i32 {
    cgssl_core::cli::cli_main(std::iter::once("cgssl".to_string()).chain(argv))
}

#[pyfunction]
fn softmax(logits: Vec<f64>) -> PyResult<Vec<f64>> {
    cgssl_core::confidence::softmax(&logits).map_err(py_err)
}

/// Quartiles, IQR and the lower outlier boundary `gamma = Q1 - 1.5 IQR`.
#[pyfunction]
fn compute_threshold<'py>(py: Python<'py>, scores: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
    serialize(py, &cgssl_core::confidence::compute_threshold(&scores).map_err(py_err)?)
}

#[pyfunction]
fn sharpen(p: Vec<f64>, temperature: f64) -> PyResult<Vec<f64>> {
    cgssl_core::mixmatch::sharpen(&p, temperature).map_err(py_err)
}

/// Row-wise MixUp of `(N, D)` inputs and `(N, C)` targets with
/// `lambda ~ Beta(alpha, alpha)`; returns `(inputs, targets, lambdas)`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn mixup(
    x1: Vec<Vec<f64>>,
    t1: Vec<Vec<f64>>,
    x2: Vec<Vec<f64>>,
    t2: Vec<Vec<f64>>,
    alpha: f64,
    seed: u64,
) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>)> {
    let m = cgssl_core::mixmatch::mixup(&matrix(&x1)?, &matrix(&t1)?, &matrix(&x2)?, &matrix(&t2)?, alpha, seed)
        .map_err(py_err)?;
    Ok((rows(&m.inputs), rows(&m.targets), m.lambdas))
}

/// `(total, L_x, L_u)` of the MixMatch objective.
#[pyfunction]
fn mixmatch_loss(
    pred_x: Vec<Vec<f64>>,
    targets_x: Vec<Vec<f64>>,
    pred_u: Vec<Vec<f64>>,
    targets_u: Vec<Vec<f64>>,
    beta: f64,
) -> PyResult<(f64, f64, f64)> {
    let l = cgssl_core::mixmatch::mixmatch_loss(
        &matrix(&pred_x)?,
        &matrix(&targets_x)?,
        &matrix(&pred_u)?,
        &matrix(&targets_u)?,
        beta,
    )
    .map_err(py_err)?;
    Ok((l.total, l.l_x, l.l_u))
}

/// Procedural toy dataset as `(pixels, labels, ids)`; each image is a flat
/// HWC list of floats in `[0, 1]`.
#[pyfunction]
#[allow(clippy::type_complexity)]
fn toy_dataset(num_classes: usize, per_class: usize, image_size: usize, seed: u64) -> PyResult<(Vec<Vec<f32>>, Vec<usize>, Vec<u64>)> {
    let d = generate_toy_dataset(num_classes, per_class, image_size, seed).map_err(py_err)?;
    Ok((
        d.samples().iter().map(|s| s.pixels().to_vec()).collect(),
        d.labels().to_vec(),
        d.ids(),
    ))
}

/// Split a toy dataset and return the id lists of D_L, D_V and D_REF.
#[pyfunction]
#[pyo3(signature = (num_classes, per_class, image_size, seed, fractions=(0.6, 0.2, 0.2), stratified=false))]
fn toy_split(
    num_classes: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
    fractions: (f64, f64, f64),
    stratified: bool,
) -> PyResult<(Vec<u64>, Vec<u64>, Vec<u64>)> {
    let d = generate_toy_dataset(num_classes, per_class, image_size, seed).map_err(py_err)?;
    let spec = SplitSpec {
        fractions: [fractions.0, fractions.1, fractions.2],
        seed,
        stratified,
    };
    let (a, b, c) = split_dataset(&d, &spec).map_err(py_err)?;
    Ok((a.ids(), b.ids(), c.ids()))
}

/// Module initializer; the extension is importable as `cgssl`.
#[pymodule(name = "cgssl")]
pub fn cgssl_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPipelineConfig>()?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(run_ablation, m)?)?;
    m.add_function(wrap_pyfunction!(load_report, m)?)?;
    m.add_function(wrap_pyfunction!(cli_main, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(compute_threshold, m)?)?;
    m.add_function(wrap_pyfunction!(sharpen, m)?)?;
    m.add_function(wrap_pyfunction!(mixup, m)?)?;
    m.add_function(wrap_pyfunction!(mixmatch_loss, m)?)?;
    m.add_function(wrap_pyfunction!(toy_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(toy_split, m)?)?;
    Ok(())
}
