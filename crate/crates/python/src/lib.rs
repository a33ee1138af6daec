//! Python bindings. Grids cross the boundary as flat lists of complex
//! numbers in `[coil, row, column]` order together with a `(coils, rows,
//! cols)` tuple; reports cross as JSON strings.

use n2n_core::config::ExperimentConfig;
use n2n_core::correction::{compute_k, k_pair as core_k_pair};
use n2n_core::experiment::{generate_dataset, run_point as core_run_point, run_sweep as core_run_sweep};
use n2n_core::kspace::{make_phantom, KGrid, Shape};
use n2n_core::masking::{
    build_bernoulli2d_density, build_column_density, expected_acceleration, sample_mask, secondary_density_from,
    SamplingDensity,
};
use n2n_core::metrics::{nmse as core_nmse, ssim_cropped as core_ssim_cropped};
use n2n_core::oracle::run_claim_suite;
use n2n_core::trainer::Regime;
use n2n_core::{Complex64, Error};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn grid(data: Vec<Complex64>, shape: (usize, usize, usize)) -> PyResult<KGrid> {
    KGrid::from_vec(Shape::new(shape.0, shape.1, shape.2), data).map_err(py_err)
}

fn config(json: Option<&str>) -> PyResult<ExperimentConfig> {
    let cfg = match json {
        Some(text) => ExperimentConfig::from_json(text).map_err(py_err)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// Sampling probabilities over mask atoms (columns or grid entries).
#[pyclass(name = "Density", frozen)]
struct PyDensity(SamplingDensity);

#[pymethods]
impl PyDensity {
    /// 1D variable-density column profile with fully sampled centre columns.
    #[staticmethod]
    #[pyo3(signature = (cols, center, r, poly_order = 8))]
    fn column(cols: usize, center: usize, r: f64, poly_order: u32) -> PyResult<Self> {
        build_column_density(cols, center, poly_order, r).map(Self).map_err(py_err)
    }

    /// 2D Bernoulli density with a fully sampled centre square.
    #[staticmethod]
    fn bernoulli2d(rows: usize, cols: usize, center: usize, r: f64) -> PyResult<Self> {
        build_bernoulli2d_density(rows, cols, center, r).map(Self).map_err(py_err)
    }

    #[getter]
    fn probs(&self) -> Vec<f64> {
        self.0.probs().to_vec()
    }

    #[getter]
    fn rows(&self) -> usize {
        self.0.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.0.cols()
    }

    fn acceleration(&self) -> f64 {
        expected_acceleration(&self.0)
    }

    /// Density of Λ for a target R̃.
    #[pyo3(signature = (r_tilde, epsilon = 1e-5))]
    fn secondary(&self, r_tilde: f64, epsilon: f64) -> PyResult<Self> {
        secondary_density_from(&self.0, r_tilde, epsilon).map(Self).map_err(py_err)
    }

    /// Draws a mask; returns one boolean per atom.
    fn sample(&self, seed: u64) -> Vec<bool> {
        sample_mask(&self.0, &mut ChaCha8Rng::seed_from_u64(seed)).atoms().to_vec()
    }

    /// `(k, 1 / (1 - k))` per atom against the density of Λ.
    fn correction(&self, secondary: &PyDensity) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let diag = compute_k(&self.0, &secondary.0).map_err(py_err)?;
        Ok((diag.k().to_vec(), diag.inv_one_minus_k().to_vec()))
    }

    fn __repr__(&self) -> String {
        format!(
            "Density(scheme={:?}, rows={}, cols={}, R={:.4})",
            self.0.scheme(),
            self.0.rows(),
            self.0.cols(),
            expected_acceleration(&self.0)
        )
    }
}

/// `(k, 1 / (1 - k))` for one pair of sampling probabilities.
#[pyfunction]
fn k_pair(p: f64, p_tilde: f64) -> PyResult<(f64, f64)> {
    core_k_pair(p, p_tilde).map_err(py_err)
}

/// Multi-coil phantom k-space: `(values, (coils, rows, cols))`.
#[pyfunction]
#[pyo3(signature = (rows, cols, coils, seed, config_json = None))]
fn phantom(
    rows: usize,
    cols: usize,
    coils: usize,
    seed: u64,
    config_json: Option<&str>,
) -> PyResult<(Vec<Complex64>, (usize, usize, usize))> {
    let mut cfg = config(config_json)?;
    cfg.data.rows = rows;
    cfg.data.cols = cols;
    cfg.data.coils = coils;
    let k = make_phantom(&cfg.phantom_spec(seed)).map_err(py_err)?;
    Ok((k.as_slice().to_vec(), (coils, rows, cols)))
}

#[pyfunction]
fn nmse(estimate: Vec<Complex64>, truth: Vec<Complex64>, shape: (usize, usize, usize)) -> PyResult<f64> {
    core_nmse(&grid(estimate, shape)?, &grid(truth, shape)?).map_err(py_err)
}

/// SSIM of RSS images on the central `crop x crop` region.
#[pyfunction]
fn ssim(estimate: Vec<Complex64>, truth: Vec<Complex64>, shape: (usize, usize, usize), crop: usize) -> PyResult<f64> {
    core_ssim_cropped(&grid(estimate, shape)?, &grid(truth, shape)?, crop).map_err(py_err)
}

/// Fully resolved default configuration as JSON.
#[pyfunction]
fn default_config() -> PyResult<String> {
    ExperimentConfig::default().resolved_json().map_err(py_err)
}

/// Runs the oracle suites; returns the JSON report.
#[pyfunction]
#[pyo3(signature = (config_json = None, k_perturbation = 0.0))]
fn verify_claims(py: Python<'_>, config_json: Option<&str>, k_perturbation: f64) -> PyResult<String> {
    let mut cfg = config(config_json)?;
    cfg.oracle.k_perturbation = k_perturbation;
    let report = py.detach(|| run_claim_suite(&cfg.oracle)).map_err(py_err)?;
    serde_json::to_string(&report).map_err(json_err)
}

/// Trains and evaluates one regime on the config's dataset; returns the
/// JSON run summary.
#[pyfunction]
#[pyo3(signature = (config_json, regime, r_tilde = None))]
fn run_point(py: Python<'_>, config_json: &str, regime: &str, r_tilde: Option<f64>) -> PyResult<String> {
    let cfg = config(Some(config_json))?;
    let regime: Regime = regime.parse().map_err(py_err)?;
    let rt = r_tilde.unwrap_or(cfg.masks.r_tilde);
    let summary = py
        .detach(|| generate_dataset(&cfg).and_then(|ds| core_run_point(&cfg, regime, rt, &ds, None)))
        .map_err(py_err)?;
    serde_json::to_string(&summary).map_err(json_err)
}

/// Full R̃ sweep; returns the rows as a JSON array.
#[pyfunction]
#[pyo3(signature = (config_json, jobs = 1))]
fn run_sweep(py: Python<'_>, config_json: &str, jobs: usize) -> PyResult<String> {
    let cfg = config(Some(config_json))?;
    let rows = py
        .detach(|| generate_dataset(&cfg).and_then(|ds| core_run_sweep(&cfg, &ds, None, jobs.max(1))))
        .map_err(py_err)?;
    serde_json::to_string(&rows).map_err(json_err)
}

#[pymodule]
fn n2n_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDensity>()?;
    m.add_function(wrap_pyfunction!(k_pair, m)?)?;
    m.add_function(wrap_pyfunction!(phantom, m)?)?;
    m.add_function(wrap_pyfunction!(nmse, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(verify_claims, m)?)?;
    m.add_function(wrap_pyfunction!(run_point, m)?)?;
    m.add_function(wrap_pyfunction!(run_sweep, m)?)?;
    m.add("REGIMES", Regime::ALL.iter().map(|r| r.label()).collect::<Vec<_>>())?;
    Ok(())
}
