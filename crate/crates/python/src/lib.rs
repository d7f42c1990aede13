//! Python bindings. Structured results cross the boundary as JSON strings.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use qbm_core::bath::{
    correlation_by_quadrature, CutoffKind, PhysicalConstants, SpectralDensity, ThermalBathSpec,
    DEFAULT_QUAD_TOL,
};
use qbm_core::io::{compare_runs as compare_core, Tolerance};
use qbm_core::run::{exit_code, run_scenario_with_warnings};
use qbm_core::scenario::{parse_scenario_file, parse_scenario_str};
use qbm_core::Error;

fn to_py(e: Error) -> PyErr {
    // exit code 2 is the input-error class
    if exit_code(&e) == 2 {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn cutoff_kind(name: &str) -> PyResult<CutoffKind> {
    match name.to_ascii_lowercase().as_str() {
        "sharp" => Ok(CutoffKind::Sharp),
        "exponential" => Ok(CutoffKind::Exponential),
        "drude" => Ok(CutoffKind::Drude),
        other => Err(PyValueError::new_err(format!("unknown cutoff '{other}'"))),
    }
}

/// Ohmic spectral density J(ω) with the given cutoff.
#[pyfunction]
#[pyo3(signature = (omega, mass, gamma, omega_cutoff, cutoff = "sharp"))]
fn spectral_density(
    omega: f64,
    mass: f64,
    gamma: f64,
    omega_cutoff: f64,
    cutoff: &str,
) -> PyResult<f64> {
    let spec =
        SpectralDensity::new(mass, gamma, cutoff_kind(cutoff)?, omega_cutoff).map_err(to_py)?;
    spec.eval(omega).map_err(to_py)
}

/// Bath correlation D(τ) by quadrature, returned as (re, im).
#[pyfunction]
#[pyo3(signature = (tau, mass, gamma, temperature, omega_cutoff, cutoff = "sharp", hbar = 1.0, k_b = 1.0, quad_tol = DEFAULT_QUAD_TOL))]
#[allow(clippy::too_many_arguments)]
fn correlation(
    tau: f64,
    mass: f64,
    gamma: f64,
    temperature: f64,
    omega_cutoff: f64,
    cutoff: &str,
    hbar: f64,
    k_b: f64,
    quad_tol: f64,
) -> PyResult<(f64, f64)> {
    let spectral =
        SpectralDensity::new(mass, gamma, cutoff_kind(cutoff)?, omega_cutoff).map_err(to_py)?;
    let constants = PhysicalConstants::new(hbar, k_b).map_err(to_py)?;
    let spec = ThermalBathSpec::new(spectral, temperature, constants).map_err(to_py)?;
    let d = correlation_by_quadrature(&spec, tau, quad_tol).map_err(to_py)?;
    Ok((d.re, d.im))
}

/// Validates scenario JSON text. Returns (normalized JSON, warnings).
#[pyfunction]
#[pyo3(signature = (text, strict = true))]
fn parse_scenario(text: &str, strict: bool) -> PyResult<(String, Vec<String>)> {
    let parsed = parse_scenario_str(text, strict).map_err(to_py)?;
    Ok((parsed.scenario.to_json().map_err(to_py)?, parsed.warnings))
}

/// Runs a scenario file into `out_dir` and returns the manifest as JSON.
#[pyfunction]
#[pyo3(signature = (path, out_dir, strict = true, seed = None))]
fn run_scenario(
    py: Python<'_>,
    path: PathBuf,
    out_dir: PathBuf,
    strict: bool,
    seed: Option<u64>,
) -> PyResult<String> {
    let manifest = py
        .detach(|| {
            let mut parsed = parse_scenario_file(&path, strict)?;
            if let (Some(seed), Some(st)) = (seed, parsed.scenario.stochastic.as_mut()) {
                st.seed = seed;
            }
            run_scenario_with_warnings(&parsed.scenario, &out_dir, parsed.warnings)
        })
        .map_err(to_py)?;
    serde_json::to_string(&manifest).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Column-wise comparison of two output CSVs. Returns the report as JSON.
#[pyfunction]
#[pyo3(signature = (a, b, columns = None, tol = 1e-8, rel_tol = 0.0))]
fn compare_runs(
    a: PathBuf,
    b: PathBuf,
    columns: Option<Vec<String>>,
    tol: f64,
    rel_tol: f64,
) -> PyResult<String> {
    let report = compare_core(
        &a,
        &b,
        &columns.unwrap_or_default(),
        Tolerance {
            abs: tol,
            rel: rel_tol,
        },
    )
    .map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

#[pymodule]
fn qbm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(spectral_density, m)?)?;
    m.add_function(wrap_pyfunction!(correlation, m)?)?;
    m.add_function(wrap_pyfunction!(parse_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(compare_runs, m)?)?;
    Ok(())
}
