//! Python bindings for the `diffusion_limit` crate.
//!
//! Fields cross the boundary as flat lists of floats in row-major grid order
//! (velocity-major for kinetic fields). Report rows come back as dicts.

use diffusion_limit::config::{Experiment, ExperimentConfig};
use diffusion_limit::harness::{self, EnsembleSummary};
use diffusion_limit::kinetic::{OutputPlan, SolverConfig};
use diffusion_limit::{ChainSpec, Grid, GridFunction, VelocityModel};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

fn err(e: diffusion_limit::Error) -> PyErr {
    use diffusion_limit::Error as E;
    match e {
        E::Config(_) | E::InsufficientEnsemble { .. } | E::Grid(_) | E::DimensionMismatch { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, json_to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

/// serde_json writes non-finite floats as null; report rows use NaN for "not applicable".
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let v = serde_json::to_value(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    json_to_py(py, &v)
}

fn summary_to_py<'py>(py: Python<'py>, s: &EnsembleSummary, labels: &[String]) -> PyResult<Bound<'py, PyDict>> {
    let out = PyDict::new(py);
    out.set_item("epsilon", s.epsilon)?;
    out.set_item("completed", s.completed)?;
    out.set_item("failed", s.failed)?;
    out.set_item("gronwall_violations", s.gronwall_violations)?;
    let times = PyList::empty(py);
    for t in &s.times {
        let row = PyDict::new(py);
        row.set_item("time", t.time)?;
        let f = PyDict::new(py);
        for (label, st) in labels.iter().zip(&t.functionals) {
            f.set_item(label, to_py(py, st)?)?;
        }
        row.set_item("functionals", f)?;
        row.set_item("mean_density", t.density.mean())?;
        if t.norm2.count() > 0 {
            row.set_item("norm2_mean", t.norm2.mean())?;
            row.set_item("norm4_mean", t.norm4.mean())?;
        }
        times.append(row)?;
    }
    out.set_item("times", times)?;
    Ok(out)
}

/// A validated experiment built from a JSON configuration.
#[pyclass(name = "Experiment", frozen)]
struct PyExperiment {
    inner: Experiment,
}

#[pymethods]
impl PyExperiment {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner = ExperimentConfig::from_json(text).and_then(|c| c.build()).map_err(err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let inner = ExperimentConfig::load(&path).and_then(|c| c.build()).map_err(err)?;
        Ok(Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.config.to_json()
    }

    #[getter]
    fn epsilons(&self) -> Vec<f64> {
        self.inner.config.epsilons.clone()
    }

    #[getter]
    fn grid_points(&self) -> usize {
        self.inner.grid.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.grid.dim()
    }

    #[getter]
    fn functionals(&self) -> Vec<String> {
        self.inner.functionals.iter().map(|f| f.label.clone()).collect()
    }

    /// Effective diffusion matrix as a `dim x dim` nested list.
    fn diffusion_matrix(&self) -> PyResult<Vec<Vec<f64>>> {
        let k = self.inner.model.diffusion_matrix().map_err(err)?;
        Ok((0..k.dim()).map(|p| (0..k.dim()).map(|q| k.get(p, q)).collect()).collect())
    }

    fn autocovariances(&self) -> Vec<f64> {
        self.inner.noise.autocovariances().to_vec()
    }

    /// Trace of the covariance kernel on the grid.
    fn trace(&self) -> Vec<f64> {
        self.inner.noise.trace().into_values()
    }

    fn initial_density(&self) -> Vec<f64> {
        self.inner.rho0.values().to_vec()
    }

    /// Largest drift-identity mismatch over grid points.
    fn drift_mismatch(&self) -> f64 {
        diffusion_limit::spde::drift_consistency(&self.inner.noise)
    }

    /// One kinetic trajectory at the given epsilon; returns `(times, densities)`.
    #[pyo3(signature = (epsilon, seed, times=None))]
    fn solve_kinetic(&self, py: Python<'_>, epsilon: f64, seed: u64, times: Option<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let exp = &self.inner;
        let times = times.unwrap_or_else(|| exp.config.times());
        let traj = py
            .detach(|| {
                let cfg = SolverConfig { epsilon, dt_factor: exp.config.dt_factor, final_time: exp.config.final_time };
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                exp.kinetic.solve_trajectory(&exp.f0, &cfg, &OutputPlan::at(times), &mut rng)
            })
            .map_err(err)?;
        Ok(traj.snapshots.into_iter().map(|s| (s.time, s.density.into_values())).unzip())
    }

    /// One path of the limit equation; returns `(times, densities)`.
    #[pyo3(signature = (seed, steps=None))]
    fn solve_spde(&self, py: Python<'_>, seed: u64, steps: Option<usize>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
        let exp = &self.inner;
        let path = py
            .detach(|| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let steps = steps.unwrap_or(exp.config.spde_steps);
                exp.spde.solve(&exp.rho0, exp.config.final_time, steps, &exp.config.times(), &mut rng)
            })
            .map_err(err)?;
        Ok((path.times, path.densities.into_iter().map(GridFunction::into_values).collect()))
    }

    /// Kinetic ensemble statistics for the `index`-th configured epsilon.
    #[pyo3(signature = (index, count=None, workers=1))]
    fn run_kinetic<'py>(&self, py: Python<'py>, index: usize, count: Option<usize>, workers: usize) -> PyResult<Bound<'py, PyDict>> {
        let exp = &self.inner;
        let count = count.unwrap_or(exp.config.ensemble);
        let s = py.detach(|| harness::run_kinetic(exp, index, count, workers.max(1))).map_err(err)?;
        summary_to_py(py, &s, &self.functionals())
    }

    #[pyo3(signature = (count=None, workers=1))]
    fn run_limit<'py>(&self, py: Python<'py>, count: Option<usize>, workers: usize) -> PyResult<Bound<'py, PyDict>> {
        let exp = &self.inner;
        let count = count.unwrap_or(exp.config.spde_ensemble());
        let s = py.detach(|| harness::run_limit(exp, count, workers.max(1))).map_err(err)?;
        summary_to_py(py, &s, &self.functionals())
    }

    /// Full epsilon sweep; returns the weak-error table as a dict.
    #[pyo3(signature = (workers=1))]
    fn converge<'py>(&self, py: Python<'py>, workers: usize) -> PyResult<Bound<'py, PyAny>> {
        let exp = &self.inner;
        let table = py
            .detach(|| {
                let stats = harness::run_ensemble(exp, workers.max(1))?;
                harness::weak_error_table(&stats, exp.config.sobolev_order)
            })
            .map_err(err)?;
        to_py(py, &table)
    }

    #[pyo3(signature = (states=200, workers=1))]
    fn diagnose_generator<'py>(&self, py: Python<'py>, states: usize, workers: usize) -> PyResult<Bound<'py, PyAny>> {
        let exp = &self.inner;
        let rows = py.detach(|| harness::diagnose_generator(exp, states, workers.max(1))).map_err(err)?;
        to_py(py, &rows)
    }

    #[pyo3(signature = (samples=1000, length=50.0, seed=0, workers=1))]
    fn noise_statistics<'py>(
        &self,
        py: Python<'py>,
        samples: usize,
        length: f64,
        seed: u64,
        workers: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let noise = &self.inner.noise;
        let rows = py.detach(|| harness::noise_statistics(noise, samples, length, seed, workers.max(1))).map_err(err)?;
        to_py(py, &rows)
    }
}

/// Effective diffusion matrix of a discrete velocity set.
#[pyfunction]
#[pyo3(signature = (velocities, weights, dim=None))]
fn diffusion_matrix(velocities: Vec<Vec<f64>>, weights: Vec<f64>, dim: Option<usize>) -> PyResult<Vec<Vec<f64>>> {
    let dim = dim.unwrap_or_else(|| velocities.first().map_or(1, Vec::len));
    let k = VelocityModel::new(dim, velocities, weights).and_then(|m| m.diffusion_matrix()).map_err(err)?;
    Ok((0..dim).map(|p| (0..dim).map(|q| k.get(p, q)).collect()).collect())
}

/// `c = 2 sum pi s (-G)^{-1} s` for a chain with the given states and rate matrix.
#[pyfunction]
fn integrated_autocovariance(states: Vec<f64>, rates: Vec<Vec<f64>>) -> PyResult<f64> {
    ChainSpec::new(states, rates).and_then(|c| c.integrated_autocovariance()).map_err(err)
}

#[pyfunction]
fn telegraph_autocovariance(sigma: f64, lambda: f64) -> PyResult<f64> {
    ChainSpec::telegraph(sigma, lambda).and_then(|c| c.integrated_autocovariance()).map_err(err)
}

/// Negative-order Sobolev distance between two periodic grid functions.
#[pyfunction]
#[pyo3(signature = (a, b, n, dim=1, eta=1.0))]
fn sobolev_distance(a: Vec<f64>, b: Vec<f64>, n: usize, dim: usize, eta: f64) -> PyResult<f64> {
    let grid = Grid::new(dim, n).map_err(err)?;
    let a = GridFunction::from_values(grid, a).map_err(err)?;
    let b = GridFunction::from_values(grid, b).map_err(err)?;
    harness::sobolev_distance(&a, &b, eta).map_err(err)
}

#[pymodule]
fn diffusion_limit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(diffusion_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(integrated_autocovariance, m)?)?;
    m.add_function(wrap_pyfunction!(telegraph_autocovariance, m)?)?;
    m.add_function(wrap_pyfunction!(sobolev_distance, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
