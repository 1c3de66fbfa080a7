//! Python bindings. Structured results (certificates, reports, traces) are
//! returned as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::Serialize;
use spatial_bd::certificate::{self, PackingConstant, SearchGrid, VerifyOptions};
use spatial_bd::config::RunConfig;
use spatial_bd::dynamics::Simulation;
use spatial_bd::geometry::{Snapshot, Torus, Window};
use spatial_bd::kernels::{Kernel, RadialTable};
use spatial_bd::oracles::{self, NormBoundInput};
use spatial_bd::statistics::{self, RadialBins};
use spatial_bd::{geometry, rng};

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

#[pyclass(name = "Kernel", module = "spatial_bd_py", frozen)]
pub struct PyKernel {
    inner: Kernel,
}

#[pymethods]
impl PyKernel {
    #[staticmethod]
    fn gaussian(weight: f64, width: f64, dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Kernel::gaussian(weight, width, dim).map_err(err)?,
        })
    }

    #[staticmethod]
    fn triangular(height: f64, radius: f64, dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Kernel::triangular(height, radius, dim).map_err(err)?,
        })
    }

    #[staticmethod]
    fn exponential(weight: f64, scale: f64, dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: Kernel::exponential(weight, scale, dim).map_err(err)?,
        })
    }

    #[staticmethod]
    fn tabulated(radii: Vec<f64>, values: Vec<f64>, tail_scale: f64, dim: usize) -> PyResult<Self> {
        let table = RadialTable::new(radii, values, tail_scale).map_err(err)?;
        Ok(Self {
            inner: Kernel::tabulated(table, dim).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: serde_json::from_str(text).map_err(err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn mass(&self) -> f64 {
        self.inner.mass()
    }

    fn sup_norm(&self) -> f64 {
        self.inner.sup_norm()
    }

    fn profile(&self, rho: f64) -> f64 {
        self.inner.profile(rho)
    }

    fn evaluate(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.evaluate(&x).map_err(err)
    }

    fn tail_mass(&self, rho: f64) -> f64 {
        self.inner.tail_mass(rho)
    }

    fn cutoff_radius(&self) -> f64 {
        self.inner.cutoff_radius()
    }

    fn scaled(&self, alpha: f64) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.scaled(alpha).map_err(err)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Kernel({})", serde_json::to_string(&self.inner).unwrap_or_default())
    }
}

fn packing(name: &str) -> PyResult<PackingConstant> {
    match name {
        "unit" => Ok(PackingConstant::Unit),
        "densest" => Ok(PackingConstant::Densest),
        other => Err(err(format!("unknown packing constant {other:?}; use \"unit\" or \"densest\""))),
    }
}

/// Largest-θ certificate over the default search grid.
#[pyfunction]
#[pyo3(signature = (a_plus, a_minus, omega = 1.0, packing_constant = "unit"))]
fn certify(py: Python<'_>, a_plus: &PyKernel, a_minus: &PyKernel, omega: f64, packing_constant: &str) -> PyResult<Py<PyAny>> {
    let grid = SearchGrid::default_for(&a_minus.inner);
    let p = packing(packing_constant)?;
    let cert = py
        .detach(|| certificate::certify(&a_plus.inner, &a_minus.inner, omega, &grid, p))
        .map_err(err)?;
    to_py(py, &cert)
}

/// Samples configurations and reports the smallest `U_θ`.
#[pyfunction]
#[pyo3(signature = (a_plus, a_minus, omega, theta, r, trials = 100_000, size_max = 30, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn verify(
    py: Python<'_>,
    a_plus: &PyKernel,
    a_minus: &PyKernel,
    omega: f64,
    theta: f64,
    r: f64,
    trials: usize,
    size_max: usize,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let opts = VerifyOptions {
        trials,
        size_max,
        seed,
        ..VerifyOptions::default()
    };
    let rep = py
        .detach(|| certificate::verify_certificate(omega, theta, r, &a_plus.inner, &a_minus.inner, &opts))
        .map_err(err)?;
    to_py(py, &rep)
}

#[pyfunction]
fn u_theta(points: Vec<Vec<f64>>, a_plus: &PyKernel, a_minus: &PyKernel, omega: f64, theta: f64) -> f64 {
    certificate::u_theta(&points, &a_plus.inner, &a_minus.inner, omega, theta)
}

#[pyfunction]
fn riemann_upper_sum(a: &PyKernel, h: f64) -> PyResult<f64> {
    certificate::riemann_upper_sum(&a.inner, h).map_err(err)
}

/// Runs replica `replica` of a JSON run configuration and returns its trace.
#[pyfunction]
#[pyo3(signature = (config_json, replica = 0))]
fn simulate(py: Python<'_>, config_json: &str, replica: u64) -> PyResult<Py<PyAny>> {
    let cfg = RunConfig::from_json(config_json).and_then(RunConfig::resolve).map_err(err)?;
    let trace = py
        .detach(|| {
            let torus = cfg.build_torus()?;
            let mut r = rng::stream(cfg.seed, replica);
            let init = cfg.initial_configuration(torus, &mut r)?;
            Simulation::new(cfg.model.clone(), init, r)?.run(&cfg.run_options(false))
        })
        .map_err(err)?;
    to_py(py, &trace)
}

#[pyfunction]
fn sample_poisson(side: f64, dim: usize, density: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let torus = Torus::new(side, dim).map_err(err)?;
    let cfg = geometry::sample_poisson(torus, density, &mut rng::stream(seed, 0)).map_err(err)?;
    Ok(cfg.iter().map(|(_, p)| p.to_vec()).collect())
}

fn snapshots(replicas: Vec<Vec<Vec<f64>>>, dim: usize) -> PyResult<Vec<Snapshot>> {
    replicas
        .into_iter()
        .map(|pts| {
            if pts.iter().any(|p| p.len() != dim) {
                return Err(err(format!("every point must have {dim} coordinates")));
            }
            Ok(Snapshot {
                time: 0.0,
                dim,
                ids: (0..pts.len() as u64).collect(),
                coords: pts.into_iter().flatten().collect(),
            })
        })
        .collect()
}

/// Density estimate over replicas (each a list of points).
#[pyfunction]
fn density(replicas: Vec<Vec<Vec<f64>>>, side: f64, dim: usize) -> PyResult<(f64, f64)> {
    let torus = Torus::new(side, dim).map_err(err)?;
    let e = statistics::density(&snapshots(replicas, dim)?, &torus).map_err(err)?;
    Ok((e.value, e.se))
}

#[pyfunction]
fn factorial_moments(replicas: Vec<Vec<Vec<f64>>>, lo: Vec<f64>, hi: Vec<f64>, n_max: usize) -> PyResult<Vec<(f64, f64)>> {
    let dim = lo.len();
    let w = Window::new(lo, hi).map_err(err)?;
    let f = statistics::factorial_moments(&snapshots(replicas, dim)?, &w, n_max).map_err(err)?;
    Ok(f.into_iter().map(|e| (e.value, e.se)).collect())
}

#[pyfunction]
#[pyo3(signature = (replicas, side, dim, r_max, bins = 20))]
fn pair_correlation(
    py: Python<'_>,
    replicas: Vec<Vec<Vec<f64>>>,
    side: f64,
    dim: usize,
    r_max: f64,
    bins: usize,
) -> PyResult<Py<PyAny>> {
    let torus = Torus::new(side, dim).map_err(err)?;
    let b = RadialBins::uniform(r_max, bins).map_err(err)?;
    let g = statistics::pair_correlation(&snapshots(replicas, dim)?, &torus, &b).map_err(err)?;
    to_py(py, &g)
}

#[pyfunction]
#[pyo3(signature = (moments, volume, residual_tolerance = statistics::DEFAULT_RESIDUAL_TOLERANCE))]
fn envelope_fit(py: Python<'_>, moments: Vec<f64>, volume: f64, residual_tolerance: f64) -> PyResult<Py<PyAny>> {
    let fit = statistics::envelope_fit(&moments, volume, residual_tolerance).map_err(err)?;
    to_py(py, &fit)
}

#[pyfunction]
fn surgailis_density(rho0: f64, b: f64, m: f64, t: f64) -> f64 {
    oracles::surgailis_density(rho0, b, m, t)
}

#[pyfunction]
fn bp_meanfield(rho0: f64, dispersal_mass: f64, competition_mass: f64, m: f64, t: f64) -> f64 {
    oracles::bp_meanfield(rho0, dispersal_mass, competition_mass, m, t)
}

#[pyfunction]
#[pyo3(signature = (variant, theta, theta_prime, dispersal_mass = 0.0, dispersal_sup = 0.0, competition_mass = 0.0, competition_sup = 0.0, immigration_sup = 0.0))]
#[allow(clippy::too_many_arguments)]
fn norm_bound(
    variant: &str,
    theta: f64,
    theta_prime: f64,
    dispersal_mass: f64,
    dispersal_sup: f64,
    competition_mass: f64,
    competition_sup: f64,
    immigration_sup: f64,
) -> PyResult<f64> {
    let input = NormBoundInput {
        theta,
        theta_prime,
        dispersal_mass,
        dispersal_sup,
        competition_mass,
        competition_sup,
        immigration_sup,
    };
    match variant {
        "bp" | "bolker_pacala" => oracles::norm_bound_bp(&input),
        "migration" => oracles::norm_bound_migration(&input),
        other => return Err(err(format!("unknown variant {other:?}"))),
    }
    .map_err(err)
}

#[pymodule]
pub fn spatial_bd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyKernel>()?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(u_theta, m)?)?;
    m.add_function(wrap_pyfunction!(riemann_upper_sum, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(sample_poisson, m)?)?;
    m.add_function(wrap_pyfunction!(density, m)?)?;
    m.add_function(wrap_pyfunction!(factorial_moments, m)?)?;
    m.add_function(wrap_pyfunction!(pair_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(envelope_fit, m)?)?;
    m.add_function(wrap_pyfunction!(surgailis_density, m)?)?;
    m.add_function(wrap_pyfunction!(bp_meanfield, m)?)?;
    m.add_function(wrap_pyfunction!(norm_bound, m)?)?;
    Ok(())
}
