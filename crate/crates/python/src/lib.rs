//! Python bindings. Particle arrays cross the boundary as lists of rows
//! (`m` lists of `N` floats).

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyNotImplementedError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pavi::dynamics::{self, Algorithm, RunConfig, RunContext, Schedule};
use pavi::harness::fit;
use pavi::harness::report::NullSink;
use pavi::metrics::{self, Marginal, ReferenceProduct};
use pavi::oracle::{self, FixedPointOptions, GridInit, GridProduct};
use pavi::particles::{ContextBatch, InitSpec, ParticleArray};
use pavi::potential::{
    PairwiseLogcoshPotential, PerturbedQuadraticPotential, QuadraticPotential, SharedPotential,
};
use pavi::rng::RngStream;
use pavi::Error;

create_exception!(pavi_py, PaviError, PyException);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Evaluation { .. } | Error::Format(_) => {
            PyValueError::new_err(e.to_string())
        }
        Error::Unsupported(_) => PyNotImplementedError::new_err(e.to_string()),
        other => PaviError::new_err(other.to_string()),
    }
}

fn rows_to_array(rows: &[Vec<f64>]) -> PyResult<ParticleArray> {
    let m = rows.len();
    let n = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != n) {
        return Err(PyValueError::new_err("all rows must have the same length"));
    }
    ParticleArray::from_rows(m, n, rows.concat()).map_err(to_py)
}

fn array_to_rows(x: &ParticleArray) -> Vec<Vec<f64>> {
    (0..x.dim()).map(|i| x.row(i).to_vec()).collect()
}

/// A target potential `V` with its constants `(alpha, L, third_bound)`.
#[pyclass(frozen, name = "Potential")]
struct PyPotential {
    inner: SharedPotential,
}

#[pymethods]
impl PyPotential {
    /// `½ (x − μ)ᵀ A (x − μ)` with `A` given row-major.
    #[staticmethod]
    fn quadratic(precision: Vec<f64>, mean: Vec<f64>) -> PyResult<Self> {
        let p = QuadraticPotential::new(precision, mean).map_err(to_py)?;
        Ok(Self { inner: std::sync::Arc::new(p) })
    }

    /// Quadratic plus `Σ c_i logcosh(x_i − μ_i)`.
    #[staticmethod]
    fn perturbed_quadratic(precision: Vec<f64>, mean: Vec<f64>, weights: Vec<f64>) -> PyResult<Self> {
        let p = PerturbedQuadraticPotential::new(precision, mean, weights).map_err(to_py)?;
        Ok(Self { inner: std::sync::Arc::new(p) })
    }

    /// Quadratic plus `Σ_{i<j} W_ij logcosh(x_i − x_j)`.
    #[staticmethod]
    fn pairwise_logcosh(precision: Vec<f64>, mean: Vec<f64>, coupling: Vec<f64>) -> PyResult<Self> {
        let p = PairwiseLogcoshPotential::new(precision, mean, coupling).map_err(to_py)?;
        Ok(Self { inner: std::sync::Arc::new(p) })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn family(&self) -> &'static str {
        self.inner.family()
    }

    fn value(&self, x: Vec<f64>) -> PyResult<f64> {
        pavi::potential::eval_potential(self.inner.as_ref(), &x).map_err(to_py)
    }

    fn partial(&self, i: usize, x: Vec<f64>) -> PyResult<f64> {
        pavi::potential::partial_derivative(self.inner.as_ref(), i, &x).map_err(to_py)
    }

    /// `(alpha, L, third_bound)`.
    fn constants(&self) -> (f64, f64, f64) {
        let c = self.inner.constants();
        (c.alpha, c.lip, c.third_bound)
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }

    fn __repr__(&self) -> String {
        let c = self.inner.constants();
        format!(
            "Potential(family={}, dim={}, alpha={}, L={})",
            self.inner.family(),
            self.inner.dim(),
            c.alpha,
            c.lip
        )
    }
}

/// `(h, B)` for `N` particles: `h = 1/(L N^{1/4})`, `B = ⌈N^{1/4}⌉`.
#[pyfunction]
fn corollary_schedule(lip: f64, particles: usize) -> PyResult<(f64, usize)> {
    dynamics::corollary_schedule(lip, particles).map_err(to_py)
}

fn run_config(
    particles: usize,
    iterations: usize,
    seed: u64,
    step_size: Option<f64>,
    batch: Option<usize>,
    metrics_every: Option<usize>,
    algorithm: &str,
) -> PyResult<RunConfig> {
    let algorithm = match algorithm {
        "pavi" => Algorithm::Pavi,
        "exact" => Algorithm::Exact,
        other => return Err(PyValueError::new_err(format!("unknown algorithm `{other}`"))),
    };
    Ok(RunConfig {
        algorithm,
        schedule: if step_size.is_some() { Schedule::Explicit } else { Schedule::Corollary },
        step_size,
        batch,
        iterations,
        particles,
        seed,
        metrics_every,
        init: InitSpec::StandardNormal,
        checkpoint_every: None,
    })
}

/// Checks the step-size guard; returns `(h, B, guard_satisfied)`.
/// Passing `step_size` selects the explicit schedule, otherwise the corollary one.
#[pyfunction]
#[pyo3(signature = (potential, particles, step_size=None, batch=None, algorithm="pavi"))]
fn validate(
    potential: &PyPotential,
    particles: usize,
    step_size: Option<f64>,
    batch: Option<usize>,
    algorithm: &str,
) -> PyResult<(f64, usize, bool)> {
    let cfg = run_config(particles, 1, 0, step_size, batch, None, algorithm)?;
    let s = dynamics::validate_config(potential.inner.as_ref(), &cfg).map_err(to_py)?;
    Ok((s.step_size, s.batch, s.guard.satisfied))
}

fn reference_for(potential: &PyPotential, kind: &str, grid_points: usize) -> PyResult<Option<ReferenceProduct>> {
    let spec = potential.inner.as_ref();
    match kind {
        "none" => Ok(None),
        "analytic" => oracle::gaussian_mfvi_solution(spec).map(Some).map_err(to_py),
        "oracle" => {
            let init = GridProduct::initial(spec, grid_points, GridInit::Gaussian).map_err(to_py)?;
            let fp = oracle::fixed_point_solve(spec, init, &FixedPointOptions::default()).map_err(to_py)?;
            fp.product.to_reference().map(Some).map_err(to_py)
        }
        other => Err(PyValueError::new_err(format!("unknown reference kind `{other}`"))),
    }
}

/// Runs the particle dynamics. Returns a dict with `iteration`, `w2`
/// (empty without a reference), `means`, `summary` and `final_particles`.
#[pyfunction]
#[pyo3(signature = (potential, particles, iterations, seed=0, step_size=None, batch=None,
                    metrics_every=None, reference="analytic", algorithm="pavi", grid_points=1025))]
#[allow(clippy::too_many_arguments)]
fn run<'py>(
    py: Python<'py>,
    potential: &PyPotential,
    particles: usize,
    iterations: usize,
    seed: u64,
    step_size: Option<f64>,
    batch: Option<usize>,
    metrics_every: Option<usize>,
    reference: &str,
    algorithm: &str,
    grid_points: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = run_config(particles, iterations, seed, step_size, batch, metrics_every, algorithm)?;
    let reference = reference_for(potential, reference, grid_points)?;
    let spec = potential.inner.clone();
    let report = py
        .detach(|| {
            let ctx = RunContext { reference: reference.as_ref(), ..Default::default() };
            dynamics::run(spec.as_ref(), &cfg, ctx, &mut NullSink)
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("iteration", report.records.iter().map(|r| r.iteration).collect::<Vec<_>>())?;
    out.set_item("w2", report.records.iter().filter_map(|r| r.w2).collect::<Vec<_>>())?;
    out.set_item("means", report.records.iter().map(|r| r.means.clone()).collect::<Vec<_>>())?;
    out.set_item("step_size", report.metadata.schedule.step_size)?;
    out.set_item("batch", report.metadata.schedule.batch)?;
    out.set_item("guard_satisfied", report.metadata.schedule.guard.satisfied)?;
    let summary = PyDict::new(py);
    summary.set_item("final_w2", report.summary.final_w2)?;
    summary.set_item("steady_state_mean", report.summary.steady_state_mean)?;
    summary.set_item("steady_state_se", report.summary.steady_state_se)?;
    summary.set_item("contraction_rate", report.summary.contraction_rate)?;
    summary.set_item("steady_state_level", report.summary.steady_state_level)?;
    out.set_item("summary", summary)?;
    out.set_item("final_particles", array_to_rows(&report.final_particles))?;
    Ok(out)
}

/// One PAVI iteration on a particle array given as rows.
#[pyfunction]
fn pavi_step(
    potential: &PyPotential,
    rows: Vec<Vec<f64>>,
    step_size: f64,
    batch: usize,
    seed: u64,
    iteration: u64,
) -> PyResult<Vec<Vec<f64>>> {
    let x = rows_to_array(&rows)?;
    let y = dynamics::pavi_step(potential.inner.as_ref(), &x, step_size, batch, &RngStream::new(seed), iteration)
        .map_err(to_py)?;
    Ok(array_to_rows(&y))
}

/// Batch-averaged `∂_i V` with coordinate `i` set to `x`; `contexts` holds one context per entry.
#[pyfunction]
fn stochastic_grad(potential: &PyPotential, contexts: Vec<Vec<f64>>, i: usize, x: f64) -> PyResult<f64> {
    let m = potential.inner.dim();
    if contexts.iter().any(|c| c.len() != m) {
        return Err(PyValueError::new_err(format!("each context must have {m} coordinates")));
    }
    let z = ContextBatch::from_rows(m, contexts.len(), &transpose(&contexts, m)).map_err(to_py)?;
    dynamics::stochastic_grad(potential.inner.as_ref(), &z, i, x).map_err(to_py)
}

fn transpose(contexts: &[Vec<f64>], m: usize) -> Vec<f64> {
    (0..m).flat_map(|i| contexts.iter().map(move |c| c[i])).collect()
}

#[pyfunction]
fn w2_1d(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::w2_1d_empirical(&a, &b).map_err(to_py)
}

/// W2 between the product empirical measures of two particle arrays.
#[pyfunction]
fn w2_product(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> PyResult<f64> {
    let (x, y) = (rows_to_array(&x)?, rows_to_array(&y)?);
    metrics::w2_product_empirical(&x.empirical(), &y.empirical()).map_err(to_py)
}

/// Exact W2 between equal-weight atoms and `N(mean, variance)`.
#[pyfunction]
fn w2_to_gaussian(atoms: Vec<f64>, mean: f64, variance: f64) -> PyResult<f64> {
    metrics::w2_sq_empirical_vs_gaussian(&atoms, mean, variance).map(f64::sqrt).map_err(to_py)
}

/// `[(mean_i, variance_i)]` of the closed-form solution for a quadratic potential.
#[pyfunction]
fn gaussian_mfvi_solution(potential: &PyPotential) -> PyResult<Vec<(f64, f64)>> {
    let r = oracle::gaussian_mfvi_solution(potential.inner.as_ref()).map_err(to_py)?;
    Ok(r.marginals.iter().map(|m| (m.mean(), m.variance())).collect())
}

/// Grid fixed point. Returns `sweeps`, `residual` and per-coordinate
/// `marginals` with `nodes`, `density`, `mean` and `variance`.
#[pyfunction]
#[pyo3(signature = (potential, grid_points=1025, tol=1e-8, max_iter=500))]
fn grid_oracle<'py>(
    py: Python<'py>,
    potential: &PyPotential,
    grid_points: usize,
    tol: f64,
    max_iter: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = potential.inner.clone();
    let opts = FixedPointOptions { tol, max_iter, ..Default::default() };
    let fp = py
        .detach(|| {
            let init = GridProduct::initial(spec.as_ref(), grid_points, GridInit::Gaussian)?;
            oracle::fixed_point_solve(spec.as_ref(), init, &opts)
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("sweeps", fp.report.sweeps)?;
    out.set_item("residual", fp.report.max_final_residual())?;
    let mut marginals = Vec::new();
    for d in &fp.product.marginals {
        let m = PyDict::new(py);
        m.set_item("nodes", d.nodes())?;
        m.set_item("density", (0..d.len()).map(|g| d.density(g)).collect::<Vec<_>>())?;
        m.set_item("mean", d.mean())?;
        m.set_item("variance", d.variance())?;
        marginals.push(m);
    }
    out.set_item("marginals", marginals)?;
    Ok(out)
}

/// `(rate or None, level)` for a series of `(iteration, W2)` pairs.
#[pyfunction]
fn rate_fit(series: Vec<(f64, f64)>) -> PyResult<(Option<f64>, f64)> {
    let f = fit::rate_fit(&series).map_err(to_py)?;
    Ok((f.rate, f.level))
}

/// Quantile of a Gaussian reference marginal, exposed for cross-checks.
#[pyfunction]
fn gaussian_quantile(mean: f64, variance: f64, u: f64) -> PyResult<f64> {
    Marginal::Gaussian { mean, variance }.quantile(u).map_err(to_py)
}

#[pymodule]
fn pavi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("PaviError", m.py().get_type::<PaviError>())?;
    m.add_class::<PyPotential>()?;
    m.add_function(wrap_pyfunction!(corollary_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(pavi_step, m)?)?;
    m.add_function(wrap_pyfunction!(stochastic_grad, m)?)?;
    m.add_function(wrap_pyfunction!(w2_1d, m)?)?;
    m.add_function(wrap_pyfunction!(w2_product, m)?)?;
    m.add_function(wrap_pyfunction!(w2_to_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_mfvi_solution, m)?)?;
    m.add_function(wrap_pyfunction!(grid_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(rate_fit, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_quantile, m)?)?;
    Ok(())
}
