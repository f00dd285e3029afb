//! Python bindings: model construction, Riccati synthesis, the true-parameter
//! oracle, learning runs and the full experiment pipeline.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lqmdp::analysis;
use lqmdp::config::{self, ExperimentConfig};
use lqmdp::envmodel;
use lqmdp::experiment::{self, RunOptions};
use lqmdp::linalg::{self, Mat, Vector};
use lqmdp::linctl;
use lqmdp::lsvi::{self, ThetaStack};
use lqmdp::oracle;

type Rows = Vec<Vec<f64>>;

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn mat(rows: &Rows) -> PyResult<Mat> {
    linalg::from_rows(rows).ok_or_else(|| PyValueError::new_err("ragged or empty matrix"))
}

fn rows(m: &Mat) -> Rows {
    linalg::to_rows(m)
}

fn theta_rows(th: &ThetaStack) -> Rows {
    th.as_slice().iter().map(|v| v.iter().copied().collect()).collect()
}

#[pyclass(name = "LinearSystem", frozen)]
struct PyLinearSystem(linctl::LinearSystem);

#[pymethods]
impl PyLinearSystem {
    #[new]
    fn new(a: Rows, b: Rows) -> PyResult<Self> {
        Ok(Self(linctl::LinearSystem::new(mat(&a)?, mat(&b)?).map_err(err)?))
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    fn step(&self, x: Vec<f64>, u: Vec<f64>) -> Vec<f64> {
        self.0.step(&Vector::from_vec(x), &Vector::from_vec(u)).iter().copied().collect()
    }
}

#[pyclass(name = "CostMatrices", frozen)]
struct PyCost(linctl::CostMatrices);

#[pymethods]
impl PyCost {
    #[new]
    fn new(w: Rows, f: Rows, d: Rows, m: Rows, h: Rows, r: Rows) -> PyResult<Self> {
        Ok(Self(
            linctl::CostMatrices::new(mat(&w)?, mat(&f)?, mat(&d)?, mat(&m)?, mat(&h)?, mat(&r)?).map_err(err)?,
        ))
    }

    /// `(Cx − s)ᵀM(Cx − s) + uᵀRu`.
    #[staticmethod]
    fn tracking(c: Rows, m: Rows, r: Rows) -> PyResult<Self> {
        Ok(Self(linctl::CostMatrices::tracking(&mat(&c)?, mat(&m)?, mat(&r)?).map_err(err)?))
    }

    fn stage_cost(&self, x: Vec<f64>, s: Vec<f64>, u: Vec<f64>) -> PyResult<f64> {
        linctl::stage_cost(&Vector::from_vec(x), &Vector::from_vec(s), &Vector::from_vec(u), &self.0).map_err(err)
    }

    #[getter]
    fn w(&self) -> Rows {
        rows(&self.0.w)
    }

    #[getter]
    fn f(&self) -> Rows {
        rows(&self.0.f)
    }
}

#[pyclass(name = "RiccatiSolution", frozen)]
struct PySolution(linctl::RiccatiSolution);

#[pymethods]
impl PySolution {
    #[getter]
    fn horizon(&self) -> usize {
        self.0.horizon()
    }

    fn g(&self, t: usize) -> PyResult<Rows> {
        check_t(t, self.0.horizon())?;
        Ok(rows(self.0.g(t)))
    }

    fn kx(&self, t: usize) -> PyResult<Rows> {
        check_t(t + 1, self.0.horizon())?;
        Ok(rows(self.0.kx(t)))
    }

    fn ks(&self, t: usize) -> PyResult<Rows> {
        check_t(t + 1, self.0.horizon())?;
        Ok(rows(self.0.ks(t)))
    }

    fn kh(&self, t: usize) -> PyResult<Rows> {
        check_t(t + 1, self.0.horizon())?;
        Ok(rows(self.0.kh(t)))
    }

    fn transition(&self, t1: usize, t2: usize) -> PyResult<Rows> {
        Ok(rows(&self.0.transition(t1, t2).map_err(err)?))
    }

    fn residuals(&self, sys: &PyLinearSystem, cost: &PyCost) -> Vec<f64> {
        self.0.riccati_residuals(&sys.0, &cost.0)
    }

    /// Envelope constants `(α, ρ)` as a dict.
    fn iss_constants<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = analysis::iss_constants(&self.0);
        let d = PyDict::new(py);
        d.set_item("alpha", c.alpha)?;
        d.set_item("rho", c.rho)?;
        d.set_item("spectral_rate", c.spectral_rate)?;
        d.set_item("mode", format!("{:?}", c.mode))?;
        d.set_item("certified", c.certified())?;
        Ok(d)
    }
}

fn check_t(t: usize, horizon: usize) -> PyResult<()> {
    if t > horizon {
        return Err(PyValueError::new_err(format!("time {t} outside 0..={horizon}")));
    }
    Ok(())
}

#[pyfunction]
fn riccati_backward(sys: &PyLinearSystem, cost: &PyCost, horizon: usize) -> PyResult<PySolution> {
    Ok(PySolution(linctl::riccati_backward(&sys.0, &cost.0, horizon).map_err(err)?))
}

#[pyclass(name = "MixtureKernel", frozen)]
struct PyKernel(envmodel::MixtureKernel);

#[pymethods]
impl PyKernel {
    /// The two-regime scalar kernel of the tracking example.
    #[staticmethod]
    fn example() -> Self {
        Self(envmodel::example_kernel())
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d()
    }

    #[getter]
    fn delta_s(&self) -> f64 {
        self.0.delta_s()
    }

    fn features(&self, s: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self.0.feature().eval(&Vector::from_vec(s)).map_err(err)?.iter().copied().collect())
    }
}

/// `θ*_t` for `t = 1..=T` and their standard errors, one row per `t`.
#[pyfunction]
fn true_theta(kern: &PyKernel, cost: &PyCost, sol: &PySolution, mc_samples: usize, seed: u64) -> PyResult<(Rows, Rows)> {
    let tt = oracle::true_theta_backward(&kern.0, &cost.0, &sol.0, mc_samples, seed).map_err(err)?;
    Ok((theta_rows(&tt.theta), theta_rows(&tt.std_errors)))
}

/// Validated experiment configuration.
#[pyclass(name = "Experiment")]
struct PyExperiment(ExperimentConfig);

#[pymethods]
impl PyExperiment {
    #[staticmethod]
    fn from_file(path: PathBuf) -> PyResult<Self> {
        Ok(Self(config::load_config(&path).map_err(err)?))
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self(ExperimentConfig::from_toml_str(text).map_err(err)?))
    }

    fn to_toml(&self) -> String {
        self.0.to_toml_string()
    }

    #[getter]
    fn episodes(&self) -> usize {
        self.0.learner.episodes
    }

    #[setter]
    fn set_episodes(&mut self, l: usize) {
        self.0.learner.episodes = l;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.learner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.0.learner.seed = seed;
    }

    fn system(&self) -> PyResult<PyLinearSystem> {
        Ok(PyLinearSystem(self.0.instance().map_err(err)?.sys))
    }

    fn cost(&self) -> PyResult<PyCost> {
        Ok(PyCost(self.0.instance().map_err(err)?.cost))
    }

    fn kernel(&self) -> PyResult<PyKernel> {
        Ok(PyKernel(self.0.instance().map_err(err)?.kern))
    }

    /// Runs the learner; returns the weights used in each episode as
    /// `[episode][t-1][k]`.
    fn learn(&self, py: Python<'_>) -> PyResult<Vec<Rows>> {
        let inst = self.0.instance().map_err(err)?;
        let hist = py
            .detach(|| {
                let sol = linctl::riccati_backward(&inst.sys, &inst.cost, inst.learner.horizon).map_err(|e| e.to_string())?;
                lsvi::run_lsvi(&inst.learner, &inst.sys, &inst.cost, &inst.kern, &sol).map_err(|e| e.to_string())
            })
            .map_err(PyValueError::new_err)?;
        Ok(hist.records.iter().map(|r| theta_rows(&r.theta)).collect())
    }

    /// Full pipeline into `out_dir`; returns the manifest file names and
    /// the scalar summary.
    #[pyo3(signature = (out_dir, quiet = true))]
    fn run<'py>(&self, py: Python<'py>, out_dir: PathBuf, quiet: bool) -> PyResult<Bound<'py, PyDict>> {
        let cfg = self.0.clone();
        let m = py
            .detach(|| experiment::run_experiment(&cfg, &out_dir, &RunOptions { quiet }).map_err(|e| e.to_string()))
            .map_err(PyValueError::new_err)?;
        let d = PyDict::new(py);
        d.set_item("files", m.files.iter().map(|f| f.name.clone()).collect::<Vec<_>>())?;
        let s = &m.summary;
        d.set_item("regret_final", s.regret_final)?;
        d.set_item("regret_loglog_slope", s.regret_loglog_slope)?;
        d.set_item("param_error_final", s.param_error_final)?;
        d.set_item("iss_pass", s.iss_pass)?;
        d.set_item("alpha", s.alpha)?;
        d.set_item("rho", s.rho)?;
        d.set_item("bound_dominates_regret", s.bound_dominates_regret)?;
        Ok(d)
    }
}

#[pymodule]
fn lqmdp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLinearSystem>()?;
    m.add_class::<PyCost>()?;
    m.add_class::<PySolution>()?;
    m.add_class::<PyKernel>()?;
    m.add_class::<PyExperiment>()?;
    m.add_function(wrap_pyfunction!(riccati_backward, m)?)?;
    m.add_function(wrap_pyfunction!(true_theta, m)?)?;
    Ok(())
}
