//! Python bindings. Structured results come back as plain dicts and lists.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyFloatingPointError, PyMemoryError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;
use serde::Serialize;

use engine::analysis::{self, CertificateConfig, MetScanConfig, ScanMode, DEFAULT_QUADRATURE_INTERVALS};
use engine::model::{BasisLabel, Device, DeviceSpec, FrameChoice, PauliHamiltonian};
use engine::objective::ObjectiveConfig;
use engine::optimizer::{self, OptimizerConfig};
use engine::problem::ProblemConfig;
use engine::pulse::{PulseBounds, PulseSchedule};
use engine::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::NonFinite { .. } | Error::SingularProjection { .. } => PyFloatingPointError::new_err(e.to_string()),
        Error::Capacity { .. } => PyMemoryError::new_err(e.to_string()),
        Error::Io { .. } => pyo3::exceptions::PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn label(s: &str) -> PyResult<BasisLabel> {
    s.parse().map_err(py_err)
}

/// Pulse schedule: piecewise-constant amplitudes (GHz) and drive frequencies.
#[pyclass(name = "PulseSchedule", module = "qudit_ctrl", from_py_object)]
#[derive(Clone)]
struct PySchedule {
    inner: PulseSchedule,
}

#[pymethods]
impl PySchedule {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PySchedule {
            inner: PulseSchedule::load(path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(py_err)
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration
    }

    #[getter]
    fn n_segments(&self) -> usize {
        self.inner.n_segments
    }

    #[getter]
    fn amplitudes(&self) -> Vec<Vec<f64>> {
        self.inner.amplitudes.clone()
    }

    #[getter]
    fn drive_freq(&self) -> Vec<f64> {
        self.inner.drive_freq.clone()
    }

    fn to_text(&self) -> String {
        self.inner.to_text()
    }

    fn __repr__(&self) -> String {
        format!(
            "PulseSchedule(duration={} ns, n_segments={}, n_transmons={})",
            self.inner.duration,
            self.inner.n_segments,
            self.inner.n_transmons()
        )
    }
}

/// Device, molecular Hamiltonian and pulse grid for one duration.
#[pyclass(name = "Problem", module = "qudit_ctrl")]
struct PyProblem {
    inner: engine::problem::Problem,
}

#[pymethods]
impl PyProblem {
    #[new]
    #[pyo3(signature = (device, hamiltonian, duration, levels=None, n_segments=100, n_trotter=1000, frame="dressed", amp_bound=0.02, detuning_bound=1.0, penalty_rate=0.0, leakage_threshold=1.0, normalize=true, initial="01"))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        device: PathBuf,
        hamiltonian: PathBuf,
        duration: f64,
        levels: Option<usize>,
        n_segments: usize,
        n_trotter: usize,
        frame: &str,
        amp_bound: f64,
        detuning_bound: f64,
        penalty_rate: f64,
        leakage_threshold: f64,
        normalize: bool,
        initial: &str,
    ) -> PyResult<Self> {
        let mut spec = DeviceSpec::load(device).map_err(py_err)?;
        if let Some(l) = levels {
            spec = spec.with_levels(l).map_err(py_err)?;
        }
        let h = PauliHamiltonian::load(hamiltonian).map_err(py_err)?;
        let cfg = ProblemConfig {
            duration,
            n_segments,
            n_trotter,
            frame: frame.parse::<FrameChoice>().map_err(py_err)?,
            bounds: PulseBounds {
                amp_bound,
                detuning_bound,
            },
            objective: ObjectiveConfig {
                penalty_rate,
                leakage_threshold,
                normalize,
            },
            initial: label(initial)?,
        };
        let dev = Device::new(spec).map_err(py_err)?;
        Ok(PyProblem {
            inner: engine::problem::Problem::new(Arc::new(dev), &h, cfg).map_err(py_err)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.device().dim()
    }

    #[getter]
    fn duration(&self) -> f64 {
        self.inner.duration()
    }

    #[getter]
    fn reference_energy(&self) -> f64 {
        self.inner.reference_energy()
    }

    fn labels(&self) -> Vec<String> {
        self.inner.device().labels().iter().map(|l| l.to_string()).collect()
    }

    fn with_duration(&self, duration: f64) -> PyResult<Self> {
        Ok(PyProblem {
            inner: self.inner.with_duration(duration).map_err(py_err)?,
        })
    }

    /// Packed parameters of a random start.
    fn random_start(&self, seed: u64) -> Vec<f64> {
        self.inner.random_start(seed).values
    }

    fn schedule(&self, x: Vec<f64>) -> PySchedule {
        PySchedule {
            inner: self.inner.schedule(&x),
        }
    }

    fn parameters(&self, schedule: &PySchedule) -> Vec<f64> {
        self.inner.parameters(&schedule.inner).values
    }

    /// Energy report for packed parameters.
    fn evaluate<'py>(&self, py: Python<'py>, x: Vec<f64>) -> PyResult<Bound<'py, PyAny>> {
        let r = py.detach(|| self.inner.evaluate(&x)).map_err(py_err)?;
        to_py(py, &r)
    }

    /// `(total_cost, gradient)` for packed parameters.
    fn value_and_gradient(&self, py: Python<'_>, x: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let (r, g) = py.detach(|| self.inner.value_and_gradient(&x)).map_err(py_err)?;
        Ok((r.total_cost, g))
    }

    /// Population of every basis label after the schedule.
    fn final_populations(&self, schedule: &PySchedule) -> PyResult<Vec<(String, f64)>> {
        let psi = self.inner.final_state(&schedule.inner).map_err(py_err)?;
        let pops = self.inner.device().populations(&psi, self.inner.config().frame);
        Ok(self.inner.device().labels().iter().map(|l| l.to_string()).zip(pops).collect())
    }

    #[pyo3(signature = (seed, max_iters=5000))]
    fn optimize<'py>(&self, py: Python<'py>, seed: u64, max_iters: usize) -> PyResult<(PySchedule, Bound<'py, PyAny>)> {
        let cfg = OptimizerConfig {
            max_iters,
            ..Default::default()
        };
        let x0 = self.inner.random_start(seed);
        let run = py
            .detach(|| optimizer::optimize(&self.inner, &x0, &cfg, Some(seed), None))
            .map_err(py_err)?;
        Ok((PySchedule { inner: run.schedule.clone() }, to_py(py, &run)?))
    }

    #[pyo3(signature = (n_starts, seed=0))]
    fn multistart<'py>(&self, py: Python<'py>, n_starts: usize, seed: u64) -> PyResult<Bound<'py, PyAny>> {
        let r = py
            .detach(|| optimizer::multistart(&self.inner, n_starts, seed, &OptimizerConfig::default()))
            .map_err(py_err)?;
        to_py(py, &r)
    }

    /// Success probability per duration; `descending` stops at the first duration without a success.
    #[pyo3(signature = (durations, n_starts, seed=0, descending=false))]
    fn met_scan<'py>(
        &self,
        py: Python<'py>,
        durations: Vec<f64>,
        n_starts: usize,
        seed: u64,
        descending: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let scan = MetScanConfig {
            durations,
            n_starts,
            seed,
            mode: if descending { ScanMode::Descending } else { ScanMode::Full },
            ..Default::default()
        };
        let r = py
            .detach(|| analysis::met_scan(&self.inner, &scan, &OptimizerConfig::default()))
            .map_err(py_err)?;
        to_py(py, &r)
    }

    /// Bang-bang certificate and switching-function CSV for the literal costate.
    fn certify<'py>(&self, py: Python<'py>, schedule: &PySchedule) -> PyResult<(Bound<'py, PyAny>, String)> {
        let (cert, trace) = py
            .detach(|| {
                analysis::bang_bang_certificate(
                    &self.inner,
                    &schedule.inner,
                    &ObjectiveConfig::unnormalized(),
                    &CertificateConfig::default(),
                )
            })
            .map_err(py_err)?;
        Ok((to_py(py, &cert)?, trace.to_csv()))
    }

    #[pyo3(signature = (schedule, initial="01", target="10", n_quad=DEFAULT_QUADRATURE_INTERVALS))]
    fn dyson<'py>(
        &self,
        py: Python<'py>,
        schedule: &PySchedule,
        initial: &str,
        target: &str,
        n_quad: usize,
    ) -> PyResult<Bound<'py, PyAny>> {
        let (i, f) = (label(initial)?, label(target)?);
        let r = py
            .detach(|| analysis::dyson_amplitudes(&self.inner, &schedule.inner, &i, &f, n_quad))
            .map_err(py_err)?;
        to_py(py, &r)
    }

    /// Fidelity of the second-order Dyson state against exact evolution.
    #[pyo3(signature = (schedule, n_quad=DEFAULT_QUADRATURE_INTERVALS))]
    fn second_order_fidelity(&self, py: Python<'_>, schedule: &PySchedule, n_quad: usize) -> PyResult<f64> {
        let r = py
            .detach(|| analysis::second_order_state(&self.inner, &schedule.inner, self.inner.initial_state(), n_quad))
            .map_err(py_err)?;
        Ok(r.fidelity)
    }
}

/// Computational populations of the exact ground state of a Hamiltonian file.
#[pyfunction]
fn target_populations(hamiltonian: PathBuf) -> PyResult<Vec<(String, f64)>> {
    let h = PauliHamiltonian::load(hamiltonian).map_err(py_err)?;
    Ok(analysis::target_populations(&h)
        .into_iter()
        .map(|(l, p)| (l.to_string(), p))
        .collect())
}

#[pyfunction]
fn ground_energy(hamiltonian: PathBuf) -> PyResult<f64> {
    Ok(PauliHamiltonian::load(hamiltonian).map_err(py_err)?.ground_energy())
}

#[pymodule]
fn qudit_ctrl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySchedule>()?;
    m.add_class::<PyProblem>()?;
    m.add_function(wrap_pyfunction!(target_populations, m)?)?;
    m.add_function(wrap_pyfunction!(ground_energy, m)?)?;
    Ok(())
}
