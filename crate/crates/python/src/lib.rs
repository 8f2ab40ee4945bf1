use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use splitpoint_core as core;
use splitpoint_core::{AttackConfig, Decision, SsimParams};

fn to_py(e: core::Error) -> PyErr {
    match e {
        core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait CoreResultExt<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> CoreResultExt<T> for core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(to_py)
    }
}

/// Dense f64 tensor in row-major order.
#[pyclass(name = "Tensor", module = "splitpoint")]
#[derive(Clone)]
pub struct PyTensor {
    inner: core::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(shape: Vec<usize>, data: Vec<f64>) -> PyResult<Self> {
        core::Tensor::new(shape, data).py().map(|inner| Self { inner })
    }

    #[staticmethod]
    fn zeros(shape: Vec<usize>) -> Self {
        Self { inner: core::Tensor::zeros(&shape) }
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        core::Tensor::load(path.as_ref()).py().map(|inner| Self { inner })
    }

    /// Reads a PPM/PGM image scaled to [0, 1].
    #[staticmethod]
    fn load_image(path: &str) -> PyResult<Self> {
        core::Tensor::load_pnm(path.as_ref()).py().map(|inner| Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path.as_ref()).py()
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.shape().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn numel(&self) -> usize {
        self.inner.numel()
    }

    fn __len__(&self) -> usize {
        self.inner.numel()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.shape())
    }
}

#[pyclass(name = "ModelGraph", module = "splitpoint")]
#[derive(Clone)]
pub struct PyModelGraph {
    inner: core::ModelGraph,
}

#[pymethods]
impl PyModelGraph {
    /// One of `vgg16`, `resnet50`, `efficientnetb0`, `toy4`.
    #[staticmethod]
    #[pyo3(signature = (name, input_shape=None, seed=None))]
    fn builtin(name: &str, input_shape: Option<Vec<usize>>, seed: Option<u64>) -> PyResult<Self> {
        let shape = input_shape.unwrap_or_else(|| {
            if name.eq_ignore_ascii_case("toy4") {
                vec![3, 32, 32]
            } else {
                core::arch::DEFAULT_INPUT.to_vec()
            }
        });
        let graph = match seed {
            Some(s) => core::build_architecture_seeded(name, &shape, s),
            None => core::build_architecture(name, &shape),
        };
        graph.py().map(|inner| Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        core::ModelGraph::from_json(text).py().map(|inner| Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn name(&self) -> &str {
        self.inner.name()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape().to_vec()
    }

    #[getter]
    fn output_shape(&self) -> Vec<usize> {
        self.inner.output_shape().to_vec()
    }

    fn num_layers(&self) -> usize {
        self.inner.layers().len()
    }

    /// `(label, boundary)` pairs in partition order.
    fn partition_points(&self) -> Vec<(String, usize)> {
        self.inner.partition_points().iter().map(|p| (p.label.clone(), p.boundary)).collect()
    }

    fn exposed_shape(&self, label: &str) -> PyResult<Vec<usize>> {
        let b = self.inner.boundary(label).py()?;
        Ok(self.inner.shape_at(b).to_vec())
    }

    fn parameter_count(&self) -> u64 {
        self.inner.parameter_count(0..self.inner.layers().len())
    }

    /// Returns the enclave and accelerator halves.
    fn split(&self, label: &str) -> PyResult<(Self, Self)> {
        let (enclave, accel) = self.inner.split(label).py()?;
        Ok((Self { inner: enclave }, Self { inner: accel }))
    }

    fn __repr__(&self) -> String {
        format!("ModelGraph(name={:?}, layers={})", self.inner.name(), self.inner.layers().len())
    }
}

fn breakdown_dict<'py>(py: Python<'py>, b: &core::RuntimeBreakdown) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("boundary_label", &b.boundary_label)?;
    d.set_item("enclave_seconds", b.enclave_seconds)?;
    d.set_item("transfer_seconds", b.transfer_seconds)?;
    d.set_item("accelerator_seconds", b.accelerator_seconds)?;
    d.set_item("total_seconds", b.total_seconds)?;
    d.set_item("speedup_percent", b.speedup_percent())?;
    Ok(d)
}

#[pyclass(name = "CostProfile", module = "splitpoint")]
#[derive(Clone)]
pub struct PyCostProfile {
    inner: core::CostProfile,
}

#[pymethods]
impl PyCostProfile {
    #[staticmethod]
    fn builtin(model_name: &str) -> PyResult<Self> {
        core::CostProfile::builtin(model_name).py().map(|inner| Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        core::CostProfile::from_json(text).py().map(|inner| Self { inner })
    }

    /// `measurements` maps boundary labels to measured split runtimes; the
    /// first and last points are required.
    #[staticmethod]
    fn calibrate(
        model: &PyModelGraph,
        measurements: Vec<(String, f64)>,
        full_enclave_seconds: f64,
        full_accelerator_seconds: f64,
    ) -> PyResult<Self> {
        core::cost::calibrate(&model.inner, &measurements, full_enclave_seconds, full_accelerator_seconds)
            .py()
            .map(|inner| Self { inner })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    #[getter]
    fn full_enclave_seconds(&self) -> f64 {
        self.inner.full_enclave_seconds
    }

    fn labels(&self) -> Vec<String> {
        self.inner.labels().map(str::to_string).collect()
    }

    fn breakdown<'py>(&self, py: Python<'py>, label: &str) -> PyResult<Bound<'py, PyDict>> {
        breakdown_dict(py, &self.inner.breakdown(label).py()?)
    }
}

#[pyclass(name = "PrivacyReport", module = "splitpoint")]
#[derive(Clone)]
pub struct PyPrivacyReport {
    inner: core::PrivacyReport,
}

#[pymethods]
impl PyPrivacyReport {
    #[staticmethod]
    #[pyo3(signature = (text, model_name, threshold=core::privacy::DEFAULT_THRESHOLD, slack=core::privacy::DEFAULT_SLACK))]
    fn from_csv(text: &str, model_name: &str, threshold: f64, slack: f64) -> PyResult<Self> {
        core::PrivacyReport::read_csv(text.as_bytes(), model_name, threshold, slack)
            .py()
            .map(|inner| Self { inner })
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    /// `(label, mean_ssim)` pairs in partition order.
    fn scores(&self) -> Vec<(String, f64)> {
        self.inner.scores()
    }

    #[getter]
    fn optimal_boundary(&self) -> Option<String> {
        self.inner.optimal_boundary.clone()
    }

    #[getter]
    fn threshold(&self) -> f64 {
        self.inner.threshold
    }
}

#[pyclass(name = "PartitionPlan", module = "splitpoint")]
#[derive(Clone)]
pub struct PyPartitionPlan {
    inner: core::PartitionPlan,
}

#[pymethods]
impl PyPartitionPlan {
    /// `"partition"` or `"full_enclave"`.
    #[getter]
    fn decision(&self) -> &'static str {
        match self.inner.decision {
            Decision::Partition { .. } => "partition",
            Decision::FullEnclave { .. } => "full_enclave",
        }
    }

    #[getter]
    fn reason(&self) -> Option<&'static str> {
        match self.inner.decision {
            Decision::FullEnclave { reason: core::FullEnclaveReason::NoPrivatePartition } => {
                Some("no_private_partition")
            }
            Decision::FullEnclave { reason: core::FullEnclaveReason::NoSpeedup } => Some("no_speedup"),
            Decision::Partition { .. } => None,
        }
    }

    #[getter]
    fn chosen_boundary(&self) -> Option<String> {
        self.inner.chosen_boundary().map(str::to_string)
    }

    #[getter]
    fn privacy_score(&self) -> Option<f64> {
        self.inner.privacy_score_at_choice
    }

    fn breakdown<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        breakdown_dict(py, &self.inner.breakdown)
    }

    fn feasible_labels(&self) -> Vec<String> {
        self.inner.feasible_labels().into_iter().map(str::to_string).collect()
    }

    fn summary_csv(&self) -> String {
        self.inner.summary_csv()
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }
}

#[pyfunction]
fn forward(model: &PyModelGraph, input: &PyTensor) -> PyResult<PyTensor> {
    core::forward(&model.inner, &input.inner).py().map(|inner| PyTensor { inner })
}

/// Runs the layers kept in the enclave at `boundary_label`.
#[pyfunction]
fn forward_until(model: &PyModelGraph, input: &PyTensor, boundary_label: &str) -> PyResult<PyTensor> {
    core::forward_until(&model.inner, &input.inner, boundary_label)
        .py()
        .map(|inner| PyTensor { inner })
}

#[pyfunction]
fn ssim(a: &PyTensor, b: &PyTensor) -> PyResult<f64> {
    core::ssim(&a.inner, &b.inner, &SsimParams::default()).py()
}

fn attack_config(steps: usize, step_size: f64, seed: u64) -> AttackConfig {
    AttackConfig { steps, step_size, init_seed: seed, ..AttackConfig::default() }
}

/// Reconstructs an input from an exposed feature map, given white-box access
/// to the enclave layers.
#[pyfunction]
#[pyo3(signature = (model, boundary_label, exposed, steps=2000, step_size=0.05, seed=0))]
fn invert(
    py: Python<'_>,
    model: &PyModelGraph,
    boundary_label: &str,
    exposed: &PyTensor,
    steps: usize,
    step_size: f64,
    seed: u64,
) -> PyResult<PyTensor> {
    let cfg = attack_config(steps, step_size, seed);
    py.allow_threads(|| core::invert_feature_map(&model.inner, boundary_label, &exposed.inner, &cfg))
        .py()
        .map(|inner| PyTensor { inner })
}

#[pyfunction]
#[pyo3(signature = (count, shape, seed=0))]
fn synthetic_images(count: usize, shape: Vec<usize>, seed: u64) -> PyResult<Vec<PyTensor>> {
    let images = core::privacy::synthetic_images(count, &shape, seed).py()?;
    Ok(images.into_iter().map(|inner| PyTensor { inner }).collect())
}

/// Attacks every partition point of `model` with every image.
#[pyfunction]
#[pyo3(signature = (
    model,
    images,
    steps=2000,
    step_size=0.05,
    seed=0,
    threshold=core::privacy::DEFAULT_THRESHOLD,
    slack=core::privacy::DEFAULT_SLACK,
))]
#[allow(clippy::too_many_arguments)]
fn evaluate(
    py: Python<'_>,
    model: &PyModelGraph,
    images: Vec<PyTensor>,
    steps: usize,
    step_size: f64,
    seed: u64,
    threshold: f64,
    slack: f64,
) -> PyResult<PyPrivacyReport> {
    let cfg = attack_config(steps, step_size, seed);
    let images: Vec<core::Tensor> = images.into_iter().map(|t| t.inner).collect();
    py.allow_threads(|| {
        core::evaluate_privacy(&model.inner, &images, &cfg, &SsimParams::default(), threshold, slack)
    })
    .py()
    .map(|inner| PyPrivacyReport { inner })
}

/// Earliest label whose score is within `threshold` and after which no score
/// exceeds `threshold + slack`.
#[pyfunction]
#[pyo3(signature = (scores, threshold=core::privacy::DEFAULT_THRESHOLD, slack=core::privacy::DEFAULT_SLACK))]
fn select_optimal_partition(scores: Vec<(String, f64)>, threshold: f64, slack: f64) -> Option<String> {
    core::select_optimal_partition(&scores, threshold, slack)
}

#[pyfunction]
#[pyo3(signature = (profile, privacy, threshold=None, slack=None))]
fn plan(
    profile: &PyCostProfile,
    privacy: &PyPrivacyReport,
    threshold: Option<f64>,
    slack: Option<f64>,
) -> PyResult<PyPartitionPlan> {
    let req = core::PlanRequest::new(profile.inner.clone(), privacy.inner.clone()).with_threshold(
        threshold.unwrap_or(privacy.inner.threshold),
        slack.unwrap_or(privacy.inner.slack),
    );
    core::plan(&req).py().map(|inner| PyPartitionPlan { inner })
}

/// Runs the two-phase pipeline and returns `(output, ledger_csv, breakdown)`.
#[pyfunction]
fn simulate<'py>(
    py: Python<'py>,
    model: &PyModelGraph,
    boundary_label: &str,
    input: &PyTensor,
    profile: &PyCostProfile,
) -> PyResult<(PyTensor, String, Bound<'py, PyDict>)> {
    let run = core::simulate_pipeline(&model.inner, boundary_label, &input.inner, &profile.inner).py()?;
    let breakdown = breakdown_dict(py, &run.breakdown)?;
    Ok((PyTensor { inner: run.output }, run.ledger.to_csv(), breakdown))
}

#[pymodule]
pub fn splitpoint(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModelGraph>()?;
    m.add_class::<PyCostProfile>()?;
    m.add_class::<PyPrivacyReport>()?;
    m.add_class::<PyPartitionPlan>()?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(forward_until, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(invert, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_images, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(select_optimal_partition, m)?)?;
    m.add_function(wrap_pyfunction!(plan, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
