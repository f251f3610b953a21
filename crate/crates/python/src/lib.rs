//! Python bindings: losses, the MLP, the replay memory, metrics and the
//! experiment runner.

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use afs_core::experiment::{run_experiment as run_core_experiment, Ablation, ExperimentConfig};
use afs_core::losses::{self, LossOutput, Objective};
use afs_core::metrics::{self, AccuracyMatrix};
use afs_core::model::NetworkSpec;
use afs_core::report::metric_rows;
use afs_core::{trainer, Error, Sample};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

type LossTuple = (f64, Vec<f64>, f64);

fn unpack(out: afs_core::Result<LossOutput>) -> PyResult<LossTuple> {
    let out = out.map_err(py_err)?;
    Ok((out.value, out.grad_logits, out.p_target))
}

/// Loss hyperparameters.
#[pyclass(name = "LossConfig", from_py_object)]
#[derive(Clone)]
struct PyLossConfig {
    inner: afs_core::LossConfig,
}

#[pymethods]
impl PyLossConfig {
    #[new]
    #[pyo3(signature = (num_classes, alpha=0.25, gamma=2.0, mu=0.3, sigma=0.5, beta=0.1, temperature=20.0, epsilon=0.01))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        num_classes: usize,
        alpha: f64,
        gamma: f64,
        mu: f64,
        sigma: f64,
        beta: f64,
        temperature: f64,
        epsilon: f64,
    ) -> PyResult<Self> {
        let inner = afs_core::LossConfig {
            alpha,
            gamma,
            mu,
            sigma,
            beta,
            temperature,
            epsilon,
            num_classes,
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.inner.num_classes
    }
    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }
    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.gamma
    }
    #[getter]
    fn mu(&self) -> f64 {
        self.inner.mu
    }
    #[getter]
    fn sigma(&self) -> f64 {
        self.inner.sigma
    }
    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }
    #[getter]
    fn temperature(&self) -> f64 {
        self.inner.temperature
    }
    #[getter]
    fn epsilon(&self) -> f64 {
        self.inner.epsilon
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!(
            "LossConfig(num_classes={}, alpha={}, gamma={}, mu={}, sigma={}, beta={}, temperature={}, epsilon={})",
            c.num_classes, c.alpha, c.gamma, c.mu, c.sigma, c.beta, c.temperature, c.epsilon
        )
    }
}

#[pyfunction]
fn softmax(logits: Vec<f64>) -> PyResult<Vec<f64>> {
    losses::softmax(&logits).map_err(py_err)
}

/// `"HSI"`, `"ASI"` or `"ESI"`.
#[pyfunction]
fn classify_difficulty(p_target: f64) -> PyResult<&'static str> {
    losses::classify_difficulty(p_target)
        .map(|d| d.tag())
        .map_err(py_err)
}

#[pyfunction]
#[pyo3(signature = (p_target, alpha=0.25, mu=0.3, sigma=0.5))]
fn rfl_weight(p_target: f64, alpha: f64, mu: f64, sigma: f64) -> PyResult<f64> {
    losses::rfl_weight(p_target, alpha, mu, sigma).map_err(py_err)
}

/// Each loss returns `(value, grad_logits, p_target)`.
#[pyfunction]
fn ce_loss(logits: Vec<f64>, target: usize) -> PyResult<LossTuple> {
    unpack(losses::ce_loss(&logits, target))
}

#[pyfunction]
#[pyo3(signature = (logits, target, alpha=0.25, gamma=2.0))]
fn focal_loss(logits: Vec<f64>, target: usize, alpha: f64, gamma: f64) -> PyResult<LossTuple> {
    unpack(losses::focal_loss(&logits, target, alpha, gamma))
}

#[pyfunction]
#[pyo3(signature = (logits, target, alpha=0.25, mu=0.3, sigma=0.5))]
fn rfl_loss(logits: Vec<f64>, target: usize, alpha: f64, mu: f64, sigma: f64) -> PyResult<LossTuple> {
    unpack(losses::rfl_loss(&logits, target, alpha, mu, sigma))
}

#[pyfunction]
#[pyo3(signature = (logits, target, temperature=20.0, epsilon=0.01))]
fn vkd_loss(logits: Vec<f64>, target: usize, temperature: f64, epsilon: f64) -> PyResult<LossTuple> {
    let c = logits.len();
    unpack(losses::vkd_loss(&logits, target, temperature, epsilon, c))
}

#[pyfunction]
#[pyo3(signature = (logits, target, epsilon=0.01))]
fn lsr_loss(logits: Vec<f64>, target: usize, epsilon: f64) -> PyResult<LossTuple> {
    unpack(losses::lsr_loss(&logits, target, epsilon))
}

#[pyfunction]
fn afs_loss(logits: Vec<f64>, target: usize, config: &PyLossConfig) -> PyResult<LossTuple> {
    unpack(losses::afs_loss(&logits, target, &config.inner))
}

#[pyfunction]
fn virtual_teacher(target: usize, num_classes: usize, epsilon: f64) -> PyResult<Vec<f64>> {
    losses::virtual_teacher(target, num_classes, epsilon).map_err(py_err)
}

fn objective(loss: &str, config: afs_core::LossConfig) -> PyResult<Objective> {
    match loss {
        "afs" => Ok(Objective::afs(config)),
        flags => {
            let a = Ablation::parse(flags).map_err(py_err)?;
            Ok(Objective::new(a.class_loss, a.regularizer, config))
        }
    }
}

fn samples(features: Vec<Vec<f64>>, labels: Vec<usize>, first_id: u64) -> PyResult<Vec<Sample>> {
    if features.len() != labels.len() {
        return Err(PyValueError::new_err(format!(
            "{} feature rows for {} labels",
            features.len(),
            labels.len()
        )));
    }
    Ok(features
        .into_iter()
        .zip(labels)
        .enumerate()
        .map(|(i, (x, y))| Sample::new(first_id + i as u64, x, y))
        .collect())
}

/// Fully-connected ReLU classifier trained with plain SGD.
#[pyclass(name = "Network")]
struct PyNetwork {
    inner: afs_core::Network,
}

#[pymethods]
impl PyNetwork {
    #[new]
    #[pyo3(signature = (layer_widths, seed=0))]
    fn new(layer_widths: Vec<usize>, seed: u64) -> PyResult<Self> {
        let inner = afs_core::Network::init(&NetworkSpec::new(layer_widths, seed)).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn layer_widths(&self) -> Vec<usize> {
        self.inner.layer_widths()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.num_parameters()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.logits(&x).map_err(py_err)
    }

    fn predict(&self, x: Vec<f64>) -> PyResult<usize> {
        self.inner.predict(&x).map_err(py_err)
    }

    /// Row `k` of the class head and its bias.
    fn class_weights(&self, k: usize) -> PyResult<(Vec<f64>, f64)> {
        self.inner
            .class_weights(k)
            .map(|(w, b)| (w.to_vec(), b))
            .map_err(py_err)
    }

    fn parameters(&self) -> Vec<f64> {
        self.inner.parameters()
    }

    fn set_parameters(&mut self, params: Vec<f64>) -> PyResult<()> {
        self.inner.set_parameters(&params).map_err(py_err)
    }

    /// One SGD step on the mean loss over a batch. `loss` is `"afs"` or
    /// ablation flags such as `"ce"` or `"rfl+vkd"`. Returns the mean loss.
    #[pyo3(signature = (features, labels, config, loss="afs", lr=0.1))]
    fn train_step(
        &mut self,
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        config: &PyLossConfig,
        loss: &str,
        lr: f64,
    ) -> PyResult<f64> {
        let batch = samples(features, labels, 0)?;
        let obj = objective(loss, config.inner)?;
        trainer::sgd_on_batch(&mut self.inner, &batch, &obj, lr).map_err(py_err)
    }

    fn accuracy(&self, features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
        trainer::evaluate(&self.inner, &samples(features, labels, 0)?).map_err(py_err)
    }

    fn to_bytes(&self) -> PyResult<Vec<u8>> {
        let mut out = Vec::new();
        self.inner
            .write_checkpoint(&mut out)
            .map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(out)
    }

    #[staticmethod]
    fn from_bytes(data: Vec<u8>) -> PyResult<Self> {
        let inner = afs_core::Network::read_checkpoint(data.as_slice()).map_err(py_err)?;
        Ok(Self { inner })
    }
}

/// Reservoir-sampled replay memory with its own seeded RNG.
#[pyclass(name = "MemoryBuffer")]
struct PyMemoryBuffer {
    inner: afs_core::MemoryBuffer,
    rng: ChaCha8Rng,
}

#[pymethods]
impl PyMemoryBuffer {
    #[new]
    #[pyo3(signature = (capacity, seed=0))]
    fn new(capacity: usize, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: afs_core::MemoryBuffer::new(capacity).map_err(py_err)?,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn capacity(&self) -> usize {
        self.inner.capacity()
    }

    #[getter]
    fn seen(&self) -> u64 {
        self.inner.seen()
    }

    fn update(&mut self, features: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<()> {
        let batch = samples(features, labels, self.inner.seen())?;
        self.inner.reservoir_update(&batch, &mut self.rng);
        Ok(())
    }

    /// `(features, labels)` of up to `size` distinct slots.
    fn retrieve(&mut self, size: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        self.inner
            .random_retrieve(size, &mut self.rng)
            .into_iter()
            .map(|s| (s.features, s.label))
            .unzip()
    }

    fn ids(&self) -> Vec<u64> {
        self.inner.slots().iter().map(|s| s.id).collect()
    }

    fn class_histogram(&self) -> Vec<(usize, usize)> {
        self.inner.class_histogram().into_iter().collect()
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<AccuracyMatrix> {
    AccuracyMatrix::from_rows(&rows).map_err(py_err)
}

/// `rows[i]` holds the accuracies on tasks `0..=i` after training task `i`.
#[pyfunction]
fn average_accuracy(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = matrix(rows)?;
    metrics::average_accuracy(&m, m.num_tasks()).map_err(py_err)
}

#[pyfunction]
fn average_forgetting(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = matrix(rows)?;
    metrics::average_forgetting(&m, m.num_tasks()).map_err(py_err)
}

#[pyfunction]
fn average_intransigence(rows: Vec<Vec<f64>>, reference: Vec<f64>) -> PyResult<f64> {
    metrics::average_intransigence(&matrix(rows)?, &reference).map_err(py_err)
}

/// `(mean, half_width)` of the 95% t interval.
#[pyfunction]
fn confidence_interval(values: Vec<f64>) -> PyResult<(f64, f64)> {
    metrics::confidence_interval(&values).map_err(py_err)
}

/// Runs an experiment described in the `key = value` config syntax and
/// returns `(method, final A_T per run)`.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<(String, Vec<f64>)> {
    let cfg = ExperimentConfig::parse(config).map_err(py_err)?;
    let outcome = py.detach(|| run_core_experiment(&cfg)).map_err(py_err)?;
    let rows = metric_rows(&outcome.results).map_err(py_err)?;
    let last = cfg.num_tasks;
    let finals = rows.iter().filter(|r| r.task == last).map(|r| r.a_t).collect();
    Ok((cfg.method.label(), finals))
}

#[pymodule]
fn afs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLossConfig>()?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyMemoryBuffer>()?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(classify_difficulty, m)?)?;
    m.add_function(wrap_pyfunction!(rfl_weight, m)?)?;
    m.add_function(wrap_pyfunction!(ce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rfl_loss, m)?)?;
    m.add_function(wrap_pyfunction!(vkd_loss, m)?)?;
    m.add_function(wrap_pyfunction!(lsr_loss, m)?)?;
    m.add_function(wrap_pyfunction!(afs_loss, m)?)?;
    m.add_function(wrap_pyfunction!(virtual_teacher, m)?)?;
    m.add_function(wrap_pyfunction!(average_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(average_forgetting, m)?)?;
    m.add_function(wrap_pyfunction!(average_intransigence, m)?)?;
    m.add_function(wrap_pyfunction!(confidence_interval, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
