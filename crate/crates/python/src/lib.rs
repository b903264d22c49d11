//! Python bindings. Tensors cross the boundary as flat lists plus a shape.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use stdsnn::evaluation::{self, ConfusionCounts, MetricsReport};
use stdsnn::model::{ModelConfig, ModelParams};
use stdsnn::phantom::{
    self, enumerate_pairs, generate_cohort, sample_stream_inputs, CohortSpec, PatientSeries, PhantomOptions,
    StreamVariant,
};
use stdsnn::rng::rng_for;
use stdsnn::training::{self, TrainConfig, TrainState};
use stdsnn::Tensor;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn variant(name: &str) -> PyResult<StreamVariant> {
    name.parse().map_err(PyValueError::new_err)
}

/// A set of patients, each with time-ordered scans.
#[pyclass(module = "stdsnn_py", skip_from_py_object)]
#[derive(Clone)]
pub struct Dataset {
    patients: Vec<PatientSeries>,
}

#[pymethods]
impl Dataset {
    /// Phantom cohort, e.g. `Dataset.generate("2x6,3x3,4x1", (8, 64, 64), seed=0)`.
    #[staticmethod]
    #[pyo3(signature = (scan_counts, dims, seed = 0, clean = false))]
    fn generate(scan_counts: &str, dims: (usize, usize, usize), seed: u64, clean: bool) -> PyResult<Self> {
        let spec: CohortSpec = scan_counts.parse().map_err(value_err)?;
        let opts = if clean { PhantomOptions::clean() } else { PhantomOptions::default() };
        let patients = generate_cohort(&spec, dims, seed, &opts).map_err(value_err)?;
        Ok(Self { patients })
    }

    #[staticmethod]
    fn load(manifest: PathBuf) -> PyResult<Self> {
        let patients = phantom::read_dataset(&manifest).map_err(runtime_err)?;
        Ok(Self { patients })
    }

    /// Writes scans and a manifest into `dir`; returns the manifest path.
    fn save(&self, dir: PathBuf) -> PyResult<String> {
        let path = phantom::write_dataset(&dir, &self.patients).map_err(runtime_err)?;
        Ok(path.to_string_lossy().into_owned())
    }

    fn patient_ids(&self) -> Vec<String> {
        self.patients.iter().map(|p| p.patient_id.clone()).collect()
    }

    fn scan_counts(&self) -> Vec<usize> {
        self.patients.iter().map(|p| p.scans.len()).collect()
    }

    /// `(slices, height, width)` of the first scan.
    fn dims(&self) -> Option<(usize, usize, usize)> {
        self.patients.first().and_then(|p| p.scans.first()).map(|s| s.dims())
    }

    /// 1-based `(earlier, later)` scan numbers of every sequential pair per patient.
    fn sequential_pairs(&self) -> Vec<(String, Vec<(usize, usize)>)> {
        self.patients
            .iter()
            .map(|p| (p.patient_id.clone(), enumerate_pairs(p).iter().map(|q| q.scan_numbers()).collect()))
            .collect()
    }

    #[pyo3(signature = (variant_name = "sequential", seed = 0))]
    fn num_pairs(&self, variant_name: &str, seed: u64) -> PyResult<usize> {
        let pairs = sample_stream_inputs(variant(variant_name)?, &self.patients, &mut rng_for(seed, &[0]))
            .map_err(value_err)?;
        Ok(pairs.len())
    }

    fn __len__(&self) -> usize {
        self.patients.len()
    }

    fn __repr__(&self) -> String {
        format!("Dataset(patients={}, scans={})", self.patients.len(), self.scan_counts().iter().sum::<usize>())
    }
}

/// The dual-stream segmentation network with its optimizer state.
#[pyclass(module = "stdsnn_py")]
pub struct Model {
    state: TrainState,
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (height = 176, width = 176, base_width = 32, num_classes = 6, levels = 4, seed = 0))]
    fn new(
        height: usize,
        width: usize,
        base_width: usize,
        num_classes: usize,
        levels: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ModelConfig { in_channels: 1, num_classes, base_width, levels, input_size: (height, width) };
        let model = ModelParams::build(cfg, seed).map_err(value_err)?;
        Ok(Self { state: TrainState::new(model, &TrainConfig::default()) })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let state = training::load_checkpoint(&path, None).map_err(runtime_err)?;
        Ok(Self { state })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        training::save_checkpoint(&path, &self.state).map_err(runtime_err)
    }

    fn num_parameters(&self) -> usize {
        self.state.model.num_parameters()
    }

    /// Completed training epochs.
    #[getter]
    fn epoch(&self) -> usize {
        self.state.epoch
    }

    /// Eval-mode class probabilities for images of shape `(n, h, w)` given
    /// as flat lists; returns two flat `(n, classes, h, w)` lists.
    fn predict(&self, x1: Vec<f32>, x2: Vec<f32>, shape: (usize, usize, usize)) -> PyResult<(Vec<f32>, Vec<f32>)> {
        let dims = [shape.0, 1, shape.1, shape.2];
        let a = Tensor::new(&dims, x1).map_err(value_err)?;
        let b = Tensor::new(&dims, x2).map_err(value_err)?;
        let (p1, p2) = self.state.model.predict(&a, &b).map_err(value_err)?;
        Ok((p1.into_data(), p2.into_data()))
    }

    /// Trains for `epochs` more epochs; returns the mean loss per epoch.
    #[pyo3(signature = (
        dataset, epochs, variant_name = "sequential", learning_rate = 5e-5, batch_size = 6,
        weight_decay = 1e-5, step_size = 50, gamma = 0.5, seed = 0
    ))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &mut self,
        py: Python<'_>,
        dataset: &Dataset,
        epochs: usize,
        variant_name: &str,
        learning_rate: f64,
        batch_size: usize,
        weight_decay: f64,
        step_size: usize,
        gamma: f64,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let cfg = TrainConfig {
            batch_size,
            learning_rate,
            weight_decay,
            step_size,
            gamma,
            epochs: self.state.epoch + epochs,
            seed,
            ..TrainConfig::default()
        };
        cfg.validate().map_err(value_err)?;
        let pairs =
            sample_stream_inputs(variant(variant_name)?, &dataset.patients, &mut rng_for(seed, &[0x7061697273]))
                .map_err(value_err)?;
        let state = &mut self.state;
        let history = py
            .detach(|| training::run(state, &pairs, &cfg, &training::CheckpointPolicy::default(), |_| {}))
            .map_err(runtime_err)?;
        Ok(history.losses())
    }

    /// Micro-averaged metrics on a dataset: `{"dsc": .., "jaccard": .., "ppv": .., "per_class": {...}}`.
    #[pyo3(signature = (dataset, variant_name = "sequential", seed = 0))]
    fn evaluate(&self, py: Python<'_>, dataset: &Dataset, variant_name: &str, seed: u64) -> PyResult<Py<PyAny>> {
        let pairs = sample_stream_inputs(variant(variant_name)?, &dataset.patients, &mut rng_for(seed, &[0x6576616c]))
            .map_err(value_err)?;
        let model = &self.state.model;
        let report = py.detach(|| evaluation::evaluate_pairs(model, &pairs)).map_err(runtime_err)?;
        report_dict(py, &report)
    }

    fn __repr__(&self) -> String {
        self.state.model.to_string()
    }
}

fn report_dict(py: Python<'_>, r: &MetricsReport) -> PyResult<Py<PyAny>> {
    let d = pyo3::types::PyDict::new(py);
    d.set_item("dsc", r.mean.dsc)?;
    d.set_item("jaccard", r.mean.jaccard)?;
    d.set_item("ppv", r.mean.ppv)?;
    d.set_item("samples", r.samples)?;
    let per = pyo3::types::PyDict::new(py);
    for (i, c) in r.classes.iter().enumerate() {
        let name = phantom::CLASS_NAMES.get(i + 1).copied().unwrap_or("class");
        per.set_item(name, (c.dsc, c.jaccard, c.ppv))?;
    }
    d.set_item("per_class", per)?;
    Ok(d.into_any().unbind())
}

/// `(dsc, jaccard, ppv)` from confusion counts; `None` where undefined.
#[pyfunction]
#[pyo3(name = "metrics")]
fn metrics_py(tp: u64, fp: u64, fn_: u64) -> (Option<f64>, Option<f64>, Option<f64>) {
    let c = ConfusionCounts { tp, fp, fn_ };
    (evaluation::dsc(c), evaluation::jaccard(c), evaluation::ppv(c))
}

/// Welch two-sample t-test: `(t, df, two_sided_p)`.
#[pyfunction]
fn welch_t_test(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = evaluation::welch_t_test(&a, &b).map_err(value_err)?;
    Ok((r.t, r.df, r.p))
}

#[pymodule]
fn stdsnn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(metrics_py, m)?)?;
    m.add_function(wrap_pyfunction!(welch_t_test, m)?)?;
    m.add("CLASS_NAMES", phantom::CLASS_NAMES.to_vec())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_helpers() {
        assert_eq!(metrics_py(2, 1, 1), (Some(4.0 / 6.0), Some(0.5), Some(2.0 / 3.0)));
        assert_eq!(metrics_py(0, 0, 0), (None, None, None));
        assert!(variant("sideways").is_err());
    }
}
