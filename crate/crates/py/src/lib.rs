//! Python bindings for `localplda`. Vectors cross the boundary as lists of
//! floats and matrices as lists of rows.

use std::path::PathBuf;

use localplda::data::{build_local_view, build_pooled_view, LabelView};
use localplda::eval::generate_trials_from_labels;
use localplda::synth::{sample_corpus, sample_truth};
use localplda::{
    build_global_view, compute_eer, load_model, read_dataset, save_model, train_em, Error, LabelStrategy, TrainConfig,
};
use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn vectors(vs: Vec<Vec<f64>>) -> Vec<DVector<f64>> {
    vs.into_iter().map(vector).collect()
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("matrix rows have different lengths"));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.into_iter().flatten(),
    ))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `(utt_id, conv_id, slot, global_spk or None, vector)`
type RecordTuple = (String, String, u32, Option<String>, Vec<f64>);

fn list(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

/// A collection of utterance i-vectors with their conversation and speaker labels.
#[pyclass(name = "Dataset", module = "localplda_py", skip_from_py_object)]
struct PyDataset {
    inner: localplda::Dataset,
}

#[pymethods]
impl PyDataset {
    /// Records as `(utt_id, conv_id, slot, global_spk or None, vector)` tuples.
    #[new]
    fn new(dim: usize, records: Vec<RecordTuple>) -> PyResult<Self> {
        let records = records
            .into_iter()
            .map(|(u, c, s, g, v)| localplda::UtteranceRecord::new(u, c, s, g, vector(v)))
            .collect();
        let inner = localplda::Dataset::new(dim, records).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_dataset(path).map_err(to_py)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        localplda::write_dataset(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn utt_ids(&self) -> Vec<String> {
        self.inner.records().iter().map(|r| r.utt_id.clone()).collect()
    }

    fn vectors(&self) -> Vec<Vec<f64>> {
        self.inner.vectors().iter().map(list).collect()
    }

    fn records(&self) -> Vec<RecordTuple> {
        self.inner
            .records()
            .iter()
            .map(|r| {
                (
                    r.utt_id.clone(),
                    r.conv_id.clone(),
                    r.slot,
                    r.global_spk.clone(),
                    list(&r.vector),
                )
            })
            .collect()
    }

    fn concat(&self, other: &PyDataset) -> PyResult<Self> {
        Ok(Self {
            inner: self.inner.concat(&other.inner).map_err(to_py)?,
        })
    }

    fn __repr__(&self) -> String {
        format!("Dataset(dim={}, len={})", self.inner.dim(), self.inner.len())
    }
}

/// Centering, whitening and length normalization fitted on training vectors.
#[pyclass(name = "Preprocessor", module = "localplda_py", skip_from_py_object)]
struct PyPreprocessor {
    inner: localplda::Preprocessor,
}

#[pymethods]
impl PyPreprocessor {
    #[staticmethod]
    #[pyo3(signature = (vectors, whiten = true))]
    fn fit(vectors: Vec<Vec<f64>>, whiten: bool) -> PyResult<Self> {
        let inner = localplda::Preprocessor::fit(&self::vectors(vectors), whiten).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn identity(dim: usize) -> Self {
        Self {
            inner: localplda::Preprocessor::identity(dim),
        }
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        list(self.inner.mean())
    }

    #[getter]
    fn whitener(&self) -> Vec<Vec<f64>> {
        rows(self.inner.whitener())
    }

    fn length_normalize(&self, v: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(list(&self.inner.length_normalize(&vector(v)).map_err(to_py)?))
    }

    fn apply_all(&self, vs: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let out = self.inner.apply_all(&vectors(vs)).map_err(to_py)?;
        Ok(out.iter().map(list).collect())
    }
}

/// A trained (or ground-truth) PLDA model `w = mean + V y + z`.
#[pyclass(name = "PldaModel", module = "localplda_py", skip_from_py_object)]
struct PyPldaModel {
    inner: localplda::PldaModel,
}

#[pymethods]
impl PyPldaModel {
    #[new]
    fn new(mean: Vec<f64>, v: Vec<Vec<f64>>, sigma: Vec<Vec<f64>>) -> PyResult<Self> {
        let v = if v.is_empty() {
            DMatrix::zeros(mean.len(), 0)
        } else {
            matrix(v)?
        };
        let inner = localplda::PldaModel::new(vector(mean), v, matrix(sigma)?).map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Loads a model file; returns `(model, preprocessor)`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<(Self, PyPreprocessor)> {
        let (m, pp) = load_model(path).map_err(to_py)?;
        Ok((Self { inner: m }, PyPreprocessor { inner: pp }))
    }

    #[pyo3(signature = (path, preprocessor = None))]
    fn save(&self, path: PathBuf, preprocessor: Option<&PyPreprocessor>) -> PyResult<()> {
        let pp = preprocessor.map_or_else(
            || localplda::Preprocessor::identity(self.inner.dim()),
            |p| p.inner.clone(),
        );
        save_model(&self.inner, &pp, path).map_err(to_py)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn latent_dim(&self) -> usize {
        self.inner.latent_dim()
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        list(self.inner.mean())
    }

    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        rows(self.inner.v())
    }

    #[getter]
    fn sigma(&self) -> Vec<Vec<f64>> {
        rows(self.inner.sigma())
    }

    fn class_loglik(&self, vs: Vec<Vec<f64>>) -> PyResult<f64> {
        self.inner.class_loglik(&vectors(vs)).map_err(to_py)
    }

    fn score_llr(&self, enroll: Vec<Vec<f64>>, test: Vec<f64>) -> PyResult<f64> {
        self.inner.score_llr(&vectors(enroll), &vector(test)).map_err(to_py)
    }

    /// Scores `(model_index, test_index)` trials against enrollment sets and test vectors.
    fn score_trials(
        &self,
        py: Python<'_>,
        enroll: Vec<Vec<Vec<f64>>>,
        tests: Vec<Vec<f64>>,
        trials: Vec<(u32, u32)>,
    ) -> PyResult<Vec<f64>> {
        let stats = enroll
            .into_iter()
            .map(|e| self.inner.enrollment_stats(&vectors(e)))
            .collect::<localplda::Result<Vec<_>>>()
            .map_err(to_py)?;
        let tests = vectors(tests);
        for &(m, t) in &trials {
            if m as usize >= stats.len() || t as usize >= tests.len() {
                return Err(PyValueError::new_err(format!("trial ({m}, {t}) is out of range")));
            }
            if tests[t as usize].len() != self.inner.dim() {
                return Err(PyValueError::new_err(format!(
                    "test vector {t} has the wrong dimension"
                )));
            }
        }
        Ok(py.detach(|| self.inner.score_indexed(&stats, &tests, &trials)))
    }

    fn __repr__(&self) -> String {
        format!(
            "PldaModel(dim={}, latent_dim={})",
            self.inner.dim(),
            self.inner.latent_dim()
        )
    }
}

fn view(data: &localplda::Dataset, labels: &str) -> PyResult<LabelView> {
    let strategy: LabelStrategy = labels.parse().map_err(to_py)?;
    match strategy {
        LabelStrategy::Global => build_global_view(data),
        LabelStrategy::Local => build_local_view(data),
        LabelStrategy::Pooled => Err(Error::Config("use train_pooled for pooled labels".into())),
    }
    .map_err(to_py)
}

/// Classes of a labeling strategy (`"global"` or `"local"`) as `{class_id: [utt_id, ...]}`.
#[pyfunction]
fn label_classes(data: &PyDataset, labels: &str) -> PyResult<std::collections::BTreeMap<String, Vec<String>>> {
    Ok(view(&data.inner, labels)?.classes().clone())
}

fn fit_and_train(
    py: Python<'_>,
    data: &localplda::Dataset,
    view: &LabelView,
    cfg: TrainConfig,
    whiten: bool,
) -> PyResult<(PyPldaModel, PyPreprocessor, Vec<f64>)> {
    let (out, pp) = py
        .detach(|| {
            let pp = localplda::Preprocessor::fit(&data.vectors(), whiten)?;
            train_em(data, view, &pp, &cfg).map(|o| (o, pp))
        })
        .map_err(to_py)?;
    Ok((
        PyPldaModel { inner: out.model },
        PyPreprocessor { inner: pp },
        out.logliks,
    ))
}

fn train_config(latent_dim: usize, iterations: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        iterations,
        seed,
        ..TrainConfig::new(latent_dim)
    }
}

/// Fits a preprocessor and trains PLDA by EM; returns `(model, preprocessor, logliks)`.
#[pyfunction]
#[pyo3(signature = (data, labels, latent_dim, iterations = 50, seed = 0, whiten = true))]
fn train(
    py: Python<'_>,
    data: &PyDataset,
    labels: &str,
    latent_dim: usize,
    iterations: usize,
    seed: u64,
    whiten: bool,
) -> PyResult<(PyPldaModel, PyPreprocessor, Vec<f64>)> {
    let v = view(&data.inner, labels)?;
    fit_and_train(py, &data.inner, &v, train_config(latent_dim, iterations, seed), whiten)
}

/// Trains on globally labeled `global_data` pooled with locally labeled `local_data`.
#[pyfunction]
#[pyo3(signature = (global_data, local_data, latent_dim, iterations = 50, seed = 0, whiten = true))]
fn train_pooled(
    py: Python<'_>,
    global_data: &PyDataset,
    local_data: &PyDataset,
    latent_dim: usize,
    iterations: usize,
    seed: u64,
    whiten: bool,
) -> PyResult<(PyPldaModel, PyPreprocessor, Vec<f64>)> {
    let g = build_global_view(&global_data.inner).map_err(to_py)?;
    let l = build_local_view(&local_data.inner).map_err(to_py)?;
    let v = build_pooled_view(&g, &l).map_err(to_py)?;
    let data = global_data.inner.concat(&local_data.inner).map_err(to_py)?;
    fit_and_train(py, &data, &v, train_config(latent_dim, iterations, seed), whiten)
}

/// Equal error rate and its threshold: `(eer, threshold)`.
#[pyfunction]
fn equal_error_rate(targets: Vec<f64>, nontargets: Vec<f64>) -> PyResult<(f64, f64)> {
    let e = compute_eer(&targets, &nontargets).map_err(to_py)?;
    Ok((e.eer, e.threshold))
}

/// Full model x test cross product keyed by the test records' speaker labels,
/// as `(model_id, test_utt_id, is_target)` tuples.
#[pyfunction]
fn generate_trials(models: Vec<String>, test: &PyDataset) -> PyResult<Vec<(String, String, bool)>> {
    let trials = generate_trials_from_labels(&models, &test.inner).map_err(to_py)?;
    Ok(trials
        .iter()
        .map(|(m, t, k)| (m.to_string(), t.to_string(), k))
        .collect())
}

/// Draws a ground-truth model (unless `truth` is given) and a conversation
/// corpus from it; returns `(dataset, truth_model)`.
#[pyfunction]
#[pyo3(signature = (
    dim, latent_dim, seed = 0, conversations = 100, slots = 2, utts = 2,
    recurrence = 0.0, truth = None, prefix = String::new()
))]
#[allow(clippy::too_many_arguments)]
fn synthesize(
    dim: usize,
    latent_dim: usize,
    seed: u64,
    conversations: usize,
    slots: usize,
    utts: usize,
    recurrence: f64,
    truth: Option<&PyPldaModel>,
    prefix: String,
) -> PyResult<(PyDataset, PyPldaModel)> {
    let cfg = localplda::SynthConfig {
        dim,
        latent_dim,
        seed,
        n_conversations: conversations,
        slots_per_conversation: slots,
        utts_per_slot: utts,
        recurrence,
        truth: None,
        id_prefix: prefix,
    };
    cfg.validate().map_err(to_py)?;
    let truth = match truth {
        Some(t) => t.inner.clone(),
        None => sample_truth(&cfg).map_err(to_py)?,
    };
    let corpus = sample_corpus(&localplda::SynthConfig {
        truth: Some(truth),
        ..cfg
    })
    .map_err(to_py)?;
    Ok((PyDataset { inner: corpus.data }, PyPldaModel { inner: corpus.truth }))
}

#[pymodule]
fn localplda_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyPreprocessor>()?;
    m.add_class::<PyPldaModel>()?;
    m.add_function(wrap_pyfunction!(label_classes, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(train_pooled, m)?)?;
    m.add_function(wrap_pyfunction!(equal_error_rate, m)?)?;
    m.add_function(wrap_pyfunction!(generate_trials, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    Ok(())
}
