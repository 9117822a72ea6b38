//! Python bindings for `hhcl`.
//!
//! Matrices cross the boundary as lists of rows (`list[list[float]]`).

use hhcl::clustering::{pseudo_labels as cluster, ClusterParams};
use hhcl::encoder::{Checkpoint, EncoderModel, OptimizerState};
use hhcl::eval::SampleMeta;
use hhcl::synthdata::SynthSpec;
use hhcl::{EmbeddingMatrix, Sample, TrainConfig, UnlabeledSet};
use ndarray::{Array1, Array2};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: hhcl::Error) -> PyErr {
    match e {
        hhcl::Error::Io(_) | hhcl::Error::Format(_) => PyIOError::new_err(e.to_string()),
        hhcl::Error::Numeric(_) | hhcl::Error::DegenerateMean { .. } | hhcl::Error::ClusteringCollapse(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Array2<f64>> {
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((rows.len(), d), rows.concat()).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn config(json: Option<&str>) -> PyResult<TrainConfig> {
    let cfg = match json {
        Some(text) => TrainConfig::from_json(text).map_err(py_err)?,
        None => TrainConfig::default(),
    };
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

/// An MLP encoder with L2-normalized output.
#[pyclass(name = "Encoder", module = "pyhhcl")]
struct PyEncoder {
    inner: EncoderModel,
}

#[pymethods]
impl PyEncoder {
    #[new]
    #[pyo3(signature = (widths, seed = 0))]
    fn new(widths: Vec<usize>, seed: u64) -> PyResult<Self> {
        Ok(Self {
            inner: EncoderModel::new(&widths, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn identity(dim: usize) -> PyResult<Self> {
        Ok(Self {
            inner: EncoderModel::identity(dim).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: Checkpoint::load(path).map_err(py_err)?.model,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let n = self.inner.params().len();
        let d = TrainConfig::default();
        Checkpoint {
            model: self.inner.clone(),
            optimizer: OptimizerState::new(n, d.lr, d.weight_decay, d.lr_decay_factor, d.lr_decay_every as u64),
            epoch: 0,
        }
        .save(path)
        .map_err(py_err)
    }

    #[getter]
    fn num_params(&self) -> usize {
        self.inner.params().len()
    }

    fn embed(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let x = matrix(&features)?;
        Ok(rows(self.inner.embed(x.view()).map_err(py_err)?.view()))
    }
}

/// Synthetic re-identification features as
/// `{"train"|"query"|"gallery": (features, identities, cameras)}`.
#[pyfunction]
#[pyo3(signature = (seed = 0, hard = false, config_json = None))]
fn generate<'py>(py: Python<'py>, seed: u64, hard: bool, config_json: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let mut spec = match config_json {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None if hard => SynthSpec::hard(),
        None => SynthSpec::default(),
    };
    spec.seed = seed;
    let data = hhcl::synthdata::generate(&spec).map_err(py_err)?;
    let out = PyDict::new(py);
    for (name, split) in [("train", &data.train), ("query", &data.query), ("gallery", &data.gallery)] {
        let feats: Vec<Vec<f64>> = split.iter().map(|s| s.feature.iter().map(|&v| f64::from(v)).collect()).collect();
        let ids: Vec<i64> = split.iter().map(|s| s.identity).collect();
        let cams: Vec<u32> = split.iter().map(|s| s.camera).collect();
        out.set_item(name, (feats, ids, cams))?;
    }
    Ok(out)
}

/// Trains an encoder on unlabeled features; returns `(encoder, reports)`
/// where each report is a dict of per-epoch statistics.
#[pyfunction]
#[pyo3(signature = (features, cameras, widths = None, config_json = None))]
fn train<'py>(
    py: Python<'py>,
    features: Vec<Vec<f64>>,
    cameras: Vec<u32>,
    widths: Option<Vec<usize>>,
    config_json: Option<&str>,
) -> PyResult<(PyEncoder, Vec<Bound<'py, PyDict>>)> {
    let cfg = config(config_json)?;
    if cameras.len() != features.len() {
        return Err(PyValueError::new_err("one camera id per feature row is required"));
    }
    let samples: Vec<Sample> = features
        .iter()
        .zip(&cameras)
        .map(|(f, &c)| Sample::new(f.iter().map(|&v| v as f32).collect(), -1, c))
        .collect();
    let data = UnlabeledSet::from_samples(&samples).map_err(py_err)?;
    let mut w = vec![data.dim()];
    w.extend(widths.unwrap_or_else(|| vec![128, 64]));
    let model = EncoderModel::new(&w, cfg.seed).map_err(py_err)?;
    let outcome = py.detach(|| hhcl::trainer::train(&data, &cfg, model)).map_err(py_err)?;
    let reports = outcome
        .reports
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("num_clusters", r.num_clusters)?;
            d.set_item("num_outliers", r.num_outliers)?;
            d.set_item("loss", r.loss)?;
            d.set_item("loss_cls", r.loss_cls)?;
            d.set_item("loss_ins", r.loss_ins)?;
            d.set_item("seconds", r.seconds)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyEncoder { inner: outcome.model }, reports))
}

/// mAP and Rank-1/5/10 for query rows against gallery rows.
#[pyfunction]
#[pyo3(signature = (query, query_ids, query_cams, gallery, gallery_ids, gallery_cams, junk_filter = true))]
#[allow(clippy::too_many_arguments)]
fn evaluate<'py>(
    py: Python<'py>,
    query: Vec<Vec<f64>>,
    query_ids: Vec<i64>,
    query_cams: Vec<u32>,
    gallery: Vec<Vec<f64>>,
    gallery_ids: Vec<i64>,
    gallery_cams: Vec<u32>,
    junk_filter: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let meta = |ids: &[i64], cams: &[u32]| -> Vec<SampleMeta> {
        ids.iter().zip(cams).map(|(&identity, &camera)| SampleMeta { identity, camera }).collect()
    };
    let q = EmbeddingMatrix::new(matrix(&query)?).map_err(py_err)?;
    let g = EmbeddingMatrix::new(matrix(&gallery)?).map_err(py_err)?;
    let result = hhcl::eval::evaluate(
        &q,
        &g,
        &meta(&query_ids, &query_cams),
        &meta(&gallery_ids, &gallery_cams),
        junk_filter,
    )
    .map_err(py_err)?;
    let m = result.metrics();
    let out = PyDict::new(py);
    out.set_item("mAP", m.map)?;
    out.set_item("rank1", m.rank1)?;
    out.set_item("rank5", m.rank5)?;
    out.set_item("rank10", m.rank10)?;
    Ok(out)
}

/// Cluster ids per row, `-1` for outliers.
#[pyfunction]
#[pyo3(signature = (embeddings, k = 30, eps = 0.45, min_pts = 4, euclidean_blend = 0.0))]
fn pseudo_labels(embeddings: Vec<Vec<f64>>, k: usize, eps: f64, min_pts: usize, euclidean_blend: f64) -> PyResult<Vec<i64>> {
    let emb = EmbeddingMatrix::new(matrix(&embeddings)?).map_err(py_err)?;
    let params = ClusterParams {
        k,
        eps,
        min_pts,
        euclidean_blend,
    };
    Ok(cluster(&emb, &params).map_err(py_err)?.to_signed())
}

/// `-log softmax(keys · query / tau)[positive]` and its query gradient.
#[pyfunction]
fn contrastive_loss(query: Vec<f64>, keys: Vec<Vec<f64>>, positive: usize, tau: f64) -> PyResult<(f64, Vec<f64>)> {
    let q = Array1::from(query);
    let k = matrix(&keys)?;
    let out = hhcl::loss::softmax_contrastive(q.view(), k.view(), positive, tau).map_err(py_err)?;
    Ok((out.value, out.grad_query.to_vec()))
}

#[pymodule]
fn pyhhcl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEncoder>()?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(pseudo_labels, m)?)?;
    m.add_function(wrap_pyfunction!(contrastive_loss, m)?)?;
    m.add("default_config", TrainConfig::default().to_json())?;
    Ok(())
}
