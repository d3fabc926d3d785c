use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use clueassign::enhance::{self, EnhanceParams};
use clueassign::memory;
use clueassign::report::BucketTally;
use clueassign::synth::{self, SizeBucket};
use clueassign::{geometry, AssignerKind, AssignerSettings, BBox, BetaMode, Matrix, Verdict};

fn to_py(e: clueassign::Error) -> PyErr {
    match e {
        clueassign::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(format!("[{}] {e}", e.category())),
    }
}

fn bbox(c: [f64; 4]) -> PyResult<BBox> {
    BBox::new(c[0], c[1], c[2], c[3]).map_err(to_py)
}

fn matrix(rows: Vec<Vec<f64>>, cols: Option<usize>) -> PyResult<Matrix> {
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, cols.unwrap_or(0)));
    }
    Matrix::from_rows(&rows).map_err(to_py)
}

fn nested(m: &Matrix) -> Vec<Vec<f64>> {
    m.iter_rows().map(|r| r.to_vec()).collect()
}

#[pyfunction]
fn iou(a: [f64; 4], b: [f64; 4]) -> PyResult<f64> {
    Ok(geometry::iou(&bbox(a)?, &bbox(b)?))
}

#[pyclass(name = "AssignConfig", from_py_object)]
#[derive(Clone)]
struct PyAssignConfig {
    inner: AssignerSettings,
}

#[pymethods]
impl PyAssignConfig {
    #[new]
    #[pyo3(signature = (k=9, alpha=0.3, beta=0.6, s_max=32.0, gamma_cap=3.0, scores_are_probabilities=false, beta_mode="cap", iou_pos_thresh=0.5, iou_neg_thresh=0.5, radius_factor=1.0, atss_k=9))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        k: usize,
        alpha: f64,
        beta: f64,
        s_max: f64,
        gamma_cap: f64,
        scores_are_probabilities: bool,
        beta_mode: &str,
        iou_pos_thresh: f64,
        iou_neg_thresh: f64,
        radius_factor: f64,
        atss_k: usize,
    ) -> PyResult<Self> {
        let mode = match beta_mode {
            "cap" => BetaMode::Cap,
            "floor" => BetaMode::Floor,
            other => return Err(PyValueError::new_err(format!("beta_mode must be cap or floor, got {other}"))),
        };
        let mcss = clueassign::AssignConfig::new(k, alpha, beta, s_max, gamma_cap)
            .map_err(to_py)?
            .with_probabilities(scores_are_probabilities)
            .with_beta_mode(mode);
        Ok(Self {
            inner: AssignerSettings {
                mcss,
                iou_pos_thresh,
                iou_neg_thresh,
                radius_factor,
                atss_k,
            },
        })
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.mcss.k()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.mcss.alpha()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.mcss.beta()
    }
}

#[pyclass(name = "Scene", from_py_object)]
#[derive(Clone)]
struct PyScene {
    inner: clueassign::Scene,
}

#[pymethods]
impl PyScene {
    /// `pred_scores` holds one row of per-class scores per prediction.
    #[new]
    #[pyo3(signature = (num_classes, gt_boxes, gt_labels, pred_boxes, pred_scores, image_id=0))]
    fn new(
        num_classes: usize,
        gt_boxes: Vec<[f64; 4]>,
        gt_labels: Vec<usize>,
        pred_boxes: Vec<[f64; 4]>,
        pred_scores: Vec<Vec<f64>>,
        image_id: u64,
    ) -> PyResult<Self> {
        if let Some(i) = pred_scores.iter().position(|r| r.len() != num_classes) {
            return Err(PyValueError::new_err(format!("score row {i} does not have {num_classes} entries")));
        }
        let gts = gt_boxes.into_iter().map(bbox).collect::<PyResult<Vec<_>>>()?;
        let preds = pred_boxes.into_iter().map(bbox).collect::<PyResult<Vec<_>>>()?;
        let scores = pred_scores.into_iter().flatten().collect();
        let inner = clueassign::Scene::new(image_id, num_classes, gts, gt_labels, preds, scores).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn num_gt(&self) -> usize {
        self.inner.num_gt()
    }

    #[getter]
    fn num_preds(&self) -> usize {
        self.inner.num_preds()
    }

    #[getter]
    fn gt_boxes(&self) -> Vec<[f64; 4]> {
        self.inner.gt_boxes().iter().map(BBox::corners).collect()
    }

    #[getter]
    fn pred_boxes(&self) -> Vec<[f64; 4]> {
        self.inner.pred_boxes().iter().map(BBox::corners).collect()
    }
}

#[pyclass(name = "Assignment", skip_from_py_object)]
struct PyAssignment {
    inner: clueassign::Assignment,
}

#[pymethods]
impl PyAssignment {
    /// Per prediction: `("positive", gt, confidence)`, `("negative", None, None)`
    /// or `("ignored", None, None)`.
    #[getter]
    fn verdicts(&self) -> Vec<(&'static str, Option<usize>, Option<f64>)> {
        self.inner
            .per_pred
            .iter()
            .map(|v| match *v {
                Verdict::Positive { gt, confidence } => ("positive", Some(gt), Some(confidence)),
                Verdict::Negative => ("negative", None, None),
                Verdict::Ignored => ("ignored", None, None),
            })
            .collect()
    }

    #[getter]
    fn per_gt_positives(&self) -> Vec<Vec<usize>> {
        self.inner.per_gt_positives.clone()
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.inner.thresholds.clone()
    }

    #[getter]
    fn num_positives(&self) -> usize {
        self.inner.num_positives()
    }
}

#[pyfunction]
#[pyo3(signature = (scene, assigner="mcss", config=None))]
fn assign(scene: &PyScene, assigner: &str, config: Option<&PyAssignConfig>) -> PyResult<PyAssignment> {
    let kind: AssignerKind = assigner.parse().map_err(to_py)?;
    let settings = config.map(|c| c.inner).unwrap_or_default();
    let inner = settings.run(kind, &scene.inner).map_err(to_py)?;
    Ok(PyAssignment { inner })
}

#[pyfunction]
#[pyo3(signature = (index, seed=0, n_gt=None, clutter_preds=None, noiseless=false))]
fn generate_scene(index: u64, seed: u64, n_gt: Option<usize>, clutter_preds: Option<usize>, noiseless: bool) -> PyResult<PyScene> {
    let mut cfg = clueassign::SynthConfig {
        seed,
        ..Default::default()
    };
    if let Some(n) = n_gt {
        cfg.n_gt = n;
    }
    if let Some(c) = clutter_preds {
        cfg.clutter_preds = c;
    }
    if noiseless {
        cfg = cfg.noiseless();
    }
    let inner = synth::generate_scene(&cfg, index).map_err(to_py)?;
    Ok(PyScene { inner })
}

/// Per-bucket positives over `n_scenes` default synthetic scenes. Returns
/// `(rows, cov)` with rows `(assigner, bucket, gt_count, mean, std)`.
#[pyfunction]
#[pyo3(signature = (assigners, n_scenes, seed=0))]
#[allow(clippy::type_complexity)]
fn bucket_stats(
    assigners: Vec<String>,
    n_scenes: u64,
    seed: u64,
) -> PyResult<(Vec<(String, String, u64, f64, f64)>, Vec<(String, f64)>)> {
    let kinds = assigners
        .iter()
        .map(|a| a.parse::<AssignerKind>().map_err(to_py))
        .collect::<PyResult<Vec<_>>>()?;
    if kinds.is_empty() {
        return Err(PyValueError::new_err("assigner list is empty"));
    }
    let cfg = clueassign::SynthConfig {
        seed,
        ..Default::default()
    };
    let settings = AssignerSettings::default();
    let mut tally = BucketTally::default();
    for i in 0..n_scenes {
        let scene = synth::generate_scene(&cfg, i).map_err(to_py)?;
        for &k in &kinds {
            tally.add_assignment(k, &scene, &settings.run(k, &scene).map_err(to_py)?);
        }
    }
    let report = tally.report(&kinds);
    let rows = report
        .rows
        .iter()
        .map(|r| (r.assigner.to_string(), r.bucket.to_string(), r.gt_count, r.mean_positives, r.std_positives))
        .collect();
    let cov = report.cov.iter().map(|c| (c.assigner.to_string(), c.cov)).collect();
    Ok((rows, cov))
}

#[pyfunction]
fn size_bucket(area: f64) -> &'static str {
    let b: SizeBucket = synth::size_bucket(area);
    b.label()
}

#[pyclass(name = "CategoryMemory", from_py_object)]
#[derive(Clone)]
struct PyMemory {
    inner: memory::CategoryMemory,
}

#[pymethods]
impl PyMemory {
    #[new]
    #[pyo3(signature = (num_classes, dim, seed=0, momentum=memory::DEFAULT_MOMENTUM))]
    fn new(num_classes: usize, dim: usize, seed: u64, momentum: f64) -> PyResult<Self> {
        let inner = memory::init_memory(num_classes, dim, seed, memory::default_scale(dim))
            .and_then(|m| m.with_momentum(momentum))
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn rows(&self) -> Vec<Vec<f64>> {
        nested(self.inner.matrix())
    }

    #[getter]
    fn momentum(&self) -> f64 {
        self.inner.momentum()
    }

    fn ema_update(&mut self, aggregates: Vec<(usize, Vec<f64>)>) -> PyResult<()> {
        self.inner.ema_update(&aggregates).map_err(to_py)
    }

    #[pyo3(signature = (features, labels, eps=memory::DEFAULT_EPS))]
    fn update_from_batch(&mut self, features: Vec<Vec<f64>>, labels: Vec<usize>, eps: f64) -> PyResult<()> {
        let batch = memory::FeatureBatch::new(matrix(features, Some(self.inner.dim()))?, labels).map_err(to_py)?;
        self.inner.update_from_batch(&batch, eps).map_err(to_py)
    }

    fn category_features(&self, probabilities: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let p = matrix(probabilities, Some(self.inner.matrix().rows()))?;
        Ok(nested(&memory::generate_category_feature(&p, &self.inner).map_err(to_py)?))
    }
}

#[pyclass(name = "EnhanceParams", from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: EnhanceParams,
}

#[pymethods]
impl PyParams {
    #[staticmethod]
    fn random(seed: u64, in_features: usize, dim: usize, num_classes: usize) -> PyResult<Self> {
        Ok(Self {
            inner: EnhanceParams::random(seed, in_features, dim, num_classes).map_err(to_py)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: clueassign::archive::read_params(std::path::Path::new(path)).map_err(to_py)?,
        })
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn in_features(&self) -> usize {
        self.inner.in_features()
    }
}

/// Runs the enhancement pipeline; returns a dict with `r`, `p`, `f_c`, `r_enh`.
#[pyfunction]
fn enhance_pipeline<'py>(
    py: Python<'py>,
    r_hat: Vec<Vec<f64>>,
    memory: &PyMemory,
    params: &PyParams,
) -> PyResult<Bound<'py, PyDict>> {
    let x = matrix(r_hat, Some(params.inner.in_features()))?;
    let out = enhance::enhance_pipeline(&x, &memory.inner, &params.inner).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("r", nested(&out.r))?;
    d.set_item("p", nested(&out.p))?;
    d.set_item("f_c", nested(&out.f_c))?;
    d.set_item("r_enh", nested(&out.r_enh))?;
    Ok(d)
}

#[pymodule]
fn clueassign_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAssignConfig>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyAssignment>()?;
    m.add_class::<PyMemory>()?;
    m.add_class::<PyParams>()?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(assign, m)?)?;
    m.add_function(wrap_pyfunction!(generate_scene, m)?)?;
    m.add_function(wrap_pyfunction!(bucket_stats, m)?)?;
    m.add_function(wrap_pyfunction!(size_bucket, m)?)?;
    m.add_function(wrap_pyfunction!(enhance_pipeline, m)?)?;
    Ok(())
}
