//! Python bindings. Structured results come back as plain dicts and lists;
//! boxes, lexicons and decoder parameters are classes.

use std::collections::BTreeSet;
use std::path::PathBuf;

use literati_core::annotation_store::{self as store, CoordSpace};
use literati_core::eval_harness::{self as eval, MatchMode, ScoredBox, TableFormat};
use literati_core::map_decoder::{self as decoder, synthetic, LogitMap, MapShape};
use literati_core::numeric_heads::{self as heads, GradCase, GradOp};
use literati_core::report_parser::{self as parser, Level, Report};
use literati_core::tpe_tuner::{self as tpe, Params, SearchSpace, TpeConfig};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: literati_core::Error) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Round-trips through the `json` module so results are ordinary Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(value_err)?;
    PyModule::import(py, "json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = PyModule::import(obj.py(), "json")?
        .call_method1("dumps", (obj,))?
        .extract()?;
    serde_json::from_str(&text).map_err(value_err)
}

fn parse_arg<T: std::str::FromStr<Err = literati_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

#[pyclass(name = "BoundingBox", module = "literati", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyBox(store::BoundingBox);

#[pymethods]
impl PyBox {
    #[new]
    #[pyo3(signature = (x, y, w, h, space = "native"))]
    fn new(x: f64, y: f64, w: f64, h: f64, space: &str) -> PyResult<Self> {
        Ok(PyBox(store::BoundingBox::new(x, y, w, h, parse_arg(space)?).map_err(err)?))
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }

    #[getter]
    fn w(&self) -> f64 {
        self.0.w
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h
    }

    #[getter]
    fn space(&self) -> &'static str {
        self.0.space.as_str()
    }

    fn area(&self) -> f64 {
        self.0.area()
    }

    #[pyo3(name = "to_list")]
    fn as_list(&self) -> [f64; 4] {
        self.0.to_array()
    }

    fn iou(&self, other: PyRef<'_, PyBox>) -> PyResult<f64> {
        eval::iou(&self.0, &other.0).map_err(err)
    }

    fn __repr__(&self) -> String {
        let b = &self.0;
        format!("BoundingBox({}, {}, {}, {}, space={:?})", b.x, b.y, b.w, b.h, b.space.as_str())
    }

    fn __eq__(&self, other: PyRef<'_, PyBox>) -> bool {
        self.0 == other.0
    }
}

#[pyclass(name = "Lexicon", module = "literati", frozen)]
struct PyLexicon(parser::Lexicon);

#[pymethods]
impl PyLexicon {
    /// The lexicon shipped with the library.
    #[staticmethod]
    fn bundled() -> Self {
        PyLexicon(parser::Lexicon::bundled())
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        parser::Lexicon::from_json(text).map(PyLexicon).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        parser::Lexicon::load(path).map(PyLexicon).map_err(err)
    }
}

#[pyclass(name = "DecodeParams", module = "literati", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyDecodeParams(decoder::DecodeParams);

#[pymethods]
impl PyDecodeParams {
    #[new]
    #[pyo3(signature = (d = 3, tau = 0.5, alpha = 0.5))]
    fn new(d: usize, tau: f64, alpha: f64) -> PyResult<Self> {
        decoder::DecodeParams::new(d, tau, alpha).map(PyDecodeParams).map_err(err)
    }

    #[getter]
    fn d(&self) -> usize {
        self.0.d
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.0.tau
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.0.alpha
    }

    fn __repr__(&self) -> String {
        format!("DecodeParams(d={}, tau={}, alpha={})", self.0.d, self.0.tau, self.0.alpha)
    }
}

fn params_or_default(params: Option<PyRef<'_, PyDecodeParams>>) -> decoder::DecodeParams {
    params.map(|p| p.0).unwrap_or_default()
}

/// Parses one report into referring expressions (dicts).
#[pyfunction]
#[pyo3(signature = (text, level = "referring", lexicon = None, subject_id = "s", study_id = "0"))]
fn parse_report<'py>(
    py: Python<'py>,
    text: &str,
    level: &str,
    lexicon: Option<PyRef<'_, PyLexicon>>,
    subject_id: &str,
    study_id: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let level: Level = parse_arg(level)?;
    let report = Report::new(subject_id, study_id, text).map_err(err)?;
    let out = match lexicon {
        Some(lex) => parser::parse_report(&report, &lex.0, level),
        None => parser::parse_report(&report, &parser::Lexicon::bundled(), level),
    };
    to_py(py, &out)
}

/// Decodes a `[K, H, W]` logit map given as a flat row-major list.
#[pyfunction]
#[pyo3(signature = (values, shape, background = 0, params = None))]
fn decode<'py>(
    py: Python<'py>,
    values: Vec<f64>,
    shape: (usize, usize, usize),
    background: usize,
    params: Option<PyRef<'_, PyDecodeParams>>,
) -> PyResult<Bound<'py, PyAny>> {
    let logits = LogitMap::new(MapShape::new(shape.0, shape.1, shape.2), values, background).map_err(err)?;
    let dets = decoder::decode(&logits, &params_or_default(params)).map_err(err)?;
    to_py(py, &dets)
}

/// Decodes a directory of `.npy` maps with sidecars into detection records.
#[pyfunction]
#[pyo3(signature = (path, params = None, space = "map"))]
fn decode_map_dir<'py>(
    py: Python<'py>,
    path: PathBuf,
    params: Option<PyRef<'_, PyDecodeParams>>,
    space: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let space: CoordSpace = parse_arg(space)?;
    let params = params_or_default(params);
    let mut records = Vec::new();
    for s in decoder::read_map_dir(&path).map_err(err)? {
        records.extend(s.decode_records(&params, space, None).map_err(err)?);
    }
    to_py(py, &records)
}

type PlantedMap = (Vec<f64>, (usize, usize, usize), Vec<PyBox>, usize);

/// A synthetic map with planted boxes: `(values, shape, boxes, class_index)`.
#[pyfunction]
#[pyo3(signature = (seed, boxes = 1))]
fn planted_map(seed: u64, boxes: usize) -> PyResult<PlantedMap> {
    if boxes == 0 || boxes > 4 {
        return Err(PyValueError::new_err("boxes must be in 1..=4"));
    }
    let cfg = synthetic::SceneConfig {
        boxes,
        ..Default::default()
    };
    let scene = synthetic::planted_scene(seed, &cfg);
    let s = scene.sample.logits.shape();
    Ok((
        scene.sample.logits.values().to_vec(),
        (s.channels, s.height, s.width),
        scene.boxes.into_iter().map(PyBox).collect(),
        scene.class_index,
    ))
}

#[pyfunction]
fn iou(a: PyRef<'_, PyBox>, b: PyRef<'_, PyBox>) -> PyResult<f64> {
    eval::iou(&a.0, &b.0).map_err(err)
}

/// Matches `(box, confidence)` detections against ground truth at every
/// reporting threshold.
#[pyfunction]
#[pyo3(signature = (detections, ground_truth, mode = "top1", image_id = "image"))]
fn evaluate<'py>(
    py: Python<'py>,
    detections: Vec<(PyRef<'_, PyBox>, f64)>,
    ground_truth: Vec<PyRef<'_, PyBox>>,
    mode: &str,
    image_id: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let mode: MatchMode = parse_arg(mode)?;
    let mut dets: Vec<ScoredBox> = detections
        .iter()
        .map(|(b, confidence)| ScoredBox {
            bbox: b.0,
            confidence: *confidence,
        })
        .collect();
    dets.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let gts: Vec<store::BoundingBox> = ground_truth.iter().map(|b| b.0).collect();
    to_py(py, &eval::evaluate_image(image_id, &dets, &gts, mode).map_err(err)?)
}

/// Scores detection records against a COCO file; returns the rendered table.
#[pyfunction]
#[pyo3(signature = (detections, coco_path, mode = "top1", ann_space = "native", method = "LITERATI", format = "csv"))]
fn evaluate_coco(
    detections: &Bound<'_, PyAny>,
    coco_path: PathBuf,
    mode: &str,
    ann_space: &str,
    method: &str,
    format: &str,
) -> PyResult<String> {
    let mode: MatchMode = parse_arg(mode)?;
    let space: CoordSpace = parse_arg(ann_space)?;
    let format: TableFormat = parse_arg(format)?;
    let records: Vec<decoder::DetectionRecord> = from_py(detections)?;
    let (_, mut anns) = store::load_coco_file(&coco_path).map_err(err)?;
    for a in &mut anns {
        for b in &mut a.boxes {
            b.space = space;
        }
    }
    let units = eval::eval_units(&records, &anns).map_err(err)?;
    let results = eval::evaluate_units(&units, mode).map_err(err)?;
    let table = eval::accuracy_table(method, &results).map_err(err)?;
    Ok(eval::render_table(&table, format))
}

#[pyfunction]
#[pyo3(signature = (ids, ratios = (0.8, 0.1, 0.1), seed = 0))]
fn split<'py>(py: Python<'py>, ids: Vec<String>, ratios: (f64, f64, f64), seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let ratios = store::SplitRatios::new(ratios.0, ratios.1, ratios.2).map_err(err)?;
    to_py(py, &store::make_split(&ids, ratios, seed).map_err(err)?)
}

#[pyfunction]
#[pyo3(signature = (positives, pool, ratio = 1.0, seed = 0))]
fn mix_negatives<'py>(
    py: Python<'py>,
    positives: Vec<String>,
    pool: Vec<String>,
    ratio: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &store::mix_negatives(&positives, &pool, ratio, seed).map_err(err)?)
}

/// Maximises `objective(params: dict) -> float` with TPE. Exceptions and
/// non-finite values mark a trial failed.
#[pyfunction]
#[pyo3(signature = (objective, space, budget, seed = 0, n_startup = 10))]
fn tpe_optimize<'py>(
    py: Python<'py>,
    objective: Bound<'py, PyAny>,
    space: &Bound<'py, PyAny>,
    budget: usize,
    seed: u64,
    n_startup: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let space: SearchSpace = from_py(space)?;
    space.validate().map_err(err)?;
    let cfg = TpeConfig {
        n_startup,
        ..TpeConfig::with_seed(seed)
    };
    let call = |params: &Params| -> Result<f64, String> {
        let arg = to_py(py, params).map_err(|e| e.to_string())?;
        objective
            .call1((arg,))
            .and_then(|v| v.extract::<f64>())
            .map_err(|e| e.to_string())
    };
    let run = tpe::optimize(call, &space, budget, &cfg).map_err(err)?;
    to_py(py, &run)
}

/// The decoder search space as a list of dicts.
#[pyfunction]
fn decoder_space(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    to_py(py, &tpe::decoder_space())
}

/// Checks one random case of `op` (deconv, layernorm, gap, ce or conv1d).
#[pyfunction]
#[pyo3(signature = (op, seed = 0, h = 1e-6))]
fn gradcheck<'py>(py: Python<'py>, op: &str, seed: u64, h: f64) -> PyResult<Bound<'py, PyAny>> {
    let op: GradOp = op.parse().map_err(err)?;
    let report = heads::grad_check(&GradCase::random(op, seed), h).map_err(err)?;
    #[derive(Serialize)]
    struct Out {
        op: &'static str,
        max_rel_error: f64,
        tolerance: f64,
        coordinates: usize,
        passed: bool,
    }
    to_py(
        py,
        &Out {
            op: op.as_str(),
            max_rel_error: report.max_rel_error,
            tolerance: op.tolerance(),
            coordinates: report.coordinates,
            passed: report.passed(),
        },
    )
}

/// Scene phrases a report can receive.
#[pyfunction]
fn scene_phrases() -> BTreeSet<&'static str> {
    parser::SCENE_PHRASES.into_iter().collect()
}

#[pymodule]
fn literati(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("IOU_THRESHOLDS", eval::IOU_THRESHOLDS.to_vec())?;
    m.add_class::<PyBox>()?;
    m.add_class::<PyLexicon>()?;
    m.add_class::<PyDecodeParams>()?;
    m.add_function(wrap_pyfunction!(parse_report, m)?)?;
    m.add_function(wrap_pyfunction!(scene_phrases, m)?)?;
    m.add_function(wrap_pyfunction!(decode, m)?)?;
    m.add_function(wrap_pyfunction!(decode_map_dir, m)?)?;
    m.add_function(wrap_pyfunction!(planted_map, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_coco, m)?)?;
    m.add_function(wrap_pyfunction!(split, m)?)?;
    m.add_function(wrap_pyfunction!(mix_negatives, m)?)?;
    m.add_function(wrap_pyfunction!(tpe_optimize, m)?)?;
    m.add_function(wrap_pyfunction!(decoder_space, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
