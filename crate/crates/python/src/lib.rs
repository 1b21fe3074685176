//! Python bindings for the interval, fusion and evaluation primitives.
//!
//! Moments cross the boundary as `(start_s, end_s, score)` tuples and
//! intervals as `(start_s, end_s)` tuples.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;

use gground::dataset::GroundingDataset;
use gground::fusion::{self, EvalConfig};
use gground::grounding::read_predictions;
use gground::temporal::{self, Interval, ScoredMoment};
use gground::Error;

type Moment = (f64, f64, f64);

fn to_py(e: Error) -> PyErr {
    let message = format!("[{}] {e}", e.code());
    match e {
        Error::Io { .. } => PyOSError::new_err(message),
        Error::Numeric(_) => PyArithmeticError::new_err(message),
        _ => PyValueError::new_err(message),
    }
}

fn interval((start, end): (f64, f64)) -> PyResult<Interval> {
    Interval::new(start, end).map_err(to_py)
}

fn moments(raw: &[Moment]) -> PyResult<Vec<ScoredMoment>> {
    raw.iter()
        .map(|&(s, e, score)| ScoredMoment::new(interval((s, e))?, score, None).map_err(to_py))
        .collect()
}

fn tuples(ms: &[ScoredMoment]) -> Vec<Moment> {
    ms.iter()
        .map(|m| (m.interval.start_s, m.interval.end_s, m.score))
        .collect()
}

/// Temporal intersection over union of two intervals.
#[pyfunction]
fn tiou(a: (f64, f64), b: (f64, f64)) -> PyResult<f64> {
    Ok(temporal::tiou(&interval(a)?, &interval(b)?))
}

/// Sliding windows as `(start_s, end_s)`; stride defaults to half the length.
#[pyfunction]
#[pyo3(signature = (num_frames, fps, window_len, stride=None))]
fn windows(
    num_frames: usize,
    fps: f64,
    window_len: usize,
    stride: Option<usize>,
) -> PyResult<Vec<(f64, f64)>> {
    let stride = stride.unwrap_or_else(|| temporal::default_stride(window_len));
    let ws = temporal::generate_windows(num_frames, fps, window_len, stride).map_err(to_py)?;
    Ok(ws.iter().map(|w| (w.interval.start_s, w.interval.end_s)).collect())
}

/// Greedy non-maximum suppression; returns the kept moments in rank order.
#[pyfunction]
fn nms(moments_in: Vec<Moment>, threshold: f64) -> PyResult<Vec<Moment>> {
    Ok(tuples(&temporal::nms(&moments(&moments_in)?, threshold)))
}

/// Scales each moment by the guidance of its best-matching window, then
/// re-ranks and suppresses.
#[pyfunction]
#[pyo3(signature = (moments_in, guidance, num_frames, fps, window_len, nms_threshold=0.3))]
fn fuse_and_rank(
    moments_in: Vec<Moment>,
    guidance: Vec<f64>,
    num_frames: usize,
    fps: f64,
    window_len: usize,
    nms_threshold: f64,
) -> PyResult<Vec<Moment>> {
    let ws = temporal::generate_windows(
        num_frames,
        fps,
        window_len,
        temporal::default_stride(window_len),
    )
    .map_err(to_py)?;
    let fused = fusion::fuse_scores(&moments(&moments_in)?, &guidance, &ws).map_err(to_py)?;
    Ok(tuples(&fusion::rerank_and_nms(&fused, nms_threshold)))
}

/// Percentage of queries whose first `k` moments contain a hit at `theta`.
#[pyfunction]
fn recall_at_k(
    ranked: Vec<Vec<Moment>>,
    ground_truth: Vec<(f64, f64)>,
    k: usize,
    theta: f64,
) -> PyResult<f64> {
    let lists = ranked
        .iter()
        .map(|r| moments(r))
        .collect::<PyResult<Vec<_>>>()?;
    let views: Vec<&[ScoredMoment]> = lists.iter().map(Vec::as_slice).collect();
    let gts = ground_truth
        .into_iter()
        .map(interval)
        .collect::<PyResult<Vec<_>>>()?;
    fusion::recall_at_k(&views, &gts, k, theta).map_err(to_py)
}

/// Mean over the per-K mean recalls that are not `None`.
#[pyfunction]
fn mean_recall_all(mean_recalls: Vec<Option<f64>>) -> PyResult<f64> {
    fusion::mean_recall_all(&mean_recalls).map_err(to_py)
}

/// Evaluates a ranked predictions file against a dataset directory and
/// returns the metrics report as JSON text.
#[pyfunction]
fn evaluate(dataset: PathBuf, predictions: PathBuf) -> PyResult<String> {
    let ds = GroundingDataset::load(&dataset).map_err(to_py)?;
    let ranked = read_predictions(&predictions).map_err(to_py)?;
    let report = fusion::evaluate(&ds, &ranked, &EvalConfig::default()).map_err(to_py)?;
    Ok(report.to_json())
}

#[pymodule]
fn gground_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(tiou, m)?)?;
    m.add_function(wrap_pyfunction!(windows, m)?)?;
    m.add_function(wrap_pyfunction!(nms, m)?)?;
    m.add_function(wrap_pyfunction!(fuse_and_rank, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mean_recall_all, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
