//! Temporal interval algebra: IoU, sliding windows, best-window assignment and 1-D NMS.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed time span in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start_s: f64,
    pub end_s: f64,
}

impl Interval {
    pub fn new(start_s: f64, end_s: f64) -> Result<Self> {
        if !(start_s.is_finite() && end_s.is_finite()) || start_s < 0.0 || start_s > end_s {
            return Err(Error::Data(format!(
                "invalid interval [{start_s}, {end_s}]: need 0 <= start <= end, both finite"
            )));
        }
        Ok(Self { start_s, end_s })
    }

    pub fn length(&self) -> f64 {
        self.end_s - self.start_s
    }

    pub fn overlap(&self, other: &Interval) -> f64 {
        (self.end_s.min(other.end_s) - self.start_s.max(other.start_s)).max(0.0)
    }

    pub fn contains(&self, other: &Interval) -> bool {
        self.start_s <= other.start_s && other.end_s <= self.end_s
    }

    pub fn shifted(&self, offset_s: f64) -> Interval {
        Interval {
            start_s: self.start_s + offset_s,
            end_s: self.end_s + offset_s,
        }
    }
}

/// Temporal intersection over union.
///
/// Two zero-length intervals give 1 when they are the same point and 0 otherwise.
pub fn tiou(a: &Interval, b: &Interval) -> f64 {
    let inter = a.overlap(b);
    let union = a.length() + b.length() - inter;
    if union <= 0.0 {
        return if a.start_s == b.start_s { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

/// A fixed-length sliding window over a video's frames.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub interval: Interval,
    pub frame_start: usize,
    pub frame_len: usize,
}

/// Half the window length, at least one frame.
pub fn default_stride(window_len: usize) -> usize {
    (window_len / 2).max(1)
}

/// Windows start at `0, stride, 2·stride, …` while the start is inside the video.
///
/// Tail windows keep their full `window_len` and may run past the last frame;
/// features for those rows are zero-padded by the loader.
pub fn generate_windows(
    num_frames: usize,
    fps: f64,
    window_len: usize,
    stride: usize,
) -> Result<Vec<Window>> {
    if window_len == 0 {
        return Err(Error::Config("window length must be at least one frame".into()));
    }
    if stride == 0 || stride > window_len {
        return Err(Error::Config(format!(
            "stride must be in [1, {window_len}], got {stride}"
        )));
    }
    if !(fps > 0.0 && fps.is_finite()) {
        return Err(Error::Config(format!("fps must be positive, got {fps}")));
    }
    Ok((0..num_frames)
        .step_by(stride)
        .enumerate()
        .map(|(index, frame_start)| Window {
            index,
            interval: Interval {
                start_s: frame_start as f64 / fps,
                end_s: (frame_start + window_len) as f64 / fps,
            },
            frame_start,
            frame_len: window_len,
        })
        .collect())
}

/// Position in `windows` of the window with the highest tIoU against `m`;
/// ties go to the lowest position.
pub fn assign_best_window(m: &Interval, windows: &[Window]) -> Result<usize> {
    if windows.is_empty() {
        return Err(Error::Usage("cannot assign a moment to an empty window set".into()));
    }
    let mut best = 0;
    let mut best_iou = tiou(m, &windows[0].interval);
    for (j, w) in windows.iter().enumerate().skip(1) {
        let iou = tiou(m, &w.interval);
        if iou > best_iou {
            best = j;
            best_iou = iou;
        }
    }
    Ok(best)
}

/// A predicted moment with a confidence in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredMoment {
    pub interval: Interval,
    pub score: f64,
    #[serde(default)]
    pub source_window: Option<usize>,
}

impl ScoredMoment {
    pub fn new(interval: Interval, score: f64, source_window: Option<usize>) -> Result<Self> {
        if !(score.is_finite() && (0.0..=1.0).contains(&score)) {
            return Err(Error::Data(format!("score {score} is outside [0, 1]")));
        }
        Ok(Self {
            interval,
            score,
            source_window,
        })
    }
}

/// Ranking order: score descending, then earlier start, then shorter length.
/// Remaining ties keep input order when used with a stable sort.
pub fn rank_cmp(a: &ScoredMoment, b: &ScoredMoment) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.interval.start_s.total_cmp(&b.interval.start_s))
        .then(a.interval.length().total_cmp(&b.interval.length()))
}

/// Input positions in ranking order.
pub fn rank_order(moments: &[ScoredMoment]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..moments.len()).collect();
    order.sort_by(|&i, &j| rank_cmp(&moments[i], &moments[j]));
    order
}

/// Greedy NMS; returns the input positions kept, in keep order.
///
/// A candidate is suppressed when its tIoU with an already kept moment is
/// strictly greater than `threshold`.
pub fn nms_indices(moments: &[ScoredMoment], threshold: f64) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for i in rank_order(moments) {
        let m = &moments[i].interval;
        if kept
            .iter()
            .all(|&k| tiou(&moments[k].interval, m) <= threshold)
        {
            kept.push(i);
        }
    }
    kept
}

pub fn nms(moments: &[ScoredMoment], threshold: f64) -> Vec<ScoredMoment> {
    nms_indices(moments, threshold)
        .into_iter()
        .map(|i| moments[i])
        .collect()
}
