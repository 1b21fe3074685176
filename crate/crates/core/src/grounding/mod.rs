//! Base grounding models and the long-form sliding driver.
//!
//! A [`GroundingScorer`] sees one window at a time and proposes moments in
//! window-local seconds; [`run_longform`] slides windows over the video and
//! shifts the proposals into global time.

mod oracle;
mod predictions;
mod similarity;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{QueryRecord, VideoRecord};
use crate::error::{Error, Result};
use crate::temporal::{default_stride, generate_windows, rank_cmp, Interval, ScoredMoment, Window};
use crate::tensor::Matrix;

pub use oracle::{noisy_oracle_ground, NoisyOracle, NoisyOracleConfig};
pub use predictions::{
    parse_predictions, predictions_to_jsonl, read_predictions, write_predictions, PredictionRecord,
    Predictions,
};
pub use similarity::{similarity_ground, SimilarityScorer};

/// What a scorer sees for one window.
#[derive(Clone, Copy, Debug)]
pub struct WindowView<'a> {
    pub video: &'a VideoRecord,
    pub query: &'a QueryRecord,
    pub window: &'a Window,
    /// Seconds of the window that fall inside the video, measured from its start.
    pub local_len_s: f64,
    /// Visual rows of the window that fall inside the video.
    pub frames: Option<&'a Matrix<f32>>,
    pub tokens: Option<&'a Matrix<f32>>,
}

impl WindowView<'_> {
    /// The window's in-video extent in global seconds.
    pub fn extent(&self) -> Interval {
        let start = self.window.interval.start_s;
        Interval {
            start_s: start,
            end_s: start + self.local_len_s,
        }
    }
}

/// A base grounding model: at most `max_moments` proposals for one window,
/// each inside `[0, view.local_len_s]` with a score in `[0, 1]`.
pub trait GroundingScorer: Sync {
    /// Whether [`WindowView::frames`] and [`WindowView::tokens`] must be filled.
    fn needs_features(&self) -> bool;

    fn ground_window(&self, view: &WindowView<'_>, max_moments: usize)
        -> Result<Vec<ScoredMoment>>;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LongformConfig {
    /// Grounding window length in frames.
    pub window_len: usize,
    /// Stride in frames; `None` means half a window.
    pub stride: Option<usize>,
    /// Proposals kept per window.
    pub max_moments: usize,
}

impl Default for LongformConfig {
    fn default() -> Self {
        Self {
            window_len: 128,
            stride: None,
            max_moments: 10,
        }
    }
}

impl LongformConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or_else(|| default_stride(self.window_len))
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len == 0 || self.max_moments == 0 || self.stride() == 0 {
            return Err(Error::Config(
                "longform window_len, stride and max_moments must be positive".into(),
            ));
        }
        if self.stride() > self.window_len {
            return Err(Error::Config(format!(
                "longform stride {} exceeds window length {}",
                self.stride(),
                self.window_len
            )));
        }
        Ok(())
    }

    /// Grounding windows for `video`; a video no longer than one window gets exactly one.
    pub fn windows(&self, video: &VideoRecord) -> Result<Vec<Window>> {
        self.validate()?;
        let mut windows =
            generate_windows(video.num_frames, video.fps, self.window_len, self.stride())?;
        if video.num_frames <= self.window_len {
            windows.truncate(1);
        }
        Ok(windows)
    }
}

/// Keeps the `max` best moments under the shared ranking order.
pub(crate) fn top_moments(mut moments: Vec<ScoredMoment>, max: usize) -> Vec<ScoredMoment> {
    moments.sort_by(rank_cmp);
    moments.truncate(max);
    moments
}

/// Slides grounding windows over `video` and returns every proposal in
/// global seconds, grouped by window in window order.
pub fn run_longform(
    scorer: &dyn GroundingScorer,
    video: &VideoRecord,
    query: &QueryRecord,
    visual: Option<&Matrix<f32>>,
    tokens: Option<&Matrix<f32>>,
    cfg: &LongformConfig,
) -> Result<Vec<ScoredMoment>> {
    if scorer.needs_features() && (visual.is_none() || tokens.is_none()) {
        return Err(Error::Data(format!(
            "scorer needs visual features and query tokens for {:?}",
            query.id
        )));
    }
    let windows = cfg.windows(video)?;
    let per_window: Vec<Vec<ScoredMoment>> = windows
        .par_iter()
        .map(|w| {
            let end_frame = (w.frame_start + w.frame_len).min(video.num_frames);
            let frames = visual.map(|v| v.rows_padded(w.frame_start, end_frame - w.frame_start));
            let view = WindowView {
                video,
                query,
                window: w,
                local_len_s: (end_frame - w.frame_start) as f64 / video.fps,
                frames: frames.as_ref(),
                tokens,
            };
            let local = scorer
                .ground_window(&view, cfg.max_moments)
                .map_err(|e| with_window_context(e, &query.id, w.index))?;
            if local.len() > cfg.max_moments {
                return Err(Error::Data(format!(
                    "query {:?} window {}: scorer returned {} moments, limit {}",
                    query.id,
                    w.index,
                    local.len(),
                    cfg.max_moments
                )));
            }
            let offset = w.interval.start_s;
            let extent_end = end_frame as f64 / video.fps;
            local
                .into_iter()
                .map(|m| {
                    let inside = m.interval.start_s >= 0.0 && m.interval.end_s <= view.local_len_s;
                    if !inside {
                        return Err(Error::Data(format!(
                            "query {:?} window {}: proposal [{}, {}] leaves the window",
                            query.id, w.index, m.interval.start_s, m.interval.end_s
                        )));
                    }
                    // Clamp so rounding in the shift cannot leave the window.
                    let global = Interval {
                        start_s: (m.interval.start_s + offset).min(extent_end),
                        end_s: (m.interval.end_s + offset).min(extent_end),
                    };
                    ScoredMoment::new(global, m.score, Some(w.index))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(per_window.into_iter().flatten().collect())
}

fn with_window_context(e: Error, query: &str, window: usize) -> Error {
    match e {
        Error::Data(m) => Error::Data(format!("query {query:?} window {window}: {m}")),
        Error::Numeric(m) => Error::Numeric(format!("query {query:?} window {window}: {m}")),
        other => other,
    }
}

/// Stable 64-bit FNV-1a, used to derive per-query seeds.
pub(crate) fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
