use crate::error::{Error, Result};
use crate::temporal::{Interval, ScoredMoment};
use crate::tensor::Matrix;

use super::{top_moments, GroundingScorer, WindowView};

/// Quantile of the within-window similarity that a frame must reach to join a run.
pub const RUN_QUANTILE: f64 = 0.75;

fn cosine(a: &[f32], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let x = x as f64;
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Linear-interpolated quantile of `values` (`q` in `[0, 1]`).
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Zero-shot grounding by frame-query cosine similarity.
///
/// Contiguous runs of frames whose similarity reaches the window's
/// 75th percentile become proposals in window-local seconds, scored by
/// `(mean similarity + 1) / 2`; the best `max_moments` are returned.
pub fn similarity_ground(
    frames: &Matrix<f32>,
    tokens: &Matrix<f32>,
    fps: f64,
    max_moments: usize,
) -> Result<Vec<ScoredMoment>> {
    if frames.cols() != tokens.cols() {
        return Err(Error::Dimension {
            op: "similarity_ground",
            lhs: frames.shape(),
            rhs: tokens.shape(),
        });
    }
    if frames.rows() == 0 || tokens.rows() == 0 {
        return Ok(Vec::new());
    }
    let mut query = vec![0.0f64; tokens.cols()];
    for row in tokens.iter_rows() {
        for (q, &t) in query.iter_mut().zip(row) {
            *q += t as f64;
        }
    }
    let sims: Vec<f64> = frames.iter_rows().map(|f| cosine(f, &query)).collect();
    let threshold = quantile(&sims, RUN_QUANTILE);
    let mut proposals = Vec::new();
    let mut i = 0;
    while i < sims.len() {
        if sims[i] < threshold {
            i += 1;
            continue;
        }
        let start = i;
        while i < sims.len() && sims[i] >= threshold {
            i += 1;
        }
        let mean = sims[start..i].iter().sum::<f64>() / (i - start) as f64;
        proposals.push(ScoredMoment::new(
            Interval {
                start_s: start as f64 / fps,
                end_s: i as f64 / fps,
            },
            ((mean + 1.0) / 2.0).clamp(0.0, 1.0),
            None,
        )?);
    }
    Ok(top_moments(proposals, max_moments))
}

/// [`similarity_ground`] as a [`GroundingScorer`].
#[derive(Clone, Copy, Debug, Default)]
pub struct SimilarityScorer;

impl GroundingScorer for SimilarityScorer {
    fn needs_features(&self) -> bool {
        true
    }

    fn ground_window(
        &self,
        view: &WindowView<'_>,
        max_moments: usize,
    ) -> Result<Vec<ScoredMoment>> {
        let missing = || Error::Data("similarity grounding needs frames and tokens".into());
        similarity_ground(
            view.frames.ok_or_else(missing)?,
            view.tokens.ok_or_else(missing)?,
            view.video.fps,
            max_moments,
        )
    }
}
