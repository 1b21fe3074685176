//! Guided re-ranking: multiply each baseline score by the guidance score of
//! its best-matching window, re-sort, then suppress overlaps.

mod eval;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{GroundingDataset, QueryRecord, VideoRecord};
use crate::error::{Error, Result};
use crate::grounding::Predictions;
use crate::guidance::guidance_windows;
use crate::temporal::{assign_best_window, nms, ScoredMoment, Window};

pub use eval::{
    evaluate, mean_recall_all, mean_recall_k, recall_at_k, EvalConfig, MetricsReport, Subset,
};

/// Guidance scores for every guidance window of one video, optionally tied to one query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceScores {
    pub video_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query_id: Option<String>,
    /// One score per window, in window order.
    pub scores: Vec<f64>,
}

pub fn guidance_to_json(records: &[GuidanceScores]) -> String {
    serde_json::to_string_pretty(records).expect("guidance serializes")
}

pub fn write_guidance(path: &Path, records: &[GuidanceScores]) -> Result<()> {
    fs::write(path, guidance_to_json(records)).map_err(|e| Error::io(path, e))
}

pub fn read_guidance(path: &Path) -> Result<Vec<GuidanceScores>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

/// Guidance records keyed for lookup, plus the window length they were scored with.
#[derive(Clone, Debug)]
pub struct GuidanceIndex {
    window_len: usize,
    by_key: BTreeMap<(String, Option<String>), Vec<f64>>,
}

impl GuidanceIndex {
    /// Rejects duplicate keys and scores outside `[0, 1]`.
    pub fn new(records: Vec<GuidanceScores>, window_len: usize) -> Result<Self> {
        let mut by_key = BTreeMap::new();
        for r in records {
            if let Some(bad) = r.scores.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::Data(format!(
                    "guidance score {bad} for video {:?} is outside [0, 1]",
                    r.video_id
                )));
            }
            let key = (r.video_id, r.query_id);
            if by_key.insert(key.clone(), r.scores).is_some() {
                return Err(Error::Data(format!("duplicate guidance for {key:?}")));
            }
        }
        Ok(Self { window_len, by_key })
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    /// Scores for `query`: its own entry if present, else its video's query-free entry.
    pub fn scores_for(&self, query: &QueryRecord) -> Result<&[f64]> {
        let own = (query.video_id.clone(), Some(query.id.clone()));
        let shared = (query.video_id.clone(), None);
        self.by_key
            .get(&own)
            .or_else(|| self.by_key.get(&shared))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::Data(format!(
                    "no guidance for query {:?} of video {:?}",
                    query.id, query.video_id
                ))
            })
    }

    pub fn windows_for(&self, video: &VideoRecord) -> Result<Vec<Window>> {
        guidance_windows(video, self.window_len)
    }
}

/// Multiplies each score by the guidance of the window with the highest tIoU.
pub fn fuse_scores(
    predictions: &[ScoredMoment],
    guidance: &[f64],
    windows: &[Window],
) -> Result<Vec<ScoredMoment>> {
    if guidance.len() != windows.len() {
        return Err(Error::Data(format!(
            "guidance has {} scores for {} windows",
            guidance.len(),
            windows.len()
        )));
    }
    predictions
        .iter()
        .map(|m| {
            let j = assign_best_window(&m.interval, windows)?;
            Ok(ScoredMoment {
                score: m.score * guidance[j],
                ..*m
            })
        })
        .collect()
}

/// Sorts by score and applies NMS; the output is the final ranked list.
pub fn rerank_and_nms(fused: &[ScoredMoment], nms_threshold: f64) -> Vec<ScoredMoment> {
    nms(fused, nms_threshold)
}

/// Final ranked lists for every query in `raw`, guided when `guidance` is given.
pub fn rank_predictions(
    ds: &GroundingDataset,
    raw: &Predictions,
    guidance: Option<&GuidanceIndex>,
    nms_threshold: f64,
) -> Result<Predictions> {
    let mut out = Predictions::new();
    for (qid, moments) in raw {
        let ranked = match guidance {
            None => rerank_and_nms(moments, nms_threshold),
            Some(index) => {
                let query = ds.query(qid)?;
                let windows = index.windows_for(ds.video(&query.video_id)?)?;
                let fused = fuse_scores(moments, index.scores_for(query)?, &windows)
                    .map_err(|e| match e {
                        Error::Data(m) => Error::Data(format!("query {qid:?}: {m}")),
                        other => other,
                    })?;
                rerank_and_nms(&fused, nms_threshold)
            }
        };
        out.insert(qid.clone(), ranked);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
