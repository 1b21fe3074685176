use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{fit_rows, GroundingDataset, QueryRecord, VideoRecord};
use crate::error::{Error, Result};
use crate::temporal::Window;
use crate::tensor::Matrix;

/// Which feature streams a consumer reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalityMask {
    pub visual: bool,
    pub audio: bool,
    pub text: bool,
}

/// Per-window feature rows; `None` for streams that are not read.
#[derive(Clone, Debug)]
pub struct WindowInputs<T = f32> {
    pub visual: Option<Matrix<T>>,
    pub audio: Option<Matrix<T>>,
    pub text: Option<Matrix<T>>,
}

/// In-memory features for a set of videos and queries, restricted to the
/// modalities a model uses.
#[derive(Clone, Debug, Default)]
pub struct FeatureCache {
    mask: Option<ModalityMask>,
    visual: HashMap<String, Matrix<f32>>,
    audio: HashMap<String, Matrix<f32>>,
    tokens: HashMap<String, Matrix<f32>>,
}

impl FeatureCache {
    pub fn load<'a>(
        ds: &GroundingDataset,
        mask: ModalityMask,
        videos: impl IntoIterator<Item = &'a VideoRecord>,
        queries: impl IntoIterator<Item = &'a QueryRecord>,
    ) -> Result<Self> {
        let mut cache = Self {
            mask: Some(mask),
            ..Self::default()
        };
        for v in videos {
            if mask.visual && !cache.visual.contains_key(&v.id) {
                cache.visual.insert(v.id.clone(), ds.visual_features(v)?);
            }
            if mask.audio && !cache.audio.contains_key(&v.id) {
                cache.audio.insert(v.id.clone(), ds.audio_features(v)?);
            }
        }
        if mask.text {
            for q in queries {
                if !cache.tokens.contains_key(&q.id) {
                    cache.tokens.insert(q.id.clone(), ds.query_tokens(q)?);
                }
            }
        }
        Ok(cache)
    }

    /// Loads every video and query of the dataset.
    pub fn load_all(ds: &GroundingDataset, mask: ModalityMask) -> Result<Self> {
        Self::load(ds, mask, ds.videos(), ds.queries())
    }

    pub fn visual(&self, video_id: &str) -> Result<&Matrix<f32>> {
        Self::lookup(&self.visual, "visual", video_id)
    }

    pub fn audio(&self, video_id: &str) -> Result<&Matrix<f32>> {
        Self::lookup(&self.audio, "audio", video_id)
    }

    pub fn tokens(&self, query_id: &str) -> Result<&Matrix<f32>> {
        Self::lookup(&self.tokens, "query", query_id)
    }

    fn lookup<'a>(
        map: &'a HashMap<String, Matrix<f32>>,
        kind: &str,
        id: &str,
    ) -> Result<&'a Matrix<f32>> {
        map.get(id)
            .ok_or_else(|| Error::Data(format!("no {kind} features loaded for {id:?}")))
    }

    /// Raw inputs for one window: frame rows are zero-padded past the end of
    /// the video and query tokens are fitted to `text_len` rows.
    pub fn window_inputs(
        &self,
        video_id: &str,
        window: &Window,
        window_len: usize,
        query_id: Option<&str>,
        text_len: usize,
    ) -> Result<WindowInputs<f32>> {
        let mask = self
            .mask
            .ok_or_else(|| Error::Data("feature cache is empty".into()))?;
        let frames = |map, kind| -> Result<Option<Matrix<f32>>> {
            Ok(Some(
                Self::lookup(map, kind, video_id)?.rows_padded(window.frame_start, window_len),
            ))
        };
        let visual = if mask.visual { frames(&self.visual, "visual")? } else { None };
        let audio = if mask.audio { frames(&self.audio, "audio")? } else { None };
        let text = match (mask.text, query_id) {
            (true, Some(q)) => Some(fit_rows(Self::lookup(&self.tokens, "query", q)?, text_len)),
            (true, None) => {
                return Err(Error::Usage(
                    "query-dependent guidance needs a query for every window".into(),
                ))
            }
            (false, _) => None,
        };
        Ok(WindowInputs { visual, audio, text })
    }
}
