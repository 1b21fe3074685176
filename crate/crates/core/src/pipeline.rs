//! Whole-split stages shared by the command line, tests and bindings.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureCache, GroundingDataset, ModalityMask, QueryRecord, Split};
use crate::error::{Error, Result};
use crate::fusion::GuidanceScores;
use crate::grounding::{
    run_longform, GroundingScorer, LongformConfig, NoisyOracle, NoisyOracleConfig, Predictions,
    SimilarityScorer, WindowView,
};
use crate::guidance::{guidance_windows, score_windows, GuidanceConfig, GuidanceMode, GuidanceModel};
use crate::temporal::ScoredMoment;

/// Which base grounding model to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrounderKind {
    #[default]
    NoisyOracle,
    Similarity,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrounderConfig {
    pub kind: GrounderKind,
    pub oracle: NoisyOracleConfig,
}

impl GrounderConfig {
    pub fn validate(&self) -> Result<()> {
        self.oracle.validate()
    }

    pub fn scorer(&self) -> Box<dyn GroundingScorer> {
        match self.kind {
            GrounderKind::NoisyOracle => Box::new(NoisyOracle {
                config: self.oracle.clone(),
            }),
            GrounderKind::Similarity => Box::new(SimilarityScorer),
        }
    }
}

/// Guidance scores for the split: one record per video when query-agnostic,
/// one per query when query-dependent.
pub fn score_guidance(
    model: &GuidanceModel<f32>,
    features: &FeatureCache,
    ds: &GroundingDataset,
    split: Split,
) -> Result<Vec<GuidanceScores>> {
    let window_len = model.config().window_len;
    let record = |video_id: &str, query: Option<&QueryRecord>| -> Result<GuidanceScores> {
        let video = ds.video(video_id)?;
        let windows = guidance_windows(video, window_len)?;
        let scores = score_windows(model, features, video, query, &windows)?;
        Ok(GuidanceScores {
            video_id: video.id.clone(),
            query_id: query.map(|q| q.id.clone()),
            scores: scores.into_iter().map(|(_, p)| p).collect(),
        })
    };
    match model.config().mode {
        GuidanceMode::Agnostic => ds.videos_in(split).iter().map(|v| record(&v.id, None)).collect(),
        GuidanceMode::Dependent => ds
            .queries_in(split)
            .map(|q| record(&q.video_id, Some(q)))
            .collect(),
    }
}

/// Features a base grounder reads: visual frames and query tokens.
pub fn grounding_features(ds: &GroundingDataset, split: Split) -> Result<FeatureCache> {
    let queries: Vec<&QueryRecord> = ds.queries_in(split).collect();
    let mut videos = Vec::new();
    for q in &queries {
        videos.push(ds.video(&q.video_id)?);
    }
    let mask = ModalityMask {
        visual: true,
        audio: false,
        text: true,
    };
    FeatureCache::load(ds, mask, videos, queries)
}

/// Raw long-form predictions for every query of the split.
///
/// `features` must be given when the scorer reads features.
pub fn ground_split(
    scorer: &dyn GroundingScorer,
    ds: &GroundingDataset,
    features: Option<&FeatureCache>,
    split: Split,
    cfg: &LongformConfig,
) -> Result<Predictions> {
    cfg.validate()?;
    let queries: Vec<&QueryRecord> = ds.queries_in(split).collect();
    let results = queries
        .par_iter()
        .map(|q| {
            let video = ds.video(&q.video_id)?;
            let (visual, tokens) = match (scorer.needs_features(), features) {
                (false, _) => (None, None),
                (true, Some(f)) => (Some(f.visual(&video.id)?), Some(f.tokens(&q.id)?)),
                (true, None) => {
                    return Err(Error::Usage("this grounder needs loaded features".into()))
                }
            };
            let moments = run_longform(scorer, video, q, visual, tokens, cfg)?;
            Ok((q.id.clone(), moments))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(results.into_iter().collect())
}

/// Forward-pass counts and stage timings for guided inference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub mode: GuidanceMode,
    pub videos: usize,
    pub queries: usize,
    pub guidance_passes: u64,
    pub grounding_passes: u64,
    /// Guidance and grounding window counts per video.
    pub windows_per_video: BTreeMap<String, VideoWindows>,
    /// Wall-clock seconds, rounded to milliseconds; zero when not measured.
    pub guidance_seconds: f64,
    pub grounding_seconds: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoWindows {
    pub guidance: usize,
    pub grounding: usize,
}

/// Closed-form pass counts for the split.
///
/// Query-agnostic guidance runs once per window of each video; query-dependent
/// guidance and grounding run once per window for every query.
pub fn bench_cost(
    ds: &GroundingDataset,
    split: Split,
    gcfg: &GuidanceConfig,
    lcfg: &LongformConfig,
) -> Result<CostReport> {
    let queries: Vec<&QueryRecord> = ds.queries_in(split).collect();
    let videos = ds.videos_in(split);
    let mut windows_per_video = BTreeMap::new();
    for v in &videos {
        windows_per_video.insert(
            v.id.clone(),
            VideoWindows {
                guidance: guidance_windows(v, gcfg.window_len)?.len(),
                grounding: lcfg.windows(v)?.len(),
            },
        );
    }
    let per_query = |f: fn(&VideoWindows) -> usize| -> Result<u64> {
        queries.iter().try_fold(0u64, |acc, q| {
            let w = windows_per_video.get(&q.video_id).ok_or_else(|| {
                Error::Data(format!("query {:?} refers to a video outside the split", q.id))
            })?;
            Ok(acc + f(w) as u64)
        })
    };
    let guidance_passes = match gcfg.mode {
        GuidanceMode::Agnostic => windows_per_video.values().map(|w| w.guidance as u64).sum(),
        GuidanceMode::Dependent => per_query(|w| w.guidance)?,
    };
    Ok(CostReport {
        mode: gcfg.mode,
        videos: videos.len(),
        queries: queries.len(),
        guidance_passes,
        grounding_passes: per_query(|w| w.grounding)?,
        windows_per_video,
        guidance_seconds: 0.0,
        grounding_seconds: 0.0,
    })
}

/// Counts `ground_window` calls of the wrapped scorer.
pub struct CountingScorer<'a> {
    pub inner: &'a dyn GroundingScorer,
    pub calls: AtomicU64,
}

impl<'a> CountingScorer<'a> {
    pub fn new(inner: &'a dyn GroundingScorer) -> Self {
        Self {
            inner,
            calls: AtomicU64::new(0),
        }
    }

    pub fn count(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl GroundingScorer for CountingScorer<'_> {
    fn needs_features(&self) -> bool {
        self.inner.needs_features()
    }

    fn ground_window(
        &self,
        view: &WindowView<'_>,
        max_moments: usize,
    ) -> Result<Vec<ScoredMoment>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.ground_window(view, max_moments)
    }
}

/// Runs guidance scoring and grounding over the split, checks the measured
/// pass counts against [`bench_cost`] and fills in the timings.
pub fn measure_cost(
    model: &GuidanceModel<f32>,
    guidance_features: &FeatureCache,
    scorer: &dyn GroundingScorer,
    grounding_features: Option<&FeatureCache>,
    ds: &GroundingDataset,
    split: Split,
    lcfg: &LongformConfig,
) -> Result<CostReport> {
    let mut report = bench_cost(ds, split, model.config(), lcfg)?;
    let counter = model.pass_counter();
    counter.reset();
    let start = Instant::now();
    score_guidance(model, guidance_features, ds, split)?;
    report.guidance_seconds = round_ms(start.elapsed().as_secs_f64());
    let counted = CountingScorer::new(scorer);
    let start = Instant::now();
    ground_split(&counted, ds, grounding_features, split, lcfg)?;
    report.grounding_seconds = round_ms(start.elapsed().as_secs_f64());
    let measured = (counter.get(), counted.count());
    if measured != (report.guidance_passes, report.grounding_passes) {
        return Err(Error::Numeric(format!(
            "measured passes {measured:?} differ from the closed form ({}, {})",
            report.guidance_passes, report.grounding_passes
        )));
    }
    Ok(report)
}

fn round_ms(seconds: f64) -> f64 {
    (seconds * 1000.0).round() / 1000.0
}
