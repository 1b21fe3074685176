//! Grounding datasets: annotation JSON, `EMB1` feature files, window labels,
//! the short-form clip setup and a planted-signal synthetic generator.
//!
//! On-disk layout:
//!
//! ```text
//! {root}/annotations.json
//! {root}/features/*.emb
//! ```
//!
//! Feature paths inside the annotations are relative to `{root}`.

pub mod emb;
mod features;
mod labels;
mod shortform;
mod synthetic;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::Interval;
use crate::tensor::Matrix;

pub use features::{FeatureCache, ModalityMask, WindowInputs};
pub use labels::{label_windows_query_agnostic, label_windows_query_dependent, LabeledWindow};
pub use shortform::make_shortform_setup;
pub use synthetic::{generate_synthetic, SyntheticConfig};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
pub const FEATURES_DIR: &str = "features";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub visual: usize,
    pub audio: usize,
    pub text: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            visual: 512,
            audio: 512,
            text: 512,
        }
    }
}

fn default_fps() -> f64 {
    5.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoRecord {
    pub id: String,
    #[serde(default = "default_fps")]
    pub fps: f64,
    pub num_frames: usize,
    pub visual: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio: Option<String>,
}

impl VideoRecord {
    pub fn duration_s(&self) -> f64 {
        self.num_frames as f64 / self.fps
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueryRecord {
    pub id: String,
    pub video_id: String,
    pub tokens: String,
    pub start_s: f64,
    pub end_s: f64,
    #[serde(default)]
    pub actionless: bool,
    pub split: Split,
}

impl QueryRecord {
    pub fn ground_truth(&self) -> Interval {
        Interval {
            start_s: self.start_s,
            end_s: self.end_s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotations {
    #[serde(default)]
    pub dims: Dims,
    pub videos: Vec<VideoRecord>,
    pub queries: Vec<QueryRecord>,
}

impl Annotations {
    pub fn from_json(text: &str) -> Result<Self> {
        let a: Annotations =
            serde_json::from_str(text).map_err(|e| Error::json(ANNOTATIONS_FILE, e))?;
        a.validate()?;
        Ok(a)
    }

    /// Canonical form: pretty JSON with fields in declaration order.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("annotations serialize")
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = HashSet::new();
        let mut durations = HashMap::new();
        for v in &self.videos {
            if !ids.insert(v.id.as_str()) {
                return Err(Error::Data(format!("duplicate video id {:?}", v.id)));
            }
            if !(v.fps > 0.0 && v.fps.is_finite()) {
                return Err(Error::Data(format!("video {:?}: fps must be positive", v.id)));
            }
            durations.insert(v.id.as_str(), v.duration_s());
        }
        let mut qids = HashSet::new();
        for q in &self.queries {
            if !qids.insert(q.id.as_str()) {
                return Err(Error::Data(format!("duplicate query id {:?}", q.id)));
            }
            let duration = *durations.get(q.video_id.as_str()).ok_or_else(|| {
                Error::Data(format!(
                    "query {:?} references unknown video {:?}",
                    q.id, q.video_id
                ))
            })?;
            let valid = q.start_s.is_finite()
                && q.end_s.is_finite()
                && q.start_s >= 0.0
                && q.end_s > q.start_s
                && q.end_s <= duration + 1e-9;
            if !valid {
                return Err(Error::Data(format!(
                    "query {:?}: ground truth [{}, {}] must satisfy 0 <= start < end <= {duration}",
                    q.id, q.start_s, q.end_s
                )));
            }
        }
        Ok(())
    }
}

/// Annotations plus the root directory their feature paths resolve against.
#[derive(Clone, Debug)]
pub struct GroundingDataset {
    pub root: PathBuf,
    pub annotations: Annotations,
}

impl GroundingDataset {
    pub fn load(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let path = root.join(ANNOTATIONS_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            root,
            annotations: Annotations::from_json(&text)?,
        })
    }

    pub fn save_annotations(&self) -> Result<()> {
        let path = self.root.join(ANNOTATIONS_FILE);
        fs::write(&path, self.annotations.to_json()).map_err(|e| Error::io(&path, e))
    }

    pub fn dims(&self) -> Dims {
        self.annotations.dims
    }

    pub fn videos(&self) -> &[VideoRecord] {
        &self.annotations.videos
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.annotations.queries
    }

    pub fn video(&self, id: &str) -> Result<&VideoRecord> {
        self.annotations
            .videos
            .iter()
            .find(|v| v.id == id)
            .ok_or_else(|| Error::Data(format!("unknown video {id:?}")))
    }

    pub fn query(&self, id: &str) -> Result<&QueryRecord> {
        self.annotations
            .queries
            .iter()
            .find(|q| q.id == id)
            .ok_or_else(|| Error::Data(format!("unknown query {id:?}")))
    }

    pub fn queries_in(&self, split: Split) -> impl Iterator<Item = &QueryRecord> {
        self.annotations
            .queries
            .iter()
            .filter(move |q| q.split == split)
    }

    /// Videos that have at least one query in `split`, in annotation order.
    pub fn videos_in(&self, split: Split) -> Vec<&VideoRecord> {
        let ids: HashSet<&str> = self.queries_in(split).map(|q| q.video_id.as_str()).collect();
        self.annotations
            .videos
            .iter()
            .filter(|v| ids.contains(v.id.as_str()))
            .collect()
    }

    /// Ground-truth moments grouped by video, in query order.
    pub fn moments_by_video(&self) -> BTreeMap<&str, Vec<Interval>> {
        let mut out: BTreeMap<&str, Vec<Interval>> = BTreeMap::new();
        for v in &self.annotations.videos {
            out.entry(v.id.as_str()).or_default();
        }
        for q in &self.annotations.queries {
            out.entry(q.video_id.as_str())
                .or_default()
                .push(q.ground_truth());
        }
        out
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn visual_features(&self, video: &VideoRecord) -> Result<Matrix<f32>> {
        let m = emb::read_checked(&self.resolve(&video.visual), self.dims().visual)?;
        check_rows(&video.visual, m.rows(), video.num_frames)?;
        Ok(m)
    }

    pub fn audio_features(&self, video: &VideoRecord) -> Result<Matrix<f32>> {
        let rel = video.audio.as_deref().ok_or_else(|| {
            Error::Data(format!("video {:?} has no audio features", video.id))
        })?;
        let m = emb::read_checked(&self.resolve(rel), self.dims().audio)?;
        check_rows(rel, m.rows(), video.num_frames)?;
        Ok(m)
    }

    pub fn query_tokens(&self, query: &QueryRecord) -> Result<Matrix<f32>> {
        let m = emb::read_checked(&self.resolve(&query.tokens), self.dims().text)?;
        if m.rows() == 0 {
            return Err(Error::Format {
                path: query.tokens.clone(),
                field: "rows",
                detail: "query token matrix must have at least one row".into(),
            });
        }
        Ok(m)
    }
}

fn check_rows(path: &str, found: usize, declared: usize) -> Result<()> {
    if found != declared {
        return Err(Error::Format {
            path: path.to_string(),
            field: "rows",
            detail: format!("annotations declare {declared} frames, file has {found}"),
        });
    }
    Ok(())
}

/// Truncates or zero-pads `m` to exactly `rows` rows.
pub fn fit_rows(m: &Matrix<f32>, rows: usize) -> Matrix<f32> {
    if m.rows() == rows {
        m.clone()
    } else {
        m.rows_padded(0, rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Annotations {
        Annotations {
            dims: Dims {
                visual: 3,
                audio: 2,
                text: 3,
            },
            videos: vec![VideoRecord {
                id: "v0".into(),
                fps: 5.0,
                num_frames: 50,
                visual: "features/v0.visual.emb".into(),
                audio: None,
            }],
            queries: vec![QueryRecord {
                id: "q0".into(),
                video_id: "v0".into(),
                tokens: "features/q0.tokens.emb".into(),
                start_s: 1.0,
                end_s: 2.5,
                actionless: true,
                split: Split::Test,
            }],
        }
    }

    #[test]
    fn annotations_round_trip() {
        let a = sample();
        let text = a.to_json();
        let back = Annotations::from_json(&text).unwrap();
        assert_eq!(a, back);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn unknown_video_rejected() {
        let mut a = sample();
        a.queries[0].video_id = "nope".into();
        assert!(matches!(a.validate(), Err(Error::Data(_))));
    }

    #[test]
    fn zero_length_and_out_of_range_ground_truth_rejected() {
        let mut a = sample();
        a.queries[0].end_s = a.queries[0].start_s;
        assert!(a.validate().is_err());
        let mut b = sample();
        b.queries[0].end_s = 10.5;
        assert!(b.validate().is_err());
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = sample().to_json().replace("\"actionless\"", "\"verbless\"");
        assert!(Annotations::from_json(&text).is_err());
    }

    #[test]
    fn fps_defaults_to_five() {
        let text = r#"{"videos":[{"id":"a","num_frames":10,"visual":"a.emb"}],"queries":[]}"#;
        let a = Annotations::from_json(text).unwrap();
        assert_eq!(a.videos[0].fps, 5.0);
        assert_eq!(a.dims, Dims::default());
    }

    #[test]
    fn features_checked_against_header() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir_all(dir.path().join(FEATURES_DIR)).unwrap();
        let ds = GroundingDataset {
            root: dir.path().to_path_buf(),
            annotations: sample(),
        };
        emb::write(&dir.path().join("features/v0.visual.emb"), &Matrix::zeros(49, 3)).unwrap();
        let v = ds.annotations.videos[0].clone();
        assert!(matches!(
            ds.visual_features(&v),
            Err(Error::Format { field: "rows", .. })
        ));
        emb::write(&dir.path().join("features/v0.visual.emb"), &Matrix::zeros(50, 3)).unwrap();
        assert_eq!(ds.visual_features(&v).unwrap().shape(), (50, 3));
        assert!(matches!(ds.audio_features(&v), Err(Error::Data(_))));
    }
}
