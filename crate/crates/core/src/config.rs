//! Run configuration: one JSON document with dot-path overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dataset::SyntheticConfig;
use crate::error::{Error, Result};
use crate::fusion::EvalConfig;
use crate::grounding::LongformConfig;
use crate::guidance::{GuidanceConfig, TrainConfig};
use crate::pipeline::GrounderConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset root holding `annotations.json` and `features/`.
    pub dataset: PathBuf,
    /// Directory receiving every artifact.
    pub out_dir: PathBuf,
    /// When set, replaces the seeds of the synthetic, train and grounder blocks.
    pub seed: Option<u64>,
    pub synthetic: SyntheticConfig,
    pub guidance: GuidanceConfig,
    pub train: TrainConfig,
    pub longform: LongformConfig,
    pub grounder: GrounderConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            seed: None,
            synthetic: SyntheticConfig::default(),
            guidance: GuidanceConfig::default(),
            train: TrainConfig::default(),
            longform: LongformConfig::default(),
            grounder: GrounderConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, name: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_error(name, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, &path.display().to_string())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `a.b.c=value` overrides; values parse as JSON and fall back to
    /// plain strings. Paths must name existing keys.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for raw in overrides {
            let raw = raw.as_ref();
            let (path, value) = raw
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {raw:?} is not key=value")))?;
            let value: Value =
                serde_json::from_str(value).unwrap_or_else(|_| Value::String(value.to_string()));
            let mut node = &mut doc;
            for key in path.split('.') {
                node = node
                    .as_object_mut()
                    .and_then(|obj| obj.get_mut(key))
                    .ok_or_else(|| Error::Config(format!("unknown config key {path:?}")))?;
            }
            *node = value;
        }
        serde_json::from_value(doc).map_err(|e| config_error("overrides", e))
    }

    /// The configuration with the top-level seed pushed into every block.
    pub fn resolved(&self) -> Self {
        let mut out = self.clone();
        if let Some(seed) = self.seed {
            out.synthetic.seed = seed;
            out.train.seed = seed;
            out.grounder.oracle.seed = seed;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.synthetic.validate()?;
        self.guidance.validate()?;
        self.train.validate()?;
        self.longform.validate()?;
        self.grounder.validate()?;
        self.eval.validate()
    }
}

fn config_error(name: &str, e: serde_json::Error) -> Error {
    Error::Config(format!("{name}: {e}"))
}
