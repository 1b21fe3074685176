use serde::{Deserialize, Serialize};

pub use crate::dataset::ModalityMask;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    /// One score per window, shared by every query of the video.
    Agnostic,
    /// One score per (query, window) pair.
    Dependent,
}

impl std::str::FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "agnostic" | "query-agnostic" => Ok(GuidanceMode::Agnostic),
            "dependent" | "query-dependent" => Ok(GuidanceMode::Dependent),
            other => Err(Error::Config(format!("unknown guidance mode {other:?}"))),
        }
    }
}

impl std::fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GuidanceMode::Agnostic => "agnostic",
            GuidanceMode::Dependent => "dependent",
        })
    }
}

impl ModalityMask {
    pub fn for_mode(mode: GuidanceMode) -> Self {
        Self {
            visual: true,
            audio: true,
            text: mode == GuidanceMode::Dependent,
        }
    }
}

/// Architecture of the describable-window classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceConfig {
    pub mode: GuidanceMode,
    pub modalities: ModalityMask,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width; `None` means `4 · d_model`.
    pub ff_dim: Option<usize>,
    pub dropout: f64,
    /// Window length in frames (audio uses the same length).
    pub window_len: usize,
    /// Query tokens are truncated or zero-padded to this many rows.
    pub text_len: usize,
    /// Standard deviation of the random initialisation.
    pub init_std: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self::for_mode(GuidanceMode::Dependent)
    }
}

impl GuidanceConfig {
    pub fn for_mode(mode: GuidanceMode) -> Self {
        Self {
            mode,
            modalities: ModalityMask::for_mode(mode),
            d_model: 256,
            layers: 6,
            heads: 8,
            ff_dim: None,
            dropout: 0.1,
            window_len: 64,
            text_len: 4,
            init_std: 0.02,
        }
    }

    pub fn ff_dim(&self) -> usize {
        self.ff_dim.unwrap_or(4 * self.d_model)
    }

    /// Rows of the encoder input: CLS plus every enabled modality.
    pub fn sequence_len(&self) -> usize {
        1 + self.modalities.visual as usize * self.window_len
            + self.modalities.audio as usize * self.window_len
            + self.modalities.text as usize * self.text_len
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        match (self.mode, self.modalities.text) {
            (GuidanceMode::Dependent, false) => {
                return bad("query-dependent guidance needs the text modality".into())
            }
            (GuidanceMode::Agnostic, true) => {
                return bad("query-agnostic guidance cannot use the text modality".into())
            }
            _ => {}
        }
        if !self.modalities.visual && !self.modalities.audio {
            return bad("enable at least one of the visual and audio modalities".into());
        }
        if self.d_model == 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!(
                "d_model {} must be a positive multiple of heads {}",
                self.d_model, self.heads
            ));
        }
        if self.layers == 0 || self.ff_dim() == 0 || self.window_len == 0 || self.text_len == 0 {
            return bad("layers, ff_dim, window_len and text_len must be positive".into());
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad(format!("init_std must be positive, got {}", self.init_std));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        Ok(())
    }
}

/// Optimisation settings for guidance training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Validation AUROC is computed every this many epochs.
    pub eval_every: usize,
    /// Weight on the positive-class BCE term.
    pub pos_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-4,
            weight_decay: 1e-4,
            batch_size: 64,
            seed: 0,
            eval_every: 10,
            pos_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config(
                "epochs, batch_size and eval_every must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || !(self.pos_weight > 0.0) {
            return Err(Error::Config(
                "lr and pos_weight must be positive and weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}
