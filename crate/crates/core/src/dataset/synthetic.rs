use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{emb, Annotations, Dims, GroundingDataset, QueryRecord, Split, VideoRecord, FEATURES_DIR};
use crate::error::{Error, Result};
use crate::tensor::{Matrix, RngState};

/// Parameters of the planted-signal generator.
///
/// Every moment gets a random unit signature `u` in a `latent_dim`-dimensional
/// space. Frames inside the moment receive `α·P_v·u` on top of `N(0, σ²)`
/// visual noise (and `α·P_a·u` on the audio track); the query tokens are
/// `P_t·u` plus `N(0, query_noise²)`. The mixing maps have `N(0, 1)` entries
/// and are fixed per dataset. When text and visual widths agree the text map
/// is the visual map, so queries and frames live in one joint space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub moments_per_video: usize,
    pub dims: Dims,
    pub latent_dim: usize,
    pub signal_strength: f64,
    pub noise_scale: f64,
    pub query_noise: f64,
    pub query_tokens: usize,
    pub fps: f64,
    pub min_moment_frames: usize,
    pub max_moment_frames: usize,
    pub with_audio: bool,
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub actionless_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_videos: 20,
            frames_per_video: 512,
            moments_per_video: 3,
            dims: Dims::default(),
            latent_dim: 16,
            signal_strength: 2.0,
            noise_scale: 1.0,
            query_noise: 0.1,
            query_tokens: 4,
            fps: 5.0,
            min_moment_frames: 20,
            max_moment_frames: 60,
            with_audio: true,
            train_fraction: 0.6,
            val_fraction: 0.1,
            actionless_fraction: 0.25,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.signal_strength < 0.0 || !self.signal_strength.is_finite() {
            return bad(format!("signal_strength must be >= 0, got {}", self.signal_strength));
        }
        if self.noise_scale <= 0.0 || !self.noise_scale.is_finite() {
            return bad(format!("noise_scale must be > 0, got {}", self.noise_scale));
        }
        if self.query_noise < 0.0 {
            return bad("query_noise must be >= 0".into());
        }
        if self.latent_dim == 0 || self.query_tokens == 0 || self.frames_per_video == 0 {
            return bad("latent_dim, query_tokens and frames_per_video must be positive".into());
        }
        if self.dims.visual == 0 || self.dims.text == 0 || (self.with_audio && self.dims.audio == 0)
        {
            return bad("feature dimensions must be positive".into());
        }
        if self.min_moment_frames == 0 || self.min_moment_frames > self.max_moment_frames {
            return bad("need 1 <= min_moment_frames <= max_moment_frames".into());
        }
        if self.moments_per_video * self.max_moment_frames > self.frames_per_video {
            return bad(format!(
                "{} moments of up to {} frames do not fit in {} frames",
                self.moments_per_video, self.max_moment_frames, self.frames_per_video
            ));
        }
        if !(self.fps > 0.0) {
            return bad("fps must be positive".into());
        }
        let fractions = [self.train_fraction, self.val_fraction, self.actionless_fraction];
        if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
            || self.train_fraction + self.val_fraction > 1.0
        {
            return bad("split and actionless fractions must lie in [0, 1]".into());
        }
        Ok(())
    }

    fn split_of(&self, video: usize) -> Split {
        let n = self.num_videos as f64;
        let train = (self.train_fraction * n).round() as usize;
        let val = (self.val_fraction * n).round() as usize;
        if video < train {
            Split::Train
        } else if video < train + val {
            Split::Val
        } else {
            Split::Test
        }
    }
}

fn unit_vector(rng: &mut RngState, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// `P·u` for `P: out × latent` stored row-major.
fn mix(map: &Matrix<f64>, u: &[f64]) -> Vec<f64> {
    map.iter_rows()
        .map(|row| row.iter().zip(u).map(|(a, b)| a * b).sum())
        .collect()
}

/// Non-overlapping `[start, start+len)` frame spans, sorted by start.
fn place_moments(cfg: &SyntheticConfig, rng: &mut RngState) -> Result<Vec<(usize, usize)>> {
    let mut spans: Vec<(usize, usize)> = Vec::with_capacity(cfg.moments_per_video);
    for _ in 0..cfg.moments_per_video {
        let mut placed = false;
        for _ in 0..10_000 {
            let len = cfg.min_moment_frames + rng.below(cfg.max_moment_frames - cfg.min_moment_frames + 1);
            let start = rng.below(cfg.frames_per_video - len + 1);
            if spans
                .iter()
                .all(|&(s, l)| start + len <= s || s + l <= start)
            {
                spans.push((start, len));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Config(
                "could not place non-overlapping moments; reduce moments_per_video or max_moment_frames"
                    .into(),
            ));
        }
    }
    spans.sort_unstable();
    Ok(spans)
}

fn write_features(path: &Path, m: &Matrix<f64>) -> Result<()> {
    emb::write(path, &m.cast())
}

/// Writes a synthetic dataset under `out_dir` and returns it.
///
/// The output is a pure function of `cfg`: the same config always produces
/// byte-identical files.
pub fn generate_synthetic(cfg: &SyntheticConfig, out_dir: &Path) -> Result<GroundingDataset> {
    cfg.validate()?;
    let features = out_dir.join(FEATURES_DIR);
    fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;

    let mut rng = RngState::new(cfg.seed);
    let visual_map: Matrix<f64> = rng.normal_matrix(cfg.dims.visual, cfg.latent_dim, 1.0);
    let audio_map: Matrix<f64> = rng.normal_matrix(cfg.dims.audio, cfg.latent_dim, 1.0);
    let text_map: Matrix<f64> = if cfg.dims.text == cfg.dims.visual {
        visual_map.clone()
    } else {
        rng.normal_matrix(cfg.dims.text, cfg.latent_dim, 1.0)
    };

    let mut videos = Vec::with_capacity(cfg.num_videos);
    let mut queries = Vec::new();
    for vi in 0..cfg.num_videos {
        let mut vr = rng.fork();
        let id = format!("v{vi:03}");
        let spans = place_moments(cfg, &mut vr)?;
        let signatures: Vec<Vec<f64>> = spans
            .iter()
            .map(|_| unit_vector(&mut vr, cfg.latent_dim))
            .collect();

        let frames = cfg.frames_per_video;
        let mut visual: Matrix<f64> = vr.normal_matrix(frames, cfg.dims.visual, cfg.noise_scale);
        let mut audio: Option<Matrix<f64>> = cfg
            .with_audio
            .then(|| vr.normal_matrix(frames, cfg.dims.audio, cfg.noise_scale));
        for (&(start, len), u) in spans.iter().zip(&signatures) {
            let pv: Vec<f64> = mix(&visual_map, u)
                .into_iter()
                .map(|x| x * cfg.signal_strength)
                .collect();
            let pa: Vec<f64> = mix(&audio_map, u)
                .into_iter()
                .map(|x| x * cfg.signal_strength)
                .collect();
            for f in start..start + len {
                for (x, s) in visual.row_mut(f).iter_mut().zip(&pv) {
                    *x += s;
                }
                if let Some(a) = audio.as_mut() {
                    for (x, s) in a.row_mut(f).iter_mut().zip(&pa) {
                        *x += s;
                    }
                }
            }
        }

        let visual_rel = format!("{FEATURES_DIR}/{id}.visual.emb");
        write_features(&out_dir.join(&visual_rel), &visual)?;
        let audio_rel = match &audio {
            Some(a) => {
                let rel = format!("{FEATURES_DIR}/{id}.audio.emb");
                write_features(&out_dir.join(&rel), a)?;
                Some(rel)
            }
            None => None,
        };

        for (qi, (&(start, len), u)) in spans.iter().zip(&signatures).enumerate() {
            let qid = format!("{id}_q{qi}");
            let base = mix(&text_map, u);
            let tokens = Matrix::from_fn(cfg.query_tokens, cfg.dims.text, |_, c| {
                base[c] + cfg.query_noise * vr.normal()
            });
            let tokens_rel = format!("{FEATURES_DIR}/{qid}.tokens.emb");
            write_features(&out_dir.join(&tokens_rel), &tokens)?;
            queries.push(QueryRecord {
                id: qid,
                video_id: id.clone(),
                tokens: tokens_rel,
                start_s: start as f64 / cfg.fps,
                end_s: (start + len) as f64 / cfg.fps,
                actionless: vr.uniform() < cfg.actionless_fraction,
                split: cfg.split_of(vi),
            });
        }

        videos.push(VideoRecord {
            id,
            fps: cfg.fps,
            num_frames: frames,
            visual: visual_rel,
            audio: audio_rel,
        });
    }

    let dataset = GroundingDataset {
        root: out_dir.to_path_buf(),
        annotations: Annotations {
            dims: cfg.dims,
            videos,
            queries,
        },
    };
    dataset.annotations.validate()?;
    dataset.save_annotations()?;
    Ok(dataset)
}
