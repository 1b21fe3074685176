use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::{Interval, ScoredMoment};
use crate::tensor::RngState;

use super::{fnv1a, top_moments, GroundingScorer, WindowView};

/// Score given to a ground-truth proposal before noise.
pub const ORACLE_SCORE: f64 = 0.9;
/// Distractor scores are uniform on this range.
pub const DISTRACTOR_SCORES: (f64, f64) = (0.4, 0.8);

/// Controls how far the test-double grounding model strays from the truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoisyOracleConfig {
    /// Standard deviation of the boundary noise, in seconds.
    pub jitter_s: f64,
    /// Random proposals added to every window.
    pub distractors: usize,
    /// Standard deviation of the noise on ground-truth scores.
    pub score_noise: f64,
    pub seed: u64,
}

impl Default for NoisyOracleConfig {
    fn default() -> Self {
        Self {
            jitter_s: 2.0,
            distractors: 6,
            score_noise: 0.1,
            seed: 0,
        }
    }
}

impl NoisyOracleConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.jitter_s) || !ok(self.score_noise) {
            return Err(Error::Config(
                "oracle jitter_s and score_noise must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Ground truth with boundary jitter plus uniform distractors, all inside
/// `[0, local_len_s]`; the `max_moments` best are kept.
///
/// `ground_truth` holds the in-window parts of the moments, in local seconds.
pub fn noisy_oracle_ground(
    local_len_s: f64,
    ground_truth: &[Interval],
    cfg: &NoisyOracleConfig,
    rng: &mut RngState,
    max_moments: usize,
) -> Result<Vec<ScoredMoment>> {
    cfg.validate()?;
    let clamp = |t: f64| t.clamp(0.0, local_len_s);
    let mut out = Vec::with_capacity(ground_truth.len() + cfg.distractors);
    for gt in ground_truth {
        let a = clamp(gt.start_s + cfg.jitter_s * rng.normal());
        let b = clamp(gt.end_s + cfg.jitter_s * rng.normal());
        let score = (ORACLE_SCORE + cfg.score_noise * rng.normal()).clamp(0.0, 1.0);
        out.push(ScoredMoment::new(
            Interval {
                start_s: a.min(b),
                end_s: a.max(b),
            },
            score,
            None,
        )?);
    }
    for _ in 0..cfg.distractors {
        let a = rng.uniform_range(0.0, local_len_s);
        let b = rng.uniform_range(0.0, local_len_s);
        let score = rng.uniform_range(DISTRACTOR_SCORES.0, DISTRACTOR_SCORES.1);
        out.push(ScoredMoment::new(
            Interval {
                start_s: a.min(b),
                end_s: a.max(b),
            },
            score,
            None,
        )?);
    }
    Ok(top_moments(out, max_moments))
}

/// [`noisy_oracle_ground`] seeded per (query, window), so results do not
/// depend on evaluation order.
#[derive(Clone, Debug, Default)]
pub struct NoisyOracle {
    pub config: NoisyOracleConfig,
}

impl GroundingScorer for NoisyOracle {
    fn needs_features(&self) -> bool {
        false
    }

    fn ground_window(
        &self,
        view: &WindowView<'_>,
        max_moments: usize,
    ) -> Result<Vec<ScoredMoment>> {
        let extent = view.extent();
        let gt = view.query.ground_truth();
        let local: Vec<Interval> = if gt.overlap(&extent) > 0.0 {
            vec![Interval {
                start_s: gt.start_s.max(extent.start_s) - extent.start_s,
                end_s: (gt.end_s.min(extent.end_s) - extent.start_s).min(view.local_len_s),
            }]
        } else {
            Vec::new()
        };
        let seed = self.config.seed
            ^ fnv1a(&view.query.id).rotate_left(17)
            ^ (view.window.index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = RngState::new(seed);
        noisy_oracle_ground(view.local_len_s, &local, &self.config, &mut rng, max_moments)
    }
}
