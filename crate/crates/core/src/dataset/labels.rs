use serde::{Deserialize, Serialize};

use crate::temporal::{tiou, Interval, Window};

/// A guidance training example: a window and whether it is describable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub video_id: String,
    pub window: Window,
    pub label: bool,
    /// Present only for query-dependent supervision.
    pub query_id: Option<String>,
}

/// Positive iff the window overlaps this query's ground truth (`tIoU > 0`).
pub fn label_windows_query_dependent(
    video_id: &str,
    query_id: &str,
    windows: &[Window],
    ground_truth: &Interval,
) -> Vec<LabeledWindow> {
    windows
        .iter()
        .map(|w| LabeledWindow {
            video_id: video_id.to_string(),
            window: *w,
            label: tiou(&w.interval, ground_truth) > 0.0,
            query_id: Some(query_id.to_string()),
        })
        .collect()
}

/// Positive iff the window overlaps any moment of the video.
pub fn label_windows_query_agnostic(
    video_id: &str,
    windows: &[Window],
    moments: &[Interval],
) -> Vec<LabeledWindow> {
    windows
        .iter()
        .map(|w| LabeledWindow {
            video_id: video_id.to_string(),
            window: *w,
            label: moments.iter().any(|m| tiou(&w.interval, m) > 0.0),
            query_id: None,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::generate_windows;
    use crate::tensor::RngState;

    fn iv(a: f64, b: f64) -> Interval {
        Interval::new(a, b).unwrap()
    }

    fn window(a: f64, b: f64) -> Window {
        Window {
            index: 0,
            interval: iv(a, b),
            frame_start: 0,
            frame_len: 64,
        }
    }

    #[test]
    fn dependent_label_cases() {
        let pos = label_windows_query_dependent("v", "q", &[window(0.0, 12.8)], &iv(12.0, 14.0));
        assert!(pos[0].label);
        assert_eq!(pos[0].query_id.as_deref(), Some("q"));
        let neg = label_windows_query_dependent("v", "q", &[window(12.8, 25.6)], &iv(0.0, 2.0));
        assert!(!neg[0].label);
        let touching =
            label_windows_query_dependent("v", "q", &[window(0.0, 12.8)], &iv(12.8, 14.0));
        assert!(!touching[0].label);
    }

    #[test]
    fn agnostic_label_cases() {
        let w = generate_windows(256, 5.0, 64, 32).unwrap();
        assert!(label_windows_query_agnostic("v", &w, &[])
            .iter()
            .all(|l| !l.label && l.query_id.is_none()));
        let tiles: Vec<Interval> = (0..8).map(|i| iv(i as f64 * 8.0, (i + 1) as f64 * 8.0)).collect();
        assert!(label_windows_query_agnostic("v", &w, &tiles)
            .iter()
            .all(|l| l.label));
    }

    #[test]
    fn agnostic_equals_or_fold_of_dependent() {
        let mut rng = RngState::new(3);
        for _ in 0..50 {
            let w = generate_windows(400, 5.0, 64, 32).unwrap();
            let moments: Vec<Interval> = (0..rng.below(5))
                .map(|_| {
                    let a = rng.uniform_range(0.0, 70.0);
                    iv(a, a + rng.uniform_range(0.5, 10.0))
                })
                .collect();
            let agnostic = label_windows_query_agnostic("v", &w, &moments);
            let mut folded = vec![false; w.len()];
            for m in &moments {
                for (f, l) in folded
                    .iter_mut()
                    .zip(label_windows_query_dependent("v", "q", &w, m))
                {
                    *f |= l.label;
                }
            }
            let labels: Vec<bool> = agnostic.iter().map(|l| l.label).collect();
            assert_eq!(labels, folded);
        }
    }
}
