use crate::error::{Error, Result};
use crate::temporal::Interval;

use super::VideoRecord;

/// Splits a video into consecutive clips of `window_len_s` seconds (the last
/// one truncated) and pairs each clip with the moment it overlaps the most.
///
/// Ties in overlap go to the earliest-starting moment, then to input order.
/// Clips that overlap no moment are dropped.
pub fn make_shortform_setup(
    video: &VideoRecord,
    moments: &[Interval],
    window_len_s: f64,
) -> Result<Vec<(Interval, Interval)>> {
    if !(window_len_s > 0.0 && window_len_s.is_finite()) {
        return Err(Error::Config(format!(
            "short-form clip length must be positive, got {window_len_s}"
        )));
    }
    let duration = video.duration_s();
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let start = k as f64 * window_len_s;
        if start >= duration {
            break;
        }
        let clip = Interval {
            start_s: start,
            end_s: (start + window_len_s).min(duration),
        };
        let mut best: Option<(f64, &Interval)> = None;
        for m in moments {
            let ov = clip.overlap(m);
            if ov <= 0.0 {
                continue;
            }
            best = match best {
                Some((b, bm)) if b > ov || (b == ov && bm.start_s <= m.start_s) => Some((b, bm)),
                _ => Some((ov, m)),
            };
        }
        if let Some((_, m)) = best {
            out.push((clip, *m));
        }
        k += 1;
    }
    Ok(out)
}
