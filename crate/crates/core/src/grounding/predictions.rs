//! Prediction files: JSON lines of
//! `{query_id, start_s, end_s, score, source_window}`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::temporal::{Interval, ScoredMoment};

/// Moments per query id; lists keep emission order.
pub type Predictions = BTreeMap<String, Vec<ScoredMoment>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub query_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
    #[serde(default)]
    pub source_window: Option<usize>,
}

pub fn predictions_to_jsonl(preds: &Predictions) -> String {
    let mut out = String::new();
    for (qid, moments) in preds {
        for m in moments {
            let rec = PredictionRecord {
                query_id: qid.clone(),
                start_s: m.interval.start_s,
                end_s: m.interval.end_s,
                score: m.score,
                source_window: m.source_window,
            };
            let line = serde_json::to_string(&rec).expect("record serializes");
            writeln!(out, "{line}").expect("write to string");
        }
    }
    out
}

/// Parses JSON lines; blank lines are skipped and scores outside `[0, 1]` are rejected.
pub fn parse_predictions(text: &str, name: &str) -> Result<Predictions> {
    let mut preds = Predictions::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: PredictionRecord = serde_json::from_str(line)
            .map_err(|e| Error::json(format!("{name} line {}", i + 1), e))?;
        let at = |e: Error| match e {
            Error::Data(m) => Error::Data(format!("{name} line {}: {m}", i + 1)),
            other => other,
        };
        let interval = Interval::new(rec.start_s, rec.end_s).map_err(at)?;
        let m = ScoredMoment::new(interval, rec.score, rec.source_window).map_err(at)?;
        preds.entry(rec.query_id).or_default().push(m);
    }
    Ok(preds)
}

pub fn write_predictions(path: &Path, preds: &Predictions) -> Result<()> {
    fs::write(path, predictions_to_jsonl(preds)).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Predictions> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, &path.display().to_string())
}
