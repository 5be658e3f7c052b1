//! Line-delimited JSON journey files.
//!
//! Schema `trace-journey/1`, one journey per line:
//!
//! ```json
//! {"schema":"trace-journey/1","user_id":"u000042","split_index":17,
//!  "events":[{"page_name":"home","timestamp":1704067200.0,"device_type":"mobile",
//!             "platform":"ios","locale":"en_GB","is_purchase":false}, ...]}
//! ```
//!
//! `events` are in non-decreasing timestamp order (seconds since the epoch).
//! `split_index`, when present, is the number of leading events that form
//! the model input; the rest are future events used only for labels.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::PageCatalog;
use crate::clickstream::{
    compute_labels, sessionize, LabelConfig, PageViewEvent, SplitExample, Task, TaskLabelSet,
};
use crate::error::{Result, TraceError};
use crate::tensor::hex;

pub const SCHEMA: &str = "trace-journey/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JourneyRecord {
    pub schema: String,
    pub user_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_index: Option<usize>,
    pub events: Vec<PageViewEvent>,
}

impl JourneyRecord {
    pub fn new(user_id: impl Into<String>, events: Vec<PageViewEvent>, split_index: Option<usize>) -> Self {
        JourneyRecord {
            schema: SCHEMA.to_string(),
            user_id: user_id.into(),
            split_index,
            events,
        }
    }
}

pub fn write_jsonl(path: impl AsRef<Path>, records: &[JourneyRecord]) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<JourneyRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            TraceError::Missing {
                artifact: "dataset file".into(),
                path: path.to_path_buf(),
                hint: "generate".into(),
            }
        } else {
            e.into()
        }
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: JourneyRecord = serde_json::from_str(&line)
            .map_err(|e| TraceError::data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if rec.schema != SCHEMA {
            return Err(TraceError::data(format!(
                "{}:{}: unsupported schema `{}`",
                path.display(),
                i + 1,
                rec.schema
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn file_sha256(path: impl AsRef<Path>) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

/// A split journey with its ground-truth targets.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub user_id: String,
    pub example: SplitExample,
    pub labels: TaskLabelSet,
}

impl LabeledExample {
    pub fn from_record(
        rec: &JourneyRecord,
        session_timeout: f64,
        catalog: &PageCatalog,
        label_cfg: &LabelConfig,
    ) -> Result<Self> {
        let split = rec.split_index.ok_or_else(|| {
            TraceError::data(format!("journey `{}` has no split_index", rec.user_id))
        })?;
        let journey = sessionize(rec.user_id.clone(), rec.events.clone(), session_timeout)?;
        let example = SplitExample::at(&journey, split)?;
        let labels = compute_labels(&example, catalog, label_cfg);
        Ok(LabeledExample {
            user_id: rec.user_id.clone(),
            example,
            labels,
        })
    }
}

/// Fraction of positive labels per task, in [`Task::ALL`] order.
pub fn label_prevalence(examples: &[LabeledExample]) -> [f64; 8] {
    let mut counts = [0usize; 8];
    for ex in examples {
        for (c, y) in counts.iter_mut().zip(ex.labels.as_array()) {
            *c += y as usize;
        }
    }
    let n = examples.len().max(1) as f64;
    counts.map(|c| c as f64 / n)
}

pub fn prevalence_map(examples: &[LabeledExample]) -> std::collections::BTreeMap<String, f64> {
    Task::ALL
        .iter()
        .zip(label_prevalence(examples))
        .map(|(t, p)| (t.name().to_string(), p))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = std::env::temp_dir().join(format!("trace-ds-{}", std::process::id()));
        let path = dir.join("j.jsonl");
        let recs = vec![
            JourneyRecord::new("a", vec![PageViewEvent::new("home", 1.0)], None),
            JourneyRecord::new(
                "b",
                vec![
                    PageViewEvent::new("home", 1.0),
                    PageViewEvent::new("booking_confirmation", 2.5).purchase(),
                ],
                Some(1),
            ),
        ];
        write_jsonl(&path, &recs).unwrap();
        assert_eq!(read_jsonl(&path).unwrap(), recs);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn missing_file_names_generate() {
        let err = read_jsonl("/nonexistent/train.jsonl").unwrap_err();
        assert!(err.to_string().contains("generate"));
    }
}
