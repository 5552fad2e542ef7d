//! JSONL record types for datasets, predictions and transcripts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agents::Role;
use crate::error::{Error, Result};
use crate::paths::{PathId, TaskKind};
use crate::span::{TimeSpan, VideoMeta};

/// One annotated question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub qid: String,
    pub video: String,
    pub duration: f64,
    pub question: String,
    #[serde(default)]
    pub options: Vec<String>,
    #[serde(default)]
    pub answer: Option<usize>,
    #[serde(default)]
    pub spans: Vec<[f64; 2]>,
}

impl DatasetRecord {
    pub fn video_meta(&self) -> Result<VideoMeta> {
        VideoMeta::new(self.video.clone(), self.duration)
    }

    pub fn gt_spans(&self) -> Vec<TimeSpan> {
        self.spans
            .iter()
            .map(|s| TimeSpan { start: s[0], end: s[1] })
            .collect()
    }

    /// Checks the structural invariants required by `task`.
    pub fn validate(&self, task: TaskKind) -> Result<()> {
        let bad = |message: String| Error::InvalidRecord {
            qid: self.qid.clone(),
            message,
        };
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(bad(format!("duration must be positive, got {}", self.duration)));
        }
        for s in &self.spans {
            let span = TimeSpan::new(s[0], s[1]).map_err(|e| bad(e.to_string()))?;
            if span.end > self.duration {
                return Err(bad(format!("span {s:?} exceeds duration {}", self.duration)));
            }
        }
        if task != TaskKind::MomentRetrieval {
            if self.options.len() < 2 {
                return Err(bad("needs at least two options".into()));
            }
            if let Some(a) = self.answer {
                if a >= self.options.len() {
                    return Err(bad(format!("answer {a} out of range")));
                }
            }
        }
        Ok(())
    }
}

/// Per-path diagnostics attached to a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDiagnostic {
    pub path: PathId,
    #[serde(default)]
    pub answer: Option<usize>,
    #[serde(default)]
    pub best_span: Option<[f64; 2]>,
    #[serde(default)]
    pub path_confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub qid: String,
    pub answer: Option<usize>,
    /// `[start, end, weight]`, weight descending; the first span is rank 1.
    #[serde(default)]
    pub spans: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_path: Option<Vec<PathDiagnostic>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Prediction {
    pub fn ranked_spans(&self) -> Vec<TimeSpan> {
        self.spans
            .iter()
            .map(|s| TimeSpan { start: s[0], end: s[1] })
            .collect()
    }
}

/// One agent call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub qid: String,
    pub path: PathId,
    pub role: Role,
    pub ordinal: u32,
    pub video_duration: f64,
    pub request: Value,
    #[serde(default)]
    pub response: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub latency_ms: f64,
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl_with(path, |v| Ok(serde_json::from_value(v)?))
}

/// Like [`read_jsonl`], with a converter from each raw JSON object. This is
/// the hook for ingesting other annotation layouts.
pub fn read_jsonl_with<T>(path: &Path, mut convert: impl FnMut(Value) -> Result<T>) -> Result<Vec<T>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |source| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            source,
        };
        let value: Value = serde_json::from_str(&line).map_err(parse_err)?;
        match convert(value) {
            Ok(v) => out.push(v),
            Err(Error::Json(source)) => return Err(parse_err(source)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}
