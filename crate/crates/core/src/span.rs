//! Temporal span algebra: overlap measures, zoom extension and 1-D NMS.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed temporal interval `[start, end]` in seconds within one video.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSpan {
    pub start: f64,
    pub end: f64,
}

impl TimeSpan {
    /// Builds a span, rejecting non-finite, negative or reversed bounds.
    pub fn new(start: f64, end: f64) -> Result<Self> {
        if !start.is_finite() || !end.is_finite() {
            return Err(Error::InvalidSpan(format!("non-finite bounds [{start}, {end}]")));
        }
        if start < 0.0 || end < 0.0 {
            return Err(Error::InvalidSpan(format!("negative bounds [{start}, {end}]")));
        }
        if start > end {
            return Err(Error::InvalidSpan(format!("start after end [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }

    /// Clamps both bounds into `[0, duration]`.
    pub fn clamp_to(&self, duration: f64) -> Self {
        let start = self.start.clamp(0.0, duration);
        let end = self.end.clamp(0.0, duration);
        Self {
            start: start.min(end),
            end,
        }
    }

    pub fn contains(&self, other: &TimeSpan) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn as_pair(&self) -> [f64; 2] {
        [self.start, self.end]
    }
}

/// A span with a confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSpan {
    pub span: TimeSpan,
    pub confidence: f64,
}

impl ScoredSpan {
    pub fn new(span: TimeSpan, confidence: f64) -> Self {
        Self { span, confidence }
    }
}

/// A video reference and its duration in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub duration: f64,
}

impl VideoMeta {
    pub fn new(video_id: impl Into<String>, duration: f64) -> Result<Self> {
        if !(duration.is_finite() && duration > 0.0) {
            return Err(Error::InvalidSpan(format!("video duration must be positive, got {duration}")));
        }
        Ok(Self {
            video_id: video_id.into(),
            duration,
        })
    }
}

pub fn intersection_length(a: &TimeSpan, b: &TimeSpan) -> f64 {
    (a.end.min(b.end) - a.start.max(b.start)).max(0.0)
}

/// Temporal intersection over union. Two zero-length spans give 0.
pub fn iou(a: &TimeSpan, b: &TimeSpan) -> f64 {
    let inter = intersection_length(a, b);
    // For overlapping spans the union is their hull; measuring it directly
    // (rather than as len_a + len_b - inter) keeps IoU <= IoP under rounding.
    let union = if inter > 0.0 {
        a.end.max(b.end) - a.start.min(b.start)
    } else {
        a.length() + b.length()
    };
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Intersection over the predicted span's length.
pub fn iop(pred: &TimeSpan, gt: &TimeSpan) -> Result<f64> {
    let len = pred.length();
    if len <= 0.0 {
        return Err(Error::ZeroLengthPrediction);
    }
    Ok((intersection_length(pred, gt) / len).clamp(0.0, 1.0))
}

/// Grows the span to `(1 + ratio)` times its length around its midpoint and
/// clamps the result to `[0, duration]`.
pub fn extend_span(span: &TimeSpan, ratio: f64, duration: f64) -> TimeSpan {
    if ratio <= 0.0 {
        return span.clamp_to(duration);
    }
    let half = 0.5 * span.length() * (1.0 + ratio);
    let mid = span.midpoint();
    let start = (mid - half).max(0.0).min(span.start);
    let end = (mid + half).min(duration).max(span.end);
    TimeSpan { start, end }.clamp_to(duration)
}

/// Descending confidence; ties by earlier start, then earlier end.
pub(crate) fn by_confidence_desc(a: &ScoredSpan, b: &ScoredSpan) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then(a.span.start.total_cmp(&b.span.start))
        .then(a.span.end.total_cmp(&b.span.end))
}

/// Greedy non-maximum suppression. A candidate is dropped when its IoU with
/// an already kept span exceeds `iou_threshold`.
pub fn nms(spans: &[ScoredSpan], iou_threshold: f64) -> Vec<ScoredSpan> {
    let mut sorted = spans.to_vec();
    sorted.sort_by(by_confidence_desc);
    let mut kept: Vec<ScoredSpan> = Vec::with_capacity(sorted.len());
    for cand in sorted {
        if kept.iter().all(|k| iou(&k.span, &cand.span) <= iou_threshold) {
            kept.push(cand);
        }
    }
    kept
}
