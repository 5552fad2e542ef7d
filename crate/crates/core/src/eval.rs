//! Grounded-QA metrics: per-sample scoring and dataset aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::span::{iop, iou, TimeSpan};

/// IoP a top-1 span needs for the answer to count as grounded.
pub const GQA_IOP_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub qid: String,
    pub qa_correct: bool,
    pub top1_iou: f64,
    pub top1_iop: f64,
    pub gqa_correct: bool,
}

/// Recall thresholds for each overlap family.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds {
    pub iou: Vec<f64>,
    pub iop: Vec<f64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            iou: vec![0.3, 0.5, 0.7],
            iop: vec![0.3, 0.5],
        }
    }
}

/// Dataset-level metrics in percent. QA and IoP fields are absent for
/// moment-retrieval reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_qa: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acc_gqa: Option<f64>,
    pub m_iou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m_iop: Option<f64>,
    pub r_iou: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_iop: Option<BTreeMap<String, f64>>,
}

fn threshold_key(t: f64) -> String {
    format!("{t}")
}

/// Scores the top-1 predicted span against every ground-truth span and keeps
/// the best overlap.
pub fn score_sample(
    qid: &str,
    pred_answer: Option<usize>,
    pred_spans: &[TimeSpan],
    gt_answer: Option<usize>,
    gt_spans: &[TimeSpan],
) -> SampleScore {
    let qa_correct = matches!((pred_answer, gt_answer), (Some(p), Some(g)) if p == g);
    let (top1_iou, top1_iop) = match pred_spans.first() {
        Some(pred) => gt_spans.iter().fold((0.0f64, 0.0f64), |(bu, bp), gt| {
            let p = iop(pred, gt).unwrap_or(0.0);
            (bu.max(iou(pred, gt)), bp.max(p))
        }),
        None => (0.0, 0.0),
    };
    SampleScore {
        qid: qid.to_string(),
        qa_correct,
        top1_iou,
        top1_iop,
        gqa_correct: qa_correct && top1_iop >= GQA_IOP_THRESHOLD,
    }
}

fn percent(count: usize, n: usize) -> f64 {
    100.0 * count as f64 / n as f64
}

fn mean_percent(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    100.0 * values.sum::<f64>() / n as f64
}

fn recalls(values: &[f64], thresholds: &[f64]) -> BTreeMap<String, f64> {
    thresholds
        .iter()
        .map(|&t| (threshold_key(t), percent(values.iter().filter(|&&v| v >= t).count(), values.len())))
        .collect()
}

/// Full grounded-QA report.
pub fn aggregate(samples: &[SampleScore], thresholds: &Thresholds) -> Result<MetricReport> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    let ious: Vec<f64> = samples.iter().map(|s| s.top1_iou).collect();
    let iops: Vec<f64> = samples.iter().map(|s| s.top1_iop).collect();
    Ok(MetricReport {
        n,
        acc_qa: Some(percent(samples.iter().filter(|s| s.qa_correct).count(), n)),
        acc_gqa: Some(percent(samples.iter().filter(|s| s.gqa_correct).count(), n)),
        m_iou: mean_percent(ious.iter().copied(), n),
        m_iop: Some(mean_percent(iops.iter().copied(), n)),
        r_iou: recalls(&ious, &thresholds.iou),
        r_iop: Some(recalls(&iops, &thresholds.iop)),
    })
}

/// IoU-only report for moment retrieval.
pub fn evaluate_mr(samples: &[SampleScore], iou_thresholds: &[f64]) -> Result<MetricReport> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    let ious: Vec<f64> = samples.iter().map(|s| s.top1_iou).collect();
    Ok(MetricReport {
        n,
        acc_qa: None,
        acc_gqa: None,
        m_iou: mean_percent(ious.iter().copied(), n),
        m_iop: None,
        r_iou: recalls(&ious, iou_thresholds),
        r_iop: None,
    })
}

impl MetricReport {
    /// Fixed-width table with one decimal per value.
    pub fn to_table(&self) -> String {
        let mut cols: Vec<(String, f64)> = Vec::new();
        for (k, v) in &self.r_iou {
            cols.push((format!("IoU R@{k}"), *v));
        }
        cols.push(("mIoU".into(), self.m_iou));
        if let Some(r) = &self.r_iop {
            for (k, v) in r {
                cols.push((format!("IoP R@{k}"), *v));
            }
        }
        if let Some(v) = self.m_iop {
            cols.push(("mIoP".into(), v));
        }
        if let Some(v) = self.acc_qa {
            cols.push(("Acc@QA".into(), v));
        }
        if let Some(v) = self.acc_gqa {
            cols.push(("Acc@GQA".into(), v));
        }
        let mut out = String::new();
        let _ = write!(out, "{:>6}", "n");
        for (name, _) in &cols {
            let _ = write!(out, " {name:>10}");
        }
        out.push('\n');
        let _ = write!(out, "{:>6}", self.n);
        for (_, v) in &cols {
            let _ = write!(out, " {v:>10.1}");
        }
        out.push('\n');
        out
    }
}
