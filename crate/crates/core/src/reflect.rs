//! Single-path verification and product-of-experts re-scoring.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::agents::{AgentSuite, AnswerChoice, Session};
use crate::paths::{PathId, PathOutput};
use crate::span::{extend_span, ScoredSpan, TimeSpan};

/// A candidate span with grounder confidence `c`, verifier consistency `v`
/// and their product `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifiedSpan {
    pub span: TimeSpan,
    pub c: f64,
    pub v: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifiedPathOutput {
    pub path: PathId,
    pub answer: Option<AnswerChoice>,
    /// Sorted by `p` descending.
    pub verified: Vec<VerifiedSpan>,
    pub best_span: Option<TimeSpan>,
    pub path_confidence: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn consistency_score(logit_yes: f64, logit_no: f64) -> f64 {
    sigmoid(logit_yes - logit_no)
}

/// `p` descending, then higher `c`, then earlier start.
fn by_poe_desc(a: &VerifiedSpan, b: &VerifiedSpan) -> Ordering {
    b.p.total_cmp(&a.p)
        .then(b.c.total_cmp(&a.c))
        .then(a.span.start.total_cmp(&b.span.start))
        .then(a.span.end.total_cmp(&b.span.end))
}

/// Combines grounder confidences with verifier scores and re-ranks.
/// `scores[k]` belongs to `spans[k]`.
pub fn rescore(path: PathId, answer: Option<AnswerChoice>, spans: &[ScoredSpan], scores: &[f64]) -> VerifiedPathOutput {
    debug_assert_eq!(spans.len(), scores.len());
    let mut verified: Vec<VerifiedSpan> = spans
        .iter()
        .zip(scores)
        .map(|(s, &v)| {
            let c = s.confidence;
            VerifiedSpan {
                span: s.span,
                c,
                v,
                p: c * v,
            }
        })
        .collect();
    verified.sort_by(by_poe_desc);
    let (best_span, path_confidence) = match verified.first() {
        Some(top) => (Some(top.span), top.p),
        None => (None, 0.0),
    };
    VerifiedPathOutput {
        path,
        answer,
        verified,
        best_span,
        path_confidence,
    }
}

/// Treats every span as fully consistent (`v = 1`), so `p = c`.
pub fn without_verification(output: &PathOutput) -> VerifiedPathOutput {
    let ones = vec![1.0; output.spans.len()];
    rescore(output.path, output.answer.clone(), &output.spans, &ones)
}

/// Verifies every span of a path on a zoomed clip and re-ranks by `c * v`.
/// A failed verifier call scores that span `v = 0`.
pub fn verify_path(
    agents: &AgentSuite,
    session: &Session,
    output: &PathOutput,
    extend_ratio: f64,
) -> VerifiedPathOutput {
    let duration = session.video.duration;
    let scores: Vec<f64> = output
        .spans
        .iter()
        .map(|s| {
            let clip = extend_span(&s.span, extend_ratio, duration);
            match agents.verify(session, output.path, &output.query_used, s.span, clip) {
                Ok((yes, no)) => consistency_score(yes, no),
                Err(e) => {
                    tracing::warn!(qid = %session.qid, path = %output.path, error = %e, "verifier call failed");
                    0.0
                }
            }
        })
        .collect();
    rescore(output.path, output.answer.clone(), &output.spans, &scores)
}
