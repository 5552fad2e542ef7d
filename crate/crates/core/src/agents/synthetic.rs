//! Seeded noisy agents built from ground truth.
//!
//! Each call draws from its own ChaCha stream keyed on
//! `(seed, qid, path, role, ordinal)`, so outputs never depend on thread
//! interleaving or process.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{
    normalize_answer, AgentBackend, AnswerRequest, AnswerResponse, CallContext, GqaRequest, GqaResponse,
    GroundRequest, GroundResponse, VerifyRequest, VerifyResponse, WireSpan,
};
use crate::error::{Error, Result};
use crate::span::{iou, TimeSpan};

/// Jitter scale for emitted span centres and lengths.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SpanJitter {
    /// Standard deviation in seconds.
    Seconds(f64),
    /// Standard deviation as a fraction of the ground-truth span length.
    RelativeToGt(f64),
}

impl SpanJitter {
    fn sigma(&self, gt: &TimeSpan) -> f64 {
        match *self {
            SpanJitter::Seconds(s) => s,
            SpanJitter::RelativeToGt(f) => f * gt.length(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticNoise {
    pub span_jitter: SpanJitter,
    pub conf_noise_sigma: f64,
    /// Probability that the answerer (and the GQA agent) picks the right option.
    pub answer_accuracy: f64,
}

impl SyntheticNoise {
    pub fn zero() -> Self {
        Self {
            span_jitter: SpanJitter::Seconds(0.0),
            conf_noise_sigma: 0.0,
            answer_accuracy: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let jitter = match self.span_jitter {
            SpanJitter::Seconds(s) | SpanJitter::RelativeToGt(s) => s,
        };
        if !(jitter >= 0.0 && jitter.is_finite()) {
            return Err(Error::Config("span jitter must be a finite non-negative number".into()));
        }
        if !(self.conf_noise_sigma >= 0.0 && self.conf_noise_sigma.is_finite()) {
            return Err(Error::Config("confidence noise must be a finite non-negative number".into()));
        }
        if !(0.0..=1.0).contains(&self.answer_accuracy) {
            return Err(Error::Config("answer accuracy must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// Ground truth for one question.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticItem {
    pub qid: String,
    pub duration: f64,
    pub gt_span: TimeSpan,
    pub answer: usize,
    pub options: Vec<String>,
}

pub struct SyntheticBackend {
    items: HashMap<String, SyntheticItem>,
    noise: SyntheticNoise,
    seed: u64,
    /// Raw candidates emitted per grounding call, before NMS.
    pub candidates: usize,
}

/// A query carrying a wrong option's text misleads the grounder: its jitter is
/// multiplied by this factor and its confidences by [`MISLED_CONFIDENCE`].
const MISLED_JITTER: f64 = 2.0;
const MISLED_CONFIDENCE: f64 = 0.5;
const LOGIT_EPS: f64 = 1e-9;

fn fnv1a(mut hash: u64, bytes: &[u8]) -> u64 {
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl SyntheticBackend {
    pub fn new(items: impl IntoIterator<Item = SyntheticItem>, noise: SyntheticNoise, seed: u64) -> Result<Self> {
        noise.validate()?;
        Ok(Self {
            items: items.into_iter().map(|i| (i.qid.clone(), i)).collect(),
            noise,
            seed,
            candidates: 8,
        })
    }

    fn item(&self, ctx: &CallContext<'_>) -> Result<&SyntheticItem> {
        self.items.get(ctx.qid).ok_or_else(|| Error::FixtureMissing {
            role: ctx.role.as_str(),
            key: format!("synthetic ground truth for {}", ctx.qid),
        })
    }

    fn rng(&self, ctx: &CallContext<'_>) -> ChaCha8Rng {
        let mut h = fnv1a(0xcbf2_9ce4_8422_2325, &self.seed.to_le_bytes());
        h = fnv1a(h, ctx.qid.as_bytes());
        h = fnv1a(h, &[0xff, ctx.path as u8]);
        h = fnv1a(h, ctx.role.as_str().as_bytes());
        h = fnv1a(h, &ctx.ordinal.to_le_bytes());
        ChaCha8Rng::seed_from_u64(h)
    }

    fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
        } else {
            0.0
        }
    }

    fn emit_spans(&self, item: &SyntheticItem, rng: &mut ChaCha8Rng, misled: bool) -> Vec<WireSpan> {
        let gt = item.gt_span;
        let mut sigma = self.noise.span_jitter.sigma(&gt);
        let mut conf_scale = 1.0;
        if misled {
            sigma *= MISLED_JITTER;
            conf_scale = MISLED_CONFIDENCE;
        }
        let min_len = (0.01 * item.duration).min(gt.length()).max(1e-3);
        (0..self.candidates)
            .map(|_| {
                let dc = Self::gaussian(rng, sigma);
                let dl = Self::gaussian(rng, sigma);
                let mut start = gt.start + dc - 0.5 * dl;
                let mut end = gt.end + dc + 0.5 * dl;
                if end - start < min_len {
                    let mid = 0.5 * (start + end);
                    start = mid - 0.5 * min_len;
                    end = mid + 0.5 * min_len;
                }
                let span = TimeSpan { start, end }.clamp_to(item.duration);
                let noise = Self::gaussian(rng, self.noise.conf_noise_sigma);
                let confidence = ((iou(&span, &gt) + noise) * conf_scale).clamp(0.0, 1.0);
                WireSpan {
                    start: span.start,
                    end: span.end,
                    confidence,
                }
            })
            .collect()
    }

    fn pick_option(&self, item: &SyntheticItem, rng: &mut ChaCha8Rng) -> usize {
        let draw: f64 = rng.gen();
        if draw < self.noise.answer_accuracy || item.options.len() < 2 {
            return item.answer;
        }
        let wrong = rng.gen_range(0..item.options.len() - 1);
        if wrong >= item.answer {
            wrong + 1
        } else {
            wrong
        }
    }

    /// True when the query ends with a wrong option's normalised text.
    fn is_misled(item: &SyntheticItem, query: &str) -> bool {
        let q = query.to_lowercase();
        let correct = item.options.get(item.answer).map(|o| normalize_answer(o));
        if let Some(c) = &correct {
            if !c.is_empty() && q.ends_with(c.as_str()) {
                return false;
            }
        }
        item.options.iter().enumerate().any(|(i, o)| {
            let n = normalize_answer(o);
            i != item.answer && !n.is_empty() && q.ends_with(n.as_str())
        })
    }
}

impl AgentBackend for SyntheticBackend {
    fn ground(&self, ctx: &CallContext<'_>, req: &GroundRequest) -> Result<GroundResponse> {
        let item = self.item(ctx)?;
        let mut rng = self.rng(ctx);
        let misled = Self::is_misled(item, &req.query);
        Ok(GroundResponse {
            spans: self.emit_spans(item, &mut rng, misled),
        })
    }

    fn answer(&self, ctx: &CallContext<'_>, _req: &AnswerRequest) -> Result<AnswerResponse> {
        let item = self.item(ctx)?;
        let mut rng = self.rng(ctx);
        Ok(AnswerResponse {
            option_index: self.pick_option(item, &mut rng),
        })
    }

    fn gqa(&self, ctx: &CallContext<'_>, _req: &GqaRequest) -> Result<GqaResponse> {
        let item = self.item(ctx)?;
        let mut rng = self.rng(ctx);
        let option_index = self.pick_option(item, &mut rng);
        let spans = self.emit_spans(item, &mut rng, false);
        Ok(GqaResponse { option_index, spans })
    }

    fn verify(&self, ctx: &CallContext<'_>, req: &VerifyRequest) -> Result<VerifyResponse> {
        let item = self.item(ctx)?;
        let mut rng = self.rng(ctx);
        let span = TimeSpan {
            start: req.span[0],
            end: req.span[1],
        };
        let target = (iou(&span, &item.gt_span) + Self::gaussian(&mut rng, self.noise.conf_noise_sigma))
            .clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
        Ok(VerifyResponse {
            logit_yes: (target / (1.0 - target)).ln(),
            logit_no: 0.0,
        })
    }
}
