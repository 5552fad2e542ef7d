//! Agent roles, the backend abstraction and the call layer that applies span
//! hygiene and records transcripts.

mod mock;
mod query;
mod remote;
mod replay;
mod synthetic;

use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::paths::PathId;
use crate::records::TranscriptRecord;
use crate::span::{nms, ScoredSpan, TimeSpan, VideoMeta};

pub use mock::{MockBackend, MockFixtures};
pub use query::{build_answer_augmented_query, build_ground_query, normalize_answer};
pub use remote::{PromptTemplates, RemoteBackend, RetryPolicy};
pub use replay::ReplayBackend;
pub use synthetic::{SpanJitter, SyntheticBackend, SyntheticItem, SyntheticNoise};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Grounder,
    Answerer,
    Gqa,
    Verifier,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Grounder => "grounder",
            Role::Answerer => "answerer",
            Role::Gqa => "gqa",
            Role::Verifier => "verifier",
        }
    }

    pub fn endpoint(self) -> &'static str {
        match self {
            Role::Grounder => "/ground",
            Role::Answerer => "/answer",
            Role::Gqa => "/gqa",
            Role::Verifier => "/verify",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A selected multiple-choice option.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerChoice {
    pub option_index: usize,
    pub option_text: String,
}

impl AnswerChoice {
    pub fn from_options(option_index: usize, options: &[String]) -> Option<Self> {
        options.get(option_index).map(|text| Self {
            option_index,
            option_text: text.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeLimits {
    pub max_tokens: u32,
    pub max_frames: u32,
    pub fps: f64,
}

impl DecodeLimits {
    pub const fn new(max_tokens: u32, max_frames: u32, fps: f64) -> Self {
        Self {
            max_tokens,
            max_frames,
            fps,
        }
    }

    pub fn validate(&self, role: Role) -> Result<()> {
        if self.max_tokens == 0 || self.max_frames == 0 || !(self.fps > 0.0) {
            return Err(Error::Config(format!("{role} decode limits must be positive")));
        }
        Ok(())
    }
}

/// Per-role decode limits sent with every request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoleLimits {
    pub grounder: DecodeLimits,
    pub answerer: DecodeLimits,
    pub gqa: DecodeLimits,
    pub verifier: DecodeLimits,
}

impl Default for RoleLimits {
    fn default() -> Self {
        Self {
            grounder: DecodeLimits::new(64, 150, 1.0),
            gqa: DecodeLimits::new(64, 150, 1.0),
            verifier: DecodeLimits::new(64, 64, 2.0),
            answerer: DecodeLimits::new(256, 32, 2.0),
        }
    }
}

impl RoleLimits {
    pub fn for_role(&self, role: Role) -> DecodeLimits {
        match role {
            Role::Grounder => self.grounder,
            Role::Answerer => self.answerer,
            Role::Gqa => self.gqa,
            Role::Verifier => self.verifier,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireSpan {
    pub start: f64,
    pub end: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundRequest {
    pub video: String,
    pub query: String,
    #[serde(flatten)]
    pub limits: DecodeLimits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundResponse {
    pub spans: Vec<WireSpan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerRequest {
    pub video: String,
    pub question: String,
    pub options: Vec<String>,
    pub clip: Option<[f64; 2]>,
    #[serde(flatten)]
    pub limits: DecodeLimits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerResponse {
    pub option_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GqaRequest {
    pub video: String,
    pub question: String,
    pub options: Vec<String>,
    #[serde(flatten)]
    pub limits: DecodeLimits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GqaResponse {
    pub option_index: usize,
    pub spans: Vec<WireSpan>,
}

/// `span` carries the candidate boundaries being judged; `clip` is the
/// zoomed window the verifier decodes around them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyRequest {
    pub video: String,
    pub query: String,
    pub span: [f64; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip: Option<[f64; 2]>,
    #[serde(flatten)]
    pub limits: DecodeLimits,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyResponse {
    pub logit_yes: f64,
    pub logit_no: f64,
}

/// Identifies one agent call within a question. Backends that need
/// reproducible randomness key it on this, never on arrival order.
#[derive(Debug, Clone, Copy)]
pub struct CallContext<'a> {
    pub qid: &'a str,
    pub path: PathId,
    pub role: Role,
    pub ordinal: u32,
}

/// A model server exposing the four agent roles.
pub trait AgentBackend: Send + Sync {
    fn ground(&self, ctx: &CallContext<'_>, req: &GroundRequest) -> Result<GroundResponse>;
    fn answer(&self, ctx: &CallContext<'_>, req: &AnswerRequest) -> Result<AnswerResponse>;
    fn gqa(&self, ctx: &CallContext<'_>, req: &GqaRequest) -> Result<GqaResponse>;
    fn verify(&self, ctx: &CallContext<'_>, req: &VerifyRequest) -> Result<VerifyResponse>;
}

/// Per-question call state: ordinals, transcript and an optional deadline.
pub struct Session {
    pub qid: String,
    pub video: VideoMeta,
    deadline: Option<Instant>,
    ordinals: Mutex<HashMap<(PathId, Role), u32>>,
    transcript: Mutex<Vec<TranscriptRecord>>,
    fixture_missing: AtomicBool,
}

impl Session {
    pub fn new(qid: impl Into<String>, video: VideoMeta) -> Self {
        Self {
            qid: qid.into(),
            video,
            deadline: None,
            ordinals: Mutex::new(HashMap::new()),
            transcript: Mutex::new(Vec::new()),
            fixture_missing: AtomicBool::new(false),
        }
    }

    pub fn with_deadline(mut self, deadline: Instant) -> Self {
        self.deadline = Some(deadline);
        self
    }

    fn next_ordinal(&self, path: PathId, role: Role) -> u32 {
        let mut map = self.ordinals.lock().unwrap();
        let slot = map.entry((path, role)).or_insert(0);
        let ord = *slot;
        *slot += 1;
        ord
    }

    /// Whether any backend call reported a missing fixture or transcript entry.
    pub fn fixture_missing(&self) -> bool {
        self.fixture_missing.load(Ordering::Relaxed)
    }

    /// Transcript records sorted by (path, role, ordinal).
    pub fn take_transcript(&self) -> Vec<TranscriptRecord> {
        let mut records = std::mem::take(&mut *self.transcript.lock().unwrap());
        records.sort_by_key(|a| (a.path, a.role, a.ordinal));
        records
    }
}

/// Grounder post-processing parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundingParams {
    pub top_n: usize,
    pub nms_iou: f64,
}

impl Default for GroundingParams {
    fn default() -> Self {
        Self {
            top_n: 5,
            nms_iou: 0.75,
        }
    }
}

/// Clamp to the video, drop degenerate spans, NMS, then keep the top `top_n`.
pub fn postprocess_spans(raw: &[WireSpan], duration: f64, params: GroundingParams) -> Vec<ScoredSpan> {
    let cleaned: Vec<ScoredSpan> = raw
        .iter()
        .filter(|w| w.start.is_finite() && w.end.is_finite() && w.confidence.is_finite())
        .filter_map(|w| {
            let span = TimeSpan {
                start: w.start.min(w.end),
                end: w.end.max(w.start),
            }
            .clamp_to(duration);
            (span.length() > 0.0).then(|| ScoredSpan::new(span, w.confidence.clamp(0.0, 1.0)))
        })
        .collect();
    if cleaned.len() < raw.len() {
        tracing::debug!(dropped = raw.len() - cleaned.len(), "dropped degenerate grounder spans");
    }
    let mut kept = nms(&cleaned, params.nms_iou);
    kept.truncate(params.top_n);
    kept
}

/// The agent call layer shared by all reasoning paths.
#[derive(Clone)]
pub struct AgentSuite {
    backend: Arc<dyn AgentBackend>,
    pub limits: RoleLimits,
    pub grounding: GroundingParams,
}

impl AgentSuite {
    pub fn new(backend: Arc<dyn AgentBackend>) -> Self {
        Self {
            backend,
            limits: RoleLimits::default(),
            grounding: GroundingParams::default(),
        }
    }

    /// Same settings over a different backend.
    pub fn with_backend(&self, backend: Arc<dyn AgentBackend>) -> Self {
        Self {
            backend,
            limits: self.limits,
            grounding: self.grounding,
        }
    }

    pub fn with_limits(mut self, limits: RoleLimits) -> Self {
        self.limits = limits;
        self
    }

    pub fn with_grounding(mut self, grounding: GroundingParams) -> Self {
        self.grounding = grounding;
        self
    }

    fn call<Req, Resp>(
        &self,
        session: &Session,
        path: PathId,
        role: Role,
        req: &Req,
        f: impl FnOnce(&dyn AgentBackend, &CallContext<'_>, &Req) -> Result<Resp>,
    ) -> Result<Resp>
    where
        Req: Serialize,
        Resp: Serialize,
    {
        if let Some(deadline) = session.deadline {
            if Instant::now() >= deadline {
                return Err(Error::DeadlineExceeded);
            }
        }
        let ordinal = session.next_ordinal(path, role);
        let ctx = CallContext {
            qid: &session.qid,
            path,
            role,
            ordinal,
        };
        let started = Instant::now();
        let result = f(self.backend.as_ref(), &ctx, req);
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;

        let (response, error) = match &result {
            Ok(resp) => (Some(serde_json::to_value(resp)?), None),
            Err(e) => {
                if matches!(e, Error::FixtureMissing { .. }) {
                    session.fixture_missing.store(true, Ordering::Relaxed);
                }
                (None, Some(e.to_string()))
            }
        };
        session.transcript.lock().unwrap().push(TranscriptRecord {
            qid: session.qid.clone(),
            path,
            role,
            ordinal,
            video_duration: session.video.duration,
            request: serde_json::to_value(req)?,
            response,
            error,
            latency_ms,
        });
        result
    }

    /// Grounds `query` and returns at most `top_n` cleaned spans, confidence descending.
    pub fn ground(&self, session: &Session, path: PathId, query: &str) -> Result<Vec<ScoredSpan>> {
        let req = GroundRequest {
            video: session.video.video_id.clone(),
            query: query.to_string(),
            limits: self.limits.grounder,
        };
        let resp = self.call(session, path, Role::Grounder, &req, |b, ctx, r| b.ground(ctx, r))?;
        Ok(postprocess_spans(&resp.spans, session.video.duration, self.grounding))
    }

    pub fn answer(
        &self,
        session: &Session,
        path: PathId,
        question: &str,
        options: &[String],
        clip: Option<TimeSpan>,
    ) -> Result<AnswerChoice> {
        let req = AnswerRequest {
            video: session.video.video_id.clone(),
            question: question.to_string(),
            options: options.to_vec(),
            clip: clip.map(|c| c.as_pair()),
            limits: self.limits.answerer,
        };
        let resp = self.call(session, path, Role::Answerer, &req, |b, ctx, r| b.answer(ctx, r))?;
        choice_or_malformed(resp.option_index, options, Role::Answerer)
    }

    pub fn gqa(
        &self,
        session: &Session,
        path: PathId,
        question: &str,
        options: &[String],
    ) -> Result<(AnswerChoice, Vec<ScoredSpan>)> {
        let req = GqaRequest {
            video: session.video.video_id.clone(),
            question: question.to_string(),
            options: options.to_vec(),
            limits: self.limits.gqa,
        };
        let resp = self.call(session, path, Role::Gqa, &req, |b, ctx, r| b.gqa(ctx, r))?;
        let choice = choice_or_malformed(resp.option_index, options, Role::Gqa)?;
        let spans = postprocess_spans(&resp.spans, session.video.duration, self.grounding);
        Ok((choice, spans))
    }

    /// Returns `(logit_yes, logit_no)` for the marked span.
    pub fn verify(
        &self,
        session: &Session,
        path: PathId,
        query: &str,
        span: TimeSpan,
        clip: TimeSpan,
    ) -> Result<(f64, f64)> {
        let req = VerifyRequest {
            video: session.video.video_id.clone(),
            query: query.to_string(),
            span: span.as_pair(),
            clip: Some(clip.as_pair()),
            limits: self.limits.verifier,
        };
        let resp = self.call(session, path, Role::Verifier, &req, |b, ctx, r| b.verify(ctx, r))?;
        if !(resp.logit_yes.is_finite() && resp.logit_no.is_finite()) {
            return Err(Error::MalformedResponse {
                endpoint: Role::Verifier.endpoint().into(),
                message: "non-finite logits".into(),
            });
        }
        Ok((resp.logit_yes, resp.logit_no))
    }
}

fn choice_or_malformed(index: usize, options: &[String], role: Role) -> Result<AnswerChoice> {
    AnswerChoice::from_options(index, options).ok_or_else(|| Error::MalformedResponse {
        endpoint: role.endpoint().into(),
        message: format!("option_index {index} out of range for {} options", options.len()),
    })
}
