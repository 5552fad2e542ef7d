//! Scripted backend keyed by request content. Unkeyed requests fail with
//! [`Error::FixtureMissing`]; nothing is fabricated.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    AgentBackend, AnswerRequest, AnswerResponse, CallContext, GqaRequest, GqaResponse, GroundRequest,
    GroundResponse, VerifyRequest, VerifyResponse, WireSpan,
};
use crate::error::{Error, Result};

/// A fixture value, or a scripted transport failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scripted<T> {
    Fail { error: String },
    Ok(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundFixture {
    pub video: String,
    pub query: String,
    #[serde(flatten)]
    pub result: Scripted<GroundResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerFixture {
    pub video: String,
    pub question: String,
    #[serde(flatten)]
    pub result: Scripted<AnswerResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GqaFixture {
    pub video: String,
    pub question: String,
    #[serde(flatten)]
    pub result: Scripted<GqaResponse>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyFixture {
    pub video: String,
    pub query: String,
    pub span: [f64; 2],
    #[serde(flatten)]
    pub result: Scripted<VerifyResponse>,
}

/// On-disk fixture document for the mock backend.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MockFixtures {
    #[serde(default)]
    pub ground: Vec<GroundFixture>,
    #[serde(default)]
    pub answer: Vec<AnswerFixture>,
    #[serde(default)]
    pub gqa: Vec<GqaFixture>,
    #[serde(default)]
    pub verify: Vec<VerifyFixture>,
}

impl MockFixtures {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn span_key(span: [f64; 2]) -> (u64, u64) {
    (span[0].to_bits(), span[1].to_bits())
}

#[derive(Debug, Default, Clone)]
pub struct MockBackend {
    ground: HashMap<(String, String), Scripted<GroundResponse>>,
    answer: HashMap<(String, String), Scripted<AnswerResponse>>,
    gqa: HashMap<(String, String), Scripted<GqaResponse>>,
    verify: HashMap<(String, String, (u64, u64)), Scripted<VerifyResponse>>,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_fixtures(fixtures: MockFixtures) -> Self {
        let mut mock = Self::new();
        for f in fixtures.ground {
            mock.ground.insert((f.video, f.query), f.result);
        }
        for f in fixtures.answer {
            mock.answer.insert((f.video, f.question), f.result);
        }
        for f in fixtures.gqa {
            mock.gqa.insert((f.video, f.question), f.result);
        }
        for f in fixtures.verify {
            mock.verify.insert((f.video, f.query, span_key(f.span)), f.result);
        }
        mock
    }

    pub fn with_ground(mut self, video: &str, query: &str, spans: Vec<WireSpan>) -> Self {
        self.ground
            .insert((video.into(), query.into()), Scripted::Ok(GroundResponse { spans }));
        self
    }

    pub fn with_ground_failure(mut self, video: &str, query: &str, error: &str) -> Self {
        self.ground
            .insert((video.into(), query.into()), Scripted::Fail { error: error.into() });
        self
    }

    pub fn with_answer(mut self, video: &str, question: &str, option_index: usize) -> Self {
        self.answer.insert(
            (video.into(), question.into()),
            Scripted::Ok(AnswerResponse { option_index }),
        );
        self
    }

    pub fn with_gqa(mut self, video: &str, question: &str, option_index: usize, spans: Vec<WireSpan>) -> Self {
        self.gqa.insert(
            (video.into(), question.into()),
            Scripted::Ok(GqaResponse { option_index, spans }),
        );
        self
    }

    pub fn with_gqa_failure(mut self, video: &str, question: &str, error: &str) -> Self {
        self.gqa
            .insert((video.into(), question.into()), Scripted::Fail { error: error.into() });
        self
    }

    pub fn with_verify(mut self, video: &str, query: &str, span: [f64; 2], logit_yes: f64, logit_no: f64) -> Self {
        self.verify.insert(
            (video.into(), query.into(), span_key(span)),
            Scripted::Ok(VerifyResponse { logit_yes, logit_no }),
        );
        self
    }

    pub fn with_verify_failure(mut self, video: &str, query: &str, span: [f64; 2], error: &str) -> Self {
        self.verify.insert(
            (video.into(), query.into(), span_key(span)),
            Scripted::Fail { error: error.into() },
        );
        self
    }
}

fn resolve<T: Clone>(found: Option<&Scripted<T>>, ctx: &CallContext<'_>, key: String) -> Result<T> {
    match found {
        Some(Scripted::Ok(v)) => Ok(v.clone()),
        Some(Scripted::Fail { error }) => Err(Error::Transport {
            endpoint: ctx.role.endpoint().into(),
            message: error.clone(),
            retryable: false,
        }),
        None => Err(Error::FixtureMissing {
            role: ctx.role.as_str(),
            key,
        }),
    }
}

impl AgentBackend for MockBackend {
    fn ground(&self, ctx: &CallContext<'_>, req: &GroundRequest) -> Result<GroundResponse> {
        let key = (req.video.clone(), req.query.clone());
        resolve(self.ground.get(&key), ctx, format!("{key:?}"))
    }

    fn answer(&self, ctx: &CallContext<'_>, req: &AnswerRequest) -> Result<AnswerResponse> {
        let key = (req.video.clone(), req.question.clone());
        resolve(self.answer.get(&key), ctx, format!("{key:?}"))
    }

    fn gqa(&self, ctx: &CallContext<'_>, req: &GqaRequest) -> Result<GqaResponse> {
        let key = (req.video.clone(), req.question.clone());
        resolve(self.gqa.get(&key), ctx, format!("{key:?}"))
    }

    fn verify(&self, ctx: &CallContext<'_>, req: &VerifyRequest) -> Result<VerifyResponse> {
        let key = (req.video.clone(), req.query.clone(), span_key(req.span));
        resolve(
            self.verify.get(&key),
            ctx,
            format!("({:?}, {:?}, {:?})", req.video, req.query, req.span),
        )
    }
}
