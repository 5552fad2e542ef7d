//! JSON-over-HTTP client for remote model servers.

use std::thread;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use super::{
    AgentBackend, AnswerRequest, AnswerResponse, CallContext, GqaRequest, GqaResponse, GroundRequest,
    GroundResponse, Role, VerifyRequest, VerifyResponse,
};
use crate::error::{Error, Result};

pub const GROUNDER_PROMPT: &str = "You are acting as the grounder now. Given a video and a text query, your goal is to temporally localize the video moment described by the query. If the query is directly describing a moment, simply localize it according to its content. Otherwise, if the moment is described as 'before/after a pivotal event', you need to determine the actual event it refers to. The localized moment should only cover the target event. Now I give you the query: '{}'. Please think carefully and provide your response.";

pub const GQA_PROMPT: &str = "You are acting as the GQA Agent now.\nGiven a video and a multiple-choice question, you have two tasks:\n1) Trigger the video-moment retrieve pipeline to temporally localize the video moment described by the question by generating exactly <REG_TOKEN>.\n2) Choose the best answer from given options.\n\nQuestion: {}\n\nOptions:\n{}\n\nPlease reply exactly in this format:\n1) The relevant moment happens in <REG_TOKEN>\n2) Best choice: <Option>";

pub const VERIFIER_PROMPT: &str = "You are acting as the verifier now. You will be presented a text query describing a moment that potentially happens in the given video. Your task is to identify whether the video segment between <SEG_S_TOKEN> and <SEG_E_TOKEN> perfectly covers the moment. If the described moment can be seen in the video, please focus on verifying whether the moment starts at <SEG_S_TOKEN> and ends at <SEG_E_TOKEN>. Respond with 'Yes' if you think the moment boundaries are correct, otherwise 'No'. If the described moment cannot be seen in the video, respond with 'No' directly. Now I give you the query: '{}'. Please think carefully and respond with 'Yes' or 'No' directly.";

/// Prompt templates sent in the `prompt` field; `{}` placeholders are filled
/// in order. `None` omits the field for that role.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplates {
    pub grounder: Option<String>,
    pub answerer: Option<String>,
    pub gqa: Option<String>,
    pub verifier: Option<String>,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        Self {
            grounder: Some(GROUNDER_PROMPT.into()),
            answerer: None,
            gqa: Some(GQA_PROMPT.into()),
            verifier: Some(VERIFIER_PROMPT.into()),
        }
    }
}

fn fill(template: &str, args: &[&str]) -> String {
    let mut out = String::with_capacity(template.len());
    let mut args = args.iter();
    let mut rest = template;
    while let Some(pos) = rest.find("{}") {
        out.push_str(&rest[..pos]);
        out.push_str(args.next().copied().unwrap_or(""));
        rest = &rest[pos + 2..];
    }
    out.push_str(rest);
    out
}

fn format_options(options: &[String]) -> String {
    options
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let letter = char::from(b'A' + (i % 26) as u8);
            format!("({letter}) {o}")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub retries: u32,
    pub backoff_base: Duration,
    pub backoff_factor: f64,
    pub request_timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            retries: 3,
            backoff_base: Duration::from_millis(250),
            backoff_factor: 2.0,
            request_timeout: Duration::from_secs(30),
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (0-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        self.backoff_base.mul_f64(self.backoff_factor.powi(attempt as i32))
    }
}

pub struct RemoteBackend {
    base_url: String,
    agent: ureq::Agent,
    retry: RetryPolicy,
    prompts: PromptTemplates,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>, retry: RetryPolicy, prompts: PromptTemplates) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(retry.request_timeout).build();
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            agent,
            retry,
            prompts,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        role: Role,
        req: &Req,
        prompt: Option<String>,
    ) -> Result<Resp> {
        let mut body = serde_json::to_value(req)?;
        if let (Some(p), Value::Object(map)) = (prompt, &mut body) {
            map.insert("prompt".into(), Value::String(p));
        }
        let url = format!("{}{}", self.base_url, role.endpoint());
        let mut last_error = String::new();
        for attempt in 0..=self.retry.retries {
            if attempt > 0 {
                thread::sleep(self.retry.backoff(attempt - 1));
            }
            match self.agent.post(&url).send_json(&body) {
                Ok(resp) => match resp.into_string() {
                    Ok(text) => match serde_json::from_str::<Resp>(&text) {
                        Ok(parsed) => return Ok(parsed),
                        Err(e) => last_error = format!("malformed JSON: {e}"),
                    },
                    Err(e) => last_error = format!("reading body: {e}"),
                },
                Err(ureq::Error::Status(code, _)) => last_error = format!("HTTP {code}"),
                Err(e) => last_error = e.to_string(),
            }
            tracing::warn!(%url, attempt, error = %last_error, "agent request failed");
        }
        Err(Error::Transport {
            endpoint: role.endpoint().into(),
            message: format!("{last_error} after {} attempts", self.retry.retries + 1),
            retryable: true,
        })
    }
}

impl AgentBackend for RemoteBackend {
    fn ground(&self, _ctx: &CallContext<'_>, req: &GroundRequest) -> Result<GroundResponse> {
        let prompt = self.prompts.grounder.as_deref().map(|t| fill(t, &[&req.query]));
        self.post(Role::Grounder, req, prompt)
    }

    fn answer(&self, _ctx: &CallContext<'_>, req: &AnswerRequest) -> Result<AnswerResponse> {
        let options = format_options(&req.options);
        let prompt = self
            .prompts
            .answerer
            .as_deref()
            .map(|t| fill(t, &[&req.question, &options]));
        self.post(Role::Answerer, req, prompt)
    }

    fn gqa(&self, _ctx: &CallContext<'_>, req: &GqaRequest) -> Result<GqaResponse> {
        let options = format_options(&req.options);
        let prompt = self.prompts.gqa.as_deref().map(|t| fill(t, &[&req.question, &options]));
        self.post(Role::Gqa, req, prompt)
    }

    fn verify(&self, _ctx: &CallContext<'_>, req: &VerifyRequest) -> Result<VerifyResponse> {
        let prompt = self.prompts.verifier.as_deref().map(|t| fill(t, &[&req.query]));
        self.post(Role::Verifier, req, prompt)
    }
}
