//! Run configuration: a flat TOML document where every key has a default.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::agents::{DecodeLimits, GroundingParams, PromptTemplates, RetryPolicy, Role, RoleLimits, SpanJitter, SyntheticNoise};
use crate::error::{Error, Result};
use crate::fuse::{FusionParams, KMeansInit, KMeansParams, VotingMode};
use crate::paths::{PathId, PathParams, TaskKind};

/// Environment variable overriding `backend_url`.
pub const BACKEND_URL_ENV: &str = "GVQA_BACKEND_URL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Synthetic,
    Mock,
    Remote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendKind,
    pub backend_url: Option<String>,
    pub mock_fixtures: Option<PathBuf>,
    /// Synthetic span jitter as a fraction of the ground-truth length.
    pub synthetic_span_jitter: f64,
    pub synthetic_conf_noise: f64,
    pub synthetic_answer_acc: f64,
    pub synthetic_candidates: usize,

    pub task: TaskKind,
    pub paths: Vec<u8>,
    pub reflection: bool,

    pub top_n: usize,
    pub nms_iou: f64,
    pub extend_ratio: f64,
    pub clip_k: usize,

    pub fusion_k: usize,
    pub report_k: usize,
    pub voting: VotingMode,
    pub kmeans_max_iters: usize,
    pub kmeans_eps: f64,
    /// `maximin`, `top_weight` or `plus_plus`.
    pub kmeans_init: String,
    pub kmeans_seed: u64,

    pub grounder_max_tokens: u32,
    pub grounder_max_frames: u32,
    pub grounder_fps: f64,
    pub answerer_max_tokens: u32,
    pub answerer_max_frames: u32,
    pub answerer_fps: f64,
    pub gqa_max_tokens: u32,
    pub gqa_max_frames: u32,
    pub gqa_fps: f64,
    pub verifier_max_tokens: u32,
    pub verifier_max_frames: u32,
    pub verifier_fps: f64,

    pub grounder_prompt: Option<String>,
    pub answerer_prompt: Option<String>,
    pub gqa_prompt: Option<String>,
    pub verifier_prompt: Option<String>,

    pub retries: u32,
    pub backoff_base_ms: u64,
    pub backoff_factor: f64,
    pub request_timeout_s: f64,
    pub record_timeout_s: f64,

    pub seed: u64,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let limits = RoleLimits::default();
        let retry = RetryPolicy::default();
        let grounding = GroundingParams::default();
        let km = KMeansParams::default();
        Self {
            backend: BackendKind::Synthetic,
            backend_url: None,
            mock_fixtures: None,
            synthetic_span_jitter: 0.15,
            synthetic_conf_noise: 0.1,
            synthetic_answer_acc: 0.75,
            synthetic_candidates: 8,
            task: TaskKind::GroundedQa,
            paths: vec![1, 2, 3],
            reflection: true,
            top_n: grounding.top_n,
            nms_iou: grounding.nms_iou,
            extend_ratio: 0.5,
            clip_k: PathParams::default().clip_k,
            fusion_k: km.k,
            report_k: FusionParams::default().report_k,
            voting: VotingMode::SpanLevel,
            kmeans_max_iters: km.max_iters,
            kmeans_eps: km.eps,
            kmeans_init: "maximin".into(),
            kmeans_seed: 0,
            grounder_max_tokens: limits.grounder.max_tokens,
            grounder_max_frames: limits.grounder.max_frames,
            grounder_fps: limits.grounder.fps,
            answerer_max_tokens: limits.answerer.max_tokens,
            answerer_max_frames: limits.answerer.max_frames,
            answerer_fps: limits.answerer.fps,
            gqa_max_tokens: limits.gqa.max_tokens,
            gqa_max_frames: limits.gqa.max_frames,
            gqa_fps: limits.gqa.fps,
            verifier_max_tokens: limits.verifier.max_tokens,
            verifier_max_frames: limits.verifier.max_frames,
            verifier_fps: limits.verifier.fps,
            grounder_prompt: None,
            answerer_prompt: None,
            gqa_prompt: None,
            verifier_prompt: None,
            retries: retry.retries,
            backoff_base_ms: retry.backoff_base.as_millis() as u64,
            backoff_factor: retry.backoff_factor,
            request_timeout_s: retry.request_timeout.as_secs_f64(),
            record_timeout_s: 120.0,
            seed: 0,
            workers: 1,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Overrides one key. `value` is read as a TOML value, falling back to a
    /// bare string, so `top_n=3`, `voting=path_level` and `paths=[1,3]` all work.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        *self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("{key}={value}: {}", e.message())))?;
        Ok(())
    }

    /// Applies the backend URL environment override.
    pub fn apply_env(&mut self) {
        if let Ok(url) = std::env::var(BACKEND_URL_ENV) {
            if !url.is_empty() {
                self.backend_url = Some(url);
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        self.enabled_paths()?;
        if self.top_n == 0 {
            return fail("top_n must be at least 1");
        }
        if !(self.nms_iou > 0.0 && self.nms_iou <= 1.0) {
            return fail("nms_iou must lie in (0, 1]");
        }
        if !(self.extend_ratio >= 0.0 && self.extend_ratio.is_finite()) {
            return fail("extend_ratio must be non-negative");
        }
        if self.clip_k == 0 || self.fusion_k == 0 || self.report_k == 0 {
            return fail("clip_k, fusion_k and report_k must be at least 1");
        }
        if !(self.kmeans_eps >= 0.0) {
            return fail("kmeans_eps must be non-negative");
        }
        if self.workers == 0 {
            return fail("workers must be at least 1");
        }
        if !(self.record_timeout_s > 0.0 && self.request_timeout_s > 0.0) {
            return fail("timeouts must be positive");
        }
        if self.backend == BackendKind::Remote && self.backend_url.is_none() {
            return fail("remote backend needs backend_url");
        }
        if self.backend == BackendKind::Mock && self.mock_fixtures.is_none() {
            return fail("mock backend needs mock_fixtures");
        }
        self.kmeans_init()?;
        self.synthetic_noise().validate()?;
        let limits = self.role_limits();
        for role in [Role::Grounder, Role::Answerer, Role::Gqa, Role::Verifier] {
            limits.for_role(role).validate(role)?;
        }
        Ok(())
    }

    pub fn enabled_paths(&self) -> Result<Vec<PathId>> {
        if self.paths.is_empty() {
            return Err(Error::Config("at least one path must be enabled".into()));
        }
        let mut out = self
            .paths
            .iter()
            .map(|&p| PathId::try_from(p).map_err(Error::Config))
            .collect::<Result<Vec<_>>>()?;
        out.sort();
        out.dedup();
        Ok(out)
    }

    pub fn kmeans_init(&self) -> Result<KMeansInit> {
        match self.kmeans_init.as_str() {
            "maximin" => Ok(KMeansInit::Maximin),
            "top_weight" => Ok(KMeansInit::TopWeight),
            "plus_plus" => Ok(KMeansInit::PlusPlus { seed: self.kmeans_seed }),
            other => Err(Error::Config(format!("unknown kmeans_init {other:?}"))),
        }
    }

    pub fn fusion_params(&self) -> Result<FusionParams> {
        Ok(FusionParams {
            kmeans: KMeansParams {
                k: self.fusion_k,
                max_iters: self.kmeans_max_iters,
                eps: self.kmeans_eps,
                init: self.kmeans_init()?,
            },
            report_k: self.report_k,
            voting: self.voting,
        })
    }

    pub fn grounding(&self) -> GroundingParams {
        GroundingParams {
            top_n: self.top_n,
            nms_iou: self.nms_iou,
        }
    }

    pub fn role_limits(&self) -> RoleLimits {
        RoleLimits {
            grounder: DecodeLimits::new(self.grounder_max_tokens, self.grounder_max_frames, self.grounder_fps),
            answerer: DecodeLimits::new(self.answerer_max_tokens, self.answerer_max_frames, self.answerer_fps),
            gqa: DecodeLimits::new(self.gqa_max_tokens, self.gqa_max_frames, self.gqa_fps),
            verifier: DecodeLimits::new(self.verifier_max_tokens, self.verifier_max_frames, self.verifier_fps),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            retries: self.retries,
            backoff_base: Duration::from_millis(self.backoff_base_ms),
            backoff_factor: self.backoff_factor,
            request_timeout: Duration::from_secs_f64(self.request_timeout_s),
        }
    }

    pub fn prompts(&self) -> PromptTemplates {
        let d = PromptTemplates::default();
        PromptTemplates {
            grounder: self.grounder_prompt.clone().or(d.grounder),
            answerer: self.answerer_prompt.clone().or(d.answerer),
            gqa: self.gqa_prompt.clone().or(d.gqa),
            verifier: self.verifier_prompt.clone().or(d.verifier),
        }
    }

    pub fn synthetic_noise(&self) -> SyntheticNoise {
        SyntheticNoise {
            span_jitter: SpanJitter::RelativeToGt(self.synthetic_span_jitter),
            conf_noise_sigma: self.synthetic_conf_noise,
            answer_accuracy: self.synthetic_answer_acc,
        }
    }

    pub fn record_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.record_timeout_s)
    }
}
