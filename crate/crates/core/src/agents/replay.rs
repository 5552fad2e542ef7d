//! Serves recorded transcript responses back to the pipeline.

use std::collections::HashMap;

use serde::de::DeserializeOwned;

use super::{
    AgentBackend, AnswerRequest, AnswerResponse, CallContext, GqaRequest, GqaResponse, GroundRequest,
    GroundResponse, Role, VerifyRequest, VerifyResponse,
};
use crate::error::{Error, Result};
use crate::paths::PathId;
use crate::records::TranscriptRecord;

type Key = (String, PathId, Role, u32);

/// Looks calls up by `(qid, path, role, ordinal)`. A recorded failure is
/// replayed as a transport error; an absent record is a missing fixture.
pub struct ReplayBackend {
    records: HashMap<Key, TranscriptRecord>,
}

impl ReplayBackend {
    pub fn new(records: impl IntoIterator<Item = TranscriptRecord>) -> Self {
        Self {
            records: records
                .into_iter()
                .map(|r| ((r.qid.clone(), r.path, r.role, r.ordinal), r))
                .collect(),
        }
    }

    fn lookup<T: DeserializeOwned>(&self, ctx: &CallContext<'_>) -> Result<T> {
        let key = (ctx.qid.to_string(), ctx.path, ctx.role, ctx.ordinal);
        let record = self.records.get(&key).ok_or_else(|| Error::FixtureMissing {
            role: ctx.role.as_str(),
            key: format!("transcript {}/{}/{}#{}", ctx.qid, ctx.path, ctx.role, ctx.ordinal),
        })?;
        match (&record.response, &record.error) {
            (Some(resp), _) => Ok(serde_json::from_value(resp.clone())?),
            (None, error) => Err(Error::Replayed(
                error.clone().unwrap_or_else(|| "recorded failure".into()),
            )),
        }
    }
}

impl AgentBackend for ReplayBackend {
    fn ground(&self, ctx: &CallContext<'_>, _req: &GroundRequest) -> Result<GroundResponse> {
        self.lookup(ctx)
    }

    fn answer(&self, ctx: &CallContext<'_>, _req: &AnswerRequest) -> Result<AnswerResponse> {
        self.lookup(ctx)
    }

    fn gqa(&self, ctx: &CallContext<'_>, _req: &GqaRequest) -> Result<GqaResponse> {
        self.lookup(ctx)
    }

    fn verify(&self, ctx: &CallContext<'_>, _req: &VerifyRequest) -> Result<VerifyResponse> {
        self.lookup(ctx)
    }
}
