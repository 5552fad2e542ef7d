//! The three reasoning paths and the task controller.

use std::fmt;
use std::thread;

use serde::{Deserialize, Serialize};

use crate::agents::{build_answer_augmented_query, build_ground_query, AgentSuite, AnswerChoice, Session};
use crate::error::{Error, Result};
use crate::span::{ScoredSpan, TimeSpan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PathId {
    /// Localize, then answer.
    GroundFirst = 1,
    /// Answer, then ground with the answer folded into the query.
    AnswerFirst = 2,
    /// Answer and evidence from a single GQA call.
    Joint = 3,
}

impl PathId {
    pub const ALL: [PathId; 3] = [PathId::GroundFirst, PathId::AnswerFirst, PathId::Joint];
}

impl TryFrom<u8> for PathId {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(PathId::GroundFirst),
            2 => Ok(PathId::AnswerFirst),
            3 => Ok(PathId::Joint),
            other => Err(format!("unknown path id {other}")),
        }
    }
}

impl From<PathId> for u8 {
    fn from(p: PathId) -> u8 {
        p as u8
    }
}

impl fmt::Display for PathId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", *self as u8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "gqa")]
    GroundedQa,
    #[serde(rename = "qa")]
    QaOnly,
    #[serde(rename = "mr")]
    MomentRetrieval,
}

impl std::str::FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gqa" => Ok(TaskKind::GroundedQa),
            "qa" => Ok(TaskKind::QaOnly),
            "mr" => Ok(TaskKind::MomentRetrieval),
            other => Err(Error::Config(format!("unknown task kind {other:?}"))),
        }
    }
}

/// What the paths see of a question.
#[derive(Debug, Clone, PartialEq)]
pub struct QaItem {
    pub question: String,
    pub options: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathOutput {
    pub path: PathId,
    pub answer: Option<AnswerChoice>,
    /// Grounder spans, confidence descending.
    pub spans: Vec<ScoredSpan>,
    pub query_used: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathParams {
    /// Number of top grounded spans the Path-1 answerer watches.
    pub clip_k: usize,
}

impl Default for PathParams {
    fn default() -> Self {
        Self { clip_k: 1 }
    }
}

/// Hull of the top `k` spans; `None` when there are none.
fn answer_clip(spans: &[ScoredSpan], k: usize) -> Option<TimeSpan> {
    let top = &spans[..spans.len().min(k.max(1))];
    let first = top.first()?;
    Some(top.iter().skip(1).fold(first.span, |acc, s| TimeSpan {
        start: acc.start.min(s.span.start),
        end: acc.end.max(s.span.end),
    }))
}

pub fn run_path1(agents: &AgentSuite, session: &Session, item: &QaItem, clip_k: usize) -> Result<PathOutput> {
    let path = PathId::GroundFirst;
    let query = build_ground_query(&item.question);
    let spans = agents.ground(session, path, &query)?;
    let clip = answer_clip(&spans, clip_k);
    let answer = agents.answer(session, path, &item.question, &item.options, clip)?;
    Ok(PathOutput {
        path,
        answer: Some(answer),
        spans,
        query_used: query,
    })
}

pub fn run_path2(agents: &AgentSuite, session: &Session, item: &QaItem) -> Result<PathOutput> {
    let path = PathId::AnswerFirst;
    let answer = agents.answer(session, path, &item.question, &item.options, None)?;
    let query = build_answer_augmented_query(&item.question, &answer);
    let spans = agents.ground(session, path, &query)?;
    Ok(PathOutput {
        path,
        answer: Some(answer),
        spans,
        query_used: query,
    })
}

pub fn run_path3(agents: &AgentSuite, session: &Session, item: &QaItem) -> Result<PathOutput> {
    let path = PathId::Joint;
    let (answer, spans) = agents.gqa(session, path, &item.question, &item.options)?;
    Ok(PathOutput {
        path,
        answer: Some(answer),
        spans,
        query_used: item.question.clone(),
    })
}

fn run_qa_only(agents: &AgentSuite, session: &Session, item: &QaItem) -> Result<PathOutput> {
    let path = PathId::AnswerFirst;
    let answer = agents.answer(session, path, &item.question, &item.options, None)?;
    Ok(PathOutput {
        path,
        answer: Some(answer),
        spans: Vec::new(),
        query_used: item.question.clone(),
    })
}

fn run_moment_retrieval(agents: &AgentSuite, session: &Session, item: &QaItem) -> Result<PathOutput> {
    let path = PathId::GroundFirst;
    let spans = agents.ground(session, path, &item.question)?;
    Ok(PathOutput {
        path,
        answer: None,
        spans,
        query_used: item.question.clone(),
    })
}

/// Surviving path outputs in canonical path order, plus the failures.
#[derive(Debug, Default)]
pub struct ControllerOutput {
    pub outputs: Vec<PathOutput>,
    pub failures: Vec<(PathId, String)>,
}

/// Routes a task to its paths and runs them independently. Grounded QA runs
/// every enabled path concurrently; QA-only and moment retrieval use a single
/// agent.
pub fn run_controller(
    agents: &AgentSuite,
    session: &Session,
    item: &QaItem,
    task: TaskKind,
    enabled: &[PathId],
    params: PathParams,
) -> Result<ControllerOutput> {
    let mut results: Vec<(PathId, Result<PathOutput>)> = match task {
        TaskKind::QaOnly => vec![(PathId::AnswerFirst, run_qa_only(agents, session, item))],
        TaskKind::MomentRetrieval => vec![(PathId::GroundFirst, run_moment_retrieval(agents, session, item))],
        TaskKind::GroundedQa => {
            if enabled.is_empty() {
                return Err(Error::Config("no reasoning paths enabled".into()));
            }
            let mut paths = enabled.to_vec();
            paths.sort();
            paths.dedup();
            thread::scope(|scope| {
                let handles: Vec<_> = paths
                    .iter()
                    .map(|&p| {
                        let handle = scope.spawn(move || match p {
                            PathId::GroundFirst => run_path1(agents, session, item, params.clip_k),
                            PathId::AnswerFirst => run_path2(agents, session, item),
                            PathId::Joint => run_path3(agents, session, item),
                        });
                        (p, handle)
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|(p, h)| (p, h.join().expect("path thread panicked")))
                    .collect()
            })
        }
    };
    results.sort_by_key(|(p, _)| *p);

    let mut out = ControllerOutput::default();
    for (path, result) in results {
        match result {
            Ok(o) => out.outputs.push(o),
            Err(e) => {
                tracing::warn!(qid = %session.qid, %path, error = %e, "path failed");
                out.failures.push((path, e.to_string()));
            }
        }
    }
    if out.outputs.is_empty() {
        return Err(Error::AllPathsFailed);
    }
    Ok(out)
}
