//! Per-question orchestration (controller, reflection, fusion) and the
//! ordered worker pool that runs it over a dataset.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use crate::agents::{AgentSuite, ReplayBackend, Role, Session};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fuse::{fuse, FusionParams};
use crate::paths::{run_controller, PathId, PathParams, QaItem, TaskKind};
use crate::records::{DatasetRecord, PathDiagnostic, Prediction, TranscriptRecord};
use crate::reflect::{verify_path, without_verification, VerifiedPathOutput};
use crate::span::VideoMeta;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineSettings {
    pub task: TaskKind,
    pub enabled: Vec<PathId>,
    pub reflection: bool,
    pub extend_ratio: f64,
    pub path_params: PathParams,
    pub fusion: FusionParams,
    pub record_timeout: Option<Duration>,
}

impl Default for PipelineSettings {
    fn default() -> Self {
        Self {
            task: TaskKind::GroundedQa,
            enabled: PathId::ALL.to_vec(),
            reflection: true,
            extend_ratio: 0.5,
            path_params: PathParams::default(),
            fusion: FusionParams::default(),
            record_timeout: None,
        }
    }
}

impl PipelineSettings {
    pub fn from_config(config: &RunConfig) -> Result<Self> {
        Ok(Self {
            task: config.task,
            enabled: config.enabled_paths()?,
            reflection: config.reflection,
            extend_ratio: config.extend_ratio,
            path_params: PathParams { clip_k: config.clip_k },
            fusion: config.fusion_params()?,
            record_timeout: Some(config.record_timeout()),
        })
    }
}

/// A question as seen by the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineInput {
    pub qid: String,
    pub video: VideoMeta,
    pub item: QaItem,
}

impl PipelineInput {
    pub fn from_record(record: &DatasetRecord) -> Result<Self> {
        Ok(Self {
            qid: record.qid.clone(),
            video: record.video_meta()?,
            item: QaItem {
                question: record.question.clone(),
                options: record.options.clone(),
            },
        })
    }
}

#[derive(Debug, Clone)]
pub struct QuestionOutcome {
    pub prediction: Prediction,
    pub transcript: Vec<TranscriptRecord>,
    pub verified: Vec<VerifiedPathOutput>,
    /// Set when a backend lacked a fixture or transcript entry.
    pub fixture_missing: bool,
}

impl QuestionOutcome {
    pub fn failed(&self) -> bool {
        self.prediction.error.is_some()
    }
}

fn weighted_single_path(path: &VerifiedPathOutput, report_k: usize) -> Vec<[f64; 3]> {
    let total: f64 = path.verified.iter().map(|v| v.p).sum();
    let n = path.verified.len() as f64;
    path.verified
        .iter()
        .take(report_k)
        .map(|v| {
            let w = if total > 0.0 { v.p / total } else { 1.0 / n };
            [v.span.start, v.span.end, w]
        })
        .collect()
}

/// Runs one question end to end.
pub fn process_question(agents: &AgentSuite, settings: &PipelineSettings, input: &PipelineInput) -> QuestionOutcome {
    let mut session = Session::new(input.qid.clone(), input.video.clone());
    let deadline = settings.record_timeout.map(|t| Instant::now() + t);
    if let Some(d) = deadline {
        session = session.with_deadline(d);
    }

    let controller = run_controller(
        agents,
        &session,
        &input.item,
        settings.task,
        &settings.enabled,
        settings.path_params,
    );

    let mut per_path: Vec<PathDiagnostic> = Vec::new();
    let mut verified: Vec<VerifiedPathOutput> = Vec::new();
    let mut error: Option<String> = None;
    match controller {
        Ok(out) => {
            verified = out
                .outputs
                .iter()
                .map(|o| {
                    if settings.reflection {
                        verify_path(agents, &session, o, settings.extend_ratio)
                    } else {
                        without_verification(o)
                    }
                })
                .collect();
            for v in &verified {
                per_path.push(PathDiagnostic {
                    path: v.path,
                    answer: v.answer.as_ref().map(|a| a.option_index),
                    best_span: v.best_span.map(|s| s.as_pair()),
                    path_confidence: v.path_confidence,
                    error: None,
                });
            }
            for (path, message) in out.failures {
                per_path.push(PathDiagnostic {
                    path,
                    answer: None,
                    best_span: None,
                    path_confidence: 0.0,
                    error: Some(message),
                });
            }
            per_path.sort_by_key(|d| d.path);
        }
        Err(e) => error = Some(e.to_string()),
    }
    if error.is_none() && deadline.is_some_and(|d| Instant::now() >= d) {
        error = Some(Error::DeadlineExceeded.to_string());
    }

    let prediction = if let Some(message) = error {
        tracing::warn!(qid = %input.qid, error = %message, "question failed");
        Prediction {
            qid: input.qid.clone(),
            answer: None,
            spans: Vec::new(),
            per_path: Some(per_path),
            error: Some(message),
        }
    } else if verified.len() == 1 {
        let only = &verified[0];
        Prediction {
            qid: input.qid.clone(),
            answer: only.answer.as_ref().map(|a| a.option_index),
            spans: weighted_single_path(only, settings.fusion.report_k),
            per_path: Some(per_path),
            error: None,
        }
    } else {
        let fused = fuse(&verified, &settings.fusion);
        Prediction {
            qid: input.qid.clone(),
            answer: fused.answer.map(|a| a.option_index),
            spans: fused
                .spans
                .iter()
                .map(|f| [f.span.start, f.span.end, f.weight])
                .collect(),
            per_path: Some(per_path),
            error: None,
        }
    };

    QuestionOutcome {
        prediction,
        transcript: session.take_transcript(),
        verified,
        fixture_missing: session.fixture_missing(),
    }
}

/// Runs `inputs` on a pool of `workers` threads. Outcomes come back in input
/// order whatever the completion order.
pub fn run_inputs<F>(inputs: &[PipelineInput], workers: usize, process: F) -> Vec<QuestionOutcome>
where
    F: Fn(&PipelineInput) -> QuestionOutcome + Sync,
{
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<QuestionOutcome>>> = Mutex::new(vec![None; inputs.len()]);
    thread::scope(|scope| {
        for _ in 0..workers.max(1).min(inputs.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= inputs.len() {
                    break;
                }
                let outcome = process(&inputs[i]);
                slots.lock().unwrap()[i] = Some(outcome);
            });
        }
    });
    slots
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every input processed"))
        .collect()
}

/// Runs every input through the full pipeline.
pub fn run_pipeline(
    agents: &AgentSuite,
    settings: &PipelineSettings,
    inputs: &[PipelineInput],
    workers: usize,
) -> Vec<QuestionOutcome> {
    run_inputs(inputs, workers, |input| process_question(agents, settings, input))
}

/// A question reconstructed from its transcript.
#[derive(Debug, Clone)]
pub struct ReplayQuestion {
    pub input: PipelineInput,
    pub task: TaskKind,
    pub paths: Vec<PathId>,
}

/// Groups transcript records by question (first-appearance order) and
/// rebuilds what the pipeline needs to re-run them.
pub fn reconstruct_questions(records: &[TranscriptRecord]) -> Result<Vec<ReplayQuestion>> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<&TranscriptRecord>> = HashMap::new();
    for r in records {
        let g = groups.entry(r.qid.clone()).or_insert_with(|| {
            order.push(r.qid.clone());
            Vec::new()
        });
        g.push(r);
    }
    let mut seen: BTreeSet<(String, PathId, Role, u32)> = BTreeSet::new();
    for r in records {
        if !seen.insert((r.qid.clone(), r.path, r.role, r.ordinal)) {
            return Err(Error::InvalidRecord {
                qid: r.qid.clone(),
                message: format!("duplicate transcript entry {}/{}#{}", r.path, r.role, r.ordinal),
            });
        }
    }

    let mut out = Vec::with_capacity(order.len());
    for qid in order {
        let group = &groups[&qid];
        let first = group[0];
        let str_field = |r: &TranscriptRecord, key: &str| r.request.get(key).and_then(|v| v.as_str()).map(str::to_string);
        let video = str_field(first, "video").unwrap_or_default();
        let has = |role: Role| group.iter().any(|r| r.role == role);
        let task = if has(Role::Gqa) || (has(Role::Answerer) && has(Role::Grounder)) {
            TaskKind::GroundedQa
        } else if has(Role::Answerer) {
            TaskKind::QaOnly
        } else {
            TaskKind::MomentRetrieval
        };
        let qa_source = group.iter().find(|r| matches!(r.role, Role::Answerer | Role::Gqa));
        let (question, options) = match qa_source {
            Some(r) => (
                str_field(r, "question").unwrap_or_default(),
                r.request
                    .get("options")
                    .cloned()
                    .map(serde_json::from_value::<Vec<String>>)
                    .transpose()?
                    .unwrap_or_default(),
            ),
            None => (
                group
                    .iter()
                    .find(|r| r.role == Role::Grounder)
                    .and_then(|r| str_field(r, "query"))
                    .unwrap_or_default(),
                Vec::new(),
            ),
        };
        let paths: Vec<PathId> = group.iter().map(|r| r.path).collect::<BTreeSet<_>>().into_iter().collect();
        out.push(ReplayQuestion {
            input: PipelineInput {
                qid: qid.clone(),
                video: VideoMeta::new(video, first.video_duration)?,
                item: QaItem { question, options },
            },
            task,
            paths,
        });
    }
    Ok(out)
}

/// Re-runs questions from recorded agent responses. Questions whose
/// transcript is incomplete are skipped and their qids returned.
pub fn replay(
    records: Vec<TranscriptRecord>,
    base: &AgentSuite,
    settings: &PipelineSettings,
    workers: usize,
) -> Result<(Vec<Prediction>, Vec<String>)> {
    let questions = reconstruct_questions(&records)?;
    let agents = base.with_backend(std::sync::Arc::new(ReplayBackend::new(records)));
    let inputs: Vec<PipelineInput> = questions.iter().map(|q| q.input.clone()).collect();
    let by_qid: HashMap<&str, &ReplayQuestion> = questions.iter().map(|q| (q.input.qid.as_str(), q)).collect();
    let outcomes = run_inputs(&inputs, workers, |input| {
        let q = by_qid[input.qid.as_str()];
        let s = PipelineSettings {
            task: q.task,
            enabled: q.paths.clone(),
            record_timeout: None,
            ..settings.clone()
        };
        process_question(&agents, &s, input)
    });
    let mut predictions = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        if o.fixture_missing {
            tracing::warn!(qid = %o.prediction.qid, "transcript incomplete, skipping question");
            skipped.push(o.prediction.qid);
        } else {
            predictions.push(o.prediction);
        }
    }
    Ok((predictions, skipped))
}
