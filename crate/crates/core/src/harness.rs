//! File-level entry points behind the CLI subcommands.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentBackend, AgentSuite, MockBackend, MockFixtures, RemoteBackend, SyntheticBackend, SyntheticItem, SyntheticNoise};
use crate::config::{BackendKind, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{aggregate, evaluate_mr, score_sample, MetricReport, SampleScore, Thresholds};
use crate::paths::TaskKind;
use crate::pipeline::{replay, run_pipeline, PipelineInput, PipelineSettings};
use crate::records::{read_jsonl, write_jsonl, DatasetRecord, Prediction, TranscriptRecord};
use crate::span::TimeSpan;

/// Synthetic ground truth taken from dataset annotations. Records without an
/// answer or span fall back to option 0 and the whole video.
pub fn synthetic_items(records: &[DatasetRecord]) -> Vec<SyntheticItem> {
    records
        .iter()
        .map(|r| SyntheticItem {
            qid: r.qid.clone(),
            duration: r.duration,
            gt_span: r
                .gt_spans()
                .into_iter()
                .find(|s| s.length() > 0.0)
                .unwrap_or(TimeSpan {
                    start: 0.0,
                    end: r.duration,
                }),
            answer: r.answer.unwrap_or(0),
            options: r.options.clone(),
        })
        .collect()
}

pub fn build_backend(config: &RunConfig, records: &[DatasetRecord]) -> Result<Arc<dyn AgentBackend>> {
    Ok(match config.backend {
        BackendKind::Synthetic => {
            let mut b = SyntheticBackend::new(synthetic_items(records), config.synthetic_noise(), config.seed)?;
            b.candidates = config.synthetic_candidates.max(1);
            Arc::new(b)
        }
        BackendKind::Mock => {
            let path = config
                .mock_fixtures
                .as_ref()
                .ok_or_else(|| Error::Config("mock backend needs mock_fixtures".into()))?;
            Arc::new(MockBackend::from_fixtures(MockFixtures::load(path)?))
        }
        BackendKind::Remote => {
            let url = config
                .backend_url
                .clone()
                .ok_or_else(|| Error::Config("remote backend needs backend_url".into()))?;
            Arc::new(RemoteBackend::new(url, config.retry_policy(), config.prompts()))
        }
    })
}

pub fn agent_suite(config: &RunConfig, backend: Arc<dyn AgentBackend>) -> AgentSuite {
    AgentSuite::new(backend)
        .with_limits(config.role_limits())
        .with_grounding(config.grounding())
}

fn check_unique_qids<'a>(qids: impl Iterator<Item = &'a str>) -> Result<()> {
    let mut seen = HashSet::new();
    for q in qids {
        if !seen.insert(q) {
            return Err(Error::DuplicateQid(q.to_string()));
        }
    }
    Ok(())
}

fn has_ground_truth(records: &[DatasetRecord], task: TaskKind) -> bool {
    !records.is_empty()
        && match task {
            TaskKind::MomentRetrieval => records.iter().all(|r| !r.spans.is_empty()),
            _ => records.iter().all(|r| r.answer.is_some()),
        }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub n: usize,
    pub failed: usize,
    pub report: Option<MetricReport>,
}

/// In-memory run over parsed records; returns predictions and transcripts in
/// input order.
pub fn run_records(
    config: &RunConfig,
    records: &[DatasetRecord],
    backend: Arc<dyn AgentBackend>,
) -> Result<(Vec<Prediction>, Vec<TranscriptRecord>)> {
    check_unique_qids(records.iter().map(|r| r.qid.as_str()))?;
    for r in records {
        r.validate(config.task)?;
    }
    let settings = PipelineSettings::from_config(config)?;
    let agents = agent_suite(config, backend);
    let inputs = records.iter().map(PipelineInput::from_record).collect::<Result<Vec<_>>>()?;
    let outcomes = run_pipeline(&agents, &settings, &inputs, config.workers);
    if !outcomes.is_empty() && outcomes.iter().all(|o| o.failed()) {
        let first = outcomes[0].prediction.error.clone().unwrap_or_default();
        return Err(Error::Transport {
            endpoint: "backend".into(),
            message: format!("every record failed; first error: {first}"),
            retryable: false,
        });
    }
    let mut predictions = Vec::with_capacity(outcomes.len());
    let mut transcripts = Vec::new();
    for o in outcomes {
        predictions.push(o.prediction);
        transcripts.extend(o.transcript);
    }
    Ok((predictions, transcripts))
}

/// `run`: dataset in; predictions, transcripts and (with ground truth) a
/// report out.
pub fn run(
    config: &RunConfig,
    dataset: &Path,
    predictions_out: &Path,
    transcripts_out: &Path,
    report_out: Option<&Path>,
) -> Result<RunSummary> {
    config.validate()?;
    let records: Vec<DatasetRecord> = read_jsonl(dataset)?;
    let backend = build_backend(config, &records)?;
    let (predictions, transcripts) = run_records(config, &records, backend)?;
    write_jsonl(predictions_out, &predictions)?;
    write_jsonl(transcripts_out, &transcripts)?;
    let failed = predictions.iter().filter(|p| p.error.is_some()).count();
    let report = if has_ground_truth(&records, config.task) {
        let r = score_predictions(&records, &predictions, &Thresholds::default(), config.task)?;
        if let Some(path) = report_out {
            write_report(path, &r)?;
        }
        Some(r)
    } else {
        None
    };
    Ok(RunSummary {
        n: predictions.len(),
        failed,
        report,
    })
}

#[derive(Debug, Clone)]
pub struct ReplaySummary {
    pub n: usize,
    pub skipped: Vec<String>,
}

/// `fuse`: recompute predictions from transcripts without calling agents.
pub fn fuse_replay(config: &RunConfig, transcripts: &Path, predictions_out: &Path) -> Result<ReplaySummary> {
    let records: Vec<TranscriptRecord> = read_jsonl(transcripts)?;
    let settings = PipelineSettings::from_config(config)?;
    let base = agent_suite(config, Arc::new(MockBackend::new()));
    let (predictions, skipped) = replay(records, &base, &settings, config.workers)?;
    write_jsonl(predictions_out, &predictions)?;
    Ok(ReplaySummary {
        n: predictions.len(),
        skipped,
    })
}

/// Scores predictions against a dataset. Missing predictions score zero.
pub fn score_predictions(
    records: &[DatasetRecord],
    predictions: &[Prediction],
    thresholds: &Thresholds,
    task: TaskKind,
) -> Result<MetricReport> {
    check_unique_qids(records.iter().map(|r| r.qid.as_str()))?;
    check_unique_qids(predictions.iter().map(|p| p.qid.as_str()))?;
    let by_qid: HashMap<&str, &Prediction> = predictions.iter().map(|p| (p.qid.as_str(), p)).collect();
    let samples: Vec<SampleScore> = records
        .iter()
        .map(|r| {
            let (answer, spans) = match by_qid.get(r.qid.as_str()) {
                Some(p) => (p.answer, p.ranked_spans()),
                None => (None, Vec::new()),
            };
            score_sample(&r.qid, answer, &spans, r.answer, &r.gt_spans())
        })
        .collect();
    match task {
        TaskKind::MomentRetrieval => evaluate_mr(&samples, &thresholds.iou),
        _ => aggregate(&samples, thresholds),
    }
}

pub fn write_report(path: &Path, report: &MetricReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text)?;
    let table = path.with_extension("txt");
    std::fs::write(table, report.to_table())?;
    Ok(())
}

/// `eval`: the task is moment retrieval when no record carries an answer.
pub fn evaluate(dataset: &Path, predictions: &Path, report_out: &Path, thresholds: &Thresholds) -> Result<MetricReport> {
    let records: Vec<DatasetRecord> = read_jsonl(dataset)?;
    let preds: Vec<Prediction> = read_jsonl(predictions)?;
    let task = if records.iter().any(|r| r.answer.is_some()) {
        TaskKind::GroundedQa
    } else {
        TaskKind::MomentRetrieval
    };
    let report = score_predictions(&records, &preds, thresholds, task)?;
    write_report(report_out, &report)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Simulation study

const VERBS: &[&str] = &[
    "open", "lift", "throw", "wash", "cut", "push", "carry", "drop", "paint", "fold", "kick", "shake",
];
const NOUNS: &[&str] = &[
    "door", "box", "ball", "plate", "rope", "chair", "bag", "cup", "board", "towel", "bottle", "lamp",
];

/// Generates a synthetic grounded-QA dataset with one evidence span and five
/// options per question.
pub fn synthetic_dataset(n: usize, seed: u64) -> Vec<DatasetRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a_0000_0000);
    (0..n)
        .map(|i| {
            let duration: f64 = rng.gen_range(30.0..180.0);
            let len = duration * rng.gen_range(0.1..0.4);
            let start = rng.gen_range(0.0..duration - len);
            let noun = NOUNS[rng.gen_range(0..NOUNS.len())];
            let mut verbs: Vec<&str> = VERBS.to_vec();
            let mut options = Vec::with_capacity(5);
            for _ in 0..5 {
                let v = verbs.remove(rng.gen_range(0..verbs.len()));
                options.push(format!("{v} the {noun}"));
            }
            DatasetRecord {
                qid: format!("s{seed}-q{i:04}"),
                video: format!("s{seed}-video{i:04}"),
                duration,
                question: format!("what did the person do with the {noun} in scene {i}?"),
                options,
                answer: Some(rng.gen_range(0..5)),
                spans: vec![[start, start + len]],
            }
        })
        .collect()
}

/// One row of the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationCell {
    pub paths: &'static [u8],
    pub reflection: bool,
}

impl AblationCell {
    pub fn label(&self) -> String {
        let name = match self.paths {
            [1] => "Single path-1 (G->A)".to_string(),
            [2] => "Single path-2 (A->G)".to_string(),
            [3] => "Single path-3 (GQA)".to_string(),
            _ => "Multi-path".to_string(),
        };
        format!("{name} {}", if self.reflection { "w/ reflection" } else { "w/o reflection" })
    }
}

/// The seven ablation rows: each single path without and with reflection,
/// then all paths with reflection.
pub const ABLATION_CELLS: [AblationCell; 7] = [
    AblationCell { paths: &[1], reflection: false },
    AblationCell { paths: &[1], reflection: true },
    AblationCell { paths: &[2], reflection: false },
    AblationCell { paths: &[2], reflection: true },
    AblationCell { paths: &[3], reflection: false },
    AblationCell { paths: &[3], reflection: true },
    AblationCell { paths: &[1, 2, 3], reflection: true },
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationNoise {
    /// Fraction of the ground-truth length.
    pub span_jitter: f64,
    pub conf_noise: f64,
    pub answer_acc: f64,
}

impl Default for SimulationNoise {
    fn default() -> Self {
        Self {
            span_jitter: 0.15,
            conf_noise: 0.1,
            answer_acc: 0.75,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimulationSpec {
    pub n_questions: usize,
    pub seeds: Vec<u64>,
    pub noise: SimulationNoise,
    pub workers: usize,
    pub base: RunConfig,
}

impl SimulationSpec {
    pub fn new(n_questions: usize, seeds: Vec<u64>, noise: SimulationNoise) -> Self {
        Self {
            n_questions,
            seeds,
            noise,
            workers: 1,
            base: RunConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub r_iou_05: f64,
    pub m_iou: f64,
    pub r_iop_05: f64,
    pub m_iop: f64,
    pub acc_qa: f64,
    pub acc_gqa: f64,
}

impl CellSummary {
    fn from_report(r: &MetricReport) -> Self {
        Self {
            r_iou_05: r.r_iou.get("0.5").copied().unwrap_or(0.0),
            m_iou: r.m_iou,
            r_iop_05: r.r_iop.as_ref().and_then(|m| m.get("0.5").copied()).unwrap_or(0.0),
            m_iop: r.m_iop.unwrap_or(0.0),
            acc_qa: r.acc_qa.unwrap_or(0.0),
            acc_gqa: r.acc_gqa.unwrap_or(0.0),
        }
    }

    fn mean(rows: &[CellSummary]) -> Self {
        let n = rows.len().max(1) as f64;
        let avg = |f: fn(&CellSummary) -> f64| rows.iter().map(f).sum::<f64>() / n;
        Self {
            r_iou_05: avg(|c| c.r_iou_05),
            m_iou: avg(|c| c.m_iou),
            r_iop_05: avg(|c| c.r_iop_05),
            m_iop: avg(|c| c.m_iop),
            acc_qa: avg(|c| c.acc_qa),
            acc_gqa: avg(|c| c.acc_gqa),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub label: String,
    pub paths: Vec<u8>,
    pub reflection: bool,
    pub per_seed: Vec<CellSummary>,
    pub mean: CellSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub n_questions: usize,
    pub seeds: Vec<u64>,
    pub span_jitter: f64,
    pub conf_noise: f64,
    pub answer_acc: f64,
    pub cells: Vec<CellReport>,
}

impl SimulationReport {
    /// Ablation table of seed-averaged metrics.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<36} {:>9} {:>7} {:>9} {:>7} {:>7} {:>8}\n",
            "Reasoning path", "IoU R@.5", "mIoU", "IoP R@.5", "mIoP", "Acc@QA", "Acc@GQA"
        );
        for c in &self.cells {
            let m = &c.mean;
            out.push_str(&format!(
                "{:<36} {:>9.1} {:>7.1} {:>9.1} {:>7.1} {:>7.1} {:>8.1}\n",
                c.label, m.r_iou_05, m.m_iou, m.r_iop_05, m.m_iop, m.acc_qa, m.acc_gqa
            ));
        }
        out
    }
}

/// Runs every ablation cell over every seed on fresh synthetic data.
pub fn simulate(spec: &SimulationSpec) -> Result<SimulationReport> {
    let noise = SyntheticNoise {
        span_jitter: crate::agents::SpanJitter::RelativeToGt(spec.noise.span_jitter),
        conf_noise_sigma: spec.noise.conf_noise,
        answer_accuracy: spec.noise.answer_acc,
    };
    noise.validate()?;
    let mut per_cell: Vec<Vec<CellSummary>> = vec![Vec::new(); ABLATION_CELLS.len()];
    for &seed in &spec.seeds {
        let records = synthetic_dataset(spec.n_questions, seed);
        let backend: Arc<dyn AgentBackend> = Arc::new(SyntheticBackend::new(synthetic_items(&records), noise, seed)?);
        let inputs = records.iter().map(PipelineInput::from_record).collect::<Result<Vec<_>>>()?;
        for (ci, cell) in ABLATION_CELLS.iter().enumerate() {
            let mut config = spec.base.clone();
            config.paths = cell.paths.to_vec();
            config.reflection = cell.reflection;
            config.task = TaskKind::GroundedQa;
            let settings = PipelineSettings::from_config(&config)?;
            let agents = agent_suite(&config, backend.clone());
            let outcomes = run_pipeline(&agents, &settings, &inputs, spec.workers);
            let preds: Vec<Prediction> = outcomes.into_iter().map(|o| o.prediction).collect();
            let report = score_predictions(&records, &preds, &Thresholds::default(), TaskKind::GroundedQa)?;
            per_cell[ci].push(CellSummary::from_report(&report));
        }
    }
    let cells = ABLATION_CELLS
        .iter()
        .zip(per_cell)
        .map(|(cell, per_seed)| CellReport {
            label: cell.label(),
            paths: cell.paths.to_vec(),
            reflection: cell.reflection,
            mean: CellSummary::mean(&per_seed),
            per_seed,
        })
        .collect();
    Ok(SimulationReport {
        n_questions: spec.n_questions,
        seeds: spec.seeds.clone(),
        span_jitter: spec.noise.span_jitter,
        conf_noise: spec.noise.conf_noise,
        answer_acc: spec.noise.answer_acc,
        cells,
    })
}

pub fn write_simulation_report(path: &Path, report: &SimulationReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    std::fs::write(path, text)?;
    std::fs::write(path.with_extension("txt"), report.to_table())?;
    Ok(())
}
