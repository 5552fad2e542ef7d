//! Acceptance suite. Each criterion prints one `PASS`/`FAIL` line with the
//! measured quantity next to its tolerance; the process exits non-zero if any
//! criterion fails.
//!
//! Runs under `cargo test` as a plain binary (no libtest harness) so the
//! summary lines are always visible.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use gvqa_core::config::{BackendKind, RunConfig};
use gvqa_core::eval::{aggregate, score_sample, SampleScore, Thresholds};
use gvqa_core::fuse::{consolidate_answer, refine_boundaries, weighted_kmeans, weighted_objective, Cluster, KMeansInit};
use gvqa_core::harness::{self, SimulationNoise, SimulationSpec, ABLATION_CELLS};
use gvqa_core::reflect::rescore;
use gvqa_core::span::{iou, nms};
use gvqa_core::{AnswerChoice, DatasetRecord, KMeansParams, PathId, ScoredSpan, SpanPoint, TaskKind, TimeSpan, VotingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within(limit: Duration, elapsed: Duration) -> bool {
    elapsed < limit
}

// ---------------------------------------------------------------------------
// 1. Fusion oracle equivalence
// ---------------------------------------------------------------------------

/// Sum of weighted squared distances to each group's weighted mean.
fn partition_objective(points: &[SpanPoint], labels: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..k {
        let members: Vec<&SpanPoint> = points.iter().zip(labels).filter(|(_, &l)| l == j).map(|(p, _)| p).collect();
        let w: f64 = members.iter().map(|p| p.weight).sum();
        if members.is_empty() || w <= 0.0 {
            continue;
        }
        let c0 = members.iter().map(|p| p.weight * p.x[0]).sum::<f64>() / w;
        let c1 = members.iter().map(|p| p.weight * p.x[1]).sum::<f64>() / w;
        total += members
            .iter()
            .map(|p| p.weight * ((p.x[0] - c0).powi(2) + (p.x[1] - c1).powi(2)))
            .sum::<f64>();
    }
    total
}

/// Minimum objective over every assignment of points to at most `k` groups.
fn exhaustive_optimum(points: &[SpanPoint], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        best = best.min(partition_objective(points, &labels, k));
        let mut i = 0;
        while i < n {
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
        if i == n {
            return best;
        }
    }
}

/// `k` well-separated groups of spans: centres at least `gap` apart per
/// coordinate, members within `spread` of their centre.
fn separated_instance(rng: &mut ChaCha8Rng, k: usize, n: usize) -> Vec<SpanPoint> {
    let spread = rng.gen_range(0.1..2.0);
    let gap = 10.0 * 2.0 * spread * 2.0 + rng.gen_range(1.0..20.0);
    let centres: Vec<[f64; 2]> = (0..k)
        .map(|j| {
            let start = 5.0 + j as f64 * gap;
            [start, start + rng.gen_range(4.0 * spread..gap * 0.5)]
        })
        .collect();
    (0..n)
        .map(|i| {
            let c = centres[if i < k { i } else { rng.gen_range(0..k) }];
            let x = [
                c[0] + rng.gen_range(-spread..spread),
                c[1] + rng.gen_range(-spread..spread),
            ];
            SpanPoint::new(x, rng.gen_range(0.01..1.0))
        })
        .collect()
}

fn fused_objective(points: &[SpanPoint], k: usize) -> f64 {
    let params = KMeansParams {
        k,
        ..KMeansParams::default()
    };
    let km = weighted_kmeans(points, &params);
    let mut centers = Vec::with_capacity(km.centers.len());
    for (j, c) in km.centers.iter().enumerate() {
        let members: Vec<usize> = (0..points.len()).filter(|&i| km.assignment[i] == j).collect();
        if members.is_empty() {
            centers.push(*c);
            continue;
        }
        let cluster = Cluster {
            center: *c,
            total_weight: members.iter().map(|&i| points[i].weight).sum(),
            members,
        };
        let span = refine_boundaries(&cluster, points).expect("positive-weight cluster");
        centers.push(span.as_pair());
    }
    weighted_objective(points, &centers, &km.assignment)
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let instances = 250;
    let mut worst_gap: f64 = 0.0;
    for _ in 0..instances {
        let k = rng.gen_range(1..=3);
        let n = rng.gen_range(k..=8);
        let points = separated_instance(&mut rng, k, n);
        let ours = fused_objective(&points, k);
        let optimum = exhaustive_optimum(&points, k);
        worst_gap = worst_gap.max(ours - optimum);
    }
    let elapsed = started.elapsed();
    outcome(
        worst_gap <= 1e-9 && within(Duration::from_secs(10), elapsed),
        format!("{instances} instances, max excess over optimum {worst_gap:.3e} (tol 1e-9), {elapsed:.2?} (limit 10s)"),
    )
}

// ---------------------------------------------------------------------------
// 2. Lloyd monotonicity
// ---------------------------------------------------------------------------

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inits = [KMeansInit::Maximin, KMeansInit::TopWeight, KMeansInit::PlusPlus { seed: 7 }];
    let mut violations = 0;
    let mut steps = 0;
    for t in 0..1000 {
        let n = rng.gen_range(1..=40);
        let points: Vec<SpanPoint> = (0..n)
            .map(|_| {
                let s = rng.gen_range(0.0..200.0);
                SpanPoint::new([s, s + rng.gen_range(0.5..60.0)], rng.gen_range(0.0..1.0))
            })
            .collect();
        let params = KMeansParams {
            k: rng.gen_range(1..=6),
            max_iters: 50,
            eps: 0.0,
            init: inits[t % inits.len()],
        };
        let trace = weighted_kmeans(&points, &params).objective_trace;
        for w in trace.windows(2) {
            steps += 1;
            // Allow only floating-point noise relative to the objective.
            if w[1] > w[0] + 1e-12 * w[0].abs().max(1.0) {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("1000 instances, {steps} iterations, {violations} increases (allowed 0)"),
    )
}

// ---------------------------------------------------------------------------
// 3. Refinement gradient check
// ---------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.gen_range(1..=12);
        let base = rng.gen_range(0.0..150.0);
        let points: Vec<SpanPoint> = (0..n)
            .map(|_| {
                let s = base + rng.gen_range(0.0..10.0);
                SpanPoint::new([s, s + rng.gen_range(5.0..30.0)], rng.gen_range(0.01..1.0))
            })
            .collect();
        let cluster = Cluster {
            center: points[0].x,
            members: (0..n).collect(),
            total_weight: points.iter().map(|p| p.weight).sum(),
        };
        let c = refine_boundaries(&cluster, &points).unwrap().as_pair();
        let f = |c: [f64; 2]| -> f64 {
            points
                .iter()
                .map(|p| p.weight * ((p.x[0] - c[0]).powi(2) + (p.x[1] - c[1]).powi(2)))
                .sum()
        };
        let h = 1e-5;
        let g0 = (f([c[0] + h, c[1]]) - f([c[0] - h, c[1]])) / (2.0 * h);
        let g1 = (f([c[0], c[1] + h]) - f([c[0], c[1] - h])) / (2.0 * h);
        worst = worst.max(g0.hypot(g1));
    }
    outcome(worst < 1e-6, format!("100 clusters, max |grad| {worst:.3e} (tol 1e-6)"))
}

// ---------------------------------------------------------------------------
// 4. PoE / argmax invariances
// ---------------------------------------------------------------------------

fn random_scale(rng: &mut ChaCha8Rng) -> f64 {
    10f64.powf(rng.gen_range(-3.0..3.0))
}

fn random_spans(rng: &mut ChaCha8Rng, n: usize) -> Vec<ScoredSpan> {
    (0..n)
        .map(|_| {
            let s = rng.gen_range(0.0..100.0);
            ScoredSpan::new(TimeSpan::new(s, s + rng.gen_range(1.0..30.0)).unwrap(), rng.gen_range(0.0..1.0))
        })
        .collect()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    let mut argmax_violations = 0;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=8);
        let spans = random_spans(&mut rng, n);
        let v: Vec<f64> = spans.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
        let lambda = random_scale(&mut rng);
        let scaled: Vec<f64> = v.iter().map(|x| x * lambda).collect();
        let a = rescore(PathId::GroundFirst, None, &spans, &v);
        let b = rescore(PathId::GroundFirst, None, &spans, &scaled);
        if a.best_span != b.best_span {
            argmax_violations += 1;
        }
    }

    let options: Vec<String> = (0..5).map(|i| format!("option {i}")).collect();
    let mut vote_violations = 0;
    for t in 0..1000 {
        let mode = if t % 2 == 0 { VotingMode::SpanLevel } else { VotingMode::PathLevel };
        let lambda = random_scale(&mut rng);
        let mut paths = Vec::new();
        let mut scaled_paths = Vec::new();
        for path in PathId::ALL {
            let n = rng.gen_range(1..=5);
            let spans = random_spans(&mut rng, n);
            let v: Vec<f64> = spans.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
            let answer = AnswerChoice::from_options(rng.gen_range(0..options.len()), &options);
            let out = rescore(path, answer, &spans, &v);
            let mut scaled = out.clone();
            for s in &mut scaled.verified {
                s.p *= lambda;
            }
            scaled.path_confidence *= lambda;
            paths.push(out);
            scaled_paths.push(scaled);
        }
        if consolidate_answer(&paths, mode) != consolidate_answer(&scaled_paths, mode) {
            vote_violations += 1;
        }
    }
    outcome(
        argmax_violations == 0 && vote_violations == 0,
        format!("1000+1000 trials, {argmax_violations} argmax changes, {vote_violations} vote changes (allowed 0)"),
    )
}

// ---------------------------------------------------------------------------
// 5. Metric identities
// ---------------------------------------------------------------------------

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut violations = Vec::new();
    for trial in 0..1000 {
        let n = rng.gen_range(1..=30);
        let samples: Vec<SampleScore> = (0..n)
            .map(|i| {
                let duration = 100.0;
                let gs = rng.gen_range(0.0..80.0);
                let gt = TimeSpan::new(gs, gs + rng.gen_range(1.0..20.0)).unwrap();
                let ps = rng.gen_range(0.0..duration - 1.0);
                let pred = TimeSpan::new(ps, (ps + rng.gen_range(0.5..40.0)).min(duration)).unwrap();
                let pred_spans = if rng.gen_bool(0.1) { vec![] } else { vec![pred] };
                let answer = Some(rng.gen_range(0..5));
                let pred_answer = if rng.gen_bool(0.1) { None } else { Some(rng.gen_range(0..5)) };
                score_sample(&format!("q{i}"), pred_answer, &pred_spans, answer, &[gt])
            })
            .collect();
        if let Some(s) = samples.iter().find(|s| s.top1_iop < s.top1_iou) {
            violations.push(format!("trial {trial}: {} iop < iou", s.qid));
        }
        let mut iou_t: Vec<f64> = (0..4).map(|_| (rng.gen_range(0.0..1.0f64) * 100.0).round() / 100.0).collect();
        iou_t.push(0.5);
        let mut iop_t = iou_t.clone();
        iou_t.sort_by(f64::total_cmp);
        iop_t.sort_by(f64::total_cmp);
        let report = aggregate(&samples, &Thresholds { iou: iou_t.clone(), iop: iop_t.clone() }).unwrap();
        let r_iop = report.r_iop.as_ref().unwrap();
        let gqa = report.acc_gqa.unwrap();
        if gqa > report.acc_qa.unwrap().min(r_iop["0.5"]) {
            violations.push(format!("trial {trial}: acc_gqa exceeds its bounds"));
        }
        for (family, thresholds, values) in [("iou", &iou_t, &report.r_iou), ("iop", &iop_t, r_iop)] {
            let recalls: Vec<f64> = thresholds.iter().map(|t| values[&format!("{t}")]).collect();
            if recalls.windows(2).any(|w| w[1] > w[0]) {
                violations.push(format!("trial {trial}: r_{family} increases with threshold"));
            }
        }
    }
    let first = violations.first().cloned().unwrap_or_default();
    outcome(
        violations.is_empty(),
        format!("1000 trials, {} violations (allowed 0) {first}", violations.len()),
    )
}

// ---------------------------------------------------------------------------
// 6. Degenerate end-to-end
// ---------------------------------------------------------------------------

fn zero_noise_config(reflection: bool) -> RunConfig {
    RunConfig {
        backend: BackendKind::Synthetic,
        synthetic_span_jitter: 0.0,
        synthetic_conf_noise: 0.0,
        synthetic_answer_acc: 1.0,
        reflection,
        seed: 6,
        ..RunConfig::default()
    }
}

fn criterion_6() -> Outcome {
    let started = Instant::now();
    let records = harness::synthetic_dataset(50, 6);
    let mut reports = Vec::new();
    for reflection in [true, false] {
        let config = zero_noise_config(reflection);
        let backend = harness::build_backend(&config, &records).unwrap();
        let (preds, _) = harness::run_records(&config, &records, backend).unwrap();
        reports.push(harness::score_predictions(&records, &preds, &Thresholds::default(), TaskKind::GroundedQa).unwrap());
    }
    let elapsed = started.elapsed();
    let perfect = reports.iter().all(|r| {
        r.acc_qa == Some(100.0) && r.acc_gqa == Some(100.0) && r.m_iou == 100.0 && r.m_iop == Some(100.0)
    });
    let r = &reports[0];
    outcome(
        perfect && reports[0] == reports[1] && within(Duration::from_secs(30), elapsed),
        format!(
            "Acc@QA {:?} Acc@GQA {:?} mIoU {} mIoP {:?} (want 100.0), reflection-invariant {}, {elapsed:.2?} (limit 30s)",
            r.acc_qa,
            r.acc_gqa,
            r.m_iou,
            r.m_iop,
            reports[0] == reports[1]
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Ablation-trend reproduction
// ---------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let started = Instant::now();
    let seeds: Vec<u64> = (0..10).collect();
    let mut spec = SimulationSpec::new(500, seeds.clone(), SimulationNoise::default());
    spec.workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let report = harness::simulate(&spec).unwrap();
    let elapsed = started.elapsed();

    let cell = |paths: &[u8], reflection: bool| {
        let i = ABLATION_CELLS
            .iter()
            .position(|c| c.paths == paths && c.reflection == reflection)
            .unwrap();
        &report.cells[i]
    };

    let mut reflection_wins = Vec::new();
    for p in 1u8..=3 {
        let with = cell(&[p], true);
        let without = cell(&[p], false);
        let wins = (0..seeds.len())
            .filter(|&s| with.per_seed[s].m_iop > without.per_seed[s].m_iop)
            .count();
        reflection_wins.push(wins);
    }
    let multi = cell(&[1, 2, 3], true);
    let fusion_wins = (0..seeds.len())
        .filter(|&s| {
            let best_single = report
                .cells
                .iter()
                .filter(|c| c.paths.len() == 1)
                .map(|c| c.per_seed[s].acc_gqa)
                .fold(f64::NEG_INFINITY, f64::max);
            multi.per_seed[s].acc_gqa > best_single
        })
        .count();

    println!("{}", report.to_table().trim_end());
    outcome(
        reflection_wins.iter().all(|&w| w >= 8) && fusion_wins >= 8 && within(Duration::from_secs(300), elapsed),
        format!(
            "reflection beats no-reflection on mIoP in {reflection_wins:?}/10 seeds per path (need >=8 each), \
             multi-path beats best single path on Acc@GQA in {fusion_wins}/10 (need >=8), {elapsed:.2?} (limit 5min)"
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Determinism and replay
// ---------------------------------------------------------------------------

/// Transcript lines with the wall-clock `latency_ms` field removed.
fn without_latency(jsonl: &str) -> Vec<serde_json::Value> {
    jsonl
        .lines()
        .map(|line| {
            let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
            v.as_object_mut().unwrap().remove("latency_ms");
            v
        })
        .collect()
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("dataset.jsonl");
    let records: Vec<DatasetRecord> = harness::synthetic_dataset(60, 8);
    gvqa_core::records::write_jsonl(&dataset, &records).unwrap();

    let mut outputs = Vec::new();
    for (tag, workers) in [("a", 1), ("b", 1), ("c", 4)] {
        let config = RunConfig {
            seed: 8,
            workers,
            ..RunConfig::default()
        };
        let preds = dir.path().join(format!("pred_{tag}.jsonl"));
        let transcripts = dir.path().join(format!("tr_{tag}.jsonl"));
        harness::run(&config, &dataset, &preds, &transcripts, None).unwrap();
        let calls = without_latency(&std::fs::read_to_string(&transcripts).unwrap());
        outputs.push((std::fs::read(&preds).unwrap(), calls, transcripts));
    }
    let predictions_identical = outputs.windows(2).all(|w| w[0].0 == w[1].0);
    let transcripts_identical = outputs.windows(2).all(|w| w[0].1 == w[1].1);

    let replayed = dir.path().join("replayed.jsonl");
    let config = RunConfig {
        workers: 3,
        ..RunConfig::default()
    };
    let summary = harness::fuse_replay(&config, &outputs[0].2, &replayed).unwrap();
    let replay_identical = std::fs::read(&replayed).unwrap() == outputs[0].0 && summary.skipped.is_empty();
    outcome(
        predictions_identical && transcripts_identical && replay_identical,
        format!(
            "predictions byte-identical across repeats and 1/4 workers: {predictions_identical}; \
             transcripts identical apart from latency: {transcripts_identical}; fuse replay byte-identical: {replay_identical}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 9. NMS properties
// ---------------------------------------------------------------------------

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut overlap, mut not_idempotent, mut not_subset) = (0, 0, 0);
    for _ in 0..1000 {
        let n = rng.gen_range(0..=20);
        let spans: Vec<ScoredSpan> = (0..n)
            .map(|_| {
                // Coarse grid so exact duplicates and ties occur.
                let s = rng.gen_range(0..40) as f64;
                let e = s + rng.gen_range(1..15) as f64;
                ScoredSpan::new(TimeSpan::new(s, e).unwrap(), rng.gen_range(0..10) as f64 / 10.0)
            })
            .collect();
        let kept = nms(&spans, 0.75);
        for (i, a) in kept.iter().enumerate() {
            if kept[i + 1..].iter().any(|b| iou(&a.span, &b.span) > 0.75) {
                overlap += 1;
                break;
            }
        }
        if nms(&kept, 0.75) != kept {
            not_idempotent += 1;
        }
        let input: BTreeSet<(u64, u64, u64)> = spans
            .iter()
            .map(|s| (s.span.start.to_bits(), s.span.end.to_bits(), s.confidence.to_bits()))
            .collect();
        if kept
            .iter()
            .any(|s| !input.contains(&(s.span.start.to_bits(), s.span.end.to_bits(), s.confidence.to_bits())))
        {
            not_subset += 1;
        }
    }
    outcome(
        overlap + not_idempotent + not_subset == 0,
        format!("1000 span sets: {overlap} with IoU > 0.75, {not_idempotent} non-idempotent, {not_subset} non-subset (allowed 0)"),
    )
}

type Check = fn() -> Outcome;

fn main() {
    let started = Instant::now();
    let criteria: [(&str, Check); 9] = [
        ("1 fusion matches exhaustive optimum", criterion_1),
        ("2 Lloyd objective non-increasing", criterion_2),
        ("3 refined centre is stationary", criterion_3),
        ("4 PoE and vote scale invariance", criterion_4),
        ("5 metric identities", criterion_5),
        ("6 zero-noise end-to-end is perfect", criterion_6),
        ("7 ablation trends", criterion_7),
        ("8 determinism and replay", criterion_8),
        ("9 NMS properties", criterion_9),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let result = check();
        if !result.pass {
            failures += 1;
        }
        println!("{} criterion {name}: {}", if result.pass { "PASS" } else { "FAIL" }, result.detail);
    }
    let elapsed = started.elapsed();
    println!("acceptance: {}/9 passed in {elapsed:.2?}", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
