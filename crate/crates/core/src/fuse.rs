//! Multi-path fusion: weighted answer voting, reliability weights, weighted
//! k-means over `(start, end)` points and weighted-mean boundary refinement.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::AnswerChoice;
use crate::error::{Error, Result};
use crate::paths::PathId;
use crate::reflect::VerifiedPathOutput;
use crate::span::TimeSpan;

pub type Point = [f64; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VotingMode {
    /// Each path votes with the sum of its span scores.
    #[default]
    SpanLevel,
    /// Each path votes with its best span score.
    PathLevel,
}

impl std::str::FromStr for VotingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "span_level" => Ok(VotingMode::SpanLevel),
            "path_level" => Ok(VotingMode::PathLevel),
            other => Err(Error::Config(format!("unknown voting mode {other:?}"))),
        }
    }
}

/// A span as a point in the plane with its normalised reliability weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanPoint {
    pub x: Point,
    pub weight: f64,
    pub origin: Option<(PathId, usize)>,
}

impl SpanPoint {
    pub fn new(x: Point, weight: f64) -> Self {
        Self { x, weight, origin: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub center: Point,
    pub members: Vec<usize>,
    pub total_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusedSpan {
    pub span: TimeSpan,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionResult {
    pub answer: Option<AnswerChoice>,
    /// Heaviest cluster first.
    pub spans: Vec<FusedSpan>,
    pub k_effective: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum KMeansInit {
    /// Heaviest point, then repeatedly the point farthest from the chosen
    /// centres.
    #[default]
    Maximin,
    /// The `K` heaviest distinct points.
    TopWeight,
    /// Weighted k-means++ seeding with a fixed seed.
    PlusPlus { seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansParams {
    pub k: usize,
    pub max_iters: usize,
    pub eps: f64,
    pub init: KMeansInit,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            k: 5,
            max_iters: 10,
            eps: 1e-6,
            init: KMeansInit::Maximin,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansOutcome {
    pub centers: Vec<Point>,
    pub assignment: Vec<usize>,
    pub iterations: usize,
    /// Objective after seeding and after every Lloyd iteration.
    pub objective_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionParams {
    pub kmeans: KMeansParams,
    /// Number of fused spans reported.
    pub report_k: usize,
    pub voting: VotingMode,
}

impl Default for FusionParams {
    fn default() -> Self {
        Self {
            kmeans: KMeansParams::default(),
            report_k: 3,
            voting: VotingMode::SpanLevel,
        }
    }
}

fn sq_dist(a: &Point, b: &Point) -> f64 {
    let d0 = a[0] - b[0];
    let d1 = a[1] - b[1];
    d0 * d0 + d1 * d1
}

/// Weighted mean of `members`, computed relative to the first member so that
/// identical points average to themselves exactly. `None` if the weight is 0.
fn weighted_mean<'a>(members: impl Iterator<Item = &'a SpanPoint>) -> Option<(Point, f64)> {
    let mut anchor: Option<Point> = None;
    let mut total = 0.0;
    let mut acc = [0.0, 0.0];
    for p in members {
        let a = *anchor.get_or_insert(p.x);
        total += p.weight;
        acc[0] += p.weight * (p.x[0] - a[0]);
        acc[1] += p.weight * (p.x[1] - a[1]);
    }
    let a = anchor?;
    if total <= 0.0 {
        return None;
    }
    Some(([a[0] + acc[0] / total, a[1] + acc[1] / total], total))
}

/// Weighted within-cluster sum of squared distances.
pub fn weighted_objective(points: &[SpanPoint], centers: &[Point], assignment: &[usize]) -> f64 {
    points
        .iter()
        .zip(assignment)
        .map(|(p, &j)| p.weight * sq_dist(&p.x, &centers[j]))
        .sum()
}

fn nearest(x: &Point, centers: &[Point]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best_d {
            best = j;
            best_d = d;
        }
    }
    best
}

fn heavier_then_earlier(points: &[SpanPoint], a: usize, b: usize) -> Ordering {
    points[b]
        .weight
        .total_cmp(&points[a].weight)
        .then(points[a].x[0].total_cmp(&points[b].x[0]))
        .then(points[a].x[1].total_cmp(&points[b].x[1]))
        .then(a.cmp(&b))
}

fn seed_candidates(points: &[SpanPoint]) -> Vec<usize> {
    let positive: Vec<usize> = (0..points.len()).filter(|&i| points[i].weight > 0.0).collect();
    if positive.is_empty() {
        (0..points.len()).collect()
    } else {
        positive
    }
}

fn seed_centers(points: &[SpanPoint], k: usize, init: KMeansInit) -> Vec<Point> {
    let mut cands = seed_candidates(points);
    let mut centers: Vec<Point> = Vec::with_capacity(k);
    match init {
        KMeansInit::TopWeight => {
            cands.sort_by(|&a, &b| heavier_then_earlier(points, a, b));
            for i in cands {
                if centers.len() == k {
                    break;
                }
                if !centers.contains(&points[i].x) {
                    centers.push(points[i].x);
                }
            }
        }
        KMeansInit::Maximin => {
            cands.sort_by(|&a, &b| heavier_then_earlier(points, a, b));
            centers.push(points[cands[0]].x);
            while centers.len() < k {
                // `cands` is sorted so the first strict maximum wins ties.
                let mut best: Option<(usize, f64)> = None;
                for &i in &cands {
                    let d = centers
                        .iter()
                        .map(|c| sq_dist(&points[i].x, c))
                        .fold(f64::INFINITY, f64::min);
                    if best.is_none_or(|(_, bd)| d > bd) {
                        best = Some((i, d));
                    }
                }
                match best {
                    Some((i, d)) if d > 0.0 => centers.push(points[i].x),
                    _ => break,
                }
            }
        }
        KMeansInit::PlusPlus { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pick = |rng: &mut ChaCha8Rng, scores: &[f64]| -> Option<usize> {
                let total: f64 = scores.iter().sum();
                if !(total > 0.0) {
                    return None;
                }
                let mut r = rng.gen::<f64>() * total;
                for (i, s) in scores.iter().enumerate() {
                    if *s > 0.0 {
                        if r < *s {
                            return Some(i);
                        }
                        r -= s;
                    }
                }
                scores.iter().rposition(|s| *s > 0.0)
            };
            let w: Vec<f64> = cands.iter().map(|&i| points[i].weight.max(0.0)).collect();
            let first = pick(&mut rng, &w).unwrap_or(0);
            centers.push(points[cands[first]].x);
            while centers.len() < k {
                let scores: Vec<f64> = cands
                    .iter()
                    .map(|&i| {
                        let d = centers
                            .iter()
                            .map(|c| sq_dist(&points[i].x, c))
                            .fold(f64::INFINITY, f64::min);
                        points[i].weight.max(f64::MIN_POSITIVE) * d
                    })
                    .collect();
                match pick(&mut rng, &scores) {
                    Some(j) => centers.push(points[cands[j]].x),
                    None => break,
                }
            }
        }
    }
    centers
}

/// Lloyd iterations on weighted points. Stops after `max_iters` updates or
/// once no centre moves by `eps` or more. Assignment ties go to the lowest
/// cluster index; a cluster left without weight keeps its previous centre.
pub fn weighted_kmeans(points: &[SpanPoint], params: &KMeansParams) -> KMeansOutcome {
    if points.is_empty() || params.k == 0 {
        return KMeansOutcome {
            centers: Vec::new(),
            assignment: Vec::new(),
            iterations: 0,
            objective_trace: Vec::new(),
        };
    }
    let mut centers = seed_centers(points, params.k, params.init);
    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(&p.x, &centers)).collect();
    let mut trace = vec![weighted_objective(points, &centers, &assignment)];
    let mut iterations = 0;
    while iterations < params.max_iters {
        let mut shift: f64 = 0.0;
        for (j, center) in centers.iter_mut().enumerate() {
            let members = points.iter().zip(&assignment).filter(|(_, &a)| a == j).map(|(p, _)| p);
            if let Some((mean, _)) = weighted_mean(members) {
                shift = shift.max(sq_dist(center, &mean).sqrt());
                *center = mean;
            }
        }
        assignment = points.iter().map(|p| nearest(&p.x, &centers)).collect();
        trace.push(weighted_objective(points, &centers, &assignment));
        iterations += 1;
        if shift < params.eps {
            break;
        }
    }
    KMeansOutcome {
        centers,
        assignment,
        iterations,
        objective_trace: trace,
    }
}

/// Weighted mean of a cluster's members as a span.
pub fn refine_boundaries(cluster: &Cluster, points: &[SpanPoint]) -> Result<TimeSpan> {
    let (c, _) = weighted_mean(cluster.members.iter().map(|&i| &points[i])).ok_or(Error::ZeroClusterWeight)?;
    if c[0] > c[1] {
        return Err(Error::ReversedBoundaries { start: c[0], end: c[1] });
    }
    Ok(TimeSpan {
        start: c[0].max(0.0),
        end: c[1],
    })
}

fn vote_weight(path: &VerifiedPathOutput, mode: VotingMode) -> f64 {
    match mode {
        VotingMode::SpanLevel => path.verified.iter().map(|v| v.p).sum(),
        VotingMode::PathLevel => path.path_confidence,
    }
}

/// Weighted majority vote over path answers. Falls back to plain counts when
/// every weight is zero; remaining ties go to the lowest option index.
pub fn consolidate_answer(paths: &[VerifiedPathOutput], mode: VotingMode) -> Option<AnswerChoice> {
    let mut tally: BTreeMap<usize, (f64, usize, &AnswerChoice)> = BTreeMap::new();
    for path in paths {
        if let Some(answer) = &path.answer {
            let entry = tally.entry(answer.option_index).or_insert((0.0, 0, answer));
            entry.0 += vote_weight(path, mode);
            entry.1 += 1;
        }
    }
    let weighted = tally.values().any(|(w, _, _)| *w > 0.0);
    let mut best: Option<(f64, &AnswerChoice)> = None;
    for (w, count, answer) in tally.values() {
        let score = if weighted { *w } else { *count as f64 };
        if best.is_none_or(|(b, _)| score > b) {
            best = Some((score, answer));
        }
    }
    best.map(|(_, a)| (*a).clone())
}

/// Normalises PoE scores into weights summing to one, uniform when every
/// score is zero.
pub fn normalize_weights(paths: &[VerifiedPathOutput]) -> Vec<SpanPoint> {
    let mut points: Vec<SpanPoint> = paths
        .iter()
        .flat_map(|path| {
            path.verified.iter().enumerate().map(move |(rank, v)| SpanPoint {
                x: v.span.as_pair(),
                weight: v.p,
                origin: Some((path.path, rank)),
            })
        })
        .collect();
    let total: f64 = points.iter().map(|p| p.weight).sum();
    let n = points.len() as f64;
    for p in &mut points {
        p.weight = if total > 0.0 { p.weight / total } else { 1.0 / n };
    }
    points
}

/// Answer consolidation followed by span clustering and refinement.
pub fn fuse(paths: &[VerifiedPathOutput], params: &FusionParams) -> FusionResult {
    let mut ordered: Vec<VerifiedPathOutput> = paths.to_vec();
    ordered.sort_by_key(|p| p.path);
    let answer = consolidate_answer(&ordered, params.voting);

    let mut points = normalize_weights(&ordered);
    // Canonical order keeps the arithmetic independent of input order.
    points.sort_by(|a, b| {
        a.x[0]
            .total_cmp(&b.x[0])
            .then(a.x[1].total_cmp(&b.x[1]))
            .then(b.weight.total_cmp(&a.weight))
            .then(a.origin.cmp(&b.origin))
    });
    if points.is_empty() {
        return FusionResult {
            answer,
            spans: Vec::new(),
            k_effective: 0,
        };
    }

    let km = weighted_kmeans(&points, &params.kmeans);
    let mut fused: Vec<FusedSpan> = Vec::new();
    for (j, center) in km.centers.iter().enumerate() {
        let members: Vec<usize> = (0..points.len()).filter(|&i| km.assignment[i] == j).collect();
        if members.is_empty() {
            continue;
        }
        let total_weight: f64 = members.iter().map(|&i| points[i].weight).sum();
        let cluster = Cluster {
            center: *center,
            members,
            total_weight,
        };
        match refine_boundaries(&cluster, &points) {
            Ok(span) => fused.push(FusedSpan {
                span,
                weight: total_weight,
            }),
            Err(e) => tracing::debug!(cluster = j, error = %e, "dropping cluster"),
        }
    }
    fused.sort_by(|a, b| {
        b.weight
            .total_cmp(&a.weight)
            .then(a.span.start.total_cmp(&b.span.start))
            .then(a.span.end.total_cmp(&b.span.end))
    });
    let k_effective = fused.len();
    fused.truncate(params.report_k);
    FusionResult {
        answer,
        spans: fused,
        k_effective,
    }
}
