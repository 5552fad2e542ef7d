//! Seeded inputs shared by the benchmarks.

use gvqa_core::reflect::rescore;
use gvqa_core::{AnswerChoice, PathId, ScoredSpan, TimeSpan, VerifiedPathOutput};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` spans scattered over a `duration`-second video with random confidences.
pub fn random_spans(n: usize, duration: f64, seed: u64) -> Vec<ScoredSpan> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let start = rng.gen_range(0.0..duration * 0.9);
            let end = (start + rng.gen_range(1.0..duration * 0.2)).min(duration);
            ScoredSpan::new(TimeSpan::new(start, end).expect("valid span"), rng.gen_range(0.0..1.0))
        })
        .collect()
}

/// Three verified path outputs with `spans_per_path` candidates each,
/// clustered around a few shared moments the way agreeing paths are.
pub fn verified_paths(spans_per_path: usize, seed: u64) -> Vec<VerifiedPathOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let options: Vec<String> = (0..5).map(|i| format!("option {i}")).collect();
    let moments: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..150.0)).collect();
    PathId::ALL
        .iter()
        .map(|&path| {
            let spans: Vec<ScoredSpan> = (0..spans_per_path)
                .map(|_| {
                    let m = moments[rng.gen_range(0..moments.len())];
                    let start = (m + rng.gen_range(-3.0..3.0)).max(0.0);
                    let end = start + rng.gen_range(5.0..20.0);
                    ScoredSpan::new(TimeSpan::new(start, end).expect("valid span"), rng.gen_range(0.05..1.0))
                })
                .collect();
            let v: Vec<f64> = spans.iter().map(|_| rng.gen_range(0.0..1.0)).collect();
            let answer = AnswerChoice::from_options(rng.gen_range(0..options.len()), &options);
            rescore(path, answer, &spans, &v)
        })
        .collect()
}
