//! Runs every acceptance check, printing one PASS/FAIL line per criterion.
//! Exits nonzero if any fails. Use `--release`: the training checks take
//! about half an hour on one core.

use std::panic::catch_unwind;
use std::time::Instant;

use ncp_validation::*;

fn main() {
    let mut results = vec![
        report(1, "numerics", criterion_1),
        report(2, "closed-form fmap", criterion_2),
        report(3, "noise impedance", criterion_3),
    ];
    let t = Instant::now();
    let runs = catch_unwind(|| (0..3).map(collection_run).collect::<Vec<_>>()).ok();
    let elapsed = t.elapsed().as_secs_f64();
    let missing = || (false, "collection training failed".to_string());
    results.push(report(4, "stage-2 improvement", || {
        runs.as_deref()
            .map_or_else(missing, |r| criterion_4(r, elapsed))
    }));
    results.push(report(5, "test-time denoising", criterion_5));
    results.push(report(6, "collection vs pairwise", || {
        runs.as_deref().map_or_else(missing, |r| criterion_6(&r[0]))
    }));
    results.push(report(7, "neural bias", criterion_7));
    results.push(report(8, "smoothness metric", criterion_8));
    results.push(report(9, "keypoint transfer", criterion_9));
    results.push(report(10, "determinism", criterion_10));
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
