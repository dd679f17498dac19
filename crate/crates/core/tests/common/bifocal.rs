//! The noisy bifocal-only trial shared by the acceptance run and the
//! Monte-Carlo reference that sets its tolerance.

use chainsfm::io::{run_pipeline, Config};
use chainsfm::{generate, mutate_overlap, OverlapMode, SceneSpec};

pub const NOISE_PX: f64 = 0.5;
pub const TRIALS: u64 = 200;
/// First seed of the reference run; the acceptance run uses `0..TRIALS`.
pub const REFERENCE_SEED: u64 = 1_000_000;

/// Mean relative ratio error over the triplets of one 8-camera bifocal-only
/// scene; a triplet without a ratio counts as 1.
pub fn trial_error(seed: u64, noise_px: f64) -> f64 {
    let spec = SceneSpec { seed, noise_px, ..SceneSpec::default() };
    let spec = mutate_overlap(&spec, OverlapMode::BifocalOnly).expect("valid spec");
    let (d, _) = generate(&spec).expect("scene");
    let mut cfg = Config::default();
    cfg.ba.enabled = false;
    let out = run_pipeline(&d, &cfg);
    let errs: Vec<f64> = out
        .report
        .triplets
        .iter()
        .map(|t| match (t.lambda, t.true_lambda) {
            (Some(l), Some(g)) => (l / g - 1.0).abs(),
            _ => 1.0,
        })
        .collect();
    errs.iter().sum::<f64>() / errs.len() as f64
}

/// Mean and standard error.
pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
