//! Monte-Carlo reference for the noisy bifocal-only acceptance check.
//!
//! Writes the mean relative ratio error over 200 scenes, its standard error
//! and the tolerance `mean + 3 SE` to `tests/fixtures/bifocal_tolerance.json`.

#[path = "../tests/common/bifocal.rs"]
mod bifocal;

use std::path::Path;

use bifocal::{mean_se, trial_error, NOISE_PX, REFERENCE_SEED, TRIALS};

fn main() {
    let errs: Vec<f64> = (REFERENCE_SEED..REFERENCE_SEED + TRIALS).map(|s| trial_error(s, NOISE_PX)).collect();
    let (mean, se) = mean_se(&errs);
    let fixture = serde_json::json!({
        "first_seed": REFERENCE_SEED,
        "trials": TRIALS,
        "noise_px": NOISE_PX,
        "mean": mean,
        "std_error": se,
        "worst": errs.iter().cloned().fold(0.0, f64::max),
        "tolerance": mean + 3.0 * se,
    });
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/bifocal_tolerance.json");
    std::fs::write(&path, serde_json::to_string_pretty(&fixture).unwrap() + "\n").unwrap();
    println!("{fixture}");
}
