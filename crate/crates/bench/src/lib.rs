//! Fixtures shared by the benchmarks.

use chainsfm::io::{pipeline::build_problem, run_pipeline, Config};
use chainsfm::{compose_chain, generate, BaProblem, ChainInput, Dataset, SceneSpec, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Synthetic chain with pixel noise and outlier matches.
pub fn scene(cameras: usize, noise_px: f64, outlier_fraction: f64) -> Dataset {
    let spec = SceneSpec { seed: 7, cameras, noise_px, outlier_fraction, ..SceneSpec::default() };
    generate(&spec).expect("feasible scene").0
}

/// Random `(u, v, w)` triples for the angle minimizer.
pub fn minimizer_inputs(n: usize) -> Vec<[Vec3; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut v = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    (0..n).map(|_| [v(), v(), v()]).collect()
}

/// Residual distances in pixels, a quarter of them small.
pub fn distances(n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    (0..n).map(|i| if i % 4 == 0 { rng.random_range(0.0..2.0) } else { rng.random_range(0.0..400.0) }).collect()
}

/// Refinement problem initialized from the pipeline's own chain.
pub fn ba_problem(d: &Dataset) -> BaProblem {
    let cfg = Config { ba: chainsfm::io::config::BaSection { enabled: false, ..Default::default() }, ..Config::default() };
    let out = run_pipeline(d, &cfg);
    let inp = ChainInput {
        topology: d.topology,
        relposes: d.relposes.clone(),
        ratios: out.report.triplets.iter().map(|t| t.lambda).collect(),
    };
    let chain = compose_chain(&inp).expect("chain composes");
    build_problem(d, &chain, &out.triplets, &cfg).expect("problem builds")
}
