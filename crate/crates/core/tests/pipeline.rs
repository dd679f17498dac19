use chainsfm::io::{run_pipeline, write_outputs, Config, Status};
use chainsfm::synth::Layout;
use chainsfm::{generate, mutate_overlap, OverlapMode, SceneSpec};

fn max_ratio_error(out: &chainsfm::io::PipelineOutput) -> f64 {
    out.report
        .triplets
        .iter()
        .map(|t| (t.lambda.unwrap() / t.true_lambda.unwrap() - 1.0).abs())
        .fold(0.0, f64::max)
}

#[test]
fn noiseless_five_camera_chain() {
    let spec = SceneSpec { seed: 11, cameras: 5, ..SceneSpec::default() };
    let (d, _) = generate(&spec).unwrap();
    let out = run_pipeline(&d, &Config::default());
    assert_eq!(out.report.status, Status::Calibrated, "{:?}", out.report.errors);
    assert!(max_ratio_error(&out) < 1e-9);
    let ev = out.report.evaluation.unwrap();
    println!("{ev:?}");
    assert!(ev.before_ba.max < 1e-6);
    assert!(ev.after_ba.unwrap().max < 1e-6);
}

#[test]
fn bifocal_only_chain_reports_empty_trifocal_families() {
    let spec = mutate_overlap(&SceneSpec { seed: 4, cameras: 6, ..SceneSpec::default() }, OverlapMode::BifocalOnly).unwrap();
    let (d, _) = generate(&spec).unwrap();
    let out = run_pipeline(&d, &Config::default());
    assert_eq!(out.report.status, Status::Calibrated, "{:?}", out.report.errors);
    for t in &out.report.triplets {
        assert_eq!((t.candidates.points, t.candidates.lines), (0, 0));
        assert!(t.candidates.coplanar > 0);
    }
    assert!(max_ratio_error(&out) < 1e-6);
    assert!(out.report.evaluation.unwrap().after_ba.unwrap().max < 1e-6);
}

#[test]
fn ring_closes() {
    let spec = SceneSpec { seed: 2, cameras: 16, layout: Layout::Ring, ..SceneSpec::default() };
    let (d, _) = generate(&spec).unwrap();
    let out = run_pipeline(&d, &Config::default());
    assert_eq!(out.report.status, Status::Calibrated, "{:?}", out.report.errors);
    let gap = out.report.chain.as_ref().unwrap().closure_gap.unwrap();
    assert!(gap < 1e-6, "gap {gap}");
}

#[test]
fn fixed_threshold_path() {
    let spec = SceneSpec { seed: 5, cameras: 5, noise_px: 0.5, ..SceneSpec::default() };
    let (d, _) = generate(&spec).unwrap();
    let cfg = Config::from_toml("[robust]\nmethod = \"fixed\"\nthreshold_px = 3\n").unwrap();
    let out = run_pipeline(&d, &cfg);
    assert_eq!(out.report.status, Status::Calibrated, "{:?}", out.report.errors);
    assert!(out.report.to_json().contains("\"method\": \"fixed\""));
    assert!(max_ratio_error(&out) < 0.05, "{}", max_ratio_error(&out));
}

#[test]
fn empty_matches_break_the_chain() {
    let (mut d, _) = generate(&SceneSpec { seed: 1, cameras: 4, ..SceneSpec::default() }).unwrap();
    d.line_matches.values_mut().for_each(Vec::clear);
    d.point_matches.values_mut().for_each(Vec::clear);
    let out = run_pipeline(&d, &Config::default());
    assert_eq!(out.report.status, Status::Failed);
    assert!(out.report.errors.iter().any(|e| e.contains("chain")), "{:?}", out.report.errors);
    assert!(out.report.triplets.iter().all(|t| t.candidates.coplanar == 0 && t.error.is_some()));
}

#[test]
fn writes_outputs() {
    let (d, _) = generate(&SceneSpec { seed: 3, cameras: 4, ..SceneSpec::default() }).unwrap();
    let out = run_pipeline(&d, &Config::default());
    let dir = tempfile::tempdir().unwrap();
    write_outputs(&out, dir.path()).unwrap();
    let poses = std::fs::read_to_string(dir.path().join("poses.txt")).unwrap();
    assert_eq!(poses.lines().count(), 5);
    let report: chainsfm::io::RunReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(report.numerics(), out.report.numerics());
    assert!(dir.path().join("structure.ply").exists());
}
