use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chainsfm::io::{
    export_ply, load_dataset, load_poses, run_pipeline, save_dataset, write_outputs, Config, PipelineOutput, Status,
    THREADS_ENV,
};
use chainsfm::{align_similarity, generate, SceneSpec};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

#[derive(Parser)]
#[command(name = "chainsfm", version, about = "Calibrate chains of cameras from bifocal relative poses")]
struct Cli {
    /// Worker threads for per-triplet estimation.
    #[arg(long, global = true, env = THREADS_ENV)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    Synth(SynthArgs),
    /// Estimate poses and structure; writes poses.txt, structure.ply and report.json.
    Calibrate {
        dataset: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Compare a poses file with the dataset ground truth.
    Eval {
        dataset: PathBuf,
        #[arg(long)]
        poses: PathBuf,
    },
    /// Calibrate and write only the reconstructed structure as PLY.
    Export {
        dataset: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, short)]
    out: PathBuf,
    /// Scene description (TOML, keys of the scene spec).
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    cameras: Option<usize>,
    /// path | ring
    #[arg(long)]
    layout: Option<String>,
    #[arg(long)]
    noise_px: Option<f64>,
    #[arg(long)]
    outlier_fraction: Option<f64>,
    /// full | remove-trifocal-points | remove-trifocal-lines | bifocal-only
    #[arg(long)]
    overlap: Option<String>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Configuration file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// ac | fixed
    #[arg(long)]
    robust: Option<String>,
    /// Inlier threshold in pixels for the fixed method.
    #[arg(long, alias = "threshold-px")]
    threshold: Option<f64>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    parallel_floor_deg: Option<f64>,
    #[arg(long)]
    degeneracy_floor_deg: Option<f64>,
    /// Skip bundle adjustment.
    #[arg(long)]
    no_ba: bool,
    /// Leave out lines whose back-projected planes are this close to parallel.
    #[arg(long)]
    line_floor_deg: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Skip the rotations-fixed refinement stage.
    #[arg(long)]
    no_stage1: bool,
    #[arg(long)]
    ftol: Option<f64>,
    #[arg(long)]
    gtol: Option<f64>,
    #[arg(long)]
    xtol: Option<f64>,
}

/// Parses a kebab-case enum value through its serde representation.
fn parse_value<T: DeserializeOwned>(what: &str, s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("invalid {what} '{s}'"))
}

impl ConfigArgs {
    fn resolve(&self) -> Result<Config, String> {
        let mut c = match &self.config {
            Some(p) => Config::load(p).map_err(|e| format!("{}: {e}", p.display()))?,
            None => Config::default(),
        };
        if let Some(m) = &self.robust {
            c.robust.method = parse_value("robust method", m)?;
        }
        set(&mut c.robust.threshold_px, self.threshold);
        set(&mut c.robust.neighbors, self.neighbors);
        set(&mut c.robust.parallel_floor_deg, self.parallel_floor_deg);
        set(&mut c.scale.degeneracy_floor_deg, self.degeneracy_floor_deg);
        c.ba.enabled &= !self.no_ba;
        set(&mut c.ba.line_floor_deg, self.line_floor_deg);
        c.ba.solver.stage1 &= !self.no_stage1;
        set(&mut c.ba.solver.max_iters, self.max_iters);
        set(&mut c.ba.solver.ftol, self.ftol);
        set(&mut c.ba.solver.gtol, self.gtol);
        set(&mut c.ba.solver.xtol, self.xtol);
        c.validate().map_err(|e| e.to_string())?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn synth(a: &SynthArgs) -> Result<ExitCode, String> {
    let mut spec = match &a.spec {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("{}: {e}", p.display()))?;
            toml::from_str::<SceneSpec>(&text).map_err(|e| format!("{}: {e}", p.display()))?
        }
        None => SceneSpec::default(),
    };
    set(&mut spec.seed, a.seed);
    set(&mut spec.cameras, a.cameras);
    set(&mut spec.noise_px, a.noise_px);
    set(&mut spec.outlier_fraction, a.outlier_fraction);
    if let Some(l) = &a.layout {
        spec.layout = parse_value("layout", l)?;
    }
    if let Some(o) = &a.overlap {
        spec.overlap = parse_value("overlap mode", o)?;
    }
    let (d, gt) = generate(&spec).map_err(|e| e.to_string())?;
    save_dataset(&d, &a.out).map_err(|e| e.to_string())?;
    let ratios: Vec<String> = gt.ratios.iter().map(|r| format!("{r:.6}")).collect();
    println!("wrote {} cameras to {} (true ratios {})", d.order.len(), a.out.display(), ratios.join(" "));
    Ok(ExitCode::SUCCESS)
}

fn calibrate(dataset: &Path, config: &ConfigArgs) -> Result<PipelineOutput, String> {
    let cfg = config.resolve()?;
    let d = load_dataset(dataset).map_err(|e| e.to_string())?;
    Ok(run_pipeline(&d, &cfg))
}

fn summarize(out: &PipelineOutput) -> ExitCode {
    for t in &out.report.triplets {
        match t.lambda {
            Some(l) => println!(
                "triplet {} {:?}: ratio {l:.6} log10 NFA {:.2} inliers {}/{}/{}",
                t.index, t.cameras, t.log10_nfa, t.inliers.coplanar, t.inliers.points, t.inliers.lines
            ),
            None => println!("triplet {} {:?}: no ratio", t.index, t.cameras),
        }
    }
    if let Some(ev) = &out.report.evaluation {
        let after = ev.after_ba.unwrap_or(ev.before_ba);
        println!("center error: mean {:.3e} max {:.3e}", after.mean, after.max);
    }
    for e in &out.report.errors {
        eprintln!("error: {e}");
    }
    if out.report.status == Status::Calibrated {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn eval(dataset: &Path, poses: &Path) -> Result<ExitCode, String> {
    let d = load_dataset(dataset).map_err(|e| e.to_string())?;
    let truth = d.ground_truth.as_ref().ok_or("dataset has no ground truth")?;
    let est = load_poses(poses).map_err(|e| e.to_string())?;
    let ids: Vec<usize> = est.keys().copied().filter(|id| truth.contains_key(id)).collect();
    let centers = |m: &BTreeMap<usize, chainsfm::GlobalPose>| ids.iter().map(|id| m[id].center).collect::<Vec<_>>();
    let a = align_similarity(&centers(&est), &centers(truth)).map_err(|e| e.to_string())?;
    let report = serde_json::json!({
        "cameras": ids.len(),
        "scale": a.scale,
        "mean_center_error": a.mean_error(),
        "max_center_error": a.max_error(),
    });
    println!("{}", serde_json::to_string_pretty(&report).expect("json"));
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())?;
    }
    match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Calibrate { dataset, out, config } => {
            let res = calibrate(dataset, config)?;
            write_outputs(&res, out).map_err(|e| format!("{}: {e}", out.display()))?;
            Ok(summarize(&res))
        }
        Command::Eval { dataset, poses } => eval(dataset, poses),
        Command::Export { dataset, out, config } => {
            let res = calibrate(dataset, config)?;
            export_ply(&res.structure, out).map_err(|e| format!("{}: {e}", out.display()))?;
            Ok(summarize(&res))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
