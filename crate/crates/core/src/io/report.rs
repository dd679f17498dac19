use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::ba::{SolveReport, Stage, Termination};
use crate::chain::Topology;
use crate::robust::Method;
use crate::scale::FeatureKind;

pub const REPORT_SCHEMA: &str = "chainsfm.report";
pub const REPORT_VERSION: u32 = 1;

/// JSON has no infinities; they are written as strings.
mod lenient {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            Repr::Number(*v)
        } else if v.is_nan() {
            Repr::Text("nan".into())
        } else if *v > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("not a number: {t}"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct FamilyCounts {
    pub coplanar: usize,
    pub points: usize,
    pub lines: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripletReport {
    pub index: usize,
    pub cameras: [usize; 3],
    /// Camera-2 lines matched towards camera 1 or 3.
    pub lines_in_middle: usize,
    pub candidates: FamilyCounts,
    pub hypotheses: usize,
    pub rejected_hypotheses: usize,
    pub lambda: Option<f64>,
    #[serde(with = "lenient")]
    pub log10_nfa: f64,
    pub meaningful: bool,
    pub selected_from: Option<FeatureKind>,
    pub inliers: FamilyCounts,
    /// Ground-truth ratio, when known.
    pub true_lambda: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainReport {
    pub topology: Topology,
    pub cameras: usize,
    pub baselines: Vec<f64>,
    pub closure_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub accepted_steps: usize,
    pub termination: Termination,
}

impl From<&SolveReport> for StageReport {
    fn from(r: &SolveReport) -> Self {
        Self {
            stage: r.stage,
            iterations: r.iterations,
            initial_cost: r.initial_cost(),
            final_cost: r.final_cost(),
            accepted_steps: r.costs.len() - 1,
            termination: r.termination,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaReport {
    pub points: usize,
    pub lines: usize,
    pub coplanar_pairs: usize,
    pub residuals: usize,
    pub stages: Vec<StageReport>,
    /// Root mean square of the point reprojection errors after refinement, px.
    pub point_rms_px: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterErrors {
    pub mean: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub before_ba: CenterErrors,
    pub after_ba: Option<CenterErrors>,
    /// Mean relative error of the selected ratios.
    pub mean_ratio_error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Calibrated,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub version: u32,
    pub status: Status,
    pub method: Method,
    pub triplets: Vec<TripletReport>,
    pub chain: Option<ChainReport>,
    pub ba: Option<BaReport>,
    pub evaluation: Option<Evaluation>,
    pub errors: Vec<String>,
    /// Wall-clock seconds per stage. Not deterministic.
    pub timings: BTreeMap<String, f64>,
}

impl RunReport {
    pub fn new(method: Method) -> Self {
        Self {
            schema: REPORT_SCHEMA.to_string(),
            version: REPORT_VERSION,
            status: Status::Failed,
            method,
            triplets: Vec::new(),
            chain: None,
            ba: None,
            evaluation: None,
            errors: Vec::new(),
            timings: BTreeMap::new(),
        }
    }

    /// The report without its timings, for comparing runs.
    pub fn numerics(&self) -> RunReport {
        RunReport { timings: BTreeMap::new(), ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
