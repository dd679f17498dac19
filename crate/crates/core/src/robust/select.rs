use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robust::candidates::CandidateSet;
use crate::robust::nfa::{nfa_coplanar, nfa_trifocal_lines, nfa_trifocal_points, FamilyNfa};
use crate::robust::residuals::{compute_profile, ResidualProfile};
use crate::scale::{
    coplanar_scale_ratio, trifocal_line_ratio, trifocal_point_ratio, FeatureKind, Provenance, ScaleConfig,
    ScaleError, ScaleHypothesis, TripletFrame,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum RobustError {
    #[error("no hypothesis yields a valid selection")]
    NoValidHypothesis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Minimum number of false alarms, no threshold.
    #[default]
    Ac,
    /// Maximum inlier count at a fixed pixel threshold.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RobustConfig {
    pub method: Method,
    pub threshold_px: f64,
    pub neighbors: usize,
    pub parallel_floor_deg: f64,
}

impl Default for RobustConfig {
    fn default() -> Self {
        Self { method: Method::Ac, threshold_px: 3.0, neighbors: 10, parallel_floor_deg: 15.0 }
    }
}

/// Indices into the lists of a [`CandidateSet`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inliers {
    pub coplanar: Vec<usize>,
    pub points: Vec<usize>,
    pub lines: Vec<usize>,
}

impl Inliers {
    pub fn total(&self) -> usize {
        self.coplanar.len() + self.points.len() + self.lines.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FamilyScores {
    pub coplanar: FamilyNfa,
    pub points: FamilyNfa,
    pub lines: FamilyNfa,
}

impl FamilyScores {
    pub fn global(&self) -> f64 {
        self.coplanar.contribution() + self.points.contribution() + self.lines.contribution()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub lambda: f64,
    /// Global log₁₀ NFA at `lambda`; `−∞` for an exact fit.
    pub log10_nfa: f64,
    pub families: FamilyScores,
    pub inliers: Inliers,
    pub method: Method,
    pub provenance: Provenance,
    pub hypotheses: usize,
}

impl SelectionResult {
    pub fn meaningful(&self) -> bool {
        self.log10_nfa < 0.0
    }
}

/// Hypotheses from every candidate, and the errors of those that failed.
#[derive(Debug, Clone, Default)]
pub struct HypothesisSet {
    pub hypotheses: Vec<ScaleHypothesis>,
    pub rejected: Vec<(Provenance, ScaleError)>,
}

pub fn generate_hypotheses(c: &CandidateSet, tf: &TripletFrame, cfg: &ScaleConfig) -> HypothesisSet {
    let mut out = HypothesisSet::default();
    let mut push = |kind, index, r: Result<f64, ScaleError>| {
        let provenance = Provenance { kind, index };
        match r {
            Ok(ratio) if ratio.is_finite() => out.hypotheses.push(ScaleHypothesis { ratio, provenance }),
            Ok(_) => out.rejected.push((provenance, ScaleError::DegenerateMinimizer)),
            Err(e) => out.rejected.push((provenance, e)),
        }
    };
    for (i, h) in c.coplanar.iter().enumerate() {
        push(FeatureKind::CoplanarPair, i, coplanar_scale_ratio(h, tf, cfg));
    }
    for (i, p) in c.tri_points.iter().enumerate() {
        push(FeatureKind::TrifocalPoint, i, trifocal_point_ratio(p, tf, cfg));
    }
    for (i, l) in c.tri_lines.iter().enumerate() {
        push(FeatureKind::TrifocalLine, i, trifocal_line_ratio(l, tf, cfg));
    }
    out
}

/// NFA of each family for a residual profile.
pub fn family_scores(c: &CandidateSet, p: &ResidualProfile) -> FamilyScores {
    let k2 = &c.intrinsics[1];
    let (area, diagonal) = (k2.area(), k2.diagonal());
    FamilyScores {
        coplanar: nfa_coplanar(&p.coplanar_lines, c.n_se2, c.neighbors, area),
        points: nfa_trifocal_points(&p.points, c.n_pt, area),
        lines: nfa_trifocal_lines(&p.lines, c.n_se, area, diagonal),
    }
}

fn within(d: &[f64], limit: f64, strict: bool) -> Vec<usize> {
    d.iter()
        .enumerate()
        .filter(|(_, &x)| if strict { x < limit } else { x <= limit })
        .map(|(i, _)| i)
        .collect()
}

fn ac_inliers(p: &ResidualProfile, s: &FamilyScores) -> Inliers {
    let pick = |d: &[f64], f: &FamilyNfa| f.best.map(|b| within(d, b.threshold, false)).unwrap_or_default();
    Inliers {
        coplanar: pick(&p.coplanar_pairs, &s.coplanar),
        points: pick(&p.points, &s.points),
        lines: pick(&p.lines, &s.lines),
    }
}

fn near_one(a: f64, b: f64) -> Ordering {
    (a - 1.0).abs().total_cmp(&(b - 1.0).abs()).then(a.total_cmp(&b))
}

fn provenance_order(a: &Provenance, b: &Provenance) -> Ordering {
    a.kind.cmp(&b.kind).then(a.index.cmp(&b.index))
}

/// Selects the ratio with the lowest global NFA. Ties prefer the ratio
/// closest to 1, then the smaller ratio.
pub fn ac_select(c: &CandidateSet, hypotheses: &[ScaleHypothesis], tf: &TripletFrame) -> Result<SelectionResult, RobustError> {
    let scored: Vec<(f64, FamilyScores)> = hypotheses
        .par_iter()
        .map(|h| {
            let p = compute_profile(c, h.ratio, tf);
            let s = family_scores(c, &p);
            (s.global(), s)
        })
        .collect();
    let best = (0..hypotheses.len())
        .filter(|&i| !scored[i].0.is_nan() && scored[i].0 < f64::INFINITY)
        .min_by(|&i, &j| {
            scored[i]
                .0
                .total_cmp(&scored[j].0)
                .then(near_one(hypotheses[i].ratio, hypotheses[j].ratio))
                .then(provenance_order(&hypotheses[i].provenance, &hypotheses[j].provenance))
        })
        .ok_or(RobustError::NoValidHypothesis)?;
    let h = hypotheses[best];
    let profile = compute_profile(c, h.ratio, tf);
    let (log10_nfa, families) = scored[best];
    Ok(SelectionResult {
        lambda: h.ratio,
        log10_nfa,
        inliers: ac_inliers(&profile, &families),
        families,
        method: Method::Ac,
        provenance: h.provenance,
        hypotheses: hypotheses.len(),
    })
}

struct Consensus {
    count: usize,
    spread: f64,
}

fn consensus(p: &ResidualProfile, threshold: f64) -> Consensus {
    let all = p.coplanar_pairs.iter().chain(&p.points).chain(&p.lines);
    let mut count = 0;
    let mut spread = 0.0;
    for &d in all.filter(|&&d| d < threshold) {
        count += 1;
        spread += d;
    }
    Consensus { count, spread }
}

/// Exhaustive fixed-threshold consensus over all hypotheses. Ties prefer the
/// smaller summed inlier residual, then the ratio closest to 1.
pub fn ransac_select(
    c: &CandidateSet,
    hypotheses: &[ScaleHypothesis],
    threshold_px: f64,
    tf: &TripletFrame,
) -> Result<SelectionResult, RobustError> {
    let scored: Vec<Consensus> = hypotheses
        .par_iter()
        .map(|h| consensus(&compute_profile(c, h.ratio, tf), threshold_px))
        .collect();
    let best = (0..hypotheses.len())
        .filter(|&i| scored[i].count > 0)
        .min_by(|&i, &j| {
            scored[j]
                .count
                .cmp(&scored[i].count)
                .then(scored[i].spread.total_cmp(&scored[j].spread))
                .then(near_one(hypotheses[i].ratio, hypotheses[j].ratio))
                .then(provenance_order(&hypotheses[i].provenance, &hypotheses[j].provenance))
        })
        .ok_or(RobustError::NoValidHypothesis)?;
    let h = hypotheses[best];
    let profile = compute_profile(c, h.ratio, tf);
    let families = family_scores(c, &profile);
    Ok(SelectionResult {
        lambda: h.ratio,
        log10_nfa: families.global(),
        families,
        inliers: Inliers {
            coplanar: within(&profile.coplanar_pairs, threshold_px, true),
            points: within(&profile.points, threshold_px, true),
            lines: within(&profile.lines, threshold_px, true),
        },
        method: Method::Fixed,
        provenance: h.provenance,
        hypotheses: hypotheses.len(),
    })
}

/// Runs the configured selector.
pub fn select(c: &CandidateSet, hypotheses: &[ScaleHypothesis], tf: &TripletFrame, cfg: &RobustConfig) -> Result<SelectionResult, RobustError> {
    match cfg.method {
        Method::Ac => ac_select(c, hypotheses, tf),
        Method::Fixed => ransac_select(c, hypotheses, cfg.threshold_px, tf),
    }
}
