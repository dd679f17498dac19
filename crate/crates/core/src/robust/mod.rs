//! Candidate generation, residuals and scale selection for one triplet.

pub mod candidates;
pub mod nfa;
pub mod residuals;
pub mod select;

pub use candidates::{build_candidates, CandidateSet, TripletFeatures};
pub use nfa::{nfa_coplanar, nfa_trifocal_lines, nfa_trifocal_points, FamilyNfa, NfaBest};
pub use residuals::{
    coplanar_residual, compute_profile, trifocal_line_residual, trifocal_point_residual, ResidualProfile,
    SymmetricResidual,
};
pub use select::{
    ac_select, family_scores, generate_hypotheses, ransac_select, select, FamilyScores, HypothesisSet, Inliers,
    Method, RobustConfig, RobustError, SelectionResult,
};
