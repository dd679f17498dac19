//! Calibration of camera chains from bifocal relative motions, recovering the
//! missing scale ratios from coplanar line pairs and trifocal features.

pub mod ba;
pub mod chain;
pub mod geometry;
pub mod io;
pub mod poly;
pub mod robust;
pub mod scale;
pub mod synth;

pub use ba::{BaConfig, BaError, BaProblem, Stage};
pub use chain::{align_similarity, compose_chain, Alignment, ChainError, ChainInput, ChainOutput, Topology};
pub use geometry::{
    GeometryError, GlobalPose, HomoLine2, HomoPoint2, Intrinsics, Line3, RelativePose, Segment2, Vec2, Vec3,
};
pub use robust::{CandidateSet, Method, RobustConfig, RobustError, SelectionResult, TripletFeatures};
pub use scale::{ScaleConfig, ScaleError, ScaleHypothesis, TripletFrame};
pub use io::{Dataset, DatasetError};
pub use synth::{generate, mutate_overlap, GroundTruth, OverlapMode, SceneSpec, SynthError};
