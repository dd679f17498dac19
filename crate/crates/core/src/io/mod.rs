pub mod config;
pub mod dataset;
pub mod pipeline;
pub mod ply;
pub mod report;

pub use config::{Config, ConfigError, THREADS_ENV};
pub use dataset::{load_dataset, load_poses, poses_to_string, save_dataset, Dataset, DatasetError, MatchList};
pub use pipeline::{run_pipeline, write_outputs, PipelineOutput};
pub use ply::{export_ply, ply_string, Structure};
pub use report::{RunReport, Status};
