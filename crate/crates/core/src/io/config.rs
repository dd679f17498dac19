use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ba::BaConfig;
use crate::robust::RobustConfig;
use crate::scale::ScaleConfig;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "CHAINSFM_THREADS";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScaleSection {
    pub degeneracy_floor_deg: f64,
}

impl Default for ScaleSection {
    fn default() -> Self {
        Self { degeneracy_floor_deg: ScaleConfig::default().degeneracy_floor_deg }
    }
}

/// Pipeline configuration.
///
/// ```toml
/// [robust]
/// method = "ac"          # or "fixed"
/// threshold_px = 3.0     # fixed-mode inliers; coplanar constraints in refinement
/// neighbors = 10
/// parallel_floor_deg = 15.0
///
/// [scale]
/// degeneracy_floor_deg = 1.0
///
/// [ba]
/// enabled = true
/// line_floor_deg = 2.0
/// max_iters = 200
/// stage1 = true
/// ftol = 1e-10
/// gtol = 1e-12
/// xtol = 1e-12
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct Config {
    pub robust: RobustConfig,
    pub scale: ScaleSection,
    pub ba: BaSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaSection {
    pub enabled: bool,
    /// Lines whose back-projected planes all meet within this angle of
    /// parallel are left out of refinement.
    pub line_floor_deg: f64,
    #[serde(flatten)]
    pub solver: BaConfig,
}

impl Default for BaSection {
    fn default() -> Self {
        Self { enabled: true, line_floor_deg: 2.0, solver: BaConfig::default() }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let c: Config = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn scale_config(&self) -> ScaleConfig {
        ScaleConfig { degeneracy_floor_deg: self.scale.degeneracy_floor_deg, parallel_floor_deg: self.robust.parallel_floor_deg }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if !(self.robust.threshold_px > 0.0) {
            return bad("robust.threshold_px must be positive");
        }
        if self.robust.neighbors == 0 {
            return bad("robust.neighbors must be at least 1");
        }
        let floors = [self.robust.parallel_floor_deg, self.scale.degeneracy_floor_deg, self.ba.line_floor_deg];
        if !floors.iter().all(|f| (0.0..90.0).contains(f)) {
            return bad("angular floors must lie in [0, 90) degrees");
        }
        if !(self.ba.solver.ftol >= 0.0 && self.ba.solver.gtol >= 0.0 && self.ba.solver.xtol >= 0.0) {
            return bad("ba tolerances must be non-negative");
        }
        Ok(())
    }
}
