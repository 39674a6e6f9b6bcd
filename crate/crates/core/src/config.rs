//! Environment presets bundling every tunable of the pipeline.

use std::fmt;
use std::str::FromStr;

use crate::builder::BuilderConfig;
use crate::descriptor::{DEFAULT_PCA_DIM, DEFAULT_VLAD_CENTERS};
use crate::eval::{Intrinsics, RecallThresholds};
use crate::grid::GridParams;
use crate::reloc::{IcpConfig, VoteParams, DEFAULT_BUNDLE_SIZE, DEFAULT_CANDIDATES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Profile {
    #[default]
    Indoor,
    Outdoor,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Indoor => "indoor",
            Profile::Outdoor => "outdoor",
        }
    }

    pub fn settings(self) -> Settings {
        match self {
            Profile::Indoor => {
                let grid = GridParams::indoor();
                Settings {
                    grid,
                    builder: BuilderConfig::default(),
                    vote: VoteParams::indoor(),
                    icp: IcpConfig::for_cell_size(grid.dl),
                    coarse: RecallThresholds::indoor_coarse(),
                    fine: RecallThresholds::indoor_fine(),
                    intrinsics: Intrinsics::indoor(),
                    bundle_size: DEFAULT_BUNDLE_SIZE,
                    candidates: DEFAULT_CANDIDATES,
                    pca_dim: DEFAULT_PCA_DIM,
                    vlad_k: DEFAULT_VLAD_CENTERS,
                    dedupe_dist: 0.3,
                    dedupe_ang: 20f64.to_radians(),
                }
            }
            Profile::Outdoor => {
                let grid = GridParams::outdoor();
                Settings {
                    grid,
                    vote: VoteParams::outdoor(),
                    icp: IcpConfig::for_cell_size(grid.dl),
                    coarse: RecallThresholds::outdoor_coarse(),
                    fine: RecallThresholds::outdoor_fine(),
                    intrinsics: Intrinsics::outdoor(),
                    dedupe_dist: 3.0,
                    dedupe_ang: 10f64.to_radians(),
                    ..Profile::Indoor.settings()
                }
            }
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "indoor" => Ok(Profile::Indoor),
            "outdoor" => Ok(Profile::Outdoor),
            _ => Err(format!("unknown profile '{s}' (expected indoor or outdoor)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub grid: GridParams,
    pub builder: BuilderConfig,
    pub vote: VoteParams,
    pub icp: IcpConfig,
    pub coarse: RecallThresholds,
    pub fine: RecallThresholds,
    pub intrinsics: Intrinsics,
    pub bundle_size: usize,
    pub candidates: usize,
    pub pca_dim: usize,
    pub vlad_k: usize,
    /// Query selection spacing.
    pub dedupe_dist: f64,
    pub dedupe_ang: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Profile::Indoor.settings()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets() {
        let i = Profile::Indoor.settings();
        assert_eq!(i.grid.dl, 0.4);
        assert_eq!(i.vote.sigma_xyz, 0.45);
        assert_eq!(i.icp.max_dist, 0.8);
        assert_eq!(i.coarse.d_xyz, 0.8);
        assert_eq!(i.fine.d_xyz, 0.3);
        let o = Profile::Outdoor.settings();
        assert_eq!(o.grid.dl, 2.0);
        assert_eq!(o.vote.sigma_xyz, 2.2);
        assert_eq!(o.coarse.d_xyz, 15.0);
        assert_eq!(o.fine.d_xyz, 3.0);
        assert_eq!(o.bundle_size, 15);
        assert_eq!(o.candidates, 5);
        assert_eq!("outdoor".parse::<Profile>().unwrap(), Profile::Outdoor);
    }
}
