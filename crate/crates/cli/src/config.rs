//! Run configuration loaded from TOML; every field has a default.

use std::path::{Path, PathBuf};

use anyhow::Context;
use replay_dagger::dagger::DaggerConfig;
use replay_dagger::planner::PlannerConfig;
use replay_dagger::simulator::SimConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for episode-level parallelism (0 = all cores).
    pub workers: usize,
    pub output_dir: PathBuf,
    pub sim: SimConfig,
    pub planner: PlannerConfig,
    pub dagger: DaggerConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            workers: 0,
            output_dir: PathBuf::from("out"),
            sim: SimConfig::default(),
            planner: PlannerConfig::default(),
            dagger: DaggerConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.planner.validate()?;
        self.dagger.validate()?;
        self.sim.refine.validate()?;
        self.dagger.loss.raster.validate()?;
        Ok(())
    }
}
