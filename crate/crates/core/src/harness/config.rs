//! Episode configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aploc::{CandidateConfig, HierarchyConfig, WeightingConfig};
use crate::error::{Error, Result};
use crate::geometry::{GridSpec, Pose2D};
use crate::mogp::FitOptions;
use crate::rello::AlignmentConfig;
use crate::rfsim::WorldConfig;

pub const EPISODE_FORMAT: &str = "mgprl-episode";
pub const EPISODE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    pub step_length: f64,
    /// Heading change per step is uniform in `±max_heading_change_deg`.
    pub max_heading_change_deg: f64,
    /// Probability that a single AP reading is lost.
    pub dropout: f64,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            step_length: 0.5,
            max_heading_change_deg: 45.0,
            dropout: 0.0,
        }
    }
}

/// Hierarchy parameters; the coarsest grid itself is derived per robot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchySettings {
    pub levels: usize,
    pub coarse_cell: f64,
    pub refinement_factor: usize,
    pub neighborhood_radius: usize,
}

impl Default for HierarchySettings {
    fn default() -> Self {
        Self {
            levels: 4,
            coarse_cell: 0.5,
            refinement_factor: 2,
            neighborhood_radius: 1,
        }
    }
}

impl HierarchySettings {
    pub fn with_grid(&self, grid: GridSpec) -> HierarchyConfig {
        HierarchyConfig {
            levels: self.levels,
            coarsest_grid: grid,
            refinement_factor: self.refinement_factor,
            neighborhood_radius: self.neighborhood_radius,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArtifactConfig {
    /// Also snapshot fields every this many cycles; 0 keeps only the final cycle.
    pub field_every: usize,
    pub messages: bool,
}

impl Default for ArtifactConfig {
    fn default() -> Self {
        Self {
            field_every: 0,
            messages: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpisodeConfig {
    pub format: String,
    pub version: u32,
    pub name: String,
    /// Built-in world (`house` or `bookstore`), used when neither
    /// `world_file` nor an inline `[world]` table is given.
    pub world_preset: Option<String>,
    /// World TOML file; relative paths resolve against the episode file.
    pub world_file: Option<PathBuf>,
    pub world: Option<WorldConfig>,
    pub robots: usize,
    /// Start poses in the world frame; random when empty.
    pub start_poses: Vec<Pose2D>,
    pub initial_samples: usize,
    pub samples_per_cycle: usize,
    pub cycles: usize,
    /// Measurement noise standard deviation (dB).
    pub noise_level: f64,
    pub master_seed: u64,
    pub motion: MotionConfig,
    pub gp: FitOptions,
    pub hierarchy: HierarchySettings,
    pub candidates: CandidateConfig,
    pub weighting: WeightingConfig,
    pub alignment: AlignmentConfig,
    /// Grid resolution for field RMSE / uncertainty metrics (m).
    pub eval_resolution: f64,
    pub consistency_threshold: f64,
    pub artifacts: ArtifactConfig,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            format: EPISODE_FORMAT.into(),
            version: EPISODE_VERSION,
            name: "episode".into(),
            world_preset: None,
            world_file: None,
            world: None,
            robots: 3,
            start_poses: Vec::new(),
            initial_samples: 15,
            samples_per_cycle: 1,
            cycles: 85,
            noise_level: 0.0,
            master_seed: 0,
            motion: MotionConfig::default(),
            gp: FitOptions::default(),
            hierarchy: HierarchySettings::default(),
            candidates: CandidateConfig::default(),
            weighting: WeightingConfig::default(),
            alignment: AlignmentConfig::default(),
            eval_resolution: 0.5,
            consistency_threshold: 0.5,
            artifacts: ArtifactConfig::default(),
        }
    }
}

fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

impl EpisodeConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(s).map_err(|e| Error::Config(e.to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::Config(format!("{}: {}", e.path(), e.inner())))?;
        Ok(cfg)
    }

    /// Parse and pin any relative `world_file` to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        if let Some(wf) = &cfg.world_file {
            if wf.is_relative() {
                cfg.world_file = Some(path.parent().unwrap_or(Path::new(".")).join(wf));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// The world description this episode runs in.
    pub fn resolve_world(&self) -> Result<WorldConfig> {
        let sources = [self.world_preset.is_some(), self.world_file.is_some(), self.world.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if sources > 1 {
            return Err(Error::Config(
                "world: give only one of world_preset, world_file or [world]".into(),
            ));
        }
        let world = if let Some(w) = &self.world {
            w.clone()
        } else if let Some(f) = &self.world_file {
            WorldConfig::load(f).map_err(|e| Error::Config(format!("world_file {}: {e}", f.display())))?
        } else {
            match self.world_preset.as_deref().unwrap_or("house") {
                "house" => WorldConfig::house(),
                "bookstore" => WorldConfig::bookstore(),
                other => return Err(Error::Config(format!("world_preset: unknown world `{other}`"))),
            }
        };
        world.validate()?;
        Ok(world)
    }

    /// Copy with the world inlined, so the episode no longer depends on other files.
    pub fn resolved(&self) -> Result<Self> {
        let mut cfg = self.clone();
        cfg.world = Some(self.resolve_world()?);
        cfg.world_file = None;
        cfg.world_preset = None;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != EPISODE_FORMAT {
            return Err(Error::Config(format!("format: expected `{EPISODE_FORMAT}`")));
        }
        if self.version != EPISODE_VERSION {
            return Err(Error::Version {
                found: self.version,
                expected: EPISODE_VERSION,
            });
        }
        let world = self.resolve_world()?;
        if world.aps.len() < 3 {
            return Err(invalid("world.aps", "at least 3 access points are required"));
        }
        if self.robots < 2 {
            return Err(invalid("robots", "at least 2 robots are required"));
        }
        if !self.start_poses.is_empty() && self.start_poses.len() != self.robots {
            return Err(invalid("start_poses", format!("expected {} poses", self.robots)));
        }
        if self.initial_samples == 0 {
            return Err(invalid("initial_samples", "must be >= 1"));
        }
        if self.samples_per_cycle == 0 {
            return Err(invalid("samples_per_cycle", "must be >= 1"));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(invalid("noise_level", "must be >= 0"));
        }
        if !(self.motion.step_length > 0.0) {
            return Err(invalid("motion.step_length", "must be > 0"));
        }
        if !(0.0..1.0).contains(&self.motion.dropout) {
            return Err(invalid("motion.dropout", "must be in [0, 1)"));
        }
        if !(self.hierarchy.coarse_cell > 0.0) {
            return Err(invalid("hierarchy.coarse_cell", "must be > 0"));
        }
        if !(self.eval_resolution > 0.0) {
            return Err(invalid("eval_resolution", "must be > 0"));
        }
        self.hierarchy
            .with_grid(GridSpec::new([0.0, 0.0], self.hierarchy.coarse_cell, 2, 2)?)
            .validate()?;
        self.weighting.validate()?;
        self.alignment.validate()?;
        Ok(())
    }
}
