//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use terradapt_core::simulator::{ControlMode, SimConfig, TerrainProfile, BEHAVIOR_DIM};
use terradapt_core::solver::{FitOptions, WeightInit};
use terradapt_core::{io, Error, ModalityLayout, Result};

/// JSON schema for [`ExperimentConfig`] files.
pub const CONFIG_SCHEMA: &str = include_str!("../schema/config.schema.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSettings {
    pub eps: f64,
    pub ridge: f64,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let d = FitOptions::default();
        Self {
            eps: d.eps,
            ridge: d.ridge,
            tol: d.tol,
            max_iters: d.max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TerrainSettings {
    /// Built-in preset, ignored when `profile` is set.
    pub preset: String,
    /// Path to a JSON terrain profile.
    pub profile: Option<PathBuf>,
    /// Replaces the slip of every segment when present.
    pub slip: Option<f64>,
}

impl Default for TerrainSettings {
    fn default() -> Self {
        Self {
            preset: "grass_to_large_rock".into(),
            profile: None,
            slip: Some(0.3),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub episodes: usize,
    pub steps: usize,
    /// Episode `i` uses seed `seed + i`.
    pub seed: u64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { episodes: 5, steps: 900, seed: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub runs: usize,
    /// Run `i` uses seed `seed + i`.
    pub seed: u64,
    /// Step budget per run.
    pub steps: usize,
    pub modes: Vec<ControlMode>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            runs: 10,
            seed: 0,
            steps: 1800,
            modes: vec![ControlMode::Feedforward, ControlMode::WithOffset],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Simulator world; also fixes the modality widths and history `c`.
    pub sim: SimConfig,
    pub behavior_dim: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub solver: SolverSettings,
    pub terrain: TerrainSettings,
    pub train: TrainSettings,
    pub eval: EvalSettings,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            behavior_dim: BEHAVIOR_DIM,
            lambda1: 0.1,
            lambda2: 10.0,
            solver: SolverSettings::default(),
            terrain: TerrainSettings::default(),
            train: TrainSettings::default(),
            eval: EvalSettings::default(),
            out: PathBuf::from("out"),
        }
    }
}

impl ExperimentConfig {
    /// Reads and validates a config file. Relative profile paths resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut config: Self = io::read_json(path)?;
        if let (Some(profile), Some(dir)) = (&config.terrain.profile, path.parent()) {
            if profile.is_relative() {
                config.terrain.profile = Some(dir.join(profile));
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.behavior_dim != BEHAVIOR_DIM {
            return Err(Error::InvalidLayout(format!(
                "the simulator drives {BEHAVIOR_DIM} behavior channels, config asks for {}",
                self.behavior_dim
            )));
        }
        self.sim.validate()?;
        self.fit_options().validate()?;
        if let Some(p) = &self.terrain.profile {
            if !p.is_file() {
                return Err(Error::InvalidOptions(format!("profile {} does not exist", p.display())));
            }
        }
        self.profile()?;
        let c = self.sim.history;
        if self.train.steps < c {
            return Err(Error::InvalidOptions(format!(
                "each training episode needs at least c = {c} steps to form one window, got {}",
                self.train.steps
            )));
        }
        if self.train.episodes == 0 || self.eval.runs == 0 || self.eval.steps == 0 {
            return Err(Error::InvalidOptions("episode, run and step counts must be >= 1".into()));
        }
        if self.eval.modes.is_empty() {
            return Err(Error::InvalidOptions("at least one control mode is required".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<ModalityLayout> {
        self.sim.layout()
    }

    pub fn profile(&self) -> Result<TerrainProfile> {
        let profile = match &self.terrain.profile {
            Some(path) => TerrainProfile::load(path)?,
            None => TerrainProfile::preset(&self.terrain.preset)?,
        };
        let profile = match self.terrain.slip {
            Some(s) => profile.with_slip(s),
            None => profile,
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn fit_options(&self) -> FitOptions {
        FitOptions {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            eps: self.solver.eps,
            ridge: self.solver.ridge,
            tol: self.solver.tol,
            max_iters: self.solver.max_iters,
            init: WeightInit::Zeros,
        }
    }

    pub fn train_seeds(&self) -> Vec<u64> {
        (0..self.train.episodes as u64).map(|i| self.train.seed + i).collect()
    }

    pub fn eval_seeds(&self) -> Vec<u64> {
        (0..self.eval.runs as u64).map(|i| self.eval.seed + i).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_the_reference_experiment() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        assert_eq!(c.sim.history, 15);
        assert_eq!((c.lambda1, c.lambda2), (0.1, 10.0));
        assert_eq!(c.layout().unwrap().feature_dim(), 180);
        assert_eq!(c.eval_seeds(), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn empty_object_parses_to_defaults() {
        let c: ExperimentConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"lamda1": 1}"#).is_err());
    }

    #[test]
    fn short_episodes_are_explained() {
        let mut c = ExperimentConfig::default();
        c.train.steps = 10;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("c = 15"), "{msg}");
    }

    #[test]
    fn missing_profile_file_is_rejected() {
        let mut c = ExperimentConfig::default();
        c.terrain.profile = Some("/nonexistent/profile.json".into());
        assert!(c.validate().is_err());
    }

    #[test]
    fn slip_override_applies_to_every_segment() {
        let p = ExperimentConfig::default().profile().unwrap();
        assert!(p.segments.iter().all(|s| s.slip == 0.3));
    }
}
