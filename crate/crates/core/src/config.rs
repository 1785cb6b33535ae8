//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::algo::{AcerConfig, DdpgConfig};
use crate::error::{Error, Result};
use crate::mdp::EnvParams;
use crate::pretrain::PretrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Ddpg,
    Acer,
}

/// A learning-curve variant: the plain baseline, or the baseline plus
/// demonstration gradients as configured in `[pretrain]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Baseline,
    Pretrained,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Pretrained => "pretrained",
        }
    }
}

/// Where demonstrations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoConfig {
    /// Existing demonstration file. Relative paths resolve against the config file.
    pub path: Option<PathBuf>,
    /// Train an expert and record demonstrations when `path` is absent.
    pub generate: bool,
    pub episodes: usize,
    /// Expert training stops at this normalized score.
    pub expert_threshold: f64,
    /// Simulation-step budget for expert training.
    pub expert_budget: u64,
    pub expert_seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { path: None, generate: true, episodes: 50, expert_threshold: 0.8, expert_budget: 200_000, expert_seed: 1000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: String,
    pub env_params: EnvParams,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    /// Simulation steps per run.
    pub total_steps: u64,
    /// Evaluate every this many simulation steps.
    pub eval_every: u64,
    /// Evaluation episodes for environments without an exact solver.
    pub eval_episodes: usize,
    /// Normalized score counted as solved for steps-to-threshold.
    pub threshold: f64,
    /// End each run at the first evaluation reaching `threshold`.
    pub stop_at_threshold: bool,
    pub variants: Vec<Variant>,
    pub out: PathBuf,
    pub ddpg: DdpgConfig,
    pub acer: AcerConfig,
    pub pretrain: PretrainConfig,
    pub demos: DemoConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: "chain".into(),
            env_params: EnvParams::default(),
            algorithm: Algorithm::Acer,
            seeds: vec![1, 2, 3],
            total_steps: 20_000,
            eval_every: 100,
            eval_episodes: 5,
            threshold: 0.8,
            stop_at_threshold: false,
            variants: vec![Variant::Baseline, Variant::Pretrained],
            out: PathBuf::from("results"),
            ddpg: DdpgConfig::default(),
            acer: AcerConfig::default(),
            pretrain: PretrainConfig::default(),
            demos: DemoConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; a relative demo path is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(demo), Some(dir)) = (&cfg.demos.path, path.parent()) {
            if demo.is_relative() {
                cfg.demos.path = Some(dir.join(demo));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds must not be empty"));
        }
        if self.eval_every == 0 || self.total_steps == 0 {
            return Err(Error::config("total_steps and eval_every must be positive"));
        }
        if self.eval_episodes == 0 {
            return Err(Error::config("eval_episodes must be positive"));
        }
        if self.variants.is_empty() {
            return Err(Error::config("variants must not be empty"));
        }
        if self.demos.episodes == 0 {
            return Err(Error::config("demos.episodes must be positive"));
        }
        self.pretrain.validate()?;
        match self.algorithm {
            Algorithm::Ddpg => self.ddpg.validate(),
            Algorithm::Acer => self.acer.validate(),
        }
    }

    /// Whether any run needs demonstrations.
    pub fn needs_demos(&self) -> bool {
        self.variants.contains(&Variant::Pretrained)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        assert_eq!(ExperimentConfig::from_toml("").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn nested_sections_parse() {
        let cfg = ExperimentConfig::from_toml(
            "env = \"point_mass\"\nalgorithm = \"ddpg\"\nseeds = [4]\n[ddpg]\nactor_lr = 1e-4\n[pretrain]\nhinge_mode = \"literal\"\n",
        )
        .unwrap();
        assert_eq!(cfg.algorithm, Algorithm::Ddpg);
        assert_eq!(cfg.ddpg.actor_lr, 1e-4);
        assert_eq!(cfg.ddpg.critic_lr, DdpgConfig::default().critic_lr);
        assert_eq!(cfg.pretrain.hinge_mode, crate::pretrain::HingeMode::Literal);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        assert!(matches!(ExperimentConfig::from_toml("bogus = 1"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("seeds = []"), Err(Error::Config(_))));
        assert!(matches!(ExperimentConfig::from_toml("[acer]\nc = -1.0"), Err(Error::Config(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = ExperimentConfig::default();
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}
