//! Experiment configuration, read from TOML.
//!
//! Every key has a default. A minimal file names the env, the reward mode
//! and, for instruction-weighted modes, the instruction network:
//!
//! ```toml
//! [env]
//! id = "POINTMASS2D"
//!
//! [reward]
//! mode = "DODONT_DIRECT"
//!
//! [paths]
//! instructor = "runs/instructor.bin"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsd::{
    RewardConfig, RewardMode, ScriptedDistance, SkillKind, DEFAULT_ALPHA, DEFAULT_EPSILON,
    DEFAULT_INITIAL_LAMBDA,
};
use crate::env::{EnvId, EnvSpec, TaskId, DEFAULT_EPISODE_LENGTH};
use crate::error::{Error, Result};
use crate::metrics::{DEFAULT_BIN_SIZE, DEFAULT_EVAL_SKILLS};
use crate::nn;
use crate::sac::SacConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub id: EnvId,
    pub episode_length: usize,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            id: EnvId::PointMass2D,
            episode_length: DEFAULT_EPISODE_LENGTH,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardSection {
    pub mode: RewardMode,
    pub alpha: f64,
    /// Uses a constant instruction weight instead of a trained network.
    pub constant_instructor: Option<f64>,
    /// Hand-designed distance for SCRIPTED_DISTANCE.
    pub scripted_task: Option<TaskId>,
    pub scripted_offset: f64,
    pub scripted_floor: f64,
}

impl Default for RewardSection {
    fn default() -> Self {
        RewardSection {
            mode: RewardMode::Metra,
            alpha: DEFAULT_ALPHA,
            constant_instructor: None,
            scripted_task: None,
            scripted_offset: 1.0,
            scripted_floor: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkillSection {
    pub dim: usize,
    pub kind: SkillKind,
}

impl Default for SkillSection {
    fn default() -> Self {
        SkillSection {
            dim: 2,
            kind: SkillKind::ContinuousUnit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiSection {
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub lr: f64,
    pub epsilon: f64,
    pub initial_lambda: f64,
    pub lambda_lr: f64,
}

impl Default for PhiSection {
    fn default() -> Self {
        PhiSection {
            hidden_width: nn::DEFAULT_HIDDEN_WIDTH,
            hidden_layers: nn::DEFAULT_HIDDEN_LAYERS,
            lr: 1e-4,
            epsilon: DEFAULT_EPSILON,
            initial_lambda: DEFAULT_INITIAL_LAMBDA,
            lambda_lr: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub seed: u64,
    pub epochs: usize,
    pub episodes_per_epoch: usize,
    pub gradient_steps_per_epoch: usize,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub eval_every: usize,
    pub eval_skills: usize,
    pub bin_size: f64,
    pub precision: Precision,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            seed: 0,
            epochs: 300,
            episodes_per_epoch: 8,
            gradient_steps_per_epoch: 50,
            batch_size: 256,
            buffer_capacity: 100_000,
            eval_every: 10,
            eval_skills: DEFAULT_EVAL_SKILLS,
            bin_size: DEFAULT_BIN_SIZE,
            precision: Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub clips: Option<PathBuf>,
    pub instructor: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSection,
    pub reward: RewardSection,
    pub skill: SkillSection,
    pub phi: PhiSection,
    pub sac: SacConfig,
    pub train: TrainSection,
    pub paths: PathsSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative paths are taken relative to the config file.
        if let Some(dir) = path.parent() {
            let fix = |p: &mut Option<PathBuf>| {
                if let Some(inner) = p.as_mut() {
                    if inner.is_relative() {
                        *inner = dir.join(&*inner);
                    }
                }
            };
            fix(&mut cfg.paths.clips);
            fix(&mut cfg.paths.instructor);
            fix(&mut cfg.paths.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("config: {e}")))
    }

    pub fn env_spec(&self) -> EnvSpec {
        EnvSpec {
            env_id: self.env.id,
            episode_length: self.env.episode_length,
        }
    }

    pub fn reward_config(&self) -> RewardConfig {
        RewardConfig {
            mode: self.reward.mode,
            alpha: self.reward.alpha,
            scripted: self.reward.scripted_task.map(|task| ScriptedDistance {
                spec: self.env_spec(),
                task,
                offset: self.reward.scripted_offset,
                floor: self.reward.scripted_floor,
            }),
        }
    }

    /// Whether any instruction source (file or constant) is configured.
    pub fn has_instructor_source(&self) -> bool {
        self.paths.instructor.is_some() || self.reward.constant_instructor.is_some()
    }

    /// Field checks plus the instruction-source requirement of the mode.
    /// Whether the instructor file exists is checked when training starts.
    pub fn validate(&self) -> Result<()> {
        self.validate_fields()?;
        self.reward_config().validate(self.has_instructor_source())
    }

    /// Shape and range checks that do not involve the instruction source.
    pub fn validate_fields(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        self.env_spec().validate()?;
        let t = &self.train;
        for (name, v) in [
            ("episodes_per_epoch", t.episodes_per_epoch),
            ("gradient_steps_per_epoch", t.gradient_steps_per_epoch),
            ("batch_size", t.batch_size),
            ("buffer_capacity", t.buffer_capacity),
            ("eval_every", t.eval_every),
            ("eval_skills", t.eval_skills),
            ("skill.dim", self.skill.dim),
            ("phi.hidden_width", self.phi.hidden_width),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if !(t.bin_size > 0.0) {
            return bad("bin_size must be positive".into());
        }
        let p = &self.phi;
        if !(p.lr > 0.0 && p.lambda_lr > 0.0 && p.epsilon > 0.0 && p.initial_lambda > 0.0) {
            return bad("phi learning rates, epsilon and initial_lambda must be positive".into());
        }
        if let Some(k) = self.reward.constant_instructor {
            if !(k > 0.0 && k.is_finite()) {
                return bad(format!("constant_instructor must be positive, got {k}"));
            }
        }
        if let Some(task) = self.reward.scripted_task {
            if task.env() != self.env.id {
                return bad(format!("task {task} is not defined for {}", self.env.id));
            }
        }
        self.sac.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_defaults() {
        let cfg = ExperimentConfig::from_toml("[env]\nid = \"POINTMASS2D\"\n[reward]\nmode = \"METRA\"\n").unwrap();
        assert_eq!(cfg.train.episodes_per_epoch, 8);
        assert_eq!(cfg.train.gradient_steps_per_epoch, 50);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.train.buffer_capacity, 100_000);
        assert_eq!(cfg.train.epochs, 300);
        assert_eq!(cfg.train.eval_every, 10);
        assert_eq!(cfg.phi.initial_lambda, 30.0);
        assert_eq!(cfg.reward.alpha, 2.0);
        assert_eq!(cfg.sac.polyak, 0.995);
    }

    #[test]
    fn instruction_modes_need_a_source() {
        let err = ExperimentConfig::from_toml("[reward]\nmode = \"DODONT_DIRECT\"\n").unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        assert!(ExperimentConfig::from_toml("[reward]\nmode = \"DODONT_DIRECT\"\nconstant_instructor = 1.0\n").is_ok());
        assert!(ExperimentConfig::from_toml("[reward]\nmode = \"ONLY_DOS\"\n[paths]\ninstructor = \"x.bin\"\n").is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::from_toml("[train]\nepoch = 3\n").is_err());
        assert!(ExperimentConfig::from_toml("[train]\nbatch_size = 0\n").is_err());
        assert!(ExperimentConfig::from_toml("[env]\nid = \"CARTPOLE\"\n").is_err());
    }

    #[test]
    fn scripted_mode_checks_task_env() {
        let ok = "[reward]\nmode = \"SCRIPTED_DISTANCE\"\nscripted_task = \"RUN_RIGHT\"\n";
        assert!(ExperimentConfig::from_toml(ok).is_ok());
        let wrong = "[env]\nid = \"SPINNER\"\n[reward]\nmode = \"SCRIPTED_DISTANCE\"\nscripted_task = \"RUN_RIGHT\"\n";
        assert!(ExperimentConfig::from_toml(wrong).is_err());
        assert!(ExperimentConfig::from_toml("[reward]\nmode = \"SCRIPTED_DISTANCE\"\n").is_err());
    }

    #[test]
    fn toml_round_trip() {
        let mut cfg = ExperimentConfig::default();
        cfg.reward.constant_instructor = Some(0.5);
        cfg.train.precision = Precision::F32;
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn relative_paths_follow_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        fs::write(&path, "[paths]\ninstructor = \"ins.bin\"\nout_dir = \"/abs/out\"\n").unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.paths.instructor.unwrap(), dir.path().join("ins.bin"));
        assert_eq!(cfg.paths.out_dir.unwrap(), PathBuf::from("/abs/out"));
    }
}
