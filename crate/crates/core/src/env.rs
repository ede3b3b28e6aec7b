//! Deterministic toy continuous-control environments.
//!
//! * `PointMass2D`: observation `(x, y, vx, vy)`, action `(ax, ay)`.
//!   `v' = clip(v + 0.1 a, -1, 1)`, `p' = clip(p + v', -10, 10)` per axis.
//!   The half-plane `x < 0` is the hazard region.
//! * `Spinner`: observation `(x, v, cos θ, sin θ, ω)`, action `(thrust, torque)`.
//!   `v' = clip(v + 0.05 thrust, -1, 1)`, `x' = clip(x + v', -10, 10)`,
//!   `ω' = clip(ω + 0.2 torque, -2, 2)`, `θ' = θ + 0.1 ω'`.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::scalar::Scalar;

pub const DEFAULT_EPISODE_LENGTH: usize = 100;
pub const ARENA_HALF_WIDTH: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EnvId {
    #[serde(rename = "POINTMASS2D")]
    PointMass2D,
    Spinner,
}

impl EnvId {
    pub fn obs_dim(self) -> usize {
        match self {
            EnvId::PointMass2D => 4,
            EnvId::Spinner => 5,
        }
    }

    pub fn action_dim(self) -> usize {
        2
    }

    pub fn name(self) -> &'static str {
        match self {
            EnvId::PointMass2D => "POINTMASS2D",
            EnvId::Spinner => "SPINNER",
        }
    }

    /// Position coordinates used for coverage bins.
    pub fn position(self, obs: &[f64]) -> (f64, Option<f64>) {
        match self {
            EnvId::PointMass2D => (obs[0], Some(obs[1])),
            EnvId::Spinner => (obs[0], None),
        }
    }

    /// Per-feature input scale for learned networks, bringing every feature
    /// to roughly unit range.
    pub fn obs_scale(self) -> &'static [f64] {
        match self {
            EnvId::PointMass2D => &[0.1, 0.1, 1.0, 1.0],
            EnvId::Spinner => &[0.1, 1.0, 1.0, 1.0, 0.5],
        }
    }

    pub fn has_hazard_region(self) -> bool {
        matches!(self, EnvId::PointMass2D)
    }

    /// Zero-shot tasks defined for this environment.
    pub fn tasks(self) -> &'static [TaskId] {
        match self {
            EnvId::PointMass2D => &[TaskId::RunRight, TaskId::RunAny, TaskId::SafeSide],
            EnvId::Spinner => &[TaskId::Translate, TaskId::NoSpin],
        }
    }
}

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "POINTMASS2D" | "POINTMASS" => Ok(EnvId::PointMass2D),
            "SPINNER" => Ok(EnvId::Spinner),
            _ => Err(Error::InvalidConfig(format!("unknown env {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub env_id: EnvId,
    pub episode_length: usize,
}

impl EnvSpec {
    pub fn new(env_id: EnvId) -> Self {
        EnvSpec {
            env_id,
            episode_length: DEFAULT_EPISODE_LENGTH,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.env_id.obs_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.env_id.action_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.episode_length == 0 {
            return Err(Error::InvalidConfig("episode_length must be positive".into()));
        }
        Ok(())
    }
}

/// Environment state as a flat feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation<T> {
    features: Vec<T>,
}

impl<T: Scalar> Observation<T> {
    pub fn new(features: Vec<T>) -> Self {
        Observation { features }
    }

    pub fn as_slice(&self) -> &[T] {
        &self.features
    }

    pub fn into_vec(self) -> Vec<T> {
        self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

impl<T> std::ops::Deref for Observation<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.features
    }
}

fn clip<T: Scalar>(v: T, lo: f64, hi: f64) -> T {
    v.max(T::lit(lo)).min(T::lit(hi))
}

pub fn reset<T: Scalar>(spec: &EnvSpec, _seed: u64) -> Observation<T> {
    let z = T::zero();
    match spec.env_id {
        EnvId::PointMass2D => Observation::new(vec![z; 4]),
        EnvId::Spinner => Observation::new(vec![z, z, T::one(), z, z]),
    }
}

/// Advances one step. Out-of-range action components are clipped to `[-1, 1]`.
pub fn step<T: Scalar>(spec: &EnvSpec, obs: &[T], action: &[T]) -> Result<Observation<T>> {
    if obs.len() != spec.obs_dim() || action.len() != spec.action_dim() {
        return Err(Error::Shape(format!(
            "{}: obs/action dims {}/{} expected {}/{}",
            spec.env_id,
            obs.len(),
            action.len(),
            spec.obs_dim(),
            spec.action_dim()
        )));
    }
    if !obs.iter().chain(action).all(|v| v.is_finite()) {
        return Err(Error::Numeric(format!("{}: non-finite step input", spec.env_id)));
    }
    let a0 = clip(action[0], -1.0, 1.0);
    let a1 = clip(action[1], -1.0, 1.0);
    Ok(match spec.env_id {
        EnvId::PointMass2D => {
            let accel = T::lit(0.1);
            let vx = clip(obs[2] + accel * a0, -1.0, 1.0);
            let vy = clip(obs[3] + accel * a1, -1.0, 1.0);
            let x = clip(obs[0] + vx, -ARENA_HALF_WIDTH, ARENA_HALF_WIDTH);
            let y = clip(obs[1] + vy, -ARENA_HALF_WIDTH, ARENA_HALF_WIDTH);
            Observation::new(vec![x, y, vx, vy])
        }
        EnvId::Spinner => {
            let v = clip(obs[1] + T::lit(0.05) * a0, -1.0, 1.0);
            let x = clip(obs[0] + v, -ARENA_HALF_WIDTH, ARENA_HALF_WIDTH);
            let omega = clip(obs[4] + T::lit(0.2) * a1, -2.0, 2.0);
            let theta = obs[3].atan2(obs[2]) + T::lit(0.1) * omega;
            Observation::new(vec![x, v, theta.cos(), theta.sin(), omega])
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BehaviorId {
    MoveRight,
    MoveLeft,
    Random,
    TranslateStable,
    Spin,
}

impl BehaviorId {
    pub fn name(self) -> &'static str {
        match self {
            BehaviorId::MoveRight => "MOVE_RIGHT",
            BehaviorId::MoveLeft => "MOVE_LEFT",
            BehaviorId::Random => "RANDOM",
            BehaviorId::TranslateStable => "TRANSLATE_STABLE",
            BehaviorId::Spin => "SPIN",
        }
    }

    pub fn supports(self, env: EnvId) -> bool {
        match self {
            BehaviorId::Random => true,
            BehaviorId::MoveRight | BehaviorId::MoveLeft => env == EnvId::PointMass2D,
            BehaviorId::TranslateStable | BehaviorId::Spin => env == EnvId::Spinner,
        }
    }
}

impl fmt::Display for BehaviorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BehaviorId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "MOVE_RIGHT" => Ok(BehaviorId::MoveRight),
            "MOVE_LEFT" => Ok(BehaviorId::MoveLeft),
            "RANDOM" => Ok(BehaviorId::Random),
            "TRANSLATE_STABLE" => Ok(BehaviorId::TranslateStable),
            "SPIN" => Ok(BehaviorId::Spin),
            _ => Err(Error::InvalidConfig(format!("unknown behavior {s:?}"))),
        }
    }
}

/// A scripted demonstrator. Randomness comes from a stream seeded with the
/// clip seed; draws happen once per step, in action-component order.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    behavior: BehaviorId,
    rng: crate::rng::Rng,
    thrust_sign: f64,
}

impl ScriptedPolicy {
    pub fn new(env: EnvId, behavior: BehaviorId, seed: u64) -> Result<Self> {
        if !behavior.supports(env) {
            return Err(Error::InvalidConfig(format!(
                "behavior {behavior} is not defined for {env}"
            )));
        }
        Ok(ScriptedPolicy {
            behavior,
            rng: rng_from_seed(seed),
            thrust_sign: if seed % 2 == 0 { 1.0 } else { -1.0 },
        })
    }

    pub fn act<T: Scalar>(&mut self, obs: &[T]) -> Vec<T> {
        let a: [f64; 2] = match self.behavior {
            BehaviorId::MoveRight => [1.0, self.rng.random_range(-0.2..0.2)],
            BehaviorId::MoveLeft => [-1.0, self.rng.random_range(-0.2..0.2)],
            BehaviorId::Random => [
                self.rng.random_range(-1.0..1.0),
                self.rng.random_range(-1.0..1.0),
            ],
            BehaviorId::TranslateStable => {
                let omega = obs[4].to_f64_lossy();
                [self.thrust_sign, (-2.0 * omega).clamp(-1.0, 1.0)]
            }
            BehaviorId::Spin => [0.0, 1.0],
        };
        a.iter().map(|&v| T::lit(v)).collect()
    }
}

/// Rolls out a scripted behavior from reset; returns exactly `length` frames.
pub fn scripted_demo<T: Scalar>(
    spec: &EnvSpec,
    behavior: BehaviorId,
    seed: u64,
    length: usize,
) -> Result<Vec<Observation<T>>> {
    let mut policy = ScriptedPolicy::new(spec.env_id, behavior, seed)?;
    let mut frames = Vec::with_capacity(length);
    if length == 0 {
        return Ok(frames);
    }
    frames.push(reset::<T>(spec, seed));
    while frames.len() < length {
        let obs = frames.last().unwrap();
        let action = policy.act(obs.as_slice());
        let next = step(spec, obs.as_slice(), &action)?;
        frames.push(next);
    }
    Ok(frames)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TaskId {
    RunRight,
    RunAny,
    SafeSide,
    Translate,
    NoSpin,
}

impl TaskId {
    pub fn name(self) -> &'static str {
        match self {
            TaskId::RunRight => "RUN_RIGHT",
            TaskId::RunAny => "RUN_ANY",
            TaskId::SafeSide => "SAFE_SIDE",
            TaskId::Translate => "TRANSLATE",
            TaskId::NoSpin => "NO_SPIN",
        }
    }

    /// Lowercase form used in CSV column names.
    pub fn column(self) -> String {
        self.name().to_ascii_lowercase()
    }

    pub fn env(self) -> EnvId {
        match self {
            TaskId::RunRight | TaskId::RunAny | TaskId::SafeSide => EnvId::PointMass2D,
            TaskId::Translate | TaskId::NoSpin => EnvId::Spinner,
        }
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "RUN_RIGHT" => Ok(TaskId::RunRight),
            "RUN_ANY" => Ok(TaskId::RunAny),
            "SAFE_SIDE" => Ok(TaskId::SafeSide),
            "TRANSLATE" => Ok(TaskId::Translate),
            "NO_SPIN" => Ok(TaskId::NoSpin),
            _ => Err(Error::InvalidConfig(format!("unknown task {s:?}"))),
        }
    }
}

pub fn task_reward<T: Scalar>(spec: &EnvSpec, task: TaskId, s: &[T], s_next: &[T]) -> Result<T> {
    if task.env() != spec.env_id {
        return Err(Error::InvalidConfig(format!(
            "task {task} is not defined for {}",
            spec.env_id
        )));
    }
    Ok(match task {
        TaskId::RunRight => s_next[0] - s[0],
        TaskId::RunAny => {
            let dx = s_next[0] - s[0];
            let dy = s_next[1] - s[1];
            (dx * dx + dy * dy).sqrt()
        }
        TaskId::SafeSide => {
            if s_next[0] >= T::zero() {
                T::one()
            } else {
                -T::one()
            }
        }
        TaskId::Translate => (s_next[0] - s[0]).abs(),
        TaskId::NoSpin => -s_next[4].abs(),
    })
}
