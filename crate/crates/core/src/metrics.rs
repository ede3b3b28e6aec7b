//! Evaluation metrics over sets of rollouts.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2};

use crate::dsd::{sample_skill_matrix, SkillKind};
use crate::env::{reset, step, task_reward, EnvSpec, Observation, ScriptedPolicy, TaskId};
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, Rng};
use crate::sac::{standard_normal, PolicyNet};
use crate::scalar::Scalar;

pub const DEFAULT_EVAL_SKILLS: usize = 48;
pub const DEFAULT_BIN_SIZE: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub skill: Vec<T>,
    /// Reset state followed by one observation per step.
    pub observations: Vec<Observation<T>>,
    pub actions: Vec<Vec<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn transitions(&self) -> impl Iterator<Item = (&[T], &[T])> {
        self.observations
            .windows(2)
            .map(|w| (w[0].as_slice(), w[1].as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSet<T> {
    pub spec: EnvSpec,
    pub trajectories: Vec<Trajectory<T>>,
}

impl<T: Scalar> RolloutSet<T> {
    pub fn new(spec: EnvSpec) -> Self {
        RolloutSet {
            spec,
            trajectories: Vec::new(),
        }
    }

    pub fn push(&mut self, traj: Trajectory<T>) -> Result<()> {
        if traj.observations.iter().any(|o| o.len() != self.spec.obs_dim()) {
            return Err(Error::Shape("trajectory observations do not match the env".into()));
        }
        self.trajectories.push(traj);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = &Observation<T>> {
        self.trajectories.iter().flat_map(|t| t.observations.iter())
    }

    pub fn state_count(&self) -> usize {
        self.trajectories.iter().map(|t| t.observations.len()).sum()
    }

    /// Every transition as stacked `(s, s')` matrices.
    pub fn transition_matrices(&self) -> (Array2<T>, Array2<T>) {
        let d = self.spec.obs_dim();
        let mut s = Vec::new();
        let mut s2 = Vec::new();
        for t in &self.trajectories {
            for (a, b) in t.transitions() {
                s.extend_from_slice(a);
                s2.extend_from_slice(b);
            }
        }
        let n = s.len() / d.max(1);
        (
            Array2::from_shape_vec((n, d), s).expect("rows are obs_dim wide"),
            Array2::from_shape_vec((n, d), s2).expect("rows are obs_dim wide"),
        )
    }
}

fn check_bin(bin_size: f64) -> Result<()> {
    if !(bin_size > 0.0 && bin_size.is_finite()) {
        return Err(Error::InvalidConfig(format!("bin size must be positive, got {bin_size}")));
    }
    Ok(())
}

fn bin_of<T: Scalar>(spec: &EnvSpec, obs: &[T], bin_size: f64) -> (i64, i64) {
    let feats: Vec<f64> = obs.iter().map(|v| v.to_f64_lossy()).collect();
    let (x, y) = spec.env_id.position(&feats);
    let bx = (x / bin_size).floor() as i64;
    let by = y.map_or(0, |y| (y / bin_size).floor() as i64);
    (bx, by)
}

fn occupied<T: Scalar>(rollouts: &RolloutSet<T>, bin_size: f64) -> Result<HashSet<(i64, i64)>> {
    check_bin(bin_size)?;
    Ok(rollouts
        .states()
        .map(|o| bin_of(&rollouts.spec, o.as_slice(), bin_size))
        .collect())
}

/// Number of distinct position bins visited by any state.
pub fn state_coverage<T: Scalar>(rollouts: &RolloutSet<T>, bin_size: f64) -> Result<usize> {
    Ok(occupied(rollouts, bin_size)?.len())
}

/// Safe bins minus hazardous bins, where a bin is hazardous when its lower
/// x edge lies below zero.
pub fn safe_state_coverage<T: Scalar>(rollouts: &RolloutSet<T>, bin_size: f64) -> Result<i64> {
    if !rollouts.spec.env_id.has_hazard_region() {
        return Err(Error::InvalidConfig(format!(
            "{} has no hazard region",
            rollouts.spec.env_id
        )));
    }
    let bins = occupied(rollouts, bin_size)?;
    let hazardous = bins.iter().filter(|(bx, _)| *bx < 0).count() as i64;
    Ok(bins.len() as i64 - 2 * hazardous)
}

/// Number of distinct bins holding a terminal state.
pub fn diversity_bins<T: Scalar>(rollouts: &RolloutSet<T>, bin_size: f64) -> Result<usize> {
    check_bin(bin_size)?;
    Ok(rollouts
        .trajectories
        .iter()
        .filter_map(|t| t.observations.last())
        .map(|o| bin_of(&rollouts.spec, o.as_slice(), bin_size))
        .collect::<HashSet<_>>()
        .len())
}

/// Fraction of states whose x coordinate is non-negative.
pub fn safe_state_fraction<T: Scalar>(rollouts: &RolloutSet<T>) -> f64 {
    let total = rollouts.state_count();
    if total == 0 {
        return 0.0;
    }
    let safe = rollouts.states().filter(|o| o[0] >= T::zero()).count();
    safe as f64 / total as f64
}

/// Mean of `|omega|` over all Spinner states.
pub fn mean_abs_angular_velocity<T: Scalar>(rollouts: &RolloutSet<T>) -> Result<f64> {
    if rollouts.spec.env_id != crate::env::EnvId::Spinner {
        return Err(Error::InvalidConfig("angular velocity is only defined for Spinner".into()));
    }
    let total = rollouts.state_count();
    if total == 0 {
        return Ok(0.0);
    }
    Ok(rollouts.states().map(|o| o[4].to_f64_lossy().abs()).sum::<f64>() / total as f64)
}

pub trait Controller<T> {
    fn act(&mut self, obs: &[T], skill: &[T]) -> Result<Vec<T>>;
}

/// Mean action of a learned policy.
pub struct DeterministicPolicy<'a, T>(pub &'a PolicyNet<T>);

impl<T: Scalar> Controller<T> for DeterministicPolicy<'_, T> {
    fn act(&mut self, obs: &[T], skill: &[T]) -> Result<Vec<T>> {
        Ok(self.0.sample_action(obs, skill, 0, true)?.0)
    }
}

/// Scripted behavior that ignores the skill.
pub struct ScriptedController(pub ScriptedPolicy);

impl<T: Scalar> Controller<T> for ScriptedController {
    fn act(&mut self, obs: &[T], _skill: &[T]) -> Result<Vec<T>> {
        Ok(self.0.act(obs))
    }
}

/// One episode from reset.
pub fn rollout<T: Scalar, C: Controller<T>>(spec: &EnvSpec, controller: &mut C, skill: &[T]) -> Result<Trajectory<T>> {
    let mut obs = vec![reset::<T>(spec, 0)];
    let mut actions = Vec::with_capacity(spec.episode_length);
    for _ in 0..spec.episode_length {
        let cur = obs.last().expect("starts with the reset state");
        let a = controller.act(cur.as_slice(), skill)?;
        obs.push(step(spec, cur.as_slice(), &a)?);
        actions.push(a);
    }
    Ok(Trajectory {
        skill: skill.to_vec(),
        observations: obs,
        actions,
    })
}

/// Rolls out one episode per row of `skills` in lockstep, one batched policy
/// call per time step. With `noise_rng` the policy samples, drawing a
/// (episodes x action_dim) noise matrix per step; without it the mean action
/// is used.
pub fn rollout_policy_batch<T: Scalar>(
    spec: &EnvSpec,
    policy: &PolicyNet<T>,
    skills: ArrayView2<T>,
    mut noise_rng: Option<&mut Rng>,
) -> Result<RolloutSet<T>> {
    let n = skills.nrows();
    let d = spec.obs_dim();
    let mut trajs: Vec<Trajectory<T>> = skills
        .outer_iter()
        .map(|z| Trajectory {
            skill: z.to_vec(),
            observations: vec![reset::<T>(spec, 0)],
            actions: Vec::with_capacity(spec.episode_length),
        })
        .collect();
    let mut current = Array2::zeros((n, d));
    for _ in 0..spec.episode_length {
        for (i, t) in trajs.iter().enumerate() {
            current
                .row_mut(i)
                .assign(&Array1::from_vec(t.observations.last().unwrap().to_vec()));
        }
        let noise = noise_rng
            .as_deref_mut()
            .map(|rng| standard_normal::<T>(n, policy.action_dim(), rng));
        let sample = policy.act_batch(current.view(), skills, noise.as_ref().map(|m| m.view()))?;
        for (i, t) in trajs.iter_mut().enumerate() {
            let a = sample.actions.row(i).to_vec();
            let next = step(spec, t.observations.last().unwrap().as_slice(), &a)?;
            t.observations.push(next);
            t.actions.push(a);
        }
    }
    let mut set = RolloutSet::new(*spec);
    for t in trajs {
        set.push(t)?;
    }
    Ok(set)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroShot {
    pub mean: f64,
    pub max: f64,
}

pub fn episode_return<T: Scalar>(spec: &EnvSpec, task: TaskId, traj: &Trajectory<T>) -> Result<f64> {
    let mut total = 0.0;
    for (s, s2) in traj.transitions() {
        total += task_reward(spec, task, s, s2)?.to_f64_lossy();
    }
    Ok(total)
}

/// Mean and max episode return of `task` across the rollouts.
pub fn zero_shot_from_rollouts<T: Scalar>(rollouts: &RolloutSet<T>, task: TaskId) -> Result<ZeroShot> {
    if rollouts.is_empty() {
        return Err(Error::Validation("zero-shot evaluation needs at least one rollout".into()));
    }
    let returns = rollouts
        .trajectories
        .iter()
        .map(|t| episode_return(&rollouts.spec, task, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(ZeroShot {
        mean: returns.iter().sum::<f64>() / returns.len() as f64,
        max: returns.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// Samples `n_skills` skills, rolls each out once with `controller`, and
/// scores the episodes on `task`.
pub fn zero_shot_reward<T: Scalar, C: Controller<T>>(
    controller: &mut C,
    spec: &EnvSpec,
    task: TaskId,
    n_skills: usize,
    skill_dim: usize,
    kind: SkillKind,
    seed: u64,
) -> Result<ZeroShot> {
    if n_skills == 0 {
        return Err(Error::InvalidConfig("n_skills must be at least 1".into()));
    }
    let skills = sample_skill_matrix::<T>(n_skills, skill_dim, kind, &mut rng_from_seed(seed))?;
    let mut set = RolloutSet::new(*spec);
    for z in skills.outer_iter() {
        set.push(rollout(spec, controller, &z.to_vec())?)?;
    }
    zero_shot_from_rollouts(&set, task)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub state_coverage: usize,
    /// Absent for environments without a hazard region.
    pub safe_state_coverage: Option<i64>,
    pub zero_shot: BTreeMap<TaskId, ZeroShot>,
    pub diversity_bins: usize,
    pub lambda: f64,
    pub mean_slack: f64,
    pub instructor_mean_p: f64,
}

impl MetricsRow {
    pub fn is_finite(&self) -> bool {
        self.lambda.is_finite()
            && self.mean_slack.is_finite()
            && self.instructor_mean_p.is_finite()
            && self.zero_shot.values().all(|z| z.mean.is_finite() && z.max.is_finite())
    }

    pub fn zero_shot_mean(&self, task: TaskId) -> Option<f64> {
        self.zero_shot.get(&task).map(|z| z.mean)
    }

    pub fn zero_shot_max(&self, task: TaskId) -> Option<f64> {
        self.zero_shot.get(&task).map(|z| z.max)
    }
}

/// Evaluates every metric on one rollout set.
pub fn evaluate_rollouts<T: Scalar>(
    rollouts: &RolloutSet<T>,
    epoch: usize,
    bin_size: f64,
    lambda: f64,
    mean_slack: f64,
    instructor_mean_p: f64,
) -> Result<MetricsRow> {
    let spec = rollouts.spec;
    let mut zero_shot = BTreeMap::new();
    for &task in spec.env_id.tasks() {
        zero_shot.insert(task, zero_shot_from_rollouts(rollouts, task)?);
    }
    Ok(MetricsRow {
        epoch,
        state_coverage: state_coverage(rollouts, bin_size)?,
        safe_state_coverage: if spec.env_id.has_hazard_region() {
            Some(safe_state_coverage(rollouts, bin_size)?)
        } else {
            None
        },
        zero_shot,
        diversity_bins: diversity_bins(rollouts, bin_size)?,
        lambda,
        mean_slack,
        instructor_mean_p,
    })
}

/// Header row, with zero-shot columns in the env's task order.
pub fn csv_header(spec: &EnvSpec) -> String {
    let mut cols = vec!["epoch".to_string(), "state_coverage".into(), "safe_state_coverage".into()];
    for task in spec.env_id.tasks() {
        cols.push(format!("zs_{}_mean", task.column()));
        cols.push(format!("zs_{}_max", task.column()));
    }
    cols.extend(["diversity_bins", "lambda", "mean_slack", "instructor_mean_p"].map(String::from));
    cols.join(",")
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.10e}")
}

pub fn csv_row(spec: &EnvSpec, row: &MetricsRow) -> Result<String> {
    let mut out = String::new();
    let safe = row.safe_state_coverage.map(|v| v.to_string()).unwrap_or_default();
    write!(out, "{},{},{}", row.epoch, row.state_coverage, safe).expect("string write");
    for task in spec.env_id.tasks() {
        let z = row
            .zero_shot
            .get(task)
            .ok_or_else(|| Error::Validation(format!("row is missing task {task}")))?;
        write!(out, ",{},{}", fmt_f64(z.mean), fmt_f64(z.max)).expect("string write");
    }
    write!(
        out,
        ",{},{},{},{}",
        row.diversity_bins,
        fmt_f64(row.lambda),
        fmt_f64(row.mean_slack),
        fmt_f64(row.instructor_mean_p)
    )
    .expect("string write");
    Ok(out)
}

/// Header plus one line per row, newline-terminated.
pub fn csv_document(spec: &EnvSpec, rows: &[MetricsRow]) -> Result<String> {
    let mut out = csv_header(spec);
    out.push('\n');
    for r in rows {
        out.push_str(&csv_row(spec, r)?);
        out.push('\n');
    }
    Ok(out)
}
