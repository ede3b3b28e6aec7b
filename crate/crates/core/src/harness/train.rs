//! The training loop: collect episodes, then interleave phi, dual and SAC
//! updates on replay batches.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::buffer::{ReplayBuffer, Transition};
use super::checkpoint::{save_checkpoint, Checkpoint};
use super::config::ExperimentConfig;
use crate::batch::TransitionBatch;
use crate::dsd::{
    constraint_bounds, intrinsic_rewards, mean_clipped_slack, mean_instruction_weight, phi_objective,
    sample_skill_matrix, DualVariable, PhiNet,
};
use crate::error::{Error, Result};
use crate::instructor::{Instructor, InstructorNet};
use crate::metrics::{csv_header, csv_row, evaluate_rollouts, rollout_policy_batch, MetricsRow, RolloutSet};
use crate::nn::{adam_step, AdamConfig, AdamState};
use crate::rng::{derive_rng, derive_seed, Rng};
use crate::sac::SacAgent;
use crate::scalar::Scalar;

/// Sub-seed tags; each consumer draws from `derive_seed(master, tag)`.
pub mod tags {
    pub const PHI: &str = "phi";
    pub const POLICY: &str = "policy";
    pub const CRITIC1: &str = "critic1";
    pub const CRITIC2: &str = "critic2";
    pub const SKILL: &str = "skill";
    pub const ROLLOUT: &str = "rollout";
    pub const BUFFER: &str = "buffer";
    pub const SAC: &str = "sac";
    pub const EVAL: &str = "eval";
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const DUMP_FILE: &str = "nonfinite_batch.json";

/// Everything a run learns, kept in memory.
#[derive(Debug, Clone)]
pub struct TrainingState<T> {
    pub epoch: usize,
    pub phi: PhiNet<T>,
    pub agent: SacAgent<T>,
    pub dual: DualVariable,
    pub buffer: ReplayBuffer<T>,
    pub instructor: Option<Instructor<T>>,
    phi_opt: AdamState<T>,
}

impl<T: Scalar> TrainingState<T> {
    pub fn checkpoint(&self, cfg: &ExperimentConfig) -> Checkpoint<T> {
        Checkpoint {
            epoch: self.epoch,
            spec: cfg.env_spec(),
            phi: self.phi.clone(),
            policy: self.agent.policy.clone(),
            critics: self.agent.critics.clone(),
            dual: self.dual,
            log_alpha: self.agent.entropy.log_alpha,
            buffer: self.buffer.meta(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome<T> {
    pub rows: Vec<MetricsRow>,
    /// The metrics CSV exactly as written.
    pub csv: String,
    pub state: TrainingState<T>,
    /// Evaluation rollouts behind the last row.
    pub last_eval: Option<RolloutSet<T>>,
}

/// Resolves the configured instruction source: a constant, a trained
/// network file, or nothing.
pub fn load_instructor<T: Scalar>(cfg: &ExperimentConfig) -> Result<Option<Instructor<T>>> {
    if let Some(k) = cfg.reward.constant_instructor {
        return Instructor::constant(T::lit(k)).map(Some);
    }
    match &cfg.paths.instructor {
        Some(path) => {
            if !path.exists() {
                return Err(Error::InvalidConfig(format!(
                    "instruction network {} does not exist",
                    path.display()
                )));
            }
            let net: InstructorNet<f64> = InstructorNet::load(path)?;
            let net = InstructorNet::from_mlp(net.mlp().cast::<T>(), true)?;
            Ok(Some(Instructor::Net(net)))
        }
        None if cfg.reward.mode.requires_instructor() => Err(Error::InvalidConfig(format!(
            "reward mode {} requires paths.instructor or reward.constant_instructor",
            cfg.reward.mode
        ))),
        None => Ok(None),
    }
}

/// Fixed skills used for every evaluation of a run.
pub fn eval_skills<T: Scalar>(cfg: &ExperimentConfig) -> Result<Array2<T>> {
    sample_skill_matrix(
        cfg.train.eval_skills,
        cfg.skill.dim,
        cfg.skill.kind,
        &mut derive_rng(cfg.train.seed, tags::EVAL),
    )
}

/// Deterministic rollouts for the evaluation skills and the metrics row
/// computed from them.
pub fn evaluate<T: Scalar>(
    cfg: &ExperimentConfig,
    state: &TrainingState<T>,
    skills: &Array2<T>,
    mean_slack: f64,
) -> Result<(MetricsRow, RolloutSet<T>)> {
    let spec = cfg.env_spec();
    let rollouts = rollout_policy_batch(&spec, &state.agent.policy, skills.view(), None)?;
    let (s, s2) = rollouts.transition_matrices();
    let p = mean_instruction_weight(cfg.reward.mode, state.instructor.as_ref(), s.view(), s2.view())?;
    let row = evaluate_rollouts(&rollouts, state.epoch, cfg.train.bin_size, state.dual.lambda(), mean_slack, p)?;
    if !row.is_finite() {
        return Err(Error::Numeric(format!("non-finite metrics at epoch {}", state.epoch)));
    }
    Ok((row, rollouts))
}

/// Mean clipped slack of the evaluation transitions.
pub fn eval_slack<T: Scalar>(cfg: &ExperimentConfig, state: &TrainingState<T>, rollouts: &RolloutSet<T>) -> Result<f64> {
    let (s, s2) = rollouts.transition_matrices();
    let bounds = constraint_bounds(cfg.reward.mode, state.instructor.as_ref(), s.view(), s2.view())?;
    Ok(mean_clipped_slack(
        &state.phi,
        s.view(),
        s2.view(),
        bounds.as_slice().expect("contiguous"),
        T::lit(state.dual.epsilon),
    )?
    .to_f64_lossy())
}

/// Rebuilds a state around checkpointed networks. Optimizer moments start
/// fresh and the replay buffer starts empty.
pub fn state_from_checkpoint<T: Scalar>(
    cfg: &ExperimentConfig,
    ck: Checkpoint<T>,
    instructor: Option<Instructor<T>>,
) -> Result<TrainingState<T>> {
    let spec = cfg.env_spec();
    if ck.spec.env_id != spec.env_id || ck.policy.skill_dim() != cfg.skill.dim {
        return Err(Error::InvalidConfig("checkpoint does not match the config".into()));
    }
    let mut agent = SacAgent::from_parts(ck.policy, ck.critics, cfg.sac.clone())?;
    agent.entropy.log_alpha = ck.log_alpha;
    Ok(TrainingState {
        epoch: ck.epoch,
        phi_opt: AdamState::new(&ck.phi.net),
        phi: ck.phi,
        agent,
        dual: ck.dual,
        buffer: ReplayBuffer::new(cfg.train.buffer_capacity, spec.obs_dim(), spec.action_dim(), cfg.skill.dim)?,
        instructor,
    })
}

/// Recomputes a metrics row from a checkpoint. The slack column is measured
/// on the evaluation transitions.
pub fn evaluate_checkpoint<T: Scalar>(
    cfg: &ExperimentConfig,
    ck: Checkpoint<T>,
    instructor: Option<Instructor<T>>,
) -> Result<MetricsRow> {
    let state = state_from_checkpoint(cfg, ck, instructor)?;
    let skills = eval_skills::<T>(cfg)?;
    let (mut row, rollouts) = evaluate(cfg, &state, &skills, 0.0)?;
    row.mean_slack = eval_slack(cfg, &state, &rollouts)?;
    Ok(row)
}

pub fn init_state<T: Scalar>(cfg: &ExperimentConfig, instructor: Option<Instructor<T>>) -> Result<TrainingState<T>> {
    cfg.validate_fields()?;
    cfg.reward_config().validate(instructor.is_some())?;
    let spec = cfg.env_spec();
    let seed = cfg.train.seed;
    let (obs, act, dim) = (spec.obs_dim(), spec.action_dim(), cfg.skill.dim);
    let phi = PhiNet::new(obs, dim, cfg.phi.hidden_width, cfg.phi.hidden_layers, derive_seed(seed, tags::PHI))?
        .with_obs_scale(spec.env_id.obs_scale())?;
    let mut agent = SacAgent::new(
        obs,
        dim,
        act,
        cfg.sac.clone(),
        [
            derive_seed(seed, tags::POLICY),
            derive_seed(seed, tags::CRITIC1),
            derive_seed(seed, tags::CRITIC2),
        ],
    )?;
    agent.policy = agent.policy.clone().with_obs_scale(spec.env_id.obs_scale())?;
    Ok(TrainingState {
        epoch: 0,
        phi_opt: AdamState::new(&phi.net),
        phi,
        agent,
        dual: DualVariable::new(cfg.phi.initial_lambda, cfg.phi.epsilon)?,
        buffer: ReplayBuffer::new(cfg.train.buffer_capacity, obs, act, dim)?,
        instructor,
    })
}

fn batch_json<T: Scalar>(batch: &TransitionBatch<T>) -> serde_json::Value {
    let mat = |m: &Array2<T>| -> Vec<Vec<f64>> {
        m.outer_iter()
            .map(|r| r.iter().map(|v| v.to_f64_lossy()).collect())
            .collect()
    };
    serde_json::json!({
        "s": mat(&batch.s),
        "a": mat(&batch.a),
        "s_next": mat(&batch.s_next),
        "z": mat(&batch.z),
    })
}

/// Writes the offending batch next to the metrics, when there is an output
/// directory, and builds the abort error.
fn nonfinite_abort<T: Scalar>(
    out_dir: Option<&Path>,
    what: &str,
    epoch: usize,
    step: usize,
    batch: &TransitionBatch<T>,
) -> Error {
    let mut msg = format!("non-finite {what} at epoch {epoch}, gradient step {step}");
    if let Some(dir) = out_dir {
        let path = dir.join(DUMP_FILE);
        let body = serde_json::json!({ "what": what, "epoch": epoch, "step": step, "batch": batch_json(batch) });
        if fs::write(&path, body.to_string()).is_ok() {
            msg.push_str(&format!("; batch written to {}", path.display()));
        }
    }
    Error::Numeric(msg)
}

struct Sink {
    file: Option<(PathBuf, File)>,
}

impl Sink {
    fn line(&mut self, csv: &mut String, line: &str) -> Result<()> {
        csv.push_str(line);
        csv.push('\n');
        if let Some((path, f)) = self.file.as_mut() {
            writeln!(f, "{line}")
                .and_then(|_| f.flush())
                .map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(())
    }
}

/// One epoch of collection plus gradient steps. Returns the mean slack over
/// the epoch's steps.
fn train_epoch<T: Scalar>(
    cfg: &ExperimentConfig,
    state: &mut TrainingState<T>,
    rngs: &mut [Rng; 4],
) -> Result<f64> {
    let spec = cfg.env_spec();
    let [skill_rng, rollout_rng, buffer_rng, sac_rng] = rngs;
    let skills = sample_skill_matrix::<T>(cfg.train.episodes_per_epoch, cfg.skill.dim, cfg.skill.kind, skill_rng)?;
    let episodes = rollout_policy_batch(&spec, &state.agent.policy, skills.view(), Some(rollout_rng))?;
    // Episodes enter the buffer in index order.
    for traj in &episodes.trajectories {
        for (t, (s, s2)) in traj.transitions().enumerate() {
            state.buffer.insert(&Transition {
                s: s.to_vec(),
                a: traj.actions[t].clone(),
                s_next: s2.to_vec(),
                z: traj.skill.clone(),
            })?;
        }
    }

    let reward_cfg = cfg.reward_config();
    let phi_adam = AdamConfig::with_lr(cfg.phi.lr);
    let out_dir = cfg.paths.out_dir.as_deref();
    let epoch = state.epoch;
    let mut slack_total = 0.0;
    for step in 0..cfg.train.gradient_steps_per_epoch {
        let batch = state.buffer.sample(cfg.train.batch_size, buffer_rng)?;
        let ins = state.instructor.as_ref();
        let bounds = constraint_bounds(cfg.reward.mode, ins, batch.s.view(), batch.s_next.view())?;
        let bounds = bounds.as_slice().expect("contiguous");
        let lambda = T::lit(state.dual.lambda());
        let obj = phi_objective(&batch, &state.phi, lambda, T::lit(state.dual.epsilon), bounds)?;
        if !obj.value.is_finite() || !obj.grads.is_finite() {
            return Err(nonfinite_abort(out_dir, "phi objective", epoch, step, &batch));
        }
        let mut descent = obj.grads;
        descent.scale(-T::one());
        adam_step(&mut state.phi.net, &descent, &mut state.phi_opt, &phi_adam)?;
        let slack = obj.mean_slack.to_f64_lossy();
        state.dual.apply_mean_slack(slack, cfg.phi.lambda_lr)?;
        slack_total += slack;

        let phi = &state.phi;
        let stats = state
            .agent
            .update(&batch, |b| intrinsic_rewards(&reward_cfg, phi, ins, b), sac_rng)
            .map_err(|e| match e {
                Error::Numeric(_) => nonfinite_abort(out_dir, "SAC update", epoch, step, &batch),
                other => other,
            })?;
        if ![stats.critic_loss, stats.actor_loss, stats.alpha].iter().all(|v| v.is_finite()) {
            return Err(nonfinite_abort(out_dir, "SAC loss", epoch, step, &batch));
        }
    }
    Ok(slack_total / cfg.train.gradient_steps_per_epoch as f64)
}

/// Loads the instruction source named by the config, then trains.
pub fn run_training<T: Scalar>(cfg: &ExperimentConfig) -> Result<TrainingOutcome<T>> {
    let instructor = load_instructor::<T>(cfg)?;
    run_training_with(cfg, instructor)
}

/// Trains with an explicit instruction source. Rows are emitted every
/// `eval_every` epochs and at the final epoch; with an output directory the
/// CSV is streamed to `metrics.csv` and a checkpoint is refreshed at each row.
pub fn run_training_with<T: Scalar>(
    cfg: &ExperimentConfig,
    instructor: Option<Instructor<T>>,
) -> Result<TrainingOutcome<T>> {
    let mut state = init_state(cfg, instructor)?;
    let spec = cfg.env_spec();
    let seed = cfg.train.seed;
    let mut rngs = [
        derive_rng(seed, tags::SKILL),
        derive_rng(seed, tags::ROLLOUT),
        derive_rng(seed, tags::BUFFER),
        derive_rng(seed, tags::SAC),
    ];
    let skills = eval_skills::<T>(cfg)?;

    let mut sink = Sink { file: None };
    if let Some(dir) = &cfg.paths.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(METRICS_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        sink.file = Some((path, file));
    }
    let mut csv = String::new();
    sink.line(&mut csv, &csv_header(&spec))?;

    let mut rows = Vec::new();
    let mut last_eval = None;
    for epoch in 1..=cfg.train.epochs {
        state.epoch = epoch;
        let slack = train_epoch(cfg, &mut state, &mut rngs)?;
        if epoch % cfg.train.eval_every == 0 || epoch == cfg.train.epochs {
            let (row, rollouts) = evaluate(cfg, &state, &skills, slack)?;
            sink.line(&mut csv, &csv_row(&spec, &row)?)?;
            if let Some(dir) = &cfg.paths.out_dir {
                save_checkpoint(&dir.join(CHECKPOINT_DIR), &state.checkpoint(cfg))?;
            }
            rows.push(row);
            last_eval = Some(rollouts);
        }
    }
    Ok(TrainingOutcome {
        rows,
        csv,
        state,
        last_eval,
    })
}
