//! Skill-conditioned soft actor-critic with a tanh-squashed Gaussian policy.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batch::{hcat, scale_columns, TransitionBatch};
use crate::error::{Error, Result};
use crate::nn::{self, adam_step, Activation, AdamConfig, AdamState, Mlp, MlpGrads, ScalarAdam};
use crate::rng::{rng_from_seed, Rng};
use crate::scalar::{all_finite, Scalar};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const POLICY_OUTPUT_INIT_SCALE: f64 = 0.01;
pub const DEFAULT_GAMMA: f64 = 0.99;
pub const DEFAULT_POLYAK: f64 = 0.995;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntropyMode {
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub polyak: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub entropy: EntropyMode,
    /// Starting temperature in AUTO mode.
    pub initial_alpha: f64,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            gamma: DEFAULT_GAMMA,
            polyak: DEFAULT_POLYAK,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            alpha_lr: 1e-4,
            entropy: EntropyMode::Auto,
            initial_alpha: 1.0,
            hidden_width: nn::DEFAULT_HIDDEN_WIDTH,
            hidden_layers: nn::DEFAULT_HIDDEN_LAYERS,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return bad("polyak coefficient must lie in [0, 1]");
        }
        if [self.actor_lr, self.critic_lr, self.alpha_lr].iter().any(|&lr| !(lr > 0.0)) {
            return bad("learning rates must be positive");
        }
        match self.entropy {
            EntropyMode::Fixed(v) if !(v > 0.0) => return bad("fixed entropy coefficient must be positive"),
            EntropyMode::Auto if !(self.initial_alpha > 0.0) => return bad("initial_alpha must be positive"),
            _ => {}
        }
        if self.hidden_width == 0 {
            return bad("hidden width must be positive");
        }
        Ok(())
    }
}

/// Gaussian noise matrix drawn row-major from `rng`.
pub fn standard_normal<T: Scalar>(rows: usize, cols: usize, rng: &mut Rng) -> Array2<T> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v)
    })
}

fn softplus<T: Scalar>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// `log(1 - tanh(u)^2)` without cancellation.
fn log_one_minus_tanh_sq<T: Scalar>(u: T) -> T {
    T::lit(2.0) * (T::lit(std::f64::consts::LN_2) - u - softplus(T::lit(-2.0) * u))
}

/// `tanh(u)` kept strictly inside `(-1, 1)` where rounding would reach the ends.
fn squash<T: Scalar>(u: T) -> T {
    let edge = T::one() - T::epsilon();
    u.tanh().max(-edge).min(edge)
}

fn clamp_log_std<T: Scalar>(raw: T) -> T {
    raw.max(T::lit(LOG_STD_MIN)).min(T::lit(LOG_STD_MAX))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicySample<T> {
    pub actions: Array2<T>,
    pub log_probs: Array1<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet<T> {
    pub net: Mlp<T>,
    /// Fixed per-feature scale applied to states for the policy and critics.
    pub obs_scale: Option<Array1<T>>,
    obs_dim: usize,
    skill_dim: usize,
    action_dim: usize,
}

impl<T: Scalar> PolicyNet<T> {
    pub fn new(
        obs_dim: usize,
        skill_dim: usize,
        action_dim: usize,
        hidden_width: usize,
        hidden_layers: usize,
        seed: u64,
    ) -> Result<Self> {
        let sizes = nn::layer_sizes(obs_dim + skill_dim, hidden_width, hidden_layers, 2 * action_dim);
        let mut net = Mlp::init(&sizes, Activation::Relu, seed)?;
        // Near-zero initial means and unit std, whatever the state.
        net.scale_output_layer(T::lit(POLICY_OUTPUT_INIT_SCALE));
        Ok(PolicyNet {
            net,
            obs_scale: None,
            obs_dim,
            skill_dim,
            action_dim,
        })
    }

    pub fn from_mlp(net: Mlp<T>, obs_dim: usize, skill_dim: usize, action_dim: usize) -> Result<Self> {
        if net.input_dim() != obs_dim + skill_dim || net.output_dim() != 2 * action_dim {
            return Err(Error::Shape("policy network does not match the given dimensions".into()));
        }
        Ok(PolicyNet {
            net,
            obs_scale: None,
            obs_dim,
            skill_dim,
            action_dim,
        })
    }

    pub fn with_obs_scale(mut self, scale: &[f64]) -> Result<Self> {
        if scale.len() != self.obs_dim {
            return Err(Error::Shape("policy input scale does not match the observation width".into()));
        }
        self.obs_scale = Some(scale.iter().map(|&v| T::lit(v)).collect());
        Ok(self)
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    /// Critic input rows `(scaled s, z, a)`.
    pub fn critic_inputs(&self, s: ArrayView2<T>, z: ArrayView2<T>, a: ArrayView2<T>) -> Result<Array2<T>> {
        hcat(&[scale_columns(s, self.obs_scale.as_ref())?.view(), z, a])
    }

    pub fn skill_dim(&self) -> usize {
        self.skill_dim
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn inputs(&self, s: ArrayView2<T>, z: ArrayView2<T>) -> Result<Array2<T>> {
        if s.ncols() != self.obs_dim || z.ncols() != self.skill_dim || s.nrows() != z.nrows() {
            return Err(Error::Shape(format!(
                "policy expects ({}, {}) columns, got ({}, {})",
                self.obs_dim,
                self.skill_dim,
                s.ncols(),
                z.ncols()
            )));
        }
        hcat(&[scale_columns(s, self.obs_scale.as_ref())?.view(), z])
    }

    fn split_heads(&self, out: &Array2<T>) -> Result<(Array2<T>, Array2<T>)> {
        if !all_finite(out.iter()) {
            return Err(Error::Numeric("policy network produced a non-finite output".into()));
        }
        let a = self.action_dim;
        Ok((out.slice(s![.., ..a]).to_owned(), out.slice(s![.., a..]).to_owned()))
    }

    /// Squashed actions and log-probabilities for the given noise. With
    /// `noise = None` the action is `tanh(mean)` and the log-probability is
    /// evaluated at zero noise.
    pub fn act_batch(
        &self,
        s: ArrayView2<T>,
        z: ArrayView2<T>,
        noise: Option<ArrayView2<T>>,
    ) -> Result<PolicySample<T>> {
        let out = self.net.predict(self.inputs(s, z)?.view())?;
        let (mean, raw) = self.split_heads(&out)?;
        let rows = mean.nrows();
        let zeros;
        let eta = match noise {
            Some(n) => {
                if n.dim() != mean.dim() {
                    return Err(Error::Shape("noise shape does not match actions".into()));
                }
                n
            }
            None => {
                zeros = Array2::zeros(mean.raw_dim());
                zeros.view()
            }
        };
        let mut actions = Array2::zeros(mean.raw_dim());
        let mut log_probs = Array1::zeros(rows);
        for i in 0..rows {
            let mut lp = T::zero();
            for k in 0..self.action_dim {
                let ls = clamp_log_std(raw[[i, k]]);
                let e = eta[[i, k]];
                let u = mean[[i, k]] + ls.exp() * e;
                actions[[i, k]] = squash(u);
                lp += T::lit(-0.5) * e * e - ls - T::lit(HALF_LN_2PI) - log_one_minus_tanh_sq(u);
            }
            log_probs[i] = lp;
        }
        Ok(PolicySample { actions, log_probs })
    }

    pub fn sample_action_with(
        &self,
        s: &[T],
        z: &[T],
        rng: &mut Rng,
        deterministic: bool,
    ) -> Result<(Vec<T>, T)> {
        let sv = ArrayView2::from_shape((1, s.len()), s).map_err(|e| Error::Shape(e.to_string()))?;
        let zv = ArrayView2::from_shape((1, z.len()), z).map_err(|e| Error::Shape(e.to_string()))?;
        let noise = (!deterministic).then(|| standard_normal::<T>(1, self.action_dim, rng));
        let out = self.act_batch(sv, zv, noise.as_ref().map(|n| n.view()))?;
        Ok((out.actions.row(0).to_vec(), out.log_probs[0]))
    }

    pub fn sample_action(&self, s: &[T], z: &[T], seed: u64, deterministic: bool) -> Result<(Vec<T>, T)> {
        self.sample_action_with(s, z, &mut rng_from_seed(seed), deterministic)
    }

    /// Mean clamped log standard deviation over a batch.
    pub fn mean_log_std(&self, s: ArrayView2<T>, z: ArrayView2<T>) -> Result<T> {
        let out = self.net.predict(self.inputs(s, z)?.view())?;
        let (_, raw) = self.split_heads(&out)?;
        let n = T::lit(raw.len().max(1) as f64);
        Ok(raw.iter().map(|&r| clamp_log_std(r)).sum::<T>() / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticPair<T> {
    pub q1: Mlp<T>,
    pub q2: Mlp<T>,
    pub q1_target: Mlp<T>,
    pub q2_target: Mlp<T>,
}

impl<T: Scalar> CriticPair<T> {
    pub fn new(input_dim: usize, hidden_width: usize, hidden_layers: usize, seed1: u64, seed2: u64) -> Result<Self> {
        let sizes = nn::layer_sizes(input_dim, hidden_width, hidden_layers, 1);
        let q1 = Mlp::init(&sizes, Activation::Relu, seed1)?;
        let q2 = Mlp::init(&sizes, Activation::Relu, seed2)?;
        Self::from_online(q1, q2)
    }

    /// Targets start as copies of the online networks.
    pub fn from_online(q1: Mlp<T>, q2: Mlp<T>) -> Result<Self> {
        if q1.layer_sizes() != q2.layer_sizes() || q1.output_dim() != 1 {
            return Err(Error::Shape("critics must share a shape with scalar output".into()));
        }
        Ok(CriticPair {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.q1.input_dim()
    }

    /// `target <- coef * target + (1 - coef) * online` for both critics.
    pub fn polyak_sync(&mut self, coef: T) {
        self.q1_target.polyak_from(&self.q1, coef);
        self.q2_target.polyak_from(&self.q2, coef);
    }

    pub fn min_q(&self, sza: ArrayView2<T>) -> Result<Array1<T>> {
        let a = self.q1.predict(sza)?;
        let b = self.q2.predict(sza)?;
        Ok(Zip::from(a.column(0)).and(b.column(0)).map_collect(|&x, &y| x.min(y)))
    }

    pub fn min_target_q(&self, sza: ArrayView2<T>) -> Result<Array1<T>> {
        let a = self.q1_target.predict(sza)?;
        let b = self.q2_target.predict(sza)?;
        Ok(Zip::from(a.column(0)).and(b.column(0)).map_collect(|&x, &y| x.min(y)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyCoef {
    pub log_alpha: f64,
    pub target_entropy: f64,
    pub mode: EntropyMode,
    adam: ScalarAdam,
}

impl EntropyCoef {
    pub fn new(mode: EntropyMode, initial_alpha: f64, action_dim: usize) -> Result<Self> {
        let start = match mode {
            EntropyMode::Auto => initial_alpha,
            EntropyMode::Fixed(v) => v,
        };
        if !(start > 0.0 && start.is_finite()) {
            return Err(Error::InvalidConfig(format!("entropy coefficient must be positive, got {start}")));
        }
        Ok(EntropyCoef {
            log_alpha: start.ln(),
            target_entropy: -(action_dim as f64),
            mode,
            adam: ScalarAdam::default(),
        })
    }

    pub fn alpha(&self) -> f64 {
        match self.mode {
            EntropyMode::Fixed(v) => v,
            EntropyMode::Auto => self.log_alpha.exp(),
        }
    }

    /// One Adam step on `log_alpha` with gradient `E[-log pi] - target`.
    pub fn update<T: Scalar>(&mut self, log_probs: &[T], lr: f64) -> Result<()> {
        if self.mode != EntropyMode::Auto || log_probs.is_empty() {
            return Ok(());
        }
        let mean_lp = log_probs.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / log_probs.len() as f64;
        let grad = -mean_lp - self.target_entropy;
        self.adam.step(&mut self.log_alpha, grad, &AdamConfig::with_lr(lr))
    }
}

/// Actor loss `mean(alpha * log pi - min(q1, q2))` and its gradient with
/// respect to the policy parameters, for fixed noise `eta`.
pub fn actor_loss_and_grad<T: Scalar>(
    policy: &PolicyNet<T>,
    critics: &CriticPair<T>,
    alpha: T,
    s: ArrayView2<T>,
    z: ArrayView2<T>,
    eta: ArrayView2<T>,
) -> Result<(T, MlpGrads<T>, Array1<T>)> {
    let n = s.nrows();
    if n == 0 {
        return Err(Error::Validation("actor update on an empty batch".into()));
    }
    let ad = policy.action_dim;
    let inputs = policy.inputs(s, z)?;
    let (out, cache) = policy.net.forward(inputs.view())?;
    let (mean, raw) = policy.split_heads(&out)?;
    if eta.dim() != mean.dim() {
        return Err(Error::Shape("noise shape does not match actions".into()));
    }

    let mut actions = Array2::zeros((n, ad));
    let mut sigma = Array2::zeros((n, ad));
    let mut log_probs = Array1::zeros(n);
    for i in 0..n {
        let mut lp = T::zero();
        for k in 0..ad {
            let ls = clamp_log_std(raw[[i, k]]);
            let sd = ls.exp();
            let e = eta[[i, k]];
            let u = mean[[i, k]] + sd * e;
            actions[[i, k]] = squash(u);
            sigma[[i, k]] = sd;
            lp += T::lit(-0.5) * e * e - ls - T::lit(HALF_LN_2PI) - log_one_minus_tanh_sq(u);
        }
        log_probs[i] = lp;
    }

    let sza = policy.critic_inputs(s, z, actions.view())?;
    let (o1, c1) = critics.q1.forward(sza.view())?;
    let (o2, c2) = critics.q2.forward(sza.view())?;
    let mut pick1 = Array2::zeros((n, 1));
    let mut pick2 = Array2::zeros((n, 1));
    let mut q = Array1::zeros(n);
    for i in 0..n {
        if o1[[i, 0]] <= o2[[i, 0]] {
            pick1[[i, 0]] = T::one();
            q[i] = o1[[i, 0]];
        } else {
            pick2[[i, 0]] = T::one();
            q[i] = o2[[i, 0]];
        }
    }
    let g1 = critics.q1.input_gradient(&c1, pick1.view())?;
    let g2 = critics.q2.input_gradient(&c2, pick2.view())?;
    let a0 = policy.obs_dim + policy.skill_dim;

    let inv_n = T::one() / T::lit(n as f64);
    let two = T::lit(2.0);
    let mut grad_out = Array2::zeros(out.raw_dim());
    let mut loss = T::zero();
    for i in 0..n {
        loss += alpha * log_probs[i] - q[i];
        for k in 0..ad {
            let a = actions[[i, k]];
            let e = eta[[i, k]];
            let sd = sigma[[i, k]];
            let qa = g1[[i, a0 + k]] + g2[[i, a0 + k]];
            let dq_du = qa * (T::one() - a * a);
            grad_out[[i, k]] = (alpha * two * a - dq_du) * inv_n;
            let r = raw[[i, k]];
            let inside = r >= T::lit(LOG_STD_MIN) && r <= T::lit(LOG_STD_MAX);
            grad_out[[i, ad + k]] = if inside {
                (alpha * (-T::one() + two * a * sd * e) - dq_du * sd * e) * inv_n
            } else {
                T::zero()
            };
        }
    }
    let grads = policy.net.backward(&cache, grad_out.view())?;
    Ok((loss * inv_n, grads, log_probs))
}

fn critic_inputs<T: Scalar>(policy: &PolicyNet<T>, batch: &TransitionBatch<T>) -> Result<Array2<T>> {
    policy.critic_inputs(batch.s.view(), batch.z.view(), batch.a.view())
}

/// Mean squared error and its gradient for one critic against fixed targets.
pub fn critic_loss_and_grad<T: Scalar>(
    q: &Mlp<T>,
    sza: ArrayView2<T>,
    targets: ArrayView1<T>,
) -> Result<(T, MlpGrads<T>)> {
    let n = sza.nrows();
    if n == 0 || targets.len() != n {
        return Err(Error::Validation("critic regression needs one target per row".into()));
    }
    let (out, cache) = q.forward(sza)?;
    let inv_n = T::one() / T::lit(n as f64);
    let mut loss = T::zero();
    let mut grad = Array2::zeros((n, 1));
    for i in 0..n {
        let d = out[[i, 0]] - targets[i];
        loss += d * d;
        grad[[i, 0]] = T::lit(2.0) * d * inv_n;
    }
    Ok((loss * inv_n, q.backward(&cache, grad.view())?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SacStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
    pub mean_log_prob: f64,
}

/// Policy, critics, temperature and the optimizer state that goes with them.
#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent<T> {
    pub policy: PolicyNet<T>,
    pub critics: CriticPair<T>,
    pub entropy: EntropyCoef,
    pub cfg: SacConfig,
    actor_opt: AdamState<T>,
    q1_opt: AdamState<T>,
    q2_opt: AdamState<T>,
}

impl<T: Scalar> SacAgent<T> {
    pub fn new(
        obs_dim: usize,
        skill_dim: usize,
        action_dim: usize,
        cfg: SacConfig,
        seeds: [u64; 3],
    ) -> Result<Self> {
        cfg.validate()?;
        let policy = PolicyNet::new(obs_dim, skill_dim, action_dim, cfg.hidden_width, cfg.hidden_layers, seeds[0])?;
        let critics = CriticPair::new(
            obs_dim + skill_dim + action_dim,
            cfg.hidden_width,
            cfg.hidden_layers,
            seeds[1],
            seeds[2],
        )?;
        Self::from_parts(policy, critics, cfg)
    }

    pub fn from_parts(policy: PolicyNet<T>, critics: CriticPair<T>, cfg: SacConfig) -> Result<Self> {
        cfg.validate()?;
        if critics.input_dim() != policy.obs_dim + policy.skill_dim + policy.action_dim {
            return Err(Error::Shape("critic input does not match the policy".into()));
        }
        let entropy = EntropyCoef::new(cfg.entropy, cfg.initial_alpha, policy.action_dim)?;
        Ok(SacAgent {
            actor_opt: AdamState::new(&policy.net),
            q1_opt: AdamState::new(&critics.q1),
            q2_opt: AdamState::new(&critics.q2),
            policy,
            critics,
            entropy,
            cfg,
        })
    }

    /// Regresses both critics onto the soft Bellman target, with rewards
    /// produced by `reward_fn` at call time, then syncs the targets.
    pub fn critic_update<F>(&mut self, batch: &TransitionBatch<T>, reward_fn: F, rng: &mut Rng) -> Result<f64>
    where
        F: FnOnce(&TransitionBatch<T>) -> Result<Array1<T>>,
    {
        if batch.is_empty() {
            return Err(Error::Validation("critic update on an empty batch".into()));
        }
        let rewards = reward_fn(batch)?;
        if rewards.len() != batch.len() {
            return Err(Error::Shape("reward function returned the wrong length".into()));
        }
        let noise = standard_normal::<T>(batch.len(), self.policy.action_dim, rng);
        let next = self.policy.act_batch(batch.s_next.view(), batch.z.view(), Some(noise.view()))?;
        let next_in = self.policy.critic_inputs(batch.s_next.view(), batch.z.view(), next.actions.view())?;
        let q_next = self.critics.min_target_q(next_in.view())?;
        let gamma = T::lit(self.cfg.gamma);
        let alpha = T::lit(self.entropy.alpha());
        let targets = Zip::from(&rewards)
            .and(&q_next)
            .and(&next.log_probs)
            .map_collect(|&r, &q, &lp| r + gamma * (q - alpha * lp));

        let sza = critic_inputs(&self.policy, batch)?;
        let adam = AdamConfig::with_lr(self.cfg.critic_lr);
        let (l1, g1) = critic_loss_and_grad(&self.critics.q1, sza.view(), targets.view())?;
        let (l2, g2) = critic_loss_and_grad(&self.critics.q2, sza.view(), targets.view())?;
        adam_step(&mut self.critics.q1, &g1, &mut self.q1_opt, &adam)?;
        adam_step(&mut self.critics.q2, &g2, &mut self.q2_opt, &adam)?;
        self.critics.polyak_sync(T::lit(self.cfg.polyak));
        Ok(0.5 * (l1 + l2).to_f64_lossy())
    }

    /// Reparameterized policy step. Returns the loss and the log-probabilities
    /// of the sampled actions.
    pub fn actor_update(&mut self, batch: &TransitionBatch<T>, rng: &mut Rng) -> Result<(f64, Array1<T>)> {
        let noise = standard_normal::<T>(batch.len(), self.policy.action_dim, rng);
        let alpha = T::lit(self.entropy.alpha());
        let (loss, grads, log_probs) =
            actor_loss_and_grad(&self.policy, &self.critics, alpha, batch.s.view(), batch.z.view(), noise.view())?;
        let adam = AdamConfig::with_lr(self.cfg.actor_lr);
        adam_step(&mut self.policy.net, &grads, &mut self.actor_opt, &adam)?;
        Ok((loss.to_f64_lossy(), log_probs))
    }

    pub fn entropy_update(&mut self, log_probs: &[T]) -> Result<()> {
        self.entropy.update(log_probs, self.cfg.alpha_lr)
    }

    /// Critic, actor and temperature updates on one batch.
    pub fn update<F>(&mut self, batch: &TransitionBatch<T>, reward_fn: F, rng: &mut Rng) -> Result<SacStats>
    where
        F: FnOnce(&TransitionBatch<T>) -> Result<Array1<T>>,
    {
        let critic_loss = self.critic_update(batch, reward_fn, rng)?;
        let (actor_loss, log_probs) = self.actor_update(batch, rng)?;
        self.entropy_update(log_probs.as_slice().unwrap_or(&log_probs.to_vec()))?;
        let mean_log_prob = log_probs.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / log_probs.len() as f64;
        Ok(SacStats {
            critic_loss,
            actor_loss,
            alpha: self.entropy.alpha(),
            mean_log_prob,
        })
    }
}
