//! Distance-maximizing skill discovery core.
//!
//! The representation `phi: S -> R^D` is trained to ascend
//!
//! ```text
//! J_phi = E[(phi(s') - phi(s))^T z + lambda * min(eps, c(s, s') - ||phi(s') - phi(s)||)]
//! ```
//!
//! where the bound `c` is the instruction probability in the delayed mode and
//! `1` otherwise. The dual variable descends `lambda * E[min(eps, c - ||dphi||)]`,
//! so it grows while the constraint is violated on average.

use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, StandardNormal};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::batch::{scale_columns, vcat, TransitionBatch};
use crate::env::{task_reward, EnvSpec, TaskId};
use crate::error::{Error, Result};
use crate::instructor::{only_dos_transform, Instructor};
use crate::nn::{self, Activation, Mlp, MlpGrads};
use crate::rng::{rng_from_seed, Rng};
use crate::scalar::Scalar;

pub const DEFAULT_EPSILON: f64 = 1e-3;
pub const DEFAULT_INITIAL_LAMBDA: f64 = 30.0;
pub const DEFAULT_ALPHA: f64 = 2.0;
/// Floor applied to the squared norm before the square root.
pub const NORM_FLOOR_SQ: f64 = 1e-12;
/// `log_lambda` is kept inside `[-LIMIT, LIMIT]` so that lambda stays finite.
pub const LOG_LAMBDA_LIMIT: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SkillKind {
    /// `N(0, I)` normalized to the unit sphere.
    ContinuousUnit,
    DiscreteOnehot,
    /// Raw `N(0, I)` draw, without normalization.
    ContinuousGaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skill<T> {
    pub z: Vec<T>,
    pub kind: SkillKind,
}

pub fn sample_skill_with<T: Scalar>(dim: usize, kind: SkillKind, rng: &mut Rng) -> Result<Skill<T>> {
    if dim == 0 {
        return Err(Error::InvalidConfig("skill dimension must be positive".into()));
    }
    let z = match kind {
        SkillKind::ContinuousUnit | SkillKind::ContinuousGaussian => {
            let mut draw: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
            if kind == SkillKind::ContinuousUnit {
                let norm = draw.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    draw.iter_mut().for_each(|v| *v /= norm);
                } else {
                    draw[0] = 1.0;
                }
            }
            draw.into_iter().map(T::lit).collect()
        }
        SkillKind::DiscreteOnehot => {
            let hot = rng.random_range(0..dim);
            (0..dim)
                .map(|i| if i == hot { T::one() } else { T::zero() })
                .collect()
        }
    };
    Ok(Skill { z, kind })
}

pub fn sample_skill<T: Scalar>(dim: usize, kind: SkillKind, seed: u64) -> Result<Skill<T>> {
    sample_skill_with(dim, kind, &mut rng_from_seed(seed))
}

/// `n` skills stacked as rows.
pub fn sample_skill_matrix<T: Scalar>(
    n: usize,
    dim: usize,
    kind: SkillKind,
    rng: &mut Rng,
) -> Result<Array2<T>> {
    let mut out = Array2::zeros((n, dim));
    for i in 0..n {
        let skill = sample_skill_with::<T>(dim, kind, rng)?;
        out.row_mut(i).assign(&Array1::from_vec(skill.z));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RewardMode {
    Metra,
    DodontDirect,
    DodontDelayed,
    Additive,
    OnlyDos,
    ScriptedDistance,
}

impl RewardMode {
    pub const ALL: [RewardMode; 6] = [
        RewardMode::Metra,
        RewardMode::DodontDirect,
        RewardMode::DodontDelayed,
        RewardMode::Additive,
        RewardMode::OnlyDos,
        RewardMode::ScriptedDistance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardMode::Metra => "METRA",
            RewardMode::DodontDirect => "DODONT_DIRECT",
            RewardMode::DodontDelayed => "DODONT_DELAYED",
            RewardMode::Additive => "ADDITIVE",
            RewardMode::OnlyDos => "ONLY_DOS",
            RewardMode::ScriptedDistance => "SCRIPTED_DISTANCE",
        }
    }

    pub fn requires_instructor(self) -> bool {
        !matches!(self, RewardMode::Metra | RewardMode::ScriptedDistance)
    }

    /// Instruction weight as this mode uses it, applied to a raw probability.
    pub fn instruction_weight<T: Scalar>(self, p: T) -> T {
        match self {
            RewardMode::OnlyDos => only_dos_transform(p),
            _ => p,
        }
    }
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let up = s.trim().to_ascii_uppercase();
        RewardMode::ALL
            .into_iter()
            .find(|m| m.name() == up)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown reward mode {s:?}")))
    }
}

/// Hand-designed distance `max(task_reward(s, s') + offset, floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedDistance {
    pub spec: EnvSpec,
    pub task: TaskId,
    pub offset: f64,
    pub floor: f64,
}

impl ScriptedDistance {
    pub fn distance<T: Scalar>(&self, s: &[T], s_next: &[T]) -> Result<T> {
        let r = task_reward(&self.spec, self.task, s, s_next)?;
        Ok((r + T::lit(self.offset)).max(T::lit(self.floor)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    pub mode: RewardMode,
    pub alpha: f64,
    pub scripted: Option<ScriptedDistance>,
}

impl RewardConfig {
    pub fn new(mode: RewardMode, alpha: f64) -> Self {
        RewardConfig {
            mode,
            alpha,
            scripted: None,
        }
    }

    pub fn validate(&self, instructor_present: bool) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.mode.requires_instructor() && !instructor_present {
            return Err(Error::InvalidConfig(format!(
                "reward mode {} requires an instruction network",
                self.mode
            )));
        }
        if self.mode == RewardMode::ScriptedDistance {
            let sd = self.scripted.as_ref().ok_or_else(|| {
                Error::InvalidConfig("SCRIPTED_DISTANCE needs a hand-designed distance".into())
            })?;
            if sd.floor <= 0.0 {
                return Err(Error::InvalidConfig("scripted distance floor must be positive".into()));
            }
        }
        Ok(())
    }
}

/// State representation `phi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhiNet<T> {
    pub net: Mlp<T>,
    /// Fixed per-feature scale applied to states before the network.
    pub obs_scale: Option<Array1<T>>,
}

impl<T: Scalar> PhiNet<T> {
    pub fn new(
        obs_dim: usize,
        skill_dim: usize,
        hidden_width: usize,
        hidden_layers: usize,
        seed: u64,
    ) -> Result<Self> {
        let sizes = nn::layer_sizes(obs_dim, hidden_width, hidden_layers, skill_dim);
        Ok(PhiNet {
            net: Mlp::init(&sizes, Activation::Relu, seed)?,
            obs_scale: None,
        })
    }

    pub fn from_mlp(net: Mlp<T>) -> Self {
        PhiNet { net, obs_scale: None }
    }

    pub fn with_obs_scale(mut self, scale: &[f64]) -> Result<Self> {
        if scale.len() != self.net.input_dim() {
            return Err(Error::Shape("phi input scale does not match the input width".into()));
        }
        self.obs_scale = Some(scale.iter().map(|&v| T::lit(v)).collect());
        Ok(self)
    }

    pub fn skill_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn embed(&self, states: ArrayView2<T>) -> Result<Array2<T>> {
        self.net.predict(scale_columns(states, self.obs_scale.as_ref())?.view())
    }

    /// `phi(s') - phi(s)` row by row, from one stacked forward pass.
    pub fn deltas(&self, s: ArrayView2<T>, s_next: ArrayView2<T>) -> Result<Array2<T>> {
        let n = s.nrows();
        let out = self.net.predict(scale_columns(vcat(s_next, s)?.view(), self.obs_scale.as_ref())?.view())?;
        Ok(&out.slice(s![..n, ..]) - &out.slice(s![n.., ..]))
    }
}

fn row_norm<T: Scalar>(row: ndarray::ArrayView1<T>) -> T {
    row.iter()
        .map(|&v| v * v)
        .sum::<T>()
        .max(T::lit(NORM_FLOOR_SQ))
        .sqrt()
}

fn row_dot<T: Scalar>(a: ndarray::ArrayView1<T>, b: ndarray::ArrayView1<T>) -> T {
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

/// Intrinsic reward for one transition.
pub fn intrinsic_reward<T: Scalar>(
    cfg: &RewardConfig,
    phi: &PhiNet<T>,
    instructor: Option<&Instructor<T>>,
    s: &[T],
    s_next: &[T],
    z: &[T],
) -> Result<T> {
    let view = |v: &[T]| ArrayView2::from_shape((1, v.len()), v).map(|a| a.to_owned());
    let sh = |e: ndarray::ShapeError| Error::Shape(e.to_string());
    let batch = TransitionBatch::without_actions(
        view(s).map_err(sh)?,
        view(s_next).map_err(sh)?,
        view(z).map_err(sh)?,
    )?;
    Ok(intrinsic_rewards(cfg, phi, instructor, &batch)?[0])
}

/// Intrinsic rewards for every row of `batch` under the current `phi`.
pub fn intrinsic_rewards<T: Scalar>(
    cfg: &RewardConfig,
    phi: &PhiNet<T>,
    instructor: Option<&Instructor<T>>,
    batch: &TransitionBatch<T>,
) -> Result<Array1<T>> {
    if batch.skill_dim() != phi.skill_dim() {
        return Err(Error::Shape(format!(
            "skill dim {} does not match phi output {}",
            batch.skill_dim(),
            phi.skill_dim()
        )));
    }
    let deltas = phi.deltas(batch.s.view(), batch.s_next.view())?;
    let base: Array1<T> = deltas
        .outer_iter()
        .zip(batch.z.outer_iter())
        .map(|(d, z)| row_dot(d, z))
        .collect();
    let alpha = T::lit(cfg.alpha);
    let need_instructor = || {
        instructor.ok_or_else(|| {
            Error::InvalidConfig(format!("reward mode {} requires an instruction network", cfg.mode))
        })
    };
    Ok(match cfg.mode {
        RewardMode::Metra | RewardMode::DodontDelayed => {
            if cfg.mode == RewardMode::DodontDelayed {
                need_instructor()?;
            }
            base
        }
        RewardMode::DodontDirect | RewardMode::OnlyDos => {
            let p = need_instructor()?.predict_batch(batch.s.view(), batch.s_next.view())?;
            let mode = cfg.mode;
            ndarray::Zip::from(&base)
                .and(&p)
                .map_collect(|&r, &p| alpha * mode.instruction_weight(p) * r)
        }
        RewardMode::Additive => {
            let p = need_instructor()?.predict_batch(batch.s.view(), batch.s_next.view())?;
            ndarray::Zip::from(&base).and(&p).map_collect(|&r, &p| r + alpha * p)
        }
        RewardMode::ScriptedDistance => {
            let sd = cfg.scripted.ok_or_else(|| {
                Error::InvalidConfig("SCRIPTED_DISTANCE needs a hand-designed distance".into())
            })?;
            let mut out = Array1::zeros(batch.len());
            for i in 0..batch.len() {
                let d = sd.distance(&batch.s.row(i).to_vec(), &batch.s_next.row(i).to_vec())?;
                out[i] = alpha * d * base[i];
            }
            out
        }
    })
}

/// Per-pair constraint bound `c(s, s')`.
pub fn constraint_bounds<T: Scalar>(
    mode: RewardMode,
    instructor: Option<&Instructor<T>>,
    s: ArrayView2<T>,
    s_next: ArrayView2<T>,
) -> Result<Array1<T>> {
    match mode {
        RewardMode::DodontDelayed => instructor
            .ok_or_else(|| Error::InvalidConfig("DODONT_DELAYED requires an instruction network".into()))?
            .predict_batch(s, s_next),
        _ => Ok(Array1::from_elem(s.nrows(), T::one())),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiObjective<T> {
    pub value: T,
    /// Ascent gradient with respect to the phi parameters.
    pub grads: MlpGrads<T>,
    /// Batch mean of `min(eps, c - ||dphi||)`.
    pub mean_slack: T,
}

/// Value and ascent gradient of the constrained phi objective.
pub fn phi_objective<T: Scalar>(
    batch: &TransitionBatch<T>,
    phi: &PhiNet<T>,
    lambda: T,
    eps: T,
    bounds: &[T],
) -> Result<PhiObjective<T>> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Validation("phi objective on an empty batch".into()));
    }
    if bounds.len() != n || batch.skill_dim() != phi.skill_dim() {
        return Err(Error::Shape("bounds or skills do not match the batch".into()));
    }
    let stacked = vcat(batch.s_next.view(), batch.s.view())?;
    let (out, cache) = phi.net.forward(scale_columns(stacked.view(), phi.obs_scale.as_ref())?.view())?;
    let deltas = &out.slice(s![..n, ..]) - &out.slice(s![n.., ..]);
    let inv_n = T::one() / T::lit(n as f64);
    let floor = T::lit(NORM_FLOOR_SQ);

    let mut value = T::zero();
    let mut slack_sum = T::zero();
    let mut grad_out = Array2::zeros(out.raw_dim());
    for i in 0..n {
        let d = deltas.row(i);
        let z = batch.z.row(i);
        let sq: T = d.iter().map(|&v| v * v).sum();
        let norm = sq.max(floor).sqrt();
        let slack = bounds[i] - norm;
        let clipped = if slack < eps { slack } else { eps };
        value += row_dot(d, z) + lambda * clipped;
        slack_sum += clipped;

        let penalty_active = slack < eps && sq > floor;
        for k in 0..d.len() {
            let mut g = z[k];
            if penalty_active {
                g -= lambda * d[k] / norm;
            }
            g *= inv_n;
            grad_out[[i, k]] = g;
            grad_out[[n + i, k]] = -g;
        }
    }
    let grads = phi.net.backward(&cache, grad_out.view())?;
    Ok(PhiObjective {
        value: value * inv_n,
        grads,
        mean_slack: slack_sum * inv_n,
    })
}

/// Batch mean of `min(eps, c - ||dphi||)`.
pub fn mean_clipped_slack<T: Scalar>(
    phi: &PhiNet<T>,
    s: ArrayView2<T>,
    s_next: ArrayView2<T>,
    bounds: &[T],
    eps: T,
) -> Result<T> {
    let deltas = phi.deltas(s, s_next)?;
    let n = deltas.nrows();
    if n == 0 || bounds.len() != n {
        return Err(Error::Validation("slack needs a non-empty batch with one bound per row".into()));
    }
    let total: T = deltas
        .outer_iter()
        .zip(bounds)
        .map(|(d, &c)| (c - row_norm(d)).min(eps))
        .sum();
    Ok(total / T::lit(n as f64))
}

/// Lagrange multiplier, stored as `log_lambda` so that `lambda > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualVariable {
    pub log_lambda: f64,
    pub epsilon: f64,
}

impl Default for DualVariable {
    fn default() -> Self {
        DualVariable::new(DEFAULT_INITIAL_LAMBDA, DEFAULT_EPSILON).expect("defaults are valid")
    }
}

impl DualVariable {
    pub fn new(initial_lambda: f64, epsilon: f64) -> Result<Self> {
        if !(initial_lambda > 0.0 && initial_lambda.is_finite()) || !(epsilon > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need lambda > 0 and epsilon > 0, got {initial_lambda} and {epsilon}"
            )));
        }
        Ok(DualVariable {
            log_lambda: initial_lambda.ln(),
            epsilon,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.log_lambda.exp()
    }

    /// One descent step on `lambda * m` through the log parameterization:
    /// `log_lambda -= lr * m * lambda`.
    pub fn apply_mean_slack(&mut self, mean_slack: f64, lr: f64) -> Result<()> {
        if !mean_slack.is_finite() {
            return Err(Error::Numeric(format!("non-finite constraint slack {mean_slack}")));
        }
        let next = self.log_lambda - lr * mean_slack * self.lambda();
        self.log_lambda = next.clamp(-LOG_LAMBDA_LIMIT, LOG_LAMBDA_LIMIT);
        Ok(())
    }
}

/// Recomputes the batch slack from `phi` and takes one dual step. Returns the slack.
pub fn lambda_update<T: Scalar>(
    dual: &mut DualVariable,
    batch: &TransitionBatch<T>,
    phi: &PhiNet<T>,
    bounds: &[T],
    lr: f64,
) -> Result<f64> {
    let m = mean_clipped_slack(phi, batch.s.view(), batch.s_next.view(), bounds, T::lit(dual.epsilon))?
        .to_f64_lossy();
    dual.apply_mean_slack(m, lr)?;
    Ok(m)
}

/// Fraction of pairs with `||phi(s') - phi(s)|| <= c + tolerance`.
pub fn constraint_satisfaction<T: Scalar>(
    phi: &PhiNet<T>,
    s: ArrayView2<T>,
    s_next: ArrayView2<T>,
    bounds: &[T],
    tolerance: f64,
) -> Result<f64> {
    let deltas = phi.deltas(s, s_next)?;
    if deltas.nrows() == 0 || bounds.len() != deltas.nrows() {
        return Err(Error::Validation("constraint check needs pairs with one bound each".into()));
    }
    let tol = T::lit(tolerance);
    let ok = deltas
        .outer_iter()
        .zip(bounds)
        .filter(|(d, &c)| row_norm(d.view()) <= c + tol)
        .count();
    Ok(ok as f64 / deltas.nrows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EquivalenceReport {
    pub max_abs_diff: f64,
    /// Whether `||dphi|| <= k` and `||dphi_tilde|| <= 1` agree on every pair.
    pub constraints_agree: bool,
    pub passed: bool,
}

/// Checks that, for `phi := k * phi_tilde` with a constant instruction weight
/// `k`, the reward `(dphi)^T z` equals `k * (dphi_tilde)^T z` on every
/// pair x skill, evaluating both forms independently.
pub fn scaled_phi_equivalence_check<T: Scalar>(
    phi_tilde: &PhiNet<T>,
    instructor: &Instructor<T>,
    s: ArrayView2<T>,
    s_next: ArrayView2<T>,
    z_samples: ArrayView2<T>,
    tolerance: f64,
) -> Result<EquivalenceReport> {
    let p = instructor.predict_batch(s, s_next)?;
    let k = *p.first().ok_or_else(|| Error::Validation("no pairs".into()))?;
    if p.iter().any(|&v| v != k) {
        return Err(Error::Validation("instruction weight is not constant on these pairs".into()));
    }
    let tilde_s = phi_tilde.embed(s)?;
    let tilde_next = phi_tilde.embed(s_next)?;
    // Scale the representation first, then take the difference.
    let scaled_s = tilde_s.mapv(|v| k * v);
    let scaled_next = tilde_next.mapv(|v| k * v);

    let mut worst = 0.0f64;
    let mut agree = true;
    for i in 0..s.nrows() {
        let d_scaled = &scaled_next.row(i) - &scaled_s.row(i);
        let d_tilde = &tilde_next.row(i) - &tilde_s.row(i);
        for z in z_samples.outer_iter() {
            let lhs = row_dot(d_scaled.view(), z);
            let rhs = p[i] * row_dot(d_tilde.view(), z);
            worst = worst.max((lhs - rhs).abs().to_f64_lossy());
        }
        let n_scaled = row_norm(d_scaled.view()).to_f64_lossy();
        let n_tilde = row_norm(d_tilde.view()).to_f64_lossy();
        let kf = k.to_f64_lossy();
        // Skip pairs sitting on the boundary, where rounding decides the answer.
        if (n_tilde - 1.0).abs() > 1e-9 && (n_scaled <= kf) != (n_tilde <= 1.0) {
            agree = false;
        }
    }
    Ok(EquivalenceReport {
        max_abs_diff: worst,
        constraints_agree: agree,
        passed: worst <= tolerance && agree,
    })
}

/// Mean of `transform(p)` across the rows, or 1 with no instructor.
pub fn mean_instruction_weight<T: Scalar>(
    mode: RewardMode,
    instructor: Option<&Instructor<T>>,
    s: ArrayView2<T>,
    s_next: ArrayView2<T>,
) -> Result<f64> {
    match instructor {
        None => Ok(1.0),
        Some(ins) => {
            let p = ins.predict_batch(s, s_next)?;
            if p.is_empty() {
                return Ok(1.0);
            }
            let total: f64 = p.iter().map(|&v| mode.instruction_weight(v).to_f64_lossy()).sum();
            Ok(total / p.len() as f64)
        }
    }
}

/// Sum of row dot products, used by tests and diagnostics.
pub fn rowwise_dot<T: Scalar>(a: ArrayView2<T>, b: ArrayView2<T>) -> Array1<T> {
    (a.to_owned() * b).sum_axis(Axis(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvId;
    use crate::nn::grad_check_with_floor;
    use proptest::prelude::*;

    fn random_batch(n: usize, obs: usize, dim: usize, seed: u64) -> TransitionBatch<f64> {
        let mut rng = rng_from_seed(seed);
        let mut draw = |r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| {
                let v: f64 = StandardNormal.sample(&mut rng);
                v
            })
        };
        let s = draw(n, obs);
        let s_next = &s + &draw(n, obs).mapv(|v| 0.3 * v);
        let mut rng2 = rng_from_seed(seed ^ 7);
        let z = sample_skill_matrix(n, dim, SkillKind::ContinuousUnit, &mut rng2).unwrap();
        TransitionBatch::without_actions(s, s_next, z).unwrap()
    }

    fn small_phi(seed: u64) -> PhiNet<f64> {
        PhiNet::new(3, 2, 8, 2, seed).unwrap()
    }

    #[test]
    fn unit_skills_have_unit_norm_and_zero_mean() {
        let mut rng = rng_from_seed(3);
        let m = sample_skill_matrix::<f64>(20000, 2, SkillKind::ContinuousUnit, &mut rng).unwrap();
        for row in m.outer_iter() {
            assert!((row_dot(row, row) - 1.0).abs() < 1e-12);
        }
        let mean = m.mean_axis(Axis(0)).unwrap();
        assert!(mean.iter().all(|v| v.abs() < 0.02), "{mean}");
    }

    #[test]
    fn onehot_skills_cover_every_index() {
        let mut rng = rng_from_seed(4);
        let m = sample_skill_matrix::<f64>(400, 5, SkillKind::DiscreteOnehot, &mut rng).unwrap();
        let counts = m.sum_axis(Axis(0));
        assert!(m.sum_axis(Axis(1)).iter().all(|&v| v == 1.0));
        assert!(counts.iter().all(|&c| c > 40.0), "{counts}");
    }

    #[test]
    fn zero_skill_dim_is_rejected() {
        assert!(sample_skill::<f64>(0, SkillKind::ContinuousUnit, 0).is_err());
    }

    #[test]
    fn constant_one_direct_matches_metra_bitwise() {
        let phi = small_phi(1);
        let batch = random_batch(32, 3, 2, 9);
        let one = Instructor::constant(1.0).unwrap();
        let metra = intrinsic_rewards(&RewardConfig::new(RewardMode::Metra, 2.0), &phi, None, &batch).unwrap();
        let direct = intrinsic_rewards(
            &RewardConfig::new(RewardMode::DodontDirect, 1.0),
            &phi,
            Some(&one),
            &batch,
        )
        .unwrap();
        for (a, b) in metra.iter().zip(direct.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn metra_reward_matches_handwritten_difference() {
        let phi = small_phi(2);
        let batch = random_batch(5, 3, 2, 10);
        let cfg = RewardConfig::new(RewardMode::Metra, 2.0);
        let r = intrinsic_rewards(&cfg, &phi, None, &batch).unwrap();
        for i in 0..5 {
            let a = phi.net.predict_one(&batch.s.row(i).to_vec()).unwrap();
            let b = phi.net.predict_one(&batch.s_next.row(i).to_vec()).unwrap();
            let want: f64 = (0..2).map(|k| (b[k] - a[k]) * batch.z[[i, k]]).sum();
            assert!((r[i] - want).abs() < 1e-12);
            let single = intrinsic_reward(
                &cfg,
                &phi,
                None,
                &batch.s.row(i).to_vec(),
                &batch.s_next.row(i).to_vec(),
                &batch.z.row(i).to_vec(),
            )
            .unwrap();
            assert!((single - want).abs() < 1e-12);
        }
    }

    #[test]
    fn mode_formulas_follow_their_definitions() {
        let phi = small_phi(3);
        let batch = random_batch(6, 3, 2, 11);
        let k = 0.3;
        let ins = Instructor::constant(k).unwrap();
        let base = intrinsic_rewards(&RewardConfig::new(RewardMode::Metra, 2.0), &phi, None, &batch).unwrap();
        let get = |mode| intrinsic_rewards(&RewardConfig::new(mode, 2.0), &phi, Some(&ins), &batch).unwrap();
        let direct = get(RewardMode::DodontDirect);
        let additive = get(RewardMode::Additive);
        let only = get(RewardMode::OnlyDos);
        let delayed = get(RewardMode::DodontDelayed);
        for i in 0..6 {
            assert!((direct[i] - 2.0 * k * base[i]).abs() < 1e-12);
            assert!((additive[i] - (base[i] + 2.0 * k)).abs() < 1e-12);
            assert!((only[i] - 2.0 * 0.5 * base[i]).abs() < 1e-12);
            assert_eq!(delayed[i], base[i]);
        }
    }

    #[test]
    fn scripted_distance_uses_floor() {
        let spec = EnvSpec::new(EnvId::PointMass2D);
        let sd = ScriptedDistance {
            spec,
            task: TaskId::RunRight,
            offset: 1.0,
            floor: 0.05,
        };
        assert_eq!(sd.distance(&[0.0, 0.0, 0.0, 0.0], &[-5.0, 0.0, 0.0, 0.0]).unwrap(), 0.05);
        assert_eq!(sd.distance(&[0.0, 0.0, 0.0, 0.0], &[0.5, 0.0, 0.0, 0.0]).unwrap(), 1.5);
        let mut cfg = RewardConfig::new(RewardMode::ScriptedDistance, 2.0);
        assert!(cfg.validate(false).is_err());
        cfg.scripted = Some(sd);
        assert!(cfg.validate(false).is_ok());
    }

    #[test]
    fn instructor_modes_require_an_instructor() {
        let phi = small_phi(4);
        let batch = random_batch(4, 3, 2, 12);
        for mode in [RewardMode::DodontDirect, RewardMode::DodontDelayed, RewardMode::Additive, RewardMode::OnlyDos] {
            let cfg = RewardConfig::new(mode, 2.0);
            assert!(cfg.validate(false).is_err());
            assert!(intrinsic_rewards(&cfg, &phi, None, &batch).is_err());
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in RewardMode::ALL {
            assert_eq!(m.name().parse::<RewardMode>().unwrap(), m);
        }
        assert!("METRAA".parse::<RewardMode>().is_err());
    }

    fn check_objective_gradient(bounds: Vec<f64>, seed: u64) {
        let phi = PhiNet::new(3, 2, 6, 2, seed).unwrap();
        let batch = random_batch(bounds.len(), 3, 2, seed + 100);
        // lambda = 30 puts the objective near 10, so FD noise sits near 1e-10.
        let report = grad_check_with_floor(
            |net: &Mlp<f64>| {
                let p = PhiNet::from_mlp(net.clone());
                let o = phi_objective(&batch, &p, 30.0, 1e-3, &bounds)?;
                Ok((o.value, o.grads))
            },
            &phi.net,
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn objective_gradient_unit_bound() {
        // Half the rows are far inside the bound, half are far outside.
        let bounds: Vec<f64> = (0..8).map(|i| if i % 2 == 0 { 100.0 } else { 1e-3 }).collect();
        check_objective_gradient(bounds, 21);
    }

    #[test]
    fn objective_gradient_instruction_bound() {
        let bounds: Vec<f64> = (0..8).map(|i| if i % 3 == 0 { 50.0 } else { 0.002 * (i as f64) }).collect();
        check_objective_gradient(bounds, 22);
    }

    #[test]
    fn objective_value_by_hand() {
        let phi = small_phi(5);
        let batch = random_batch(4, 3, 2, 13);
        let bounds = [1.0, 0.01, 5.0, 0.2];
        let (lambda, eps) = (7.0, 1e-3);
        let o = phi_objective(&batch, &phi, lambda, eps, &bounds).unwrap();
        let mut value = 0.0;
        let mut slack = 0.0;
        for i in 0..4 {
            let a = phi.net.predict_one(&batch.s.row(i).to_vec()).unwrap();
            let b = phi.net.predict_one(&batch.s_next.row(i).to_vec()).unwrap();
            let d = [b[0] - a[0], b[1] - a[1]];
            let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let m = f64::min(eps, bounds[i] - norm);
            value += d[0] * batch.z[[i, 0]] + d[1] * batch.z[[i, 1]] + lambda * m;
            slack += m;
        }
        assert!((o.value - value / 4.0).abs() < 1e-12);
        assert!((o.mean_slack - slack / 4.0).abs() < 1e-12);
        let m2 = mean_clipped_slack(&phi, batch.s.view(), batch.s_next.view(), &bounds, eps).unwrap();
        assert!((m2 - slack / 4.0).abs() < 1e-12);
    }

    #[test]
    fn identical_states_give_finite_gradient() {
        let phi = small_phi(6);
        let s = Array2::from_elem((3, 3), 0.4);
        let z = Array2::from_elem((3, 2), 0.5f64.sqrt());
        let batch = TransitionBatch::without_actions(s.clone(), s, z).unwrap();
        let o = phi_objective(&batch, &phi, 30.0, 1e-3, &[1e-9, 1e-9, 1e-9]).unwrap();
        assert!(o.grads.is_finite());
        assert!(o.value.is_finite());
    }

    #[test]
    fn dual_grows_under_violation_and_shrinks_when_slack() {
        let mut d = DualVariable::default();
        assert!((d.lambda() - 30.0).abs() < 1e-12);
        d.apply_mean_slack(-0.5, 1e-3).unwrap();
        assert!(d.lambda() > 30.0);
        let before = d.lambda();
        d.apply_mean_slack(1e-3, 1e-3).unwrap();
        assert!(d.lambda() < before);
        // log-space step is exactly -lr * m * lambda
        let mut e = DualVariable::new(2.0, 1e-3).unwrap();
        e.apply_mean_slack(0.25, 0.1).unwrap();
        assert!((e.log_lambda - (2.0f64.ln() - 0.1 * 0.25 * 2.0)).abs() < 1e-15);
    }

    #[test]
    fn dual_stays_finite() {
        let mut d = DualVariable::new(1e10, 1e-3).unwrap();
        for _ in 0..10 {
            d.apply_mean_slack(-10.0, 1.0).unwrap();
        }
        assert!(d.lambda().is_finite());
        assert!(d.apply_mean_slack(f64::NAN, 1.0).is_err());
        assert!(DualVariable::new(0.0, 1e-3).is_err());
    }

    #[test]
    fn lambda_update_recomputes_slack() {
        let phi = small_phi(7);
        let batch = random_batch(16, 3, 2, 14);
        let bounds = vec![1e-4; 16];
        let mut d = DualVariable::default();
        let m = lambda_update(&mut d, &batch, &phi, &bounds, 1e-4).unwrap();
        assert!(m < 0.0);
        assert!(d.lambda() > 30.0);
    }

    #[test]
    fn satisfaction_counts_pairs_inside_bound() {
        let phi = small_phi(8);
        let batch = random_batch(10, 3, 2, 15);
        let big = vec![1e6; 10];
        let tiny = vec![0.0; 10];
        assert_eq!(constraint_satisfaction(&phi, batch.s.view(), batch.s_next.view(), &big, 0.0).unwrap(), 1.0);
        assert_eq!(constraint_satisfaction(&phi, batch.s.view(), batch.s_next.view(), &tiny, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn scaled_representation_matches_weighted_reward() {
        let phi = small_phi(9);
        let batch = random_batch(50, 3, 2, 16);
        let mut rng = rng_from_seed(17);
        let zs = sample_skill_matrix::<f64>(16, 2, SkillKind::ContinuousUnit, &mut rng).unwrap();
        for k in [0.1, 0.5, 0.9, 1.0] {
            let ins = Instructor::constant(k).unwrap();
            let rep = scaled_phi_equivalence_check(&phi, &ins, batch.s.view(), batch.s_next.view(), zs.view(), 1e-9)
                .unwrap();
            assert!(rep.passed, "k={k} {rep:?}");
        }
    }

    #[test]
    fn mean_weight_without_instructor_is_one() {
        let s = Array2::<f64>::zeros((3, 2));
        assert_eq!(mean_instruction_weight(RewardMode::Metra, None, s.view(), s.view()).unwrap(), 1.0);
        let ins = Instructor::constant(0.2).unwrap();
        let w = mean_instruction_weight(RewardMode::OnlyDos, Some(&ins), s.view(), s.view()).unwrap();
        assert_eq!(w, 0.5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn dual_step_sign(m in -1.0f64..1.0, lr in 1e-5f64..1e-1, lam in 0.1f64..100.0) {
            let mut d = DualVariable::new(lam, 1e-3).unwrap();
            d.apply_mean_slack(m, lr).unwrap();
            if m < 0.0 {
                prop_assert!(d.lambda() >= lam);
            } else if m > 0.0 {
                prop_assert!(d.lambda() <= lam);
            }
            prop_assert!(d.lambda() > 0.0);
        }

        #[test]
        fn metra_reward_bounded_by_distance(seed in 0u64..1000) {
            let phi = small_phi(seed);
            let batch = random_batch(8, 3, 2, seed + 1);
            let r = intrinsic_rewards(&RewardConfig::new(RewardMode::Metra, 2.0), &phi, None, &batch).unwrap();
            let d = phi.deltas(batch.s.view(), batch.s_next.view()).unwrap();
            for i in 0..8 {
                prop_assert!(r[i].abs() <= row_norm(d.row(i)) + 1e-12);
            }
        }

        #[test]
        fn slack_never_exceeds_epsilon(seed in 0u64..1000, c in 0.0f64..10.0) {
            let phi = small_phi(seed);
            let batch = random_batch(8, 3, 2, seed + 2);
            let m = mean_clipped_slack(&phi, batch.s.view(), batch.s_next.view(), &[c; 8], 1e-3).unwrap();
            prop_assert!(m <= 1e-3 + 1e-15);
        }
    }
}
