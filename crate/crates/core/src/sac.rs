//! Soft Actor-Critic for the scalar log-price action.
//!
//! The actor emits a mean and a log standard deviation; actions are
//! `c + s · tanh(z)` with `z ~ N(μ, σ)`, where `c` and `s` are the centre and
//! half-width of `[ln L, ln U]`. Log densities are taken with respect to the
//! action itself, so they include the `ln s` and tanh Jacobian terms.
//!
//! Twin critics take `(observation, action)` and are tracked by Polyak
//! averaged targets. The temperature `α = exp(log_alpha)` is tuned towards a
//! fixed target entropy.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::OBS_DIM;
use crate::error::{Error, Result};
use crate::nn::{soft_update, Adam, AdamParams, ForwardCache, Mlp};
use crate::replay::{Batch, ReplayBuffer};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    /// Hidden layer widths shared by actor and critics.
    pub hidden: Vec<usize>,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    /// Polyak coefficient for the target critics.
    pub polyak: f64,
    pub target_entropy: f64,
    /// Environment steps taken with uniformly random actions before updates start.
    pub warmup_steps: usize,
    pub updates_per_step: usize,
    pub initial_log_alpha: f64,
    /// Whether the last month of an episode cuts off bootstrapping. The
    /// observation carries no clock, so by default the horizon is treated as
    /// a time limit and the critics keep bootstrapping through it.
    pub horizon_is_terminal: bool,
    /// Multiplier applied to rewards inside the critic targets.
    pub reward_scale: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            buffer_capacity: 1_000_000,
            batch_size: 256,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            polyak: 0.005,
            target_entropy: -1.0,
            warmup_steps: 1000,
            updates_per_step: 1,
            initial_log_alpha: 0.0,
            horizon_is_terminal: false,
            reward_scale: 1e-3,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |f: &str, m: &str| Err(Error::config(format!("agent.{f}"), m));
        if self.hidden.contains(&0) {
            return err("hidden", "layer widths must be positive");
        }
        if self.batch_size == 0 {
            return err("batch_size", "must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return err("buffer_capacity", "must be at least batch_size");
        }
        if self.warmup_steps < self.batch_size {
            return err("warmup_steps", "must be at least batch_size");
        }
        for (name, lr) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return err(name, "must be positive");
            }
        }
        if !(0.0..=1.0).contains(&self.polyak) {
            return err("polyak", "must lie in [0, 1]");
        }
        if !self.target_entropy.is_finite() || !self.initial_log_alpha.is_finite() {
            return err("target_entropy", "must be finite");
        }
        if !(self.reward_scale > 0.0 && self.reward_scale.is_finite()) {
            return err("reward_scale", "must be positive");
        }
        Ok(())
    }

    pub fn actor_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM];
        s.extend(&self.hidden);
        s.push(2);
        s
    }

    pub fn critic_sizes(&self) -> Vec<usize> {
        let mut s = vec![OBS_DIM + 1];
        s.extend(&self.hidden);
        s.push(1);
        s
    }
}

/// Affine map from `tanh` output in `(-1, 1)` to `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionScale {
    pub lo: f64,
    pub hi: f64,
}

impl ActionScale {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(Error::config("market.action_bounds", "need finite lo < hi"));
        }
        Ok(Self { lo, hi })
    }

    pub fn centre(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.hi - self.lo)
    }

    /// Map a squashed value to an action strictly inside `(lo, hi)`.
    pub fn map(&self, u: f64) -> f64 {
        let a = self.centre() + self.half_width() * u;
        let eps = 1e-12 * self.half_width();
        a.clamp(self.lo + eps, self.hi - eps)
    }
}

/// One reparameterized draw from the squashed Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquashedSample {
    pub action: f64,
    pub log_prob: f64,
    pub tanh: f64,
    pub std: f64,
    pub eps: f64,
    /// Whether the raw log-std was inside the clamp range.
    pub log_std_active: bool,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh(z)^2)`, stable for large `|z|`.
fn log1m_tanh_sq(z: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - z - softplus(-2.0 * z))
}

pub fn squashed_sample(mu: f64, raw_log_std: f64, eps: f64, scale: ActionScale) -> SquashedSample {
    let log_std = raw_log_std.clamp(LOG_STD_MIN, LOG_STD_MAX);
    let std = log_std.exp();
    let z = mu + std * eps;
    let u = z.tanh();
    let log_prob = -0.5 * eps * eps - log_std - HALF_LN_2PI - scale.half_width().ln() - log1m_tanh_sq(z);
    SquashedSample {
        action: scale.map(u),
        log_prob,
        tanh: u,
        std,
        eps,
        log_std_active: (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_log_std),
    }
}

fn head(out: &[f64]) -> Result<(f64, f64)> {
    let (mu, log_std) = (out[0], out[1]);
    if !(mu.is_finite() && log_std.is_finite()) {
        return Err(Error::Numeric("actor produced a non-finite output".into()));
    }
    Ok((mu, log_std))
}

/// Stochastic action and its log density.
pub fn sample_action<R: Rng + ?Sized>(actor: &Mlp, obs: &[f64], rng: &mut R, scale: ActionScale) -> Result<(f64, f64)> {
    let (mu, log_std) = head(&actor.forward_one(obs)?)?;
    let eps: f64 = rng.sample(StandardNormal);
    let s = squashed_sample(mu, log_std, eps, scale);
    Ok((s.action, s.log_prob))
}

/// Squashed mean of the policy; used for all evaluation.
pub fn deterministic_action(actor: &Mlp, obs: &[f64], scale: ActionScale) -> Result<f64> {
    let (mu, _) = head(&actor.forward_one(obs)?)?;
    Ok(scale.map(mu.tanh()))
}

fn critic_input(obs: ArrayView2<f64>, action: ArrayView1<f64>) -> Array2<f64> {
    let n = obs.nrows();
    let mut x = Array2::zeros((n, obs.ncols() + 1));
    x.slice_mut(s![.., ..obs.ncols()]).assign(&obs);
    x.column_mut(obs.ncols()).assign(&action);
    x
}

/// Policy outputs for a batch under fixed noise `eps`.
pub struct PolicyBatch {
    pub cache: ForwardCache,
    pub samples: Vec<SquashedSample>,
}

impl PolicyBatch {
    pub fn actions(&self) -> Array1<f64> {
        self.samples.iter().map(|s| s.action).collect()
    }

    pub fn log_probs(&self) -> Array1<f64> {
        self.samples.iter().map(|s| s.log_prob).collect()
    }
}

pub fn policy_batch(
    actor: &Mlp,
    obs: ArrayView2<f64>,
    eps: ArrayView1<f64>,
    scale: ActionScale,
) -> Result<PolicyBatch> {
    if eps.len() != obs.nrows() {
        return Err(Error::Shape("noise length does not match batch".into()));
    }
    let cache = actor.forward_cached(obs)?;
    let out = cache.output();
    let samples = (0..obs.nrows())
        .map(|i| {
            let (mu, log_std) = head(&[out[[i, 0]], out[[i, 1]]])?;
            Ok(squashed_sample(mu, log_std, eps[i], scale))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PolicyBatch { cache, samples })
}

/// Soft Bellman targets
/// `y = scale·r + γ (1 - done) (min(Q'_1, Q'_2)(s', a') - α log π(a'|s'))`
/// with `a'` drawn from the current policy under noise `eps_next`.
#[allow(clippy::too_many_arguments)]
pub fn critic_targets(
    batch: &Batch,
    actor: &Mlp,
    target1: &Mlp,
    target2: &Mlp,
    alpha: f64,
    gamma: f64,
    reward_scale: f64,
    eps_next: ArrayView1<f64>,
    scale: ActionScale,
) -> Result<Array1<f64>> {
    let next = policy_batch(actor, batch.next_obs.view(), eps_next, scale)?;
    let x = critic_input(batch.next_obs.view(), next.actions().view());
    let q1 = target1.forward(x.view())?;
    let q2 = target2.forward(x.view())?;
    let y: Array1<f64> = (0..batch.len())
        .map(|i| {
            let soft = q1[[i, 0]].min(q2[[i, 0]]) - alpha * next.samples[i].log_prob;
            reward_scale * batch.reward[i] + gamma * (1.0 - batch.done[i]) * soft
        })
        .collect();
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite critic target".into()));
    }
    Ok(y)
}

/// Mean squared error of one critic against fixed targets, and its gradient.
pub fn critic_loss_and_grad(
    critic: &Mlp,
    obs: ArrayView2<f64>,
    action: ArrayView1<f64>,
    targets: ArrayView1<f64>,
) -> Result<(f64, Mlp)> {
    let n = obs.nrows() as f64;
    let x = critic_input(obs, action);
    let cache = critic.forward_cached(x.view())?;
    let q = cache.output().column(0).to_owned();
    let diff = &q - &targets;
    let loss = diff.mapv(|d| d * d).sum() / n;
    let upstream = (diff * (2.0 / n)).insert_axis(Axis(1));
    let (grads, _) = critic.backward(&cache, upstream.view())?;
    Ok((loss, grads))
}

/// `mean(α log π(a|s) - min(Q_1, Q_2)(s, a))` with reparameterized actions,
/// and its gradient with respect to the actor parameters. Also returns the
/// log densities of the sampled actions.
pub fn actor_loss_and_grad(
    actor: &Mlp,
    critic1: &Mlp,
    critic2: &Mlp,
    alpha: f64,
    obs: ArrayView2<f64>,
    eps: ArrayView1<f64>,
    scale: ActionScale,
) -> Result<(f64, Mlp, Array1<f64>)> {
    let n = obs.nrows();
    let nf = n as f64;
    let pol = policy_batch(actor, obs, eps, scale)?;
    let x = critic_input(obs, pol.actions().view());
    let c1 = critic1.forward_cached(x.view())?;
    let c2 = critic2.forward_cached(x.view())?;
    let mut up1 = Array2::zeros((n, 1));
    let mut up2 = Array2::zeros((n, 1));
    let mut loss = 0.0;
    for i in 0..n {
        let (q1, q2) = (c1.output()[[i, 0]], c2.output()[[i, 0]]);
        if q1 <= q2 {
            up1[[i, 0]] = -1.0 / nf;
        } else {
            up2[[i, 0]] = -1.0 / nf;
        }
        loss += alpha * pol.samples[i].log_prob - q1.min(q2);
    }
    loss /= nf;
    let (_, gin1) = critic1.backward(&c1, up1.view())?;
    let (_, gin2) = critic2.backward(&c2, up2.view())?;

    let half_width = scale.half_width();
    let mut head_grad = Array2::zeros((n, 2));
    for (i, smp) in pol.samples.iter().enumerate() {
        let dloss_da = gin1[[i, OBS_DIM]] + gin2[[i, OBS_DIM]];
        let u = smp.tanh;
        let da_dz = half_width * (1.0 - u * u);
        let dz_dlogstd = smp.std * smp.eps;
        // d log π / dμ = 2u ; d log π / d log σ = -1 + 2u σ ε
        head_grad[[i, 0]] = alpha * 2.0 * u / nf + dloss_da * da_dz;
        if smp.log_std_active {
            head_grad[[i, 1]] = alpha * (-1.0 + 2.0 * u * dz_dlogstd) / nf + dloss_da * da_dz * dz_dlogstd;
        }
    }
    let (grads, _) = actor.backward(&pol.cache, head_grad.view())?;
    Ok((loss, grads, pol.log_probs()))
}

/// Loss `-log_alpha · mean(log π + target_entropy)` and its derivative.
pub fn temperature_loss_and_grad(log_alpha: f64, log_probs: ArrayView1<f64>, target_entropy: f64) -> (f64, f64) {
    let m = log_probs.mean().unwrap_or(0.0) + target_entropy;
    (-log_alpha * m, -m)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    config: AgentConfig,
    gamma: f64,
    scale: ActionScale,
    pub actor: Mlp,
    pub critic1: Mlp,
    pub critic2: Mlp,
    pub target1: Mlp,
    pub target2: Mlp,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    alpha_opt: Adam,
    log_alpha: f64,
    rng: ChaCha8Rng,
    updates: u64,
}

impl SacAgent {
    pub fn new(config: AgentConfig, gamma: f64, scale: ActionScale, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::config("market.gamma", "must lie in (0, 1]"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Mlp::new_uniform(&config.actor_sizes(), &mut rng);
        let critic1 = Mlp::new_uniform(&config.critic_sizes(), &mut rng);
        let critic2 = Mlp::new_uniform(&config.critic_sizes(), &mut rng);
        Ok(Self {
            actor_opt: Adam::for_net(AdamParams::with_lr(config.actor_lr), &actor),
            critic1_opt: Adam::for_net(AdamParams::with_lr(config.critic_lr), &critic1),
            critic2_opt: Adam::for_net(AdamParams::with_lr(config.critic_lr), &critic2),
            alpha_opt: Adam::new(AdamParams::with_lr(config.alpha_lr), &[1]),
            log_alpha: config.initial_log_alpha,
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            config,
            gamma,
            scale,
            rng,
            updates: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn scale(&self) -> ActionScale {
        self.scale
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn log_alpha(&self) -> f64 {
        self.log_alpha
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn set_log_alpha(&mut self, v: f64) {
        self.log_alpha = v;
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Exploration action from the stochastic policy.
    pub fn explore(&mut self, obs: &[f64]) -> Result<f64> {
        Ok(sample_action(&self.actor, obs, &mut self.rng, self.scale)?.0)
    }

    /// Uniform action over the bounds, used during warmup.
    pub fn random_action(&mut self) -> f64 {
        self.scale.map(self.rng.random_range(-1.0..1.0))
    }

    pub fn act(&self, obs: &[f64]) -> Result<f64> {
        deterministic_action(&self.actor, obs, self.scale)
    }

    fn noise(&mut self, n: usize) -> Array1<f64> {
        (0..n).map(|_| self.rng.sample::<f64, _>(StandardNormal)).collect()
    }

    /// Step both critics towards the soft Bellman target. Returns the summed
    /// MSE of the two critics before the step.
    pub fn critic_update(&mut self, batch: &Batch) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Protocol("critic update on an empty batch".into()));
        }
        let eps_next = self.noise(batch.len());
        let y = critic_targets(
            batch,
            &self.actor,
            &self.target1,
            &self.target2,
            self.alpha(),
            self.gamma,
            self.config.reward_scale,
            eps_next.view(),
            self.scale,
        )?;
        let (l1, g1) = critic_loss_and_grad(&self.critic1, batch.obs.view(), batch.action.view(), y.view())?;
        let (l2, g2) = critic_loss_and_grad(&self.critic2, batch.obs.view(), batch.action.view(), y.view())?;
        let loss = l1 + l2;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "critic loss is {loss} after {} updates",
                self.updates
            )));
        }
        self.critic1_opt.update(&mut self.critic1, &g1)?;
        self.critic2_opt.update(&mut self.critic2, &g2)?;
        Ok(loss)
    }

    fn actor_step(&mut self, batch: &Batch) -> Result<(f64, Array1<f64>)> {
        if batch.is_empty() {
            return Err(Error::Protocol("actor update on an empty batch".into()));
        }
        let eps = self.noise(batch.len());
        let (loss, grads, log_probs) = actor_loss_and_grad(
            &self.actor,
            &self.critic1,
            &self.critic2,
            self.alpha(),
            batch.obs.view(),
            eps.view(),
            self.scale,
        )?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "actor loss is {loss} after {} updates",
                self.updates
            )));
        }
        self.actor_opt.update(&mut self.actor, &grads)?;
        Ok((loss, log_probs))
    }

    /// One policy step; critics are left untouched. Returns the pre-step loss.
    pub fn actor_update(&mut self, batch: &Batch) -> Result<f64> {
        Ok(self.actor_step(batch)?.0)
    }

    fn temperature_step(&mut self, log_probs: ArrayView1<f64>) -> Result<f64> {
        let (_, grad) = temperature_loss_and_grad(self.log_alpha, log_probs, self.config.target_entropy);
        self.alpha_opt.update_scalar(&mut self.log_alpha, grad)?;
        Ok(self.log_alpha)
    }

    /// One gradient step on the temperature with fresh policy samples.
    /// Returns the new `log_alpha`.
    pub fn temperature_update(&mut self, batch: &Batch) -> Result<f64> {
        let eps = self.noise(batch.len());
        let pol = policy_batch(&self.actor, batch.obs.view(), eps.view(), self.scale)?;
        self.temperature_step(pol.log_probs().view())
    }

    /// Full SAC update on one sampled minibatch.
    pub fn train_step(&mut self, buffer: &ReplayBuffer) -> Result<UpdateStats> {
        let batch = buffer.sample(self.config.batch_size, &mut self.rng)?;
        let alpha = self.alpha();
        let critic_loss = self.critic_update(&batch)?;
        let (actor_loss, log_probs) = self.actor_step(&batch)?;
        self.temperature_step(log_probs.view())?;
        soft_update(&mut self.target1, &self.critic1, self.config.polyak)?;
        soft_update(&mut self.target2, &self.critic2, self.config.polyak)?;
        self.updates += 1;
        Ok(UpdateStats {
            critic_loss,
            actor_loss,
            alpha,
        })
    }
}
