//! Advantage estimation and the dual-critic clipped policy update.

use rand::Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use super::mlp::{clip_grad_norm, Activation, Adam, Mlp};
use super::policy::{HierarchicalPolicy, PolicyShape};
use super::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub entropy_coef: f64,
    pub ppo_epochs: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    /// Environment steps between updates.
    pub update_every: usize,
    pub episodes: usize,
    pub warmup_episodes: usize,
    pub anneal_beta: f64,
    pub tau_init: f64,
    pub tau_min: f64,
    pub alpha_adapt: f64,
    /// Multiplier on V when recomputing advantages for online adaptation.
    pub adapt_v_multiplier: f64,
    pub max_grad_norm: f64,
    pub encoder_hidden: usize,
    pub encoder_dim: usize,
    pub embed_dim: usize,
    pub critic_hidden: usize,
    /// Episodes between greedy evaluations for checkpoint selection.
    pub eval_every: usize,
    /// Slots in the stability critic's target window.
    pub stability_horizon: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_actor: 3e-4,
            lr_critic: 1e-3,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            entropy_coef: 0.01,
            ppo_epochs: 10,
            batch_size: 256,
            buffer_size: 1000,
            update_every: 100,
            episodes: 2500,
            warmup_episodes: 100,
            anneal_beta: 0.995,
            tau_init: 1.0,
            tau_min: 0.1,
            alpha_adapt: 1e-3,
            adapt_v_multiplier: 2.0,
            max_grad_norm: 0.5,
            encoder_hidden: 64,
            encoder_dim: 32,
            embed_dim: 32,
            critic_hidden: 64,
            eval_every: 25,
            stability_horizon: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.to_string()));
        let unit = |x: f64| x > 0.0 && x <= 1.0;
        if !unit(self.gamma) {
            return bad("gamma must be in (0, 1]");
        }
        if !unit(self.gae_lambda) {
            return bad("gae_lambda must be in (0, 1]");
        }
        if !(self.clip_epsilon > 0.0) {
            return bad("clip_epsilon must be > 0");
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be > 0");
        }
        if !(self.entropy_coef >= 0.0 && self.alpha_adapt >= 0.0) {
            return bad("entropy_coef and alpha_adapt must be >= 0");
        }
        if self.ppo_epochs == 0 || self.batch_size == 0 || self.buffer_size == 0 {
            return bad("ppo_epochs, batch_size and buffer_size must be >= 1");
        }
        if self.update_every == 0 || self.eval_every == 0 || self.stability_horizon == 0 {
            return bad("update_every, eval_every and stability_horizon must be >= 1");
        }
        if !unit(self.anneal_beta) || !(self.tau_min > 0.0) || self.tau_init < self.tau_min {
            return bad("need 0 < anneal_beta <= 1 and 0 < tau_min <= tau_init");
        }
        if !(self.max_grad_norm > 0.0) {
            return bad("max_grad_norm must be > 0");
        }
        if self.encoder_hidden == 0
            || self.encoder_dim == 0
            || self.embed_dim == 0
            || self.critic_hidden == 0
        {
            return bad("network widths must be >= 1");
        }
        Ok(())
    }
}

/// Backward recursion `A_t = delta_t + gamma * lambda * A_{t+1}`.
/// Returns advantages and returns (`A + V`).
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_value: f64,
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), LearnError> {
    if rewards.len() != values.len() {
        return Err(LearnError::DimensionMismatch {
            expected: rewards.len(),
            got: values.len(),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { next_value };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, ret))
}

/// `A_perf + V * A_stab`, with a per-step V.
pub fn combined_advantage(a_perf: &[f64], a_stab: &[f64], v: &[f64]) -> Vec<f64> {
    a_perf
        .iter()
        .zip(a_stab)
        .zip(v)
        .map(|((p, s), v)| p + v * s)
        .collect()
}

/// One training example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub action: Vec<u8>,
    pub old_log_prob: f64,
    /// Advantage used by the surrogate (already combined and normalized).
    pub advantage: f64,
    pub a_perf: f64,
    pub a_stab: f64,
    pub v: f64,
    pub return_perf: f64,
    pub target_stab: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct UpdateStats {
    /// Fraction of samples whose ratio left the clip range, first epoch.
    pub clip_fraction_first: f64,
    /// Same, last epoch.
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss_perf: f64,
    pub value_loss_stab: f64,
    pub entropy: f64,
}

/// Clipped surrogate loss (negated objective) and its gradient.
pub struct SurrogateEval {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub clip_fraction: f64,
    pub entropy: f64,
}

/// `-mean(min(rho A, clip(rho) A)) - c * mean(H)`.
pub fn surrogate_loss(
    policy: &HierarchicalPolicy,
    batch: &[Sample],
    advantages: &[f64],
    clip_epsilon: f64,
    entropy_coef: f64,
) -> Result<SurrogateEval, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut grads = vec![0.0; policy.param_count()];
    let (mut obj, mut ent, mut clipped) = (0.0, 0.0, 0usize);
    for (s, &a) in batch.iter().zip(advantages) {
        let cache = policy.forward_cached(&s.features)?;
        let lp = policy.log_prob(&cache.logits, &s.action);
        let rho = (lp - s.old_log_prob).exp();
        let rho_c = rho.clamp(1.0 - clip_epsilon, 1.0 + clip_epsilon);
        if rho != rho_c {
            clipped += 1;
        }
        let (unclipped, clipped_term) = (rho * a, rho_c * a);
        obj += unclipped.min(clipped_term);
        let w = if unclipped <= clipped_term { rho * a } else { 0.0 };
        ent += policy.entropy(&cache.logits);
        // loss = -obj/n - c * H/n
        let dl = policy.logit_grad(&cache.logits, &s.action, -w / n, -entropy_coef / n);
        policy.backward(&cache, &dl, &mut grads);
    }
    Ok(SurrogateEval {
        loss: -obj / n - entropy_coef * ent / n,
        grads,
        clip_fraction: clipped as f64 / n,
        entropy: ent / n,
    })
}

/// Mean squared error of a scalar critic and its gradient.
pub fn critic_loss(
    net: &Mlp,
    features: &[&[f64]],
    targets: &[f64],
) -> Result<(f64, Vec<f64>), LearnError> {
    if features.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let n = features.len() as f64;
    let mut grads = vec![0.0; net.param_count()];
    let mut loss = 0.0;
    for (x, t) in features.iter().zip(targets) {
        let cache = net.forward_cached(x)?;
        let err = cache.output()[0] - t;
        loss += err * err / n;
        net.backward(&cache, &[2.0 * err / n], None, &mut grads);
    }
    Ok((loss, grads))
}

/// Actor, both critics and their optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub policy: HierarchicalPolicy,
    pub critic_perf: Mlp,
    pub critic_stab: Mlp,
    adam_actor: Adam,
    adam_perf: Adam,
    adam_stab: Adam,
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(
        features: usize,
        layers: usize,
        heads: usize,
        cfg: &TrainConfig,
        rng: &mut R,
    ) -> Self {
        let shape = PolicyShape {
            features,
            layers,
            heads,
            encoder_hidden: cfg.encoder_hidden,
            encoder_dim: cfg.encoder_dim,
            embed_dim: cfg.embed_dim,
        };
        let mut policy = HierarchicalPolicy::new(shape, rng);
        policy.temperature = cfg.tau_init;
        let critic = |rng: &mut R| {
            Mlp::new(
                &[features, cfg.critic_hidden, cfg.critic_hidden, 1],
                Activation::Identity,
                rng,
            )
        };
        let critic_perf = critic(rng);
        let critic_stab = critic(rng);
        Self {
            adam_actor: Adam::new(policy.param_count(), cfg.lr_actor),
            adam_perf: Adam::new(critic_perf.param_count(), cfg.lr_critic),
            adam_stab: Adam::new(critic_stab.param_count(), cfg.lr_critic),
            policy,
            critic_perf,
            critic_stab,
        }
    }

    pub fn value_perf(&self, features: &[f64]) -> Result<f64, LearnError> {
        Ok(self.critic_perf.forward(features)?[0])
    }

    pub fn value_stab(&self, features: &[f64]) -> Result<f64, LearnError> {
        Ok(self.critic_stab.forward(features)?[0])
    }
}

fn check_finite(what: &str, x: f64) -> Result<(), LearnError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(LearnError::NonFinite(format!("{what} = {x}")))
    }
}

/// `ppo_epochs` full-batch steps on the actor and both critics. On a
/// non-finite loss the agent is left untouched and an error is returned.
pub fn ppo_update(
    agent: &mut Agent,
    batch: &[Sample],
    cfg: &TrainConfig,
) -> Result<UpdateStats, LearnError> {
    if batch.is_empty() {
        return Err(LearnError::EmptyBatch);
    }
    let snapshot = agent.clone();
    let result = ppo_epochs(agent, batch, cfg);
    if result.is_err() {
        *agent = snapshot;
    }
    result
}

fn ppo_epochs(
    agent: &mut Agent,
    batch: &[Sample],
    cfg: &TrainConfig,
) -> Result<UpdateStats, LearnError> {
    let adv: Vec<f64> = batch.iter().map(|s| s.advantage).collect();
    let feats: Vec<&[f64]> = batch.iter().map(|s| s.features.as_slice()).collect();
    let ret: Vec<f64> = batch.iter().map(|s| s.return_perf).collect();
    let stab: Vec<f64> = batch.iter().map(|s| s.target_stab).collect();
    let mut stats = UpdateStats::default();
    for epoch in 0..cfg.ppo_epochs {
        let mut s = surrogate_loss(&agent.policy, batch, &adv, cfg.clip_epsilon, cfg.entropy_coef)?;
        let (lp, mut gp) = critic_loss(&agent.critic_perf, &feats, &ret)?;
        let (ls, mut gs) = critic_loss(&agent.critic_stab, &feats, &stab)?;
        check_finite("policy loss", s.loss)?;
        check_finite("perf critic loss", lp)?;
        check_finite("stability critic loss", ls)?;
        if epoch == 0 {
            stats.clip_fraction_first = s.clip_fraction;
        }
        stats.clip_fraction = s.clip_fraction;
        stats.policy_loss = s.loss;
        stats.value_loss_perf = lp;
        stats.value_loss_stab = ls;
        stats.entropy = s.entropy;

        clip_grad_norm(&mut s.grads, cfg.max_grad_norm);
        let mut p = agent.policy.params();
        agent.adam_actor.step(&mut p, &s.grads);
        agent.policy.set_params(&p);
        clip_grad_norm(&mut gp, cfg.max_grad_norm);
        agent.adam_perf.step(agent.critic_perf.params_mut(), &gp);
        clip_grad_norm(&mut gs, cfg.max_grad_norm);
        agent.adam_stab.step(agent.critic_stab.params_mut(), &gs);
    }
    Ok(stats)
}

/// The online objective: the surrogate evaluated against the base policy
/// with `A = A_perf + multiplier * V * A_stab`. Returns the objective (to be
/// maximized) and its gradient.
pub fn online_objective(
    policy: &HierarchicalPolicy,
    batch: &[Sample],
    base_log_probs: &[f64],
    multiplier: f64,
    clip_epsilon: f64,
) -> Result<(f64, Vec<f64>), LearnError> {
    let shifted: Vec<Sample> = batch
        .iter()
        .zip(base_log_probs)
        .map(|(s, &lp)| Sample {
            old_log_prob: lp,
            ..s.clone()
        })
        .collect();
    let adv: Vec<f64> = batch
        .iter()
        .map(|s| s.a_perf + multiplier * s.v * s.a_stab)
        .collect();
    let e = surrogate_loss(policy, &shifted, &adv, clip_epsilon, 0.0)?;
    Ok((-e.loss, e.grads.into_iter().map(|g| -g).collect()))
}

/// One ascent step of size `alpha` on the online objective.
pub fn online_adapt(
    base: &HierarchicalPolicy,
    recent: &[Sample],
    alpha: f64,
    multiplier: f64,
    clip_epsilon: f64,
) -> Result<HierarchicalPolicy, LearnError> {
    if recent.is_empty() {
        warn!("online adaptation skipped: empty buffer");
        return Ok(base.clone());
    }
    let base_lp = recent
        .iter()
        .map(|s| Ok(base.log_prob(&base.logits(&s.features)?, &s.action)))
        .collect::<Result<Vec<_>, LearnError>>()?;
    let (_, grad) = online_objective(base, recent, &base_lp, multiplier, clip_epsilon)?;
    let mut p = base.params();
    for (x, g) in p.iter_mut().zip(&grad) {
        *x += alpha * g;
    }
    let mut out = base.clone();
    out.set_params(&p);
    Ok(out)
}

/// Subtracts the mean and divides by the standard deviation (if nonzero).
pub fn normalize(xs: &mut [f64]) {
    if xs.is_empty() {
        return;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let std = (xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    for x in xs.iter_mut() {
        *x = (*x - mean) / if std > 1e-8 { std } else { 1.0 };
    }
}
