//! Rollout and update loop for the learned controller.

use std::collections::VecDeque;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use super::episode::{derive_seed, run_episode, EpisodeConfig, Trajectory};
use super::state::FEATURE_DIM;
use super::SimError;
use crate::learn::{
    anneal_temperature, gae, normalize, ppo_update, Agent, LearnError, PolicyController, Sample,
    SampleMode, TrainConfig, UpdateStats,
};
use crate::network::NetworkScenario;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("training diverged at episode {episode}: {message}")]
    Diverged {
        episode: u64,
        message: String,
        last_good: Box<TrainCheckpoint>,
    },
    #[error("checkpoint does not match this model: expected {expected}, found {found}")]
    CheckpointMismatch { expected: String, found: String },
}

/// Training curve row, one per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub episode: u64,
    pub mean_reward: f64,
    pub mean_q: f64,
    pub mean_cost: f64,
    pub temperature: f64,
    pub updated: bool,
    pub clip_fraction: f64,
    pub policy_loss: f64,
    pub value_loss_perf: f64,
    pub value_loss_stab: f64,
    pub entropy: f64,
    /// Greedy evaluation reward, on evaluation episodes.
    pub eval_reward: Option<f64>,
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainCheckpoint {
    pub version: u32,
    pub spec_hash: String,
    /// Index of the next episode to run.
    pub episode: u64,
    pub seed: u64,
    pub agent: Agent,
    pub best: Agent,
    pub best_eval: Option<f64>,
    pub pending: Vec<Trajectory>,
    pub steps_since_update: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best agent by evaluation reward.
    pub best: Agent,
    pub best_eval: Option<f64>,
    pub last: TrainCheckpoint,
    pub curves: Vec<CurveRow>,
}

/// Identifies the policy input/output shape a checkpoint was trained for.
pub fn spec_hash(env: &EpisodeConfig) -> String {
    let m = &env.model;
    format!(
        "{}:L{}:H{}:F{}",
        m.name, m.layers, m.heads, FEATURE_DIM
    )
}

/// Training inputs: the base episode config, the scenarios cycled through
/// per episode (empty means the base config's), and the master seed.
#[derive(Debug, Clone)]
pub struct TrainSetup {
    pub env: EpisodeConfig,
    pub scenarios: Vec<NetworkScenario>,
    pub config: TrainConfig,
    pub seed: u64,
}

impl TrainSetup {
    fn scenario(&self, i: u64) -> NetworkScenario {
        if self.scenarios.is_empty() {
            self.env.network.clone()
        } else {
            self.scenarios[(i % self.scenarios.len() as u64) as usize].clone()
        }
    }

    /// Config of training episode `k`.
    pub fn episode_config(&self, k: u64) -> EpisodeConfig {
        let mut c = self.env.clone();
        c.network = self.scenario(k);
        c.seed = derive_seed(self.seed, "episode", k);
        c
    }

    /// Configs of the fixed evaluation episodes, one per scenario.
    pub fn eval_configs(&self) -> Vec<EpisodeConfig> {
        let n = self.scenarios.len().max(1) as u64;
        (0..n)
            .map(|i| {
                let mut c = self.env.clone();
                c.network = self.scenario(i);
                c.seed = derive_seed(self.seed, "eval", i);
                c
            })
            .collect()
    }

    pub fn initial_checkpoint(&self) -> TrainCheckpoint {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "init", 0));
        let agent = Agent::new(
            FEATURE_DIM,
            self.env.model.layers,
            self.env.model.heads,
            &self.config,
            &mut rng,
        );
        TrainCheckpoint {
            version: CHECKPOINT_VERSION,
            spec_hash: spec_hash(&self.env),
            episode: 0,
            seed: self.seed,
            best: agent.clone(),
            agent,
            best_eval: None,
            pending: Vec::new(),
            steps_since_update: 0,
        }
    }
}

/// Mean reward of the greedy policy over `configs`.
pub fn evaluate(agent: &Agent, configs: &[EpisodeConfig]) -> Result<f64, SimError> {
    let mut total = 0.0;
    for c in configs {
        let mut ctl = PolicyController::new(agent.policy.clone(), SampleMode::Greedy);
        total += run_episode(c, &mut ctl)?.report.mean_reward;
    }
    Ok(total / configs.len() as f64)
}

/// Turns trajectories into PPO samples: performance advantages by GAE on
/// `-g`, stability advantages as the stability critic's prediction minus
/// the realized mean backlog over the next `horizon` slots (scaled by
/// `q_scale`), combined with each step's V and normalized.
pub fn build_samples(
    agent: &Agent,
    trajectories: &[Trajectory],
    cfg: &TrainConfig,
    q_scale: f64,
) -> Result<Vec<Sample>, LearnError> {
    let mut out = Vec::new();
    for traj in trajectories {
        let n = traj.steps.len();
        if n == 0 {
            continue;
        }
        let rewards: Vec<f64> = traj.steps.iter().map(|s| -s.cost).collect();
        let values = traj
            .steps
            .iter()
            .map(|s| agent.value_perf(&s.features))
            .collect::<Result<Vec<_>, _>>()?;
        let next_value = if traj.final_features.is_empty() {
            0.0
        } else {
            agent.value_perf(&traj.final_features)?
        };
        let (a_perf, returns) = gae(&rewards, &values, next_value, cfg.gamma, cfg.gae_lambda)?;
        let mut qs: Vec<f64> = traj.steps.iter().map(|s| s.backlog / q_scale).collect();
        qs.push(traj.final_backlog / q_scale);
        for (t, s) in traj.steps.iter().enumerate() {
            let end = (t + cfg.stability_horizon).min(n);
            let window = &qs[t + 1..=end];
            let target = window.iter().sum::<f64>() / window.len() as f64;
            let a_stab = agent.value_stab(&s.features)? - target;
            out.push(Sample {
                features: s.features.clone(),
                action: s.action.clone(),
                old_log_prob: s.log_prob,
                advantage: a_perf[t] + s.v * a_stab,
                a_perf: a_perf[t],
                a_stab,
                v: s.v,
                return_perf: returns[t],
                target_stab: target,
            });
        }
    }
    let mut adv: Vec<f64> = out.iter().map(|s| s.advantage).collect();
    normalize(&mut adv);
    for (s, a) in out.iter_mut().zip(adv) {
        s.advantage = a;
    }
    Ok(out)
}

/// Runs training from `start` (or a fresh initialization) until
/// `config.episodes` episodes have been played.
pub fn train(setup: &TrainSetup, start: Option<TrainCheckpoint>) -> Result<TrainOutcome, TrainError> {
    setup.config.validate()?;
    setup.env.validate()?;
    let cfg = &setup.config;
    let expected = spec_hash(&setup.env);
    let mut ck = match start {
        Some(c) => {
            if c.spec_hash != expected {
                return Err(TrainError::CheckpointMismatch {
                    expected,
                    found: c.spec_hash,
                });
            }
            c
        }
        None => setup.initial_checkpoint(),
    };
    let evals = setup.eval_configs();
    let q_scale = setup.env.lyapunov.q_critical;
    let mut curves = Vec::new();
    let mut pending: VecDeque<Trajectory> = ck.pending.drain(..).collect();

    for k in ck.episode..cfg.episodes as u64 {
        let mut ctl = PolicyController::new(ck.agent.policy.clone(), SampleMode::Sample);
        let out = run_episode(&setup.episode_config(k), &mut ctl)?;
        ck.steps_since_update += out.trajectory.steps.len();
        pending.push_back(out.trajectory);
        while pending.iter().map(|t| t.steps.len()).sum::<usize>() > cfg.buffer_size
            && pending.len() > 1
        {
            pending.pop_front();
        }

        let mut stats: Option<UpdateStats> = None;
        if k >= cfg.warmup_episodes as u64 && ck.steps_since_update >= cfg.update_every {
            let trajectories: Vec<Trajectory> = pending.iter().cloned().collect();
            let mut samples = build_samples(&ck.agent, &trajectories, cfg, q_scale)?;
            if samples.len() > cfg.batch_size {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(setup.seed, "batch", k));
                let mut idx = sample_indices(&mut rng, samples.len(), cfg.batch_size).into_vec();
                idx.sort_unstable();
                samples = idx.into_iter().map(|i| samples[i].clone()).collect();
            }
            match ppo_update(&mut ck.agent, &samples, cfg) {
                Ok(s) => stats = Some(s),
                Err(LearnError::NonFinite(message)) => {
                    ck.episode = k;
                    ck.pending = pending.into_iter().collect();
                    return Err(TrainError::Diverged {
                        episode: k,
                        message,
                        last_good: Box::new(ck),
                    });
                }
                Err(e) => return Err(e.into()),
            }
            pending.clear();
            ck.steps_since_update = 0;
        }
        ck.agent.policy.temperature =
            anneal_temperature(ck.agent.policy.temperature, cfg.anneal_beta, cfg.tau_min);

        let mut eval_reward = None;
        if (k + 1) % cfg.eval_every as u64 == 0 || k + 1 == cfg.episodes as u64 {
            let r = evaluate(&ck.agent, &evals)?;
            eval_reward = Some(r);
            if ck.best_eval.is_none_or(|b| r > b) {
                ck.best_eval = Some(r);
                ck.best = ck.agent.clone();
            }
            info!(episode = k + 1, eval_reward = r, "evaluation");
        }
        let s = stats.unwrap_or_default();
        curves.push(CurveRow {
            episode: k + 1,
            mean_reward: out.report.mean_reward,
            mean_q: out.report.mean_q,
            mean_cost: out.report.mean_cost,
            temperature: ck.agent.policy.temperature,
            updated: stats.is_some(),
            clip_fraction: s.clip_fraction,
            policy_loss: s.policy_loss,
            value_loss_perf: s.value_loss_perf,
            value_loss_stab: s.value_loss_stab,
            entropy: s.entropy,
            eval_reward,
        });
    }
    ck.episode = ck.episode.max(cfg.episodes as u64);
    ck.pending = pending.into_iter().collect();
    Ok(TrainOutcome {
        best: ck.best.clone(),
        best_eval: ck.best_eval,
        last: ck,
        curves,
    })
}

pub fn write_curves_csv<W: std::io::Write>(rows: &[CurveRow], w: W) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
