//! Queue dynamics and drift-plus-penalty scoring.
//!
//! The controller weight `V` multiplies the drift term:
//! `reward = -(V * drift + g)`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::cost::CostBreakdown;

/// Lindley recursion: serve up to `service_rate * slot` then add arrivals.
pub fn queue_update(backlog: f64, service_rate: f64, arrivals: f64, slot: f64) -> f64 {
    debug_assert!(backlog >= 0.0 && service_rate >= 0.0 && arrivals >= 0.0);
    (backlog - service_rate * slot).max(0.0) + arrivals
}

pub fn lyapunov(backlog: f64) -> f64 {
    0.5 * backlog * backlog
}

/// Point estimate of the one-slot drift, `Q * (lambda - mu)`.
pub fn drift_estimate(backlog: f64, arrival_rate: f64, service_rate: f64) -> f64 {
    backlog * (arrival_rate - service_rate)
}

/// Upper bound on the expected drift: `B + Q * (lambda - mu)`.
pub fn drift_bound(bound: f64, backlog: f64, arrival_rate: f64, service_rate: f64) -> f64 {
    bound + drift_estimate(backlog, arrival_rate, service_rate)
}

pub fn dpp_reward(drift: f64, cost: f64, v: f64) -> f64 {
    -(v * drift + cost)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostWeights {
    pub latency: f64,
    pub energy: f64,
    pub accuracy: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            latency: 1.0,
            energy: 1.0,
            accuracy: 1.0,
        }
    }
}

/// `g = w_T * T + w_E * E + w_A * penalty`.
pub fn immediate_cost(costs: &CostBreakdown, w: &CostWeights) -> f64 {
    w.latency * costs.total_s + w.energy * costs.energy_j + w.accuracy * costs.accuracy_penalty
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovConfig {
    pub v_min: f64,
    pub v_max: f64,
    /// Backlog scale of the adaptive-V decay, requests.
    pub q_ref: f64,
    /// Backlog above which a run is considered unstable, requests.
    pub q_critical: f64,
    /// Drift bound constant, used only for reporting bound curves.
    pub drift_bound: f64,
    /// Pins V to this value instead of the adaptive schedule.
    #[serde(default)]
    pub fixed_v: Option<f64>,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            v_min: 0.1,
            v_max: 10.0,
            q_ref: 10.0,
            q_critical: 50.0,
            drift_bound: 100.0,
            fixed_v: None,
        }
    }
}

impl LyapunovConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.v_min > 0.0 && self.v_min <= self.v_max) {
            return Err(format!(
                "need 0 < v_min <= v_max, got [{}, {}]",
                self.v_min, self.v_max
            ));
        }
        if !(self.q_ref > 0.0) {
            return Err("q_ref must be positive".into());
        }
        if !(self.q_critical > 0.0) {
            return Err("q_critical must be positive".into());
        }
        if let Some(v) = self.fixed_v {
            if !(v >= 0.0) || !v.is_finite() {
                return Err("fixed_v must be finite and >= 0".into());
            }
        }
        Ok(())
    }

    /// The V in effect at this backlog.
    pub fn v_at(&self, backlog: f64) -> f64 {
        self.fixed_v.unwrap_or_else(|| adaptive_v(backlog, self))
    }
}

/// `V_min + (V_max - V_min) * exp(-Q / Q_ref)`.
pub fn adaptive_v(backlog: f64, cfg: &LyapunovConfig) -> f64 {
    cfg.v_min + (cfg.v_max - cfg.v_min) * (-backlog / cfg.q_ref).exp()
}

/// Backlog plus a ring of the most recent values.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueState {
    pub backlog: f64,
    window: VecDeque<f64>,
    capacity: usize,
}

impl QueueState {
    pub fn new(window: usize) -> Self {
        Self {
            backlog: 0.0,
            window: VecDeque::with_capacity(window.max(1)),
            capacity: window.max(1),
        }
    }

    pub fn record(&mut self, backlog: f64) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(backlog);
        self.backlog = backlog;
    }

    pub fn window_mean(&self) -> f64 {
        if self.window.is_empty() {
            return self.backlog;
        }
        self.window.iter().sum::<f64>() / self.window.len() as f64
    }
}
