//! Observable system state and its normalized feature vector.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

/// Length of [`SystemState::features`].
pub const FEATURE_DIM: usize = 17;
/// Length of the history summary inside the feature vector.
pub const HISTORY_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemState {
    pub slot: u64,
    pub backlog: f64,
    /// Mean backlog over the recent window.
    pub backlog_mean: f64,
    pub bandwidth_bps: f64,
    pub bandwidth_mean: f64,
    pub bandwidth_std: f64,
    /// Arrivals observed in the previous slot, per second.
    pub arrival_rate: f64,
    pub arrival_rate_mean: f64,
    /// Edge compute currently available, FLOP/s.
    pub compute_avail: f64,
    /// Edge memory left after the previous plan's footprint, bytes.
    pub memory_avail: f64,
    pub history: [f64; HISTORY_DIM],
}

/// Fixed reference constants the features are divided by.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorms {
    pub backlog: f64,
    pub bandwidth_bps: f64,
    pub arrival_rate: f64,
    pub compute: f64,
    pub memory: f64,
}

impl SystemState {
    pub fn features(&self, norms: &FeatureNorms) -> Vec<f64> {
        let q = |x: f64| (x / norms.backlog).min(10.0);
        let mut f = Vec::with_capacity(FEATURE_DIM);
        f.push(q(self.backlog));
        f.push(q(self.backlog_mean));
        f.push(self.bandwidth_bps / norms.bandwidth_bps);
        f.push(self.bandwidth_mean / norms.bandwidth_bps);
        f.push(self.bandwidth_std / norms.bandwidth_bps);
        f.push(self.arrival_rate / norms.arrival_rate);
        f.push(self.arrival_rate_mean / norms.arrival_rate);
        f.push(self.compute_avail / norms.compute);
        f.push(self.memory_avail / norms.memory);
        f.extend_from_slice(&self.history);
        debug_assert_eq!(f.len(), FEATURE_DIM);
        f
    }
}

fn signed_log(x: f64) -> f64 {
    x.signum() * x.abs().ln_1p()
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = xs.clone().sum::<f64>() / n as f64;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HistoryEntry {
    reward: f64,
    latency: f64,
    drift_sign: f64,
    churn: f64,
}

/// Rolling window of recent outcomes, summarized as mean and spread of
/// reward, latency, drift sign and action churn.
#[derive(Debug, Clone)]
pub struct HistoryWindow {
    entries: VecDeque<HistoryEntry>,
    capacity: usize,
}

impl HistoryWindow {
    pub fn new(capacity: usize) -> Self {
        Self {
            entries: VecDeque::with_capacity(capacity.max(1)),
            capacity: capacity.max(1),
        }
    }

    /// `churn` is the fraction of action entries changed from the previous slot.
    pub fn record(&mut self, reward: f64, latency: f64, drift: f64, churn: f64) {
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back(HistoryEntry {
            reward: signed_log(reward),
            latency,
            drift_sign: drift.signum() * (drift != 0.0) as u8 as f64,
            churn,
        });
    }

    pub fn summary(&self) -> [f64; HISTORY_DIM] {
        let it = self.entries.iter();
        let (rm, rs) = mean_std(it.clone().map(|e| e.reward));
        let (lm, ls) = mean_std(it.clone().map(|e| e.latency));
        let (dm, ds) = mean_std(it.clone().map(|e| e.drift_sign));
        let (cm, cs) = mean_std(it.map(|e| e.churn));
        [rm, rs, lm, ls, dm, ds, cm, cs]
    }
}

/// Rolling mean and standard deviation of a scalar.
#[derive(Debug, Clone)]
pub struct RollingStat {
    values: VecDeque<f64>,
    capacity: usize,
}

impl RollingStat {
    pub fn new(capacity: usize) -> Self {
        Self {
            values: VecDeque::with_capacity(capacity.max(1)),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&mut self, x: f64) {
        if self.values.len() == self.capacity {
            self.values.pop_front();
        }
        self.values.push_back(x);
    }

    pub fn mean_std(&self) -> (f64, f64) {
        mean_std(self.values.iter().copied())
    }
}
