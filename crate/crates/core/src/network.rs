//! Edge-cloud link model: time-varying bandwidth, latency and loss, plus
//! per-transfer failure sampling.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Packet size used to turn a loss rate into a per-transfer failure rate.
pub const PACKET_BYTES: u64 = 1500;

pub const SCENARIO_NAMES: [&str; 5] = ["wifi", "5g-good", "5g-avg", "4g", "var"];

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("unknown network scenario `{0}`")]
    UnknownScenario(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("network trace exhausted after {0} records")]
    TraceExhausted(usize),
    #[error("trace {path}: {message}")]
    Trace { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkState {
    pub bandwidth_bps: f64,
    pub latency_s: f64,
    /// Bound of the uniform latency perturbation, seconds.
    pub jitter_s: f64,
    /// Packet loss probability.
    pub loss: f64,
}

impl NetworkState {
    pub fn new(mbps: f64, latency_ms: f64, jitter_ms: f64, loss: f64) -> Self {
        Self {
            bandwidth_bps: mbps * 1e6,
            latency_s: latency_ms * 1e-3,
            jitter_s: jitter_ms * 1e-3,
            loss,
        }
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        if !(self.bandwidth_bps > 0.0) || !self.bandwidth_bps.is_finite() {
            return Err(NetworkError::InvalidScenario("bandwidth must be positive".into()));
        }
        if !(self.latency_s >= 0.0) || !(self.jitter_s >= 0.0) {
            return Err(NetworkError::InvalidScenario(
                "latency and jitter must be non-negative".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.loss) {
            return Err(NetworkError::InvalidScenario("loss must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn bandwidth_mbps(&self) -> f64 {
        self.bandwidth_bps / 1e6
    }
}

/// One row of a link trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub slot: u64,
    #[serde(rename = "B_mbps")]
    pub bandwidth_mbps: f64,
    pub latency_ms: f64,
    pub loss: f64,
}

impl TraceRecord {
    fn state(&self) -> NetworkState {
        NetworkState::new(self.bandwidth_mbps, self.latency_ms, 0.0, self.loss)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkScenario {
    Static {
        state: NetworkState,
    },
    Markov {
        states: Vec<NetworkState>,
        transition: Vec<Vec<f64>>,
        /// Slots spent in a state before the next transition draw.
        dwell: u32,
    },
    Trace {
        records: Vec<TraceRecord>,
        #[serde(default)]
        looping: bool,
    },
}

fn table_row(name: &str) -> Option<NetworkState> {
    Some(match name {
        "wifi" => NetworkState::new(100.0, 10.0, 2.0, 1e-4),
        "5g-good" => NetworkState::new(50.0, 20.0, 5.0, 1e-3),
        "5g-avg" => NetworkState::new(25.0, 40.0, 10.0, 5e-3),
        "4g" => NetworkState::new(10.0, 80.0, 20.0, 1e-2),
        _ => return None,
    })
}

impl NetworkScenario {
    pub fn named(name: &str) -> Result<Self, NetworkError> {
        if let Some(state) = table_row(name) {
            return Ok(NetworkScenario::Static { state });
        }
        if name != "var" {
            return Err(NetworkError::UnknownScenario(name.to_string()));
        }
        let states: Vec<_> = ["wifi", "5g-good", "5g-avg", "4g"]
            .iter()
            .filter_map(|n| table_row(n))
            .collect();
        Ok(NetworkScenario::Markov {
            transition: sticky_transition(states.len(), 0.9),
            states,
            dwell: 5,
        })
    }

    pub fn trace_from_csv(path: &Path, looping: bool) -> Result<Self, NetworkError> {
        let text = fs::read_to_string(path).map_err(|e| NetworkError::Trace {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let records = parse_trace_csv(&text).map_err(|message| NetworkError::Trace {
            path: path.display().to_string(),
            message,
        })?;
        let scenario = NetworkScenario::Trace { records, looping };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<(), NetworkError> {
        let bad = |m: String| Err(NetworkError::InvalidScenario(m));
        match self {
            NetworkScenario::Static { state } => state.validate(),
            NetworkScenario::Markov {
                states,
                transition,
                dwell,
            } => {
                if states.is_empty() {
                    return bad("markov scenario needs at least one state".into());
                }
                if *dwell == 0 {
                    return bad("dwell must be >= 1".into());
                }
                if transition.len() != states.len() {
                    return bad("transition matrix must be square over the states".into());
                }
                for (i, row) in transition.iter().enumerate() {
                    if row.len() != states.len() || row.iter().any(|&p| !(p >= 0.0)) {
                        return bad(format!("transition row {i} is malformed"));
                    }
                    let sum: f64 = row.iter().sum();
                    if (sum - 1.0).abs() > 1e-9 {
                        return bad(format!("transition row {i} sums to {sum}"));
                    }
                }
                states.iter().try_for_each(NetworkState::validate)
            }
            NetworkScenario::Trace { records, .. } => {
                if records.is_empty() {
                    return bad("trace has no records".into());
                }
                records.iter().try_for_each(|r| r.state().validate())
            }
        }
    }

    /// Largest bandwidth this scenario can emit, for feature scaling.
    pub fn max_bandwidth_bps(&self) -> f64 {
        match self {
            NetworkScenario::Static { state } => state.bandwidth_bps,
            NetworkScenario::Markov { states, .. } => {
                states.iter().map(|s| s.bandwidth_bps).fold(0.0, f64::max)
            }
            NetworkScenario::Trace { records, .. } => records
                .iter()
                .map(|r| r.bandwidth_mbps * 1e6)
                .fold(0.0, f64::max),
        }
    }
}

/// Stay with probability `stay`, otherwise move uniformly to another state.
pub fn sticky_transition(k: usize, stay: f64) -> Vec<Vec<f64>> {
    if k == 1 {
        return vec![vec![1.0]];
    }
    let off = (1.0 - stay) / (k - 1) as f64;
    (0..k)
        .map(|i| (0..k).map(|j| if i == j { stay } else { off }).collect())
        .collect()
}

fn parse_trace_csv(text: &str) -> Result<Vec<TraceRecord>, String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>() != ["slot", "B_mbps", "latency_ms", "loss"] {
        return Err(format!("unexpected header {:?}", headers));
    }
    reader
        .deserialize()
        .map(|r| r.map_err(|e| e.to_string()))
        .collect()
}

/// Renders records with round-trip float formatting, so parsing and
/// re-emitting a trace is byte-identical.
pub fn trace_to_csv(records: &[TraceRecord]) -> String {
    let mut out = String::from("slot,B_mbps,latency_ms,loss\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?}",
            r.slot, r.bandwidth_mbps, r.latency_ms, r.loss
        );
    }
    out
}

/// Per-episode cursor over a scenario.
#[derive(Debug, Clone)]
pub struct NetworkProcess {
    scenario: NetworkScenario,
    index: usize,
    slots_in_state: u32,
}

impl NetworkProcess {
    pub fn new(scenario: NetworkScenario) -> Result<Self, NetworkError> {
        scenario.validate()?;
        Ok(Self {
            scenario,
            index: 0,
            slots_in_state: 0,
        })
    }

    /// Starts a Markov chain in the given state instead of state 0.
    pub fn with_initial_state(mut self, index: usize) -> Self {
        if let NetworkScenario::Markov { states, .. } = &self.scenario {
            self.index = index.min(states.len() - 1);
        }
        self
    }

    pub fn scenario(&self) -> &NetworkScenario {
        &self.scenario
    }

    /// Index of the current Markov state or trace record.
    pub fn state_index(&self) -> usize {
        self.index
    }

    /// Emits the state for the next slot.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<NetworkState, NetworkError> {
        match &self.scenario {
            NetworkScenario::Static { state } => Ok(jittered(*state, rng)),
            NetworkScenario::Markov {
                states,
                transition,
                dwell,
            } => {
                if self.slots_in_state >= *dwell {
                    self.index = draw_row(&transition[self.index], rng);
                    self.slots_in_state = 0;
                }
                self.slots_in_state += 1;
                Ok(jittered(states[self.index], rng))
            }
            NetworkScenario::Trace { records, looping } => {
                if self.index >= records.len() {
                    if *looping {
                        self.index = 0;
                    } else {
                        return Err(NetworkError::TraceExhausted(records.len()));
                    }
                }
                let s = records[self.index].state();
                self.index += 1;
                Ok(s)
            }
        }
    }
}

fn draw_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left u above the final cumulative sum.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

fn jittered<R: Rng + ?Sized>(base: NetworkState, rng: &mut R) -> NetworkState {
    if base.jitter_s <= 0.0 {
        return base;
    }
    let delta = rng.random_range(-base.jitter_s..=base.jitter_s);
    NetworkState {
        latency_s: (base.latency_s + delta).max(0.0),
        ..base
    }
}

/// Probability that a transfer of `volume_bytes` loses at least one packet.
pub fn transfer_failure_probability(loss: f64, volume_bytes: u64) -> f64 {
    let packets = volume_bytes.div_ceil(PACKET_BYTES);
    1.0 - (1.0 - loss).powf(packets as f64)
}

pub fn sample_transfer_failure<R: Rng + ?Sized>(rng: &mut R, loss: f64, volume_bytes: u64) -> bool {
    if loss <= 0.0 {
        return false;
    }
    rng.random::<f64>() < transfer_failure_probability(loss, volume_bytes)
}
