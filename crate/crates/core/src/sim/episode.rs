//! One episode: slot-by-slot decide, serve, account.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::debug;

use super::state::{FeatureNorms, HistoryWindow, RollingStat, SystemState};
use super::SimError;
use crate::cost::{transfer_time, CostBreakdown, CostModel, CostOptions, DeviceProfile, QuantConfig};
use crate::lyapunov::{
    dpp_reward, drift_estimate, immediate_cost, queue_update, CostWeights, LyapunovConfig,
    QueueState,
};
use crate::network::{
    sample_transfer_failure, transfer_failure_probability, NetworkProcess, NetworkScenario, NetworkState};
use crate::partition::{Boundary, PartitionPlan};
use crate::policy::{Controller, DecisionContext};
use crate::workload::{sample_arrivals, ModelSpec, Request, RequestGenerator, WorkloadConfig};

/// Bandwidth the bandwidth features are divided by, bit/s.
pub const REFERENCE_BANDWIDTH_BPS: f64 = 100e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backoff {
    pub base_s: f64,
    pub multiplier: f64,
    pub max_retries: u32,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base_s: 0.05,
            multiplier: 2.0,
            max_retries: 5,
        }
    }
}

impl Backoff {
    /// Wait before retry `k` (zero-based).
    pub fn delay(&self, k: u32) -> f64 {
        self.base_s * self.multiplier.powi(k as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    pub model: ModelSpec,
    pub device: DeviceProfile,
    pub network: NetworkScenario,
    pub workload: WorkloadConfig,
    pub weights: CostWeights,
    pub lyapunov: LyapunovConfig,
    pub slots: u64,
    pub seed: u64,
    pub cost: CostOptions,
    pub quant: QuantConfig,
    pub backoff: Backoff,
    /// History window length, slots.
    pub window: usize,
    /// Fraction of edge compute left to inference.
    pub background_load: f64,
    /// Arrival rate the arrival features are divided by, req/s.
    pub lambda_max: f64,
}

impl EpisodeConfig {
    pub fn new(
        model: ModelSpec,
        device: DeviceProfile,
        network: NetworkScenario,
        workload: WorkloadConfig,
    ) -> Self {
        Self {
            model,
            device,
            network,
            workload,
            weights: CostWeights::default(),
            lyapunov: LyapunovConfig::default(),
            slots: 1000,
            seed: 0,
            cost: CostOptions::default(),
            quant: QuantConfig::default(),
            backoff: Backoff::default(),
            window: 20,
            background_load: 1.0,
            lambda_max: 20.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        self.model.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.device.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.network.validate()?;
        self.workload.validate().map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        self.lyapunov.validate().map_err(SimError::InvalidConfig)?;
        if self.slots == 0 {
            return bad("slots must be >= 1".into());
        }
        if self.window == 0 {
            return bad("window must be >= 1".into());
        }
        if !(self.background_load > 0.0 && self.background_load <= 1.0) {
            return bad(format!("background_load must be in (0, 1], got {}", self.background_load));
        }
        if !(self.lambda_max > 0.0) {
            return bad("lambda_max must be > 0".into());
        }
        let b = &self.backoff;
        if !(b.base_s >= 0.0 && b.multiplier >= 1.0) {
            return bad("backoff needs base_s >= 0 and multiplier >= 1".into());
        }
        let w = &self.weights;
        if !(w.latency >= 0.0 && w.energy >= 0.0 && w.accuracy >= 0.0) {
            return bad("cost weights must be >= 0".into());
        }
        if ![1, 2, 4].contains(&self.cost.precision_bytes) {
            return bad("precision_bytes must be 1, 2 or 4".into());
        }
        Ok(())
    }

    /// Cost model with the edge throughput scaled by the background load.
    pub fn cost_model(&self) -> CostModel {
        let mut device = self.device.clone();
        device.edge_efficiency *= self.background_load;
        CostModel {
            spec: self.model.clone(),
            device,
            options: self.cost,
            quant: self.quant.clone(),
        }
    }

    pub fn feature_norms(&self) -> FeatureNorms {
        FeatureNorms {
            backlog: self.lyapunov.q_critical,
            bandwidth_bps: REFERENCE_BANDWIDTH_BPS,
            arrival_rate: self.lambda_max,
            compute: self.device.edge_flops,
            memory: self.device.edge_memory_bytes as f64,
        }
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Seed of sub-stream `(stream, index)` of `master`: SplitMix64 over the
/// master seed, an FNV-1a hash of the stream name, and the index.
pub fn derive_seed(master: u64, stream: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in stream.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    mix(mix(mix(master) ^ h) ^ index)
}

pub fn stream_rng(master: u64, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, 0))
}

/// Saved state at the boundary a retry resumes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub boundary: usize,
    pub pending_bytes: u64,
    pub plan_id: String,
    pub slot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferOutcome {
    pub boundary: Boundary,
    pub failures: u32,
    pub delivered: bool,
    /// Present when at least one attempt failed.
    pub checkpoint: Option<Checkpoint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub costs: CostBreakdown,
    pub transfers: Vec<TransferOutcome>,
    /// Retries were exhausted on some boundary.
    pub failed: bool,
}

impl Execution {
    pub fn failures(&self) -> u32 {
        self.transfers.iter().map(|t| t.failures).sum()
    }
}

/// Costs the plan, then walks its boundaries drawing failures from
/// `fails(boundary, attempt)`. Each failed attempt that is retried adds the
/// backoff delay plus one more transfer of the payload.
pub fn execute_partition_with<F>(
    plan: &PartitionPlan,
    model: &CostModel,
    n: usize,
    net: &NetworkState,
    backoff: &Backoff,
    slot: u64,
    mut fails: F,
) -> Execution
where
    F: FnMut(&Boundary, u32) -> bool,
{
    let mut costs = model.evaluate(plan, n, net);
    let boundaries = plan.boundaries(&model.spec, n, model.options.precision_bytes);
    let mut transfers = Vec::with_capacity(boundaries.len());
    let mut failed = false;
    for (i, b) in boundaries.into_iter().enumerate() {
        if failed {
            break;
        }
        let mut failures = 0;
        let mut checkpoint = None;
        let mut delivered = false;
        for attempt in 0..=backoff.max_retries {
            if !fails(&b, attempt) {
                delivered = true;
                break;
            }
            failures += 1;
            checkpoint.get_or_insert_with(|| Checkpoint {
                boundary: i,
                pending_bytes: b.volume_bytes,
                plan_id: plan.id(),
                slot,
            });
            if attempt < backoff.max_retries {
                let wire = transfer_time(b.volume_bytes, net);
                let extra = backoff.delay(attempt) + wire;
                costs.comm_s += extra;
                costs.total_s += extra;
                costs.energy_j += model.device.radio_power_w * wire;
            }
        }
        failed = !delivered;
        transfers.push(TransferOutcome {
            boundary: b,
            failures,
            delivered,
            checkpoint,
        });
    }
    Execution {
        costs,
        transfers,
        failed,
    }
}

pub fn execute_partition<R: Rng + ?Sized>(
    plan: &PartitionPlan,
    model: &CostModel,
    n: usize,
    net: &NetworkState,
    backoff: &Backoff,
    slot: u64,
    rng: &mut R,
) -> Execution {
    execute_partition_with(plan, model, n, net, backoff, slot, |b, _| {
        sample_transfer_failure(rng, net.loss, b.volume_bytes)
    })
}

/// Cost model values plus the expected overhead of retries: attempt `k` is
/// retried with probability `p^(k+1)`, each retry costing the backoff delay
/// and one more transfer. Equals `model.evaluate` on a lossless link.
pub fn expected_costs(
    plan: &PartitionPlan,
    model: &CostModel,
    n: usize,
    net: &NetworkState,
    backoff: &Backoff,
) -> CostBreakdown {
    let mut costs = model.evaluate(plan, n, net);
    if net.loss <= 0.0 {
        return costs;
    }
    for b in plan.boundaries(&model.spec, n, model.options.precision_bytes) {
        let p = transfer_failure_probability(net.loss, b.volume_bytes);
        let wire = transfer_time(b.volume_bytes, net);
        let mut reach = 1.0;
        for k in 0..backoff.max_retries {
            reach *= p;
            let extra = reach * (backoff.delay(k) + wire);
            costs.comm_s += extra;
            costs.total_s += extra;
            costs.energy_j += reach * model.device.radio_power_w * wire;
        }
    }
    costs
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p95: f64,
    pub p99: f64,
}

/// Nearest-rank percentiles.
pub fn percentiles(latencies: &[f64]) -> Result<Percentiles, SimError> {
    if latencies.is_empty() {
        return Err(SimError::EmptyPercentiles);
    }
    let mut v = latencies.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = |p: f64| {
        let r = (p / 100.0 * v.len() as f64).ceil() as usize;
        v[r.clamp(1, v.len()) - 1]
    };
    Ok(Percentiles {
        p50: rank(50.0),
        p95: rank(95.0),
        p99: rank(99.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Stable,
    Unstable,
    Infeasible,
}

/// One row of the per-slot log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotRecord {
    pub slot: u64,
    /// Backlog at the start of the slot.
    #[serde(rename = "Q")]
    pub q: f64,
    #[serde(rename = "V")]
    pub v: f64,
    #[serde(rename = "B_mbps")]
    pub b_mbps: f64,
    pub latency_s: f64,
    #[serde(rename = "energy_J")]
    pub energy_j: f64,
    pub acc_penalty: f64,
    pub drift: f64,
    pub reward: f64,
    pub plan_id: String,
    pub failures: u32,
    pub arrivals: u64,
    /// Requests' worth of service delivered this slot.
    pub served: f64,
    pub mu: f64,
}

pub const SLOT_COLUMNS: [&str; 14] = [
    "slot",
    "Q",
    "V",
    "B_mbps",
    "latency_s",
    "energy_J",
    "acc_penalty",
    "drift",
    "reward",
    "plan_id",
    "failures",
    "arrivals",
    "served",
    "mu",
];

pub fn write_slot_csv<W: Write>(rows: &[SlotRecord], w: W) -> Result<(), SimError> {
    let mut out = csv::Writer::from_writer(w);
    if rows.is_empty() {
        out.write_record(SLOT_COLUMNS)?;
    }
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a slot log; lines starting with `#` are skipped.
pub fn read_slot_csv<R: std::io::Read>(r: R) -> Result<Vec<SlotRecord>, SimError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(r)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(SimError::from)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub controller: String,
    pub scenario: String,
    pub seed: u64,
    pub slots: u64,
    /// Absent when no request completed.
    pub latency: Option<Percentiles>,
    pub mean_energy_j: f64,
    pub mean_acc_penalty: f64,
    pub mean_q: f64,
    pub max_q: f64,
    /// Mean backlog over the final third of the run.
    pub tail_mean_q: f64,
    pub mean_cost: f64,
    pub mean_reward: f64,
    pub verdict: Verdict,
    pub diagnostic: Option<String>,
    pub arrivals: u64,
    pub completions: u64,
    pub failed_final: u64,
    pub residual: u64,
    pub transfer_failures: u64,
    pub log_path: Option<String>,
}

/// One decision step as seen by the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub features: Vec<f64>,
    pub action: Vec<u8>,
    pub log_prob: f64,
    pub reward: f64,
    pub cost: f64,
    pub drift: f64,
    pub v: f64,
    pub backlog: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    /// Features observed after the last step.
    pub final_features: Vec<f64>,
    pub final_backlog: f64,
}

#[derive(Debug, Clone)]
pub struct EpisodeOutput {
    pub trajectory: Trajectory,
    pub report: MetricsReport,
    pub slots: Vec<SlotRecord>,
}

#[derive(Debug, Clone)]
struct Queued {
    request: Request,
    retried: bool,
}

#[derive(Debug, Clone)]
struct InFlight {
    job: Queued,
    total_s: f64,
    remaining_s: f64,
    /// Leaves the system when done (completed or failed for good).
    departs: bool,
    failed: bool,
}

fn churn(prev: Option<&[u8]>, cur: &[u8]) -> f64 {
    match prev {
        Some(p) if p.len() == cur.len() && !cur.is_empty() => {
            p.iter().zip(cur).filter(|(a, b)| a != b).count() as f64 / cur.len() as f64
        }
        _ => 0.0,
    }
}

/// Scenario label for reports.
pub fn scenario_label(s: &NetworkScenario) -> String {
    match s {
        NetworkScenario::Static { .. } => "static".into(),
        NetworkScenario::Markov { .. } => "markov".into(),
        NetworkScenario::Trace { .. } => "trace".into(),
    }
}

/// Runs one episode. All randomness comes from streams derived from
/// `cfg.seed`, so runs with different controllers see the same arrivals,
/// lengths and network path.
pub fn run_episode(
    cfg: &EpisodeConfig,
    controller: &mut dyn Controller,
) -> Result<EpisodeOutput, SimError> {
    cfg.validate()?;
    let model = cfg.cost_model();
    let norms = cfg.feature_norms();
    let dt = cfg.workload.slot_duration;
    let lambda = cfg.workload.arrival_rate;

    let mut net_rng = stream_rng(cfg.seed, "network");
    let mut arrival_rng = stream_rng(cfg.seed, "arrivals");
    let mut length_rng = stream_rng(cfg.seed, "lengths");
    let mut failure_rng = stream_rng(cfg.seed, "failures");
    let mut policy_rng = stream_rng(cfg.seed, "policy");

    let mut network = NetworkProcess::new(cfg.network.clone())?;
    let mut generator =
        RequestGenerator::new(&cfg.workload).map_err(|e| SimError::InvalidConfig(e.to_string()))?;

    let mut queue: VecDeque<Queued> = VecDeque::new();
    let mut in_flight: Option<InFlight> = None;
    let mut backlog = 0.0f64;
    let mut qstate = QueueState::new(cfg.window);
    let mut bandwidth = RollingStat::new(cfg.window);
    let mut arrivals_seen = RollingStat::new(cfg.window);
    let mut history = HistoryWindow::new(cfg.window);
    let mut last_arrivals = 0u64;
    let mut prev_action: Option<Vec<u8>> = None;
    let mut memory_used = 0u64;

    let mut rows = Vec::with_capacity(cfg.slots as usize);
    let mut steps = Vec::with_capacity(cfg.slots as usize);
    let mut latencies = Vec::new();
    let (mut energy_sum, mut acc_sum) = (0.0, 0.0);
    let (mut arrivals_total, mut completions, mut failed_final) = (0u64, 0u64, 0u64);
    let mut transfer_failures = 0u64;
    let mut executions = 0u64;
    let mut verdict = None;
    let mut diagnostic = None;
    let mut final_features = Vec::new();

    for slot in 0..cfg.slots {
        let net = network.step(&mut net_rng)?;
        bandwidth.push(net.bandwidth_bps);
        qstate.record(backlog);
        arrivals_seen.push(last_arrivals as f64 / dt);
        let (b_mean, b_std) = bandwidth.mean_std();
        let state = SystemState {
            slot,
            backlog,
            backlog_mean: qstate.window_mean(),
            bandwidth_bps: net.bandwidth_bps,
            bandwidth_mean: b_mean,
            bandwidth_std: b_std,
            arrival_rate: last_arrivals as f64 / dt,
            arrival_rate_mean: arrivals_seen.mean_std().0,
            compute_avail: model.device.effective_flops(crate::cost::Side::Edge),
            memory_avail: cfg.device.edge_memory_bytes.saturating_sub(memory_used) as f64,
            history: history.summary(),
        };
        let features = state.features(&norms);
        let v = cfg.lyapunov.v_at(backlog);
        let seq_len = queue
            .front()
            .map(|q| q.request.seq_len)
            .unwrap_or_else(|| cfg.workload.nominal_seq_len());

        let ctx = DecisionContext {
            state: &state,
            features: &features,
            model: &model,
            net: &net,
            seq_len,
            arrival_rate: lambda,
            v,
            weights: &cfg.weights,
            backoff: &cfg.backoff,
        };
        let decision = match controller.decide(&ctx, &mut policy_rng) {
            Ok(d) => d,
            Err(e) => {
                verdict = Some(Verdict::Infeasible);
                diagnostic = Some(format!("slot {slot}: {e}"));
                final_features = features;
                break;
            }
        };
        if let Err(e) = decision.plan.validate(&cfg.model, &cfg.device) {
            verdict = Some(Verdict::Infeasible);
            diagnostic = Some(format!("slot {slot}: {} chose an infeasible plan: {e}", controller.name()));
            final_features = features;
            break;
        }
        let plan = decision.plan;
        let action = plan.encode();
        memory_used = plan.active_edge_memory(&cfg.model);

        // Serve FIFO for one slot.
        let slot_start = slot as f64 * dt;
        let mut time_left = dt;
        let mut served = 0.0;
        let mut started: Vec<CostBreakdown> = Vec::new();
        let mut slot_failures = 0u32;
        loop {
            if in_flight.is_none() {
                let Some(job) = queue.pop_front() else { break };
                let exec = execute_partition(
                    &plan,
                    &model,
                    job.request.seq_len,
                    &net,
                    &cfg.backoff,
                    slot,
                    &mut failure_rng,
                );
                slot_failures += exec.failures();
                started.push(exec.costs);
                let departs = !exec.failed || job.retried;
                in_flight = Some(InFlight {
                    job,
                    total_s: exec.costs.total_s,
                    remaining_s: exec.costs.total_s,
                    departs,
                    failed: exec.failed,
                });
            }
            let f = in_flight.as_mut().unwrap();
            let run = f.remaining_s.min(time_left);
            if f.departs && f.total_s > 0.0 {
                served += run / f.total_s;
            }
            f.remaining_s -= run;
            time_left -= run;
            if f.remaining_s <= 0.0 {
                let f = in_flight.take().unwrap();
                let done_at = slot_start + (dt - time_left);
                match (f.failed, f.departs) {
                    (false, _) => {
                        completions += 1;
                        let visible = (f.job.request.arrival_slot + 1) as f64 * dt;
                        latencies.push(done_at - visible);
                    }
                    (true, true) => failed_final += 1,
                    (true, false) => queue.push_back(Queued {
                        request: f.job.request,
                        retried: true,
                    }),
                }
            }
            if time_left <= 0.0 {
                break;
            }
        }
        transfer_failures += slot_failures as u64;

        let slot_cost = if started.is_empty() {
            model.evaluate(&plan, seq_len, &net)
        } else {
            let k = started.len() as f64;
            let mut c = started[0];
            for s in &started[1..] {
                c.edge_compute_s += s.edge_compute_s;
                c.comm_s += s.comm_s;
                c.cloud_compute_s += s.cloud_compute_s;
                c.total_s += s.total_s;
                c.energy_j += s.energy_j;
                c.accuracy_penalty += s.accuracy_penalty;
            }
            executions += started.len() as u64;
            energy_sum += c.energy_j;
            acc_sum += c.accuracy_penalty;
            c.edge_compute_s /= k;
            c.comm_s /= k;
            c.cloud_compute_s /= k;
            c.total_s /= k;
            c.energy_j /= k;
            c.accuracy_penalty /= k;
            c
        };
        let mu = 1.0 / slot_cost.total_s;
        let drift = drift_estimate(backlog, lambda, mu);
        let g = immediate_cost(&slot_cost, &cfg.weights);
        let reward = dpp_reward(drift, g, v);

        let arrivals = sample_arrivals(&mut arrival_rng, lambda, dt);
        for _ in 0..arrivals {
            queue.push_back(Queued {
                request: generator.next_request(&mut length_rng, slot),
                retried: false,
            });
        }
        arrivals_total += arrivals;
        let next_backlog = queue_update(backlog, served / dt, arrivals as f64, dt);

        rows.push(SlotRecord {
            slot,
            q: backlog,
            v,
            b_mbps: net.bandwidth_mbps(),
            latency_s: slot_cost.total_s,
            energy_j: slot_cost.energy_j,
            acc_penalty: slot_cost.accuracy_penalty,
            drift,
            reward,
            plan_id: plan.id(),
            failures: slot_failures,
            arrivals,
            served,
            mu,
        });
        history.record(reward, slot_cost.total_s, drift, churn(prev_action.as_deref(), &action));
        steps.push(Step {
            features,
            action: action.clone(),
            log_prob: decision.log_prob,
            reward,
            cost: g,
            drift,
            v,
            backlog,
        });
        prev_action = Some(action);
        last_arrivals = arrivals;
        backlog = next_backlog;

        if slot + 1 == cfg.slots {
            let (b_mean, b_std) = bandwidth.mean_std();
            let after = SystemState {
                slot: slot + 1,
                backlog,
                backlog_mean: qstate.window_mean(),
                bandwidth_bps: net.bandwidth_bps,
                bandwidth_mean: b_mean,
                bandwidth_std: b_std,
                arrival_rate: arrivals as f64 / dt,
                arrival_rate_mean: arrivals_seen.mean_std().0,
                compute_avail: state.compute_avail,
                memory_avail: cfg.device.edge_memory_bytes.saturating_sub(memory_used) as f64,
                history: history.summary(),
            };
            final_features = after.features(&norms);
        }
    }

    let residual = queue.len() as u64 + in_flight.is_some() as u64;
    debug_assert_eq!(arrivals_total, completions + failed_final + residual);
    let qs: Vec<f64> = rows.iter().map(|r| r.q).collect();
    let mean = |xs: &[f64]| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let tail_mean_q = mean(&qs[qs.len() - qs.len() / 3..]);
    let tail_mean_q = if qs.len() < 3 { mean(&qs) } else { tail_mean_q };
    let verdict = verdict.unwrap_or(if tail_mean_q < cfg.lyapunov.q_critical {
        Verdict::Stable
    } else {
        Verdict::Unstable
    });
    let executed = rows.len() as f64;
    let per_request = |x: f64| {
        if executions == 0 {
            0.0
        } else {
            x / executions as f64
        }
    };
    let report = MetricsReport {
        controller: controller.name().to_string(),
        scenario: scenario_label(&cfg.network),
        seed: cfg.seed,
        slots: rows.len() as u64,
        latency: percentiles(&latencies).ok(),
        mean_energy_j: per_request(energy_sum),
        mean_acc_penalty: per_request(acc_sum),
        mean_q: mean(&qs),
        max_q: qs.iter().cloned().fold(0.0, f64::max),
        tail_mean_q,
        mean_cost: if executed > 0.0 {
            steps.iter().map(|s| s.cost).sum::<f64>() / executed
        } else {
            0.0
        },
        mean_reward: if executed > 0.0 {
            steps.iter().map(|s| s.reward).sum::<f64>() / executed
        } else {
            0.0
        },
        verdict,
        diagnostic,
        arrivals: arrivals_total,
        completions,
        failed_final,
        residual,
        transfer_failures,
        log_path: None,
    };
    debug!(controller = %report.controller, seed = cfg.seed, mean_q = report.mean_q, "episode done");
    Ok(EpisodeOutput {
        trajectory: Trajectory {
            steps,
            final_features,
            final_backlog: backlog,
        },
        report,
        slots: rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePoint {
    pub lambda: f64,
    pub tail_mean_q: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Largest stable rate on the grid; `None` means none was stable.
    pub max_stable: Option<f64>,
    pub points: Vec<ProbePoint>,
}

/// Runs one episode per grid rate and reports the largest stable one.
/// Scanning stops after `patience` consecutive unstable rates.
pub fn stability_probe(
    make_controller: &mut dyn FnMut() -> Box<dyn Controller>,
    cfg: &EpisodeConfig,
    grid: &[f64],
    patience: usize,
) -> Result<ProbeResult, SimError> {
    if grid.is_empty() || grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(SimError::InvalidConfig("λ grid must be non-empty and ascending".into()));
    }
    let mut points = Vec::new();
    let mut max_stable = None;
    let mut misses = 0;
    for &lambda in grid {
        let mut c = cfg.clone();
        c.workload.arrival_rate = lambda;
        let mut controller = make_controller();
        let out = run_episode(&c, controller.as_mut())?;
        let stable = out.report.verdict == Verdict::Stable;
        points.push(ProbePoint {
            lambda,
            tail_mean_q: out.report.tail_mean_q,
            verdict: out.report.verdict,
        });
        if stable {
            max_stable = Some(lambda);
            misses = 0;
        } else {
            misses += 1;
            if misses >= patience {
                break;
            }
        }
    }
    Ok(ProbeResult { max_stable, points })
}
