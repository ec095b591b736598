//! Latency, energy and accuracy-penalty model for a plan under an
//! instantaneous network state.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NetworkState;
use crate::partition::{Boundary, BoundaryKind, FfnMode, PartitionPlan};
use crate::workload::ModelSpec;

#[derive(Debug, Error)]
pub enum CostError {
    #[error("unknown device profile `{0}`")]
    UnknownDevice(String),
    #[error("invalid device profile: {0}")]
    InvalidDevice(String),
}

/// Edge device plus the cloud it offloads to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceProfile {
    pub name: String,
    /// Peak edge throughput, FLOP/s.
    pub edge_flops: f64,
    /// Peak cloud throughput, FLOP/s.
    pub cloud_flops: f64,
    pub edge_memory_bytes: u64,
    /// Edge power while computing, W.
    pub compute_power_w: f64,
    /// Edge radio power while transmitting or receiving, W.
    pub radio_power_w: f64,
    pub edge_efficiency: f64,
    pub cloud_efficiency: f64,
}

pub const DEVICE_NAMES: [&str; 3] = ["jetson-orin-nx", "galaxy-s23", "rpi5-npu"];

/// 8x A100 at 312 TFLOP/s dense fp16 each.
const CLOUD_FLOPS: f64 = 8.0 * 312e12;

impl DeviceProfile {
    pub fn preset(name: &str) -> Result<Self, CostError> {
        let (flops, mem_gb, power) = match name {
            "jetson-orin-nx" => (100e12, 8.0, 25.0),
            // Hexagon NPU; the vendor does not publish a TOPS figure.
            "galaxy-s23" => (30e12, 12.0, 8.0),
            "rpi5-npu" => (13e12, 8.0, 12.0),
            other => return Err(CostError::UnknownDevice(other.to_string())),
        };
        Ok(Self {
            name: name.to_string(),
            edge_flops: flops,
            cloud_flops: CLOUD_FLOPS,
            edge_memory_bytes: (mem_gb * 1e9) as u64,
            compute_power_w: power,
            radio_power_w: 2.0,
            edge_efficiency: 0.2,
            cloud_efficiency: 0.35,
        })
    }

    pub fn jetson_orin_nx() -> Self {
        Self::preset("jetson-orin-nx").expect("built-in preset")
    }

    pub fn validate(&self) -> Result<(), CostError> {
        let positive = [
            ("edge_flops", self.edge_flops),
            ("cloud_flops", self.cloud_flops),
            ("compute_power_w", self.compute_power_w),
            ("radio_power_w", self.radio_power_w),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(CostError::InvalidDevice(format!("{field} must be positive")));
            }
        }
        for (field, v) in [
            ("edge_efficiency", self.edge_efficiency),
            ("cloud_efficiency", self.cloud_efficiency),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(CostError::InvalidDevice(format!("{field} must be in (0, 1]")));
            }
        }
        if self.edge_memory_bytes == 0 {
            return Err(CostError::InvalidDevice("edge_memory_bytes must be positive".into()));
        }
        Ok(())
    }

    pub fn effective_flops(&self, side: Side) -> f64 {
        match side {
            Side::Edge => self.edge_flops * self.edge_efficiency,
            Side::Cloud => self.cloud_flops * self.cloud_efficiency,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Edge,
    Cloud,
}

/// How propagation latency is charged for a multi-boundary plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatencyMode {
    /// One `l_n` per transition.
    #[default]
    PerTransition,
    /// A single `l_n` whenever any transition exists.
    Single,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    Sequential,
    #[default]
    Pipelined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostBreakdown {
    pub edge_compute_s: f64,
    pub comm_s: f64,
    pub cloud_compute_s: f64,
    pub total_s: f64,
    pub energy_j: f64,
    pub accuracy_penalty: f64,
    pub transitions: usize,
}

/// Per-layer FLOPs on each side.
fn layer_flops(plan: &PartitionPlan, spec: &ModelSpec, n: usize) -> Vec<(f64, f64)> {
    let head = spec.head_flops(n) as f64;
    let ffn = spec.ffn_flops(n) as f64;
    plan.layers
        .iter()
        .map(|l| {
            let (ffn_e, ffn_c) = match l.ffn {
                FfnMode::Edge => (2.0 * ffn, 0.0),
                FfnMode::Cloud => (0.0, 2.0 * ffn),
                FfnMode::Split => (ffn, ffn),
            };
            (
                l.edge_heads() as f64 * head + ffn_e,
                l.cloud_heads() as f64 * head + ffn_c,
            )
        })
        .collect()
}

/// Compute time on one side: that side's FLOPs over its effective rate.
pub fn compute_time(
    plan: &PartitionPlan,
    spec: &ModelSpec,
    n: usize,
    device: &DeviceProfile,
    side: Side,
) -> f64 {
    let total: f64 = layer_flops(plan, spec, n)
        .iter()
        .map(|&(e, c)| match side {
            Side::Edge => e,
            Side::Cloud => c,
        })
        .sum();
    total / device.effective_flops(side)
}

/// Serialization time of one boundary, without propagation delay.
pub fn transfer_time(volume_bytes: u64, net: &NetworkState) -> f64 {
    volume_bytes as f64 * 8.0 / net.bandwidth_bps
}

/// Total link time for a boundary list.
pub fn comm_time(boundaries: &[Boundary], net: &NetworkState, mode: LatencyMode) -> f64 {
    let wire: f64 = boundaries
        .iter()
        .map(|b| transfer_time(b.volume_bytes, net))
        .sum();
    wire + propagation(boundaries.len(), net, mode)
}

fn propagation(transitions: usize, net: &NetworkState, mode: LatencyMode) -> f64 {
    match (mode, transitions) {
        (_, 0) => 0.0,
        (LatencyMode::PerTransition, k) => k as f64 * net.latency_s,
        (LatencyMode::Single, _) => net.latency_s,
    }
}

/// Makespan of a three-stage flow shop (edge | link | cloud) over per-layer
/// stage times, followed by a trailing link-only tail.
pub fn pipeline_makespan(stages: &[[f64; 3]], tail: f64) -> f64 {
    let (mut edge, mut link, mut cloud) = (0.0f64, 0.0f64, 0.0f64);
    for s in stages {
        edge += s[0];
        link = link.max(edge) + s[1];
        cloud = cloud.max(link) + s[2];
    }
    cloud.max(link).max(edge) + tail
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CostOptions {
    /// Activation precision at edge-cloud boundaries, bytes.
    #[serde(default = "CostOptions::default_precision")]
    pub precision_bytes: usize,
    #[serde(default)]
    pub latency_mode: LatencyMode,
    #[serde(default)]
    pub pipeline: PipelineMode,
}

impl CostOptions {
    fn default_precision() -> usize {
        2
    }
}

impl Default for CostOptions {
    fn default() -> Self {
        Self {
            precision_bytes: 2,
            latency_mode: LatencyMode::PerTransition,
            pipeline: PipelineMode::Pipelined,
        }
    }
}

/// Latency breakdown (accuracy penalty left at zero; see [`accuracy_penalty`]).
pub fn total_latency(
    plan: &PartitionPlan,
    spec: &ModelSpec,
    n: usize,
    device: &DeviceProfile,
    net: &NetworkState,
    opts: &CostOptions,
) -> CostBreakdown {
    let boundaries = plan.boundaries(spec, n, opts.precision_bytes);
    let per_layer = layer_flops(plan, spec, n);
    let edge_rate = device.effective_flops(Side::Edge);
    let cloud_rate = device.effective_flops(Side::Cloud);
    let edge_compute_s: f64 = per_layer.iter().map(|p| p.0).sum::<f64>() / edge_rate;
    let cloud_compute_s: f64 = per_layer.iter().map(|p| p.1).sum::<f64>() / cloud_rate;
    let comm_s = comm_time(&boundaries, net, opts.latency_mode);
    let sequential = edge_compute_s + comm_s + cloud_compute_s;

    let total_s = match opts.pipeline {
        PipelineMode::Sequential => sequential,
        PipelineMode::Pipelined => {
            let mut stages: Vec<[f64; 3]> = per_layer
                .iter()
                .map(|&(e, c)| [e / edge_rate, 0.0, c / cloud_rate])
                .collect();
            let mut tail = 0.0;
            let mut first = true;
            for b in &boundaries {
                let mut t = transfer_time(b.volume_bytes, net);
                let charge_latency = match opts.latency_mode {
                    LatencyMode::PerTransition => true,
                    LatencyMode::Single => first,
                };
                if charge_latency {
                    t += net.latency_s;
                }
                first = false;
                if b.kind == BoundaryKind::OutputDownload {
                    tail += t;
                } else {
                    stages[b.layer - 1][1] += t;
                }
            }
            // The recurrence never exceeds the plain sum; min() only guards
            // against rounding.
            pipeline_makespan(&stages, tail).min(sequential)
        }
    };

    CostBreakdown {
        edge_compute_s,
        comm_s,
        cloud_compute_s,
        total_s,
        energy_j: edge_energy(device, edge_compute_s, &boundaries, net),
        accuracy_penalty: 0.0,
        transitions: boundaries.len(),
    }
}

fn edge_energy(
    device: &DeviceProfile,
    edge_compute_s: f64,
    boundaries: &[Boundary],
    net: &NetworkState,
) -> f64 {
    let radio_s: f64 = boundaries
        .iter()
        .map(|b| transfer_time(b.volume_bytes, net))
        .sum();
    device.compute_power_w * edge_compute_s + device.radio_power_w * radio_s
}

/// Edge energy per request: compute power over edge compute time plus
/// radio power over wire time.
pub fn energy(
    plan: &PartitionPlan,
    spec: &ModelSpec,
    n: usize,
    device: &DeviceProfile,
    net: &NetworkState,
    opts: &CostOptions,
) -> f64 {
    let boundaries = plan.boundaries(spec, n, opts.precision_bytes);
    let t_edge = compute_time(plan, spec, n, device, Side::Edge);
    edge_energy(device, t_edge, &boundaries, net)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuantConfig {
    /// Quantizer resolution; `None` is the identity quantizer.
    #[serde(default = "QuantConfig::default_bits")]
    pub bits: Option<u32>,
    /// Per-boundary weights in dataflow order; missing entries are 1.0.
    #[serde(default)]
    pub boundary_weights: Vec<f64>,
    #[serde(default)]
    pub probe_seed: u64,
}

impl QuantConfig {
    fn default_bits() -> Option<u32> {
        Some(16)
    }

    pub fn identity() -> Self {
        Self {
            bits: None,
            ..Self::default()
        }
    }
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            bits: Self::default_bits(),
            boundary_weights: Vec::new(),
            probe_seed: 0,
        }
    }
}

/// Squared error of uniform quantization onto `2^bits` evenly spaced levels
/// spanning `[min, max]` of `x`. Exact ties round to the lower level.
pub fn quantization_error(x: &[f64], bits: Option<u32>) -> f64 {
    let Some(bits) = bits else { return 0.0 };
    if x.is_empty() || bits >= 52 {
        return 0.0;
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        return 0.0;
    }
    let steps = ((1u64 << bits) - 1) as f64;
    let step = (hi - lo) / steps;
    x.iter()
        .map(|&v| {
            let u = (v - lo) / step;
            let k = (u - 0.5).ceil().clamp(0.0, steps);
            let q = lo + k * step;
            (v - q) * (v - q)
        })
        .sum()
}

type ProbeKey = (usize, u32, u64);

/// Cumulative per-row errors of each probe stream, grown on demand.
fn probe_cache() -> &'static Mutex<HashMap<ProbeKey, Vec<f64>>> {
    static CACHE: OnceLock<Mutex<HashMap<ProbeKey, Vec<f64>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Quantization error of a standard-normal probe of `rows` tokens by
/// `width` features, each token quantized over its own range. Row `r` is
/// the same for every `rows > r`, so the result is a cached prefix sum.
pub fn probe_error(rows: usize, width: usize, bits: Option<u32>, seed: u64) -> f64 {
    let Some(bits) = bits else { return 0.0 };
    if rows == 0 || width == 0 {
        return 0.0;
    }
    let key = (width, bits, seed);
    let mut cache = probe_cache().lock().expect("probe cache");
    let prefix = cache.entry(key).or_insert_with(|| vec![0.0]);
    if prefix.len() <= rows {
        let done = prefix.len() - 1;
        let mut rng =
            ChaCha8Rng::seed_from_u64(seed ^ (width as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        // advance past the rows already folded in
        let mut row = vec![0.0; width];
        for r in 0..rows {
            for v in row.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            if r >= done {
                let last = *prefix.last().unwrap();
                prefix.push(last + quantization_error(&row, Some(bits)));
            }
        }
    }
    prefix[rows]
}

/// Features per token crossing a boundary.
fn boundary_width(b: &Boundary, spec: &ModelSpec) -> usize {
    match b.kind {
        BoundaryKind::FfnSplit => spec.d_ff,
        _ => spec.d_model,
    }
}

/// Weighted quantization error summed over the plan's boundaries.
pub fn accuracy_penalty(
    plan: &PartitionPlan,
    spec: &ModelSpec,
    n: usize,
    quant: &QuantConfig,
    opts: &CostOptions,
) -> f64 {
    if quant.bits.is_none() {
        return 0.0;
    }
    plan.boundaries(spec, n, opts.precision_bytes)
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let alpha = quant.boundary_weights.get(i).copied().unwrap_or(1.0);
            alpha * probe_error(n, boundary_width(b, spec), quant.bits, quant.probe_seed)
        })
        .fold(0.0, |acc, x| acc + x)
}

/// Bundles the static inputs of the cost model.
#[derive(Debug, Clone)]
pub struct CostModel {
    pub spec: ModelSpec,
    pub device: DeviceProfile,
    pub options: CostOptions,
    pub quant: QuantConfig,
}

impl CostModel {
    pub fn new(spec: ModelSpec, device: DeviceProfile) -> Self {
        Self {
            spec,
            device,
            options: CostOptions::default(),
            quant: QuantConfig::default(),
        }
    }

    pub fn evaluate(&self, plan: &PartitionPlan, n: usize, net: &NetworkState) -> CostBreakdown {
        let mut c = total_latency(plan, &self.spec, n, &self.device, net, &self.options);
        c.accuracy_penalty = accuracy_penalty(plan, &self.spec, n, &self.quant, &self.options);
        c
    }
}
