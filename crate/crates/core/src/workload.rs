//! Transformer model descriptors at component granularity and request
//! stream generation.
//!
//! A layer decomposes into `H` attention heads plus the two FFN
//! projections. FLOP counts use the multiply-add = 2 FLOPs convention.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("unknown model preset `{0}`")]
    UnknownPreset(String),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("component {0} is out of range for this model")]
    ComponentOutOfRange(Component),
    #[error("sequence length must be at least 1")]
    ZeroSequenceLength,
    #[error("invalid workload config: {0}")]
    InvalidConfig(String),
    #[error("trace {path}: {message}")]
    Trace { path: PathBuf, message: String },
}

/// Architecture descriptor for a decoder-style transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    pub d_head: usize,
    pub d_ff: usize,
    /// Stored rather than derived from the dims (the published presets do
    /// not reproduce their parameter counts from layer shapes alone).
    pub nominal_params: f64,
    pub bytes_per_param: usize,
}

/// Shape of a user-defined model; omitted fields take the usual defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomModel {
    #[serde(default = "CustomModel::default_name")]
    pub name: String,
    pub layers: usize,
    pub heads: usize,
    pub d_model: usize,
    #[serde(default)]
    pub d_ff: Option<usize>,
    #[serde(default)]
    pub nominal_params: Option<f64>,
    #[serde(default)]
    pub bytes_per_param: Option<usize>,
}

impl CustomModel {
    fn default_name() -> String {
        "custom".to_string()
    }
}

pub const PRESET_NAMES: [&str; 3] = ["gpt2-1.5b", "llama-7b", "llama-13b"];

impl ModelSpec {
    /// Looks up one of the built-in presets by name.
    pub fn preset(name: &str) -> Result<Self, WorkloadError> {
        let (layers, heads, d_model, params) = match name {
            "gpt2-1.5b" => (24, 16, 1600, 1.5e9),
            "llama-7b" => (32, 32, 4096, 7.0e9),
            "llama-13b" => (40, 40, 5120, 1.3e10),
            other => return Err(WorkloadError::UnknownPreset(other.to_string())),
        };
        Self::custom(&CustomModel {
            name: name.to_string(),
            layers,
            heads,
            d_model,
            d_ff: None,
            nominal_params: Some(params),
            bytes_per_param: None,
        })
    }

    pub fn custom(shape: &CustomModel) -> Result<Self, WorkloadError> {
        let CustomModel {
            name,
            layers,
            heads,
            d_model,
            ..
        } = shape.clone();
        if layers == 0 || heads == 0 || d_model == 0 {
            return Err(WorkloadError::InvalidSpec(
                "layers, heads and d_model must be positive".into(),
            ));
        }
        if d_model % heads != 0 {
            return Err(WorkloadError::InvalidSpec(format!(
                "d_model {d_model} is not divisible by {heads} heads"
            )));
        }
        let d_ff = shape.d_ff.unwrap_or(4 * d_model);
        let bytes_per_param = shape.bytes_per_param.unwrap_or(4);
        let mut spec = ModelSpec {
            name,
            layers,
            heads,
            d_model,
            d_head: d_model / heads,
            d_ff,
            nominal_params: 0.0,
            bytes_per_param,
        };
        spec.nominal_params = shape
            .nominal_params
            .unwrap_or_else(|| spec.component_parameter_count() as f64);
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidSpec(m.to_string()));
        if self.layers == 0 || self.heads == 0 || self.d_ff == 0 || self.d_model == 0 {
            return bad("layers, heads, d_model and d_ff must be positive");
        }
        if self.d_head * self.heads != self.d_model {
            return bad("d_head * heads must equal d_model");
        }
        if !(self.nominal_params > 0.0) || !self.nominal_params.is_finite() {
            return bad("nominal_params must be positive");
        }
        if self.bytes_per_param == 0 {
            return bad("bytes_per_param must be positive");
        }
        Ok(())
    }

    /// Whole-model weight footprint from the nominal parameter count.
    pub fn nominal_memory_bytes(&self) -> f64 {
        self.nominal_params * self.bytes_per_param as f64
    }

    /// Parameters covered by the per-component formulas (attention and FFN
    /// weights plus FFN biases; embeddings and norms excluded).
    pub fn component_parameter_count(&self) -> u64 {
        let (dm, dh, dff) = (self.d_model as u64, self.d_head as u64, self.d_ff as u64);
        let per_layer = self.heads as u64 * 4 * dm * dh + 2 * dm * dff + dff + dm;
        per_layer * self.layers as u64
    }

    pub fn components(&self) -> impl Iterator<Item = Component> + '_ {
        (1..=self.layers).flat_map(move |layer| {
            (1..=self.heads)
                .map(move |h| Component::head(layer, h))
                .chain([
                    Component::new(layer, ComponentKind::Ffn1),
                    Component::new(layer, ComponentKind::Ffn2),
                ])
        })
    }

    fn check(&self, c: Component) -> Result<(), WorkloadError> {
        let layer_ok = (1..=self.layers).contains(&c.layer);
        let kind_ok = match c.kind {
            ComponentKind::Head(h) => (1..=self.heads).contains(&h),
            ComponentKind::Ffn1 | ComponentKind::Ffn2 => true,
        };
        if layer_ok && kind_ok {
            Ok(())
        } else {
            Err(WorkloadError::ComponentOutOfRange(c))
        }
    }

    /// FLOPs to run one component over a sequence of `n` tokens.
    pub fn component_flops(&self, c: Component, n: usize) -> Result<u64, WorkloadError> {
        self.check(c)?;
        if n == 0 {
            return Err(WorkloadError::ZeroSequenceLength);
        }
        Ok(self.flops_unchecked(c.kind, n))
    }

    pub(crate) fn flops_unchecked(&self, kind: ComponentKind, n: usize) -> u64 {
        let (n, dm, dh, dff) = (
            n as u64,
            self.d_model as u64,
            self.d_head as u64,
            self.d_ff as u64,
        );
        match kind {
            // QKV projections, QK^T and AV, then the head's slice of W_O.
            ComponentKind::Head(_) => 6 * n * dm * dh + 4 * n * n * dh + 2 * n * dh * dm,
            ComponentKind::Ffn1 | ComponentKind::Ffn2 => 2 * n * dm * dff,
        }
    }

    pub fn head_flops(&self, n: usize) -> u64 {
        self.flops_unchecked(ComponentKind::Head(1), n)
    }

    pub fn ffn_flops(&self, n: usize) -> u64 {
        self.flops_unchecked(ComponentKind::Ffn1, n)
    }

    /// Resident weight bytes of one component.
    pub fn component_memory(&self, c: Component) -> Result<u64, WorkloadError> {
        self.check(c)?;
        Ok(self.memory_unchecked(c.kind))
    }

    pub(crate) fn memory_unchecked(&self, kind: ComponentKind) -> u64 {
        let (dm, dh, dff, b) = (
            self.d_model as u64,
            self.d_head as u64,
            self.d_ff as u64,
            self.bytes_per_param as u64,
        );
        match kind {
            ComponentKind::Head(_) => 4 * dm * dh * b,
            ComponentKind::Ffn1 => (dm * dff + dff) * b,
            ComponentKind::Ffn2 => (dff * dm + dm) * b,
        }
    }

    pub fn head_memory(&self) -> u64 {
        self.memory_unchecked(ComponentKind::Head(1))
    }

    /// Size of an `n x d_model` activation at the given precision.
    pub fn activation_bytes(&self, n: usize, precision_bytes: usize) -> Result<u64, WorkloadError> {
        if n == 0 {
            return Err(WorkloadError::ZeroSequenceLength);
        }
        Ok((n * self.d_model * precision_bytes) as u64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ComponentKind {
    Head(usize),
    Ffn1,
    Ffn2,
}

/// One independently placeable unit; layer and head indices are 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Component {
    pub layer: usize,
    pub kind: ComponentKind,
}

impl Component {
    pub fn new(layer: usize, kind: ComponentKind) -> Self {
        Self { layer, kind }
    }

    pub fn head(layer: usize, head: usize) -> Self {
        Self::new(layer, ComponentKind::Head(head))
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ComponentKind::Head(h) => write!(f, "L{}.H{}", self.layer, h),
            ComponentKind::Ffn1 => write!(f, "L{}.FFN1", self.layer),
            ComponentKind::Ffn2 => write!(f, "L{}.FFN2", self.layer),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    pub seq_len: usize,
    pub arrival_slot: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SeqLenDist {
    Lognormal {
        mu: f64,
        sigma: f64,
        min: usize,
        max: usize,
    },
    Fixed {
        n: usize,
    },
    Trace {
        path: PathBuf,
    },
}

impl Default for SeqLenDist {
    fn default() -> Self {
        SeqLenDist::Lognormal {
            mu: 5.5,
            sigma: 0.8,
            min: 50,
            max: 2048,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadConfig {
    /// Mean arrivals per second.
    pub arrival_rate: f64,
    #[serde(default)]
    pub seq_len: SeqLenDist,
    /// Slot length in seconds.
    #[serde(default = "WorkloadConfig::default_slot")]
    pub slot_duration: f64,
}

impl WorkloadConfig {
    fn default_slot() -> f64 {
        1.0
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::InvalidConfig(m));
        if !(self.arrival_rate >= 0.0) || !self.arrival_rate.is_finite() {
            return bad(format!("arrival_rate must be >= 0, got {}", self.arrival_rate));
        }
        if !(self.slot_duration > 0.0) || !self.slot_duration.is_finite() {
            return bad(format!("slot_duration must be > 0, got {}", self.slot_duration));
        }
        match &self.seq_len {
            SeqLenDist::Lognormal {
                sigma, min, max, ..
            } => {
                if min > max || *min == 0 {
                    return bad(format!("sequence bounds [{min}, {max}] are invalid"));
                }
                if !(*sigma >= 0.0) {
                    return bad("lognormal sigma must be >= 0".into());
                }
            }
            SeqLenDist::Fixed { n } if *n == 0 => return bad("fixed length must be >= 1".into()),
            _ => {}
        }
        Ok(())
    }

    /// A representative sequence length, used before any request exists.
    pub fn nominal_seq_len(&self) -> usize {
        match &self.seq_len {
            SeqLenDist::Lognormal { mu, min, max, .. } => {
                (mu.exp().round() as usize).clamp(*min, *max)
            }
            SeqLenDist::Fixed { n } => *n,
            SeqLenDist::Trace { .. } => 256,
        }
    }
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        Self {
            arrival_rate: 4.0,
            seq_len: SeqLenDist::default(),
            slot_duration: 1.0,
        }
    }
}

/// Number of arrivals in one slot: Poisson with mean `rate * slot`.
pub fn sample_arrivals<R: Rng + ?Sized>(rng: &mut R, rate: f64, slot: f64) -> u64 {
    let mean = rate * slot;
    if mean <= 0.0 {
        return 0;
    }
    let dist = Poisson::new(mean).expect("positive finite Poisson mean");
    dist.sample(rng) as u64
}

#[derive(Debug, Deserialize)]
struct TraceRecord {
    n: usize,
}

/// Reads a JSON-lines trace of `{"n": <tokens>}` records.
pub fn read_length_trace(path: &Path) -> Result<Vec<usize>, WorkloadError> {
    let err = |message: String| WorkloadError::Trace {
        path: path.to_path_buf(),
        message,
    };
    let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
    let mut lengths = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord =
            serde_json::from_str(line).map_err(|e| err(format!("line {}: {e}", i + 1)))?;
        if rec.n == 0 {
            return Err(err(format!("line {}: n must be >= 1", i + 1)));
        }
        lengths.push(rec.n);
    }
    if lengths.is_empty() {
        return Err(err("trace is empty".into()));
    }
    Ok(lengths)
}

enum LengthSource {
    Lognormal {
        dist: LogNormal<f64>,
        min: usize,
        max: usize,
    },
    Fixed(usize),
    /// Replays in order and wraps at the end.
    Trace { lengths: Vec<usize>, cursor: usize },
}

/// Stateful request generator: monotone ids, lengths from the configured
/// distribution.
pub struct RequestGenerator {
    source: LengthSource,
    next_id: u64,
}

impl RequestGenerator {
    pub fn new(cfg: &WorkloadConfig) -> Result<Self, WorkloadError> {
        cfg.validate()?;
        let source = match &cfg.seq_len {
            SeqLenDist::Lognormal {
                mu,
                sigma,
                min,
                max,
            } => LengthSource::Lognormal {
                dist: LogNormal::new(*mu, *sigma)
                    .map_err(|e| WorkloadError::InvalidConfig(e.to_string()))?,
                min: *min,
                max: *max,
            },
            SeqLenDist::Fixed { n } => LengthSource::Fixed(*n),
            SeqLenDist::Trace { path } => LengthSource::Trace {
                lengths: read_length_trace(path)?,
                cursor: 0,
            },
        };
        Ok(Self { source, next_id: 0 })
    }

    pub fn next_request<R: Rng + ?Sized>(&mut self, rng: &mut R, slot: u64) -> Request {
        let seq_len = match &mut self.source {
            LengthSource::Lognormal { dist, min, max } => {
                let x: f64 = dist.sample(rng);
                (x.round() as usize).clamp(*min, *max)
            }
            LengthSource::Fixed(n) => *n,
            LengthSource::Trace { lengths, cursor } => {
                let n = lengths[*cursor];
                *cursor = (*cursor + 1) % lengths.len();
                n
            }
        };
        let id = self.next_id;
        self.next_id += 1;
        Request {
            id,
            seq_len,
            arrival_slot: slot,
        }
    }
}
