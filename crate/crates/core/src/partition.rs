//! Partition plans and their edge-cloud boundary structure.
//!
//! Dataflow model: a request starts on the edge. Each layer runs its
//! attention heads, aggregates them, then runs FFN1 and FFN2. Activations
//! cross the link whenever consecutive stages sit on different sides.
//!
//! Residence rule: a layer's attention output is aggregated where its FFN
//! input is consumed (edge for `Edge`/`Split`, cloud for `Cloud`). When the
//! heads of a layer are mixed, the layer input is taken to live at that
//! aggregation site and a single `HeadAggregation` moves the minority
//! partial sum toward it. `Split` runs FFN1 on the edge and FFN2 on the
//! cloud.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::DeviceProfile;
use crate::workload::{ComponentKind, ModelSpec};

#[derive(Debug, Error, PartialEq)]
pub enum PartitionError {
    #[error("plan shape does not match model: {0}")]
    ShapeMismatch(String),
    #[error("edge memory exceeded: requires {required} B, {available} B available")]
    MemoryExceeded { required: u64, available: u64 },
    #[error("malformed action vector: {0}")]
    MalformedAction(String),
    #[error("split layer {split} is outside 0..={layers}")]
    SplitOutOfRange { split: usize, layers: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Placement {
    Edge = 0,
    Cloud = 1,
}

impl From<Placement> for u8 {
    fn from(p: Placement) -> u8 {
        p as u8
    }
}

impl TryFrom<u8> for Placement {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(Placement::Edge),
            1 => Ok(Placement::Cloud),
            _ => Err(format!("head placement must be 0 or 1, got {v}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum FfnMode {
    Edge = 0,
    Cloud = 1,
    Split = 2,
}

impl From<FfnMode> for u8 {
    fn from(m: FfnMode) -> u8 {
        m as u8
    }
}

impl TryFrom<u8> for FfnMode {
    type Error = String;
    fn try_from(v: u8) -> Result<Self, String> {
        match v {
            0 => Ok(FfnMode::Edge),
            1 => Ok(FfnMode::Cloud),
            2 => Ok(FfnMode::Split),
            _ => Err(format!("ffn mode must be 0, 1 or 2, got {v}")),
        }
    }
}

impl FfnMode {
    /// Where the aggregated attention output (the FFN input) lives.
    pub fn input_site(self) -> Placement {
        match self {
            FfnMode::Edge | FfnMode::Split => Placement::Edge,
            FfnMode::Cloud => Placement::Cloud,
        }
    }

    /// Where the layer output lives after FFN2.
    pub fn output_site(self) -> Placement {
        match self {
            FfnMode::Edge => Placement::Edge,
            FfnMode::Cloud | FfnMode::Split => Placement::Cloud,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerPartition {
    pub heads: Vec<Placement>,
    pub ffn: FfnMode,
}

impl LayerPartition {
    pub fn uniform(heads: usize, side: Placement) -> Self {
        let ffn = match side {
            Placement::Edge => FfnMode::Edge,
            Placement::Cloud => FfnMode::Cloud,
        };
        Self {
            heads: vec![side; heads],
            ffn,
        }
    }

    pub fn edge_heads(&self) -> usize {
        self.heads.iter().filter(|&&p| p == Placement::Edge).count()
    }

    pub fn cloud_heads(&self) -> usize {
        self.heads.len() - self.edge_heads()
    }

    /// `Some(side)` when every head sits on one side.
    pub fn attention_site(&self) -> Option<Placement> {
        match (self.edge_heads(), self.cloud_heads()) {
            (_, 0) => Some(Placement::Edge),
            (0, _) => Some(Placement::Cloud),
            _ => None,
        }
    }
}

/// Full placement strategy: one entry per layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartitionPlan {
    pub layers: Vec<LayerPartition>,
}

impl PartitionPlan {
    pub fn edge_only(spec: &ModelSpec) -> Self {
        Self {
            layers: vec![LayerPartition::uniform(spec.heads, Placement::Edge); spec.layers],
        }
    }

    pub fn cloud_only(spec: &ModelSpec) -> Self {
        Self {
            layers: vec![LayerPartition::uniform(spec.heads, Placement::Cloud); spec.layers],
        }
    }

    /// Layers `1..=split` on the edge, the rest on the cloud.
    pub fn layer_split(spec: &ModelSpec, split: usize) -> Result<Self, PartitionError> {
        if split > spec.layers {
            return Err(PartitionError::SplitOutOfRange {
                split,
                layers: spec.layers,
            });
        }
        let layers = (0..spec.layers)
            .map(|i| {
                let side = if i < split {
                    Placement::Edge
                } else {
                    Placement::Cloud
                };
                LayerPartition::uniform(spec.heads, side)
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn check_shape(&self, spec: &ModelSpec) -> Result<(), PartitionError> {
        if self.layers.len() != spec.layers {
            return Err(PartitionError::ShapeMismatch(format!(
                "{} layers, model has {}",
                self.layers.len(),
                spec.layers
            )));
        }
        if let Some((i, l)) = self
            .layers
            .iter()
            .enumerate()
            .find(|(_, l)| l.heads.len() != spec.heads)
        {
            return Err(PartitionError::ShapeMismatch(format!(
                "layer {} has {} heads, model has {}",
                i + 1,
                l.heads.len(),
                spec.heads
            )));
        }
        Ok(())
    }

    /// Weight bytes resident on the edge under dynamic loading. `Split`
    /// keeps FFN1 on the edge.
    pub fn active_edge_memory(&self, spec: &ModelSpec) -> u64 {
        let head = spec.head_memory();
        let ffn1 = spec.memory_unchecked(ComponentKind::Ffn1);
        let ffn2 = spec.memory_unchecked(ComponentKind::Ffn2);
        self.layers
            .iter()
            .map(|l| {
                let ffn = match l.ffn {
                    FfnMode::Edge => ffn1 + ffn2,
                    FfnMode::Split => ffn1,
                    FfnMode::Cloud => 0,
                };
                l.edge_heads() as u64 * head + ffn
            })
            .sum()
    }

    pub fn validate(&self, spec: &ModelSpec, device: &DeviceProfile) -> Result<(), PartitionError> {
        self.check_shape(spec)?;
        let required = self.active_edge_memory(spec);
        let available = device.edge_memory_bytes;
        if required > available {
            return Err(PartitionError::MemoryExceeded {
                required,
                available,
            });
        }
        Ok(())
    }

    /// Boundary list in dataflow order. Assumes a shape-valid plan.
    pub fn boundaries(&self, spec: &ModelSpec, n: usize, precision_bytes: usize) -> Vec<Boundary> {
        let hidden = (n * spec.d_model * precision_bytes) as u64;
        let intermediate = (n * spec.d_ff * precision_bytes) as u64;
        // Raw prompt upload alongside the embedded input.
        let prompt = (n * 4) as u64;

        let mut out = Vec::new();
        let mut site = Placement::Edge;
        let mut uploaded = false;
        fn hop(
            out: &mut Vec<Boundary>,
            uploaded: &mut bool,
            site: &mut Placement,
            layer: usize,
            to: Placement,
            volumes: (u64, u64),
        ) {
            if *site == to {
                return;
            }
            let (hidden, prompt) = volumes;
            let (kind, volume) = if *uploaded {
                (BoundaryKind::InterLayerHandoff, hidden)
            } else {
                (BoundaryKind::InputUpload, hidden + prompt)
            };
            *uploaded = true;
            out.push(Boundary {
                layer,
                kind,
                volume_bytes: volume,
                direction: Direction::between(*site, to),
            });
            *site = to;
        }

        for (i, layer) in self.layers.iter().enumerate() {
            let idx = i + 1;
            let agg = layer.ffn.input_site();
            match layer.attention_site() {
                Some(att) => {
                    hop(&mut out, &mut uploaded, &mut site, idx, att, (hidden, prompt));
                    if att != agg {
                        out.push(Boundary {
                            layer: idx,
                            kind: BoundaryKind::AttentionHandoff,
                            volume_bytes: hidden,
                            direction: Direction::between(att, agg),
                        });
                        site = agg;
                    }
                }
                None => {
                    hop(&mut out, &mut uploaded, &mut site, idx, agg, (hidden, prompt));
                    out.push(Boundary {
                        layer: idx,
                        kind: BoundaryKind::HeadAggregation,
                        volume_bytes: hidden,
                        direction: Direction::between(agg.other(), agg),
                    });
                }
            }
            if layer.ffn == FfnMode::Split {
                out.push(Boundary {
                    layer: idx,
                    kind: BoundaryKind::FfnSplit,
                    volume_bytes: intermediate,
                    direction: Direction::EdgeToCloud,
                });
                site = Placement::Cloud;
            }
            // Only layer 1 can open with an input upload.
            uploaded = true;
        }
        if site == Placement::Cloud {
            out.push(Boundary {
                layer: self.layers.len(),
                kind: BoundaryKind::OutputDownload,
                volume_bytes: hidden,
                direction: Direction::CloudToEdge,
            });
        }
        out
    }

    /// Number of edge-cloud transitions K.
    pub fn transition_count(&self, spec: &ModelSpec) -> usize {
        self.boundaries(spec, 1, 1).len()
    }

    /// Flat action vector: per layer, H binary head symbols then one
    /// ternary FFN symbol.
    pub fn encode(&self) -> Vec<u8> {
        self.layers
            .iter()
            .flat_map(|l| {
                l.heads
                    .iter()
                    .map(|&p| p as u8)
                    .chain(std::iter::once(l.ffn as u8))
            })
            .collect()
    }

    pub fn decode(action: &[u8], spec: &ModelSpec) -> Result<Self, PartitionError> {
        let width = spec.heads + 1;
        if action.len() != width * spec.layers {
            return Err(PartitionError::MalformedAction(format!(
                "expected {} symbols, got {}",
                width * spec.layers,
                action.len()
            )));
        }
        let layers = action
            .chunks(width)
            .map(|chunk| {
                let heads = chunk[..spec.heads]
                    .iter()
                    .map(|&s| Placement::try_from(s))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(PartitionError::MalformedAction)?;
                let ffn =
                    FfnMode::try_from(chunk[spec.heads]).map_err(PartitionError::MalformedAction)?;
                Ok(LayerPartition { heads, ffn })
            })
            .collect::<Result<Vec<_>, PartitionError>>()?;
        Ok(Self { layers })
    }

    /// Stable short identifier for logs: FNV-1a over the action vector.
    pub fn id(&self) -> String {
        let mut h: u64 = 0xcbf29ce484222325;
        for b in self.encode() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    /// Layer x head placement matrix (0 edge, 1 cloud) plus the FFN mode.
    pub fn write_heatmap_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let heads = self.layers.first().map_or(0, |l| l.heads.len());
        let mut header = String::from("layer");
        for h in 1..=heads {
            header.push_str(&format!(",h{h}"));
        }
        header.push_str(",ffn");
        writeln!(w, "{header}")?;
        for (i, l) in self.layers.iter().enumerate() {
            let mut row = (i + 1).to_string();
            for p in &l.heads {
                row.push_str(&format!(",{}", *p as u8));
            }
            row.push_str(&format!(",{}", l.ffn as u8));
            writeln!(w, "{row}")?;
        }
        Ok(())
    }
}

impl Placement {
    pub fn other(self) -> Placement {
        match self {
            Placement::Edge => Placement::Cloud,
            Placement::Cloud => Placement::Edge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryKind {
    HeadAggregation,
    FfnSplit,
    InterLayerHandoff,
    /// Pure attention on one side feeding an FFN on the other.
    AttentionHandoff,
    InputUpload,
    OutputDownload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    EdgeToCloud,
    CloudToEdge,
}

impl Direction {
    fn between(from: Placement, to: Placement) -> Direction {
        debug_assert_ne!(from, to);
        match to {
            Placement::Cloud => Direction::EdgeToCloud,
            Placement::Edge => Direction::CloudToEdge,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Boundary {
    pub layer: usize,
    pub kind: BoundaryKind,
    pub volume_bytes: u64,
    pub direction: Direction,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:?}@L{} {} B {:?}",
            self.kind, self.layer, self.volume_bytes, self.direction
        )
    }
}

/// Per-layer configuration count `2^H * 3`, or `None` on overflow.
pub fn action_space_size_per_layer(heads: u32) -> Option<u128> {
    if heads == 0 {
        return None;
    }
    1u128.checked_shl(heads)?.checked_mul(3)
}

/// `log10` of the whole-model plan count `(2^H * 3)^L`.
pub fn log10_action_space(spec: &ModelSpec) -> f64 {
    spec.layers as f64 * (spec.heads as f64 * 2f64.log10() + 3f64.log10())
}
