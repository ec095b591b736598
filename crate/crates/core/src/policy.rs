//! Controllers: the decision interface plus the non-learned strategies.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostBreakdown, CostModel, DeviceProfile};
use crate::lyapunov::{drift_estimate, immediate_cost, CostWeights};
use crate::network::NetworkState;
use crate::partition::{FfnMode, LayerPartition, PartitionError, PartitionPlan, Placement};
use crate::sim::{expected_costs, Backoff, SystemState};
use crate::workload::ModelSpec;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("no feasible plan: {0}")]
    Infeasible(String),
    #[error("unknown controller `{0}`")]
    UnknownController(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

/// Everything a controller may look at when choosing the plan for a slot.
pub struct DecisionContext<'a> {
    pub state: &'a SystemState,
    /// Normalized feature vector of `state`.
    pub features: &'a [f64],
    pub model: &'a CostModel,
    pub net: &'a NetworkState,
    /// Sequence length the slot's decision is costed at.
    pub seq_len: usize,
    pub arrival_rate: f64,
    pub v: f64,
    pub weights: &'a CostWeights,
    pub backoff: &'a Backoff,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub plan: PartitionPlan,
    /// Log-probability of the plan under a stochastic controller; zero for
    /// deterministic ones.
    pub log_prob: f64,
}

impl Decision {
    pub fn deterministic(plan: PartitionPlan) -> Self {
        Self { plan, log_prob: 0.0 }
    }
}

pub trait Controller {
    fn name(&self) -> &str;

    fn decide(
        &mut self,
        ctx: &DecisionContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<Decision, PolicyError>;
}

/// Returns the same plan every slot.
#[derive(Debug, Clone)]
pub struct FixedController {
    name: String,
    plan: PartitionPlan,
}

impl FixedController {
    pub fn new(name: impl Into<String>, plan: PartitionPlan) -> Self {
        Self {
            name: name.into(),
            plan,
        }
    }

    pub fn plan(&self) -> &PartitionPlan {
        &self.plan
    }
}

impl Controller for FixedController {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(
        &mut self,
        ctx: &DecisionContext<'_>,
        _rng: &mut dyn RngCore,
    ) -> Result<Decision, PolicyError> {
        self.plan
            .validate(&ctx.model.spec, &ctx.model.device)
            .map_err(|e| PolicyError::Infeasible(format!("{}: {e}", self.name)))?;
        Ok(Decision::deterministic(self.plan.clone()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Baseline {
    EdgeOnly,
    CloudOnly,
    /// `None` splits at `L / 2`.
    LayerSplit { at: Option<usize> },
}

impl Baseline {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "edge-only" => Some(Baseline::EdgeOnly),
            "cloud-only" => Some(Baseline::CloudOnly),
            "layer-split" => Some(Baseline::LayerSplit { at: None }),
            _ => {
                let inner = name.strip_prefix("layer-split(")?.strip_suffix(')')?;
                inner.parse().ok().map(|at| Baseline::LayerSplit { at: Some(at) })
            }
        }
    }

    pub fn plan(&self, spec: &ModelSpec) -> Result<PartitionPlan, PartitionError> {
        match self {
            Baseline::EdgeOnly => Ok(PartitionPlan::edge_only(spec)),
            Baseline::CloudOnly => Ok(PartitionPlan::cloud_only(spec)),
            Baseline::LayerSplit { at } => {
                PartitionPlan::layer_split(spec, at.unwrap_or(spec.layers / 2))
            }
        }
    }

    pub fn controller(&self, spec: &ModelSpec) -> Result<FixedController, PartitionError> {
        let name = match self {
            Baseline::EdgeOnly => "edge-only".to_string(),
            Baseline::CloudOnly => "cloud-only".to_string(),
            Baseline::LayerSplit { at } => {
                format!("layer-split({})", at.unwrap_or(spec.layers / 2))
            }
        };
        Ok(FixedController::new(name, self.plan(spec)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Granularity {
    Coarse,
    Fine { k: usize },
}

impl Default for Granularity {
    fn default() -> Self {
        Granularity::Fine { k: 4 }
    }
}

/// A finite, feasible, duplicate-free list of plans in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    plans: Vec<PartitionPlan>,
}

impl CandidateSet {
    pub fn new(plans: Vec<PartitionPlan>) -> Result<Self, PolicyError> {
        if plans.is_empty() {
            return Err(PolicyError::Infeasible("candidate set is empty".into()));
        }
        Ok(Self { plans })
    }

    /// Order: edge-only, cloud-only, layer splits by split point, then
    /// (fine) head-fraction variants grouped by split.
    pub fn build(
        spec: &ModelSpec,
        device: &DeviceProfile,
        granularity: Granularity,
    ) -> Result<Self, PolicyError> {
        let mut raw = vec![PartitionPlan::edge_only(spec), PartitionPlan::cloud_only(spec)];
        for split in 0..=spec.layers {
            raw.push(PartitionPlan::layer_split(spec, split)?);
        }
        if let Granularity::Fine { k } = granularity {
            for split in 0..spec.layers {
                let base = PartitionPlan::layer_split(spec, split)?;
                for j in 1..k {
                    let moved = (spec.heads * j).div_ceil(k);
                    let mut plan = base.clone();
                    let layer = &mut plan.layers[split];
                    layer.heads = (0..spec.heads)
                        .map(|h| {
                            if h < moved {
                                Placement::Edge
                            } else {
                                Placement::Cloud
                            }
                        })
                        .collect();
                    raw.push(plan);
                }
            }
        }
        let mut plans: Vec<PartitionPlan> = Vec::with_capacity(raw.len());
        for p in raw {
            if p.validate(spec, device).is_ok() && !plans.contains(&p) {
                plans.push(p);
            }
        }
        if plans.is_empty() {
            return Err(PolicyError::Infeasible(format!(
                "every candidate exceeds {} B of edge memory",
                device.edge_memory_bytes
            )));
        }
        Ok(Self { plans })
    }

    pub fn plans(&self) -> &[PartitionPlan] {
        &self.plans
    }

    pub fn len(&self) -> usize {
        self.plans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.plans.is_empty()
    }
}

/// Drift-plus-penalty score of one candidate: `V * Q * (lambda - 1/T) + g`.
pub fn dpp_score(
    backlog: f64,
    arrival_rate: f64,
    v: f64,
    costs: &CostBreakdown,
    weights: &CostWeights,
) -> f64 {
    let service_rate = 1.0 / costs.total_s;
    v * drift_estimate(backlog, arrival_rate, service_rate) + immediate_cost(costs, weights)
}

/// Index of the candidate minimizing the drift-plus-penalty score; ties go
/// to the earliest candidate.
pub fn greedy_dpp_index<F>(
    backlog: f64,
    arrival_rate: f64,
    candidates: &CandidateSet,
    v: f64,
    weights: &CostWeights,
    mut evaluate: F,
) -> usize
where
    F: FnMut(&PartitionPlan) -> CostBreakdown,
{
    let mut best = (0, f64::INFINITY);
    for (i, plan) in candidates.plans().iter().enumerate() {
        let score = dpp_score(backlog, arrival_rate, v, &evaluate(plan), weights);
        if score < best.1 {
            best = (i, score);
        }
    }
    best.0
}

pub fn greedy_dpp_decide<F>(
    backlog: f64,
    arrival_rate: f64,
    candidates: &CandidateSet,
    v: f64,
    weights: &CostWeights,
    evaluate: F,
) -> PartitionPlan
where
    F: FnMut(&PartitionPlan) -> CostBreakdown,
{
    let i = greedy_dpp_index(backlog, arrival_rate, candidates, v, weights, evaluate);
    candidates.plans()[i].clone()
}

/// Per-slot drift-plus-penalty minimizer over a fixed candidate set. Plans
/// are scored at their expected costs including retries.
#[derive(Debug, Clone)]
pub struct GreedyDppController {
    name: String,
    candidates: CandidateSet,
}

impl GreedyDppController {
    pub fn new(name: impl Into<String>, candidates: CandidateSet) -> Self {
        Self {
            name: name.into(),
            candidates,
        }
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }
}

impl Controller for GreedyDppController {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(
        &mut self,
        ctx: &DecisionContext<'_>,
        _rng: &mut dyn RngCore,
    ) -> Result<Decision, PolicyError> {
        let plan = greedy_dpp_decide(
            ctx.state.backlog,
            ctx.arrival_rate,
            &self.candidates,
            ctx.v,
            ctx.weights,
            |p| expected_costs(p, ctx.model, ctx.seq_len, ctx.net, ctx.backoff),
        );
        Ok(Decision::deterministic(plan))
    }
}

/// Uniformly random plan each slot, resampled until it fits in memory.
#[derive(Debug, Clone, Default)]
pub struct RandomController;

impl Controller for RandomController {
    fn name(&self) -> &str {
        "random"
    }

    fn decide(
        &mut self,
        ctx: &DecisionContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<Decision, PolicyError> {
        let spec = &ctx.model.spec;
        for _ in 0..1000 {
            let plan = random_plan(spec, rng);
            if plan.validate(spec, &ctx.model.device).is_ok() {
                return Ok(Decision::deterministic(plan));
            }
        }
        Err(PolicyError::Infeasible(
            "no random plan fit in edge memory after 1000 draws".into(),
        ))
    }
}

pub fn random_plan<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> PartitionPlan {
    let layers = (0..spec.layers)
        .map(|_| LayerPartition {
            heads: (0..spec.heads)
                .map(|_| {
                    if rng.random_bool(0.5) {
                        Placement::Cloud
                    } else {
                        Placement::Edge
                    }
                })
                .collect(),
            ffn: match rng.random_range(0..3) {
                0 => FfnMode::Edge,
                1 => FfnMode::Cloud,
                _ => FfnMode::Split,
            },
        })
        .collect();
    PartitionPlan { layers }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::CustomModel;

    fn toy() -> ModelSpec {
        ModelSpec::custom(&CustomModel {
            name: "toy".into(),
            layers: 2,
            heads: 2,
            d_model: 8,
            d_ff: None,
            nominal_params: None,
            bytes_per_param: None,
        })
        .unwrap()
    }

    fn breakdown(total_s: f64, energy_j: f64) -> CostBreakdown {
        CostBreakdown {
            edge_compute_s: 0.0,
            comm_s: 0.0,
            cloud_compute_s: 0.0,
            total_s,
            energy_j,
            accuracy_penalty: 0.0,
            transitions: 0,
        }
    }

    #[test]
    fn baselines() {
        let g = ModelSpec::preset("gpt2-1.5b").unwrap();
        let ls = Baseline::parse("layer-split").unwrap().plan(&g).unwrap();
        assert_eq!(ls, PartitionPlan::layer_split(&g, 12).unwrap());
        assert_eq!(
            Baseline::parse("layer-split(3)").unwrap(),
            Baseline::LayerSplit { at: Some(3) }
        );
        assert!(Baseline::parse("half").is_none());
        let l13 = ModelSpec::preset("llama-13b").unwrap();
        let c = Baseline::CloudOnly.plan(&l13).unwrap();
        assert!(c.validate(&l13, &DeviceProfile::jetson_orin_nx()).is_ok());
    }

    #[test]
    fn coarse_candidates() {
        let spec = toy();
        let set = CandidateSet::build(&spec, &DeviceProfile::jetson_orin_nx(), Granularity::Coarse)
            .unwrap();
        assert!(set.len() <= 5);
        assert_eq!(set.len(), 3);
        assert_eq!(set.plans()[0], PartitionPlan::edge_only(&spec));
        assert_eq!(set.plans()[1], PartitionPlan::cloud_only(&spec));
    }

    #[test]
    fn memory_filters_candidates() {
        let l13 = ModelSpec::preset("llama-13b").unwrap();
        let dev = DeviceProfile::jetson_orin_nx();
        let set = CandidateSet::build(&l13, &dev, Granularity::Coarse).unwrap();
        assert!(!set.plans().contains(&PartitionPlan::edge_only(&l13)));
        assert!(set.plans().iter().all(|p| p.validate(&l13, &dev).is_ok()));
        let mut tiny = dev.clone();
        tiny.edge_memory_bytes = 1;
        // cloud-only needs no edge memory, so the set is never empty
        assert_eq!(CandidateSet::build(&l13, &tiny, Granularity::Coarse).unwrap().len(), 1);
    }

    #[test]
    fn fine_adds_head_fractions() {
        let g = ModelSpec::preset("gpt2-1.5b").unwrap();
        let dev = DeviceProfile::jetson_orin_nx();
        let coarse = CandidateSet::build(&g, &dev, Granularity::Coarse).unwrap();
        let fine = CandidateSet::build(&g, &dev, Granularity::Fine { k: 4 }).unwrap();
        assert_eq!(coarse.len(), 25);
        assert_eq!(fine.len(), 25 + 24 * 3);
        // split at 5, quarter of the boundary layer's heads moved to edge
        let v = &fine.plans()[25 + 5 * 3];
        assert_eq!(v.layers[5].edge_heads(), 4);
        assert_eq!(v.layers[4].edge_heads(), 16);
        assert_eq!(v.layers[6].edge_heads(), 0);
    }

    #[test]
    fn hand_scored_pair() {
        let spec = toy();
        let a = PartitionPlan::edge_only(&spec);
        let b = PartitionPlan::cloud_only(&spec);
        let set = CandidateSet::new(vec![a.clone(), b.clone()]).unwrap();
        let w = CostWeights {
            latency: 1.0,
            energy: 0.0,
            accuracy: 0.0,
        };
        // Q = 1, lambda = 1. A: T = 1/3 -> drift -2, g = 1/3 + 2/3 energy
        // weight... use explicit energies instead of latency for g.
        let w_e = CostWeights {
            latency: 0.0,
            energy: 1.0,
            accuracy: 0.0,
        };
        let eval = |p: &PartitionPlan| {
            if *p == a {
                breakdown(1.0 / 3.0, 1.0)
            } else {
                breakdown(1.0, 0.5)
            }
        };
        // A: 1 * (1 - 3) + 1 = -1; B: 1 * (1 - 1) + 0.5 = 0.5
        assert_eq!(greedy_dpp_decide(1.0, 1.0, &set, 1.0, &w_e, eval), a);
        // Q = 0 leaves only the cost term: B is cheaper
        assert_eq!(greedy_dpp_decide(0.0, 1.0, &set, 1.0, &w_e, eval), b);
        let _ = w;
    }

    #[test]
    fn ties_go_to_first() {
        let spec = toy();
        let set = CandidateSet::new(vec![
            PartitionPlan::cloud_only(&spec),
            PartitionPlan::edge_only(&spec),
        ])
        .unwrap();
        let w = CostWeights::default();
        let p = greedy_dpp_decide(3.0, 1.0, &set, 1.0, &w, |_| breakdown(0.5, 0.5));
        assert_eq!(p, PartitionPlan::cloud_only(&spec));
    }

    #[test]
    fn random_plans_are_well_formed() {
        use rand::SeedableRng;
        let spec = toy();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let p = random_plan(&spec, &mut rng);
            assert!(p.check_shape(&spec).is_ok());
        }
    }
}
