//! Layer-by-layer factorized policy over partition plans.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, MlpCache};
use super::LearnError;
use crate::partition::{LayerPartition, PartitionPlan, Placement};
use crate::policy::{Controller, Decision, DecisionContext, PolicyError};
use crate::workload::ModelSpec;

/// Network widths of a [`HierarchicalPolicy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub features: usize,
    pub layers: usize,
    pub heads: usize,
    pub encoder_hidden: usize,
    pub encoder_dim: usize,
    /// Width of the layer embedding e^(l) passed down the chain.
    pub embed_dim: usize,
}

impl PolicyShape {
    pub fn logits_per_layer(&self) -> usize {
        2 * self.heads + 3
    }

    pub fn action_len(&self) -> usize {
        self.layers * (self.heads + 1)
    }
}

/// Shared encoder followed by one sub-network per transformer layer. Each
/// sub-network sees the encoded state and the previous layer's embedding
/// and emits `H` edge/cloud logit pairs plus an edge/cloud/split triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchicalPolicy {
    pub shape: PolicyShape,
    pub encoder: Mlp,
    pub subnets: Vec<Mlp>,
    pub temperature: f64,
}

#[derive(Debug, Clone)]
pub struct PolicyCache {
    encoder: MlpCache,
    subnets: Vec<MlpCache>,
    /// Per-layer logits, `2H + 3` each.
    pub logits: Vec<Vec<f64>>,
}

impl HierarchicalPolicy {
    pub fn new<R: Rng + ?Sized>(shape: PolicyShape, rng: &mut R) -> Self {
        let encoder = Mlp::new(
            &[shape.features, shape.encoder_hidden, shape.encoder_dim],
            Activation::Tanh,
            rng,
        );
        let subnets = (0..shape.layers)
            .map(|_| {
                let mut net = Mlp::new(
                    &[
                        shape.encoder_dim + shape.embed_dim,
                        shape.embed_dim,
                        shape.logits_per_layer(),
                    ],
                    Activation::Identity,
                    rng,
                );
                net.scale_output_layer(0.01);
                net
            })
            .collect();
        Self {
            shape,
            encoder,
            subnets,
            temperature: 1.0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.encoder.param_count() + self.subnets.iter().map(Mlp::param_count).sum::<usize>()
    }

    /// Flat parameter vector: encoder, then sub-networks in layer order.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        p.extend_from_slice(self.encoder.params());
        for s in &self.subnets {
            p.extend_from_slice(s.params());
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.param_count());
        let mut off = self.encoder.param_count();
        self.encoder.params_mut().copy_from_slice(&p[..off]);
        for s in &mut self.subnets {
            let n = s.param_count();
            s.params_mut().copy_from_slice(&p[off..off + n]);
            off += n;
        }
    }

    pub fn forward_cached(&self, features: &[f64]) -> Result<PolicyCache, LearnError> {
        let encoder = self.encoder.forward_cached(features)?;
        let enc = encoder.output().to_vec();
        let mut embed = vec![0.0; self.shape.embed_dim];
        let mut subnets = Vec::with_capacity(self.shape.layers);
        let mut logits = Vec::with_capacity(self.shape.layers);
        for net in &self.subnets {
            let mut input = enc.clone();
            input.extend_from_slice(&embed);
            let c = net.forward_cached(&input)?;
            embed = c.last_hidden().to_vec();
            logits.push(c.output().to_vec());
            subnets.push(c);
        }
        Ok(PolicyCache {
            encoder,
            subnets,
            logits,
        })
    }

    pub fn logits(&self, features: &[f64]) -> Result<Vec<Vec<f64>>, LearnError> {
        Ok(self.forward_cached(features)?.logits)
    }

    /// Accumulates parameter gradients given the loss gradient on each
    /// layer's logits.
    pub fn backward(&self, cache: &PolicyCache, dlogits: &[Vec<f64>], grads: &mut [f64]) {
        let enc_n = self.encoder.param_count();
        let enc_dim = self.shape.encoder_dim;
        let mut offsets = Vec::with_capacity(self.subnets.len());
        let mut off = enc_n;
        for s in &self.subnets {
            offsets.push(off);
            off += s.param_count();
        }
        let mut d_enc = vec![0.0; enc_dim];
        let mut d_embed: Option<Vec<f64>> = None;
        for l in (0..self.subnets.len()).rev() {
            let net = &self.subnets[l];
            let g = &mut grads[offsets[l]..offsets[l] + net.param_count()];
            let gin = net.backward(&cache.subnets[l], &dlogits[l], d_embed.as_deref(), g);
            for (d, x) in d_enc.iter_mut().zip(&gin[..enc_dim]) {
                *d += x;
            }
            d_embed = Some(gin[enc_dim..].to_vec());
        }
        self.encoder
            .backward(&cache.encoder, &d_enc, None, &mut grads[..enc_n]);
    }

    /// Splits one layer's logits into its head pairs and the FFN triple.
    pub fn groups(&self, layer_logits: &[f64]) -> Vec<std::ops::Range<usize>> {
        let h = self.shape.heads;
        let mut g: Vec<_> = (0..h).map(|i| 2 * i..2 * i + 2).collect();
        g.push(2 * h..2 * h + 3);
        debug_assert_eq!(layer_logits.len(), 2 * h + 3);
        g
    }

    /// Symbols in [`PartitionPlan::encode`] order.
    pub fn log_prob(&self, logits: &[Vec<f64>], action: &[u8]) -> f64 {
        let mut lp = 0.0;
        let mut k = 0;
        for layer in logits {
            for r in self.groups(layer) {
                lp += log_softmax(&layer[r])[action[k] as usize];
                k += 1;
            }
        }
        lp
    }

    pub fn entropy(&self, logits: &[Vec<f64>]) -> f64 {
        logits
            .iter()
            .flat_map(|layer| {
                self.groups(layer)
                    .into_iter()
                    .map(move |r| entropy(&softmax(&layer[r])))
            })
            .sum()
    }

    /// Gradient of `weight * log pi(action) + entropy_weight * H` with
    /// respect to the logits.
    pub fn logit_grad(
        &self,
        logits: &[Vec<f64>],
        action: &[u8],
        weight: f64,
        entropy_weight: f64,
    ) -> Vec<Vec<f64>> {
        let mut k = 0;
        logits
            .iter()
            .map(|layer| {
                let mut g = vec![0.0; layer.len()];
                for r in self.groups(layer) {
                    let p = softmax(&layer[r.clone()]);
                    let h = entropy(&p);
                    let a = action[k] as usize;
                    k += 1;
                    for (j, pj) in p.iter().enumerate() {
                        let onehot = if j == a { 1.0 } else { 0.0 };
                        let dh = -pj * (pj.max(f64::MIN_POSITIVE).ln() + h);
                        g[r.start + j] = weight * (onehot - pj) + entropy_weight * dh;
                    }
                }
                g
            })
            .collect()
    }

    /// Draws an action by Gumbel-max per group; returns it with its log-prob.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        features: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<u8>, f64), LearnError> {
        let logits = self.logits(features)?;
        let mut action = Vec::with_capacity(self.shape.action_len());
        for layer in &logits {
            for r in self.groups(layer) {
                let s = gumbel_softmax_sample(&layer[r], self.temperature, rng, true);
                action.push(s.symbol as u8);
            }
        }
        let lp = self.log_prob(&logits, &action);
        Ok((action, lp))
    }

    /// Most likely symbol in every group.
    pub fn greedy(&self, features: &[f64]) -> Result<(Vec<u8>, f64), LearnError> {
        let logits = self.logits(features)?;
        let action: Vec<u8> = logits
            .iter()
            .flat_map(|layer| {
                self.groups(layer)
                    .into_iter()
                    .map(move |r| argmax(&layer[r]) as u8)
            })
            .collect();
        let lp = self.log_prob(&logits, &action);
        Ok((action, lp))
    }
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    z.iter().map(|x| x - lse).collect()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|&&x| x > 0.0)
        .map(|x| x * x.ln())
        .sum::<f64>()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    /// Tempered softmax of the perturbed logits (one-hot in hard mode).
    pub relaxed: Vec<f64>,
    pub symbol: usize,
    /// Log-probability of `symbol` under `softmax(logits)`.
    pub log_prob: f64,
}

pub fn gumbel_softmax_sample<R: Rng + ?Sized>(
    logits: &[f64],
    temperature: f64,
    rng: &mut R,
    hard: bool,
) -> GumbelSample {
    assert!(temperature > 0.0, "temperature must be positive");
    let perturbed: Vec<f64> = logits
        .iter()
        .map(|z| {
            // open interval keeps both logs finite
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            z - (-u.ln()).ln()
        })
        .collect();
    let symbol = argmax(&perturbed);
    let scaled: Vec<f64> = perturbed.iter().map(|x| x / temperature).collect();
    let relaxed = if hard {
        (0..logits.len()).map(|i| (i == symbol) as u8 as f64).collect()
    } else {
        softmax(&scaled)
    };
    GumbelSample {
        relaxed,
        symbol,
        log_prob: log_softmax(logits)[symbol],
    }
}

pub fn anneal_temperature(temperature: f64, beta: f64, floor: f64) -> f64 {
    (temperature * beta).max(floor)
}

/// Moves whole layers to the cloud, last layer first, until the plan fits.
pub fn repair_plan(
    mut plan: PartitionPlan,
    spec: &ModelSpec,
    device: &crate::cost::DeviceProfile,
) -> Option<PartitionPlan> {
    if plan.validate(spec, device).is_ok() {
        return Some(plan);
    }
    for l in (0..plan.layers.len()).rev() {
        plan.layers[l] = LayerPartition::uniform(spec.heads, Placement::Cloud);
        if plan.validate(spec, device).is_ok() {
            return Some(plan);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    Sample,
    Greedy,
}

/// Adapts a [`HierarchicalPolicy`] to the [`Controller`] interface.
/// Plans that exceed edge memory are repaired and the repaired plan's
/// log-probability is reported.
#[derive(Debug, Clone)]
pub struct PolicyController {
    pub policy: HierarchicalPolicy,
    pub mode: SampleMode,
    name: String,
}

impl PolicyController {
    pub fn new(policy: HierarchicalPolicy, mode: SampleMode) -> Self {
        Self {
            policy,
            mode,
            name: "learned".into(),
        }
    }
}

impl Controller for PolicyController {
    fn name(&self) -> &str {
        &self.name
    }

    fn decide(
        &mut self,
        ctx: &DecisionContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<Decision, PolicyError> {
        let spec = &ctx.model.spec;
        let policy_err = |e: LearnError| PolicyError::Infeasible(e.to_string());
        let (action, lp) = match self.mode {
            SampleMode::Sample => self.policy.sample(ctx.features, rng),
            SampleMode::Greedy => self.policy.greedy(ctx.features),
        }
        .map_err(policy_err)?;
        let plan = PartitionPlan::decode(&action, spec)?;
        let fixed = repair_plan(plan.clone(), spec, &ctx.model.device).ok_or_else(|| {
            PolicyError::Infeasible("even cloud-only exceeds edge memory".into())
        })?;
        let log_prob = if fixed == plan {
            lp
        } else {
            let logits = self.policy.logits(ctx.features).map_err(policy_err)?;
            self.policy.log_prob(&logits, &fixed.encode())
        };
        Ok(Decision {
            plan: fixed,
            log_prob,
        })
    }
}
