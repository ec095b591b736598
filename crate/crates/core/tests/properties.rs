use edgesplit::cost::{
    accuracy_penalty, energy, total_latency, CostModel, CostOptions, DeviceProfile, PipelineMode,
    QuantConfig,
};
use edgesplit::learn::{gae, log_softmax, softmax};
use edgesplit::lyapunov::{adaptive_v, dpp_reward, drift_estimate, queue_update, LyapunovConfig};
use edgesplit::network::{transfer_failure_probability, NetworkProcess, NetworkScenario, NetworkState};
use edgesplit::partition::{BoundaryKind, Direction, FfnMode, PartitionPlan, Placement};
use edgesplit::policy::{greedy_dpp_index, CandidateSet, Granularity};
use edgesplit::lyapunov::CostWeights;
use edgesplit::workload::{Component, ComponentKind, CustomModel, ModelSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(layers: usize, heads: usize) -> ModelSpec {
    ModelSpec::custom(&CustomModel {
        name: "prop".into(),
        layers,
        heads,
        d_model: heads * 16,
        d_ff: None,
        nominal_params: None,
        bytes_per_param: None,
    })
    .unwrap()
}

fn device() -> DeviceProfile {
    DeviceProfile::preset("rpi5-npu").unwrap()
}

/// A model shape plus a raw action vector for it.
fn plan_case() -> impl Strategy<Value = (ModelSpec, PartitionPlan)> {
    (1usize..5, 1usize..5).prop_flat_map(|(l, h)| {
        let layer = (prop::collection::vec(0u8..2, h), 0u8..3);
        prop::collection::vec(layer, l).prop_map(move |layers| {
            let spec = model(l, h);
            let action: Vec<u8> = layers
                .into_iter()
                .flat_map(|(heads, ffn)| heads.into_iter().chain(std::iter::once(ffn)))
                .collect();
            let plan = PartitionPlan::decode(&action, &spec).unwrap();
            (spec, plan)
        })
    })
}

fn net(mbps: f64) -> NetworkState {
    NetworkState::new(mbps, 20.0, 0.0, 0.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn flops_and_memory_are_monotone(h in 1usize..8, n in 1usize..2000) {
        let small = model(2, h);
        let big = model(2, h + 1);
        for kind in [ComponentKind::Head(1), ComponentKind::Ffn1, ComponentKind::Ffn2] {
            let c = Component::new(1, kind);
            prop_assert!(small.component_flops(c, n + 1).unwrap() > small.component_flops(c, n).unwrap());
            prop_assert!(big.component_memory(c).unwrap() > small.component_memory(c).unwrap());
        }
    }

    #[test]
    fn encode_decode_round_trip((spec, plan) in plan_case()) {
        prop_assert_eq!(PartitionPlan::decode(&plan.encode(), &spec).unwrap(), plan);
    }

    #[test]
    fn boundaries_ignore_head_order((spec, plan) in plan_case(), n in 1usize..300) {
        let mut shuffled = plan.clone();
        for l in &mut shuffled.layers {
            l.heads.reverse();
        }
        let a = plan.boundaries(&spec, n, 2);
        let b = shuffled.boundaries(&spec, n, 2);
        prop_assert_eq!(a.len(), b.len());
        let vol = |v: &[edgesplit::partition::Boundary]| v.iter().map(|x| x.volume_bytes).sum::<u64>();
        prop_assert_eq!(vol(&a), vol(&b));
    }

    #[test]
    fn handoffs_alternate_direction((spec, plan) in plan_case(), n in 1usize..300) {
        let bs = plan.boundaries(&spec, n, 2);
        prop_assert!(bs.iter().all(|b| b.volume_bytes > 0));
        // Residence moves edge -> cloud -> edge ...; every boundary that
        // relocates the hidden state must leave the current site.
        let mut site = Placement::Edge;
        for b in &bs {
            let from = match b.direction {
                Direction::EdgeToCloud => Placement::Edge,
                Direction::CloudToEdge => Placement::Cloud,
            };
            match b.kind {
                BoundaryKind::InputUpload
                | BoundaryKind::InterLayerHandoff
                | BoundaryKind::AttentionHandoff
                | BoundaryKind::FfnSplit
                | BoundaryKind::OutputDownload => {
                    prop_assert_eq!(from, site, "{} leaves the wrong site", b);
                    site = from.other();
                }
                BoundaryKind::HeadAggregation => {}
            }
        }
        for w in bs.windows(2) {
            if w.iter().all(|b| b.kind == BoundaryKind::InterLayerHandoff) {
                prop_assert_ne!(w[0].direction, w[1].direction);
            }
        }
    }

    #[test]
    fn only_single_side_plans_lack_aggregation((spec, plan) in plan_case()) {
        let uniform = |side: Placement| {
            plan.layers.iter().all(|l| {
                l.heads.iter().all(|&p| p == side)
                    && l.ffn == match side {
                        Placement::Edge => FfnMode::Edge,
                        Placement::Cloud => FfnMode::Cloud,
                    }
            })
        };
        let is_endpoint = uniform(Placement::Edge) || uniform(Placement::Cloud);
        prop_assert_eq!(is_endpoint, plan == PartitionPlan::edge_only(&spec) || plan == PartitionPlan::cloud_only(&spec));
        if is_endpoint {
            let bs = plan.boundaries(&spec, 10, 2);
            prop_assert!(bs.iter().all(|b| b.kind != BoundaryKind::HeadAggregation));
        }
    }

    #[test]
    fn edge_memory_grows_with_edge_heads((spec, plan) in plan_case(), li in 0usize..4, hi in 0usize..4) {
        let (li, hi) = (li % spec.layers, hi % spec.heads);
        let mut more = plan.clone();
        more.layers[li].heads[hi] = Placement::Edge;
        prop_assert!(more.active_edge_memory(&spec) >= plan.active_edge_memory(&spec));
    }

    #[test]
    fn pipelined_never_exceeds_sequential((spec, plan) in plan_case(), n in 1usize..500, mbps in 1.0f64..200.0) {
        let dev = device();
        let net = net(mbps);
        let seq = CostOptions { pipeline: PipelineMode::Sequential, ..CostOptions::default() };
        let pip = CostOptions::default();
        let a = total_latency(&plan, &spec, n, &dev, &net, &pip).total_s;
        let b = total_latency(&plan, &spec, n, &dev, &net, &seq).total_s;
        prop_assert!(a <= b * (1.0 + 1e-12), "{} > {}", a, b);
        let c = total_latency(&plan, &spec, n, &dev, &net, &pip);
        if c.transitions == 0 || c.edge_compute_s == 0.0 || c.cloud_compute_s == 0.0 {
            prop_assert!((a - b).abs() <= 1e-12 * b);
        }
    }

    #[test]
    fn latency_and_energy_fall_with_bandwidth((spec, plan) in plan_case(), n in 1usize..500, mbps in 1.0f64..200.0, more in 0.0f64..100.0) {
        let dev = device();
        let opts = CostOptions::default();
        let (slow, fast) = (net(mbps), net(mbps + more));
        prop_assert!(total_latency(&plan, &spec, n, &dev, &fast, &opts).total_s <= total_latency(&plan, &spec, n, &dev, &slow, &opts).total_s);
        prop_assert!(energy(&plan, &spec, n, &dev, &fast, &opts) <= energy(&plan, &spec, n, &dev, &slow, &opts));
    }

    #[test]
    fn energy_respects_power_bound((spec, plan) in plan_case(), n in 1usize..500, mbps in 1.0f64..200.0) {
        let dev = device();
        let c = CostModel::new(spec, dev.clone()).evaluate(&plan, n, &net(mbps));
        prop_assert!(c.energy_j <= (dev.compute_power_w + dev.radio_power_w) * c.total_s * (1.0 + 1e-12));
    }

    #[test]
    fn penalty_falls_with_bits((spec, plan) in plan_case(), n in 1usize..64, bits in 2u32..12) {
        let opts = CostOptions::default();
        let q = |b| QuantConfig { bits: Some(b), ..QuantConfig::default() };
        let lo = accuracy_penalty(&plan, &spec, n, &q(bits), &opts);
        let hi = accuracy_penalty(&plan, &spec, n, &q(bits + 1), &opts);
        prop_assert!(hi <= lo, "{} bits: {}, {} bits: {}", bits, lo, bits + 1, hi);
    }

    #[test]
    fn failure_probability_is_monotone(loss in 0.0f64..1.0, bytes in 1u64..1_000_000) {
        let p = transfer_failure_probability(loss, bytes);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(transfer_failure_probability(loss, bytes + 1500) >= p);
    }

    #[test]
    fn network_states_stay_physical(seed in any::<u64>(), steps in 1usize..200) {
        let mut p = NetworkProcess::new(NetworkScenario::named("var").unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..steps {
            let s = p.step(&mut rng).unwrap();
            prop_assert!(s.bandwidth_bps > 0.0 && s.latency_s >= 0.0);
        }
    }

    #[test]
    fn queue_update_orders(q in 0.0f64..100.0, mu in 0.0f64..20.0, a in 0.0f64..30.0, dq in 0.0f64..10.0, dmu in 0.0f64..5.0) {
        let base = queue_update(q, mu, a, 1.0);
        prop_assert!(base >= 0.0);
        prop_assert!(queue_update(q + dq, mu, a, 1.0) >= base);
        prop_assert!(queue_update(q, mu, a + dq, 1.0) >= base);
        prop_assert!(queue_update(q, mu + dmu, a, 1.0) <= base);
    }

    #[test]
    fn adaptive_v_is_bounded_and_decreasing(q in 0.0f64..200.0, dq in 0.01f64..50.0) {
        // past ~35 Q_ref the decay term is below one ulp of V_min
        let cfg = LyapunovConfig::default();
        let (a, b) = (adaptive_v(q, &cfg), adaptive_v(q + dq, &cfg));
        prop_assert!(b < a);
        prop_assert!(a >= cfg.v_min && a <= cfg.v_max);
    }

    #[test]
    fn reward_is_linear(drift in -100.0f64..100.0, g in 0.0f64..10.0, v in 0.0f64..10.0, c in 0.1f64..10.0) {
        let r = dpp_reward(drift, g, v);
        let scaled = dpp_reward(drift, c * g, v);
        let g_term = r - dpp_reward(drift, 0.0, v);
        prop_assert!(((scaled - dpp_reward(drift, 0.0, v)) - c * g_term).abs() <= 1e-9 * (1.0 + g_term.abs() * c));
    }

    #[test]
    fn drift_is_negative_when_service_wins(q in 0.001f64..100.0, lambda in 0.0f64..10.0, extra in 0.001f64..10.0) {
        prop_assert!(drift_estimate(q, lambda, lambda + extra) < 0.0);
    }

    #[test]
    fn greedy_ignores_cost_scale(n in 1usize..300, mbps in 1.0f64..200.0, c in 0.01f64..100.0) {
        let spec = model(2, 2);
        let dev = device();
        let cands = CandidateSet::build(&spec, &dev, Granularity::default()).unwrap();
        let m = CostModel::new(spec, dev);
        let net = net(mbps);
        let w = CostWeights::default();
        let scaled = CostWeights { latency: w.latency * c, energy: w.energy * c, accuracy: w.accuracy * c };
        let a = greedy_dpp_index(0.0, 1.0, &cands, 1.0, &w, |p| m.evaluate(p, n, &net));
        let b = greedy_dpp_index(0.0, 1.0, &cands, 1.0, &scaled, |p| m.evaluate(p, n, &net));
        prop_assert_eq!(a, b);
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-50.0f64..50.0, 1..8)) {
        let p = softmax(&z);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (lp, pi) in log_softmax(&z).iter().zip(&p) {
            prop_assert!((lp.exp() - pi).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_with_unit_discount_is_monte_carlo(r in prop::collection::vec(-5.0f64..5.0, 1..20), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v: Vec<f64> = r.iter().map(|_| rand::Rng::random_range(&mut rng, -3.0..3.0)).collect();
        let (adv, ret) = gae(&r, &v, 0.0, 1.0, 1.0).unwrap();
        for t in 0..r.len() {
            let mc: f64 = r[t..].iter().sum();
            prop_assert!((ret[t] - mc).abs() < 1e-9);
            prop_assert!((adv[t] - (mc - v[t])).abs() < 1e-9);
        }
    }
}

#[test]
fn greedy_picks_fastest_plan_under_heavy_backlog() {
    let spec = model(2, 2);
    let dev = device();
    let cands = CandidateSet::build(&spec, &dev, Granularity::default()).unwrap();
    let m = CostModel::new(spec, dev);
    let net = net(25.0);
    let w = CostWeights::default();
    let fastest = cands
        .plans()
        .iter()
        .map(|p| m.evaluate(p, 200, &net).total_s)
        .fold(f64::INFINITY, f64::min);
    let mut settled = None;
    for q in (0..=200).map(|i| i as f64 * 5.0) {
        let i = greedy_dpp_index(q, 1.0, &cands, 1.0, &w, |p| m.evaluate(p, 200, &net));
        let t = m.evaluate(&cands.plans()[i], 200, &net).total_s;
        match (settled, t == fastest) {
            (None, true) => settled = Some(q),
            (Some(q0), false) => panic!("left the fastest plan at Q={q} after settling at {q0}"),
            _ => {}
        }
    }
    assert!(settled.is_some(), "never settled on a fastest plan");
}
