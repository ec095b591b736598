use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use edgesplit::learn::{PolicyController, SampleMode};
use edgesplit::network::NetworkScenario;
use edgesplit::partition::PartitionPlan;
use edgesplit::policy::{
    Baseline, CandidateSet, Controller, Decision, DecisionContext, GreedyDppController,
    PolicyError, RandomController,
};
use edgesplit::sim::{
    derive_seed, run_episode, spec_hash, write_curves_csv, write_slot_csv, EpisodeConfig,
    MetricsReport, SimError, TrainError, Verdict,
};
use rand::RngCore;
use rayon::prelude::*;
use tracing::info;

use crate::artifacts::{
    csv_preamble, read_json, slug, write_bytes, write_json, write_schema, RunArtifact,
    TrainArtifact, SUMMARY_COLUMNS, SWEEP_COLUMNS,
};
use crate::config::RunConfig;
use crate::{CliError, ConfigArgs, SweepParam};

fn sim_error(e: SimError) -> CliError {
    match e {
        SimError::InvalidConfig(m) => CliError::Config(m),
        SimError::Network(e) => CliError::Config(e.to_string()),
        e => CliError::Other(e.to_string()),
    }
}

fn load(args: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(&args.config, &args.overrides)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.out_dir).map_err(|e| CliError::io(&cfg.out_dir, e))?;
    Ok(cfg.out_dir.clone())
}

fn make_controller(cfg: &RunConfig, env: &EpisodeConfig) -> Result<Box<dyn Controller + Send>, CliError> {
    let name = cfg.controller.as_str();
    if let Some(b) = Baseline::parse(name) {
        let c = b
            .controller(&env.model)
            .map_err(|e| CliError::Config(e.to_string()))?;
        return Ok(Box::new(c));
    }
    match name {
        "dpp" => {
            let cands = CandidateSet::build(&env.model, &env.device, cfg.granularity)
                .map_err(|e| CliError::Infeasible(e.to_string()))?;
            Ok(Box::new(GreedyDppController::new("dpp", cands)))
        }
        "random" => Ok(Box::new(RandomController)),
        "learned" => {
            let path = cfg.checkpoint.as_ref().ok_or_else(|| {
                CliError::Config("controller `learned` needs a checkpoint".into())
            })?;
            let art: TrainArtifact = read_json(path)?;
            let expected = spec_hash(env);
            if art.checkpoint.spec_hash != expected {
                return Err(CliError::Config(format!(
                    "checkpoint {} was trained for {}, config is {expected}",
                    path.display(),
                    art.checkpoint.spec_hash
                )));
            }
            Ok(Box::new(PolicyController::new(
                art.checkpoint.best.policy,
                SampleMode::Greedy,
            )))
        }
        other => Err(CliError::Config(format!("unknown controller `{other}`"))),
    }
}

/// Counts the plans a controller picks.
struct Recording<'a> {
    inner: &'a mut dyn Controller,
    plans: BTreeMap<String, (u64, PartitionPlan)>,
}

impl Controller for Recording<'_> {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn decide(
        &mut self,
        ctx: &DecisionContext<'_>,
        rng: &mut dyn RngCore,
    ) -> Result<Decision, PolicyError> {
        let d = self.inner.decide(ctx, rng)?;
        self.plans
            .entry(d.plan.id())
            .or_insert_with(|| (0, d.plan.clone()))
            .0 += 1;
        Ok(d)
    }
}

impl Recording<'_> {
    /// Most frequent plan; ties go to the smallest id.
    fn modal(&self) -> Option<&PartitionPlan> {
        let mut best: Option<(u64, &PartitionPlan)> = None;
        for (n, p) in self.plans.values() {
            if best.is_none_or(|(m, _)| *n > m) {
                best = Some((*n, p));
            }
        }
        best.map(|b| b.1)
    }
}

fn finish_report(mut report: MetricsReport, cfg: &RunConfig) -> MetricsReport {
    report.scenario = cfg.scenario.label();
    report
}

pub fn simulate(
    args: &ConfigArgs,
    controller: Option<String>,
    checkpoint: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg = load(args)?;
    if let Some(c) = controller {
        cfg.controller = c;
    }
    if checkpoint.is_some() {
        cfg.checkpoint = checkpoint;
    }
    let env = cfg.episode()?;
    let mut ctl = make_controller(&cfg, &env)?;
    let mut rec = Recording {
        inner: ctl.as_mut(),
        plans: BTreeMap::new(),
    };
    let out = run_episode(&env, &mut rec).map_err(sim_error)?;
    let dir = out_dir(&cfg)?;
    let hash = cfg.hash();
    let stem = slug(&format!(
        "{}__{}__seed{}",
        cfg.scenario.label(),
        cfg.controller,
        cfg.seed
    ));

    let slots_path = dir.join(format!("{stem}.slots.csv"));
    let mut csv = csv_preamble(&hash, cfg.seed);
    write_slot_csv(&out.slots, &mut csv).map_err(sim_error)?;
    write_bytes(&slots_path, &csv)?;

    if let Some(plan) = rec.modal() {
        let mut heat = csv_preamble(&hash, cfg.seed);
        plan.write_heatmap_csv(&mut heat)
            .map_err(|e| CliError::Other(e.to_string()))?;
        write_bytes(&dir.join(format!("{stem}.heatmap.csv")), &heat)?;
    }

    let mut report = finish_report(out.report, &cfg);
    report.log_path = Some(format!("{stem}.slots.csv"));
    let verdict = report.verdict;
    let diagnostic = report.diagnostic.clone();
    let art = RunArtifact {
        config_hash: hash,
        seed: cfg.seed,
        controller: cfg.controller.clone(),
        scenario: cfg.scenario.label(),
        config: cfg.clone(),
        report,
    };
    write_json(&dir.join(format!("{stem}.report.json")), &art)?;
    write_schema(&dir)?;
    let r = &art.report;
    println!(
        "{} {} seed {}: {:?}, p95 {}, mean Q {:.3}, completions {}",
        art.scenario,
        art.controller,
        art.seed,
        r.verdict,
        r.latency.map_or("-".into(), |p| format!("{:.4}s", p.p95)),
        r.mean_q,
        r.completions
    );
    if verdict == Verdict::Infeasible {
        return Err(CliError::Infeasible(diagnostic.unwrap_or_default()));
    }
    Ok(())
}

pub fn train(args: &ConfigArgs, resume: Option<PathBuf>) -> Result<(), CliError> {
    let cfg = load(args)?;
    let setup = cfg.train_setup()?;
    let start = match &resume {
        Some(p) => Some(read_json::<TrainArtifact>(p)?.checkpoint),
        None => None,
    };
    let dir = out_dir(&cfg)?;
    let hash = cfg.hash();
    let outcome = match edgesplit::sim::train(&setup, start) {
        Ok(o) => o,
        Err(TrainError::Diverged {
            episode,
            message,
            last_good,
        }) => {
            let path = dir.join("checkpoint.json");
            write_json(
                &path,
                &TrainArtifact {
                    config_hash: hash,
                    seed: cfg.seed,
                    checkpoint: *last_good,
                },
            )?;
            return Err(CliError::Diverged(format!(
                "episode {episode}: {message}; last good state in {}",
                path.display()
            )));
        }
        Err(TrainError::CheckpointMismatch { expected, found }) => {
            return Err(CliError::Config(format!(
                "checkpoint is for {found}, config is {expected}"
            )))
        }
        Err(TrainError::Learn(e)) => return Err(CliError::Config(e.to_string())),
        Err(TrainError::Sim(e)) => return Err(sim_error(e)),
    };

    let mut curves = csv_preamble(&hash, cfg.seed);
    write_curves_csv(&outcome.curves, &mut curves).map_err(sim_error)?;
    write_bytes(&dir.join("curves.csv"), &curves)?;
    write_json(
        &dir.join("checkpoint.json"),
        &TrainArtifact {
            config_hash: hash.clone(),
            seed: cfg.seed,
            checkpoint: outcome.last.clone(),
        },
    )?;

    // greedy evaluation of the selected agent on each training scenario
    let scenarios = if cfg.train_scenarios.is_empty() {
        vec![cfg.scenario.clone()]
    } else {
        cfg.train_scenarios.clone()
    };
    for (sc, env) in scenarios.iter().zip(setup.eval_configs()) {
        let mut ctl = PolicyController::new(outcome.best.policy.clone(), SampleMode::Greedy);
        let out = run_episode(&env, &mut ctl).map_err(sim_error)?;
        let mut run_cfg = cfg.clone();
        run_cfg.scenario = sc.clone();
        run_cfg.controller = "learned".into();
        let stem = slug(&format!("{}__learned__seed{}", sc.label(), cfg.seed));
        let art = RunArtifact {
            config_hash: hash.clone(),
            seed: cfg.seed,
            controller: "learned".into(),
            scenario: sc.label(),
            report: finish_report(out.report, &run_cfg),
            config: run_cfg,
        };
        info!(scenario = %art.scenario, reward = art.report.mean_reward, "evaluation");
        write_json(&dir.join(format!("{stem}.report.json")), &art)?;
    }
    write_schema(&dir)?;
    println!(
        "trained {} episodes; best evaluation reward {}",
        outcome.last.episode,
        outcome.best_eval.map_or("-".into(), |r| format!("{r:.4}"))
    );
    Ok(())
}

/// Scales every bandwidth of the scenario so its peak equals `mbps`.
fn with_peak_bandwidth(s: &NetworkScenario, mbps: f64) -> NetworkScenario {
    let factor = mbps * 1e6 / s.max_bandwidth_bps();
    let mut s = s.clone();
    match &mut s {
        NetworkScenario::Static { state } => state.bandwidth_bps *= factor,
        NetworkScenario::Markov { states, .. } => {
            for st in states.iter_mut() {
                st.bandwidth_bps *= factor;
            }
        }
        NetworkScenario::Trace { records, .. } => {
            for r in records.iter_mut() {
                r.bandwidth_mbps *= factor;
            }
        }
    }
    s
}

fn opt(x: Option<f64>) -> String {
    x.map_or(String::new(), |v| v.to_string())
}

pub fn sweep(
    args: &ConfigArgs,
    param: SweepParam,
    values: &[f64],
    seeds: u64,
    controller: Option<String>,
) -> Result<(), CliError> {
    let mut cfg = load(args)?;
    if let Some(c) = controller {
        cfg.controller = c;
    }
    if values.is_empty() {
        return Err(CliError::Config("sweep needs at least one value".into()));
    }
    if seeds == 0 {
        return Err(CliError::Config("sweep needs at least one seed".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Config("sweep values must be finite".into()));
    }
    let base = cfg.episode()?;
    let cells: Vec<(f64, u64)> = values
        .iter()
        .flat_map(|&v| (0..seeds).map(move |i| (v, i)))
        .collect();
    let mut envs = Vec::with_capacity(cells.len());
    for &(value, i) in &cells {
        let mut env = base.clone();
        env.seed = derive_seed(cfg.seed, "sweep", i);
        match param {
            SweepParam::V => env.lyapunov.fixed_v = Some(value),
            SweepParam::Lambda => env.workload.arrival_rate = value,
            SweepParam::Bandwidth => {
                if !(value > 0.0) {
                    return Err(CliError::Config("bandwidth values must be > 0".into()));
                }
                env.network = with_peak_bandwidth(&env.network, value);
            }
        }
        env.validate().map_err(sim_error)?;
        envs.push(env);
    }
    let reports: Vec<MetricsReport> = envs
        .par_iter()
        .map(|env| {
            let mut ctl = make_controller(&cfg, env)?;
            run_episode(env, ctl.as_mut())
                .map(|o| finish_report(o.report, &cfg))
                .map_err(sim_error)
        })
        .collect::<Result<_, _>>()?;

    let dir = out_dir(&cfg)?;
    let hash = cfg.hash();
    let name = match param {
        SweepParam::V => "V",
        SweepParam::Lambda => "lambda",
        SweepParam::Bandwidth => "bandwidth",
    };
    let mut buf = csv_preamble(&hash, cfg.seed);
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |e: csv::Error| CliError::Other(e.to_string());
        w.write_record(SWEEP_COLUMNS).map_err(csv_err)?;
        for ((value, _), r) in cells.iter().zip(&reports) {
            let lat = r.latency;
            let verdict = serde_json::to_value(r.verdict)
                .ok()
                .and_then(|v| v.as_str().map(String::from))
                .unwrap_or_default();
            w.write_record([
                name.to_string(),
                value.to_string(),
                r.seed.to_string(),
                r.controller.clone(),
                r.scenario.clone(),
                verdict,
                opt(lat.map(|p| p.p50)),
                opt(lat.map(|p| p.p95)),
                opt(lat.map(|p| p.p99)),
                r.mean_q.to_string(),
                r.tail_mean_q.to_string(),
                r.max_q.to_string(),
                r.mean_cost.to_string(),
                r.mean_energy_j.to_string(),
                r.mean_reward.to_string(),
                r.completions.to_string(),
                r.failed_final.to_string(),
                r.transfer_failures.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::Other(e.to_string()))?;
    }
    write_bytes(&dir.join("sweep.csv"), &buf)?;
    write_schema(&dir)?;
    let unstable = reports.iter().filter(|r| r.verdict != Verdict::Stable).count();
    println!(
        "{} cells ({} values x {seeds} seeds), {unstable} not stable; wrote {}",
        reports.len(),
        values.len(),
        dir.join("sweep.csv").display()
    );
    Ok(())
}

#[derive(Default)]
struct Group {
    runs: usize,
    stable: usize,
    p50: Vec<f64>,
    p95: Vec<f64>,
    p99: Vec<f64>,
    q: Vec<f64>,
    energy: Vec<f64>,
    cost: Vec<f64>,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn report(input: &Path, force: bool) -> Result<(), CliError> {
    let entries = fs::read_dir(input).map_err(|e| CliError::Config(format!("{}: {e}", input.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_str().is_some_and(|s| s.ends_with(".report.json")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!(
            "no *.report.json files in {}",
            input.display()
        )));
    }
    let runs: Vec<RunArtifact> = paths.iter().map(|p| read_json(p)).collect::<Result<_, _>>()?;
    let mut hashes: Vec<&str> = runs.iter().map(|r| r.config_hash.as_str()).collect();
    hashes.sort_unstable();
    hashes.dedup();
    if hashes.len() > 1 && !force {
        return Err(CliError::Config(format!(
            "reports come from {} different configs ({}); pass --force to aggregate anyway",
            hashes.len(),
            hashes.join(", ")
        )));
    }
    let hash = if hashes.len() == 1 { hashes[0].to_string() } else { "mixed".into() };
    let mut seeds: Vec<u64> = runs.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();

    let mut groups: BTreeMap<(String, String), Group> = BTreeMap::new();
    for r in &runs {
        let g = groups
            .entry((r.scenario.clone(), r.controller.clone()))
            .or_default();
        g.runs += 1;
        g.stable += (r.report.verdict == Verdict::Stable) as usize;
        if let Some(p) = r.report.latency {
            g.p50.push(p.p50);
            g.p95.push(p.p95);
            g.p99.push(p.p99);
        }
        g.q.push(r.report.mean_q);
        g.energy.push(r.report.mean_energy_j);
        g.cost.push(r.report.mean_cost);
    }
    let cloud_p95: BTreeMap<&str, f64> = groups
        .iter()
        .filter(|((_, c), _)| c == "cloud-only")
        .filter_map(|((s, _), g)| mean(&g.p95).map(|p| (s.as_str(), p)))
        .collect();

    let fmt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:.6}"));
    let mut rows: Vec<Vec<String>> = Vec::new();
    for ((scenario, controller), g) in &groups {
        let p95 = mean(&g.p95);
        let reduction = match (p95, cloud_p95.get(scenario.as_str())) {
            (Some(p), Some(&c)) if c > 0.0 => Some(1.0 - p / c),
            _ => None,
        };
        rows.push(vec![
            scenario.clone(),
            controller.clone(),
            g.runs.to_string(),
            g.stable.to_string(),
            fmt(mean(&g.p50)),
            fmt(p95),
            fmt(mean(&g.p99)),
            fmt(mean(&g.q)),
            fmt(mean(&g.energy)),
            fmt(mean(&g.cost)),
            fmt(reduction),
        ]);
    }

    let seeds_label = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(" ");
    let mut buf = format!("# config_hash={hash}\n# seeds={seeds_label}\n").into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let csv_err = |e: csv::Error| CliError::Other(e.to_string());
        w.write_record(SUMMARY_COLUMNS).map_err(csv_err)?;
        for r in &rows {
            w.write_record(r).map_err(csv_err)?;
        }
        w.flush().map_err(|e| CliError::Other(e.to_string()))?;
    }
    write_bytes(&input.join("summary.csv"), &buf)?;
    write_schema(input)?;

    let widths: Vec<usize> = (0..SUMMARY_COLUMNS.len())
        .map(|i| {
            rows.iter()
                .map(|r| r[i].len())
                .chain([SUMMARY_COLUMNS[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    println!("config {hash}, seeds {seeds_label}");
    println!("{}", line(SUMMARY_COLUMNS.to_vec()));
    for r in &rows {
        println!("{}", line(r.iter().map(String::as_str).collect()));
    }
    Ok(())
}
