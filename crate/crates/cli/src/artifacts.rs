//! On-disk artifacts. JSON artifacts carry the config hash and master seed
//! as fields; CSV artifacts carry them as leading `#` comment lines.

use std::fs;
use std::io::Write;
use std::path::Path;

use edgesplit::sim::{MetricsReport, TrainCheckpoint, SLOT_COLUMNS};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub config_hash: String,
    pub seed: u64,
    pub controller: String,
    pub scenario: String,
    pub config: RunConfig,
    pub report: MetricsReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArtifact {
    pub config_hash: String,
    pub seed: u64,
    pub checkpoint: TrainCheckpoint,
}

pub fn csv_preamble(hash: &str, seed: u64) -> Vec<u8> {
    format!("# config_hash={hash}\n# seed={seed}\n").into_bytes()
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(bytes).map_err(|e| CliError::io(path, e))
}

/// File-name-safe form of a label.
pub fn slug(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect()
}

pub const SWEEP_COLUMNS: [&str; 18] = [
    "param",
    "value",
    "cell_seed",
    "controller",
    "scenario",
    "verdict",
    "p50_s",
    "p95_s",
    "p99_s",
    "mean_q",
    "tail_mean_q",
    "max_q",
    "mean_cost",
    "mean_energy_j",
    "mean_reward",
    "completions",
    "failed_final",
    "transfer_failures",
];

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "scenario",
    "controller",
    "runs",
    "stable_runs",
    "p50_s",
    "p95_s",
    "p99_s",
    "mean_q",
    "mean_energy_j",
    "mean_cost",
    "p95_reduction_vs_cloud",
];

fn describe(cols: &[(&str, &str)]) -> Value {
    Value::Array(
        cols.iter()
            .map(|(n, d)| json!({"name": n, "description": d}))
            .collect(),
    )
}

/// Column documentation for every CSV the tool writes.
pub fn schema() -> Value {
    let slots = [
        ("slot", "slot index from 0"),
        ("Q", "backlog at the start of the slot, requests"),
        ("V", "drift weight in effect"),
        ("B_mbps", "observed bandwidth, Mb/s"),
        ("latency_s", "realized service time of the slot's plan, s"),
        ("energy_J", "edge energy of one request under the plan, J"),
        ("acc_penalty", "accuracy penalty of the plan"),
        ("drift", "Q * (lambda - mu)"),
        ("reward", "-(V * drift + g)"),
        ("plan_id", "16-hex-digit hash of the plan encoding"),
        ("failures", "failed transfer attempts in the slot"),
        ("arrivals", "requests arriving in the slot"),
        ("served", "requests' worth of service delivered in the slot"),
        ("mu", "service rate 1 / latency_s, req/s"),
    ];
    debug_assert!(slots.iter().map(|c| c.0).eq(SLOT_COLUMNS.iter().copied()));
    let curves = [
        ("episode", "episodes completed"),
        ("mean_reward", "mean per-slot reward of the training episode"),
        ("mean_q", "mean backlog of the training episode"),
        ("mean_cost", "mean per-slot cost g"),
        ("temperature", "sampling temperature after the episode"),
        ("updated", "whether a PPO update ran after the episode"),
        ("clip_fraction", "fraction of clipped ratios in the first epoch"),
        ("policy_loss", "clipped surrogate loss"),
        ("value_loss_perf", "performance critic loss"),
        ("value_loss_stab", "stability critic loss"),
        ("entropy", "mean policy entropy"),
        ("eval_reward", "greedy evaluation reward, empty when not evaluated"),
    ];
    let sweep: Vec<(&str, &str)> = SWEEP_COLUMNS
        .iter()
        .map(|c| {
            (
                *c,
                match *c {
                    "param" => "swept parameter: V, lambda or bandwidth",
                    "value" => "parameter value of the cell",
                    "cell_seed" => "derived episode seed of the cell",
                    "verdict" => "stable, unstable or infeasible",
                    "p50_s" | "p95_s" | "p99_s" => "latency percentile, s; empty without completions",
                    _ => "episode metric, as in the run report",
                },
            )
        })
        .collect();
    let summary: Vec<(&str, &str)> = SUMMARY_COLUMNS
        .iter()
        .map(|c| {
            (
                *c,
                match *c {
                    "runs" => "run reports aggregated into the row",
                    "stable_runs" => "runs with a stable verdict",
                    "p95_reduction_vs_cloud" => "1 - p95_s / p95_s of cloud-only in the same scenario",
                    _ => "mean over the row's runs",
                },
            )
        })
        .collect();
    let heatmap = [
        ("layer", "layer index from 1"),
        ("h1..hH", "head placement: 0 edge, 1 cloud"),
        ("ffn", "FFN placement: 0 edge, 1 cloud, 2 split"),
    ];
    json!({
        "comment_lines": "CSV files start with '# config_hash=<sha256>' and '# seed=<master seed>'",
        "files": {
            "*.slots.csv": describe(&slots),
            "curves.csv": describe(&curves),
            "sweep.csv": describe(&sweep),
            "summary.csv": describe(&summary),
            "*.heatmap.csv": describe(&heatmap),
        }
    })
}

pub fn write_schema(dir: &Path) -> Result<(), CliError> {
    write_json(&dir.join("schema.json"), &schema())
}
