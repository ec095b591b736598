//! Run configuration: one JSON document, dotted-path overrides, hashing.

use std::fs;
use std::path::{Path, PathBuf};

use edgesplit::cost::{CostOptions, DeviceProfile, QuantConfig};
use edgesplit::learn::TrainConfig;
use edgesplit::lyapunov::{CostWeights, LyapunovConfig};
use edgesplit::network::NetworkScenario;
use edgesplit::policy::Granularity;
use edgesplit::sim::{scenario_label, Backoff, EpisodeConfig, TrainSetup};
use edgesplit::workload::{CustomModel, ModelSpec, WorkloadConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelChoice {
    Preset(String),
    Custom(CustomModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceChoice {
    Preset(String),
    Profile(DeviceProfile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScenarioChoice {
    Named(String),
    TraceFile {
        trace: PathBuf,
        #[serde(default)]
        looping: bool,
    },
    Explicit(NetworkScenario),
}

impl ScenarioChoice {
    pub fn label(&self) -> String {
        match self {
            ScenarioChoice::Named(n) => n.clone(),
            ScenarioChoice::TraceFile { trace, .. } => format!(
                "trace-{}",
                trace.file_stem().and_then(|s| s.to_str()).unwrap_or("file")
            ),
            ScenarioChoice::Explicit(s) => scenario_label(s),
        }
    }

    pub fn resolve(&self) -> Result<NetworkScenario, CliError> {
        let s = match self {
            ScenarioChoice::Named(n) => NetworkScenario::named(n),
            ScenarioChoice::TraceFile { trace, looping } => {
                NetworkScenario::trace_from_csv(trace, *looping)
            }
            ScenarioChoice::Explicit(s) => Ok(s.clone()),
        };
        s.map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelChoice,
    pub device: DeviceChoice,
    pub scenario: ScenarioChoice,
    /// dpp, edge-only, cloud-only, layer-split, layer-split(k), random or learned.
    pub controller: String,
    pub granularity: Granularity,
    pub workload: WorkloadConfig,
    pub weights: CostWeights,
    pub lyapunov: LyapunovConfig,
    pub cost: CostOptions,
    pub quant: QuantConfig,
    pub backoff: Backoff,
    pub slots: u64,
    pub seed: u64,
    pub window: usize,
    pub background_load: f64,
    pub lambda_max: f64,
    pub train: TrainConfig,
    /// Scenarios cycled through during training; empty means `scenario`.
    pub train_scenarios: Vec<ScenarioChoice>,
    /// Training checkpoint used by the learned controller.
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let base = EpisodeConfig::new(
            ModelSpec::preset("gpt2-1.5b").expect("preset"),
            DeviceProfile::jetson_orin_nx(),
            NetworkScenario::named("var").expect("preset"),
            WorkloadConfig::default(),
        );
        Self {
            model: ModelChoice::Preset("gpt2-1.5b".into()),
            device: DeviceChoice::Preset("jetson-orin-nx".into()),
            scenario: ScenarioChoice::Named("var".into()),
            controller: "dpp".into(),
            granularity: Granularity::default(),
            workload: base.workload,
            weights: base.weights,
            lyapunov: base.lyapunov,
            cost: base.cost,
            quant: base.quant,
            backoff: base.backoff,
            slots: base.slots,
            seed: base.seed,
            window: base.window,
            background_load: base.background_load,
            lambda_max: base.lambda_max,
            train: TrainConfig::default(),
            train_scenarios: Vec::new(),
            checkpoint: None,
            out_dir: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    /// Reads `path`, applies `key.path=value` overrides, and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let mut doc: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.episode()?
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for s in &self.train_scenarios {
            s.resolve()?;
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec, CliError> {
        match &self.model {
            ModelChoice::Preset(n) => ModelSpec::preset(n),
            ModelChoice::Custom(c) => ModelSpec::custom(c),
        }
        .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn device_profile(&self) -> Result<DeviceProfile, CliError> {
        match &self.device {
            DeviceChoice::Preset(n) => {
                DeviceProfile::preset(n).map_err(|e| CliError::Config(e.to_string()))
            }
            DeviceChoice::Profile(p) => Ok(p.clone()),
        }
    }

    pub fn episode(&self) -> Result<EpisodeConfig, CliError> {
        let mut e = EpisodeConfig::new(
            self.model_spec()?,
            self.device_profile()?,
            self.scenario.resolve()?,
            self.workload.clone(),
        );
        e.weights = self.weights;
        e.lyapunov = self.lyapunov;
        e.cost = self.cost;
        e.quant = self.quant.clone();
        e.backoff = self.backoff;
        e.slots = self.slots;
        e.seed = self.seed;
        e.window = self.window;
        e.background_load = self.background_load;
        e.lambda_max = self.lambda_max;
        Ok(e)
    }

    pub fn train_setup(&self) -> Result<TrainSetup, CliError> {
        Ok(TrainSetup {
            env: self.episode()?,
            scenarios: self
                .train_scenarios
                .iter()
                .map(|s| s.resolve())
                .collect::<Result<_, _>>()?,
            config: self.train.clone(),
            seed: self.seed,
        })
    }

    /// SHA-256 of the config with the per-run fields (controller, scenario,
    /// seed, checkpoint, output directory) blanked, so runs of one
    /// experiment share a hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.controller.clear();
        c.scenario = ScenarioChoice::Named(String::new());
        c.seed = 0;
        c.checkpoint = None;
        c.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Sets `a.b.c` in `doc` to `value`, parsed as JSON when possible and as a
/// string otherwise. Missing intermediate objects are created.
pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), CliError> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{spec}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(CliError::Config(format!("bad override path `{path}`")));
    }
    let mut node = doc;
    for k in &keys[..keys.len() - 1] {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| CliError::Config(format!("`{path}`: `{k}` is not inside an object")))?;
        node = obj
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| CliError::Config(format!("`{path}` does not name an object field")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
