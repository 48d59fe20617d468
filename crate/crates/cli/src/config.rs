//! Experiment and environment configuration files.

use std::path::Path;

use grouped_mdp::envs::{
    build_downlink, build_tightness_mdp, build_wireless_access, random_mdp, DownlinkConfig, RandomStructure,
    TightnessConfig, WirelessAccessConfig,
};
use grouped_mdp::selector::{FeasibleSet, ResourceGrid, UtilityConfig};
use grouped_mdp::{GroupingFunction, InnerPolicy, TabularMdp};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    Desk,
    Full,
}

impl Scale {
    fn key(self) -> &'static str {
        match self {
            Scale::Desk => "desk",
            Scale::Full => "full",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomEnvConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub seed: u64,
    #[serde(default = "no_structure")]
    pub structure: RandomStructure,
}

fn no_structure() -> RandomStructure {
    RandomStructure::None
}

/// Any of the bundled environments.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Downlink(DownlinkConfig),
    WirelessAccess(WirelessAccessConfig),
    Tightness(TightnessConfig),
    Random(RandomEnvConfig),
}

/// A built environment with its natural grouping and candidate set.
#[derive(Debug, Clone)]
pub struct BuiltEnv {
    pub mdp: TabularMdp,
    pub grouping: GroupingFunction,
    pub inner: InnerPolicy,
    pub feasible: Vec<GroupingFunction>,
}

impl EnvSpec {
    pub fn build(&self) -> grouped_mdp::Result<BuiltEnv> {
        match self {
            EnvSpec::Downlink(c) => {
                let d = build_downlink(c)?;
                let inner = InnerPolicy::uniform(&d.grouping);
                Ok(BuiltEnv { mdp: d.mdp, grouping: d.grouping, inner, feasible: d.feasible })
            }
            EnvSpec::WirelessAccess(c) => {
                let w = build_wireless_access(c)?;
                let inner = InnerPolicy::uniform(&w.grouping);
                let feasible = vec![w.grouping.clone(), GroupingFunction::singleton(w.mdp.n_actions())];
                Ok(BuiltEnv { mdp: w.mdp, grouping: w.grouping, inner, feasible })
            }
            EnvSpec::Tightness(c) => {
                let t = build_tightness_mdp(*c)?;
                let feasible = vec![t.grouping.clone(), GroupingFunction::singleton(2)];
                Ok(BuiltEnv { mdp: t.mdp, grouping: t.grouping, inner: t.inner, feasible })
            }
            EnvSpec::Random(c) => {
                let r = random_mdp(c.n_states, c.n_actions, c.gamma, c.seed, c.structure)?;
                let singleton = GroupingFunction::singleton(c.n_actions);
                let grouping = r.grouping.unwrap_or_else(|| singleton.clone());
                let inner = InnerPolicy::uniform(&grouping);
                let mut feasible = vec![grouping.clone()];
                if grouping != singleton {
                    feasible.push(singleton);
                }
                Ok(BuiltEnv { mdp: r.mdp, grouping, inner, feasible })
            }
        }
    }
}

/// Pipeline trials of the natural grouping against the ungrouped pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupingVsFlat {
    pub env: EnvSpec,
    pub k_prime: Vec<u64>,
    pub t: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub n_trials: u32,
    #[serde(default)]
    pub seed: u64,
}

/// Fixed total budgets split across groupings of different sizes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSweep {
    pub env: EnvSpec,
    /// Group counts; a count equal to the action count means no grouping.
    pub group_counts: Vec<usize>,
    pub k_total: Vec<u64>,
    pub t: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub n_trials: u32,
    #[serde(default)]
    pub seed: u64,
}

/// Grid over the two-state tightness example.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TightnessSurface {
    pub gamma: f64,
    pub beta_p: Vec<f64>,
    pub beta_r: Vec<f64>,
}

/// Coverage of the performance bound by measured losses.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundValidity {
    pub env: EnvSpec,
    pub k_prime: Vec<u64>,
    pub t: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub n_trials: u32,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SelectMode {
    Exact,
    Practical,
}

/// Grouping selection followed by pipeline runs at each candidate's chosen budget.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectionDemo {
    pub env: EnvSpec,
    /// Overrides the environment's candidate set.
    #[serde(default)]
    pub feasible: Option<FeasibleSet>,
    pub utility: UtilityConfig,
    pub grid: ResourceGrid,
    pub mode: SelectMode,
    #[serde(default = "default_m")]
    pub m_per_group: usize,
    #[serde(default = "default_k1")]
    pub k1: u64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub n_trials: u32,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentConfig {
    GroupingVsFlat(GroupingVsFlat),
    SampleSweep(SampleSweep),
    TightnessSurface(TightnessSurface),
    BoundValidity(BoundValidity),
    SelectionDemo(SelectionDemo),
}

impl ExperimentConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentConfig::GroupingVsFlat(_) => "grouping_vs_flat",
            ExperimentConfig::SampleSweep(_) => "sample_sweep",
            ExperimentConfig::TightnessSurface(_) => "tightness_surface",
            ExperimentConfig::BoundValidity(_) => "bound_validity",
            ExperimentConfig::SelectionDemo(_) => "selection_demo",
        }
    }

    fn seed_mut(&mut self) -> Option<&mut u64> {
        match self {
            ExperimentConfig::GroupingVsFlat(c) => Some(&mut c.seed),
            ExperimentConfig::SampleSweep(c) => Some(&mut c.seed),
            ExperimentConfig::BoundValidity(c) => Some(&mut c.seed),
            ExperimentConfig::SelectionDemo(c) => Some(&mut c.seed),
            ExperimentConfig::TightnessSurface(_) => None,
        }
    }
}

pub fn default_delta() -> f64 {
    0.05
}

fn default_m() -> usize {
    2
}

fn default_k1() -> u64 {
    100_000
}

/// Overwrites `base` with `patch`, recursing into objects.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

pub fn read_json_value(path: &Path) -> CliResult<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::input_in(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::input_in(path, format!("invalid JSON: {e}")))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let value = read_json_value(path)?;
    serde_json::from_value(value).map_err(|e| CliError::input_in(path, e))
}

/// Loads an experiment file, applying `scale_overrides[scale]` and a seed override.
pub fn load_experiment(path: &Path, scale: Scale, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let mut value = read_json_value(path)?;
    let overrides = match value.as_object_mut() {
        Some(obj) => obj.remove("scale_overrides"),
        None => return Err(CliError::input_in(path, "top level must be an object")),
    };
    if let Some(o) = overrides {
        if !o.is_object() {
            return Err(CliError::input_in(path, "scale_overrides must be an object"));
        }
        if let Some(patch) = o.get(scale.key()) {
            merge(&mut value, patch);
        }
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(value).map_err(|e| CliError::input_in(path, e))?;
    if let (Some(s), Some(slot)) = (seed, cfg.seed_mut()) {
        *slot = s;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_recurses_into_objects() {
        let mut base = json!({"env": {"S": 5, "A": 100}, "t": 10});
        merge(&mut base, &json!({"env": {"A": 1000}, "n_trials": 3}));
        assert_eq!(base, json!({"env": {"S": 5, "A": 1000}, "t": 10, "n_trials": 3}));
    }

    #[test]
    fn env_spec_is_tagged_and_strict() {
        let ok: EnvSpec = serde_json::from_value(json!({
            "kind": "downlink", "S": 5, "A": 20, "G": 4, "lambda": 0.5,
            "beta_tilde_p": 0.01, "beta_tilde_r": 0.01, "seed": 1
        }))
        .unwrap();
        assert!(matches!(ok, EnvSpec::Downlink(_)));
        let bad = serde_json::from_value::<EnvSpec>(json!({
            "kind": "downlink", "S": 5, "A": 20, "G": 4, "lambda": 0.5,
            "beta_tilde_p": 0.01, "beta_tilde_r": 0.01, "seed": 1, "typo": 3
        }));
        assert!(bad.is_err());
    }

    #[test]
    fn shipped_configs_load_at_both_scales() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        for name in ["grouping_vs_flat", "sample_sweep", "tightness_surface", "bound_validity", "selection_demo"] {
            let path = dir.join(format!("{name}.json"));
            for scale in [Scale::Desk, Scale::Full] {
                let cfg = load_experiment(&path, scale, None).unwrap_or_else(|e| panic!("{e}"));
                assert_eq!(cfg.name(), name);
            }
        }
        let env: EnvSpec = read_json(&dir.join("downlink_env.json")).unwrap();
        assert_eq!(env.build().unwrap().grouping.n_groups(), 10);
        let _: UtilityConfig = read_json(&dir.join("utility.json")).unwrap();
    }
}
