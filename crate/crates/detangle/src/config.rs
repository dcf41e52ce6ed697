use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::AttributionRule;
use crate::features::FeatureConfig;
use crate::synth::GeneratorConfig;
use crate::train::{TrainConfig, TrainMode};

pub const ENV_PREFIX: &str = "DETANGLE_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub n_trials: usize,
    pub rule: AttributionRule,
    pub topk: Vec<usize>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_trials: 10, rule: AttributionRule::NearestDoc, topk: vec![5, 10, 20] }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::Config("eval.n_trials must be >= 1".into()));
        }
        if self.topk.is_empty() || self.topk.contains(&0) {
            return Err(Error::Config("eval.topk must be non-empty with k >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub levels: Vec<f64>,
    pub modes: Vec<TrainMode>,
    pub seeds: Vec<u64>,
    pub eval_trials: usize,
    pub rule: AttributionRule,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            levels: vec![0.0, 0.5, 0.9],
            modes: vec![TrainMode::Frozen, TrainMode::Simple, TrainMode::Detangle],
            seeds: vec![0, 1, 2, 3, 4],
            eval_trials: 5,
            rule: AttributionRule::Centroid,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels.is_empty() || self.modes.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep needs levels, modes, and seeds".into()));
        }
        for l in &self.levels {
            if !(0.0..=1.0).contains(l) {
                return Err(Error::Config(format!("sweep level {l} outside [0,1]")));
            }
        }
        if self.eval_trials == 0 {
            return Err(Error::Config("sweep.eval_trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// One TOML file drives every command; sections map to module configs.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub seed: u64,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.train.validate()?;
        self.generator.validate()?;
        self.eval.validate()?;
        self.sweep.validate()
    }

    /// `--seed` wins over every per-section seed in the file.
    pub fn override_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.generator.seed = seed;
    }
}

/// Load the TOML config (defaults when absent), then apply
/// `DETANGLE_<SECTION>__<KEY>` / `DETANGLE_<KEY>` environment overrides.
pub fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    let mut cfg = match path {
        None => EngineConfig::default(),
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            toml::from_str(&s)
                .map_err(|e| Error::Config(format!("parse {}: {e}", p.display())))?
        }
    };
    let env: Vec<(String, String)> = std::env::vars()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    apply_env_overrides(&mut cfg, &env)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Override mechanics, separated from process env for testability. Keys are
/// case-insensitive; `__` descends one section level.
pub fn apply_env_overrides(cfg: &mut EngineConfig, vars: &[(String, String)]) -> Result<()> {
    if vars.is_empty() {
        return Ok(());
    }
    let mut tree = toml::Value::try_from(&*cfg)
        .map_err(|e| Error::Config(format!("serialize config: {e}")))?;
    for (key, raw) in vars {
        let Some(suffix) = key.strip_prefix(ENV_PREFIX) else { continue };
        let path: Vec<String> = suffix.split("__").map(|s| s.to_lowercase()).collect();
        set_path(&mut tree, &path, raw, key)?;
    }
    *cfg = tree
        .try_into()
        .map_err(|e| Error::Config(format!("apply env overrides: {e}")))?;
    Ok(())
}

fn set_path(tree: &mut toml::Value, path: &[String], raw: &str, origin: &str) -> Result<()> {
    let mut node = tree;
    for seg in &path[..path.len() - 1] {
        node = node
            .get_mut(seg)
            .ok_or_else(|| Error::Config(format!("{origin}: unknown config section '{seg}'")))?;
    }
    let leaf = path.last().unwrap();
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("{origin}: '{leaf}' has no parent table")))?;
    let existing = table
        .get(leaf)
        .ok_or_else(|| Error::Config(format!("{origin}: unknown config key '{leaf}'")))?;
    let parsed = parse_like(existing, raw)
        .ok_or_else(|| Error::Config(format!("{origin}: cannot parse '{raw}'")))?;
    table.insert(leaf.clone(), parsed);
    Ok(())
}

/// Interpret the raw env string with the same type as the value it replaces.
fn parse_like(template: &toml::Value, raw: &str) -> Option<toml::Value> {
    use toml::Value;
    Some(match template {
        Value::Integer(_) => Value::Integer(raw.parse().ok()?),
        Value::Float(_) => Value::Float(raw.parse().ok()?),
        Value::Boolean(_) => Value::Boolean(raw.parse().ok()?),
        Value::String(_) => Value::String(raw.to_string()),
        Value::Array(_) => toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()?
            .remove("v")?,
        _ => return None,
    })
}

pub fn parse_rule(s: &str) -> Result<AttributionRule> {
    AttributionRule::from_str(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        EngineConfig::default().validate().unwrap();
    }

    #[test]
    fn toml_round_trip_and_partial_files() {
        let cfg = EngineConfig::default();
        let s = toml::to_string(&cfg).unwrap();
        let back: EngineConfig = toml::from_str(&s).unwrap();
        assert_eq!(cfg, back);

        // partial file: unspecified keys keep defaults
        let partial: EngineConfig =
            toml::from_str("seed = 9\n[train]\nepochs = 3\n[generator]\nn_authors = 12\n")
                .unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.train.epochs, 3);
        assert_eq!(partial.generator.n_authors, 12);
        assert_eq!(partial.train.lr, EngineConfig::default().train.lr);
    }

    #[test]
    fn env_overrides_each_value_kind() {
        let mut cfg = EngineConfig::default();
        let vars = vec![
            ("DETANGLE_SEED".to_string(), "42".to_string()),
            ("DETANGLE_TRAIN__LR".to_string(), "0.25".to_string()),
            ("DETANGLE_TRAIN__MODE".to_string(), "simple".to_string()),
            ("DETANGLE_TRAIN__RECHUNK_EACH_EPOCH".to_string(), "false".to_string()),
            ("DETANGLE_EVAL__TOPK".to_string(), "[3, 7]".to_string()),
            ("OTHER_VAR".to_string(), "ignored".to_string()),
        ];
        apply_env_overrides(&mut cfg, &vars).unwrap();
        assert_eq!(cfg.seed, 42);
        assert_eq!(cfg.train.lr, 0.25);
        assert_eq!(cfg.train.mode, TrainMode::Simple);
        assert!(!cfg.train.rechunk_each_epoch);
        assert_eq!(cfg.eval.topk, vec![3, 7]);
    }

    #[test]
    fn env_override_rejects_unknown_keys_and_bad_values() {
        let mut cfg = EngineConfig::default();
        let bad_key = vec![("DETANGLE_TRAIN__NOPE".to_string(), "1".to_string())];
        assert!(apply_env_overrides(&mut cfg, &bad_key).is_err());
        let bad_val = vec![("DETANGLE_TRAIN__EPOCHS".to_string(), "many".to_string())];
        assert!(apply_env_overrides(&mut cfg, &bad_val).is_err());
    }

    #[test]
    fn seed_override_cascades() {
        let mut cfg = EngineConfig::default();
        cfg.train.seed = 1;
        cfg.generator.seed = 2;
        cfg.override_seed(77);
        assert_eq!((cfg.seed, cfg.train.seed, cfg.generator.seed), (77, 77, 77));
    }
}
