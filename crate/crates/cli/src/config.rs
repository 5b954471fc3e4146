//! Run configuration: one TOML file of dotted keys, layered over defaults,
//! with command-line overrides on top.

use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tribosign_core::augment::AugmentConfig;
use tribosign_core::data::QcConfig;
use tribosign_core::model::TrainConfig;
use tribosign_core::pipeline::{ModelChoice, ModelRecipes, PipelineConfig};
use tribosign_core::synth::SynthConfig;
use tribosign_core::{MfccConfig, SplitSpec};

use crate::error::usage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnSettings {
    pub k: usize,
    pub cv_folds: usize,
}

impl Default for KnnSettings {
    fn default() -> Self {
        KnnSettings { k: 5, cv_folds: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationSettings {
    pub windows: Vec<usize>,
    pub model: ModelChoice,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            windows: vec![50, 75, 100],
            model: ModelChoice::SimpleNn,
        }
    }
}

/// Every stage's parameters. Stage seeds are not configurable on their own:
/// they all follow the root `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub window: usize,
    pub synth: SynthConfig,
    pub qc: QcConfig,
    pub split: SplitSpec,
    pub augment: AugmentConfig,
    pub mfcc: MfccConfig,
    /// The multi-branch recipe.
    pub train: TrainConfig,
    pub simple_nn: TrainConfig,
    pub knn: KnnSettings,
    pub ablation: AblationSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            window: PipelineConfig::default().window,
            synth: SynthConfig::default(),
            qc: QcConfig::default(),
            split: SplitSpec::default(),
            augment: AugmentConfig::default(),
            mfcc: MfccConfig::default(),
            train: TrainConfig::default(),
            simple_nn: TrainConfig::simple_nn(),
            knn: KnnSettings::default(),
            ablation: AblationSettings::default(),
        }
    }
}

const SEED_KEY: &str = "rng_seed";

impl RunConfig {
    fn resolve_seeds(&mut self) {
        self.synth.rng_seed = self.seed;
        self.split.rng_seed = self.seed;
        self.augment.rng_seed = self.seed;
        self.train.rng_seed = self.seed;
        self.simple_nn.rng_seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.split.validate()?;
        self.augment.validate()?;
        self.mfcc.validate()?;
        self.train.validate()?;
        self.simple_nn.validate()?;
        if self.window == 0 {
            return Err(usage("window must be positive"));
        }
        if self.knn.k == 0 || self.knn.cv_folds < 2 {
            return Err(usage("knn.k must be positive and knn.cv_folds at least 2"));
        }
        if self.ablation.windows.is_empty() || self.ablation.windows.contains(&0) {
            return Err(usage("ablation.windows must list positive window sizes"));
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            window: self.window,
            qc: self.qc,
            split: self.split,
            augment: self.augment,
            mfcc: self.mfcc,
        }
    }

    pub fn recipes(&self) -> ModelRecipes {
        ModelRecipes {
            multibranch: self.train.clone(),
            simple_nn: self.simple_nn.clone(),
            knn_k: self.knn.k,
        }
    }

    /// Re-apply seeds and checks after a command edits the config.
    pub fn finalize(&mut self) -> Result<()> {
        self.resolve_seeds();
        self.validate()
    }

    /// Flat `key = value` text, one line per leaf, stage seeds omitted.
    /// Feeding it back through [`load`] gives the same config.
    pub fn echo(&self) -> String {
        let table = toml::Table::try_from(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &table, &mut lines);
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }

    /// Hash of the echo lines under `section` (a top-level key).
    pub fn section_hash(&self, section: &str) -> String {
        let prefix = format!("{section}.");
        let mut h = Sha256::new();
        for line in self.echo().lines() {
            let key = line.split(" = ").next().unwrap_or_default();
            if key == section || key.starts_with(&prefix) {
                h.update(line.as_bytes());
                h.update(b"\n");
            }
        }
        hex(&h.finalize())
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<String>) {
    for (k, v) in table {
        if k == SEED_KEY {
            continue;
        }
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            other => out.push(format!("{key} = {other}")),
        }
    }
}

fn find_stage_seed(table: &toml::Table, prefix: &str) -> Option<String> {
    table.iter().find_map(|(k, v)| {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            _ if k == SEED_KEY => Some(key),
            toml::Value::Table(t) => find_stage_seed(t, &key),
            _ => None,
        }
    })
}

/// Parse an override's right-hand side as a TOML value, falling back to a
/// bare string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| usage(format!("bad key '{key}'")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| usage(format!("'{p}' in '{key}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Overlay `user` onto `base`. A user table carrying a `kind` tag replaces
/// the base table whole, since its other fields depend on the variant.
fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) if !u.contains_key("kind") => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Defaults, then the file, then `overrides` (`dotted.key`, raw value).
pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut user = match file {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for (k, raw) in overrides {
        set_dotted(&mut user, k, parse_value(raw))?;
    }
    if let Some(key) = find_stage_seed(&user, "") {
        return Err(usage(format!("'{key}' cannot be set directly; set the root 'seed' instead")));
    }
    let mut table = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
    merge(&mut table, user);
    let mut cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| usage(format!("config: {}", e.message())))?;
    cfg.finalize()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips() {
        let mut cfg = load(None, &[("seed".into(), "9".into()), ("mfcc.dct_axis".into(), "\"mel\"".into())]).unwrap();
        cfg.train.max_epochs = 70;
        let text = cfg.echo();
        assert!(text.contains("mfcc.n_mels = 40"));
        assert!(!text.contains("rng_seed"));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, &text).unwrap();
        assert_eq!(load(Some(&path), &[]).unwrap(), cfg);
    }

    #[test]
    fn defaults_keep_recipe_differences() {
        let cfg = load(None, &[]).unwrap();
        assert_eq!(cfg.simple_nn, TrainConfig::simple_nn());
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn unknown_keys_and_stage_seeds_are_rejected() {
        assert!(load(None, &[("mfcc.n_melz".into(), "4".into())]).is_err());
        assert!(load(None, &[("bogus".into(), "1".into())]).is_err());
        assert!(load(None, &[("augment.rng_seed".into(), "1".into())]).is_err());
    }

    #[test]
    fn tagged_tables_switch_variant() {
        let cfg = load(None, &[("train.loss.kind".into(), "cross_entropy".into())]).unwrap();
        assert_eq!(cfg.train.loss, tribosign_core::nn::LossKind::CrossEntropy);
    }

    #[test]
    fn section_hash_tracks_only_its_section() {
        let a = load(None, &[]).unwrap();
        let b = load(None, &[("mfcc.n_mels".into(), "20".into())]).unwrap();
        assert_ne!(a.section_hash("mfcc"), b.section_hash("mfcc"));
        assert_eq!(a.section_hash("split"), b.section_hash("split"));
        assert_ne!(a.section_hash("seed"), load(None, &[("seed".into(), "1".into())]).unwrap().section_hash("seed"));
    }
}
