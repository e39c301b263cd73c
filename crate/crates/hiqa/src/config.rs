use std::path::{Path, PathBuf};

use hiqa_core::dataset::{DatasetConfig, SyntheticConfig};
use hiqa_core::grpo::GrpoConfig;
use hiqa_core::reward::RewardConfig;
use hiqa_core::rollout::{Decoding, EpisodeSettings, RolloutConfig};
use serde::{Deserialize, Serialize};

use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Annotation JSONL. Records carry no image features, so training and
    /// model evaluation always use the synthetic corpus.
    pub path: Option<PathBuf>,
    pub synthetic_count: usize,
    /// Extra synthetic samples generated after the training pool.
    pub heldout_count: usize,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            path: None,
            synthetic_count: 500,
            heldout_count: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Write an intermediate snapshot every this many iterations (0: final only).
    pub snapshot_every: usize,
    /// Write every episode to `trace.jsonl`.
    pub trace: bool,
    /// Progress line on stderr every this many iterations (0: silent).
    pub log_every: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            snapshot_every: 0,
            trace: false,
            log_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub decoding: Decoding,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            decoding: Decoding::Greedy,
            seed: 0,
        }
    }
}

/// Every setting of a run. All keys are optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub iterations: usize,
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    pub dataset: DatasetConfig,
    pub synthetic: SyntheticConfig,
    pub reward: RewardConfig,
    pub grpo: GrpoConfig,
    pub rollout: RolloutConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            iterations: 200,
            out_dir: None,
            data: DataSection::default(),
            dataset: DatasetConfig::default(),
            synthetic: SyntheticConfig::default(),
            reward: RewardConfig::default(),
            grpo: GrpoConfig::default(),
            rollout: RolloutConfig::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, Failure> {
        Self::from_value(parse_table(text)?)
    }

    /// Reads `path` (if any) and applies `key=value` overrides on top.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, Failure> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Failure::Io(format!("{}: {e}", p.display())))?;
                parse_table(&text)?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_value(table)
    }

    fn from_value(table: toml::Table) -> Result<Self, Failure> {
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Failure::Config(e.message().trim().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Failure> {
        self.dataset.validate()?;
        if self.reward.score_min != self.dataset.score_min || self.reward.score_max != self.dataset.score_max {
            return Err(Failure::Config(
                "reward.score_min/score_max must match dataset.score_min/score_max".into(),
            ));
        }
        self.settings()?;
        Ok(())
    }

    pub fn settings(&self) -> Result<EpisodeSettings, Failure> {
        Ok(EpisodeSettings::new(&self.rollout, &self.reward, &self.grpo)?)
    }

    /// Canonical TOML text of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }
}

fn parse_table(text: &str) -> Result<toml::Table, Failure> {
    text.parse::<toml::Table>()
        .map_err(|e| Failure::Config(e.message().trim().to_string()))
}

/// Sets a dotted key such as `grpo.learning_rate=2.5`. The value is read as
/// a TOML value, falling back to a plain string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), Failure> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Failure::Config(format!("override `{assignment}` is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, path) = parts.split_last().expect("split yields at least one part");
    let mut cur = table;
    for p in path {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Failure::Config(format!("`{p}` in override `{key}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
