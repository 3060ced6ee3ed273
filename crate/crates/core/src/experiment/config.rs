use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::BackboneParams;
use crate::calibration::{default_c_grid, RiskBudgetConfig};
use crate::data::{CsvSchema, SplitRatios, SyntheticSpec};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DatasetConfig {
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: CsvSchema,
    },
    /// The spec's `seed` is ignored; it is derived from the experiment seed.
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Point,
    BudgetScale,
}

fn default_history() -> usize {
    75
}
fn default_horizon() -> usize {
    15
}
fn default_baselines() -> Vec<Baseline> {
    vec![Baseline::Point, Baseline::BudgetScale]
}
fn default_service() -> f64 {
    crate::admission::DEFAULT_SERVICE_MBPS
}
fn default_output() -> PathBuf {
    PathBuf::from("runs/latest")
}

/// Everything needed to reproduce one experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    #[serde(rename = "L", default = "default_history")]
    pub history: usize,
    #[serde(rename = "H", default = "default_horizon")]
    pub horizon: usize,
    #[serde(default)]
    pub split_ratios: SplitRatios,
    #[serde(default)]
    pub risk: RiskBudgetConfig,
    #[serde(default)]
    pub backbone: BackboneParams,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Baseline>,
    #[serde(default = "default_c_grid")]
    pub c_grid: Vec<f64>,
    #[serde(default = "default_service")]
    pub admission_b: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

/// Pipeline stages that consume randomness, each with its own seed.
pub const SEEDED_STAGES: [&str; 3] = ["dataset", "point_model", "quantile_models"];

/// Per-stage seed: the first 8 bytes of `SHA-256(seed_le ‖ stage)`.
pub fn derive_seed(seed: u64, stage: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stage.as_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Parse a TOML config file; a relative CSV path is taken relative to
    /// the file's directory.
    pub fn from_file(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut config = Self::from_toml_str(&text)?;
        if let DatasetConfig::Csv { path: csv, .. } = &mut config.dataset {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("L and H must be at least 1".into()));
        }
        self.split_ratios.validate()?;
        self.risk.validate()?;
        self.backbone.validate()?;
        if !(self.admission_b > 0.0 && self.admission_b.is_finite()) {
            return Err(Error::InvalidBandwidth(self.admission_b));
        }
        if self.c_grid.is_empty() {
            return Err(Error::EmptyGrid);
        }
        if self.c_grid.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidGrid("scale factors must be positive".into()));
        }
        if let DatasetConfig::Synthetic(spec) = &self.dataset {
            spec.validate()?;
        }
        Ok(())
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }

    pub fn stage_seeds(&self) -> BTreeMap<String, u64> {
        SEEDED_STAGES
            .iter()
            .map(|s| (s.to_string(), self.stage_seed(s)))
            .collect()
    }

    /// The config with every derived seed filled in and presentation-only
    /// fields cleared. Two configs produce the same results iff their
    /// resolved forms are equal.
    pub fn resolved(&self) -> ExperimentConfig {
        let mut c = self.clone();
        if let DatasetConfig::Synthetic(spec) = &mut c.dataset {
            spec.seed = self.stage_seed("dataset");
        }
        c.backbone = c.backbone.with_seed(0);
        let mut baselines = c.baselines.clone();
        baselines.sort();
        baselines.dedup();
        c.baselines = baselines;
        c.output_dir = PathBuf::new();
        c
    }

    pub fn config_hash(&self) -> String {
        let canonical =
            serde_json::to_string(&self.resolved()).expect("config is always serializable");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }

    pub fn wants(&self, baseline: Baseline) -> bool {
        self.baselines.contains(&baseline)
    }

    /// A small synthetic experiment that runs in seconds.
    pub fn demo() -> ExperimentConfig {
        ExperimentConfig {
            dataset: DatasetConfig::Synthetic(SyntheticSpec {
                length: 6_000,
                ..SyntheticSpec::default()
            }),
            history: 8,
            horizon: 3,
            split_ratios: SplitRatios::default(),
            risk: RiskBudgetConfig::default(),
            backbone: BackboneParams::BoostedTrees(crate::backbone::TreeParams {
                n_trees: 40,
                max_depth: 3,
                ..Default::default()
            }),
            baselines: default_baselines(),
            c_grid: default_c_grid(),
            admission_b: default_service(),
            seed: 7,
            output_dir: default_output(),
        }
    }
}
