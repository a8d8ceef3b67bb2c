//! Experiment configuration: one JSON file per run, fully validated and
//! defaulted, echoed verbatim into every output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use rmloss_core::data::{SynthConfig2D, SynthConfig3D};
use rmloss_core::loss::{Reduction, RmConfig};
use rmloss_core::moments::MomentOrder;
use rmloss_core::train::SgdConfig;

/// Where training/eval data comes from.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Directory previously written by `gen-data` (or `save_dataset`).
    Path(PathBuf),
    Synth2d(SynthConfig2D),
    Synth3d(SynthConfig3D),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub widths: [usize; 3],
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 1,
            num_classes: 3,
            widths: rmloss_core::nn::DEFAULT_WIDTHS,
            dropout: rmloss_core::nn::DEFAULT_DROPOUT,
        }
    }
}

/// Loss selection: a named preset, an explicit configuration, or both
/// (explicit fields override the preset's).
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orders: Option<Vec<MomentOrder>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convention: Option<rmloss_core::grid::GridConvention>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reduction: Option<Reduction>,
}

/// Known preset names.
pub const PRESETS: &[&str] = &["baseline", "mse", "rm-2d-best", "rm-3d-best"];

fn preset_config(name: &str, dims: usize) -> Result<RmConfig, String> {
    let zero_order = |d: usize| {
        if d == 2 {
            MomentOrder::two(0, 0)
        } else {
            MomentOrder::three(0, 0, 0)
        }
    };
    match name {
        "baseline" => {
            let mut cfg = RmConfig::new(vec![zero_order(dims)], 0.0);
            cfg.alpha = 0.0;
            Ok(cfg)
        }
        "mse" => Ok(RmConfig::new(vec![zero_order(dims)], 1.0)),
        "rm-2d-best" => Ok(RmConfig::default_2d()),
        "rm-3d-best" => Ok(RmConfig::default_3d()),
        other => Err(format!(
            "unknown preset '{other}' (known: {})",
            PRESETS.join(", ")
        )),
    }
}

impl LossConfig {
    /// Expand to a concrete [`RmConfig`] for `dims`-dimensional data.
    pub fn resolve(&self, dims: usize) -> Result<RmConfig, String> {
        let mut cfg = match &self.preset {
            Some(name) => preset_config(name, dims)?,
            None => preset_config("baseline", dims)?,
        };
        if let Some(orders) = &self.orders {
            cfg.orders = orders.clone();
        }
        if let Some(alpha) = self.alpha {
            cfg.alpha = alpha;
        }
        if let Some(convention) = self.convention {
            cfg.convention = convention;
        }
        if let Some(normalized) = self.normalized {
            cfg.normalized = normalized;
        }
        if let Some(reduction) = self.reduction {
            cfg.reduction = reduction;
        }
        cfg.validate().map_err(|e| e.to_string())?;
        if cfg.rank() != dims {
            return Err(format!(
                "loss orders have rank {} but the data is {}D",
                cfg.rank(),
                dims
            ));
        }
        Ok(cfg)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub data: DataSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    pub sgd: SgdConfig,
    /// Optional multi-seed sweep; overrides `sgd.seed` per run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub overlays: bool,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text)
            .map_err(|e| format!("config {} is not valid: {e}", path.display()))
    }

    /// Seeds to run: the sweep list, or the single sgd seed.
    pub fn run_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            vec![self.sgd.seed]
        } else {
            self.seeds.clone()
        }
    }
}
