//! The TOML configuration file shared by the CLI. Unknown keys are
//! rejected; flags override file values, which override defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chart::{ChartType, ColorMode, LabelMode};
use crate::encoders::{CnnBackbone, NumericEncoderKind};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::runner::{Architecture, RunConfig, SplitProtocol, SweepConfig};
use crate::train::TrainConfig;

pub const DATA_ROOT_ENV: &str = "VTB_DATA_ROOT";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AppConfig {
    /// UCR archive root; `VTB_DATA_ROOT` supplies it when absent.
    pub data_root: Option<PathBuf>,
    pub cache_dir: PathBuf,
    pub results_path: PathBuf,
    /// Fraction of the archive TEST split held out for validation.
    pub val_fraction: f64,
    /// Seed of the stratified validation/test partition.
    pub split_seed: u64,
    /// Delta-grouping threshold for the report tables.
    pub delta_threshold: f64,
    pub workers: usize,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    /// Fully bound single cell for `vtb train`.
    pub run: Option<RunSpec>,
}

impl Default for AppConfig {
    fn default() -> Self {
        AppConfig {
            data_root: None,
            cache_dir: PathBuf::from("cache"),
            results_path: PathBuf::from("results.jsonl"),
            val_fraction: 0.2,
            split_seed: 42,
            delta_threshold: 0.03,
            workers: 1,
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            run: None,
        }
    }
}

/// One fully bound run cell as written in the `[run]` config table.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub dataset: String,
    pub architecture: Architecture,
    /// Required for single_chart; ignored (all four bound) otherwise.
    pub chart_type: Option<ChartType>,
    pub color_mode: ColorMode,
    pub label_mode: LabelMode,
    pub resolution: u32,
    pub backbone: CnnBackbone,
    #[serde(default = "default_fusion")]
    pub fusion: FusionStrategy,
    pub numeric_encoder: Option<NumericEncoderKind>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_seed")]
    pub base_seed: u64,
}

fn default_fusion() -> FusionStrategy {
    FusionStrategy::Concat
}

fn default_repeats() -> usize {
    1
}

fn default_seed() -> u64 {
    42
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Resolves the data root: explicit flag/file value first, then the
    /// `VTB_DATA_ROOT` environment variable.
    pub fn resolve_data_root(&self) -> Result<PathBuf> {
        if let Some(root) = &self.data_root {
            return Ok(root.clone());
        }
        if let Ok(env) = std::env::var(DATA_ROOT_ENV) {
            if !env.is_empty() {
                return Ok(PathBuf::from(env));
            }
        }
        Err(Error::Config(format!(
            "no data root: set data_root in the config, pass --data-root, or export {DATA_ROOT_ENV}"
        )))
    }

    pub fn protocol(&self) -> SplitProtocol {
        SplitProtocol {
            val_fraction: self.val_fraction,
            split_seed: self.split_seed,
        }
    }

    /// Materializes the `[run]` cell into a `RunConfig`.
    pub fn run_cell(&self) -> Result<RunConfig> {
        let spec = self
            .run
            .as_ref()
            .ok_or_else(|| Error::Config("config has no [run] table".into()))?;
        let chart_types = match spec.architecture {
            Architecture::SingleChart => {
                let ct = spec.chart_type.ok_or_else(|| {
                    Error::Config("run.chart_type is required for single_chart".into())
                })?;
                vec![ct]
            }
            _ => crate::runner::ALL_CHARTS.to_vec(),
        };
        let numeric_encoder = match spec.architecture {
            Architecture::Multimodal => {
                Some(spec.numeric_encoder.unwrap_or(NumericEncoderKind::Fcn))
            }
            _ => None,
        };
        Ok(RunConfig {
            dataset: spec.dataset.clone(),
            architecture: spec.architecture,
            chart_types,
            color_mode: spec.color_mode,
            label_mode: spec.label_mode,
            resolution: spec.resolution,
            backbone: spec.backbone,
            fusion: spec.fusion,
            numeric_encoder,
            repeats: spec.repeats,
            base_seed: spec.base_seed,
            val_fraction: self.val_fraction,
            split_seed: self.split_seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_config() {
        let cfg: AppConfig = toml::from_str("").unwrap();
        assert_eq!(cfg.val_fraction, 0.2);
        assert_eq!(cfg.delta_threshold, 0.03);
        assert_eq!(cfg.train.lr, 1e-3);
        assert_eq!(cfg.train.weight_decay, 1e-2);
        assert_eq!(cfg.train.patience, 10);
        assert_eq!(cfg.sweep.repeats_single, 10);
        assert_eq!(cfg.sweep.repeats_multi, 3);
    }

    #[test]
    fn unknown_keys_are_rejected_with_key_path() {
        let err = toml::from_str::<AppConfig>("bogus_key = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
        let err = toml::from_str::<AppConfig>("[train]\nlearning = 1\n").unwrap_err();
        assert!(err.to_string().contains("learning"));
    }

    #[test]
    fn run_cell_binds_all_charts_for_multimodal() {
        let text = r#"
            [run]
            dataset = "GunPoint"
            architecture = "multimodal"
            color_mode = "mono"
            label_mode = "no_label"
            resolution = 64
            backbone = "shallow"
            fusion = "weighted"
        "#;
        let cfg: AppConfig = toml::from_str(text).unwrap();
        let cell = cfg.run_cell().unwrap();
        assert_eq!(cell.chart_types.len(), 4);
        assert_eq!(cell.numeric_encoder, Some(NumericEncoderKind::Fcn));
        assert_eq!(cell.repeats, 1);

        // single_chart without a chart_type is an error
        let text = r#"
            [run]
            dataset = "GunPoint"
            architecture = "single_chart"
            color_mode = "mono"
            label_mode = "no_label"
            resolution = 64
            backbone = "shallow"
        "#;
        let cfg: AppConfig = toml::from_str(text).unwrap();
        assert!(cfg.run_cell().is_err());
    }

    #[test]
    fn env_var_supplies_data_root() {
        let cfg = AppConfig::default();
        std::env::set_var(DATA_ROOT_ENV, "/tmp/ucr-data");
        let root = cfg.resolve_data_root().unwrap();
        assert_eq!(root, PathBuf::from("/tmp/ucr-data"));
        std::env::remove_var(DATA_ROOT_ENV);

        let explicit = AppConfig {
            data_root: Some(PathBuf::from("/explicit")),
            ..Default::default()
        };
        assert_eq!(explicit.resolve_data_root().unwrap(), PathBuf::from("/explicit"));
    }
}
