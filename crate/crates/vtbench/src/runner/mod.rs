//! Sweep expansion, resumable execution over a results log, and the report
//! tables derived from it.

pub mod report;

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use std::sync::mpsc;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chart::cache::{load_cached_rgb, render_cache};
use crate::chart::{ChartSpec, ChartType, ColorMode, LabelMode};
use crate::dataset::{load_ucr_split, stratified_holdout_indices, LabeledSeriesSet, Split};
use crate::encoders::{CnnBackbone, NumericEncoderKind};
use crate::error::{Error, Result};
use crate::fusion::FusionStrategy;
use crate::metrics::Metrics;
use crate::model::{ModelConfig, VtbModel};
use crate::train::{evaluate, EpochStat, PreparedSplit, TrainConfig};

/// Canonical chart order used when an architecture binds all four types.
pub const ALL_CHARTS: [ChartType; 4] = ChartType::ALL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    SingleChart,
    MultiChart,
    Multimodal,
}

/// The sweep axes of the ablation grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub datasets: Vec<String>,
    pub chart_types: Vec<ChartType>,
    pub color_modes: Vec<ColorMode>,
    pub label_modes: Vec<LabelMode>,
    pub resolutions: Vec<u32>,
    pub architectures: Vec<Architecture>,
    pub fusion_strategies: Vec<FusionStrategy>,
    pub numeric_encoders: Vec<NumericEncoderKind>,
    pub backbones: Vec<CnnBackbone>,
    /// Seeded repeats per unimodal cell.
    pub repeats_single: usize,
    /// Seeded repeats per multi-chart / multimodal cell.
    pub repeats_multi: usize,
    pub base_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            datasets: vec![],
            chart_types: ALL_CHARTS.to_vec(),
            color_modes: vec![ColorMode::Mono, ColorMode::Color],
            label_modes: vec![LabelMode::WithLabel, LabelMode::NoLabel],
            resolutions: vec![128],
            architectures: vec![Architecture::SingleChart],
            fusion_strategies: vec![FusionStrategy::Concat],
            numeric_encoders: vec![NumericEncoderKind::Fcn],
            backbones: vec![CnnBackbone::Deep],
            repeats_single: 10,
            repeats_multi: 3,
            base_seed: 42,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        let checks: [(&str, bool); 9] = [
            ("datasets", self.datasets.is_empty()),
            ("chart_types", self.chart_types.is_empty()),
            ("color_modes", self.color_modes.is_empty()),
            ("label_modes", self.label_modes.is_empty()),
            ("resolutions", self.resolutions.is_empty()),
            ("architectures", self.architectures.is_empty()),
            ("fusion_strategies", self.fusion_strategies.is_empty()),
            ("numeric_encoders", self.numeric_encoders.is_empty()),
            ("backbones", self.backbones.is_empty()),
        ];
        for (name, empty) in checks {
            if empty {
                return Err(Error::Config(format!("sweep axis {name} is empty")));
            }
        }
        Ok(())
    }
}

/// One fully bound cell of the sweep. A cell with `repeats = r` executes as
/// `r` seeded trainings producing one [`RunRecord`] each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dataset: String,
    pub architecture: Architecture,
    pub chart_types: Vec<ChartType>,
    pub color_mode: ColorMode,
    pub label_mode: LabelMode,
    pub resolution: u32,
    pub backbone: CnnBackbone,
    pub fusion: FusionStrategy,
    pub numeric_encoder: Option<NumericEncoderKind>,
    pub repeats: usize,
    pub base_seed: u64,
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl RunConfig {
    /// Stable hex id of (cell, seed): SHA-256 over the canonical config JSON
    /// plus the seed.
    pub fn run_id(&self, seed: u64) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(self).expect("config serializes").as_bytes());
        h.update(b":");
        h.update(seed.to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn chart_specs(&self) -> Vec<ChartSpec> {
        self.chart_types
            .iter()
            .map(|&ct| ChartSpec::new(ct, self.color_mode, self.label_mode, self.resolution))
            .collect()
    }
}

/// Data-protocol knobs shared by every run of a sweep.
#[derive(Debug, Clone, Copy)]
pub struct SplitProtocol {
    pub val_fraction: f64,
    pub split_seed: u64,
}

impl Default for SplitProtocol {
    fn default() -> Self {
        SplitProtocol {
            val_fraction: 0.2,
            split_seed: 42,
        }
    }
}

/// Cartesian expansion of the sweep, filtered for coherence: single-chart
/// cells bind one chart type each (16 per dataset x resolution with the
/// default axes); multi-chart and multimodal bind all four, and only
/// multimodal carries a numeric encoder.
pub fn expand_grid(sweep: &SweepConfig, protocol: &SplitProtocol) -> Result<Vec<RunConfig>> {
    sweep.validate()?;
    let mut cells = Vec::new();
    let mut seen = HashSet::new();
    for dataset in &sweep.datasets {
        for &resolution in &sweep.resolutions {
            for &backbone in &sweep.backbones {
                for &architecture in &sweep.architectures {
                    for &color_mode in &sweep.color_modes {
                        for &label_mode in &sweep.label_modes {
                            let base = RunConfig {
                                dataset: dataset.clone(),
                                architecture,
                                chart_types: vec![],
                                color_mode,
                                label_mode,
                                resolution,
                                backbone,
                                fusion: FusionStrategy::Concat,
                                numeric_encoder: None,
                                repeats: sweep.repeats_multi,
                                base_seed: sweep.base_seed,
                                val_fraction: protocol.val_fraction,
                                split_seed: protocol.split_seed,
                            };
                            match architecture {
                                Architecture::SingleChart => {
                                    for &ct in &sweep.chart_types {
                                        cells.push(RunConfig {
                                            chart_types: vec![ct],
                                            repeats: sweep.repeats_single,
                                            ..base.clone()
                                        });
                                    }
                                }
                                Architecture::MultiChart => {
                                    for &fusion in &sweep.fusion_strategies {
                                        cells.push(RunConfig {
                                            chart_types: ALL_CHARTS.to_vec(),
                                            fusion,
                                            ..base.clone()
                                        });
                                    }
                                }
                                Architecture::Multimodal => {
                                    for &fusion in &sweep.fusion_strategies {
                                        for &num in &sweep.numeric_encoders {
                                            cells.push(RunConfig {
                                                chart_types: ALL_CHARTS.to_vec(),
                                                fusion,
                                                numeric_encoder: Some(num),
                                                ..base.clone()
                                            });
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    for cell in &cells {
        let key = cell.run_id(0);
        if !seen.insert(key) {
            return Err(Error::Config("duplicate cell in expanded grid".into()));
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Dataset facts snapshotted into each record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetFacts {
    pub t_len: usize,
    pub n_classes: usize,
}

/// One seeded training run, one line of `results.jsonl`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub status: RunStatus,
    pub config: RunConfig,
    pub seed: u64,
    pub dataset: DatasetFacts,
    pub history: Vec<EpochStat>,
    pub metrics: Option<Metrics>,
    pub wall_secs: f64,
    /// Batch-mean fusion weights at final evaluation (weighted fusion only).
    pub alpha: Option<Vec<f32>>,
    pub error: Option<String>,
}

/// Parses a results log, skipping unparseable (torn) lines.
pub fn load_records(path: &Path) -> Result<Vec<RunRecord>> {
    if !path.exists() {
        return Ok(vec![]);
    }
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect())
}

pub struct ExecutionReport {
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub charts_written: usize,
}

/// In-memory per-dataset bundle shared by every cell on that dataset.
struct DatasetBundle {
    train: LabeledSeriesSet,
    test: LabeledSeriesSet,
    val_indices: Vec<usize>,
    test_indices: Vec<usize>,
}

fn dataset_bundle(data_root: &Path, name: &str, protocol: &SplitProtocol) -> Result<DatasetBundle> {
    let train = load_ucr_split(data_root, name, Split::Train)?;
    let test = load_ucr_split(data_root, name, Split::Test)?;
    let (val_indices, test_indices) =
        stratified_holdout_indices(&test, protocol.val_fraction, protocol.split_seed)?;
    Ok(DatasetBundle {
        train,
        test,
        val_indices,
        test_indices,
    })
}

fn prepared_split(
    cache_dir: &Path,
    set: &LabeledSeriesSet,
    split: Split,
    indices: Option<&[usize]>,
    specs: &[ChartSpec],
    resolution: u32,
) -> Result<PreparedSplit> {
    let own_indices: Vec<usize>;
    let idxs: &[usize] = match indices {
        Some(i) => i,
        None => {
            own_indices = (0..set.len()).collect();
            &own_indices
        }
    };
    let mut branches = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut images = Vec::with_capacity(idxs.len());
        for &i in idxs {
            images.push(load_cached_rgb(cache_dir, &set.meta.name, split, i, spec)?);
        }
        branches.push(images);
    }
    Ok(PreparedSplit {
        branches,
        series: idxs.iter().map(|&i| set.instances[i].values.clone()).collect(),
        labels: idxs.iter().map(|&i| set.instances[i].label).collect(),
        resolution: resolution as usize,
        t_len: set.meta.t_len,
    })
}

fn model_config(cell: &RunConfig, facts: &DatasetFacts, seed: u64) -> ModelConfig {
    ModelConfig {
        backbone: cell.backbone,
        chart_branches: cell.chart_types.len(),
        include_numeric: cell.numeric_encoder.is_some(),
        numeric_encoder: cell.numeric_encoder.unwrap_or(NumericEncoderKind::Fcn),
        fusion: cell.fusion,
        resolution: cell.resolution as usize,
        t_len: facts.t_len,
        n_classes: facts.n_classes,
        seed,
        dropout_p: 0.5,
        numeric_dim: crate::encoders::DEFAULT_NUMERIC_DIM,
        common_dim: crate::fusion::DEFAULT_COMMON_DIM,
    }
}

/// Runs one cell's remaining seeds in-process; returns the new records.
fn execute_cell(
    cell: &RunConfig,
    bundle: &DatasetBundle,
    cache_dir: &Path,
    train_cfg: &TrainConfig,
    done: &HashSet<String>,
) -> Vec<RunRecord> {
    let facts = DatasetFacts {
        t_len: bundle.train.meta.t_len,
        n_classes: bundle.train.meta.n_classes,
    };
    let pending: Vec<u64> = (0..cell.repeats as u64)
        .map(|i| cell.base_seed + i)
        .filter(|seed| !done.contains(&cell.run_id(*seed)))
        .collect();
    if pending.is_empty() {
        return vec![];
    }

    let specs = cell.chart_specs();
    let prepared = (|| -> Result<_> {
        let train = prepared_split(cache_dir, &bundle.train, Split::Train, None, &specs, cell.resolution)?;
        let val = prepared_split(
            cache_dir,
            &bundle.test,
            Split::Test,
            Some(&bundle.val_indices),
            &specs,
            cell.resolution,
        )?;
        let test = prepared_split(
            cache_dir,
            &bundle.test,
            Split::Test,
            Some(&bundle.test_indices),
            &specs,
            cell.resolution,
        )?;
        Ok((train, val, test))
    })();
    let (train_data, val_data, test_data) = match prepared {
        Ok(t) => t,
        Err(e) => {
            return pending
                .iter()
                .map(|&seed| failed_record(cell, seed, facts, &e))
                .collect();
        }
    };

    let mut records = Vec::new();
    for seed in pending {
        let start = std::time::Instant::now();
        let outcome = (|| -> Result<RunRecord> {
            let mut model = VtbModel::build(&model_config(cell, &facts, seed))?;
            model.hp.lr = train_cfg.lr;
            model.hp.weight_decay = train_cfg.weight_decay;
            model.hp.decoupled_decay = train_cfg.decoupled_decay;
            let history = crate::train::train(&mut model, &train_data, &val_data, train_cfg, seed)?;
            let metrics = evaluate(&mut model, &test_data)?;
            Ok(RunRecord {
                run_id: cell.run_id(seed),
                status: RunStatus::Ok,
                config: cell.clone(),
                seed,
                dataset: facts,
                history,
                metrics: Some(metrics),
                wall_secs: start.elapsed().as_secs_f64(),
                alpha: model.last_alpha(),
                error: None,
            })
        })();
        records.push(match outcome {
            Ok(r) => r,
            Err(e) => failed_record(cell, seed, facts, &e),
        });
    }
    records
}

fn failed_record(cell: &RunConfig, seed: u64, facts: DatasetFacts, err: &Error) -> RunRecord {
    RunRecord {
        run_id: cell.run_id(seed),
        status: RunStatus::Failed,
        config: cell.clone(),
        seed,
        dataset: facts,
        history: vec![],
        metrics: None,
        wall_secs: 0.0,
        alpha: None,
        error: Some(err.to_string()),
    }
}

/// Renders all chart caches the cells need, then executes every (cell, seed)
/// whose run id is not yet in the results file. Workers run cells; a single
/// writer appends records. Per-run failures are recorded, not fatal.
pub fn execute(
    cells: &[RunConfig],
    data_root: &Path,
    cache_dir: &Path,
    results_path: &Path,
    train_cfg: &TrainConfig,
    protocol: &SplitProtocol,
    workers: usize,
) -> Result<ExecutionReport> {
    let existing = load_records(results_path)?;
    let done: HashSet<String> = existing.iter().map(|r| r.run_id.clone()).collect();

    // phase 1: datasets and chart caches, before any training starts
    let mut bundles: BTreeMap<String, DatasetBundle> = BTreeMap::new();
    let mut charts_written = 0usize;
    for cell in cells {
        if !bundles.contains_key(&cell.dataset) {
            bundles.insert(
                cell.dataset.clone(),
                dataset_bundle(data_root, &cell.dataset, protocol)?,
            );
        }
    }
    let mut spec_sets: BTreeMap<String, HashSet<ChartSpec>> = BTreeMap::new();
    for cell in cells {
        spec_sets
            .entry(cell.dataset.clone())
            .or_default()
            .extend(cell.chart_specs());
    }
    for (dataset, specs) in &spec_sets {
        let bundle = &bundles[dataset];
        let mut specs: Vec<ChartSpec> = specs.iter().copied().collect();
        specs.sort_by_key(|s| s.file_token());
        charts_written += render_cache(&bundle.train, Split::Train, &specs, cache_dir)?.written;
        charts_written += render_cache(&bundle.test, Split::Test, &specs, cache_dir)?.written;
    }

    // phase 2: worker pool + single writer
    if let Some(parent) = results_path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(results_path)?;
    let mut writer = std::io::BufWriter::new(file);

    let queue: Mutex<Vec<&RunConfig>> = Mutex::new(cells.iter().rev().collect());
    let (tx, rx) = mpsc::channel::<RunRecord>();
    let mut executed = 0usize;
    let mut failed = 0usize;
    let skipped: usize = cells
        .iter()
        .map(|c| {
            (0..c.repeats as u64)
                .filter(|i| done.contains(&c.run_id(c.base_seed + i)))
                .count()
        })
        .sum();

    std::thread::scope(|scope| -> Result<()> {
        for _ in 0..workers.max(1) {
            let tx = tx.clone();
            let queue = &queue;
            let bundles = &bundles;
            let done = &done;
            scope.spawn(move || loop {
                let cell = match queue.lock().unwrap().pop() {
                    Some(c) => c,
                    None => break,
                };
                let bundle = &bundles[&cell.dataset];
                for record in execute_cell(cell, bundle, cache_dir, train_cfg, done) {
                    if tx.send(record).is_err() {
                        break;
                    }
                }
            });
        }
        drop(tx);
        for record in rx {
            if record.status == RunStatus::Failed {
                failed += 1;
            }
            executed += 1;
            let line = serde_json::to_string(&record)?;
            writer.write_all(line.as_bytes())?;
            writer.write_all(b"\n")?;
            writer.flush()?;
        }
        Ok(())
    })?;

    Ok(ExecutionReport {
        executed,
        skipped,
        failed,
        charts_written,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_dataset_sweep() -> SweepConfig {
        SweepConfig {
            datasets: vec!["ItalyPowerDemand".into()],
            resolutions: vec![128],
            ..Default::default()
        }
    }

    #[test]
    fn single_chart_grid_is_sixteen_cells() {
        let cells = expand_grid(&one_dataset_sweep(), &SplitProtocol::default()).unwrap();
        assert_eq!(cells.len(), 16);
        assert!(cells.iter().all(|c| c.chart_types.len() == 1));
        assert!(cells.iter().all(|c| c.numeric_encoder.is_none()));
    }

    #[test]
    fn three_resolutions_triple_the_grid() {
        let sweep = SweepConfig {
            resolutions: vec![64, 128, 256],
            ..one_dataset_sweep()
        };
        let cells = expand_grid(&sweep, &SplitProtocol::default()).unwrap();
        assert_eq!(cells.len(), 48);
    }

    #[test]
    fn singleton_axes_give_one_cell() {
        let sweep = SweepConfig {
            chart_types: vec![ChartType::Line],
            color_modes: vec![ColorMode::Mono],
            label_modes: vec![LabelMode::NoLabel],
            ..one_dataset_sweep()
        };
        let cells = expand_grid(&sweep, &SplitProtocol::default()).unwrap();
        assert_eq!(cells.len(), 1);
    }

    #[test]
    fn multimodal_binds_all_charts_and_numeric() {
        let sweep = SweepConfig {
            architectures: vec![Architecture::Multimodal],
            color_modes: vec![ColorMode::Mono],
            label_modes: vec![LabelMode::NoLabel],
            fusion_strategies: vec![FusionStrategy::Weighted],
            numeric_encoders: vec![NumericEncoderKind::Fcn, NumericEncoderKind::Transformer],
            ..one_dataset_sweep()
        };
        let cells = expand_grid(&sweep, &SplitProtocol::default()).unwrap();
        assert_eq!(cells.len(), 2);
        for c in &cells {
            assert_eq!(c.chart_types, ALL_CHARTS.to_vec());
            assert!(c.numeric_encoder.is_some());
            assert_eq!(c.repeats, 3);
        }
    }

    #[test]
    fn empty_axis_is_rejected() {
        let sweep = SweepConfig {
            chart_types: vec![],
            ..one_dataset_sweep()
        };
        assert!(expand_grid(&sweep, &SplitProtocol::default()).is_err());
    }

    #[test]
    fn run_ids_are_stable_and_unique() {
        let cells = expand_grid(&one_dataset_sweep(), &SplitProtocol::default()).unwrap();
        let ids: HashSet<String> = cells.iter().map(|c| c.run_id(42)).collect();
        assert_eq!(ids.len(), cells.len());
        // pure function of config + seed
        assert_eq!(cells[0].run_id(7), cells[0].run_id(7));
        assert_ne!(cells[0].run_id(7), cells[0].run_id(8));
        let mut other = cells[0].clone();
        other.resolution = 256;
        assert_ne!(other.run_id(7), cells[0].run_id(7));
    }

    #[test]
    fn load_records_skips_torn_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results.jsonl");
        std::fs::write(&path, "{\"not\": \"a record\"\nGARBAGE\n").unwrap();
        let records = load_records(&path).unwrap();
        assert!(records.is_empty());
    }
}
