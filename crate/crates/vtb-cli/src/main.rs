//! `vtb` — operator surface for the chart-based TSC benchmark pipeline.
//!
//! Subcommands: `render` (populate the chart cache), `train` (one run cell),
//! `sweep` (full grid with resume), `report` (tables from the results log),
//! `selfcheck` (built-in oracle suites). Flags override config-file values,
//! which override defaults; `VTB_DATA_ROOT` supplies the data root when no
//! flag or key does.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vtbench::chart::{ChartSpec, ColorMode, LabelMode};
use vtbench::config::AppConfig;
use vtbench::dataset::{load_ucr_split, Split};
use vtbench::encoders::CnnBackbone;
use vtbench::fusion::FusionStrategy;
use vtbench::runner::report::{
    delta_table, delta_table_csv, delta_table_markdown, parse_matrix_csv, rank_report,
    rank_table_markdown, setting_report, setting_report_csv, setting_report_markdown,
    stats_report,
};
use vtbench::runner::{execute, expand_grid, load_records, Architecture, RunStatus};

#[derive(Parser)]
#[command(name = "vtb", version, about = "Chart-based time-series classification benchmark")]
struct Cli {
    /// TOML config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// UCR archive root (overrides config and VTB_DATA_ROOT).
    #[arg(long, global = true)]
    data_root: Option<PathBuf>,

    /// Chart cache directory.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,

    /// Results log (JSON lines).
    #[arg(long, global = true)]
    results: Option<PathBuf>,

    /// Validation fraction held out of the archive TEST split.
    #[arg(long, global = true)]
    val_fraction: Option<f64>,

    /// Seed of the validation/test partition.
    #[arg(long, global = true)]
    split_seed: Option<u64>,

    /// Delta-grouping threshold for reports.
    #[arg(long, global = true)]
    theta: Option<f64>,

    /// Worker threads for sweep execution.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(flatten)]
    train_overrides: TrainOverrides,

    #[command(flatten)]
    table_overrides: TableOverrides,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainOverrides {
    #[arg(long, global = true)]
    lr: Option<f32>,
    #[arg(long, global = true)]
    weight_decay: Option<f32>,
    #[arg(long, global = true)]
    patience: Option<usize>,
    #[arg(long, global = true)]
    scheduler_patience: Option<usize>,
    #[arg(long, global = true)]
    max_epochs: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    min_lr: Option<f32>,
    #[arg(long, global = true)]
    decoupled_decay: Option<bool>,
}

/// Comma-list mirrors of the `[sweep]` axes and scalar mirrors of `[run]`.
#[derive(Args)]
struct TableOverrides {
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_datasets: Option<Vec<String>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_chart_types: Option<Vec<String>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_color_modes: Option<Vec<String>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_label_modes: Option<Vec<String>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_resolutions: Option<Vec<u32>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_architectures: Option<Vec<String>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_fusion_strategies: Option<Vec<String>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_numeric_encoders: Option<Vec<String>>,
    #[arg(long, global = true, value_delimiter = ',')]
    sweep_backbones: Option<Vec<String>>,
    #[arg(long, global = true)]
    sweep_repeats_single: Option<usize>,
    #[arg(long, global = true)]
    sweep_repeats_multi: Option<usize>,
    #[arg(long, global = true)]
    sweep_base_seed: Option<u64>,

    #[arg(long, global = true)]
    run_dataset: Option<String>,
    #[arg(long, global = true)]
    run_architecture: Option<String>,
    #[arg(long, global = true)]
    run_chart_type: Option<String>,
    #[arg(long, global = true)]
    run_color_mode: Option<String>,
    #[arg(long, global = true)]
    run_label_mode: Option<String>,
    #[arg(long, global = true)]
    run_resolution: Option<u32>,
    #[arg(long, global = true)]
    run_backbone: Option<String>,
    #[arg(long, global = true)]
    run_fusion: Option<String>,
    #[arg(long, global = true)]
    run_numeric_encoder: Option<String>,
    #[arg(long, global = true)]
    run_repeats: Option<usize>,
    #[arg(long, global = true)]
    run_seed: Option<u64>,
}

/// Parses a snake_case token into a serde-enabled enum.
fn parse_token<T: serde::de::DeserializeOwned>(name: &str, s: &str) -> anyhow::Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| anyhow::anyhow!("invalid {name}: {s:?}"))
}

fn parse_tokens<T: serde::de::DeserializeOwned>(name: &str, list: &[String]) -> anyhow::Result<Vec<T>> {
    list.iter().map(|s| parse_token(name, s)).collect()
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportKind {
    Delta,
    Settings,
    Ranks,
    Stats,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Md,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Render every chart the configured sweep needs into the cache.
    Render,
    /// Train the single `[run]` cell from the config and print its metrics.
    Train,
    /// Expand the sweep grid and execute it with resume.
    Sweep,
    /// Emit a report table from the results log (or a CSV matrix).
    Report {
        #[arg(long, value_enum)]
        kind: ReportKind,
        #[arg(long, value_enum, default_value = "md")]
        format: OutputFormat,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// `dataset,method...` accuracy matrix for `ranks` / `stats`.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Restrict the delta report to one resolution.
        #[arg(long)]
        resolution: Option<u32>,
    },
    /// Run the built-in gradient, rasterizer and statistics oracles.
    Selfcheck,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}

fn effective_config(cli: &Cli) -> anyhow::Result<AppConfig> {
    let mut cfg = match &cli.config {
        Some(path) => AppConfig::load(path).context("loading config")?,
        None => AppConfig::default(),
    };
    if let Some(v) = &cli.data_root {
        cfg.data_root = Some(v.clone());
    }
    if let Some(v) = &cli.cache_dir {
        cfg.cache_dir = v.clone();
    }
    if let Some(v) = &cli.results {
        cfg.results_path = v.clone();
    }
    if let Some(v) = cli.val_fraction {
        if !(v > 0.0 && v < 1.0) {
            bail!("val_fraction {v} outside (0, 1)");
        }
        cfg.val_fraction = v;
    }
    if let Some(v) = cli.split_seed {
        cfg.split_seed = v;
    }
    if let Some(v) = cli.theta {
        cfg.delta_threshold = v;
    }
    if let Some(v) = cli.workers {
        cfg.workers = v.max(1);
    }
    let t = &cli.train_overrides;
    if let Some(v) = t.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = t.weight_decay {
        cfg.train.weight_decay = v;
    }
    if let Some(v) = t.patience {
        cfg.train.patience = v;
    }
    if let Some(v) = t.scheduler_patience {
        cfg.train.scheduler_patience = v;
    }
    if let Some(v) = t.max_epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = t.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = t.min_lr {
        cfg.train.min_lr = v;
    }
    if let Some(v) = t.decoupled_decay {
        cfg.train.decoupled_decay = v;
    }

    let s = &cli.table_overrides;
    if let Some(v) = &s.sweep_datasets {
        cfg.sweep.datasets = v.clone();
    }
    if let Some(v) = &s.sweep_chart_types {
        cfg.sweep.chart_types = parse_tokens("chart_type", v)?;
    }
    if let Some(v) = &s.sweep_color_modes {
        cfg.sweep.color_modes = parse_tokens("color_mode", v)?;
    }
    if let Some(v) = &s.sweep_label_modes {
        cfg.sweep.label_modes = parse_tokens("label_mode", v)?;
    }
    if let Some(v) = &s.sweep_resolutions {
        cfg.sweep.resolutions = v.clone();
    }
    if let Some(v) = &s.sweep_architectures {
        cfg.sweep.architectures = parse_tokens("architecture", v)?;
    }
    if let Some(v) = &s.sweep_fusion_strategies {
        cfg.sweep.fusion_strategies = parse_tokens("fusion", v)?;
    }
    if let Some(v) = &s.sweep_numeric_encoders {
        cfg.sweep.numeric_encoders = parse_tokens("numeric_encoder", v)?;
    }
    if let Some(v) = &s.sweep_backbones {
        cfg.sweep.backbones = parse_tokens("backbone", v)?;
    }
    if let Some(v) = s.sweep_repeats_single {
        cfg.sweep.repeats_single = v;
    }
    if let Some(v) = s.sweep_repeats_multi {
        cfg.sweep.repeats_multi = v;
    }
    if let Some(v) = s.sweep_base_seed {
        cfg.sweep.base_seed = v;
    }

    let has_run_flags = s.run_dataset.is_some()
        || s.run_architecture.is_some()
        || s.run_chart_type.is_some()
        || s.run_color_mode.is_some()
        || s.run_label_mode.is_some()
        || s.run_resolution.is_some()
        || s.run_backbone.is_some()
        || s.run_fusion.is_some()
        || s.run_numeric_encoder.is_some()
        || s.run_repeats.is_some()
        || s.run_seed.is_some();
    if has_run_flags {
        let mut run = cfg.run.take().unwrap_or(vtbench::config::RunSpec {
            dataset: String::new(),
            architecture: Architecture::SingleChart,
            chart_type: None,
            color_mode: ColorMode::Mono,
            label_mode: LabelMode::NoLabel,
            resolution: 128,
            backbone: CnnBackbone::Deep,
            fusion: FusionStrategy::Concat,
            numeric_encoder: None,
            repeats: 1,
            base_seed: 42,
        });
        if let Some(v) = &s.run_dataset {
            run.dataset = v.clone();
        }
        if let Some(v) = &s.run_architecture {
            run.architecture = parse_token("architecture", v)?;
        }
        if let Some(v) = &s.run_chart_type {
            run.chart_type = Some(parse_token("chart_type", v)?);
        }
        if let Some(v) = &s.run_color_mode {
            run.color_mode = parse_token("color_mode", v)?;
        }
        if let Some(v) = &s.run_label_mode {
            run.label_mode = parse_token("label_mode", v)?;
        }
        if let Some(v) = s.run_resolution {
            run.resolution = v;
        }
        if let Some(v) = &s.run_backbone {
            run.backbone = parse_token("backbone", v)?;
        }
        if let Some(v) = &s.run_fusion {
            run.fusion = parse_token("fusion", v)?;
        }
        if let Some(v) = &s.run_numeric_encoder {
            run.numeric_encoder = Some(parse_token("numeric_encoder", v)?);
        }
        if let Some(v) = s.run_repeats {
            run.repeats = v;
        }
        if let Some(v) = s.run_seed {
            run.base_seed = v;
        }
        if run.dataset.is_empty() {
            bail!("--run-dataset is required when building a run from flags");
        }
        cfg.run = Some(run);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    let cfg = effective_config(&cli)?;
    match &cli.command {
        Command::Render => cmd_render(&cfg),
        Command::Train => cmd_train(&cfg),
        Command::Sweep => cmd_sweep(&cfg),
        Command::Report {
            kind,
            format,
            out,
            matrix,
            resolution,
        } => cmd_report(&cfg, *kind, *format, out.as_deref(), matrix.as_deref(), *resolution),
        Command::Selfcheck => cmd_selfcheck(),
    }
}

fn cmd_render(cfg: &AppConfig) -> anyhow::Result<i32> {
    let data_root = cfg.resolve_data_root()?;
    let sweep = cfg.sweep.clone();
    if sweep.datasets.is_empty() {
        bail!("sweep.datasets is empty; nothing to render");
    }
    sweep.validate()?;
    let mut specs = Vec::new();
    for &res in &sweep.resolutions {
        for &ct in &sweep.chart_types {
            for &cm in &sweep.color_modes {
                for &lm in &sweep.label_modes {
                    specs.push(ChartSpec::new(ct, cm, lm, res));
                }
            }
        }
    }
    let mut written = 0;
    let mut skipped = 0;
    for dataset in &sweep.datasets {
        for split in [Split::Train, Split::Test] {
            let set = load_ucr_split(&data_root, dataset, split)?;
            let manifest = vtbench::chart::cache::render_cache(&set, split, &specs, &cfg.cache_dir)?;
            written += manifest.written;
            skipped += manifest.skipped;
            println!(
                "{dataset}/{split}: {} files ({} written, {} up to date)",
                manifest.entries.len(),
                manifest.written,
                manifest.skipped
            );
        }
    }
    println!("cache: {written} written, {skipped} up to date");
    Ok(0)
}

fn cmd_train(cfg: &AppConfig) -> anyhow::Result<i32> {
    let data_root = cfg.resolve_data_root()?;
    let cell = cfg.run_cell()?;
    let report = execute(
        std::slice::from_ref(&cell),
        &data_root,
        &cfg.cache_dir,
        &cfg.results_path,
        &cfg.train,
        &cfg.protocol(),
        1,
    )?;
    let records = load_records(&cfg.results_path)?;
    let mut ok = true;
    for seed_idx in 0..cell.repeats as u64 {
        let seed = cell.base_seed + seed_idx;
        let id = cell.run_id(seed);
        match records.iter().find(|r| r.run_id == id) {
            Some(r) if r.status == RunStatus::Ok => {
                let m = r.metrics.expect("ok record has metrics");
                println!(
                    "seed {seed}: accuracy {:.4}  macro-F1 {:.4}  AUC {:.4}  ({} epochs, {:.1}s)",
                    m.accuracy,
                    m.macro_f1,
                    m.auc,
                    r.history.len(),
                    r.wall_secs
                );
                if let Some(alpha) = &r.alpha {
                    println!(
                        "  fusion weights: [{}]",
                        alpha
                            .iter()
                            .map(|a| format!("{a:.3}"))
                            .collect::<Vec<_>>()
                            .join(", ")
                    );
                }
            }
            Some(r) => {
                ok = false;
                println!("seed {seed}: FAILED — {}", r.error.as_deref().unwrap_or("unknown"));
            }
            None => {
                ok = false;
                println!("seed {seed}: missing record");
            }
        }
    }
    println!(
        "executed {} runs ({} skipped as already present)",
        report.executed, report.skipped
    );
    Ok(if ok { 0 } else { 1 })
}

fn cmd_sweep(cfg: &AppConfig) -> anyhow::Result<i32> {
    let data_root = cfg.resolve_data_root()?;
    if cfg.sweep.datasets.is_empty() {
        bail!("sweep.datasets is empty");
    }
    let cells = expand_grid(&cfg.sweep, &cfg.protocol())?;
    let total_runs: usize = cells.iter().map(|c| c.repeats).sum();
    println!("grid: {} cells, {} seeded runs", cells.len(), total_runs);
    let report = execute(
        &cells,
        &data_root,
        &cfg.cache_dir,
        &cfg.results_path,
        &cfg.train,
        &cfg.protocol(),
        cfg.workers,
    )?;
    println!(
        "sweep complete: {} executed, {} skipped (resume), {} failed, {} charts written",
        report.executed, report.skipped, report.failed, report.charts_written
    );
    Ok(if report.failed == 0 { 0 } else { 1 })
}

fn cmd_report(
    cfg: &AppConfig,
    kind: ReportKind,
    format: OutputFormat,
    out: Option<&std::path::Path>,
    matrix: Option<&std::path::Path>,
    resolution: Option<u32>,
) -> anyhow::Result<i32> {
    let text = match kind {
        ReportKind::Delta => {
            let records = load_records(&cfg.results_path)?;
            if records.is_empty() {
                bail!("no records in {}", cfg.results_path.display());
            }
            let rows = delta_table(&records, cfg.delta_threshold, resolution);
            match format {
                OutputFormat::Md => delta_table_markdown(&rows, cfg.delta_threshold),
                OutputFormat::Csv => delta_table_csv(&rows),
            }
        }
        ReportKind::Settings => {
            let records = load_records(&cfg.results_path)?;
            if records.is_empty() {
                bail!("no records in {}", cfg.results_path.display());
            }
            let report = setting_report(&records);
            match format {
                OutputFormat::Md => setting_report_markdown(&report),
                OutputFormat::Csv => setting_report_csv(&report),
            }
        }
        ReportKind::Ranks => match matrix {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                let (methods, rows) = parse_matrix_csv(&text)?;
                let table = vtbench::stats::avg_rank_table(&methods, &rows)?;
                rank_table_markdown(&table)
            }
            None => {
                let records = load_records(&cfg.results_path)?;
                if records.is_empty() {
                    bail!("no records in {}", cfg.results_path.display());
                }
                rank_table_markdown(&rank_report(&records)?)
            }
        },
        ReportKind::Stats => {
            let path = matrix.context("report --kind stats needs --matrix <csv>")?;
            let text = std::fs::read_to_string(path)?;
            let (methods, rows) = parse_matrix_csv(&text)?;
            stats_report(&methods, &rows)?
        }
    };
    match out {
        Some(path) => std::fs::write(path, &text)?,
        None => print!("{text}"),
    }
    Ok(0)
}

fn cmd_selfcheck() -> anyhow::Result<i32> {
    let checks = vtbench::selfcheck::run_all();
    let mut failures = 0;
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        if c.detail.is_empty() {
            println!("[{tag}] {}", c.name);
        } else {
            println!("[{tag}] {} — {}", c.name, c.detail);
        }
        if !c.passed {
            failures += 1;
        }
    }
    println!("{} checks, {} failed", checks.len(), failures);
    Ok(if failures == 0 { 0 } else { 1 })
}
