//! Report tables derived from the results log: the delta-grouping table,
//! per-setting accuracy matrices with aggregates, rank tables, and pairwise
//! significance analyses. Reports are pure functions of the records.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::chart::{ChartType, ColorMode, LabelMode};
use crate::error::{Error, Result};
use crate::metrics::Metrics;
use crate::stats::{avg_rank_table, cliffs_delta, mean_ci95, wilcoxon_signed_rank, PairedSamples, RankTable};

use super::{Architecture, RunConfig, RunRecord, RunStatus};

/// Human-readable cell descriptor used as a method name in rank tables.
pub fn cell_descriptor(cfg: &RunConfig) -> String {
    let charts = cfg
        .chart_types
        .iter()
        .map(|c| c.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let arch = match cfg.architecture {
        Architecture::SingleChart => "single",
        Architecture::MultiChart => "multi",
        Architecture::Multimodal => "multimodal",
    };
    let num = cfg
        .numeric_encoder
        .map(|n| format!("+{n:?}").to_lowercase())
        .unwrap_or_default();
    format!(
        "{arch}:{charts}/{}/{}@{}{num}",
        cfg.color_mode.as_str(),
        cfg.label_mode.as_str(),
        cfg.resolution
    )
}

/// Successful records grouped per cell (config with the seed stripped),
/// keyed by the cell's zero-seed run id for determinism.
pub fn group_by_cell(records: &[RunRecord]) -> BTreeMap<String, (RunConfig, Vec<Metrics>)> {
    let mut map: BTreeMap<String, (RunConfig, Vec<Metrics>)> = BTreeMap::new();
    for r in records {
        if r.status != RunStatus::Ok {
            continue;
        }
        let Some(m) = r.metrics else { continue };
        map.entry(r.config.run_id(0))
            .or_insert_with(|| (r.config.clone(), Vec::new()))
            .1
            .push(m);
    }
    map
}

fn mean_acc(ms: &[Metrics]) -> f64 {
    ms.iter().map(|m| m.accuracy).sum::<f64>() / ms.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DeltaGroup {
    Improving,
    AlmostSame,
    Degrading,
}

#[derive(Debug, Clone, Serialize)]
pub struct DeltaRow {
    pub dataset: String,
    pub best_single_acc: Option<f64>,
    pub best_single_desc: Option<String>,
    pub multimodal_acc: Option<f64>,
    pub delta: Option<f64>,
    /// None when either side is missing (row flagged incomplete).
    pub group: Option<DeltaGroup>,
}

/// Table of best single-chart accuracy vs the full multimodal accuracy per
/// dataset, grouped by the delta threshold `theta`: Improving when
/// `delta > theta`, Degrading when `delta < -theta`, Almost Same otherwise.
/// When several multimodal cells exist the deterministically first one (by
/// cell id) is used.
pub fn delta_table(records: &[RunRecord], theta: f64, resolution: Option<u32>) -> Vec<DeltaRow> {
    let cells = group_by_cell(records);
    let mut datasets: Vec<String> = cells
        .values()
        .map(|(c, _)| c.dataset.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    datasets.sort();

    datasets
        .into_iter()
        .map(|ds| {
            let mut best_single: Option<(f64, String)> = None;
            let mut multimodal: Option<f64> = None;
            for (cfg, ms) in cells.values() {
                if cfg.dataset != ds {
                    continue;
                }
                if let Some(res) = resolution {
                    if cfg.resolution != res {
                        continue;
                    }
                }
                let acc = mean_acc(ms);
                match cfg.architecture {
                    Architecture::SingleChart => {
                        if best_single.as_ref().map_or(true, |(b, _)| acc > *b) {
                            best_single = Some((acc, cell_descriptor(cfg)));
                        }
                    }
                    Architecture::Multimodal => {
                        if multimodal.is_none() {
                            multimodal = Some(acc);
                        }
                    }
                    Architecture::MultiChart => {}
                }
            }
            let delta = match (&best_single, multimodal) {
                (Some((b, _)), Some(m)) => Some(m - b),
                _ => None,
            };
            let group = delta.map(|d| {
                if d > theta {
                    DeltaGroup::Improving
                } else if d < -theta {
                    DeltaGroup::Degrading
                } else {
                    DeltaGroup::AlmostSame
                }
            });
            DeltaRow {
                dataset: ds,
                best_single_acc: best_single.as_ref().map(|(a, _)| *a),
                best_single_desc: best_single.map(|(_, d)| d),
                multimodal_acc: multimodal,
                delta,
                group,
            }
        })
        .collect()
}

pub fn delta_table_markdown(rows: &[DeltaRow], theta: f64) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "| Dataset | Best Single | Setting | Multimodal | Delta | Group (theta={theta}) |\n"
    ));
    out.push_str("|---|---|---|---|---|---|\n");
    for r in rows {
        out.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} |\n",
            r.dataset,
            fmt_opt(r.best_single_acc),
            r.best_single_desc.as_deref().unwrap_or("-"),
            fmt_opt(r.multimodal_acc),
            r.delta.map(|d| format!("{d:+.3}")).unwrap_or_else(|| "-".into()),
            r.group
                .map(|g| format!("{g:?}"))
                .unwrap_or_else(|| "incomplete".into()),
        ));
    }
    out
}

pub fn delta_table_csv(rows: &[DeltaRow]) -> String {
    let mut out = String::from("dataset,best_single_acc,best_single_setting,multimodal_acc,delta,group\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.dataset,
            fmt_opt(r.best_single_acc),
            r.best_single_desc.as_deref().unwrap_or(""),
            fmt_opt(r.multimodal_acc),
            r.delta.map(|d| format!("{d:.6}")).unwrap_or_default(),
            r.group
                .map(|g| format!("{g:?}"))
                .unwrap_or_else(|| "incomplete".into()),
        ));
    }
    out
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

/// Column order of the four rendering settings.
pub const SETTING_COLUMNS: [(ColorMode, LabelMode); 4] = [
    (ColorMode::Mono, LabelMode::WithLabel),
    (ColorMode::Mono, LabelMode::NoLabel),
    (ColorMode::Color, LabelMode::WithLabel),
    (ColorMode::Color, LabelMode::NoLabel),
];

pub const SETTING_NAMES: [&str; 4] = ["mono_label", "mono_nolabel", "color_label", "color_nolabel"];

#[derive(Debug, Clone, Serialize)]
pub struct SettingMatrix {
    pub chart_type: ChartType,
    pub resolution: u32,
    /// (dataset, per-setting mean accuracy).
    pub rows: Vec<(String, [Option<f64>; 4])>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateCell {
    pub mean: f64,
    /// t-based 95% CI half-width; None with fewer than two datasets.
    pub ci95: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateRow {
    /// "binary" or "multiclass".
    pub task_group: String,
    pub chart_type: ChartType,
    pub cells: [Option<AggregateCell>; 4],
}

#[derive(Debug, Clone, Serialize)]
pub struct SettingReport {
    pub matrices: Vec<SettingMatrix>,
    pub aggregate: Vec<AggregateRow>,
}

/// Per-chart-type accuracy matrices over the four rendering settings, plus
/// the aggregate mean +- 95% CI by task type.
pub fn setting_report(records: &[RunRecord]) -> SettingReport {
    let cells = group_by_cell(records);
    // single-chart cells only
    let mut resolutions: Vec<u32> = Vec::new();
    let mut datasets: Vec<String> = Vec::new();
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    for r in records {
        classes.insert(r.config.dataset.clone(), r.dataset.n_classes);
    }
    for (cfg, _) in cells.values() {
        if cfg.architecture == Architecture::SingleChart {
            if !resolutions.contains(&cfg.resolution) {
                resolutions.push(cfg.resolution);
            }
            if !datasets.contains(&cfg.dataset) {
                datasets.push(cfg.dataset.clone());
            }
        }
    }
    resolutions.sort_unstable();
    datasets.sort();

    let lookup = |ds: &str, ct: ChartType, cm: ColorMode, lm: LabelMode, res: u32| -> Option<f64> {
        cells.values().find_map(|(cfg, ms)| {
            (cfg.architecture == Architecture::SingleChart
                && cfg.dataset == ds
                && cfg.chart_types == [ct]
                && cfg.color_mode == cm
                && cfg.label_mode == lm
                && cfg.resolution == res)
                .then(|| mean_acc(ms))
        })
    };

    let mut matrices = Vec::new();
    for &res in &resolutions {
        for ct in ChartType::ALL {
            let rows: Vec<(String, [Option<f64>; 4])> = datasets
                .iter()
                .map(|ds| {
                    let mut cols = [None; 4];
                    for (i, (cm, lm)) in SETTING_COLUMNS.iter().enumerate() {
                        cols[i] = lookup(ds, ct, *cm, *lm, res);
                    }
                    (ds.clone(), cols)
                })
                .filter(|(_, cols)| cols.iter().any(|c| c.is_some()))
                .collect();
            if !rows.is_empty() {
                matrices.push(SettingMatrix {
                    chart_type: ct,
                    resolution: res,
                    rows,
                });
            }
        }
    }

    let mut aggregate = Vec::new();
    for group in ["binary", "multiclass"] {
        for ct in ChartType::ALL {
            let mut cells_out: [Option<AggregateCell>; 4] = [None, None, None, None];
            for (i, _) in SETTING_COLUMNS.iter().enumerate() {
                let vals: Vec<f64> = matrices
                    .iter()
                    .filter(|m| m.chart_type == ct)
                    .flat_map(|m| m.rows.iter())
                    .filter(|(ds, _)|

                        matches!(
                            (group, classes.get(ds).copied().unwrap_or(2) == 2),
                            ("binary", true) | ("multiclass", false)
                        )
                    )
                    .filter_map(|(_, cols)| cols[i])
                    .collect();
                cells_out[i] = match vals.len() {
                    0 => None,
                    1 => Some(AggregateCell {
                        mean: vals[0],
                        ci95: None,
                    }),
                    _ => {
                        let (mean, hw) = mean_ci95(&vals).expect("n >= 2");
                        Some(AggregateCell {
                            mean,
                            ci95: Some(hw),
                        })
                    }
                };
            }
            if cells_out.iter().any(|c| c.is_some()) {
                aggregate.push(AggregateRow {
                    task_group: group.to_string(),
                    chart_type: ct,
                    cells: cells_out,
                });
            }
        }
    }

    SettingReport {
        matrices,
        aggregate,
    }
}

pub fn setting_report_markdown(report: &SettingReport) -> String {
    let mut out = String::new();
    for m in &report.matrices {
        out.push_str(&format!(
            "\n## {} charts at {}x{}\n\n| Dataset | {} |\n|---|{}\n",
            m.chart_type.as_str(),
            m.resolution,
            m.resolution,
            SETTING_NAMES.join(" | "),
            "---|".repeat(4)
        ));
        for (ds, cols) in &m.rows {
            out.push_str(&format!(
                "| {ds} | {} |\n",
                cols.iter()
                    .map(|c| fmt_opt(*c))
                    .collect::<Vec<_>>()
                    .join(" | ")
            ));
        }
    }
    if !report.aggregate.is_empty() {
        out.push_str("\n## Aggregate accuracy (mean +- 95% CI across datasets)\n\n");
        out.push_str(&format!(
            "| Group | Chart | {} |\n|---|---|{}\n",
            SETTING_NAMES.join(" | "),
            "---|".repeat(4)
        ));
        for row in &report.aggregate {
            let cells: Vec<String> = row
                .cells
                .iter()
                .map(|c| match c {
                    None => "-".to_string(),
                    Some(a) => match a.ci95 {
                        Some(hw) => format!("{:.3} +- {:.3}", a.mean, hw),
                        None => format!("{:.3}", a.mean),
                    },
                })
                .collect();
            out.push_str(&format!(
                "| {} | {} | {} |\n",
                row.task_group,
                row.chart_type.as_str(),
                cells.join(" | ")
            ));
        }
    }
    out
}

pub fn setting_report_csv(report: &SettingReport) -> String {
    let mut out = String::from("chart_type,resolution,dataset,");
    out.push_str(&SETTING_NAMES.join(","));
    out.push('\n');
    for m in &report.matrices {
        for (ds, cols) in &m.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                m.chart_type.as_str(),
                m.resolution,
                ds,
                cols.iter()
                    .map(|c| c.map(|v| format!("{v:.6}")).unwrap_or_default())
                    .collect::<Vec<_>>()
                    .join(",")
            ));
        }
    }
    out
}

/// Builds a dataset x method accuracy matrix from the results and ranks it.
pub fn rank_report(records: &[RunRecord]) -> Result<RankTable> {
    let cells = group_by_cell(records);
    let mut methods: Vec<String> = cells
        .values()
        .map(|(cfg, _)| cell_descriptor(cfg))
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    methods.sort();
    let mut datasets: Vec<String> = cells
        .values()
        .map(|(cfg, _)| cfg.dataset.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    datasets.sort();
    let rows: Vec<(String, Vec<Option<f64>>)> = datasets
        .into_iter()
        .map(|ds| {
            let cells_for_ds: Vec<Option<f64>> = methods
                .iter()
                .map(|m| {
                    cells
                        .values()
                        .find(|(cfg, _)| cfg.dataset == ds && &cell_descriptor(cfg) == m)
                        .map(|(_, ms)| mean_acc(ms))
                })
                .collect();
            (ds, cells_for_ds)
        })
        .collect();
    avg_rank_table(&methods, &rows)
}

pub fn rank_table_markdown(table: &RankTable) -> String {
    let mut out = String::from("| Method | Avg rank | Wins |\n|---|---|---|\n");
    let mut sorted = table.ranks.clone();
    sorted.sort_by(|a, b| a.avg_rank.partial_cmp(&b.avg_rank).unwrap());
    for r in &sorted {
        out.push_str(&format!("| {} | {:.2} | {} |\n", r.method, r.avg_rank, r.wins));
    }
    if !table.excluded.is_empty() {
        out.push_str(&format!(
            "\nExcluded datasets (missing cells): {}\n",
            table.excluded.join(", ")
        ));
    }
    out
}

/// Parses a `dataset,method1,method2,...` CSV matrix with optional empty
/// cells.
pub fn parse_matrix_csv(text: &str) -> Result<(Vec<String>, Vec<(String, Vec<Option<f64>>)>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Stats("empty CSV matrix".into()))?;
    let mut cols = header.split(',').map(|s| s.trim().to_string());
    cols.next(); // row-label column
    let methods: Vec<String> = cols.collect();
    if methods.is_empty() {
        return Err(Error::Stats("CSV matrix has no method columns".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let mut parts = line.split(',').map(str::trim);
        let label = parts
            .next()
            .ok_or_else(|| Error::Stats(format!("row {i}: missing label")))?
            .to_string();
        let cells: Vec<Option<f64>> = parts
            .map(|p| {
                if p.is_empty() {
                    Ok(None)
                } else {
                    p.parse::<f64>()
                        .map(Some)
                        .map_err(|_| Error::Stats(format!("row {label}: bad number {p:?}")))
                }
            })
            .collect::<Result<_>>()?;
        if cells.len() != methods.len() {
            return Err(Error::Stats(format!(
                "row {label}: {} cells for {} methods",
                cells.len(),
                methods.len()
            )));
        }
        rows.push((label, cells));
    }
    Ok((methods, rows))
}

/// Pairwise Wilcoxon + Cliff's delta between method columns plus per-method
/// mean +- CI: the three analyses for a user-supplied accuracy matrix.
pub fn stats_report(methods: &[String], rows: &[(String, Vec<Option<f64>>)]) -> Result<String> {
    let mut out = String::new();
    out.push_str("## Per-method mean +- 95% CI\n\n| Method | Mean | CI95 half-width | n |\n|---|---|---|---|\n");
    for (k, m) in methods.iter().enumerate() {
        let vals: Vec<f64> = rows.iter().filter_map(|(_, cells)| cells[k]).collect();
        if vals.len() >= 2 {
            let (mean, hw) = mean_ci95(&vals)?;
            out.push_str(&format!("| {m} | {mean:.4} | {hw:.4} | {} |\n", vals.len()));
        } else {
            out.push_str(&format!("| {m} | - | - | {} |\n", vals.len()));
        }
    }

    out.push_str("\n## Pairwise comparisons (paired over datasets)\n\n");
    out.push_str("| A | B | n | Wilcoxon p | Significant (0.05) | Cliff's delta | Magnitude |\n|---|---|---|---|---|---|---|\n");
    for i in 0..methods.len() {
        for j in (i + 1)..methods.len() {
            let paired: Vec<(f64, f64)> = rows
                .iter()
                .filter_map(|(_, cells)| match (cells[i], cells[j]) {
                    (Some(a), Some(b)) => Some((a, b)),
                    _ => None,
                })
                .collect();
            if paired.is_empty() {
                continue;
            }
            let (xs, ys): (Vec<f64>, Vec<f64>) = paired.into_iter().unzip();
            let w = wilcoxon_signed_rank(&PairedSamples::new(xs.clone(), ys.clone())?)?;
            let d = cliffs_delta(&xs, &ys)?;
            out.push_str(&format!(
                "| {} | {} | {} | {:.4} | {} | {:+.4} | {} |\n",
                methods[i],
                methods[j],
                xs.len(),
                w.p_value,
                if w.p_value < 0.05 { "yes" } else { "no" },
                d.delta,
                d.magnitude.as_str()
            ));
        }
    }

    let (methods_owned, rows_owned) = (methods.to_vec(), rows.to_vec());
    let table = avg_rank_table(&methods_owned, &rows_owned)?;
    out.push_str("\n## Average ranks\n\n");
    out.push_str(&rank_table_markdown(&table));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::{DatasetFacts, SplitProtocol};

    fn record(dataset: &str, arch: Architecture, ct: ChartType, acc: f64, seed: u64) -> RunRecord {
        let cfg = RunConfig {
            dataset: dataset.into(),
            architecture: arch,
            chart_types: if arch == Architecture::SingleChart {
                vec![ct]
            } else {
                super::super::ALL_CHARTS.to_vec()
            },
            color_mode: ColorMode::Mono,
            label_mode: LabelMode::NoLabel,
            resolution: 128,
            backbone: crate::encoders::CnnBackbone::Deep,
            fusion: crate::fusion::FusionStrategy::Concat,
            numeric_encoder: (arch == Architecture::Multimodal)
                .then_some(crate::encoders::NumericEncoderKind::Fcn),
            repeats: 1,
            base_seed: 0,
            val_fraction: 0.2,
            split_seed: SplitProtocol::default().split_seed,
        };
        RunRecord {
            run_id: cfg.run_id(seed),
            status: RunStatus::Ok,
            config: cfg,
            seed,
            dataset: DatasetFacts {
                t_len: 24,
                n_classes: if dataset == "Multi" { 3 } else { 2 },
            },
            history: vec![],
            metrics: Some(Metrics {
                accuracy: acc,
                macro_f1: acc,
                auc: acc,
            }),
            wall_secs: 0.1,
            alpha: None,
            error: None,
        }
    }

    #[test]
    fn delta_grouping_matches_threshold() {
        let records = vec![
            record("Beef", Architecture::SingleChart, ChartType::Bar, 0.588, 0),
            record("Beef", Architecture::Multimodal, ChartType::Line, 0.867, 0),
            record("Same", Architecture::SingleChart, ChartType::Line, 0.70, 0),
            record("Same", Architecture::Multimodal, ChartType::Line, 0.70, 0),
            record("Worse", Architecture::SingleChart, ChartType::Line, 0.80, 0),
            record("Worse", Architecture::Multimodal, ChartType::Line, 0.70, 0),
            record("NoMulti", Architecture::SingleChart, ChartType::Line, 0.9, 0),
        ];
        let rows = delta_table(&records, 0.03, None);
        let by_name: BTreeMap<&str, &DeltaRow> =
            rows.iter().map(|r| (r.dataset.as_str(), r)).collect();
        let beef = by_name["Beef"];
        assert!((beef.delta.unwrap() - 0.279).abs() < 1e-9);
        assert_eq!(beef.group, Some(DeltaGroup::Improving));
        assert_eq!(by_name["Same"].group, Some(DeltaGroup::AlmostSame));
        assert_eq!(by_name["Same"].delta, Some(0.0));
        assert_eq!(by_name["Worse"].group, Some(DeltaGroup::Degrading));
        assert_eq!(by_name["NoMulti"].group, None);
        assert!(by_name["NoMulti"].multimodal_acc.is_none());
    }

    #[test]
    fn best_single_takes_the_max_over_settings() {
        let mut r1 = record("D", Architecture::SingleChart, ChartType::Line, 0.6, 0);
        let r2 = record("D", Architecture::SingleChart, ChartType::Bar, 0.8, 0);
        // a second seed of the same line cell: mean = 0.7
        let mut r3 = record("D", Architecture::SingleChart, ChartType::Line, 0.8, 1);
        r3.run_id = r1.config.run_id(1);
        r1.seed = 0;
        let rows = delta_table(&[r1, r2, r3], 0.03, Some(128));
        assert_eq!(rows[0].best_single_acc, Some(0.8));
        assert!(rows[0].best_single_desc.as_deref().unwrap().contains("bar"));
    }

    #[test]
    fn setting_matrix_single_cell_and_aggregate() {
        let records = vec![
            record("A", Architecture::SingleChart, ChartType::Line, 0.9, 0),
            record("B", Architecture::SingleChart, ChartType::Line, 0.9, 0),
        ];
        let rep = setting_report(&records);
        assert_eq!(rep.matrices.len(), 1);
        let m = &rep.matrices[0];
        assert_eq!(m.chart_type, ChartType::Line);
        assert_eq!(m.rows.len(), 2);
        assert_eq!(m.rows[0].1[1], Some(0.9)); // mono/no_label column

        // identical accuracies across 2 binary datasets: CI half-width 0
        let agg = rep
            .aggregate
            .iter()
            .find(|r| r.task_group == "binary" && r.chart_type == ChartType::Line)
            .unwrap();
        let cell = agg.cells[1].as_ref().unwrap();
        assert_eq!(cell.mean, 0.9);
        assert_eq!(cell.ci95, Some(0.0));
    }

    #[test]
    fn csv_matrix_round_trip_and_stats_report() {
        let csv = "dataset,m1,m2\nd1,0.9,0.8\nd2,0.7,0.75\nd3,0.6,\n";
        let (methods, rows) = parse_matrix_csv(csv).unwrap();
        assert_eq!(methods, vec!["m1", "m2"]);
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].1[1], None);
        let report = stats_report(&methods, &rows).unwrap();
        assert!(report.contains("Wilcoxon"));
        assert!(report.contains("m1"));

        assert!(parse_matrix_csv("").is_err());
        assert!(parse_matrix_csv("dataset\n").is_err());
        assert!(parse_matrix_csv("dataset,m1\nd1,abc\n").is_err());
    }

    #[test]
    fn rank_report_from_records() {
        let records = vec![
            record("A", Architecture::SingleChart, ChartType::Line, 0.9, 0),
            record("A", Architecture::SingleChart, ChartType::Bar, 0.5, 0),
            record("B", Architecture::SingleChart, ChartType::Line, 0.8, 0),
            record("B", Architecture::SingleChart, ChartType::Bar, 0.6, 0),
        ];
        let table = rank_report(&records).unwrap();
        let line = table
            .ranks
            .iter()
            .find(|r| r.method.contains("line"))
            .unwrap();
        assert_eq!(line.avg_rank, 1.0);
        assert_eq!(line.wins, 2);
    }
}
