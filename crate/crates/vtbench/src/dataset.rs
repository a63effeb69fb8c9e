//! UCR archive loading, label normalization and the train/validation/test
//! split protocol.
//!
//! Archive layout: `<root>/<Name>/<Name>_TRAIN.tsv` and `<Name>_TEST.tsv`,
//! each row `label<TAB>v1...vT` (tab- or whitespace-separated). Raw labels
//! are remapped to contiguous `0..C-1` in ascending raw order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One univariate series with its contiguous class label.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesInstance {
    pub values: Vec<f32>,
    pub label: usize,
}

/// Which archive split a set came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

/// Dataset-level facts shared by every instance of a set.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub name: String,
    /// Series length, identical across instances.
    pub t_len: usize,
    pub n_classes: usize,
    /// Ascending raw label -> contiguous label, in mapped order.
    pub raw_label_map: Vec<(f64, usize)>,
    /// Instances per class in this particular set.
    pub class_counts: Vec<usize>,
}

/// A loaded split: instances plus metadata.
#[derive(Debug, Clone)]
pub struct LabeledSeriesSet {
    pub instances: Vec<TimeSeriesInstance>,
    pub meta: DatasetMeta,
}

impl LabeledSeriesSet {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

/// Maps raw numeric labels to contiguous integers, ascending raw order.
/// Errors when fewer than 2 distinct labels are present.
pub fn remap_labels(raw: &[f64]) -> Result<(Vec<usize>, Vec<(f64, usize)>)> {
    let mut distinct: Vec<f64> = Vec::new();
    for &r in raw {
        if !distinct.iter().any(|&d| d == r) {
            distinct.push(r);
        }
    }
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if distinct.len() < 2 {
        return Err(Error::SingleClass(format!(
            "{} distinct label(s)",
            distinct.len()
        )));
    }
    let map: Vec<(f64, usize)> = distinct.iter().copied().zip(0..).collect();
    let mapped = raw
        .iter()
        .map(|r| map.iter().find(|(d, _)| d == r).unwrap().1)
        .collect();
    Ok((mapped, map))
}

/// Loads one archive split. The label map is always derived from the TRAIN
/// file so that train and test agree; unseen test labels are an error.
pub fn load_ucr_split(root: &Path, name: &str, split: Split) -> Result<LabeledSeriesSet> {
    let train_rows = read_rows(root, name, Split::Train)?;
    let raw_train: Vec<f64> = train_rows.iter().map(|(l, _)| *l).collect();
    let (_, map) = remap_labels(&raw_train).map_err(|_| Error::SingleClass(name.to_string()))?;

    let rows = match split {
        Split::Train => train_rows,
        Split::Test => read_rows(root, name, Split::Test)?,
    };
    let t_len = rows[0].1.len();
    let n_classes = map.len();
    let mut class_counts = vec![0usize; n_classes];
    let mut instances = Vec::with_capacity(rows.len());
    for (raw_label, values) in rows {
        let label = map
            .iter()
            .find(|(d, _)| *d == raw_label)
            .map(|(_, m)| *m)
            .ok_or_else(|| Error::Config(format!("{name}: label {raw_label} absent from TRAIN")))?;
        class_counts[label] += 1;
        instances.push(TimeSeriesInstance { values, label });
    }
    Ok(LabeledSeriesSet {
        instances,
        meta: DatasetMeta {
            name: name.to_string(),
            t_len,
            n_classes,
            raw_label_map: map,
            class_counts,
        },
    })
}

fn read_rows(root: &Path, name: &str, split: Split) -> Result<Vec<(f64, Vec<f32>)>> {
    let suffix = match split {
        Split::Train => "TRAIN",
        Split::Test => "TEST",
    };
    let path = root.join(name).join(format!("{name}_{suffix}.tsv"));
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = std::fs::read_to_string(&path)?;
    let mut rows: Vec<(f64, Vec<f32>)> = Vec::new();
    let mut expected_t: Option<usize> = None;
    for (row_idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label_tok = tokens.next().unwrap();
        let label: f64 = parse_token(label_tok, &path, row_idx)?;
        let mut values = Vec::with_capacity(expected_t.unwrap_or(0));
        for tok in tokens {
            let v: f64 = parse_token(tok, &path, row_idx)?;
            values.push(v as f32);
        }
        match expected_t {
            None => {
                if values.is_empty() {
                    return Err(Error::RaggedRow {
                        path: path.clone(),
                        row: row_idx,
                        expected: 1,
                        got: 0,
                    });
                }
                expected_t = Some(values.len());
            }
            Some(t) if values.len() != t => {
                return Err(Error::RaggedRow {
                    path: path.clone(),
                    row: row_idx,
                    expected: t,
                    got: values.len(),
                });
            }
            _ => {}
        }
        rows.push((label, values));
    }
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: empty file", path.display())));
    }
    Ok(rows)
}

fn parse_token(tok: &str, path: &Path, row: usize) -> Result<f64> {
    let v: f64 = tok.parse().map_err(|_| Error::BadToken {
        path: path.to_path_buf(),
        row,
        token: tok.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::BadToken {
            path: path.to_path_buf(),
            row,
            token: tok.to_string(),
        });
    }
    Ok(v)
}

/// Index form of [`stratified_holdout`]: returns ascending original indices
/// of the held and rest partitions.
pub fn stratified_holdout_indices(
    set: &LabeledSeriesSet,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::BadFraction(fraction));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, inst) in set.instances.iter().enumerate() {
        by_class.entry(inst.label).or_default().push(i);
    }
    let mut held_idx: Vec<usize> = Vec::new();
    for (_, mut idxs) in by_class {
        idxs.shuffle(&mut rng);
        let take = (fraction * idxs.len() as f64 + 0.5).floor() as usize;
        held_idx.extend(idxs.into_iter().take(take));
    }
    held_idx.sort_unstable();
    let mut rest_idx = Vec::with_capacity(set.len() - held_idx.len());
    let mut cursor = held_idx.iter().peekable();
    for i in 0..set.len() {
        if cursor.peek() == Some(&&i) {
            cursor.next();
        } else {
            rest_idx.push(i);
        }
    }
    Ok((held_idx, rest_idx))
}

/// Stratified split: per class, `round(fraction * n_c)` instances (half up)
/// go to `held`, chosen by a seeded shuffle; the rest stay in `rest`. The
/// same seed always reproduces the same partition.
pub fn stratified_holdout(
    set: &LabeledSeriesSet,
    fraction: f64,
    seed: u64,
) -> Result<(LabeledSeriesSet, LabeledSeriesSet)> {
    let (held_idx, rest_idx) = stratified_holdout_indices(set, fraction, seed)?;
    let rebuild = |idxs: &[usize]| {
        let instances: Vec<TimeSeriesInstance> =
            idxs.iter().map(|&i| set.instances[i].clone()).collect();
        let mut counts = vec![0usize; set.meta.n_classes];
        for inst in &instances {
            counts[inst.label] += 1;
        }
        LabeledSeriesSet {
            instances,
            meta: DatasetMeta {
                class_counts: counts,
                ..set.meta.clone()
            },
        }
    };
    Ok((rebuild(&held_idx), rebuild(&rest_idx)))
}
