//! The training protocol: seeded minibatch shuffling, early stopping on
//! validation accuracy, plateau learning-rate halving, best-checkpoint
//! restoration, and split evaluation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{compute_metrics, Metrics};
use crate::model::{Batch, VtbModel};
use crate::nn::ops;
use crate::nn::Mode;
use crate::tensor::Tensor;

pub const EVAL_BATCH: usize = 64;

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f32,
    pub weight_decay: f32,
    /// Epochs without a new best validation accuracy before stopping.
    pub patience: usize,
    /// Epochs without validation-loss improvement before halving the lr.
    pub scheduler_patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub min_lr: f32,
    /// Decoupled weight decay instead of coupled L2.
    pub decoupled_decay: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-2,
            patience: 10,
            scheduler_patience: 3,
            max_epochs: 200,
            batch_size: 32,
            min_lr: 1e-5,
            decoupled_decay: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStat {
    pub train_loss: f32,
    pub val_loss: f32,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f32,
}

/// What the trainer drives. Implemented by [`VtbModel`] and by test stubs.
pub trait Classifier {
    fn n_classes(&self) -> usize;
    fn set_lr(&mut self, lr: f32);
    /// Forward, backward and one optimizer step; returns the batch loss.
    fn train_batch(&mut self, batch: &Batch) -> Result<f32>;
    /// Eval-mode logits; must not mutate parameters.
    fn eval_logits(&mut self, batch: &Batch) -> Result<Tensor>;
    fn snapshot(&self) -> Vec<Tensor>;
    fn restore(&mut self, snap: &[Tensor]);
    /// Batch-mean fusion weights, when the model logs them.
    fn fusion_alpha(&self) -> Option<Vec<f32>> {
        None
    }
}

impl Classifier for VtbModel {
    fn n_classes(&self) -> usize {
        self.n_classes()
    }

    fn set_lr(&mut self, lr: f32) {
        self.hp.lr = lr;
    }

    fn train_batch(&mut self, batch: &Batch) -> Result<f32> {
        self.store.zero_grads();
        let logits = self.forward(batch, Mode::Train)?;
        let (loss, grad) = ops::cross_entropy(&logits, &batch.labels)?;
        self.backward(&grad)?;
        let hp = self.hp;
        self.store.adam_step(&hp);
        Ok(loss)
    }

    fn eval_logits(&mut self, batch: &Batch) -> Result<Tensor> {
        self.forward(batch, Mode::Eval)
    }

    fn snapshot(&self) -> Vec<Tensor> {
        self.store.snapshot()
    }

    fn restore(&mut self, snap: &[Tensor]) {
        self.store.restore(snap);
    }

    fn fusion_alpha(&self) -> Option<Vec<f32>> {
        self.last_alpha()
    }
}

/// In-memory split ready for batching: cached chart bytes per branch plus
/// the raw series and labels.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    /// `branches[k][i]` = RGB bytes of instance `i` under chart branch `k`.
    pub branches: Vec<Vec<Vec<u8>>>,
    pub series: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub resolution: usize,
    pub t_len: usize,
}

impl PreparedSplit {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Gathers instances into a batch. Pixels scale to `[0,1]` channel-first;
    /// no mean/std normalization (charts are near-binary ink).
    pub fn make_batch(&self, idxs: &[usize], include_series: bool) -> Batch {
        let n = idxs.len();
        let r = self.resolution;
        let plane = r * r;
        let images = self
            .branches
            .iter()
            .map(|branch| {
                let mut t = Tensor::zeros(&[n, 3, r, r]);
                let td = t.data_mut();
                for (bi, &idx) in idxs.iter().enumerate() {
                    let bytes = &branch[idx];
                    let base = bi * 3 * plane;
                    for p in 0..plane {
                        for c in 0..3 {
                            td[base + c * plane + p] = bytes[p * 3 + c] as f32 / 255.0;
                        }
                    }
                }
                t
            })
            .collect();
        let series = include_series.then(|| {
            let mut t = Tensor::zeros(&[n, self.t_len]);
            for (bi, &idx) in idxs.iter().enumerate() {
                t.data_mut()[bi * self.t_len..(bi + 1) * self.t_len]
                    .copy_from_slice(&self.series[idx]);
            }
            t
        });
        Batch {
            images,
            series,
            labels: idxs.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Runs the training loop; returns the per-epoch history. The model is left
/// at its best-validation-accuracy checkpoint.
pub fn train<M: Classifier>(
    model: &mut M,
    train_data: &PreparedSplit,
    val_data: &PreparedSplit,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochStat>> {
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Config("train and validation splits must be non-empty".into()));
    }
    let include_series = !train_data.series.is_empty() && train_data.t_len > 0;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_0F_BA7C4);
    let mut lr = cfg.lr;
    model.set_lr(lr);

    let mut history = Vec::new();
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_snap = model.snapshot();
    let mut best_val_loss = f32::INFINITY;
    let mut plateau = 0usize;
    let mut indices: Vec<usize> = (0..train_data.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        indices.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let batch = train_data.make_batch(chunk, include_series);
            let loss = model.train_batch(&batch)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_loss = (loss_sum / seen as f64) as f32;

        let (val_loss, val_metrics) = eval_loss_and_metrics(model, val_data, include_series)?;
        if !val_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(EpochStat {
            train_loss,
            val_loss,
            val_acc: val_metrics.accuracy,
            lr,
        });

        if val_metrics.accuracy > best_acc {
            best_acc = val_metrics.accuracy;
            best_epoch = epoch;
            best_snap = model.snapshot();
        }

        // plateau scheduler: strict improvement, min-delta 0
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            plateau = 0;
        } else {
            plateau += 1;
            if plateau >= cfg.scheduler_patience {
                lr = (lr / 2.0).max(cfg.min_lr);
                model.set_lr(lr);
                plateau = 0;
            }
        }

        if epoch - best_epoch >= cfg.patience {
            break;
        }
    }
    model.restore(&best_snap);
    Ok(history)
}

/// Eval-mode pass over a split: mean cross-entropy and metrics.
pub fn eval_loss_and_metrics<M: Classifier>(
    model: &mut M,
    data: &PreparedSplit,
    include_series: bool,
) -> Result<(f32, Metrics)> {
    let n = data.len();
    let c = model.n_classes();
    let mut probs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut loss_sum = 0.0f64;
    let all: Vec<usize> = (0..n).collect();
    for chunk in all.chunks(EVAL_BATCH) {
        let batch = data.make_batch(chunk, include_series);
        let logits = model.eval_logits(&batch)?;
        let (loss, _) = ops::cross_entropy(&logits, &batch.labels)?;
        loss_sum += loss as f64 * chunk.len() as f64;
        let p = ops::softmax_last(&logits);
        for row in p.data().chunks_exact(c) {
            probs.push(row.iter().map(|&v| v as f64).collect());
        }
    }
    let metrics = compute_metrics(&probs, &data.labels, c);
    Ok(((loss_sum / n as f64) as f32, metrics))
}

/// Evaluates a trained model on a split.
pub fn evaluate<M: Classifier>(model: &mut M, data: &PreparedSplit) -> Result<Metrics> {
    let include_series = !data.series.is_empty() && data.t_len > 0;
    Ok(eval_loss_and_metrics(model, data, include_series)?.1)
}

/// One seed's outcome inside a repeated run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRun {
    pub seed: u64,
    pub history: Vec<EpochStat>,
    pub test_metrics: Metrics,
    pub wall_secs: f64,
    /// Batch-mean fusion weights at final evaluation, when available.
    pub alpha: Option<Vec<f32>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub mean: Metrics,
    pub std: Metrics,
    pub per_seed: Vec<SeedRun>,
}

/// Trains `n_runs` models with seeds `base_seed + i` and aggregates their
/// test metrics.
pub fn run_repeats<M: Classifier>(
    mut build_model: impl FnMut(u64) -> Result<M>,
    train_data: &PreparedSplit,
    val_data: &PreparedSplit,
    test_data: &PreparedSplit,
    cfg: &TrainConfig,
    base_seed: u64,
    n_runs: usize,
) -> Result<RepeatSummary> {
    let mut per_seed = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        let seed = base_seed + i as u64;
        let start = std::time::Instant::now();
        let mut model = build_model(seed)?;
        let history = train(&mut model, train_data, val_data, cfg, seed)?;
        let test_metrics = evaluate(&mut model, test_data)?;
        per_seed.push(SeedRun {
            seed,
            history,
            test_metrics,
            wall_secs: start.elapsed().as_secs_f64(),
            alpha: model.fusion_alpha(),
        });
    }
    Ok(RepeatSummary {
        mean: aggregate(&per_seed, false),
        std: aggregate(&per_seed, true),
        per_seed,
    })
}

fn aggregate(runs: &[SeedRun], want_std: bool) -> Metrics {
    let n = runs.len() as f64;
    let mean = |f: fn(&Metrics) -> f64| runs.iter().map(|r| f(&r.test_metrics)).sum::<f64>() / n;
    let std = |f: fn(&Metrics) -> f64, m: f64| {
        if runs.len() < 2 {
            0.0
        } else {
            (runs
                .iter()
                .map(|r| (f(&r.test_metrics) - m) * (f(&r.test_metrics) - m))
                .sum::<f64>()
                / (n - 1.0))
                .sqrt()
        }
    };
    let (ma, mf, mu) = (
        mean(|m| m.accuracy),
        mean(|m| m.macro_f1),
        mean(|m| m.auc),
    );
    if want_std {
        Metrics {
            accuracy: std(|m| m.accuracy, ma),
            macro_f1: std(|m| m.macro_f1, mf),
            auc: std(|m| m.auc, mu),
        }
    } else {
        Metrics {
            accuracy: ma,
            macro_f1: mf,
            auc: mu,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Stub whose validation behavior is fully scripted.
    struct StubModel {
        /// predicted class per forward call, constant
        lr_log: Vec<f32>,
        losses: Vec<f32>,
        loss_cursor: usize,
        param: f32,
    }

    impl StubModel {
        fn new(losses: Vec<f32>) -> Self {
            StubModel {
                lr_log: vec![],
                losses,
                loss_cursor: 0,
                param: 0.0,
            }
        }
    }

    impl Classifier for StubModel {
        fn n_classes(&self) -> usize {
            2
        }

        fn set_lr(&mut self, lr: f32) {
            self.lr_log.push(lr);
        }

        fn train_batch(&mut self, _batch: &Batch) -> Result<f32> {
            self.param += 1.0;
            Ok(0.5)
        }

        fn eval_logits(&mut self, batch: &Batch) -> Result<Tensor> {
            // constant prediction: class 0, with a scripted confidence that
            // shapes the validation loss sequence
            let idx = self.loss_cursor.min(self.losses.len() - 1);
            self.loss_cursor += 1;
            let margin = self.losses[idx];
            let mut t = Tensor::zeros(&[batch.len(), 2]);
            for row in t.data_mut().chunks_exact_mut(2) {
                row[0] = margin;
            }
            Ok(t)
        }

        fn snapshot(&self) -> Vec<Tensor> {
            vec![Tensor::scalar(self.param)]
        }

        fn restore(&mut self, snap: &[Tensor]) {
            self.param = snap[0].data()[0];
        }
    }

    fn dummy_split(n: usize) -> PreparedSplit {
        PreparedSplit {
            branches: vec![],
            series: (0..n).map(|i| vec![i as f32]).collect(),
            labels: (0..n).map(|i| i % 2).collect(),
            resolution: 0,
            t_len: 1,
        }
    }

    #[test]
    fn frozen_val_accuracy_stops_at_best_plus_patience() {
        // constant predictions: val accuracy is frozen from epoch 1
        let mut model = StubModel::new(vec![1.0]);
        let data = dummy_split(8);
        let cfg = TrainConfig {
            max_epochs: 200,
            ..Default::default()
        };
        let history = train(&mut model, &data, &data, &cfg, 3).unwrap();
        // best at epoch 1, ends exactly at best_epoch + 10
        assert_eq!(history.len(), 11);
    }

    #[test]
    fn frozen_val_loss_halves_lr_after_three_epochs() {
        let mut model = StubModel::new(vec![1.0]);
        let data = dummy_split(4);
        let cfg = TrainConfig::default();
        let history = train(&mut model, &data, &data, &cfg, 3).unwrap();
        // epoch 1 sets the baseline; epochs 2-4 stagnate; epoch 5 runs at 5e-4
        assert_eq!(history[3].lr, 1e-3);
        assert!((history[4].lr - 5e-4).abs() < 1e-9);
        // a second stagnation window halves again
        assert!((history[7].lr - 2.5e-4).abs() < 1e-9);
        // lr never increases
        for w in history.windows(2) {
            assert!(w[1].lr <= w[0].lr);
        }
    }

    #[test]
    fn restores_best_checkpoint() {
        // validation accuracy is constant, so best epoch is 1; the restored
        // parameter must be the snapshot taken after epoch 1
        let mut model = StubModel::new(vec![1.0]);
        let data = dummy_split(4);
        let cfg = TrainConfig::default();
        train(&mut model, &data, &data, &cfg, 3).unwrap();
        assert_eq!(model.param, 1.0);
    }

    #[test]
    fn min_lr_floor_holds() {
        let mut model = StubModel::new(vec![1.0]);
        let data = dummy_split(4);
        let cfg = TrainConfig {
            patience: 100,
            max_epochs: 60,
            ..Default::default()
        };
        let history = train(&mut model, &data, &data, &cfg, 3).unwrap();
        assert!(history.last().unwrap().lr >= 1e-5);
    }

    #[test]
    fn empty_split_rejected() {
        let mut model = StubModel::new(vec![1.0]);
        let data = dummy_split(4);
        let empty = dummy_split(0);
        assert!(train(&mut model, &empty, &data, &TrainConfig::default(), 0).is_err());
    }

    #[test]
    fn repeats_aggregate_deterministic_stub() {
        let data = dummy_split(6);
        let cfg = TrainConfig {
            max_epochs: 3,
            patience: 2,
            ..Default::default()
        };
        let summary = run_repeats(
            |_seed| Ok(StubModel::new(vec![1.0])),
            &data,
            &data,
            &data,
            &cfg,
            100,
            3,
        )
        .unwrap();
        assert_eq!(summary.per_seed.len(), 3);
        assert_eq!(
            summary.per_seed.iter().map(|r| r.seed).collect::<Vec<_>>(),
            vec![100, 101, 102]
        );
        // deterministic stub: zero std
        assert_eq!(summary.std.accuracy, 0.0);
        assert_eq!(summary.mean.accuracy, summary.per_seed[0].test_metrics.accuracy);

        let single = run_repeats(
            |_seed| Ok(StubModel::new(vec![1.0])),
            &data,
            &data,
            &data,
            &cfg,
            7,
            1,
        )
        .unwrap();
        assert_eq!(single.std.accuracy, 0.0);
        assert_eq!(single.mean.accuracy, single.per_seed[0].test_metrics.accuracy);
    }
}
