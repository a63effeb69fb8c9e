//! The assembled classifier: chart branches, optional numeric branch,
//! fusion, and the classification head, driven by one parameter store.

use rand_chacha::ChaCha8Rng;

use crate::encoders::{
    CnnBackbone, DeepCnn, FcnNum, NumericEncoderKind, OsCnnNum, ShallowCnn, TransformerNum,
    DEFAULT_NUMERIC_DIM,
};
use crate::error::{Error, Result};
use crate::fusion::{
    ClassifierHead, ConcatFusion, FusionStrategy, WeightedFusion, DEFAULT_COMMON_DIM, HEAD_HIDDEN,
};
use crate::nn::{derive_rng, AdamParams, Mode, ParamStore};
use crate::tensor::Tensor;

/// One minibatch: one image tensor `[N,3,R,R]` per chart branch (in branch
/// order), the raw series `[N,T]` when a numeric branch exists, and labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub images: Vec<Tensor>,
    pub series: Option<Tensor>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Architecture description for [`VtbModel::build`].
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub backbone: CnnBackbone,
    /// Number of chart image branches (1 for single-chart, 4 for multi-chart).
    pub chart_branches: usize,
    pub include_numeric: bool,
    pub numeric_encoder: NumericEncoderKind,
    pub fusion: FusionStrategy,
    pub resolution: usize,
    pub t_len: usize,
    pub n_classes: usize,
    pub seed: u64,
    /// Dropout probability for CNN/head dropout layers.
    pub dropout_p: f32,
    pub numeric_dim: usize,
    pub common_dim: usize,
}

impl ModelConfig {
    pub fn single_chart(backbone: CnnBackbone, resolution: usize, n_classes: usize, seed: u64) -> Self {
        ModelConfig {
            backbone,
            chart_branches: 1,
            include_numeric: false,
            numeric_encoder: NumericEncoderKind::Fcn,
            fusion: FusionStrategy::Concat,
            resolution,
            t_len: 1,
            n_classes,
            seed,
            dropout_p: 0.5,
            numeric_dim: DEFAULT_NUMERIC_DIM,
            common_dim: DEFAULT_COMMON_DIM,
        }
    }
}

enum ChartEncoder {
    Shallow(ShallowCnn),
    Deep(DeepCnn),
}

impl ChartEncoder {
    fn out_dim(&self) -> usize {
        match self {
            ChartEncoder::Shallow(e) => e.out_dim(),
            ChartEncoder::Deep(e) => e.out_dim(),
        }
    }

    fn forward(&mut self, store: &mut ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            ChartEncoder::Shallow(e) => e.forward(store, x, mode),
            ChartEncoder::Deep(e) => e.forward(store, x, mode),
        }
    }

    fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Result<Tensor> {
        match self {
            ChartEncoder::Shallow(e) => e.backward(store, gy),
            ChartEncoder::Deep(e) => e.backward(store, gy),
        }
    }

    fn set_dropout(&mut self, p: f32) {
        match self {
            ChartEncoder::Shallow(e) => e.set_dropout(p),
            ChartEncoder::Deep(e) => e.set_dropout(p),
        }
    }
}

enum NumericEncoder {
    Fcn(FcnNum),
    Transformer(TransformerNum),
    OsCnn(OsCnnNum),
}

impl NumericEncoder {
    fn out_dim(&self) -> usize {
        match self {
            NumericEncoder::Fcn(e) => e.out_dim(),
            NumericEncoder::Transformer(e) => e.out_dim(),
            NumericEncoder::OsCnn(e) => e.out_dim(),
        }
    }

    fn forward(&mut self, store: &mut ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match self {
            NumericEncoder::Fcn(e) => e.forward(store, x),
            NumericEncoder::Transformer(e) => e.forward(store, x),
            NumericEncoder::OsCnn(e) => e.forward(store, x, mode),
        }
    }

    fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Result<Tensor> {
        match self {
            NumericEncoder::Fcn(e) => e.backward(store, gy),
            NumericEncoder::Transformer(e) => e.backward(store, gy),
            NumericEncoder::OsCnn(e) => e.backward(store, gy),
        }
    }
}

enum Fusion {
    Concat(ConcatFusion),
    Weighted(WeightedFusion),
}

/// The full classifier. Branch order in fusion is numeric first (when
/// present) followed by the chart branches in declared order.
pub struct VtbModel {
    pub store: ParamStore,
    pub hp: AdamParams,
    chart_encoders: Vec<ChartEncoder>,
    numeric: Option<NumericEncoder>,
    fusion: Fusion,
    head: ClassifierHead,
    n_classes: usize,
}

impl VtbModel {
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        if cfg.chart_branches == 0 && !cfg.include_numeric {
            return Err(Error::Config("model needs at least one branch".into()));
        }
        let mut store = ParamStore::new();
        let mut rng: ChaCha8Rng = derive_rng(cfg.seed, 1);

        let mut chart_encoders = Vec::with_capacity(cfg.chart_branches);
        for k in 0..cfg.chart_branches {
            let name = format!("chart{k}");
            let mut enc = match cfg.backbone {
                CnnBackbone::Shallow => ChartEncoder::Shallow(ShallowCnn::new(
                    &mut store,
                    &name,
                    cfg.resolution,
                    cfg.seed.wrapping_add(k as u64),
                    &mut rng,
                )?),
                CnnBackbone::Deep => ChartEncoder::Deep(DeepCnn::new(
                    &mut store,
                    &name,
                    cfg.resolution,
                    cfg.seed.wrapping_add(k as u64),
                    &mut rng,
                )?),
            };
            enc.set_dropout(cfg.dropout_p);
            chart_encoders.push(enc);
        }

        let numeric = if cfg.include_numeric {
            Some(match cfg.numeric_encoder {
                NumericEncoderKind::Fcn => NumericEncoder::Fcn(FcnNum::new(
                    &mut store,
                    "numeric",
                    cfg.t_len,
                    128,
                    cfg.numeric_dim,
                    &mut rng,
                )),
                NumericEncoderKind::Transformer => NumericEncoder::Transformer(TransformerNum::new(
                    &mut store,
                    "numeric",
                    64,
                    4,
                    2,
                    cfg.numeric_dim,
                    &mut rng,
                )?),
                NumericEncoderKind::Oscnn => NumericEncoder::OsCnn(OsCnnNum::new(
                    &mut store,
                    "numeric",
                    cfg.t_len,
                    32,
                    cfg.numeric_dim,
                    &mut rng,
                )?),
            })
        } else {
            None
        };

        let mut dims: Vec<usize> = Vec::new();
        if let Some(num) = &numeric {
            dims.push(num.out_dim());
        }
        dims.extend(chart_encoders.iter().map(|e| e.out_dim()));

        let fusion = match cfg.fusion {
            FusionStrategy::Concat => Fusion::Concat(ConcatFusion::new(dims.clone())?),
            FusionStrategy::Weighted => Fusion::Weighted(WeightedFusion::new(
                &mut store,
                "fusion",
                &dims,
                cfg.common_dim,
                &mut rng,
            )?),
        };
        let fused_dim = match &fusion {
            Fusion::Concat(f) => f.out_dim(),
            Fusion::Weighted(f) => f.out_dim(),
        };
        let mut head = ClassifierHead::new(
            &mut store,
            "head",
            fused_dim,
            HEAD_HIDDEN,
            cfg.n_classes,
            derive_rng(cfg.seed, 104),
            &mut rng,
        );
        head.set_dropout(cfg.dropout_p);

        Ok(VtbModel {
            store,
            hp: AdamParams::default(),
            chart_encoders,
            numeric,
            fusion,
            head,
            n_classes: cfg.n_classes,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn chart_branch_count(&self) -> usize {
        self.chart_encoders.len()
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// Scales every weight matrix (names ending in `.w`) in place; used by
    /// init-scale experiments.
    pub fn scale_weights_for_diagnostics(&mut self, factor: f32) {
        for i in 0..self.store.len() {
            let id = crate::nn::ParamId::from_raw(i);
            if self.store.name(id).ends_with(".w") {
                for v in self.store.value_mut(id).data_mut() {
                    *v *= factor;
                }
            }
        }
    }

    /// Batch-mean fusion weights from the latest weighted-fusion forward.
    pub fn last_alpha(&self) -> Option<Vec<f32>> {
        match &self.fusion {
            Fusion::Weighted(f) if !f.last_alpha.is_empty() => Some(f.last_alpha.clone()),
            _ => None,
        }
    }

    fn branch_forward(&mut self, batch: &Batch, mode: Mode) -> Result<Vec<Tensor>> {
        if batch.images.len() != self.chart_encoders.len() {
            return Err(Error::Config(format!(
                "batch has {} image branches, model has {}",
                batch.images.len(),
                self.chart_encoders.len()
            )));
        }
        let mut h_list = Vec::with_capacity(self.chart_encoders.len() + 1);
        if let Some(num) = self.numeric.as_mut() {
            let series = batch
                .series
                .as_ref()
                .ok_or_else(|| Error::Config("model has a numeric branch but batch has no series".into()))?;
            h_list.push(num.forward(&mut self.store, series, mode)?);
        }
        for (enc, img) in self.chart_encoders.iter_mut().zip(&batch.images) {
            h_list.push(enc.forward(&mut self.store, img, mode)?);
        }
        Ok(h_list)
    }

    /// Logits `[N, C]`.
    pub fn forward(&mut self, batch: &Batch, mode: Mode) -> Result<Tensor> {
        let h_list = self.branch_forward(batch, mode)?;
        let z = match &mut self.fusion {
            Fusion::Concat(f) => f.forward(&h_list)?,
            Fusion::Weighted(f) => f.forward(&mut self.store, &h_list)?.0,
        };
        self.head.forward(&mut self.store, &z, mode)
    }

    pub fn backward(&mut self, g_logits: &Tensor) -> Result<()> {
        let gz = self.head.backward(&mut self.store, g_logits);
        let branch_grads = match &mut self.fusion {
            Fusion::Concat(f) => f.backward(&gz),
            Fusion::Weighted(f) => f.backward(&mut self.store, &gz)?,
        };
        let mut iter = branch_grads.into_iter();
        if let Some(num) = self.numeric.as_mut() {
            let g = iter.next().expect("numeric branch gradient");
            num.backward(&mut self.store, &g)?;
        }
        for enc in self.chart_encoders.iter_mut() {
            let g = iter.next().expect("chart branch gradient");
            enc.backward(&mut self.store, &g)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops;
    use rand::Rng;

    fn toy_batch(n: usize, branches: usize, with_series: bool, seed: u64) -> Batch {
        let mut rng = derive_rng(seed, 3);
        Batch {
            images: (0..branches)
                .map(|_| {
                    Tensor::from_vec(
                        &[n, 3, 32, 32],
                        (0..n * 3 * 32 * 32).map(|_| rng.gen_range(0.0..1.0)).collect(),
                    )
                })
                .collect(),
            series: with_series.then(|| {
                Tensor::from_vec(&[n, 12], (0..n * 12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            }),
            labels: (0..n).map(|i| i % 2).collect(),
        }
    }

    #[test]
    fn multimodal_weighted_model_trains_one_step() {
        let mut cfg = ModelConfig::single_chart(CnnBackbone::Shallow, 32, 2, 7);
        cfg.include_numeric = true;
        cfg.t_len = 12;
        cfg.fusion = FusionStrategy::Weighted;
        let mut model = VtbModel::build(&cfg).unwrap();
        let batch = toy_batch(4, 1, true, 1);
        let logits = model.forward(&batch, Mode::Train).unwrap();
        assert_eq!(logits.shape(), [4, 2]);
        let (loss, grad) = ops::cross_entropy(&logits, &batch.labels).unwrap();
        assert!(loss.is_finite());
        model.backward(&grad).unwrap();
        model.store.adam_step(&AdamParams::default());
        let alpha = model.last_alpha().unwrap();
        assert_eq!(alpha.len(), 2);
        assert!((alpha.iter().sum::<f32>() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn multi_chart_concat_model_runs() {
        let mut cfg = ModelConfig::single_chart(CnnBackbone::Shallow, 32, 3, 8);
        cfg.chart_branches = 4;
        let mut model = VtbModel::build(&cfg).unwrap();
        let batch = Batch {
            labels: vec![0, 1, 2],
            ..toy_batch(3, 4, false, 2)
        };
        let logits = model.forward(&batch, Mode::Train).unwrap();
        assert_eq!(logits.shape(), [3, 3]);
        let (_, grad) = ops::cross_entropy(&logits, &batch.labels).unwrap();
        model.backward(&grad).unwrap();
    }

    #[test]
    fn finite_outputs_across_seeds() {
        for seed in 0..20 {
            let mut cfg = ModelConfig::single_chart(CnnBackbone::Shallow, 16, 2, seed);
            cfg.dropout_p = 0.0;
            let mut model = VtbModel::build(&cfg).unwrap();
            let mut rng = derive_rng(seed, 88);
            let batch = Batch {
                images: vec![Tensor::from_vec(
                    &[2, 3, 16, 16],
                    (0..2 * 3 * 256).map(|_| rng.gen_range(0.0..1.0)).collect(),
                )],
                series: None,
                labels: vec![0, 1],
            };
            let logits = model.forward(&batch, Mode::Train).unwrap();
            assert!(logits.is_finite(), "seed {seed}");
        }
    }
}
