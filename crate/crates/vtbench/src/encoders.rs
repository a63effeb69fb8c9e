//! Branch encoders: two CNNs over chart images and three encoders over the
//! raw numeric sequence. Each maps its input to a fixed-width embedding.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{
    sinusoidal_positions, BatchNorm, Conv2d, Dropout, Linear, MaxPool2, MhsaLayer, Relu,
};
use crate::nn::ops;
use crate::nn::{derive_rng, Mode, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const SHALLOW_EMBED_DIM: usize = 64;
pub const DEEP_EMBED_DIM: usize = 256;
pub const DEFAULT_NUMERIC_DIM: usize = 128;
pub const CNN_DROPOUT_P: f32 = 0.5;

/// Which CNN backbone processes chart images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CnnBackbone {
    Shallow,
    Deep,
}

/// Numeric-branch architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NumericEncoderKind {
    Fcn,
    Transformer,
    Oscnn,
}

// ---------------------------------------------------------------------------
// ShallowCNN: 3 conv blocks {16,32,64} -> flatten -> 64-dim embedding
// ---------------------------------------------------------------------------

pub struct ShallowCnn {
    blocks: Vec<ConvBlock>,
    fc: Linear,
    fc_relu: Relu,
    dropout: Dropout,
    flat_shape: Vec<usize>,
}

struct ConvBlock {
    conv: Conv2d,
    bn: BatchNorm,
    relu: Relu,
    pool: MaxPool2,
}

impl ConvBlock {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ConvBlock {
            conv: Conv2d::new(store, &format!("{name}.conv"), cin, cout, 3, 1, 1, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout),
            relu: Relu::new(),
            pool: MaxPool2::new(),
        }
    }

    fn forward(&mut self, store: &mut ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let x = self.conv.forward(store, x)?;
        let x = self.bn.forward(store, &x, mode)?;
        let x = self.relu.forward(&x);
        self.pool.forward(&x)
    }

    fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Result<Tensor> {
        let g = self.pool.backward(gy);
        let g = self.relu.backward(&g);
        let g = self.bn.backward(store, &g);
        self.conv.backward(store, &g)
    }
}

impl ShallowCnn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        resolution: usize,
        seed: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if resolution % 8 != 0 {
            return Err(Error::Config(format!(
                "shallow cnn needs resolution divisible by 8, got {resolution}"
            )));
        }
        let widths = [16usize, 32, 64];
        let mut blocks = Vec::new();
        let mut cin = 3;
        for (i, &cout) in widths.iter().enumerate() {
            let mut block = ConvBlock::new(store, &format!("{name}.block{i}"), cin, cout, rng);
            if i == 0 {
                block.conv.needs_input_grad = false;
            }
            blocks.push(block);
            cin = cout;
        }
        let side = resolution / 8;
        let flat = 64 * side * side;
        Ok(ShallowCnn {
            blocks,
            fc: Linear::new(store, &format!("{name}.fc"), flat, SHALLOW_EMBED_DIM, rng),
            fc_relu: Relu::new(),
            dropout: Dropout::new(CNN_DROPOUT_P, derive_rng(seed, 101)),
            flat_shape: vec![64, side, side],
        })
    }

    pub fn set_dropout(&mut self, p: f32) {
        self.dropout.p = p;
    }

    /// Propagate gradients all the way to the input image (off by default;
    /// used by gradient checks).
    pub fn enable_input_grad(&mut self) {
        self.blocks[0].conv.needs_input_grad = true;
    }

    pub fn out_dim(&self) -> usize {
        SHALLOW_EMBED_DIM
    }

    pub fn forward(&mut self, store: &mut ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let n = x.shape()[0];
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(store, &h, mode)?;
        }
        let flat: usize = self.flat_shape.iter().product();
        let h = h.reshape(&[n, flat])?;
        let h = self.fc.forward(store, &h)?;
        let h = self.fc_relu.forward(&h);
        Ok(self.dropout.forward(&h, mode))
    }

    pub fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Result<Tensor> {
        let n = gy.shape()[0];
        let g = self.dropout.backward(gy);
        let g = self.fc_relu.backward(&g);
        let g = self.fc.backward(store, &g);
        let mut shape = vec![n];
        shape.extend(&self.flat_shape);
        let mut g = g.reshape(&shape)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(store, &g)?;
        }
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// DeepCNN: 5 conv blocks {16,32,64,128,256} -> 512 -> 256 embedding
// ---------------------------------------------------------------------------

pub struct DeepCnn {
    blocks: Vec<ConvBlock>,
    fc1: Linear,
    relu1: Relu,
    drop1: Dropout,
    fc2: Linear,
    relu2: Relu,
    drop2: Dropout,
    flat_shape: Vec<usize>,
}

impl DeepCnn {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        resolution: usize,
        seed: u64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if resolution % 32 != 0 {
            return Err(Error::Config(format!(
                "deep cnn needs resolution divisible by 32, got {resolution}"
            )));
        }
        let widths = [16usize, 32, 64, 128, 256];
        let mut blocks = Vec::new();
        let mut cin = 3;
        for (i, &cout) in widths.iter().enumerate() {
            let mut block = ConvBlock::new(store, &format!("{name}.block{i}"), cin, cout, rng);
            if i == 0 {
                block.conv.needs_input_grad = false;
            }
            blocks.push(block);
            cin = cout;
        }
        let side = resolution / 32;
        let flat = 256 * side * side;
        Ok(DeepCnn {
            blocks,
            fc1: Linear::new(store, &format!("{name}.fc1"), flat, 512, rng),
            relu1: Relu::new(),
            drop1: Dropout::new(CNN_DROPOUT_P, derive_rng(seed, 102)),
            fc2: Linear::new(store, &format!("{name}.fc2"), 512, DEEP_EMBED_DIM, rng),
            relu2: Relu::new(),
            drop2: Dropout::new(CNN_DROPOUT_P, derive_rng(seed, 103)),
            flat_shape: vec![256, side, side],
        })
    }

    pub fn set_dropout(&mut self, p: f32) {
        self.drop1.p = p;
        self.drop2.p = p;
    }

    /// Propagate gradients all the way to the input image (off by default;
    /// used by gradient checks).
    pub fn enable_input_grad(&mut self) {
        self.blocks[0].conv.needs_input_grad = true;
    }

    pub fn out_dim(&self) -> usize {
        DEEP_EMBED_DIM
    }

    pub fn forward(&mut self, store: &mut ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let n = x.shape()[0];
        let mut h = x.clone();
        for b in &mut self.blocks {
            h = b.forward(store, &h, mode)?;
        }
        let flat: usize = self.flat_shape.iter().product();
        let h = h.reshape(&[n, flat])?;
        let h = self.fc1.forward(store, &h)?;
        let h = self.relu1.forward(&h);
        let h = self.drop1.forward(&h, mode);
        let h = self.fc2.forward(store, &h)?;
        let h = self.relu2.forward(&h);
        Ok(self.drop2.forward(&h, mode))
    }

    pub fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Result<Tensor> {
        let n = gy.shape()[0];
        let g = self.drop2.backward(gy);
        let g = self.relu2.backward(&g);
        let g = self.fc2.backward(store, &g);
        let g = self.drop1.backward(&g);
        let g = self.relu1.backward(&g);
        let g = self.fc1.backward(store, &g);
        let mut shape = vec![n];
        shape.extend(&self.flat_shape);
        let mut g = g.reshape(&shape)?;
        for b in self.blocks.iter_mut().rev() {
            g = b.backward(store, &g)?;
        }
        Ok(g)
    }
}

// ---------------------------------------------------------------------------
// FCN numeric branch: two-layer MLP
// ---------------------------------------------------------------------------

pub struct FcnNum {
    l1: Linear,
    r1: Relu,
    l2: Linear,
    r2: Relu,
    out_dim: usize,
}

impl FcnNum {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        t_len: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        FcnNum {
            l1: Linear::new(store, &format!("{name}.l1"), t_len, hidden, rng),
            r1: Relu::new(),
            l2: Linear::new(store, &format!("{name}.l2"), hidden, out_dim, rng),
            r2: Relu::new(),
            out_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `x` is `[N, T]`.
    pub fn forward(&mut self, store: &mut ParamStore, x: &Tensor) -> Result<Tensor> {
        let h = self.l1.forward(store, x)?;
        let h = self.r1.forward(&h);
        let h = self.l2.forward(store, &h)?;
        Ok(self.r2.forward(&h))
    }

    pub fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Result<Tensor> {
        let g = self.r2.backward(gy);
        let g = self.l2.backward(store, &g);
        let g = self.r1.backward(&g);
        Ok(self.l1.backward(store, &g))
    }
}

// ---------------------------------------------------------------------------
// Transformer numeric branch
// ---------------------------------------------------------------------------

pub struct TransformerNum {
    embed: Linear,
    blocks: Vec<MhsaLayer>,
    out: Linear,
    d_model: usize,
    out_dim: usize,
    pub use_positional_encoding: bool,
    cached_t: usize,
}

impl TransformerNum {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        depth: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let embed = Linear::new(store, &format!("{name}.embed"), 1, d_model, rng);
        let blocks = (0..depth)
            .map(|i| MhsaLayer::new(store, &format!("{name}.layer{i}"), d_model, heads, rng))
            .collect::<Result<Vec<_>>>()?;
        let out = Linear::new(store, &format!("{name}.out"), d_model, out_dim, rng);
        Ok(TransformerNum {
            embed,
            blocks,
            out,
            d_model,
            out_dim,
            use_positional_encoding: true,
            cached_t: 0,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `x` is `[N, T]`; each scalar is lifted to `d_model`, positions added,
    /// encoder blocks applied, then mean-pooled over time.
    pub fn forward(&mut self, store: &mut ParamStore, x: &Tensor) -> Result<Tensor> {
        let (n, t) = (x.shape()[0], x.shape()[1]);
        self.cached_t = t;
        let flat = x.clone().reshape(&[n * t, 1])?;
        let mut h = self.embed.forward(store, &flat)?;
        if self.use_positional_encoding {
            let pe = sinusoidal_positions(t, self.d_model);
            let hd = h.data_mut();
            for ni in 0..n {
                for ti in 0..t {
                    let base = (ni * t + ti) * self.d_model;
                    for d in 0..self.d_model {
                        hd[base + d] += pe.data()[ti * self.d_model + d];
                    }
                }
            }
        }
        let mut h = h.reshape(&[n, t, self.d_model])?;
        for b in &mut self.blocks {
            h = b.forward(store, &h)?;
        }
        // mean pool over time
        let mut pooled = Tensor::zeros(&[n, self.d_model]);
        {
            let pd = pooled.data_mut();
            let hd = h.data();
            for ni in 0..n {
                for ti in 0..t {
                    let base = (ni * t + ti) * self.d_model;
                    for d in 0..self.d_model {
                        pd[ni * self.d_model + d] += hd[base + d] / t as f32;
                    }
                }
            }
        }
        self.out.forward(store, &pooled)
    }

    pub fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Result<Tensor> {
        let n = gy.shape()[0];
        let t = self.cached_t;
        let g = self.out.backward(store, gy);
        let mut gh = Tensor::zeros(&[n, t, self.d_model]);
        {
            let ghd = gh.data_mut();
            let gd = g.data();
            for ni in 0..n {
                for ti in 0..t {
                    let base = (ni * t + ti) * self.d_model;
                    for d in 0..self.d_model {
                        ghd[base + d] = gd[ni * self.d_model + d] / t as f32;
                    }
                }
            }
        }
        for b in self.blocks.iter_mut().rev() {
            gh = b.backward(store, &gh)?;
        }
        // positional encoding is additive: gradient passes through
        let gflat = gh.reshape(&[n * t, self.d_model])?;
        let g = self.embed.backward(store, &gflat);
        g.reshape(&[n, t])
    }
}

// ---------------------------------------------------------------------------
// Omni-scale CNN numeric branch (simplified)
// ---------------------------------------------------------------------------

/// Prime-style kernel ladder `{1,2,3,5,7,11,...}` capped at `min(t, 23)`.
pub fn omni_kernel_sizes(t_len: usize) -> Vec<usize> {
    const LADDER: [usize; 10] = [1, 2, 3, 5, 7, 11, 13, 17, 19, 23];
    let cap = t_len.min(23);
    LADDER.iter().copied().filter(|&k| k <= cap).collect()
}

struct OmniBranch {
    conv_w: ParamId,
    conv_b: ParamId,
    bn: BatchNorm,
    relu: Relu,
    cached_x: Option<Tensor>,
}

struct OmniStack {
    branches: Vec<OmniBranch>,
    kernels: Vec<usize>,
    ch_per_branch: usize,
}

impl OmniStack {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        ch: usize,
        kernels: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let branches = kernels
            .iter()
            .enumerate()
            .map(|(i, &k)| OmniBranch {
                conv_w: store.alloc(
                    &format!("{name}.k{i}.w"),
                    crate::nn::kaiming_uniform(&[ch, cin, k], cin * k, rng),
                ),
                conv_b: store.alloc(&format!("{name}.k{i}.b"), Tensor::zeros(&[ch])),
                bn: BatchNorm::new(store, &format!("{name}.k{i}.bn"), ch),
                relu: Relu::new(),
                cached_x: None,
            })
            .collect();
        OmniStack {
            branches,
            kernels: kernels.to_vec(),
            ch_per_branch: ch,
        }
    }

    fn out_channels(&self) -> usize {
        self.ch_per_branch * self.kernels.len()
    }

    fn forward(&mut self, store: &mut ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, _, t) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let ch = self.ch_per_branch;
        let total = self.out_channels();
        let mut out = Tensor::zeros(&[n, total, t]);
        for (bi, branch) in self.branches.iter_mut().enumerate() {
            let y = ops::conv1d_same(x, store.value(branch.conv_w), store.value(branch.conv_b))?;
            branch.cached_x = Some(x.clone());
            let y = branch.bn.forward(store, &y, mode)?;
            let y = branch.relu.forward(&y);
            let od = out.data_mut();
            let yd = y.data();
            for ni in 0..n {
                for c in 0..ch {
                    let dst = ((ni * total) + bi * ch + c) * t;
                    let src = (ni * ch + c) * t;
                    od[dst..dst + t].copy_from_slice(&yd[src..src + t]);
                }
            }
        }
        Ok(out)
    }

    fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Result<Tensor> {
        let (n, _, t) = (gy.shape()[0], gy.shape()[1], gy.shape()[2]);
        let ch = self.ch_per_branch;
        let total = self.out_channels();
        let mut gx: Option<Tensor> = None;
        for (bi, branch) in self.branches.iter_mut().enumerate() {
            let mut g_branch = Tensor::zeros(&[n, ch, t]);
            {
                let gd = g_branch.data_mut();
                let gyd = gy.data();
                for ni in 0..n {
                    for c in 0..ch {
                        let src = ((ni * total) + bi * ch + c) * t;
                        let dst = (ni * ch + c) * t;
                        gd[dst..dst + t].copy_from_slice(&gyd[src..src + t]);
                    }
                }
            }
            let g = branch.relu.backward(&g_branch);
            let g = branch.bn.backward(store, &g);
            let x = branch.cached_x.take().expect("omni backward before forward");
            let (gxi, gw, gb) = ops::conv1d_same_backward(&x, store.value(branch.conv_w), &g);
            store.accumulate_grad(branch.conv_w, gw.data());
            store.accumulate_grad(branch.conv_b, gb.data());
            match gx.as_mut() {
                None => gx = Some(gxi),
                Some(acc) => {
                    for (a, &b) in acc.data_mut().iter_mut().zip(gxi.data()) {
                        *a += b;
                    }
                }
            }
        }
        Ok(gx.expect("omni stack has branches"))
    }
}

pub struct OsCnnNum {
    stack1: OmniStack,
    stack2: OmniStack,
    out: Linear,
    out_dim: usize,
    cached_t: usize,
}

impl OsCnnNum {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        t_len: usize,
        ch: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if t_len < 1 {
            return Err(Error::Config("oscnn needs T >= 1".into()));
        }
        let kernels = omni_kernel_sizes(t_len);
        let stack1 = OmniStack::new(store, &format!("{name}.stack1"), 1, ch, &kernels, rng);
        let mid = stack1.out_channels();
        let stack2 = OmniStack::new(store, &format!("{name}.stack2"), mid, ch, &kernels, rng);
        let final_ch = stack2.out_channels();
        Ok(OsCnnNum {
            stack1,
            stack2,
            out: Linear::new(store, &format!("{name}.out"), final_ch, out_dim, rng),
            out_dim,
            cached_t: 0,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `x` is `[N, T]`.
    pub fn forward(&mut self, store: &mut ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let (n, t) = (x.shape()[0], x.shape()[1]);
        self.cached_t = t;
        let h = x.clone().reshape(&[n, 1, t])?;
        let h = self.stack1.forward(store, &h, mode)?;
        let h = self.stack2.forward(store, &h, mode)?;
        let pooled = ops::mean_pool_time(&h);
        self.out.forward(store, &pooled)
    }

    pub fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Result<Tensor> {
        let n = gy.shape()[0];
        let g = self.out.backward(store, gy);
        let g = ops::mean_pool_time_backward(&g, self.cached_t);
        let g = self.stack2.backward(store, &g)?;
        let g = self.stack1.backward(store, &g)?;
        g.reshape(&[n, self.cached_t])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn rand_image(n: usize, r: usize, seed: u64) -> Tensor {
        let mut rng = derive_rng(seed, 55);
        Tensor::from_vec(
            &[n, 3, r, r],
            (0..n * 3 * r * r).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
    }

    #[test]
    fn shallow_shapes_and_param_count_anchor() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(1, 0);
        let mut enc = ShallowCnn::new(&mut store, "enc", 64, 1, &mut rng).unwrap();
        // 64x64 input: parameter count within +-5% of 286K
        let count = store.param_count() as f64;
        assert!(
            (count - 286_000.0).abs() / 286_000.0 < 0.05,
            "param count {count}"
        );
        let x = rand_image(2, 64, 3);
        let y = enc.forward(&mut store, &x, Mode::Train).unwrap();
        assert_eq!(y.shape(), [2, SHALLOW_EMBED_DIM]);
        assert!(y.is_finite());

        assert!(ShallowCnn::new(&mut ParamStore::new(), "e", 65, 1, &mut rng).is_err());
    }

    #[test]
    fn shallow_preflatten_shape_at_128() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(2, 0);
        let enc = ShallowCnn::new(&mut store, "enc", 128, 2, &mut rng).unwrap();
        assert_eq!(enc.flat_shape, vec![64, 16, 16]);
        assert_eq!(enc.flat_shape.iter().product::<usize>(), 16384);
    }

    #[test]
    fn deep_shapes_and_param_count_anchor() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(3, 0);
        let enc = DeepCnn::new(&mut store, "enc", 64, 3, &mut rng).unwrap();
        let count = store.param_count() as f64;
        assert!(
            (count - 1_200_000.0).abs() / 1_200_000.0 < 0.20,
            "param count {count}"
        );
        assert_eq!(enc.flat_shape, vec![256, 2, 2]);

        let mut store = ParamStore::new();
        let enc = DeepCnn::new(&mut store, "enc", 128, 3, &mut rng).unwrap();
        assert_eq!(enc.flat_shape.iter().product::<usize>(), 4096);
        let mut store = ParamStore::new();
        let enc = DeepCnn::new(&mut store, "enc", 32, 3, &mut rng).unwrap();
        assert_eq!(enc.flat_shape.iter().product::<usize>(), 256);
    }

    #[test]
    fn eval_mode_batches_match_single_items() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(4, 0);
        let mut enc = ShallowCnn::new(&mut store, "enc", 32, 4, &mut rng).unwrap();
        let x = rand_image(3, 32, 9);
        // one train pass to set batchnorm running stats
        enc.forward(&mut store, &x, Mode::Train).unwrap();
        let batch = enc.forward(&mut store, &x, Mode::Eval).unwrap();
        for i in 0..3 {
            let xi = Tensor::from_vec(
                &[1, 3, 32, 32],
                x.data()[i * 3 * 32 * 32..(i + 1) * 3 * 32 * 32].to_vec(),
            );
            let yi = enc.forward(&mut store, &xi, Mode::Eval).unwrap();
            for d in 0..SHALLOW_EMBED_DIM {
                let a = batch.data()[i * SHALLOW_EMBED_DIM + d];
                let b = yi.data()[d];
                assert!((a - b).abs() < 1e-5, "item {i} dim {d}: {a} vs {b}");
            }
        }
        // eval mode twice is bitwise identical
        let again = enc.forward(&mut store, &x, Mode::Eval).unwrap();
        assert_eq!(batch.data(), again.data());
    }

    #[test]
    fn fcn_zero_input_zero_bias_gives_zero() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(5, 0);
        let mut enc = FcnNum::new(&mut store, "num", 24, 128, 128, &mut rng);
        let x = Tensor::zeros(&[2, 24]);
        let y = enc.forward(&mut store, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.shape(), [2, 128]);
    }

    #[test]
    fn transformer_runs_on_t1_and_any_t() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(6, 0);
        let mut enc = TransformerNum::new(&mut store, "num", 32, 4, 2, 128, &mut rng).unwrap();
        let y = enc
            .forward(&mut store, &Tensor::from_vec(&[1, 1], vec![0.7]))
            .unwrap();
        assert_eq!(y.shape(), [1, 128]);
        let y = enc
            .forward(&mut store, &Tensor::from_vec(&[2, 9], (0..18).map(|v| v as f32).collect()))
            .unwrap();
        assert_eq!(y.shape(), [2, 128]);
        assert!(y.is_finite());
    }

    #[test]
    fn transformer_without_positions_is_permutation_invariant_after_pooling() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(7, 0);
        let mut enc = TransformerNum::new(&mut store, "num", 16, 2, 1, 8, &mut rng).unwrap();
        enc.use_positional_encoding = false;
        let x = Tensor::from_vec(&[1, 6], vec![0.3, -0.8, 1.4, 0.0, 0.9, -0.2]);
        let y1 = enc.forward(&mut store, &x).unwrap();
        let rev = Tensor::from_vec(&[1, 6], vec![-0.2, 0.9, 0.0, 1.4, -0.8, 0.3]);
        let y2 = enc.forward(&mut store, &rev).unwrap();
        for (a, b) in y1.data().iter().zip(y2.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn omni_kernel_set_matches_enumeration_rule() {
        assert_eq!(omni_kernel_sizes(24), vec![1, 2, 3, 5, 7, 11, 13, 17, 19, 23]);
        assert_eq!(omni_kernel_sizes(6), vec![1, 2, 3, 5]);
        assert_eq!(omni_kernel_sizes(1), vec![1]);
        assert_eq!(omni_kernel_sizes(500), vec![1, 2, 3, 5, 7, 11, 13, 17, 19, 23]);
    }

    #[test]
    fn oscnn_constant_input_embedding_independent_of_length() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(8, 0);
        // shared weights across lengths: rebuild with the same seed
        let mut enc = OsCnnNum::new(&mut store, "num", 40, 4, 16, &mut rng).unwrap();
        let ya = enc
            .forward(&mut store, &Tensor::filled(&[1, 30], 2.5), Mode::Train)
            .unwrap();
        let yb = enc
            .forward(&mut store, &Tensor::filled(&[1, 40], 2.5), Mode::Train)
            .unwrap();
        assert_eq!(ya.shape(), [1, 16]);
        for (a, b) in ya.data().iter().zip(yb.data()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }
}
