//! Layer structs: parameter handles plus the activation caches needed by
//! their hand-written backward passes. `forward` must precede `backward`
//! within one step; caches are overwritten by the next forward.

use rand_chacha::ChaCha8Rng;

use super::ops::{self, BnCache, LnCache};
use super::{kaiming_uniform, Mode, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{gemm_bias, transpose, Tensor};

pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    stride: usize,
    pad: usize,
    /// First layers of a network skip the input gradient.
    pub needs_input_grad: bool,
    cached_x: Option<Tensor>,
}

impl Conv2d {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = cin * k * k;
        let w = store.alloc(&format!("{name}.w"), kaiming_uniform(&[cout, cin, k, k], fan_in, rng));
        let b = store.alloc(&format!("{name}.b"), Tensor::zeros(&[cout]));
        Conv2d {
            w,
            b,
            stride,
            pad,
            needs_input_grad: true,
            cached_x: None,
        }
    }

    pub fn forward(&mut self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let y = ops::conv2d(x, store.value(self.w), store.value(self.b), self.stride, self.pad)?;
        self.cached_x = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Result<Tensor> {
        let x = self.cached_x.take().expect("conv backward before forward");
        let (gx, gw, gb) = ops::conv2d_backward(
            &x,
            store.value(self.w),
            gy,
            self.stride,
            self.pad,
            self.needs_input_grad,
        )?;
        store.accumulate_grad(self.w, gw.data());
        store.accumulate_grad(self.b, gb.data());
        Ok(gx.unwrap_or_else(|| Tensor::zeros(x.shape())))
    }
}

pub struct MaxPool2 {
    arg: Option<(Vec<u32>, Vec<usize>)>,
}

impl MaxPool2 {
    pub fn new() -> Self {
        MaxPool2 { arg: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        let (y, arg) = ops::maxpool2(x)?;
        self.arg = Some((arg, x.shape().to_vec()));
        Ok(y)
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let (arg, shape) = self.arg.take().expect("pool backward before forward");
        ops::maxpool2_backward(gy, &arg, &shape)
    }
}

impl Default for MaxPool2 {
    fn default() -> Self {
        Self::new()
    }
}

/// Batch normalization over `[N,C,...]` with running statistics stored as
/// non-trainable buffers (so snapshots and checkpoints carry them).
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    run_mean: ParamId,
    run_var: ParamId,
    run_count: ParamId,
    cache: Option<BnCache>,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, c: usize) -> Self {
        let gamma = store.alloc(&format!("{name}.gamma"), Tensor::filled(&[c], 1.0));
        let beta = store.alloc(&format!("{name}.beta"), Tensor::zeros(&[c]));
        let run_mean = store.alloc_buffer(&format!("{name}.running_mean"), Tensor::zeros(&[c]));
        let run_var = store.alloc_buffer(&format!("{name}.running_var"), Tensor::filled(&[c], 1.0));
        let run_count = store.alloc_buffer(&format!("{name}.batches_seen"), Tensor::zeros(&[1]));
        BatchNorm {
            gamma,
            beta,
            run_mean,
            run_var,
            run_count,
            cache: None,
        }
    }

    pub fn forward(&mut self, store: &mut ParamStore, x: &Tensor, mode: Mode) -> Result<Tensor> {
        match mode {
            Mode::Train => {
                let gamma = store.value(self.gamma).data().to_vec();
                let beta = store.value(self.beta).data().to_vec();
                let mut mean = store.value(self.run_mean).data().to_vec();
                let mut var = store.value(self.run_var).data().to_vec();
                let (y, cache) = ops::batchnorm_train(x, &gamma, &beta, &mut mean, &mut var)?;
                store.value_mut(self.run_mean).data_mut().copy_from_slice(&mean);
                store.value_mut(self.run_var).data_mut().copy_from_slice(&var);
                store.value_mut(self.run_count).data_mut()[0] += 1.0;
                self.cache = Some(cache);
                Ok(y)
            }
            Mode::Eval => {
                if store.value(self.run_count).data()[0] == 0.0 {
                    return Err(Error::BatchNormStatsUnset);
                }
                Ok(ops::batchnorm_eval(
                    x,
                    store.value(self.gamma).data(),
                    store.value(self.beta).data(),
                    store.value(self.run_mean).data(),
                    store.value(self.run_var).data(),
                ))
            }
        }
    }

    pub fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("bn backward before train forward");
        let gamma = store.value(self.gamma).data().to_vec();
        let (gx, dgamma, dbeta) = ops::batchnorm_backward(gy, &gamma, &cache);
        store.accumulate_grad(self.gamma, &dgamma);
        store.accumulate_grad(self.beta, &dbeta);
        gx
    }
}

pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    cached_x: Option<Tensor>,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.alloc(&format!("{name}.w"), kaiming_uniform(&[dout, din], din, rng));
        let b = store.alloc(&format!("{name}.b"), Tensor::zeros(&[dout]));
        Linear { w, b, cached_x: None }
    }

    pub fn forward(&mut self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let y = ops::linear(x, store.value(self.w), store.value(self.b))?;
        self.cached_x = Some(x.clone());
        Ok(y)
    }

    pub fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Tensor {
        let x = self.cached_x.take().expect("linear backward before forward");
        let (gx, gw, gb) = ops::linear_backward(&x, store.value(self.w), gy);
        store.accumulate_grad(self.w, gw.data());
        store.accumulate_grad(self.b, gb.data());
        gx
    }
}

pub struct Relu {
    cached_y: Option<Tensor>,
}

impl Relu {
    pub fn new() -> Self {
        Relu { cached_y: None }
    }

    pub fn forward(&mut self, x: &Tensor) -> Tensor {
        let y = ops::relu(x);
        self.cached_y = Some(y.clone());
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        let y = self.cached_y.take().expect("relu backward before forward");
        ops::relu_backward(&y, gy)
    }
}

impl Default for Relu {
    fn default() -> Self {
        Self::new()
    }
}

pub struct Dropout {
    pub p: f32,
    rng: ChaCha8Rng,
    mask: Option<Vec<f32>>,
}

impl Dropout {
    pub fn new(p: f32, rng: ChaCha8Rng) -> Self {
        Dropout { p, rng, mask: None }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Tensor {
        let (y, mask) = ops::dropout(x, self.p, &mut self.rng, mode == Mode::Train);
        self.mask = mask;
        y
    }

    pub fn backward(&mut self, gy: &Tensor) -> Tensor {
        ops::dropout_backward(gy, self.mask.take().as_ref())
    }
}

pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    cache: Option<LnCache>,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, d: usize) -> Self {
        let gamma = store.alloc(&format!("{name}.gamma"), Tensor::filled(&[d], 1.0));
        let beta = store.alloc(&format!("{name}.beta"), Tensor::zeros(&[d]));
        LayerNorm { gamma, beta, cache: None }
    }

    pub fn forward(&mut self, store: &ParamStore, x: &Tensor) -> Tensor {
        let (y, cache) = ops::layernorm(x, store.value(self.gamma).data(), store.value(self.beta).data());
        self.cache = Some(cache);
        y
    }

    pub fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("layernorm backward before forward");
        let gamma = store.value(self.gamma).data().to_vec();
        let (gx, dgamma, dbeta) = ops::layernorm_backward(gy, &gamma, &cache);
        store.accumulate_grad(self.gamma, &dgamma);
        store.accumulate_grad(self.beta, &dbeta);
        gx
    }
}

/// Pre-norm transformer encoder layer: layernorm -> multi-head scaled
/// dot-product attention -> residual, then layernorm -> feed-forward with
/// hidden width `4*D` -> residual. Per-query attention rows sum to one.
pub struct MhsaLayer {
    d_model: usize,
    heads: usize,
    ln1: LayerNorm,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    ln2: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ff_relu: Relu,
    cache: Option<AttnCache>,
    /// Attention weights from the most recent forward, `[N, heads, T, T]`.
    pub last_attn: Option<Tensor>,
}

struct AttnCache {
    n: usize,
    t: usize,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    attn: Tensor,
}

impl MhsaLayer {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        heads: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if d_model % heads != 0 {
            return Err(Error::ShapeMismatch {
                op: "mhsa",
                detail: format!("d_model {d_model} not divisible by heads {heads}"),
            });
        }
        Ok(MhsaLayer {
            d_model,
            heads,
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), d_model),
            wq: Linear::new(store, &format!("{name}.wq"), d_model, d_model, rng),
            wk: Linear::new(store, &format!("{name}.wk"), d_model, d_model, rng),
            wv: Linear::new(store, &format!("{name}.wv"), d_model, d_model, rng),
            wo: Linear::new(store, &format!("{name}.wo"), d_model, d_model, rng),
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), d_model),
            ff1: Linear::new(store, &format!("{name}.ff1"), d_model, 4 * d_model, rng),
            ff2: Linear::new(store, &format!("{name}.ff2"), 4 * d_model, d_model, rng),
            ff_relu: Relu::new(),
            cache: None,
            last_attn: None,
        })
    }

    /// `x` is `[N, T, D]`.
    pub fn forward(&mut self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let s = x.shape().to_vec();
        let (n, t, d) = (s[0], s[1], s[2]);
        assert_eq!(d, self.d_model);
        let rows = n * t;
        let x2 = x.clone().reshape(&[rows, d])?;

        let h1 = self.ln1.forward(store, &x2);
        let q = self.wq.forward(store, &h1)?;
        let k = self.wk.forward(store, &h1)?;
        let v = self.wv.forward(store, &h1)?;

        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut attn = Tensor::zeros(&[n, self.heads, t, t]);
        let mut ctx = Tensor::zeros(&[rows, d]);
        for ni in 0..n {
            for h in 0..self.heads {
                let (qh, kh, vh) = (
                    head_slice(&q, ni, t, d, h, dh),
                    head_slice(&k, ni, t, d, h, dh),
                    head_slice(&v, ni, t, d, h, dh),
                );
                // scores = q k^T * scale
                let mut k_t = vec![0.0f32; t * dh];
                transpose(&kh, t, dh, &mut k_t);
                let mut scores = vec![0.0f32; t * t];
                gemm_bias(&mut scores, &qh, &k_t, None, t, dh, t);
                for v in scores.iter_mut() {
                    *v *= scale;
                }
                let sm = ops::softmax_last(&Tensor::from_vec(&[t, t], scores));
                let base = (ni * self.heads + h) * t * t;
                attn.data_mut()[base..base + t * t].copy_from_slice(sm.data());
                // ctx = attn v
                let mut ch = vec![0.0f32; t * dh];
                gemm_bias(&mut ch, sm.data(), &vh, None, t, t, dh);
                write_head_slice(&mut ctx, ni, t, d, h, dh, &ch);
            }
        }
        let attn_out = self.wo.forward(store, &ctx)?;
        let mut a = x2.clone();
        for (av, &ov) in a.data_mut().iter_mut().zip(attn_out.data()) {
            *av += ov;
        }

        let h2 = self.ln2.forward(store, &a);
        let f = self.ff1.forward(store, &h2)?;
        let f = self.ff_relu.forward(&f);
        let f = self.ff2.forward(store, &f)?;
        let mut out = a.clone();
        for (ov, &fv) in out.data_mut().iter_mut().zip(f.data()) {
            *ov += fv;
        }

        self.last_attn = Some(attn.clone());
        self.cache = Some(AttnCache { n, t, q, k, v, attn });
        out.reshape(&s)
    }

    pub fn backward(&mut self, store: &mut ParamStore, gy: &Tensor) -> Result<Tensor> {
        let cache = self.cache.take().expect("mhsa backward before forward");
        let (n, t, d) = (cache.n, cache.t, self.d_model);
        let rows = n * t;
        let g_out = gy.clone().reshape(&[rows, d])?;

        // feed-forward branch
        let gf = self.ff2.backward(store, &g_out);
        let gf = self.ff_relu.backward(&gf);
        let gh2 = self.ff1.backward(store, &gf);
        let mut ga = self.ln2.backward(store, &gh2);
        for (av, &gv) in ga.data_mut().iter_mut().zip(g_out.data()) {
            *av += gv; // residual
        }

        // attention branch
        let gctx = self.wo.backward(store, &ga);
        let dh = d / self.heads;
        let scale = 1.0 / (dh as f32).sqrt();
        let mut gq = Tensor::zeros(&[rows, d]);
        let mut gk = Tensor::zeros(&[rows, d]);
        let mut gv = Tensor::zeros(&[rows, d]);
        for ni in 0..n {
            for h in 0..self.heads {
                let (qh, kh, vh) = (
                    head_slice(&cache.q, ni, t, d, h, dh),
                    head_slice(&cache.k, ni, t, d, h, dh),
                    head_slice(&cache.v, ni, t, d, h, dh),
                );
                let base = (ni * self.heads + h) * t * t;
                let attn = &cache.attn.data()[base..base + t * t];
                let gctx_h = head_slice(&gctx, ni, t, d, h, dh);

                // g_attn = gctx v^T ; g_v = attn^T gctx
                let mut v_t = vec![0.0f32; t * dh];
                transpose(&vh, t, dh, &mut v_t);
                let mut g_attn = vec![0.0f32; t * t];
                gemm_bias(&mut g_attn, &gctx_h, &v_t, None, t, dh, t);
                let mut attn_t = vec![0.0f32; t * t];
                transpose(attn, t, t, &mut attn_t);
                let mut gv_h = vec![0.0f32; t * dh];
                gemm_bias(&mut gv_h, &attn_t, &gctx_h, None, t, t, dh);

                let g_scores = ops::softmax_last_backward(
                    &Tensor::from_vec(&[t, t], attn.to_vec()),
                    &Tensor::from_vec(&[t, t], g_attn),
                );
                let mut g_scores = g_scores.into_data();
                for v in g_scores.iter_mut() {
                    *v *= scale;
                }
                // gq = g_scores k ; gk = g_scores^T q
                let mut gq_h = vec![0.0f32; t * dh];
                gemm_bias(&mut gq_h, &g_scores, &kh, None, t, t, dh);
                let mut gs_t = vec![0.0f32; t * t];
                transpose(&g_scores, t, t, &mut gs_t);
                let mut gk_h = vec![0.0f32; t * dh];
                gemm_bias(&mut gk_h, &gs_t, &qh, None, t, t, dh);

                write_head_slice(&mut gq, ni, t, d, h, dh, &gq_h);
                write_head_slice(&mut gk, ni, t, d, h, dh, &gk_h);
                write_head_slice(&mut gv, ni, t, d, h, dh, &gv_h);
            }
        }
        let gh1_q = self.wq.backward(store, &gq);
        let gh1_k = self.wk.backward(store, &gk);
        let gh1_v = self.wv.backward(store, &gv);
        let mut gh1 = gh1_q;
        for ((a, &b), &c) in gh1.data_mut().iter_mut().zip(gh1_k.data()).zip(gh1_v.data()) {
            *a += b + c;
        }
        let mut gx = self.ln1.backward(store, &gh1);
        for (a, &b) in gx.data_mut().iter_mut().zip(ga.data()) {
            *a += b; // residual
        }
        gx.reshape(&[n, t, d])
    }
}

fn head_slice(x: &Tensor, n: usize, t: usize, d: usize, h: usize, dh: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; t * dh];
    let xd = x.data();
    for ti in 0..t {
        let src = (n * t + ti) * d + h * dh;
        out[ti * dh..(ti + 1) * dh].copy_from_slice(&xd[src..src + dh]);
    }
    out
}

fn write_head_slice(x: &mut Tensor, n: usize, t: usize, d: usize, h: usize, dh: usize, vals: &[f32]) {
    let xd = x.data_mut();
    for ti in 0..t {
        let dst = (n * t + ti) * d + h * dh;
        xd[dst..dst + dh].copy_from_slice(&vals[ti * dh..(ti + 1) * dh]);
    }
}

/// Sinusoidal positional encoding table `[T, D]`.
pub fn sinusoidal_positions(t: usize, d: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[t, d]);
    let data = pe.data_mut();
    for pos in 0..t {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f32 / d as f32;
            let angle = pos as f32 / 10000f32.powf(exponent);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
