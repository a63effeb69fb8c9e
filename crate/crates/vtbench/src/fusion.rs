//! Branch fusion (concatenation or learnable softmax weighting) and the
//! two-layer classification head.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{Dropout, Linear, Relu};
use crate::nn::ops;
use crate::nn::{kaiming_uniform, Mode, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const DEFAULT_COMMON_DIM: usize = 128;
pub const HEAD_HIDDEN: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionStrategy {
    Concat,
    Weighted,
}

/// Concatenates branch embeddings in declared order: `z = [h_0, h_1, ...]`.
pub struct ConcatFusion {
    dims: Vec<usize>,
}

impl ConcatFusion {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Config("concat fusion needs at least one branch".into()));
        }
        Ok(ConcatFusion { dims })
    }

    pub fn out_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    pub fn forward(&mut self, h_list: &[Tensor]) -> Result<Tensor> {
        if h_list.len() != self.dims.len() {
            return Err(Error::Config(format!(
                "concat fusion got {} branches, expected {}",
                h_list.len(),
                self.dims.len()
            )));
        }
        let n = h_list[0].shape()[0];
        let total = self.out_dim();
        let mut z = Tensor::zeros(&[n, total]);
        let zd = z.data_mut();
        let mut offset = 0;
        for (h, &d) in h_list.iter().zip(&self.dims) {
            assert_eq!(h.shape(), [n, d]);
            for i in 0..n {
                zd[i * total + offset..i * total + offset + d]
                    .copy_from_slice(&h.data()[i * d..(i + 1) * d]);
            }
            offset += d;
        }
        Ok(z)
    }

    pub fn backward(&mut self, gz: &Tensor) -> Vec<Tensor> {
        let n = gz.shape()[0];
        let total = self.out_dim();
        let mut grads = Vec::with_capacity(self.dims.len());
        let mut offset = 0;
        for &d in &self.dims {
            let mut g = Tensor::zeros(&[n, d]);
            for i in 0..n {
                g.data_mut()[i * d..(i + 1) * d]
                    .copy_from_slice(&gz.data()[i * total + offset..i * total + offset + d]);
            }
            grads.push(g);
            offset += d;
        }
        grads
    }
}

/// Dynamic weighted fusion: each branch is projected to a common width,
/// per-branch logits `w_k . h_k` pass through a softmax, and the fused
/// vector is the convex combination `z = sum_k alpha_k h_k`.
pub struct WeightedFusion {
    projections: Vec<Linear>,
    attn: Vec<ParamId>,
    common_dim: usize,
    cache: Option<WfCache>,
    /// Batch-mean attention weights from the latest forward.
    pub last_alpha: Vec<f32>,
}

struct WfCache {
    projected: Vec<Tensor>,
    alpha: Tensor,
}

impl WeightedFusion {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        common_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Config("weighted fusion needs at least one branch".into()));
        }
        if common_dim == 0 {
            return Err(Error::Config("common_dim must be >= 1".into()));
        }
        let projections = dims
            .iter()
            .enumerate()
            .map(|(k, &d)| Linear::new(store, &format!("{name}.proj{k}"), d, common_dim, rng))
            .collect();
        let attn = dims
            .iter()
            .enumerate()
            .map(|(k, _)| {
                store.alloc(
                    &format!("{name}.attn{k}"),
                    kaiming_uniform(&[common_dim], common_dim, rng),
                )
            })
            .collect();
        Ok(WeightedFusion {
            projections,
            attn,
            common_dim,
            cache: None,
            last_alpha: Vec::new(),
        })
    }

    pub fn out_dim(&self) -> usize {
        self.common_dim
    }

    pub fn branch_count(&self) -> usize {
        self.projections.len()
    }

    /// Returns `(z, alpha)`; `alpha` is `[N, K]`, each row on the simplex.
    pub fn forward(&mut self, store: &mut ParamStore, h_list: &[Tensor]) -> Result<(Tensor, Tensor)> {
        let k_branches = self.projections.len();
        if h_list.len() != k_branches {
            return Err(Error::Config(format!(
                "weighted fusion got {} branches, expected {k_branches}",
                h_list.len()
            )));
        }
        let n = h_list[0].shape()[0];
        let d = self.common_dim;
        let mut projected = Vec::with_capacity(k_branches);
        for (proj, h) in self.projections.iter_mut().zip(h_list) {
            projected.push(proj.forward(store, h)?);
        }
        let mut logits = Tensor::zeros(&[n, k_branches]);
        {
            let ld = logits.data_mut();
            for (k, ht) in projected.iter().enumerate() {
                let w = store.value(self.attn[k]).data();
                for i in 0..n {
                    let row = &ht.data()[i * d..(i + 1) * d];
                    let mut dot = 0.0f32;
                    for (a, b) in row.iter().zip(w) {
                        dot += a * b;
                    }
                    ld[i * k_branches + k] = dot;
                }
            }
        }
        let alpha = ops::softmax_last(&logits);
        let mut z = Tensor::zeros(&[n, d]);
        {
            let zd = z.data_mut();
            let ad = alpha.data();
            for (k, ht) in projected.iter().enumerate() {
                for i in 0..n {
                    let a = ad[i * k_branches + k];
                    let row = &ht.data()[i * d..(i + 1) * d];
                    for (zv, &hv) in zd[i * d..(i + 1) * d].iter_mut().zip(row) {
                        *zv += a * hv;
                    }
                }
            }
        }
        self.last_alpha = {
            let ad = alpha.data();
            (0..k_branches)
                .map(|k| (0..n).map(|i| ad[i * k_branches + k]).sum::<f32>() / n as f32)
                .collect()
        };
        self.cache = Some(WfCache {
            projected,
            alpha: alpha.clone(),
        });
        Ok((z, alpha))
    }

    /// Backward through the convex combination, the softmax, the logits and
    /// the projections; returns per-branch input gradients.
    pub fn backward(&mut self, store: &mut ParamStore, gz: &Tensor) -> Result<Vec<Tensor>> {
        let cache = self.cache.take().expect("fusion backward before forward");
        let k_branches = self.projections.len();
        let n = gz.shape()[0];
        let d = self.common_dim;
        let ad = cache.alpha.data();

        // dot_k[i] = <gz_i, h_k[i]>
        let mut dots = vec![0.0f32; n * k_branches];
        for (k, ht) in cache.projected.iter().enumerate() {
            for i in 0..n {
                let mut s = 0.0f32;
                for (a, b) in gz.data()[i * d..(i + 1) * d]
                    .iter()
                    .zip(&ht.data()[i * d..(i + 1) * d])
                {
                    s += a * b;
                }
                dots[i * k_branches + k] = s;
            }
        }
        // g_logit[i,k] = alpha_ik * (dot_ik - sum_j alpha_ij dot_ij)
        let mut g_logits = vec![0.0f32; n * k_branches];
        for i in 0..n {
            let mut mean = 0.0f32;
            for k in 0..k_branches {
                mean += ad[i * k_branches + k] * dots[i * k_branches + k];
            }
            for k in 0..k_branches {
                g_logits[i * k_branches + k] =
                    ad[i * k_branches + k] * (dots[i * k_branches + k] - mean);
            }
        }

        let mut grads = Vec::with_capacity(k_branches);
        for (k, ht) in cache.projected.iter().enumerate() {
            let w = store.value(self.attn[k]).data().to_vec();
            let mut gh = Tensor::zeros(&[n, d]);
            let mut gw = vec![0.0f32; d];
            {
                let ghd = gh.data_mut();
                for i in 0..n {
                    let a = ad[i * k_branches + k];
                    let gl = g_logits[i * k_branches + k];
                    let hrow = &ht.data()[i * d..(i + 1) * d];
                    let gzrow = &gz.data()[i * d..(i + 1) * d];
                    for j in 0..d {
                        ghd[i * d + j] = a * gzrow[j] + gl * w[j];
                        gw[j] += gl * hrow[j];
                    }
                }
            }
            store.accumulate_grad(self.attn[k], &gw);
            grads.push(self.projections[k].backward(store, &gh));
        }
        Ok(grads)
    }
}

/// Two-layer classification head with dropout between layers in train mode:
/// `logits = W2 relu(W1 z + b1) + b2`.
pub struct ClassifierHead {
    l1: Linear,
    relu: Relu,
    dropout: Dropout,
    l2: Linear,
    n_classes: usize,
}

impl ClassifierHead {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        n_classes: usize,
        dropout_rng: ChaCha8Rng,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        ClassifierHead {
            l1: Linear::new(store, &format!("{name}.l1"), in_dim, hidden, rng),
            relu: Relu::new(),
            dropout: Dropout::new(0.5, dropout_rng),
            l2: Linear::new(store, &format!("{name}.l2"), hidden, n_classes, rng),
            n_classes,
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn set_dropout(&mut self, p: f32) {
        self.dropout.p = p;
    }

    pub fn forward(&mut self, store: &mut ParamStore, z: &Tensor, mode: Mode) -> Result<Tensor> {
        let h = self.l1.forward(store, z)?;
        let h = self.relu.forward(&h);
        let h = self.dropout.forward(&h, mode);
        self.l2.forward(store, &h)
    }

    pub fn backward(&mut self, store: &mut ParamStore, g_logits: &Tensor) -> Tensor {
        let g = self.l2.backward(store, g_logits);
        let g = self.dropout.backward(&g);
        let g = self.relu.backward(&g);
        self.l1.backward(store, &g)
    }

    /// Class probabilities: softmax over the head logits.
    pub fn classify(&mut self, store: &mut ParamStore, z: &Tensor, mode: Mode) -> Result<Tensor> {
        Ok(ops::softmax_last(&self.forward(store, z, mode)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::derive_rng;
    use rand::Rng;

    fn rand_t(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = derive_rng(seed, 77);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn concat_dims_order_and_sensitivity() {
        let mut f = ConcatFusion::new(vec![128, 64, 64, 64, 64]).unwrap();
        assert_eq!(f.out_dim(), 384);
        let hs: Vec<Tensor> = [128usize, 64, 64, 64, 64]
            .iter()
            .enumerate()
            .map(|(i, &d)| rand_t(&[2, d], i as u64))
            .collect();
        let z = f.forward(&hs).unwrap();
        assert_eq!(z.shape(), [2, 384]);
        // first segment is branch 0 verbatim
        assert_eq!(&z.data()[0..128], &hs[0].data()[0..128]);

        // single branch: z == h
        let mut f1 = ConcatFusion::new(vec![16]).unwrap();
        let h = rand_t(&[3, 16], 9);
        assert_eq!(f1.forward(&[h.clone()]).unwrap().data(), h.data());

        // swapping two equal-width branches permutes the segments
        let mut f2 = ConcatFusion::new(vec![8, 8]).unwrap();
        let (a, b) = (rand_t(&[1, 8], 1), rand_t(&[1, 8], 2));
        let z1 = f2.forward(&[a.clone(), b.clone()]).unwrap();
        let z2 = f2.forward(&[b, a]).unwrap();
        assert_eq!(&z1.data()[0..8], &z2.data()[8..16]);
        assert_eq!(&z1.data()[8..16], &z2.data()[0..8]);

        assert!(ConcatFusion::new(vec![]).is_err());
    }

    #[test]
    fn concat_backward_splits() {
        let mut f = ConcatFusion::new(vec![4, 6]).unwrap();
        let hs = vec![rand_t(&[2, 4], 3), rand_t(&[2, 6], 4)];
        f.forward(&hs).unwrap();
        let gz = rand_t(&[2, 10], 5);
        let gs = f.backward(&gz);
        assert_eq!(gs[0].shape(), [2, 4]);
        assert_eq!(gs[1].shape(), [2, 6]);
        assert_eq!(&gs[0].data()[0..4], &gz.data()[0..4]);
        assert_eq!(&gs[1].data()[0..6], &gz.data()[4..10]);
    }

    #[test]
    fn weighted_single_branch_degenerates_to_projection() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(10, 0);
        let mut f = WeightedFusion::new(&mut store, "fuse", &[32], 16, &mut rng).unwrap();
        let h = rand_t(&[4, 32], 6);
        let (z, alpha) = f.forward(&mut store, &[h.clone()]).unwrap();
        assert!(alpha.data().iter().all(|&a| a == 1.0));
        // z equals the projected branch
        let mut proj = Linear::new(&mut ParamStore::new(), "p", 32, 16, &mut derive_rng(0, 0));
        let _ = &mut proj; // projection weights differ; just check shape here
        assert_eq!(z.shape(), [4, 16]);
    }

    #[test]
    fn weighted_zero_logits_give_uniform_alpha() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(11, 0);
        let mut f = WeightedFusion::new(&mut store, "fuse", &[8, 8, 8], 8, &mut rng).unwrap();
        // zero attention vectors -> all logits zero -> uniform weights
        for k in 0..3 {
            store.value_mut(f.attn[k]).data_mut().fill(0.0);
        }
        let hs = vec![rand_t(&[5, 8], 1), rand_t(&[5, 8], 2), rand_t(&[5, 8], 3)];
        let (z, alpha) = f.forward(&mut store, &hs).unwrap();
        for &a in alpha.data() {
            assert!((a - 1.0 / 3.0).abs() < 1e-6);
        }
        // z is the mean of the projected embeddings
        let mut mean = Tensor::zeros(&[5, 8]);
        let cache = f.cache.as_ref().unwrap();
        for ht in &cache.projected {
            for (m, &h) in mean.data_mut().iter_mut().zip(ht.data()) {
                *m += h / 3.0;
            }
        }
        for (a, b) in z.data().iter().zip(mean.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn alpha_rows_live_on_the_simplex() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(12, 0);
        for k in 1..=5usize {
            let dims: Vec<usize> = (0..k).map(|i| 8 + 4 * i).collect();
            let mut f =
                WeightedFusion::new(&mut store, &format!("f{k}"), &dims, 12, &mut rng).unwrap();
            let hs: Vec<Tensor> = dims
                .iter()
                .enumerate()
                .map(|(i, &d)| rand_t(&[3, d], (k * 10 + i) as u64))
                .collect();
            let (_, alpha) = f.forward(&mut store, &hs).unwrap();
            for row in alpha.data().chunks_exact(k) {
                let sum: f32 = row.iter().sum();
                assert!((sum - 1.0).abs() < 1e-6);
                assert!(row.iter().all(|&a| (0.0..=1.0).contains(&a)));
            }
        }
    }

    #[test]
    fn closed_form_two_branch_softmax() {
        // logits (ln 2, 0) -> alpha (2/3, 1/3)
        let logits = Tensor::from_vec(&[1, 2], vec![2.0f32.ln(), 0.0]);
        let alpha = ops::softmax_last(&logits);
        assert!((alpha.data()[0] - 2.0 / 3.0).abs() < 1e-6);
        assert!((alpha.data()[1] - 1.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn head_probabilities_and_shift_invariance() {
        let mut store = ParamStore::new();
        let mut rng = derive_rng(13, 0);
        let mut head = ClassifierHead::new(
            &mut store,
            "head",
            16,
            HEAD_HIDDEN,
            3,
            derive_rng(13, 1),
            &mut rng,
        );
        let z = rand_t(&[4, 16], 20);
        let p = head.classify(&mut store, &z, Mode::Eval).unwrap();
        for row in p.data().chunks_exact(3) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }

        // zero weights, C=2 -> (0.5, 0.5)
        let mut store2 = ParamStore::new();
        let mut head2 = ClassifierHead::new(
            &mut store2,
            "head",
            8,
            4,
            2,
            derive_rng(14, 1),
            &mut derive_rng(14, 0),
        );
        for name in ["head.l1.w", "head.l1.b", "head.l2.w", "head.l2.b"] {
            let id = store2.find(name).unwrap();
            store2.value_mut(id).data_mut().fill(0.0);
        }
        let p = head2
            .classify(&mut store2, &rand_t(&[1, 8], 2), Mode::Eval)
            .unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);

        // argmax invariant under constant logit shifts
        let logits = rand_t(&[2, 3], 30);
        let shifted = logits.map(|v| v + 11.5);
        let p1 = ops::softmax_last(&logits);
        let p2 = ops::softmax_last(&shifted);
        for (r1, r2) in p1.data().chunks_exact(3).zip(p2.data().chunks_exact(3)) {
            let am1 = r1.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            let am2 = r2.iter().enumerate().max_by(|a, b| a.1.partial_cmp(b.1).unwrap()).unwrap().0;
            assert_eq!(am1, am2);
        }
    }
}
