//! Minimal dense-tensor neural network core: named parameters with Adam
//! state, hand-written forward/backward kernels, layer structs that cache
//! activations, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod layers;
pub mod ops;

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Forward-pass mode. Train enables dropout and batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One trainable parameter plus its gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub m: Tensor,
    pub v: Tensor,
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

impl ParamId {
    /// Index-based constructor for store iteration.
    pub fn from_raw(i: usize) -> Self {
        ParamId(i)
    }
}

/// Named trainable parameters with shared optimizer step count.
///
/// Layers hold [`ParamId`]s; the store owns values, gradients and Adam
/// moments so that stepping, checkpointing and hashing see every parameter.
/// Non-trainable state (batchnorm running statistics) lives in the same
/// namespace as buffers: snapshotted, checkpointed and hashed, but ignored
/// by the optimizer.
#[derive(Debug, Default)]
pub struct ParamStore {
    names: Vec<String>,
    params: Vec<Param>,
    trainable: Vec<bool>,
    step: u64,
}

/// Adam hyperparameters. `decoupled_decay` switches the weight-decay term
/// from coupled L2 (added to the gradient) to decoupled (applied to the
/// parameter directly).
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    pub decoupled_decay: bool,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
            decoupled_decay: false,
        }
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn alloc(&mut self, name: &str, value: Tensor) -> ParamId {
        self.alloc_inner(name, value, true)
    }

    /// Allocates non-trainable state (e.g. running statistics).
    pub fn alloc_buffer(&mut self, name: &str, value: Tensor) -> ParamId {
        self.alloc_inner(name, value, false)
    }

    fn alloc_inner(&mut self, name: &str, value: Tensor, trainable: bool) -> ParamId {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name:?}"
        );
        let shape = value.shape().to_vec();
        self.names.push(name.to_string());
        self.params.push(Param {
            value,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
        });
        self.trainable.push(trainable);
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].grad
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].grad
    }

    /// Adds `delta` into the gradient accumulator of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, delta: &[f32]) {
        let g = self.params[id.0].grad.data_mut();
        assert_eq!(g.len(), delta.len());
        for (gv, dv) in g.iter_mut().zip(delta) {
            *gv += dv;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Total number of trainable scalars (buffers excluded).
    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|(p, _)| p.value.numel())
            .sum()
    }

    /// One bias-corrected Adam update over every parameter; increments the
    /// shared step count. Zero gradients with zero weight decay leave the
    /// parameters untouched.
    pub fn adam_step(&mut self, hp: &AdamParams) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - hp.beta1.powi(t);
        let bc2 = 1.0 - hp.beta2.powi(t);
        for (p, _) in self
            .params
            .iter_mut()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
        {
            let n = p.value.numel();
            let value = p.value.data_mut();
            let grad = p.grad.data();
            let m = p.m.data_mut();
            let v = p.v.data_mut();
            for i in 0..n {
                let mut g = grad[i];
                if !hp.decoupled_decay {
                    g += hp.weight_decay * value[i];
                }
                m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g;
                v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                if hp.decoupled_decay {
                    value[i] -= hp.lr * hp.weight_decay * value[i];
                }
                value[i] -= hp.lr * m_hat / (v_hat.sqrt() + hp.eps);
            }
        }
    }

    /// Copies of all parameter values, in allocation order.
    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snap: &[Tensor]) {
        assert_eq!(snap.len(), self.params.len());
        for (p, s) in self.params.iter_mut().zip(snap) {
            assert_eq!(p.value.shape(), s.shape());
            p.value = s.clone();
        }
    }

    /// SHA-256 over names, shapes and little-endian value bytes; used to
    /// assert that evaluation does not mutate parameters.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for (name, p) in self.names.iter().zip(&self.params) {
            h.update(name.as_bytes());
            for &d in p.value.shape() {
                h.update((d as u64).to_le_bytes());
            }
            for &v in p.value.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Writes a checkpoint: magic `VTBCKPT1`, u32 version, u32 count, then
    /// per parameter a length-prefixed name, u32 rank and u64 dims; after the
    /// header the raw little-endian f32 payloads in the same order.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(b"VTBCKPT1")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for (name, p) in self.names.iter().zip(&self.params) {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
            for &d in p.value.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
        }
        for p in &self.params {
            for &v in p.value.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Loads a checkpoint previously written by [`ParamStore::save`] into a
    /// store with identical names and shapes.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"VTBCKPT1" {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = read_u32(&mut r)? as usize;
        if count != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {count} parameters, store has {}",
                self.params.len()
            )));
        }
        let mut shapes = Vec::with_capacity(count);
        for idx in 0..count {
            let name_len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
            if name != self.names[idx] {
                return Err(Error::Checkpoint(format!(
                    "parameter {idx} is {:?} in checkpoint, {:?} in store",
                    name, self.names[idx]
                )));
            }
            let rank = read_u32(&mut r)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            if shape != self.params[idx].value.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {name}: {:?} vs {:?}",
                    shape,
                    self.params[idx].value.shape()
                )));
            }
            shapes.push(shape);
        }
        for idx in 0..count {
            let n: usize = shapes[idx].iter().product();
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf)?;
            let data: Vec<f32> = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            self.params[idx].value = Tensor::from_vec(&shapes[idx], data);
        }
        Ok(())
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Kaiming-uniform fan-in initialization: U(-sqrt(6/fan_in), sqrt(6/fan_in)).
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in as f32).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::from_vec(shape, data)
}

/// Deterministic per-purpose RNG stream derived from a base seed.
pub fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream))
}
