//! Dense row-major f32 tensors and the matrix kernel shared by every layer.

use crate::error::{Error, Result};

/// A contiguous row-major array of 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {:?} does not match data length {}",
            shape,
            data.len()
        );
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn scalar(v: f32) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape, shape),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// `c[i*n + j] = init(i) + sum_k a[i*k_dim + k] * b[k*n + j]`,
/// accumulating strictly in ascending `k` with separate mul and add.
///
/// Every output element sees the exact accumulation order of the naive
/// triple loop, so im2col-based convolution built on this kernel is bitwise
/// equal to direct convolution that sums in the same `k` order.
pub fn gemm_bias(
    c: &mut [f32],
    a: &[f32],
    b: &[f32],
    bias: Option<&[f32]>,
    m: usize,
    k_dim: usize,
    n: usize,
) {
    assert_eq!(a.len(), m * k_dim);
    assert_eq!(b.len(), k_dim * n);
    assert_eq!(c.len(), m * n);
    if let Some(bs) = bias {
        assert_eq!(bs.len(), m);
    }

    const NR: usize = 16;
    let mut i = 0;
    while i + 4 <= m {
        let (a0, a1, a2, a3) = (
            &a[i * k_dim..(i + 1) * k_dim],
            &a[(i + 1) * k_dim..(i + 2) * k_dim],
            &a[(i + 2) * k_dim..(i + 3) * k_dim],
            &a[(i + 3) * k_dim..(i + 4) * k_dim],
        );
        let init = bias.map(|bs| [bs[i], bs[i + 1], bs[i + 2], bs[i + 3]]);
        let mut j = 0;
        while j + NR <= n {
            let mut acc = [[0.0f32; NR]; 4];
            if let Some(bi) = init {
                for r in 0..4 {
                    acc[r] = [bi[r]; NR];
                }
            }
            for kk in 0..k_dim {
                let brow: &[f32; NR] = b[kk * n + j..kk * n + j + NR].try_into().unwrap();
                let av = [a0[kk], a1[kk], a2[kk], a3[kk]];
                for r in 0..4 {
                    for jj in 0..NR {
                        acc[r][jj] += av[r] * brow[jj];
                    }
                }
            }
            for r in 0..4 {
                c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(&acc[r]);
            }
            j += NR;
        }
        // column remainder
        while j < n {
            let mut acc = [0.0f32; 4];
            if let Some(bi) = init {
                acc = bi;
            }
            for kk in 0..k_dim {
                let bv = b[kk * n + j];
                acc[0] += a0[kk] * bv;
                acc[1] += a1[kk] * bv;
                acc[2] += a2[kk] * bv;
                acc[3] += a3[kk] * bv;
            }
            for r in 0..4 {
                c[(i + r) * n + j] = acc[r];
            }
            j += 1;
        }
        i += 4;
    }
    // row remainder
    while i < m {
        let arow = &a[i * k_dim..(i + 1) * k_dim];
        let b0 = bias.map_or(0.0, |bs| bs[i]);
        let crow = &mut c[i * n..(i + 1) * n];
        crow.fill(b0);
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
        i += 1;
    }
}

/// Naive reference with the same accumulation order as [`gemm_bias`].
pub fn gemm_bias_reference(
    c: &mut [f32],
    a: &[f32],
    b: &[f32],
    bias: Option<&[f32]>,
    m: usize,
    k_dim: usize,
    n: usize,
) {
    for i in 0..m {
        for j in 0..n {
            let mut acc = bias.map_or(0.0, |bs| bs[i]);
            for kk in 0..k_dim {
                acc += a[i * k_dim + kk] * b[kk * n + j];
            }
            c[i * n + j] = acc;
        }
    }
}

/// Out-of-place transpose: `dst[j*rows + i] = src[i*cols + j]`.
pub fn transpose(src: &[f32], rows: usize, cols: usize, dst: &mut [f32]) {
    assert_eq!(src.len(), rows * cols);
    assert_eq!(dst.len(), rows * cols);
    const B: usize = 32;
    for i0 in (0..rows).step_by(B) {
        for j0 in (0..cols).step_by(B) {
            for i in i0..(i0 + B).min(rows) {
                for j in j0..(j0 + B).min(cols) {
                    dst[j * rows + i] = src[i * cols + j];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gemm_matches_reference_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(m, k, n) in &[(1, 1, 1), (3, 5, 7), (4, 9, 16), (17, 27, 33), (64, 144, 100)] {
            let a: Vec<f32> = (0..m * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b: Vec<f32> = (0..k * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let bias: Vec<f32> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut c1 = vec![0.0; m * n];
            let mut c2 = vec![0.0; m * n];
            gemm_bias(&mut c1, &a, &b, Some(&bias), m, k, n);
            gemm_bias_reference(&mut c2, &a, &b, Some(&bias), m, k, n);
            assert_eq!(c1, c2, "m={m} k={k} n={n}");
            gemm_bias(&mut c1, &a, &b, None, m, k, n);
            gemm_bias_reference(&mut c2, &a, &b, None, m, k, n);
            assert_eq!(c1, c2);
        }
    }

    #[test]
    fn transpose_round_trip() {
        let src: Vec<f32> = (0..6 * 4).map(|v| v as f32).collect();
        let mut t = vec![0.0; 24];
        let mut back = vec![0.0; 24];
        transpose(&src, 6, 4, &mut t);
        transpose(&t, 4, 6, &mut back);
        assert_eq!(src, back);
        assert_eq!(t[0 * 6 + 1], src[1 * 4 + 0]);
    }

    #[test]
    fn reshape_checks_element_count() {
        let t = Tensor::zeros(&[2, 3]);
        assert!(t.clone().reshape(&[3, 2]).is_ok());
        assert!(t.reshape(&[4, 2]).is_err());
    }
}
