//! Built-in verification suites: gradient checks against finite
//! differences, rasterizer oracles, and statistics oracles. Used by the
//! `selfcheck` CLI command and by the acceptance tests.

use rand::Rng;

use crate::chart::{plot_rect, render, ChartSpec, ChartType, ColorMode, LabelMode, BLACK, BLUE, WHITE};
use crate::encoders::{CnnBackbone, DeepCnn, ShallowCnn};
use crate::fusion::WeightedFusion;
use crate::model::{ModelConfig, VtbModel};
use crate::nn::gradcheck::{grad_check, grad_check_sampled};
use crate::nn::layers::{BatchNorm, Conv2d, Linear, MhsaLayer};
use crate::nn::{derive_rng, AdamParams, Mode, ParamStore};
use crate::nn::ops;
use crate::stats::{cliffs_delta, mean_ci95, wilcoxon_signed_rank, PairedSamples};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }
}

fn rand_tensor(shape: &[usize], seed: u64, lo: f32, hi: f32) -> Tensor {
    let mut rng = derive_rng(seed, 3_000);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

/// Projection vector making a scalar loss out of a tensor output.
fn projector(n: usize, seed: u64) -> Vec<f32> {
    let mut rng = derive_rng(seed, 4_000);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

const LAYER_TOL: f32 = 1e-3;
const STACK_TOL: f32 = 5e-3;
const FD_EPS: f32 = 1e-3;

/// Gradient checks for every layer and for composed stacks, across three
/// seeds each.
pub fn gradient_suite() -> Vec<Check> {
    let mut checks = Vec::new();

    for seed in 0..3u64 {
        // linear: input and weight gradients
        let mut worst = 0.0f32;
        {
            let mut store = ParamStore::new();
            let mut rng = derive_rng(seed, 10);
            let mut layer = Linear::new(&mut store, "l", 5, 4, &mut rng);
            let r = projector(2 * 4, seed);
            let x0 = rand_tensor(&[2, 5], seed + 40, -1.0, 1.0);
            let mut f = |x: &Tensor| {
                store.zero_grads();
                let y = layer.forward(&store, x).unwrap();
                let gy = Tensor::from_vec(&[2, 4], r.clone());
                let gx = layer.backward(&mut store, &gy);
                (dot(y.data(), &r), gx)
            };
            worst = worst.max(grad_check(&mut f, &x0, FD_EPS).max_rel_err);
            // weight gradient via closure over w
            let w0 = store.value(layer.w).clone();
            let mut fw = |w: &Tensor| {
                store.value_mut(layer.w).data_mut().copy_from_slice(w.data());
                store.zero_grads();
                let y = layer.forward(&store, &x0).unwrap();
                let gy = Tensor::from_vec(&[2, 4], r.clone());
                let _ = layer.backward(&mut store, &gy);
                (dot(y.data(), &r), store.grad(layer.w).clone())
            };
            worst = worst.max(grad_check(&mut fw, &w0, FD_EPS).max_rel_err);
        }
        checks.push(Check::new(
            &format!("grad.linear.seed{seed}"),
            worst < LAYER_TOL,
            format!("max rel err {worst:.2e} (tol {LAYER_TOL:.0e})"),
        ));

        // conv2d: input and weight gradients
        let mut worst = 0.0f32;
        {
            let mut store = ParamStore::new();
            let mut rng = derive_rng(seed, 11);
            let mut layer = Conv2d::new(&mut store, "c", 2, 3, 3, 1, 1, &mut rng);
            let x0 = rand_tensor(&[1, 2, 4, 4], seed + 41, -1.0, 1.0);
            let r = projector(3 * 16, seed);
            let mut f = |x: &Tensor| {
                store.zero_grads();
                let y = layer.forward(&store, x).unwrap();
                let gy = Tensor::from_vec(&[1, 3, 4, 4], r.clone());
                let gx = layer.backward(&mut store, &gy);
                (dot(y.data(), &r), gx.unwrap())
            };
            worst = worst.max(grad_check(&mut f, &x0, FD_EPS).max_rel_err);
            let w0 = store.value(layer.w).clone();
            let mut fw = |w: &Tensor| {
                store.value_mut(layer.w).data_mut().copy_from_slice(w.data());
                store.zero_grads();
                let y = layer.forward(&store, &x0).unwrap();
                let gy = Tensor::from_vec(&[1, 3, 4, 4], r.clone());
                let _ = layer.backward(&mut store, &gy);
                (dot(y.data(), &r), store.grad(layer.w).clone())
            };
            worst = worst.max(grad_check(&mut fw, &w0, FD_EPS).max_rel_err);
        }
        checks.push(Check::new(
            &format!("grad.conv2d.seed{seed}"),
            worst < LAYER_TOL,
            format!("max rel err {worst:.2e}"),
        ));

        // batchnorm (train mode): input and gamma gradients
        let mut worst = 0.0f32;
        {
            let mut store = ParamStore::new();
            let mut layer = BatchNorm::new(&mut store, "bn", 3);
            let x0 = rand_tensor(&[2, 3, 4, 4], seed + 42, -2.0, 2.0);
            let r = projector(2 * 3 * 16, seed);
            let mut f = |x: &Tensor| {
                store.zero_grads();
                let y = layer.forward(&mut store, x, Mode::Train).unwrap();
                let gy = Tensor::from_vec(&[2, 3, 4, 4], r.clone());
                let gx = layer.backward(&mut store, &gy);
                (dot(y.data(), &r), gx)
            };
            worst = worst.max(grad_check(&mut f, &x0, FD_EPS).max_rel_err);
            let g0 = store.value(layer.gamma).clone();
            let mut fg = |g: &Tensor| {
                store.value_mut(layer.gamma).data_mut().copy_from_slice(g.data());
                store.zero_grads();
                let y = layer.forward(&mut store, &x0, Mode::Train).unwrap();
                let gy = Tensor::from_vec(&[2, 3, 4, 4], r.clone());
                let _ = layer.backward(&mut store, &gy);
                (dot(y.data(), &r), store.grad(layer.gamma).clone())
            };
            worst = worst.max(grad_check(&mut fg, &g0, FD_EPS).max_rel_err);
        }
        checks.push(Check::new(
            &format!("grad.batchnorm.seed{seed}"),
            worst < LAYER_TOL,
            format!("max rel err {worst:.2e}"),
        ));

        // maxpool and relu (kinks skipped automatically)
        let mut worst = 0.0f32;
        {
            let x0 = rand_tensor(&[1, 2, 4, 4], seed + 43, -1.0, 1.0);
            let r = projector(2 * 4, seed);
            let mut f = |x: &Tensor| {
                let (y, arg) = ops::maxpool2(x).unwrap();
                let gy = Tensor::from_vec(&[1, 2, 2, 2], r.clone());
                let gx = ops::maxpool2_backward(&gy, &arg, &[1, 2, 4, 4]);
                (dot(y.data(), &r), gx)
            };
            worst = worst.max(grad_check(&mut f, &x0, FD_EPS).max_rel_err);
            let r2 = projector(32, seed);
            let mut f = |x: &Tensor| {
                let y = ops::relu(x);
                let gy = Tensor::from_vec(&[1, 2, 4, 4], r2.clone());
                let gx = ops::relu_backward(&y, &gy);
                (dot(y.data(), &r2), gx)
            };
            worst = worst.max(grad_check(&mut f, &x0, FD_EPS).max_rel_err);
        }
        checks.push(Check::new(
            &format!("grad.pool_relu.seed{seed}"),
            worst < LAYER_TOL,
            format!("max rel err {worst:.2e}"),
        ));

        // softmax + cross-entropy
        let mut worst = 0.0f32;
        {
            let x0 = rand_tensor(&[3, 4], seed + 44, -2.0, 2.0);
            let labels = vec![0usize, 2, 3];
            let mut f = |x: &Tensor| {
                let (loss, grad) = ops::cross_entropy(x, &labels).unwrap();
                (loss as f64, grad)
            };
            worst = worst.max(grad_check(&mut f, &x0, FD_EPS).max_rel_err);
        }
        checks.push(Check::new(
            &format!("grad.cross_entropy.seed{seed}"),
            worst < LAYER_TOL,
            format!("max rel err {worst:.2e}"),
        ));

        // layernorm
        let mut worst = 0.0f32;
        {
            let mut store = ParamStore::new();
            let mut layer = crate::nn::layers::LayerNorm::new(&mut store, "ln", 6);
            let x0 = rand_tensor(&[3, 6], seed + 49, -2.0, 2.0);
            let r = projector(3 * 6, seed);
            let mut f = |x: &Tensor| {
                store.zero_grads();
                let y = layer.forward(&store, x);
                let gy = Tensor::from_vec(&[3, 6], r.clone());
                let gx = layer.backward(&mut store, &gy);
                (dot(y.data(), &r), gx)
            };
            worst = worst.max(grad_check(&mut f, &x0, FD_EPS).max_rel_err);
        }
        checks.push(Check::new(
            &format!("grad.layernorm.seed{seed}"),
            worst < LAYER_TOL,
            format!("max rel err {worst:.2e}"),
        ));

        // transformer encoder block: a composition of layernorms, linears,
        // softmax attention and the feed-forward MLP, so it carries the
        // composed-network tolerance
        let mut worst = 0.0f32;
        {
            let mut store = ParamStore::new();
            let mut rng = derive_rng(seed, 12);
            let mut layer = MhsaLayer::new(&mut store, "t", 8, 2, &mut rng).unwrap();
            let x0 = rand_tensor(&[1, 4, 8], seed + 45, -1.0, 1.0);
            let r = projector(4 * 8, seed);
            let mut f = |x: &Tensor| {
                store.zero_grads();
                let y = layer.forward(&store, x).unwrap();
                let gy = Tensor::from_vec(&[1, 4, 8], r.clone());
                let gx = layer.backward(&mut store, &gy).unwrap();
                (dot(y.data(), &r), gx)
            };
            worst = worst.max(grad_check(&mut f, &x0, FD_EPS).max_rel_err);
        }
        checks.push(Check::new(
            &format!("grad.mhsa.seed{seed}"),
            worst < STACK_TOL,
            format!("max rel err {worst:.2e} (composed tol {STACK_TOL:.0e})"),
        ));

        // 1-D convolution with replicate padding
        let mut worst = 0.0f32;
        {
            let x0 = rand_tensor(&[1, 2, 7], seed + 46, -1.0, 1.0);
            let w = rand_tensor(&[3, 2, 4], seed + 47, -0.5, 0.5);
            let b = rand_tensor(&[3], seed + 48, -0.1, 0.1);
            let r = projector(3 * 7, seed);
            let mut f = |x: &Tensor| {
                let y = ops::conv1d_same(x, &w, &b).unwrap();
                let gy = Tensor::from_vec(&[1, 3, 7], r.clone());
                let (gx, _, _) = ops::conv1d_same_backward(x, &w, &gy);
                (dot(y.data(), &r), gx)
            };
            worst = worst.max(grad_check(&mut f, &x0, FD_EPS).max_rel_err);
        }
        checks.push(Check::new(
            &format!("grad.conv1d.seed{seed}"),
            worst < LAYER_TOL,
            format!("max rel err {worst:.2e}"),
        ));
    }

    // full stacks, three seeds each
    for seed in 0..3u64 {
        let rep = shallow_stack_input_gradient(seed, 16);
        checks.push(Check::new(
            &format!("grad.shallow_stack.seed{seed}"),
            rep < STACK_TOL,
            format!("max rel err {rep:.2e} (tol {STACK_TOL:.0e})"),
        ));
    }
    for seed in 0..3u64 {
        let rep = deep_stack_input_gradient(seed, 32);
        checks.push(Check::new(
            &format!("grad.deep_stack.seed{seed}"),
            rep < STACK_TOL,
            format!("max rel err {rep:.2e}"),
        ));
    }
    for seed in 0..3u64 {
        let rep = fusion_classifier_gradient(seed);
        checks.push(Check::new(
            &format!("grad.fusion_head.seed{seed}"),
            rep < LAYER_TOL,
            format!("max rel err {rep:.2e}"),
        ));
    }
    checks
}

/// FD check of the full ShallowCNN + cross-entropy against the input image.
pub fn shallow_stack_input_gradient(seed: u64, res: usize) -> f32 {
    let mut store = ParamStore::new();
    let mut rng = derive_rng(seed, 13);
    let mut enc = ShallowCnn::new(&mut store, "enc", res, seed, &mut rng).unwrap();
    enc.set_dropout(0.0);
    enc.enable_input_grad();
    let mut head = Linear::new(&mut store, "out", 64, 2, &mut rng);
    let x0 = rand_tensor(&[1, 3, res, res], seed + 50, 0.0, 1.0);
    let labels = vec![1usize];
    let mut f = |x: &Tensor| {
        store.zero_grads();
        let h = enc.forward(&mut store, x, Mode::Train).unwrap();
        let logits = head.forward(&store, &h).unwrap();
        let (loss, grad) = ops::cross_entropy(&logits, &labels).unwrap();
        let gh = head.backward(&mut store, &grad);
        let gx = enc.backward(&mut store, &gh).unwrap();
        (loss as f64, gx)
    };
    grad_check(&mut f, &x0, FD_EPS).max_rel_err
}

/// FD check of the full DeepCNN + cross-entropy against the input image.
pub fn deep_stack_input_gradient(seed: u64, res: usize) -> f32 {
    let mut store = ParamStore::new();
    let mut rng = derive_rng(seed, 14);
    let mut enc = DeepCnn::new(&mut store, "enc", res, seed, &mut rng).unwrap();
    enc.set_dropout(0.0);
    enc.enable_input_grad();
    let mut head = Linear::new(&mut store, "out", 256, 2, &mut rng);
    let x0 = rand_tensor(&[1, 3, res, res], seed + 51, 0.0, 1.0);
    let labels = vec![0usize];
    let mut f = |x: &Tensor| {
        store.zero_grads();
        let h = enc.forward(&mut store, x, Mode::Train).unwrap();
        let logits = head.forward(&store, &h).unwrap();
        let (loss, grad) = ops::cross_entropy(&logits, &labels).unwrap();
        let gh = head.backward(&mut store, &grad);
        let gx = enc.backward(&mut store, &gh).unwrap();
        (loss as f64, gx)
    };
    grad_check_sampled(&mut f, &x0, FD_EPS, 256).max_rel_err
}

/// FD check of weighted fusion + classifier against a branch embedding and
/// its attention vector.
pub fn fusion_classifier_gradient(seed: u64) -> f32 {
    use crate::fusion::ClassifierHead;
    let mut store = ParamStore::new();
    let mut rng = derive_rng(seed, 15);
    let mut fusion = WeightedFusion::new(&mut store, "fuse", &[6, 6], 4, &mut rng).unwrap();
    let mut head = ClassifierHead::new(&mut store, "head", 4, 8, 2, derive_rng(seed, 16), &mut rng);
    head.set_dropout(0.0);
    let h_other = rand_tensor(&[2, 6], seed + 60, -1.0, 1.0);
    let h0 = rand_tensor(&[2, 6], seed + 61, -1.0, 1.0);
    let labels = vec![0usize, 1];
    let mut worst = 0.0f32;
    {
        let mut f = |h: &Tensor| {
            store.zero_grads();
            let (z, _) = fusion.forward(&mut store, &[h.clone(), h_other.clone()]).unwrap();
            let logits = head.forward(&mut store, &z, Mode::Eval).unwrap();
            let (loss, grad) = ops::cross_entropy(&logits, &labels).unwrap();
            let gz = head.backward(&mut store, &grad);
            let ghs = fusion.backward(&mut store, &gz).unwrap();
            (loss as f64, ghs[0].clone())
        };
        worst = worst.max(grad_check(&mut f, &h0, FD_EPS).max_rel_err);
    }
    {
        let w_id = store.find("fuse.attn0").unwrap();
        let w0 = store.value(w_id).clone();
        let mut fw = |w: &Tensor| {
            store.value_mut(w_id).data_mut().copy_from_slice(w.data());
            store.zero_grads();
            let (z, _) = fusion
                .forward(&mut store, &[h0.clone(), h_other.clone()])
                .unwrap();
            let logits = head.forward(&mut store, &z, Mode::Eval).unwrap();
            let (loss, grad) = ops::cross_entropy(&logits, &labels).unwrap();
            let gz = head.backward(&mut store, &grad);
            let _ = fusion.backward(&mut store, &gz).unwrap();
            (loss as f64, store.grad(w_id).clone())
        };
        worst = worst.max(grad_check(&mut fw, &w0, FD_EPS).max_rel_err);
    }
    worst
}

/// Rasterizer oracle checks over all chart types and the three preset
/// resolutions.
pub fn raster_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let resolutions = [64u32, 128, 256];

    // constant-series line: exactly one full-width run on the midline row
    let mut ok = true;
    let mut detail = String::new();
    for &res in &resolutions {
        let spec = ChartSpec::new(ChartType::Line, ColorMode::Mono, LabelMode::NoLabel, res);
        let img = render(&[5.0, 5.0, 5.0], &spec).unwrap();
        let row = (res as usize - 1) / 2;
        let expected = res as usize;
        let good = img.count_non_white() == expected
            && (0..res as usize).all(|x| img.get(x, row) == BLACK)
            && img.ink_components() == 1;
        if !good {
            ok = false;
            detail = format!("res {res}: {} ink pixels", img.count_non_white());
        }
    }
    checks.push(Check::new("raster.constant_line", ok, detail));

    // baseline clamping
    let rect = plot_rect(&ChartSpec::new(ChartType::Area, ColorMode::Mono, LabelMode::NoLabel, 128));
    let mid = crate::chart::baseline_row(&[-1.0, 1.0], rect).unwrap();
    let bottom = crate::chart::baseline_row(&[0.5, 2.0], rect).unwrap();
    let top = crate::chart::baseline_row(&[-2.0, -0.5], rect).unwrap();
    checks.push(Check::new(
        "raster.baseline_clamp",
        mid == 64 && bottom == 127 && top == 0,
        format!("mid {mid} bottom {bottom} top {top}"),
    ));

    // scatter component count and ink budget
    let mut ok = true;
    let mut detail = String::new();
    for &res in &resolutions {
        let spec = ChartSpec::new(ChartType::Scatter, ColorMode::Mono, LabelMode::NoLabel, res);
        let img = render(&[0.0, 1.0, 2.0, 3.0, 4.0], &spec).unwrap();
        let comps = img.ink_components();
        let count = img.count_non_white();
        if comps != 5 || count > 45 {
            ok = false;
            detail = format!("res {res}: {comps} components, {count} ink pixels");
        }
    }
    checks.push(Check::new("raster.scatter_components", ok, detail));

    // color vs mono: identical positions, different channels
    let values: Vec<f32> = (0..24).map(|t| ((t as f32) * 0.61).sin() * 1.5 - 0.25).collect();
    let mut ok = true;
    let mut detail = String::new();
    for ct in ChartType::ALL {
        for &res in &resolutions {
            let mono = render(&values, &ChartSpec::new(ct, ColorMode::Mono, LabelMode::NoLabel, res)).unwrap();
            let color = render(&values, &ChartSpec::new(ct, ColorMode::Color, LabelMode::NoLabel, res)).unwrap();
            if mono.ink_positions() != color.ink_positions() {
                ok = false;
                detail = format!("{ct:?} res {res}: ink positions differ");
            }
            let p = color.ink_positions()[0];
            if color.get(p.0, p.1) != BLUE {
                ok = false;
                detail = format!("{ct:?} res {res}: color ink not blue");
            }
        }
    }
    checks.push(Check::new("raster.color_mono_positions", ok, detail));

    // byte-identical re-render, every type x resolution x label mode
    let mut ok = true;
    let mut detail = String::new();
    for ct in ChartType::ALL {
        for &res in &resolutions {
            for lm in [LabelMode::NoLabel, LabelMode::WithLabel] {
                let spec = ChartSpec::new(ct, ColorMode::Color, lm, res);
                let a = render(&values, &spec).unwrap();
                let b = render(&values, &spec).unwrap();
                if a.pixels != b.pixels || a.pixel_sha256() != b.pixel_sha256() {
                    ok = false;
                    detail = format!("{ct:?} res {res} {lm:?}: re-render differs");
                }
            }
        }
    }
    checks.push(Check::new("raster.byte_identical", ok, detail));

    // ink discipline across everything rendered above
    let mut ok = true;
    for ct in ChartType::ALL {
        let img = render(&values, &ChartSpec::new(ct, ColorMode::Color, LabelMode::WithLabel, 64)).unwrap();
        for p in img.pixels.chunks_exact(3) {
            if p != WHITE && p != BLACK && p != BLUE {
                ok = false;
            }
        }
    }
    checks.push(Check::new("raster.ink_discipline", ok, ""));

    checks
}

/// Statistics oracles: exact Wilcoxon vs sign enumeration, Cliff's delta vs
/// all-pairs brute force, the t-quantile, and the Adam closed form.
pub fn stats_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = derive_rng(20_250, 0);

    // wilcoxon exact vs brute-force enumeration, n <= 10
    let mut ok = true;
    let mut detail = String::new();
    for n in 2..=10usize {
        for rep in 0..5 {
            let diffs: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(-5i32..=5) as f64 / 2.0)
                .collect();
            if diffs.iter().all(|&d| d == 0.0) {
                continue;
            }
            let pairs = PairedSamples::new(diffs.clone(), vec![0.0; n]).unwrap();
            let fast = wilcoxon_signed_rank(&pairs).unwrap();
            let brute = wilcoxon_enumeration_oracle(&diffs);
            if (fast.p_value - brute).abs() > 1e-9 {
                ok = false;
                detail = format!("n={n} rep={rep}: {} vs {brute}", fast.p_value);
            }
        }
    }
    checks.push(Check::new("stats.wilcoxon_exact_oracle", ok, detail));

    // cliff's delta vs brute force on 100 fixtures
    let mut ok = true;
    let mut detail = String::new();
    for rep in 0..100 {
        let n = rng.gen_range(1..=15);
        let m = rng.gen_range(1..=15);
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(0..=8) as f64 / 8.0).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.gen_range(0..=8) as f64 / 8.0).collect();
        let fast = cliffs_delta(&a, &b).unwrap().delta;
        let mut gt = 0i64;
        let mut lt = 0i64;
        for &x in &a {
            for &y in &b {
                if x > y {
                    gt += 1;
                } else if x < y {
                    lt += 1;
                }
            }
        }
        let brute = (gt - lt) as f64 / (n as f64 * m as f64);
        if (fast - brute).abs() > 1e-12 {
            ok = false;
            detail = format!("rep {rep}: {fast} vs {brute}");
        }
    }
    checks.push(Check::new("stats.cliffs_delta_oracle", ok, detail));

    // t quantile anchor: mean_ci95 of {0,1} uses t(0.975,1) = 12.7062
    let (mean, hw) = mean_ci95(&[0.0, 1.0]).unwrap();
    checks.push(Check::new(
        "stats.t_quantile",
        (mean - 0.5).abs() < 1e-12 && (hw - 6.35311).abs() < 1e-4,
        format!("mean {mean} hw {hw}"),
    ));

    // adam closed form at t=1
    let mut store = ParamStore::new();
    let id = store.alloc("w", Tensor::scalar(1.0));
    store.accumulate_grad(id, &[1.0]);
    store.adam_step(&AdamParams {
        weight_decay: 0.0,
        ..Default::default()
    });
    let got = store.value(id).data()[0];
    let expected = 1.0 - 1e-3 * (1.0 / (1.0 + 1e-8));
    checks.push(Check::new(
        "stats.adam_closed_form",
        (got - expected).abs() < 1e-7,
        format!("{got} vs {expected}"),
    ));

    // softmax closed form
    let sm = ops::softmax_last(&Tensor::from_vec(&[1, 2], vec![2.0f32.ln(), 0.0]));
    checks.push(Check::new(
        "stats.softmax_closed_form",
        (sm.data()[0] - 2.0 / 3.0).abs() < 1e-6,
        format!("{:?}", sm.data()),
    ));

    checks
}

/// Fusion simplex sweep: random weighted-fusion forwards over 1..=5
/// branches; every alpha in [0,1], rows sum to one.
pub fn fusion_simplex_suite(passes: usize) -> Check {
    let mut rng = derive_rng(77, 0);
    let mut worst = 0.0f64;
    let mut total = 0usize;
    for pass in 0..passes {
        let k = pass % 5 + 1;
        let dims: Vec<usize> = (0..k).map(|_| rng.gen_range(4..12)).collect();
        let mut store = ParamStore::new();
        let mut lrng = derive_rng(pass as u64, 5);
        let mut fusion = WeightedFusion::new(&mut store, "f", &dims, 8, &mut lrng).unwrap();
        let n = rng.gen_range(1..4);
        let hs: Vec<Tensor> = dims
            .iter()
            .map(|&d| rand_tensor(&[n, d], pass as u64 + 1000, -3.0, 3.0))
            .collect();
        let (_, alpha) = fusion.forward(&mut store, &hs).unwrap();
        for row in alpha.data().chunks_exact(k) {
            total += 1;
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            worst = worst.max((sum - 1.0).abs());
            if row.iter().any(|&a| !(0.0..=1.0).contains(&a)) {
                return Check::new("fusion.simplex", false, format!("alpha out of range {row:?}"));
            }
        }
    }
    Check::new(
        "fusion.simplex",
        worst <= 1e-6,
        format!("{total} rows, worst |sum-1| = {worst:.2e}"),
    )
}

/// Independent 2^n enumeration with the same two-sided convention as the
/// implementation.
fn wilcoxon_enumeration_oracle(diffs: &[f64]) -> f64 {
    let kept: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    let n = kept.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| kept[a].abs().partial_cmp(&kept[b].abs()).unwrap());
    let mut ranks = vec![0.0f64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && kept[order[j + 1]].abs() == kept[order[i]].abs() {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let w_plus: f64 = kept
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let mut le = 0u64;
    let mut ge = 0u64;
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n)
            .filter(|&k| mask >> k & 1 == 1)
            .map(|k| ranks[k])
            .sum();
        if w <= w_plus + 1e-9 {
            le += 1;
        }
        if w >= w_plus - 1e-9 {
            ge += 1;
        }
    }
    let denom = (1u64 << n) as f64;
    (2.0 * (le as f64 / denom).min(ge as f64 / denom)).min(1.0)
}

/// Quick end-to-end smoke: a tiny model overfits an 8-sample set.
pub fn capacity_suite() -> Check {
    let mut rng = derive_rng(31, 0);
    let res = 16usize;
    // two visually distinct synthetic classes
    let mk = |label: usize, jitter: f32| -> (Vec<u8>, usize) {
        let spec = ChartSpec::new(ChartType::Line, ColorMode::Mono, LabelMode::NoLabel, res as u32);
        let series: Vec<f32> = (0..8)
            .map(|t| {
                if label == 0 {
                    t as f32 + jitter
                } else {
                    (8 - t) as f32 + jitter
                }
            })
            .collect();
        let img = render(&series, &spec).unwrap();
        (img.pixels, label)
    };
    let mut branches = vec![Vec::new()];
    let mut labels = Vec::new();
    let mut series = Vec::new();
    for i in 0..8 {
        let (px, lb) = mk(i % 2, rng.gen_range(-0.01..0.01));
        branches[0].push(px);
        labels.push(lb);
        series.push(vec![0.0]);
    }
    let data = crate::train::PreparedSplit {
        branches,
        series,
        labels,
        resolution: res,
        t_len: 1,
    };
    let mut cfg = ModelConfig::single_chart(CnnBackbone::Shallow, res, 2, 3);
    cfg.dropout_p = 0.0;
    let mut model = VtbModel::build(&cfg).unwrap();
    let tc = crate::train::TrainConfig {
        max_epochs: 200,
        ..Default::default()
    };
    match crate::train::train(&mut model, &data, &data, &tc, 3) {
        Ok(history) => {
            let best = history.iter().map(|h| h.val_acc).fold(0.0, f64::max);
            Check::new(
                "train.overfit_capacity",
                best == 1.0,
                format!("best train-as-val accuracy {best}"),
            )
        }
        Err(e) => Check::new("train.overfit_capacity", false, e.to_string()),
    }
}

/// Everything the `selfcheck` command runs.
pub fn run_all() -> Vec<Check> {
    let mut checks = Vec::new();
    checks.extend(gradient_suite());
    checks.extend(raster_suite());
    checks.extend(stats_suite());
    checks.push(fusion_simplex_suite(1000));
    checks.push(capacity_suite());
    checks
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradient_suite_passes() {
        for c in gradient_suite() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn raster_suite_passes() {
        for c in raster_suite() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn stats_suite_passes() {
        for c in stats_suite() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }

    #[test]
    fn fusion_simplex_holds() {
        let c = fusion_simplex_suite(1000);
        assert!(c.passed, "{}", c.detail);
    }
}
