// Ad-hoc performance and accuracy pilot (removed before release).

use std::time::Instant;

use vtbench::chart::cache::render_cache;
use vtbench::chart::{ChartSpec, ChartType, ColorMode, LabelMode};
use vtbench::dataset::{load_ucr_split, stratified_holdout_indices, Split};
use vtbench::encoders::CnnBackbone;
use vtbench::model::{ModelConfig, VtbModel};
use vtbench::nn::ops;
use vtbench::tensor::Tensor;
use vtbench::train::{evaluate, train, Classifier, PreparedSplit, TrainConfig};

fn main() {
    // 1. kernel microbenchmark: DeepCNN layer shapes at 128x128
    let shapes = [
        (3usize, 16usize, 128usize),
        (16, 32, 64),
        (32, 64, 32),
        (64, 128, 16),
        (128, 256, 8),
    ];
    let n = 16;
    let mut total_fwd = 0.0;
    let mut total_bwd = 0.0;
    for &(cin, cout, hw) in &shapes {
        let x = Tensor::filled(&[n, cin, hw, hw], 0.5);
        let w = Tensor::filled(&[cout, cin, 3, 3], 0.01);
        let b = Tensor::zeros(&[cout]);
        let t0 = Instant::now();
        let y = ops::conv2d(&x, &w, &b, 1, 1).unwrap();
        let fwd = t0.elapsed().as_secs_f64();
        let t0 = Instant::now();
        let _ = ops::conv2d_backward(&x, &w, &y, 1, 1, cin != 3).unwrap();
        let bwd = t0.elapsed().as_secs_f64();
        let macs = (n * cout * cin * 9 * hw * hw) as f64;
        println!(
            "conv {cin}->{cout} @{hw}: fwd {:.1} ms ({:.1} GFLOPS), bwd {:.1} ms",
            fwd * 1e3,
            2.0 * macs / fwd / 1e9,
            bwd * 1e3
        );
        total_fwd += fwd;
        total_bwd += bwd;
    }
    println!("batch-16 conv stack: fwd {:.0} ms, bwd {:.0} ms", total_fwd * 1e3, total_bwd * 1e3);

    // 2. one full训练 run on ItalyPowerDemand line/mono/no_label@128
    let data_root = std::path::Path::new("data");
    let cache = std::path::Path::new("/tmp/pilot-cache");
    let train_set = load_ucr_split(data_root, "ItalyPowerDemand", Split::Train).unwrap();
    let test_set = load_ucr_split(data_root, "ItalyPowerDemand", Split::Test).unwrap();
    let spec = ChartSpec::new(ChartType::Line, ColorMode::Mono, LabelMode::NoLabel, 128);
    let t0 = Instant::now();
    render_cache(&train_set, Split::Train, &[spec], cache).unwrap();
    render_cache(&test_set, Split::Test, &[spec], cache).unwrap();
    println!("render cache: {:.1} s", t0.elapsed().as_secs_f64());

    let (val_idx, test_idx) = stratified_holdout_indices(&test_set, 0.2, 42).unwrap();
    let load = |set: &vtbench::dataset::LabeledSeriesSet, split: Split, idxs: &[usize]| {
        let images: Vec<Vec<u8>> = idxs
            .iter()
            .map(|&i| {
                vtbench::chart::cache::load_cached_rgb(cache, &set.meta.name, split, i, &spec)
                    .unwrap()
            })
            .collect();
        PreparedSplit {
            branches: vec![images],
            series: idxs.iter().map(|&i| set.instances[i].values.clone()).collect(),
            labels: idxs.iter().map(|&i| set.instances[i].label).collect(),
            resolution: 128,
            t_len: set.meta.t_len,
        }
    };
    let all_train: Vec<usize> = (0..train_set.len()).collect();
    let train_data = load(&train_set, Split::Train, &all_train);
    let val_data = load(&test_set, Split::Test, &val_idx);
    let test_data = load(&test_set, Split::Test, &test_idx);
    println!(
        "splits: train {} / val {} / test {}",
        train_data.len(),
        val_data.len(),
        test_data.len()
    );

    for seed in [42u64, 43, 44] {
        let cfg = ModelConfig::single_chart(CnnBackbone::Deep, 128, 2, seed);
        let mut model = VtbModel::build(&cfg).unwrap();
        println!("deep cnn params: {}", model.param_count());
        let t0 = Instant::now();
        let tc = TrainConfig::default();
        let history = train(&mut model, &train_data, &val_data, &tc, seed).unwrap();
        let secs = t0.elapsed().as_secs_f64();
        let m = evaluate(&mut model, &test_data).unwrap();
        let best = history
            .iter()
            .map(|h| h.val_acc)
            .fold(f64::NEG_INFINITY, f64::max);
        println!(
            "seed {seed}: {} epochs in {:.1} s ({:.2} s/epoch), best val {:.3}, TEST acc {:.4} f1 {:.4} auc {:.4}",
            history.len(),
            secs,
            secs / history.len() as f64,
            best,
            m.accuracy,
            m.macro_f1,
            m.auc
        );
    }
}
