// Ad-hoc accuracy pilot for GunPoint (removed before release).

use std::time::Instant;

use vtbench::chart::cache::render_cache;
use vtbench::chart::{ChartSpec, ChartType, ColorMode, LabelMode};
use vtbench::dataset::{load_ucr_split, stratified_holdout_indices, Split};
use vtbench::encoders::CnnBackbone;
use vtbench::model::{ModelConfig, VtbModel};
use vtbench::train::{evaluate, train, PreparedSplit, TrainConfig};

fn main() {
    let data_root = std::path::Path::new("data");
    let cache = std::path::Path::new("/tmp/pilot-cache");
    let train_set = load_ucr_split(data_root, "GunPoint", Split::Train).unwrap();
    let test_set = load_ucr_split(data_root, "GunPoint", Split::Test).unwrap();
    let spec = ChartSpec::new(ChartType::Line, ColorMode::Color, LabelMode::NoLabel, 128);
    render_cache(&train_set, Split::Train, &[spec], cache).unwrap();
    render_cache(&test_set, Split::Test, &[spec], cache).unwrap();

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
        "GunPoint splits: train {} / val {} / test {}",
        train_data.len(),
        val_data.len(),
        test_data.len()
    );

    // diagnostic B: stroke width and init scale
    let mk_data = |stroke: u32| {
        let mut sp = spec;
        sp.stroke_width = stroke;
        render_cache(&train_set, Split::Train, &[sp], cache).unwrap();
        render_cache(&test_set, Split::Test, &[sp], cache).unwrap();
        let load2 = |set: &vtbench::dataset::LabeledSeriesSet, split: Split, idxs: &[usize]| {
            let images: Vec<Vec<u8>> = idxs
                .iter()
                .map(|&i| {
                    vtbench::chart::cache::load_cached_rgb(cache, &set.meta.name, split, i, &sp)
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
        let all: Vec<usize> = (0..train_set.len()).collect();
        (
            load2(&train_set, Split::Train, &all),
            load2(&test_set, Split::Test, &val_idx),
            load2(&test_set, Split::Test, &test_idx),
        )
    };
    for (name, stroke, init_scale) in [
        ("stroke2", 2u32, 1.0f32),
        ("stroke3", 3, 1.0),
        ("stroke1_torchinit", 1, 0.4082),
        ("stroke2_torchinit", 2, 0.4082),
    ] {
        let (tr, va, te) = mk_data(stroke);
        let mut accs = Vec::new();
        let wall = Instant::now();
        for seed in 42u64..47 {
            let cfg = ModelConfig::single_chart(CnnBackbone::Deep, 128, 2, seed);
            let mut model = VtbModel::build(&cfg).unwrap();
            if init_scale != 1.0 {
                model.scale_weights_for_diagnostics(init_scale);
            }
            let tc = TrainConfig::default();
            let history = train(&mut model, &tr, &va, &tc, seed).unwrap();
            let m = evaluate(&mut model, &te).unwrap();
            accs.push(m.accuracy);
            println!("{name} seed {seed}: {} epochs, TEST acc {:.4}", history.len(), m.accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("GunPoint {name} mean: {:.4} ({:.1} min)", mean, wall.elapsed().as_secs_f64() / 60.0);
    }
}
